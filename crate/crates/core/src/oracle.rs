//! Exhaustive enumeration of surviving paths with the environment
//! marginalized analytically, and the exact identities it supports.
//!
//! One depth-first sweep from the initial law records, at every first
//! passage `α(n)`, the path weight together with the stack of levels that
//! are still `n`-separating. Sweeping the environment of interest yields
//! `u_n = P*(B_n)` and `b_n = P*(η*(n) = 0)`; sweeping the zero environment
//! yields `v_n = P_0(B_n)` and `a_n = P_0(κ*(n) = 0)`.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levels::{decompose, AliveLevels, Decomposition};
use crate::prob::Prob;
use crate::walk::{EnvironmentSpec, Factor, JumpLaw, LowerMode, Site, SurvivalModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnumerationMode {
    /// Requires a bound on path length; every surviving path is visited.
    Exhaustive,
    /// Paths still alive after `step_cap` steps are reported as unresolved mass.
    Truncated { step_cap: usize },
}

#[derive(Clone, Debug)]
pub struct EnumerateOptions {
    pub n_max: i64,
    pub mode: EnumerationMode,
    /// Store individual paths for `n <= joint_n_max`.
    pub joint_n_max: Option<i64>,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl EnumerateOptions {
    pub fn exhaustive(n_max: i64) -> Self {
        EnumerateOptions {
            n_max,
            mode: EnumerationMode::Exhaustive,
            joint_n_max: None,
            threads: None,
        }
    }

    pub fn truncated(n_max: i64, step_cap: usize) -> Self {
        EnumerateOptions {
            n_max,
            mode: EnumerationMode::Truncated { step_cap },
            joint_n_max: None,
            threads: None,
        }
    }

    pub fn with_joint(mut self, joint_n_max: i64) -> Self {
        self.joint_n_max = Some(joint_n_max);
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }
}

/// One surviving path stopped at `α(n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointEntry<W> {
    pub n: i64,
    pub path: Vec<Site>,
    /// Path probability times survival weight.
    pub weight: W,
    /// The `n`-separating levels.
    pub levels: Vec<i64>,
}

impl<W> JointEntry<W> {
    pub fn eta(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn kappa(&self) -> Option<i64> {
        let l = self.levels.len();
        (l >= 2).then(|| self.levels[l - 2])
    }

    pub fn decomposition(&self) -> Decomposition {
        decompose(&crate::walk::PathRecord::new(self.path.clone()), self.n)
            .expect("recorded at the first passage")
    }
}

#[derive(Clone, Debug)]
struct Tally<W> {
    reach: Vec<W>,
    eta_zero: Vec<W>,
    kappa_zero: Vec<W>,
    unresolved: Vec<W>,
    /// Part of `unresolved` whose live levels can all still be removed.
    unresolved_eta: Vec<W>,
    joint: Vec<JointEntry<W>>,
    nodes: u64,
}

impl<W: Prob> Tally<W> {
    fn new(n_max: i64) -> Self {
        let len = n_max as usize + 1;
        Tally {
            reach: vec![W::zero(); len],
            eta_zero: vec![W::zero(); len],
            kappa_zero: vec![W::zero(); len],
            unresolved: vec![W::zero(); len],
            unresolved_eta: vec![W::zero(); len],
            joint: Vec::new(),
            nodes: 0,
        }
    }

    fn merge(&mut self, other: Tally<W>) {
        for (dst, src) in [
            (&mut self.reach, other.reach),
            (&mut self.eta_zero, other.eta_zero),
            (&mut self.kappa_zero, other.kappa_zero),
            (&mut self.unresolved, other.unresolved),
            (&mut self.unresolved_eta, other.unresolved_eta),
        ] {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = d.clone() + s;
            }
        }
        self.joint.extend(other.joint);
        self.nodes += other.nodes;
    }

    fn record(&mut self, n: i64, w: &W, alive: &[i64], path: &[Site], joint_n_max: Option<i64>) {
        let i = n as usize;
        self.reach[i] = self.reach[i].clone() + w.clone();
        if alive.len() == 1 {
            self.eta_zero[i] = self.eta_zero[i].clone() + w.clone();
        }
        if alive.len() == 2 && alive[0] == 0 {
            self.kappa_zero[i] = self.kappa_zero[i].clone() + w.clone();
        }
        if joint_n_max.is_some_and(|m| n <= m) {
            self.joint.push(JointEntry {
                n,
                path: path.to_vec(),
                weight: w.clone(),
                levels: alive.to_vec(),
            });
        }
    }

    /// A live level at or below `floor` is never removed, so such paths
    /// cannot end with `η = 0`.
    fn leave_unresolved(&mut self, w: &W, max_level: Option<i64>, lowest: Option<i64>, floor: Option<i64>, n_max: i64) {
        let from = max_level.map_or(0, |m| (m + 1).max(0));
        let eta_possible = match (lowest, floor) {
            (Some(l), Some(f)) => l > f,
            _ => true,
        };
        for n in from..=n_max {
            let i = n as usize;
            self.unresolved[i] = self.unresolved[i].clone() + w.clone();
            if eta_possible {
                self.unresolved_eta[i] = self.unresolved_eta[i].clone() + w.clone();
            }
        }
    }
}

struct Dfs<'a, W: Prob> {
    model: &'a SurvivalModel<W>,
    jumps: &'a [(Site, W)],
    n_max: i64,
    step_cap: usize,
    joint_n_max: Option<i64>,
    floor: Option<i64>,
    path: Vec<Site>,
    local_times: HashMap<Site, u32>,
    alive: AliveLevels,
    tally: Tally<W>,
}

impl<'a, W: Prob> Dfs<'a, W> {
    fn take_step(&mut self, jump: usize, w: &W) {
        let (dv, p) = &self.jumps[jump];
        let y = self.path.last().expect("nonempty").add(dv);
        let visits = self.local_times.get(&y).copied().unwrap_or(0) + 1;
        let w2 = match self.model.step(&y, visits) {
            Factor::Dead => return,
            Factor::One => w.clone() * p.clone(),
            Factor::Scale(f) => w.clone() * p.clone() * f,
        };
        self.local_times.insert(y.clone(), visits);
        let level = y.level();
        self.path.push(y);
        let cp = self.alive.checkpoint();
        let first_passage = self.alive.visit(level);
        if first_passage {
            self.tally
                .record(level, &w2, self.alive.levels(), &self.path, self.joint_n_max);
            if level < self.n_max {
                self.descend(&w2);
            }
        } else {
            self.descend(&w2);
        }
        self.alive.restore(cp);
        let y = self.path.pop().expect("pushed above");
        if visits == 1 {
            self.local_times.remove(&y);
        } else {
            self.local_times.insert(y, visits - 1);
        }
    }

    fn descend(&mut self, w: &W) {
        self.tally.nodes += 1;
        if self.path.len() > self.step_cap {
            self.tally
                .leave_unresolved(w, self.alive.max_level(), self.alive.levels().first().copied(), self.floor, self.n_max);
            return;
        }
        for j in 0..self.jumps.len() {
            self.take_step(j, w);
        }
    }
}

/// Exact or truncated coefficient tables for `n = 0..=n_max`.
#[derive(Clone, Debug)]
pub struct CoefficientTables<W> {
    pub n_max: i64,
    pub exhaustive: bool,
    pub step_cap: Option<usize>,
    /// `a[n] = P_0(κ*(n) = 0)`; `a[0] = 0`.
    pub a: Vec<W>,
    /// `b[m] = P*(η*(m) = 0)`.
    pub b: Vec<W>,
    /// `u[n] = P*(B_n)`.
    pub u: Vec<W>,
    /// `v[n] = P_0(B_n)`.
    pub v: Vec<W>,
    /// Unresolved mass per `n` of the zero-environment sweep (bounds `a`, `v`).
    pub unresolved_p0: Vec<W>,
    /// Unresolved mass per `n` of the environment sweep (bounds `u`).
    pub unresolved_env: Vec<W>,
    /// The part of `unresolved_env` that can still end with `η = 0` (bounds `b`).
    pub unresolved_eta: Vec<W>,
    pub env_joint: Vec<JointEntry<W>>,
    pub p0_joint: Vec<JointEntry<W>>,
    pub joint_n_max: Option<i64>,
    pub up_prob: f64,
    pub nodes: u64,
}

impl<W: Prob> CoefficientTables<W> {
    pub fn env_entries(&self, n: i64) -> impl Iterator<Item = &JointEntry<W>> {
        self.env_joint.iter().filter(move |e| e.n == n)
    }

    pub fn p0_entries(&self, n: i64) -> impl Iterator<Item = &JointEntry<W>> {
        self.p0_joint.iter().filter(move |e| e.n == n)
    }

    pub fn bounds(&self) -> TableBounds {
        let lo = |v: &[W]| v.iter().map(W::to_f64).collect::<Vec<f64>>();
        let hi = |v: &[W], un: &[W]| {
            v.iter()
                .zip(un)
                .map(|(x, e)| (x.clone() + e.clone()).to_f64())
                .collect::<Vec<f64>>()
        };
        let mut a_hi = hi(&self.a, &self.unresolved_p0);
        a_hi[0] = 0.0;
        TableBounds {
            n_max: self.n_max,
            exhaustive: self.exhaustive,
            up_prob: self.up_prob,
            a_lo: lo(&self.a),
            a_hi,
            b_lo: lo(&self.b),
            b_hi: hi(&self.b, &self.unresolved_eta),
            u_lo: lo(&self.u),
            u_hi: hi(&self.u, &self.unresolved_env),
            v_lo: lo(&self.v),
            v_hi: hi(&self.v, &self.unresolved_p0),
        }
    }

    fn require_exhaustive(&self, what: &str) -> Result<()> {
        if !self.exhaustive {
            return Err(Error::Capability(format!("{what} needs exhaustive tables")));
        }
        Ok(())
    }

    fn require_joint(&self, n: i64) -> Result<()> {
        if self.joint_n_max.is_none_or(|m| n > m) {
            return Err(Error::Capability(format!(
                "joint support not stored for n = {n} (joint_n_max = {:?})",
                self.joint_n_max
            )));
        }
        Ok(())
    }
}

/// Floating-point lower/upper envelopes of the tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableBounds {
    pub n_max: i64,
    pub exhaustive: bool,
    pub up_prob: f64,
    pub a_lo: Vec<f64>,
    pub a_hi: Vec<f64>,
    pub b_lo: Vec<f64>,
    pub b_hi: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub v_lo: Vec<f64>,
    pub v_hi: Vec<f64>,
}

impl TableBounds {
    /// Bounds for exactly known sequences (`lo == hi`).
    pub fn exact(a: Vec<f64>, b: Vec<f64>, up_prob: f64) -> Self {
        let n_max = (a.len().max(b.len()) as i64 - 1).max(0);
        let len = n_max as usize + 1;
        let pad = |mut x: Vec<f64>| {
            x.resize(len, 0.0);
            x
        };
        let a = pad(a);
        let b = pad(b);
        TableBounds {
            n_max,
            exhaustive: true,
            up_prob,
            a_lo: a.clone(),
            a_hi: a,
            b_lo: b.clone(),
            b_hi: b,
            u_lo: vec![0.0; len],
            u_hi: vec![1.0; len],
            v_lo: vec![0.0; len],
            v_hi: vec![1.0; len],
        }
    }
}

pub fn path_length_bound(env: &EnvironmentSpec, n_max: i64) -> Result<usize> {
    if env.dim() != 1 {
        return Err(Error::Capability(
            "exhaustive enumeration needs d = 1; use truncated mode".into(),
        ));
    }
    let h_max = env.virgin.max_finite().ok_or_else(|| {
        Error::Capability("exhaustive enumeration needs bounded virgin budgets; use truncated mode".into())
    })? as usize;
    let lower = match &env.lower {
        LowerMode::Zero => 0,
        LowerMode::Infinite => {
            return Err(Error::Capability(
                "exhaustive enumeration needs a bounded lower region; use truncated mode".into(),
            ))
        }
        LowerMode::Explicit(map) => {
            let mut total = 0usize;
            for b in map.values() {
                match b {
                    crate::walk::Budget::Finite(x) => total += *x as usize,
                    crate::walk::Budget::Infinite => {
                        return Err(Error::Capability(
                            "exhaustive enumeration needs finite explicit budgets; use truncated mode".into(),
                        ))
                    }
                }
            }
            total
        }
    };
    Ok((n_max as usize + 1) * h_max + lower)
}

fn sweep_dfs<W: Prob>(
    env: &EnvironmentSpec,
    jump: &JumpLaw,
    n_max: i64,
    step_cap: usize,
    joint_n_max: Option<i64>,
    threads: Option<usize>,
) -> Tally<W> {
    let model = SurvivalModel::<W>::new(env);
    let jumps: Vec<(Site, W)> = jump
        .atoms()
        .iter()
        .map(|a| (a.vector.clone(), W::from_rational(&a.prob)))
        .collect();
    let mut total = Tally::new(n_max);
    // Branches are (initial site, first jump); their tallies merge in this order.
    let mut branches = Vec::new();
    for (s0, p0) in &env.initial {
        let w0 = match model.step(s0, 1) {
            Factor::Dead => continue,
            Factor::One => W::from_rational(p0),
            Factor::Scale(f) => W::from_rational(p0) * f,
        };
        let mut alive = AliveLevels::new();
        if alive.visit(s0.level()) {
            total.record(s0.level(), &w0, alive.levels(), std::slice::from_ref(s0), joint_n_max);
            if s0.level() >= n_max {
                continue;
            }
        }
        if step_cap == 0 {
            total.leave_unresolved(&w0, alive.max_level(), alive.levels().first().copied(), env.floor(), n_max);
            continue;
        }
        for j in 0..jumps.len() {
            branches.push((s0.clone(), w0.clone(), alive.clone(), j));
        }
    }
    let run = |(s0, w0, alive, j): &(Site, W, AliveLevels, usize)| {
        let mut dfs = Dfs {
            model: &model,
            jumps: &jumps,
            n_max,
            step_cap,
            joint_n_max,
            floor: env.floor(),
            path: vec![s0.clone()],
            local_times: HashMap::from([(s0.clone(), 1)]),
            alive: alive.clone(),
            tally: Tally::new(n_max),
        };
        dfs.take_step(*j, w0);
        dfs.tally
    };
    let parts: Vec<Tally<W>> = crate::rng::with_threads(threads, || branches.par_iter().map(run).collect());
    for part in parts {
        total.merge(part);
    }
    total
}

/// Layered sweep for environments whose budgets are all `0` or `∞`: the
/// survival weight then ignores local times, so paths sharing position,
/// running maximum and the two lowest live levels can be merged.
fn sweep_merged<W: Prob>(
    env: &EnvironmentSpec,
    jump: &JumpLaw,
    n_max: i64,
    step_cap: usize,
) -> Tally<W> {
    type Key = (Site, i64, Option<i64>, Option<i64>);
    let model = SurvivalModel::<W>::new(env);
    let jumps: Vec<(Site, W)> = jump
        .atoms()
        .iter()
        .map(|a| (a.vector.clone(), W::from_rational(&a.prob)))
        .collect();
    let mut tally: Tally<W> = Tally::new(n_max);
    let push = |s1: &mut Option<i64>, s2: &mut Option<i64>, m: i64| {
        if s1.is_none() {
            *s1 = Some(m);
        } else if s2.is_none() {
            *s2 = Some(m);
        }
    };
    let mut layer: BTreeMap<Key, W> = BTreeMap::new();
    for (s0, p0) in &env.initial {
        if matches!(model.step(s0, 1), Factor::Dead) {
            continue;
        }
        let w0 = W::from_rational(p0);
        let (mut s1, mut s2) = (None, None);
        let level = s0.level();
        if level >= 0 {
            push(&mut s1, &mut s2, level);
            tally.reach[level as usize] = tally.reach[level as usize].clone() + w0.clone();
            tally.eta_zero[level as usize] = tally.eta_zero[level as usize].clone() + w0.clone();
            if level >= n_max {
                continue;
            }
        }
        let e = layer.entry((s0.clone(), level, s1, s2)).or_insert_with(W::zero);
        *e = e.clone() + w0;
    }
    for _ in 0..step_cap {
        let mut next: BTreeMap<Key, W> = BTreeMap::new();
        for ((site, max, s1, s2), w) in &layer {
            tally.nodes += 1;
            for (dv, p) in &jumps {
                let y = site.add(dv);
                if matches!(model.step(&y, 1), Factor::Dead) {
                    continue;
                }
                let w2 = w.clone() * p.clone();
                let level = y.level();
                let (mut t1, mut t2) = (*s1, *s2);
                if t1.is_some_and(|v| v > level) {
                    t1 = None;
                    t2 = None;
                } else if t2.is_some_and(|v| v > level) {
                    t2 = None;
                }
                let mut new_max = *max;
                if level > *max {
                    new_max = level;
                    if level >= 0 {
                        push(&mut t1, &mut t2, level);
                        let i = level as usize;
                        tally.reach[i] = tally.reach[i].clone() + w2.clone();
                        if t1 == Some(level) {
                            tally.eta_zero[i] = tally.eta_zero[i].clone() + w2.clone();
                        }
                        if t1 == Some(0) && t2 == Some(level) {
                            tally.kappa_zero[i] = tally.kappa_zero[i].clone() + w2.clone();
                        }
                        if level >= n_max {
                            continue;
                        }
                    }
                }
                let e = next.entry((y, new_max, t1, t2)).or_insert_with(W::zero);
                *e = e.clone() + w2;
            }
        }
        layer = next;
    }
    let floor = env.floor();
    for ((_, max, s1, _), w) in &layer {
        tally.leave_unresolved(w, Some(*max), *s1, floor, n_max);
    }
    tally
}

fn sweep<W: Prob>(
    env: &EnvironmentSpec,
    jump: &JumpLaw,
    opts: &EnumerateOptions,
) -> Result<(Tally<W>, bool, Option<usize>)> {
    match opts.mode {
        EnumerationMode::Exhaustive => {
            let bound = path_length_bound(env, opts.n_max)?;
            let t = sweep_dfs(env, jump, opts.n_max, bound, opts.joint_n_max, opts.threads);
            if t.unresolved.iter().any(|x: &W| !x.is_zero()) {
                return Err(Error::Capability(format!(
                    "path-length bound {bound} was exceeded; the environment is not exhaustively enumerable"
                )));
            }
            Ok((t, true, None))
        }
        EnumerationMode::Truncated { step_cap } => {
            let t = if env.is_local_time_free() && opts.joint_n_max.is_none() {
                sweep_merged(env, jump, opts.n_max, step_cap)
            } else {
                sweep_dfs(env, jump, opts.n_max, step_cap, opts.joint_n_max, opts.threads)
            };
            let resolved = t.unresolved.iter().all(|x: &W| x.is_zero());
            Ok((t, resolved, Some(step_cap)))
        }
    }
}

/// Builds the coefficient tables for `n = 0..=n_max`.
pub fn enumerate<W: Prob>(
    env: &EnvironmentSpec,
    jump: &JumpLaw,
    opts: &EnumerateOptions,
) -> Result<CoefficientTables<W>> {
    if opts.n_max < 0 {
        return Err(Error::config("n_max", "must be nonnegative"));
    }
    if env.dim() != jump.dim() {
        return Err(Error::Environment(format!(
            "environment has dimension {}, jump law {}",
            env.dim(),
            jump.dim()
        )));
    }
    let (env_t, env_done, cap) = sweep::<W>(env, jump, opts)?;
    let (p0_t, p0_done) = if env.is_zero_environment() {
        (env_t.clone(), env_done)
    } else {
        let (t, done, _) = sweep::<W>(&env.as_zero_environment(), jump, opts)?;
        (t, done)
    };
    let u0_hi = env_t.reach[0].clone() + env_t.unresolved[0].clone();
    if u0_hi.is_zero() {
        return Err(Error::Environment(
            "the walk cannot reach height 0 alive: P*(B_0) = 0".into(),
        ));
    }
    let mut a = p0_t.kappa_zero.clone();
    a[0] = W::zero();
    Ok(CoefficientTables {
        n_max: opts.n_max,
        exhaustive: env_done && p0_done,
        step_cap: cap,
        a,
        b: env_t.eta_zero,
        u: env_t.reach,
        v: p0_t.reach,
        unresolved_p0: p0_t.unresolved,
        unresolved_env: env_t.unresolved,
        unresolved_eta: env_t.unresolved_eta,
        env_joint: env_t.joint,
        p0_joint: p0_t.joint,
        joint_n_max: opts.joint_n_max,
        up_prob: crate::prob::rational_to_f64(&jump.up_prob()),
        nodes: env_t.nodes + if env.is_zero_environment() { 0 } else { p0_t.nodes },
    })
}

fn residual<W: Prob>(lhs: &W, rhs: &W) -> f64 {
    if W::EXACT {
        let d = lhs.clone() - rhs.clone();
        d.to_f64().abs()
    } else {
        (lhs.to_f64() - rhs.to_f64()).abs()
    }
}

/// Residual tolerance used when the arithmetic is floating point.
pub const FLOAT_IDENTITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct IdentityRow {
    pub n: i64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub identity: String,
    pub exact: bool,
    pub max_residual: f64,
    /// True when every residual is exactly zero (exact arithmetic only).
    pub exact_zero: bool,
    pub passed: bool,
    pub rows: Vec<IdentityRow>,
}

impl IdentityReport {
    fn from_rows<W: Prob>(identity: &str, rows: Vec<IdentityRow>, exact_zero: bool) -> Self {
        let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
        let passed = if W::EXACT {
            exact_zero
        } else {
            max_residual <= FLOAT_IDENTITY_TOL
        };
        IdentityReport {
            identity: identity.to_string(),
            exact: W::EXACT,
            max_residual,
            exact_zero: W::EXACT && exact_zero,
            passed,
            rows,
        }
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            Ok(self)
        } else {
            Err(Error::IdentityFailure(format!(
                "{}: max residual {:e}",
                self.identity, self.max_residual
            )))
        }
    }
}

/// Checks `u_n = b_n + Σ_{k<n} u_k a_{n-k}` and `v_n = Σ_{k<n} v_k a_{n-k}`.
pub fn verify_renewal<W: Prob>(tables: &CoefficientTables<W>) -> Result<Vec<IdentityReport>> {
    tables.require_exhaustive("renewal verification")?;
    let mut env_rows = Vec::new();
    let mut p0_rows = Vec::new();
    let (mut env_zero, mut p0_zero) = (true, true);
    for n in 1..=tables.n_max {
        let ni = n as usize;
        let mut rhs_u = tables.b[ni].clone();
        let mut rhs_v = W::zero();
        for k in 0..ni {
            rhs_u = rhs_u + tables.u[k].clone() * tables.a[ni - k].clone();
            rhs_v = rhs_v + tables.v[k].clone() * tables.a[ni - k].clone();
        }
        env_zero &= rhs_u == tables.u[ni];
        p0_zero &= rhs_v == tables.v[ni];
        env_rows.push(IdentityRow {
            n,
            lhs: tables.u[ni].to_f64(),
            rhs: rhs_u.to_f64(),
            residual: residual(&tables.u[ni], &rhs_u),
        });
        p0_rows.push(IdentityRow {
            n,
            lhs: tables.v[ni].to_f64(),
            rhs: rhs_v.to_f64(),
            residual: residual(&tables.v[ni], &rhs_v),
        });
    }
    Ok(vec![
        IdentityReport::from_rows::<W>("renewal (environment)", env_rows, env_zero),
        IdentityReport::from_rows::<W>("renewal (zero environment)", p0_rows, p0_zero),
    ])
}

/// Interval form of the renewal identities for truncated tables: each side's
/// lower/upper envelope must overlap the other's. The residual is the gap
/// between the two intervals (0 when they overlap).
pub fn verify_renewal_bounds(t: &TableBounds, tol: f64) -> Vec<IdentityReport> {
    let mut env_rows = Vec::new();
    let mut p0_rows = Vec::new();
    let gap = |lo: f64, hi: f64, rlo: f64, rhi: f64| (lo - rhi).max(rlo - hi).max(0.0);
    for n in 1..=t.n_max as usize {
        let (mut ulo, mut uhi) = (t.b_lo[n], t.b_hi[n]);
        let (mut vlo, mut vhi) = (0.0, 0.0);
        for k in 0..n {
            ulo += t.u_lo[k] * t.a_lo[n - k];
            uhi += t.u_hi[k] * t.a_hi[n - k];
            vlo += t.v_lo[k] * t.a_lo[n - k];
            vhi += t.v_hi[k] * t.a_hi[n - k];
        }
        env_rows.push(IdentityRow {
            n: n as i64,
            lhs: t.u_lo[n],
            rhs: ulo,
            residual: gap(t.u_lo[n], t.u_hi[n], ulo, uhi),
        });
        p0_rows.push(IdentityRow {
            n: n as i64,
            lhs: t.v_lo[n],
            rhs: vlo,
            residual: gap(t.v_lo[n], t.v_hi[n], vlo, vhi),
        });
    }
    let report = |identity: &str, rows: Vec<IdentityRow>| {
        let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
        IdentityReport {
            identity: identity.to_string(),
            exact: false,
            max_residual,
            exact_zero: false,
            passed: max_residual <= tol,
            rows,
        }
    };
    vec![
        report("renewal bounds (environment)", env_rows),
        report("renewal bounds (zero environment)", p0_rows),
    ]
}

/// Path predicate used by the factorization checks.
pub type PathPredicate<'a> = &'a dyn Fn(&[Site]) -> bool;

#[derive(Clone, Debug, Serialize)]
pub struct FactorizationReport {
    pub k: i64,
    pub n: i64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub exact_zero: bool,
    pub passed: bool,
}

/// Checks `P*(B_n, κ*(n)=k, prefix∈A, segment∈C) = P*(B_k, path∈A) · P_0(κ*(n-k)=0, segment∈C)`.
///
/// `prefix` is `S_0..S_{α(k)}`; `segment` is the displacement sequence after `α(k)`.
pub fn verify_factorization<W: Prob>(
    tables: &CoefficientTables<W>,
    k: i64,
    n: i64,
    prefix_in_a: PathPredicate<'_>,
    segment_in_c: PathPredicate<'_>,
) -> Result<FactorizationReport> {
    tables.require_exhaustive("factorization verification")?;
    tables.require_joint(n)?;
    if !(0 <= k && k < n) {
        return Err(Error::config("k", "need 0 <= k < n"));
    }
    let split = |path: &[Site], at: usize| -> (Vec<Site>, Vec<Site>) {
        let base = &path[at];
        (
            path[..=at].to_vec(),
            path[at + 1..].iter().map(|p| p.sub(base)).collect(),
        )
    };
    let mut lhs = W::zero();
    for e in tables.env_entries(n).filter(|e| e.kappa() == Some(k)) {
        let at = e.path.iter().position(|p| p.level() >= k).expect("level k is hit");
        let (pre, seg) = split(&e.path, at);
        if prefix_in_a(&pre) && segment_in_c(&seg) {
            lhs = lhs + e.weight.clone();
        }
    }
    let mut left = W::zero();
    for e in tables.env_entries(k) {
        if prefix_in_a(&e.path) {
            left = left + e.weight.clone();
        }
    }
    let mut right = W::zero();
    for e in tables.p0_entries(n - k).filter(|e| e.kappa() == Some(0)) {
        let (_, seg) = split(&e.path, 0);
        if segment_in_c(&seg) {
            right = right + e.weight.clone();
        }
    }
    let rhs = left * right;
    let res = residual(&lhs, &rhs);
    let exact_zero = W::EXACT && lhs == rhs;
    Ok(FactorizationReport {
        k,
        n,
        lhs: lhs.to_f64(),
        rhs: rhs.to_f64(),
        residual: res,
        exact_zero,
        passed: if W::EXACT { exact_zero } else { res <= FLOAT_IDENTITY_TOL },
    })
}

/// Outcome of the blockwise factorization for one block pattern.
#[derive(Clone, Debug, Serialize)]
pub struct BlockFactorizationReport {
    pub n: i64,
    pub eta: usize,
    pub lhs: f64,
    pub rhs: crate::interval::Interval,
    pub exact_zero: bool,
    pub passed: bool,
}

/// Checks that the probability of surviving to `α(n)` with exactly the given
/// initial and increment blocks equals `ψ₀ qⁿ` times the core masses of
/// those blocks. Patterns whose heights do not add up to `n` have both sides 0.
pub fn verify_block_factorization_c4<W: Prob>(
    tables: &CoefficientTables<W>,
    laws: &crate::core_process::ExactBlockLaws<W>,
    n: i64,
    initial: &crate::levels::InitialSegment,
    increments: &[crate::levels::IncrementSegment],
) -> Result<BlockFactorizationReport> {
    tables.require_exhaustive("block factorization")?;
    tables.require_joint(n)?;
    let mut lhs = W::zero();
    for e in tables.env_entries(n).filter(|e| e.eta() == increments.len()) {
        let d = e.decomposition();
        if &d.initial == initial && d.increments == increments {
            lhs = lhs + e.weight.clone();
        }
    }
    let total: i64 = initial.level + increments.iter().map(|b| b.height).sum::<i64>();
    let c = &laws.constants;
    let (rhs, exact_zero) = if total != n {
        (crate::interval::Interval::point(0.0), lhs.is_zero())
    } else {
        let mass = laws.pattern_mass(initial, increments);
        let scale = c.psi0.mul(c.q.powi(n as i32));
        let exact = mass.coeff.is_zero() && lhs.is_zero()
            || (mass.q_pow == -n && mass.psi_pow == -1 && mass.coeff == lhs);
        (scale.mul(mass.eval(c)), exact)
    };
    let res = crate::interval::Interval::point(lhs.to_f64()).sub(rhs);
    // The interval side uses float constants; exactness is judged on coefficients.
    let tol = FLOAT_IDENTITY_TOL;
    let within = res.lo <= tol && res.hi >= -tol;
    Ok(BlockFactorizationReport {
        n,
        eta: increments.len(),
        lhs: lhs.to_f64(),
        rhs,
        exact_zero: W::EXACT && exact_zero,
        passed: within && (exact_zero || !W::EXACT),
    })
}

/// Runs the blockwise factorization for the pattern of every surviving path at `n`.
pub fn verify_block_factorization_all<W: Prob>(
    tables: &CoefficientTables<W>,
    laws: &crate::core_process::ExactBlockLaws<W>,
    n: i64,
) -> Result<Vec<BlockFactorizationReport>> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for e in tables.env_entries(n) {
        let d = e.decomposition();
        if seen.insert((d.initial.clone(), d.increments.clone())) {
            out.push(verify_block_factorization_c4(tables, laws, n, &d.initial, &d.increments)?);
        }
    }
    Ok(out)
}

/// Checks supermultiplicativity `v_{k+l} >= v_k v_l` on the computed range.
pub fn check_supermultiplicative<W: Prob>(tables: &CoefficientTables<W>) -> bool {
    let n = tables.n_max as usize;
    (0..=n).all(|k| {
        (0..=n - k).all(|l| tables.v[k + l].clone() >= tables.v[k].clone() * tables.v[l].clone())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::{ConstraintLaw, PathRecord};
    use num_rational::BigRational;
    use num_traits::{One, Zero};

    type Q = BigRational;

    fn r(n: i64, d: i64) -> Q {
        Q::new(n.into(), d.into())
    }

    fn zero_env(h: u32) -> EnvironmentSpec {
        EnvironmentSpec::zero_environment(ConstraintLaw::constant(h), 1).unwrap()
    }

    /// Independent oracle: enumerate every ±1 word up to a length, keep the
    /// ones whose first passage to `n` happens at the end, weight by the
    /// survival weight computed from scratch.
    fn brute_force_1d(env: &EnvironmentSpec, n: i64, max_len: usize) -> (Q, Q, Q) {
        let mut reach = Q::zero();
        let mut eta0 = Q::zero();
        let mut kappa0 = Q::zero();
        for len in 0..=max_len {
            for word in 0u64..(1 << len) {
                let mut lv = vec![0i64];
                for i in 0..len {
                    let s = if word >> i & 1 == 1 { 1 } else { -1 };
                    lv.push(lv.last().unwrap() + s);
                }
                let path = PathRecord::from_levels(&lv);
                if crate::walk::hitting_time(&path, n) != Some(len) {
                    continue;
                }
                let w: Q = crate::walk::survival_weight(&path, env);
                if w.is_zero() {
                    continue;
                }
                let w = w * r(1, 1 << len);
                let set = crate::levels::n_separating_levels(&path, n).unwrap();
                reach += w.clone();
                if set.eta() == 0 {
                    eta0 += w.clone();
                }
                if set.kappa() == Some(0) {
                    kappa0 += w;
                }
            }
        }
        (reach, eta0, kappa0)
    }

    #[test]
    fn unit_budget_tables() {
        let t: CoefficientTables<Q> =
            enumerate(&zero_env(1), &JumpLaw::simple_symmetric(), &EnumerateOptions::exhaustive(10)).unwrap();
        for n in 0..=10 {
            assert_eq!(t.v[n], r(1, 1 << n));
        }
        assert_eq!(t.a[1], r(1, 2));
        assert!(t.a[2..].iter().all(Zero::is_zero));
        assert!(t.exhaustive);
    }

    #[test]
    fn budget_two_tables() {
        let t: CoefficientTables<Q> =
            enumerate(&zero_env(2), &JumpLaw::simple_symmetric(), &EnumerateOptions::exhaustive(6)).unwrap();
        assert_eq!(t.a[1], r(1, 2));
        assert_eq!(t.a[2], r(1, 16));
        assert_eq!(t.v[2], r(5, 16));
        assert!(t.u[0].is_one() && t.b[0].is_one());
    }

    #[test]
    fn tables_match_brute_force() {
        let law = ConstraintLaw::new(vec![(1, r(1, 2)), (2, r(1, 2))], Q::zero()).unwrap();
        let env = EnvironmentSpec::zero_environment(law, 1).unwrap();
        let t: CoefficientTables<Q> =
            enumerate(&env, &JumpLaw::simple_symmetric(), &EnumerateOptions::exhaustive(4)).unwrap();
        for n in 1..=4 {
            let (reach, eta0, kappa0) = brute_force_1d(&env, n, 2 * n as usize + 2);
            assert_eq!(t.v[n as usize], reach, "v_{n}");
            assert_eq!(t.b[n as usize], eta0, "b_{n}");
            assert_eq!(t.a[n as usize], kappa0, "a_{n}");
        }
    }

    #[test]
    fn exhaustive_rejects_unbounded_or_multidimensional() {
        let env = EnvironmentSpec::zero_environment(ConstraintLaw::unlimited(), 1).unwrap();
        let err = enumerate::<f64>(&env, &JumpLaw::simple_symmetric(), &EnumerateOptions::exhaustive(3));
        assert!(matches!(err, Err(Error::Capability(_))));
        let env2 = EnvironmentSpec::zero_environment(ConstraintLaw::constant(2), 2).unwrap();
        let jump2 = JumpLaw::new(
            2,
            vec![
                (vec![1, 0], r(1, 4)),
                (vec![-1, 0], r(1, 4)),
                (vec![0, 1], r(1, 4)),
                (vec![0, -1], r(1, 4)),
            ],
        )
        .unwrap();
        let err = enumerate::<f64>(&env2, &jump2, &EnumerateOptions::exhaustive(3));
        assert!(matches!(err, Err(Error::Capability(_))));
    }

    #[test]
    fn renewal_identities_hold_exactly() {
        for h in [1, 2, 3] {
            let t: CoefficientTables<Q> =
                enumerate(&zero_env(h), &JumpLaw::simple_symmetric(), &EnumerateOptions::exhaustive(6)).unwrap();
            for rep in verify_renewal(&t).unwrap() {
                assert!(rep.exact_zero, "{rep:?}");
            }
        }
    }

    #[test]
    fn renewal_needs_exhaustive_tables() {
        let env = EnvironmentSpec::zero_environment(ConstraintLaw::unlimited(), 1).unwrap();
        let t: CoefficientTables<f64> = enumerate(
            &env,
            &JumpLaw::nearest_neighbour(r(1, 3)).unwrap(),
            &EnumerateOptions::truncated(4, 6),
        )
        .unwrap();
        assert!(!t.exhaustive);
        assert!(verify_renewal(&t).is_err());
    }

    #[test]
    fn factorization_examples() {
        let t: CoefficientTables<Q> = enumerate(
            &zero_env(2),
            &JumpLaw::simple_symmetric(),
            &EnumerateOptions::exhaustive(4).with_joint(4),
        )
        .unwrap();
        let all = |_: &[Site]| true;
        let rep = verify_factorization(&t, 0, 1, &all, &all).unwrap();
        assert_eq!((rep.lhs, rep.rhs), (0.5, 0.5));
        assert!(rep.exact_zero);
        let none = |_: &[Site]| false;
        let rep = verify_factorization(&t, 1, 3, &all, &none).unwrap();
        assert_eq!((rep.lhs, rep.rhs), (0.0, 0.0));

        let t1: CoefficientTables<Q> = enumerate(
            &zero_env(1),
            &JumpLaw::simple_symmetric(),
            &EnumerateOptions::exhaustive(5).with_joint(5),
        )
        .unwrap();
        let monotone = |p: &[Site]| p.windows(2).all(|w| w[1].level() == w[0].level() + 1);
        for n in 1..=5 {
            let rep = verify_factorization(&t1, n - 1, n, &monotone, &monotone).unwrap();
            assert_eq!(rep.lhs, 0.5f64.powi(n as i32));
            assert!(rep.exact_zero);
        }
    }

    #[test]
    fn block_factorization_examples() {
        use crate::core_process::ExactBlockLaws;
        use crate::cramer::CramerConstants;
        use crate::levels::{IncrementSegment, InitialSegment};
        let setup = |h: u32| {
            let t: CoefficientTables<Q> = enumerate(
                &zero_env(h),
                &JumpLaw::simple_symmetric(),
                &EnumerateOptions::exhaustive(4).with_joint(4),
            )
            .unwrap();
            let c = CramerConstants::solve(&t.bounds()).unwrap();
            let laws = ExactBlockLaws::from_tables(&t, &c).unwrap();
            (t, laws)
        };
        let init = InitialSegment { level: 0, time: 0, prefix: vec![Site(vec![0])] };
        let unit = IncrementSegment { height: 1, duration: 1, segment: vec![Site(vec![1])] };
        let (t1, l1) = setup(1);
        let rep = verify_block_factorization_c4(&t1, &l1, 2, &init, &[unit.clone(), unit.clone()]).unwrap();
        assert_eq!(rep.lhs, 0.25);
        assert!(rep.exact_zero && rep.rhs.contains(0.25));
        let rep = verify_block_factorization_c4(&t1, &l1, 3, &init, std::slice::from_ref(&unit)).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert_eq!(rep.rhs, crate::interval::Interval::point(0.0));

        let (t2, l2) = setup(2);
        let two = IncrementSegment {
            height: 2,
            duration: 4,
            segment: crate::walk::sites_1d(&[1, 0, 1, 2]),
        };
        let rep = verify_block_factorization_c4(&t2, &l2, 2, &init, &[two]).unwrap();
        assert_eq!(rep.lhs, 1.0 / 16.0);
        assert!(rep.exact_zero && rep.passed);
        for n in 0..=4 {
            for rep in verify_block_factorization_all(&t2, &l2, n).unwrap() {
                assert!(rep.passed, "{rep:?}");
            }
        }
    }

    #[test]
    fn parallel_split_is_order_independent() {
        let env = zero_env(2);
        let jump = JumpLaw::simple_symmetric();
        let base: CoefficientTables<f64> =
            enumerate(&env, &jump, &EnumerateOptions::exhaustive(8).with_threads(1)).unwrap();
        for threads in [2, 4, 8] {
            let t: CoefficientTables<f64> =
                enumerate(&env, &jump, &EnumerateOptions::exhaustive(8).with_threads(threads)).unwrap();
            assert_eq!(t.v, base.v);
            assert_eq!(t.a, base.a);
        }
    }

    #[test]
    fn merged_sweep_agrees_with_depth_first() {
        let env = EnvironmentSpec::zero_environment(ConstraintLaw::unlimited(), 1).unwrap();
        let jump = JumpLaw::nearest_neighbour(r(1, 3)).unwrap();
        let merged: CoefficientTables<Q> =
            enumerate(&env, &jump, &EnumerateOptions::truncated(5, 12)).unwrap();
        let dfs: CoefficientTables<Q> =
            enumerate(&env, &jump, &EnumerateOptions::truncated(5, 12).with_joint(5)).unwrap();
        assert_eq!(merged.a, dfs.a);
        assert_eq!(merged.b, dfs.b);
        assert_eq!(merged.v, dfs.v);
        assert_eq!(merged.unresolved_p0, dfs.unresolved_p0);
    }

    #[test]
    fn stay_positive_reach_matches_gambler_ruin() {
        let env = EnvironmentSpec::zero_environment(ConstraintLaw::unlimited(), 1).unwrap();
        let jump = JumpLaw::nearest_neighbour(r(1, 3)).unwrap();
        let t: CoefficientTables<f64> = enumerate(&env, &jump, &EnumerateOptions::truncated(6, 400)).unwrap();
        for n in 0..=6 {
            let exact = 1.0 / (2f64.powi(n as i32 + 1) - 1.0);
            assert!((t.v[n] - exact).abs() < 1e-12, "n={n}");
            assert!(t.unresolved_p0[n] < 1e-12);
        }
    }

    #[test]
    fn supermultiplicativity_on_presets() {
        for h in [1, 2] {
            let t: CoefficientTables<Q> =
                enumerate(&zero_env(h), &JumpLaw::simple_symmetric(), &EnumerateOptions::exhaustive(7)).unwrap();
            assert!(check_supermultiplicative(&t));
            // v_n bounded below by the up-step probability
            for n in 0..=7 {
                assert!(t.v[n] >= r(1, 2).powi(n as u32));
                assert!(t.a[n] <= t.v[n]);
            }
        }
    }

    #[test]
    fn lower_start_environment() {
        // start at -1 with one allowed visit there; the walk must step up first
        let mut map = BTreeMap::new();
        map.insert(Site(vec![-1]), crate::walk::Budget::Finite(1));
        let env = EnvironmentSpec::new(
            ConstraintLaw::constant(1),
            LowerMode::Explicit(map),
            vec![(Site(vec![-1]), Q::one())],
        )
        .unwrap();
        let t: CoefficientTables<Q> =
            enumerate(&env, &JumpLaw::simple_symmetric(), &EnumerateOptions::exhaustive(3)).unwrap();
        assert_eq!(t.u[0], r(1, 2));
        assert_eq!(t.b[0], r(1, 2));
        assert_eq!(t.u[3], r(1, 16));
        for rep in verify_renewal(&t).unwrap() {
            assert!(rep.exact_zero);
        }
    }
}
