//! The core process: a strongly regenerative walk whose blocks are drawn
//! from tilted block laws of the constrained walk, plus the exact checks
//! that tie its law back to the constrained walk.
//!
//! Core-side masses are kept as monomials `coeff · q^a · ψ₀^b` so that the
//! powers of the constants cancel symbolically in the identities; intervals
//! for `q` and `ψ₀` enter only when a number is needed.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cramer::CramerConstants;
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::levels::{n_separating_levels, IncrementSegment, InitialSegment};
use crate::oracle::{CoefficientTables, TableBounds};
use crate::prob::Prob;
use crate::walk::{sample_path, EnvironmentSpec, JumpLaw, PathRecord, Site, StopReason, SurvivalModel};

/// `coeff · q^q_pow · ψ₀^psi_pow`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tilted<W> {
    pub coeff: W,
    pub q_pow: i64,
    pub psi_pow: i64,
}

impl<W: Prob> Tilted<W> {
    pub fn new(coeff: W, q_pow: i64, psi_pow: i64) -> Self {
        Tilted { coeff, q_pow, psi_pow }
    }

    pub fn times(&self, other: &Tilted<W>) -> Tilted<W> {
        Tilted {
            coeff: self.coeff.clone() * other.coeff.clone(),
            q_pow: self.q_pow + other.q_pow,
            psi_pow: self.psi_pow + other.psi_pow,
        }
    }

    pub fn eval(&self, c: &CramerConstants) -> Interval {
        Interval::point(self.coeff.to_f64())
            .mul(c.q.powi(self.q_pow as i32))
            .mul(c.psi0.powi(self.psi_pow as i32))
    }

    pub fn eval_mid(&self, c: &CramerConstants) -> f64 {
        self.coeff.to_f64() * c.q.mid().powi(self.q_pow as i32) * c.psi0.mid().powi(self.psi_pow as i32)
    }
}

/// Sums monomials that share their powers; `None` when the powers differ.
fn sum_like<W: Prob>(terms: impl IntoIterator<Item = Tilted<W>>, q_pow: i64, psi_pow: i64) -> Option<W> {
    let mut acc = W::zero();
    for t in terms {
        if t.q_pow != q_pow || t.psi_pow != psi_pow {
            return None;
        }
        acc = acc + t.coeff;
    }
    Some(acc)
}

/// Core path masses keyed by `(m, path)`.
pub type CorePathLaw<W> = BTreeMap<(usize, Vec<Site>), Tilted<W>>;

/// Block laws as finite tables read off the enumerated joint support.
#[derive(Clone, Debug)]
pub struct ExactBlockLaws<W> {
    pub constants: CramerConstants,
    /// Largest level covered by the tables.
    pub range: i64,
    /// Mass of `(ν̄₀, T̄₀, prefix)`: path weight over `ψ₀ q^k`.
    pub initial: Vec<(InitialSegment, Tilted<W>)>,
    /// Mass of `(λ̄, τ̄, segment)`: zero-environment path weight over `q^l`.
    pub increments: Vec<(IncrementSegment, Tilted<W>)>,
}

impl<W: Prob> ExactBlockLaws<W> {
    pub fn from_tables(tables: &CoefficientTables<W>, constants: &CramerConstants) -> Result<Self> {
        if !tables.exhaustive {
            return Err(Error::Capability("exact block laws need exhaustive tables".into()));
        }
        let range = tables
            .joint_n_max
            .ok_or_else(|| Error::Capability("exact block laws need the joint support".into()))?;
        let mut initial = Vec::new();
        for e in tables.env_joint.iter().filter(|e| e.eta() == 0) {
            let seg = InitialSegment {
                level: e.n,
                time: e.path.len() - 1,
                prefix: e.path.clone(),
            };
            initial.push((seg, Tilted::new(e.weight.clone(), -e.n, -1)));
        }
        let mut increments = Vec::new();
        for e in tables.p0_joint.iter().filter(|e| e.n >= 1 && e.kappa() == Some(0)) {
            let base = &e.path[0];
            let seg = IncrementSegment {
                height: e.n,
                duration: e.path.len() - 1,
                segment: e.path[1..].iter().map(|p| p.sub(base)).collect(),
            };
            increments.push((seg, Tilted::new(e.weight.clone(), -e.n, 0)));
        }
        initial.sort_by(|a, b| a.0.cmp(&b.0));
        increments.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(ExactBlockLaws {
            constants: constants.clone(),
            range,
            initial,
            increments,
        })
    }

    pub fn initial_mass(&self) -> Interval {
        self.initial
            .iter()
            .fold(Interval::point(0.0), |acc, (_, m)| acc.add(m.eval(&self.constants)))
    }

    pub fn increment_mass(&self) -> Interval {
        self.increments
            .iter()
            .fold(Interval::point(0.0), |acc, (_, m)| acc.add(m.eval(&self.constants)))
    }

    /// `1 - Σ mass` over the stored increments; contains 0 when the table is complete.
    pub fn increment_unaccounted(&self) -> Interval {
        Interval::point(1.0).sub(self.increment_mass())
    }

    pub fn initial_unaccounted(&self) -> Interval {
        Interval::point(1.0).sub(self.initial_mass())
    }

    /// `E λ̄` over the stored increments.
    pub fn mean_height(&self) -> Interval {
        self.increments.iter().fold(Interval::point(0.0), |acc, (s, m)| {
            acc.add(m.eval(&self.constants).scale(s.height as f64))
        })
    }

    pub fn mean_duration(&self) -> Interval {
        self.increments.iter().fold(Interval::point(0.0), |acc, (s, m)| {
            acc.add(m.eval(&self.constants).scale(s.duration as f64))
        })
    }

    /// `P(λ̄ = l)` for `l = 0..=range`.
    pub fn lambda_law(&self) -> Vec<Interval> {
        let mut out = vec![Interval::point(0.0); self.range as usize + 1];
        for (s, m) in &self.increments {
            let i = s.height as usize;
            out[i] = out[i].add(m.eval(&self.constants));
        }
        out
    }

    /// Checks height, duration, nonnegative infimum and absence of inner
    /// separating levels for every stored increment.
    pub fn check_segments(&self) -> Result<()> {
        for (s, _) in &self.increments {
            let last = s.segment.last().map(Site::level);
            let bad = |why: &str| Err(Error::IdentityFailure(format!("increment {s:?}: {why}")));
            if last != Some(s.height) || s.height < 1 {
                return bad("endpoint height differs from the block height");
            }
            if s.duration != s.segment.len() || s.duration < s.height as usize {
                return bad("duration shorter than the height");
            }
            if s.internal_min() < 0 {
                return bad("drops below its starting height");
            }
            let mut pts = vec![Site::origin(s.segment[0].dim())];
            pts.extend(s.segment.iter().cloned());
            let set = n_separating_levels(&PathRecord::new(pts), s.height)?;
            if set.levels != vec![0, s.height] {
                return bad("has an inner separating level");
            }
        }
        Ok(())
    }

    /// Core paths `S̄_0..S̄_{T̄_m}` with `ν̄_m = n`, keyed by `(m, path)`.
    pub fn core_path_law(&self, n: i64) -> Result<CorePathLaw<W>> {
        if n > self.range {
            return Err(Error::Capability(format!("core law needs n <= {}", self.range)));
        }
        let mut by_height: BTreeMap<i64, Vec<&(IncrementSegment, Tilted<W>)>> = BTreeMap::new();
        for inc in &self.increments {
            by_height.entry(inc.0.height).or_default().push(inc);
        }
        let mut out = BTreeMap::new();
        for (init, mass) in self.initial.iter().filter(|(s, _)| s.level <= n) {
            extend_core(
                &by_height,
                n - init.level,
                0,
                init.prefix.clone(),
                mass.clone(),
                &mut out,
            );
        }
        Ok(out)
    }

    /// Mass of `(initial block, increment blocks)` under the core laws; zero
    /// monomial when some block is outside the support.
    pub fn pattern_mass(&self, init: &InitialSegment, incs: &[IncrementSegment]) -> Tilted<W> {
        let zero = Tilted::new(W::zero(), 0, 0);
        let Some((_, m0)) = self.initial.iter().find(|(s, _)| s == init) else {
            return zero;
        };
        let mut acc = m0.clone();
        for b in incs {
            match self.increments.iter().find(|(s, _)| s == b) {
                Some((_, m)) => acc = acc.times(m),
                None => return zero,
            }
        }
        acc
    }
}

fn extend_core<W: Prob>(
    by_height: &BTreeMap<i64, Vec<&(IncrementSegment, Tilted<W>)>>,
    remaining: i64,
    blocks: usize,
    path: Vec<Site>,
    mass: Tilted<W>,
    out: &mut BTreeMap<(usize, Vec<Site>), Tilted<W>>,
) {
    if remaining == 0 {
        let entry = out
            .entry((blocks, path))
            .or_insert_with(|| Tilted::new(W::zero(), mass.q_pow, mass.psi_pow));
        entry.coeff = entry.coeff.clone() + mass.coeff;
        return;
    }
    for (_, incs) in by_height.range(1..=remaining) {
        for (seg, m) in incs {
            let base = path.last().expect("nonempty").clone();
            let mut next = path.clone();
            next.extend(seg.segment.iter().map(|d| base.add(d)));
            extend_core(by_height, remaining - seg.height, blocks + 1, next, mass.times(m), out);
        }
    }
}

/// Exact-zero and interval outcome of one identity check.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub n: i64,
    pub m: Option<usize>,
    pub lhs: f64,
    /// Core-side probability (before multiplying by `ψ₀ q^n`).
    pub core: Interval,
    /// `lhs - ψ₀ q^n · core`.
    pub residual: Interval,
    /// Coefficients agree exactly after the powers cancel.
    pub exact_zero: bool,
    pub passed: bool,
}

fn scaled(c: &CramerConstants, n: i64) -> Interval {
    c.psi0.mul(c.q.powi(n as i32))
}

fn check<W: Prob>(
    name: &str,
    n: i64,
    m: Option<usize>,
    lhs: &W,
    core: &[Tilted<W>],
    c: &CramerConstants,
) -> IdentityCheck {
    let core_iv = core.iter().fold(Interval::point(0.0), |acc, t| acc.add(t.eval(c)));
    let residual = Interval::point(lhs.to_f64()).sub(scaled(c, n).mul(core_iv));
    let exact_zero = sum_like(core.iter().cloned(), -n, -1).is_some_and(|s| s == *lhs);
    // The interval side uses float constants; exactness is judged on coefficients.
    let tol = crate::oracle::FLOAT_IDENTITY_TOL;
    let within = residual.lo <= tol && residual.hi >= -tol;
    IdentityCheck {
        name: name.to_string(),
        n,
        m,
        lhs: lhs.to_f64(),
        core: core_iv,
        residual,
        exact_zero,
        passed: within && (exact_zero || !W::EXACT),
    }
}

/// Path-level report for the representation identity at fixed `(n, m)`.
#[derive(Clone, Debug, Serialize)]
pub struct RepresentationReport {
    pub n: i64,
    pub m: usize,
    /// Aggregate over the predicate.
    pub total: IdentityCheck,
    /// Singleton sets `A = {path}` over the union of both supports.
    pub paths_checked: usize,
    pub paths_failed: usize,
    pub max_residual: f64,
    pub passed: bool,
}

/// Checks `P*(α(n) < T*, η*(n) = m, path ∈ A) = ψ₀ qⁿ P(ν̄_m = n, core path ∈ A)`
/// for the aggregate `A` given by `pred` and for every singleton inside it.
pub fn verify_representation<W: Prob>(
    tables: &CoefficientTables<W>,
    laws: &ExactBlockLaws<W>,
    n: i64,
    m: usize,
    pred: &dyn Fn(&[Site]) -> bool,
) -> Result<RepresentationReport> {
    let core = laws.core_path_law(n)?;
    let mut lhs_map: BTreeMap<Vec<Site>, W> = BTreeMap::new();
    for e in tables.env_entries(n).filter(|e| e.eta() == m && pred(&e.path)) {
        let w = lhs_map.entry(e.path.clone()).or_insert_with(W::zero);
        *w = w.clone() + e.weight.clone();
    }
    let core_map: BTreeMap<Vec<Site>, Tilted<W>> = core
        .into_iter()
        .filter(|((mm, p), _)| *mm == m && pred(p))
        .map(|((_, p), t)| (p, t))
        .collect();
    let c = &laws.constants;
    let mut keys: Vec<&Vec<Site>> = lhs_map.keys().chain(core_map.keys()).collect();
    keys.sort();
    keys.dedup();
    let zero = W::zero();
    let mut failed = 0;
    let mut max_residual: f64 = 0.0;
    for k in &keys {
        let lhs = lhs_map.get(*k).unwrap_or(&zero);
        let core: Vec<Tilted<W>> = core_map.get(*k).cloned().into_iter().collect();
        let chk = check("representation", n, Some(m), lhs, &core, c);
        max_residual = max_residual.max(chk.residual.lo.abs()).max(chk.residual.hi.abs());
        if !chk.passed {
            failed += 1;
        }
    }
    let lhs_total = lhs_map.values().fold(W::zero(), |a, w| a + w.clone());
    let core_all: Vec<Tilted<W>> = core_map.values().cloned().collect();
    let total = check("representation", n, Some(m), &lhs_total, &core_all, c);
    let passed = failed == 0 && total.passed;
    Ok(RepresentationReport {
        n,
        m,
        total,
        paths_checked: keys.len(),
        paths_failed: failed,
        max_residual,
        passed,
    })
}

/// Runs [`verify_representation`] for every `n <= n_max`, `m <= n` with `A` = everything.
pub fn verify_representation_all<W: Prob>(
    tables: &CoefficientTables<W>,
    laws: &ExactBlockLaws<W>,
    n_max: i64,
) -> Result<Vec<RepresentationReport>> {
    let mut out = Vec::new();
    for n in 0..=n_max {
        for m in 0..=n as usize {
            out.push(verify_representation(tables, laws, n, m, &|_| true)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct CorollaryReport {
    pub n: i64,
    /// `P*(B_n) = ψ₀ qⁿ P(B̄_n)` with the core side from block convolution.
    pub hitting: IdentityCheck,
    /// Same identity with `P(B̄_n)` from the renewal function.
    pub hitting_renewal: Interval,
    pub hitting_renewal_ok: bool,
    /// Largest exact discrepancy between conditional prefix laws over `k <= n`.
    pub prefix_max_tv: f64,
    pub prefix_exact: bool,
    pub passed: bool,
}

/// Checks the hitting identity and equality of the conditional prefix laws
/// given `B_n` and given `B̄_n`, for all prefix lengths `k <= n`.
pub fn verify_corollary<W: Prob>(
    tables: &CoefficientTables<W>,
    laws: &ExactBlockLaws<W>,
    n: i64,
) -> Result<CorollaryReport> {
    let core = laws.core_path_law(n)?;
    let c = &laws.constants;
    let core_terms: Vec<Tilted<W>> = core.values().cloned().collect();
    let u_n = tables.u[n as usize].clone();
    let hitting = check("hitting", n, None, &u_n, &core_terms, c);

    let bounds = tables.bounds();
    let lambda = lambda_law(&bounds, c);
    let v = renewal_function(&lambda, n);
    let bn = hitting_event_prob(&bounds, c, &v, n);
    let hitting_renewal = Interval::point(u_n.to_f64()).sub(scaled(c, n).mul(bn));
    let slack = 1e-9;
    let hitting_renewal_ok = hitting_renewal.lo <= slack && hitting_renewal.hi >= -slack;

    let core_total = sum_like(core_terms.iter().cloned(), -n, -1)
        .ok_or_else(|| Error::IdentityFailure("core masses carry mixed powers".into()))?;
    let mut prefix_exact = true;
    let mut prefix_max_tv: f64 = 0.0;
    for k in 0..=n as usize {
        let mut lhs: BTreeMap<Vec<Site>, W> = BTreeMap::new();
        for e in tables.env_entries(n) {
            let w = lhs.entry(e.path[..=k].to_vec()).or_insert_with(W::zero);
            *w = w.clone() + e.weight.clone();
        }
        let mut rhs: BTreeMap<Vec<Site>, W> = BTreeMap::new();
        for ((_, p), t) in &core {
            let w = rhs.entry(p[..=k].to_vec()).or_insert_with(W::zero);
            *w = w.clone() + t.coeff.clone();
        }
        let mut keys: Vec<&Vec<Site>> = lhs.keys().chain(rhs.keys()).collect();
        keys.sort();
        keys.dedup();
        let mut tv = 0.0;
        for key in keys {
            let a = lhs.get(key).cloned().unwrap_or_else(W::zero) / u_n.clone();
            let b = rhs.get(key).cloned().unwrap_or_else(W::zero) / core_total.clone();
            if a != b {
                prefix_exact = false;
            }
            tv += (a.to_f64() - b.to_f64()).abs();
        }
        prefix_max_tv = prefix_max_tv.max(0.5 * tv);
    }
    let prefix_ok = if W::EXACT { prefix_exact } else { prefix_max_tv <= 1e-12 };
    Ok(CorollaryReport {
        n,
        passed: hitting.passed && hitting_renewal_ok && prefix_ok,
        hitting,
        hitting_renewal,
        hitting_renewal_ok,
        prefix_max_tv,
        prefix_exact: W::EXACT && prefix_exact,
    })
}

/// `P(λ̄ = l) = a_l q^{-l}` for `l = 0..=N` as intervals.
pub fn lambda_law(t: &TableBounds, c: &CramerConstants) -> Vec<Interval> {
    (0..t.a_lo.len())
        .map(|l| {
            if l == 0 {
                return Interval::point(0.0);
            }
            Interval::new(t.a_lo[l], t.a_hi[l]).mul(c.q.powi(-(l as i32)))
        })
        .collect()
}

/// `P(ν̄₀ = k) = b_k / (ψ₀ q^k)` for `k = 0..=N` as intervals.
pub fn nu0_law(t: &TableBounds, c: &CramerConstants) -> Vec<Interval> {
    (0..t.b_lo.len())
        .map(|k| {
            Interval::new(t.b_lo[k], t.b_hi[k])
                .mul(c.q.powi(-(k as i32)))
                .mul(c.psi0.recip())
        })
        .collect()
}

/// Renewal function `V_n = P(n is a sum λ̄_1 + … + λ̄_m for some m >= 0)`.
///
/// Beyond the table range the mass `δ` missing from the `λ̄` law widens the
/// upper end by `δ · (n − N)`.
pub fn renewal_function(lambda: &[Interval], n_max: i64) -> Vec<Interval> {
    let table_n = lambda.len() as i64 - 1;
    let accounted = lambda.iter().fold(0.0, |acc, p| acc + p.lo);
    let delta = (1.0 - accounted).max(0.0);
    let mut v: Vec<Interval> = Vec::with_capacity(n_max as usize + 1);
    v.push(Interval::point(1.0));
    for n in 1..=n_max {
        let mut acc = Interval::point(0.0);
        for l in 1..=n.min(table_n) {
            acc = acc.add(lambda[l as usize].mul(v[(n - l) as usize]));
        }
        let widen = if n > table_n { delta * (n - table_n) as f64 } else { 0.0 };
        let hi = (acc.hi + widen).min(1.0);
        v.push(Interval::new(acc.lo.min(hi), hi));
    }
    v
}

/// `P(B̄_n) = Σ_k P(ν̄₀ = k) V_{n−k}`.
pub fn hitting_event_prob(t: &TableBounds, c: &CramerConstants, v: &[Interval], n: i64) -> Interval {
    let nu0 = nu0_law(t, c);
    (0..=n as usize)
        .filter(|&k| k < nu0.len())
        .fold(Interval::point(0.0), |acc, k| acc.add(nu0[k].mul(v[n as usize - k])))
}

/// A sampled core path with its regenerative levels and times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreRealization {
    pub points: Vec<Site>,
    pub nu_bar: Vec<i64>,
    #[serde(rename = "T_bar")]
    pub t_bar: Vec<usize>,
}

impl CoreRealization {
    pub fn heights(&self) -> Vec<i64> {
        self.points.iter().map(Site::level).collect()
    }

    /// Increment block `i >= 1` as `(height, duration)`.
    pub fn block(&self, i: usize) -> (i64, usize) {
        (self.nu_bar[i] - self.nu_bar[i - 1], self.t_bar[i] - self.t_bar[i - 1])
    }

    pub fn blocks(&self) -> usize {
        self.nu_bar.len().saturating_sub(1)
    }
}

/// Draws core blocks.
pub trait BlockSampler: Sync {
    fn sample_initial(&self, rng: &mut dyn rand::RngCore) -> Result<InitialSegment>;
    fn sample_increment(&self, rng: &mut dyn rand::RngCore) -> Result<IncrementSegment>;
}

/// Samples the exact block tables at the midpoint constants, renormalized
/// over the stored support.
pub struct TableSampler {
    initial: Vec<InitialSegment>,
    initial_index: WeightedIndex<f64>,
    increments: Vec<IncrementSegment>,
    increment_index: WeightedIndex<f64>,
}

impl TableSampler {
    pub fn new<W: Prob>(laws: &ExactBlockLaws<W>) -> Result<Self> {
        let c = &laws.constants;
        let iw: Vec<f64> = laws.initial.iter().map(|(_, m)| m.eval_mid(c)).collect();
        let jw: Vec<f64> = laws.increments.iter().map(|(_, m)| m.eval_mid(c)).collect();
        let err = |what: &str| Error::Capability(format!("empty {what} block table"));
        Ok(TableSampler {
            initial: laws.initial.iter().map(|(s, _)| s.clone()).collect(),
            initial_index: WeightedIndex::new(&iw).map_err(|_| err("initial"))?,
            increments: laws.increments.iter().map(|(s, _)| s.clone()).collect(),
            increment_index: WeightedIndex::new(&jw).map_err(|_| err("increment"))?,
        })
    }
}

impl BlockSampler for TableSampler {
    fn sample_initial(&self, rng: &mut dyn rand::RngCore) -> Result<InitialSegment> {
        Ok(self.initial[self.initial_index.sample(rng)].clone())
    }

    fn sample_increment(&self, rng: &mut dyn rand::RngCore) -> Result<IncrementSegment> {
        Ok(self.increments[self.increment_index.sample(rng)].clone())
    }
}

/// Slack on `E θ^{-ξ[1]} <= 1` absorbing rounding in the drift root.
const TILT_SLACK: f64 = 1e-9;

/// Draws the block height from the tilted marginal, then the block path by
/// rejection with acceptance probability equal to the survival weight times
/// the block indicator times the proposal likelihood ratio.
pub struct RejectionSampler {
    /// Proposal law: the jump law tilted by `θ^{-ξ[1]}` with `E θ^{-ξ[1]} <= 1`,
    /// or the jump law itself when the drift is not negative.
    proposal: JumpLaw,
    /// `(θ, E θ^{-ξ[1]})` when the proposal is tilted.
    tilt: Option<(f64, f64)>,
    env_model: SurvivalModel<f64>,
    zero_model: SurvivalModel<f64>,
    lambda_index: WeightedIndex<f64>,
    nu0_index: WeightedIndex<f64>,
    pub max_steps: usize,
    pub max_attempts: usize,
}

impl RejectionSampler {
    pub fn new(
        env: &EnvironmentSpec,
        jump: &JumpLaw,
        bounds: &TableBounds,
        constants: &CramerConstants,
        max_steps: usize,
    ) -> Result<Self> {
        let mid = |iv: &Interval| iv.mid().max(0.0);
        let lw: Vec<f64> = lambda_law(bounds, constants).iter().map(mid).collect();
        let bw: Vec<f64> = nu0_law(bounds, constants).iter().map(mid).collect();
        let err = |what: &str| Error::Capability(format!("tilted {what} table has no mass"));
        // Any tilt θ with E θ^{-ξ[1]} <= 1 gives a valid acceptance ratio;
        // those θ form [drift root, 1], and θ near q accepts most often.
        let theta = crate::cramer::drift_root(jump).map(|r| constants.q.mid().clamp(r, 1.0));
        let (proposal, tilt) = match theta.filter(|t| *t < 1.0).and_then(|t| jump.tilted(t).map(|x| (t, x))) {
            Some((t, (law, m))) if m <= 1.0 + TILT_SLACK => (law, Some((t, m))),
            _ => (jump.clone(), None),
        };
        Ok(RejectionSampler {
            proposal,
            tilt,
            env_model: SurvivalModel::new(env),
            zero_model: SurvivalModel::new(&env.as_zero_environment()),
            lambda_index: WeightedIndex::new(&lw).map_err(|_| err("height"))?,
            nu0_index: WeightedIndex::new(&bw).map_err(|_| err("initial"))?,
            max_steps,
            max_attempts: 1_000_000,
        })
    }

    fn draw(
        &self,
        model: &SurvivalModel<f64>,
        level: i64,
        accept: impl Fn(&PathRecord) -> bool,
        rng: &mut dyn rand::RngCore,
    ) -> Result<PathRecord> {
        for _ in 0..self.max_attempts {
            let s = sample_path(model, &self.proposal, level, self.max_steps, rng);
            if s.stop != StopReason::HitLevel {
                continue;
            }
            // Tilted proposals carry the likelihood ratio m^τ q^{-h_0} up to a constant.
            let ratio = self.tilt.map_or(1.0, |(q, m)| {
                let tau = s.path.len() as i32 - 1;
                (m.powi(tau) * q.powi(-(s.path.points[0].level() as i32))).min(1.0)
            });
            if rng.random::<f64>() < s.weight * ratio && accept(&s.path) {
                return Ok(s.path);
            }
        }
        Err(Error::Inconclusive(format!(
            "no block of height {level} accepted in {} attempts",
            self.max_attempts
        )))
    }
}

impl BlockSampler for RejectionSampler {
    fn sample_initial(&self, rng: &mut dyn rand::RngCore) -> Result<InitialSegment> {
        let k = self.nu0_index.sample(rng) as i64;
        let accept = |p: &PathRecord| n_separating_levels(p, k).is_ok_and(|s| s.eta() == 0);
        let path = self.draw(&self.env_model, k, accept, rng)?;
        Ok(InitialSegment {
            level: k,
            time: path.len() - 1,
            prefix: path.points,
        })
    }

    fn sample_increment(&self, rng: &mut dyn rand::RngCore) -> Result<IncrementSegment> {
        let l = self.lambda_index.sample(rng) as i64;
        let accept = |p: &PathRecord| n_separating_levels(p, l).is_ok_and(|s| s.kappa() == Some(0));
        let path = self.draw(&self.zero_model, l, accept, rng)?;
        let base = path.points[0].clone();
        Ok(IncrementSegment {
            height: l,
            duration: path.len() - 1,
            segment: path.points[1..].iter().map(|p| p.sub(&base)).collect(),
        })
    }
}

fn push_block(real: &mut CoreRealization, b: &IncrementSegment) {
    let base = real.points.last().expect("nonempty").clone();
    real.points.extend(b.segment.iter().map(|d| base.add(d)));
    real.nu_bar.push(real.nu_bar.last().expect("initial level") + b.height);
    real.t_bar.push(real.points.len() - 1);
}

/// Glues an initial block and `m` increment blocks.
pub fn build_core(sampler: &dyn BlockSampler, m: usize, rng: &mut dyn rand::RngCore) -> Result<CoreRealization> {
    let init = sampler.sample_initial(rng)?;
    let mut real = CoreRealization {
        points: init.prefix.clone(),
        nu_bar: vec![init.level],
        t_bar: vec![init.time],
    };
    for _ in 0..m {
        let b = sampler.sample_increment(rng)?;
        push_block(&mut real, &b);
    }
    Ok(real)
}

/// Glues blocks until the path has at least `horizon` steps.
pub fn build_core_horizon(
    sampler: &dyn BlockSampler,
    horizon: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<CoreRealization> {
    let mut real = build_core(sampler, 0, rng)?;
    while real.points.len() <= horizon {
        let b = sampler.sample_increment(rng)?;
        push_block(&mut real, &b);
    }
    Ok(real)
}

/// Violation counts of the regeneration and skip-free properties.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RegenerationCheck {
    pub steps: usize,
    pub skip_free: usize,
    pub height_bound: usize,
    pub regeneration: usize,
    pub first_passage: usize,
}

impl RegenerationCheck {
    pub fn ok(&self) -> bool {
        self.skip_free == 0 && self.height_bound == 0 && self.regeneration == 0 && self.first_passage == 0
    }

    pub fn merge(&mut self, o: &RegenerationCheck) {
        self.steps += o.steps;
        self.skip_free += o.skip_free;
        self.height_bound += o.height_bound;
        self.regeneration += o.regeneration;
        self.first_passage += o.first_passage;
    }
}

/// Checks `ξ̄_j[1] <= 1`, `S̄_j[1] <= j`, and at each regenerative time that the
/// path afterwards never goes below `ν̄_i` while everything before stays below it.
pub fn verify_regeneration(real: &CoreRealization) -> RegenerationCheck {
    let h = real.heights();
    let mut out = RegenerationCheck {
        steps: h.len().saturating_sub(1),
        ..Default::default()
    };
    for (j, w) in h.windows(2).enumerate() {
        if w[1] - w[0] > 1 {
            out.skip_free += 1;
        }
        if w[1] > (j + 1) as i64 {
            out.height_bound += 1;
        }
    }
    if h[0] > 0 {
        out.height_bound += 1;
    }
    let mut suffix_min = h.clone();
    for t in (0..h.len().saturating_sub(1)).rev() {
        suffix_min[t] = suffix_min[t].min(suffix_min[t + 1]);
    }
    let mut prefix_max = vec![i64::MIN; h.len() + 1];
    for t in 0..h.len() {
        prefix_max[t + 1] = prefix_max[t].max(h[t]);
    }
    for (&nu, &t) in real.nu_bar.iter().zip(&real.t_bar) {
        if t >= h.len() || h[t] != nu {
            out.first_passage += 1;
            continue;
        }
        if suffix_min[t] != nu || prefix_max[t] >= nu {
            out.regeneration += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{enumerate, EnumerateOptions};
    use crate::walk::ConstraintLaw;
    use num_rational::BigRational;

    type Q = BigRational;

    fn setup(h: u32, n: i64) -> (CoefficientTables<Q>, ExactBlockLaws<Q>) {
        let env = EnvironmentSpec::zero_environment(ConstraintLaw::constant(h), 1).unwrap();
        let t: CoefficientTables<Q> = enumerate(
            &env,
            &JumpLaw::simple_symmetric(),
            &EnumerateOptions::exhaustive(n).with_joint(n),
        )
        .unwrap();
        let c = CramerConstants::solve(&t.bounds()).unwrap();
        let laws = ExactBlockLaws::from_tables(&t, &c).unwrap();
        (t, laws)
    }

    #[test]
    fn unit_budget_blocks_are_unit_steps() {
        let (_, laws) = setup(1, 6);
        assert_eq!(laws.increments.len(), 1);
        assert_eq!(laws.increments[0].0.segment, vec![Site(vec![1])]);
        assert_eq!(laws.increment_mass(), Interval::point(1.0));
        let sampler = TableSampler::new(&laws).unwrap();
        let mut rng = crate::rng::stream(1, 0);
        let real = build_core(&sampler, 3, &mut rng).unwrap();
        assert_eq!(real.heights(), vec![0, 1, 2, 3]);
        assert_eq!(real.nu_bar, vec![0, 1, 2, 3]);
        assert_eq!(real.t_bar, vec![0, 1, 2, 3]);
        let only = build_core(&sampler, 0, &mut rng).unwrap();
        assert_eq!(only.points, vec![Site(vec![0])]);
    }

    #[test]
    fn budget_two_height_two_block() {
        let (_, laws) = setup(2, 4);
        let twos: Vec<_> = laws.increments.iter().filter(|(s, _)| s.height == 2).collect();
        assert_eq!(twos.len(), 1);
        let seg: Vec<i64> = twos[0].0.segment.iter().map(Site::level).collect();
        assert_eq!(seg, vec![1, 0, 1, 2]);
        laws.check_segments().unwrap();
        assert!(laws.increment_unaccounted().contains(0.0));
        assert_eq!(laws.initial.len(), 1);
        assert_eq!(laws.initial[0].0.prefix, vec![Site(vec![0])]);
    }

    #[test]
    fn representation_examples() {
        let (t, laws) = setup(1, 6);
        let path: Vec<Site> = crate::walk::sites_1d(&[0, 1, 2]);
        let rep = verify_representation(&t, &laws, 2, 2, &|p| p == path.as_slice()).unwrap();
        assert_eq!(rep.total.lhs, 0.25);
        assert!(rep.passed && rep.total.exact_zero);
        let rep = verify_representation(&t, &laws, 0, 0, &|_| true).unwrap();
        assert_eq!(rep.total.lhs, 1.0);
        assert!(rep.passed);

        let (t2, laws2) = setup(2, 4);
        let rep = verify_representation(&t2, &laws2, 2, 1, &|_| true).unwrap();
        assert_eq!(rep.total.lhs, 1.0 / 16.0);
        assert!(rep.passed && rep.total.exact_zero);
        for r in verify_representation_all(&t2, &laws2, 4).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn corollary_identities() {
        let (t, laws) = setup(2, 4);
        for n in 0..=4 {
            let rep = verify_corollary(&t, &laws, n).unwrap();
            assert!(rep.passed, "{rep:?}");
            assert!(rep.prefix_exact);
        }
    }

    #[test]
    fn renewal_function_examples() {
        let v = renewal_function(&[Interval::point(0.0), Interval::point(1.0)], 5);
        assert!(v.iter().all(|x| *x == Interval::point(1.0)));
        let p = 0.3;
        let v = renewal_function(&[Interval::point(0.0), Interval::point(p), Interval::point(1.0 - p)], 2);
        assert_eq!(v[0], Interval::point(1.0));
        assert!((v[1].mid() - p).abs() < 1e-15);
        assert!((v[2].mid() - (p * p + 1.0 - p)).abs() < 1e-15);
    }

    #[test]
    fn regeneration_checker_flags_bad_paths() {
        let good = CoreRealization {
            points: crate::walk::sites_1d(&[0, 1, 0, 1, 2, 3]),
            nu_bar: vec![0, 2, 3],
            t_bar: vec![0, 4, 5],
        };
        assert!(verify_regeneration(&good).ok());
        let bad = CoreRealization {
            points: crate::walk::sites_1d(&[0, 1, 0, 1, 2, 3]),
            nu_bar: vec![0, 1, 3],
            t_bar: vec![0, 1, 5],
        };
        assert_eq!(verify_regeneration(&bad).regeneration, 1);
        let jump = CoreRealization {
            points: crate::walk::sites_1d(&[0, 2]),
            nu_bar: vec![0, 2],
            t_bar: vec![0, 1],
        };
        let chk = verify_regeneration(&jump);
        assert_eq!((chk.skip_free, chk.height_bound), (1, 1));
    }

    #[test]
    fn sampled_core_blocks_satisfy_invariants() {
        let (_, laws) = setup(2, 4);
        let sampler = TableSampler::new(&laws).unwrap();
        for seed in 0..20 {
            let mut rng = crate::rng::stream(seed, 0);
            let real = build_core(&sampler, 25, &mut rng).unwrap();
            assert!(verify_regeneration(&real).ok());
        }
    }
}
