//! Monte Carlo estimators with per-replicate random streams and an ordered
//! reduction, so results depend only on `(seed, reps)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::core_process::{CoreRealization, ExactBlockLaws};
use crate::cramer::CramerConstants;
use crate::error::{Error, Result};
use crate::oracle::{CoefficientTables, TableBounds};
use crate::prob::{CompensatedSum, Prob};
use crate::rng::{stream, with_threads};
use crate::walk::{sample_path, sample_path_naive, EnvironmentSpec, JumpLaw, Site, StopReason, SurvivalModel};

/// Stream indices at or above this offset belong to the naive estimator.
const NAIVE_STREAM_OFFSET: u64 = 1 << 62;

/// Default step cap when no path-length bound is available.
pub const DEFAULT_MAX_STEPS: usize = 10_000;

/// Effective sample sizes below this are flagged.
pub const MIN_ESS: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Mean survival weight of free paths.
    Weighted,
    /// Indicator of survival in an explicitly drawn environment.
    Naive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub reps: u64,
    pub seed: u64,
    pub kind: EstimatorKind,
}

impl Estimate {
    pub fn from_samples(samples: &[f64], seed: u64, kind: EstimatorKind) -> Self {
        let reps = samples.len();
        let mut sum = CompensatedSum::default();
        for &x in samples {
            sum.add(x);
        }
        let mean = sum.value() / reps as f64;
        let mut dev = CompensatedSum::default();
        for &x in samples {
            dev.add((x - mean) * (x - mean));
        }
        let var = if reps > 1 { dev.value() / (reps - 1) as f64 } else { 0.0 };
        Estimate {
            value: mean,
            stderr: (var / reps as f64).sqrt(),
            reps: reps as u64,
            seed,
            kind,
        }
    }

    /// Sample variance of one replicate.
    pub fn replicate_variance(&self) -> f64 {
        self.stderr * self.stderr * self.reps as f64
    }

    /// `|self - x| <= k · stderr`, with a floor for zero-variance estimates.
    pub fn within(&self, x: f64, k: f64) -> bool {
        (self.value - x).abs() <= k * self.stderr + 1e-12
    }

    /// Agreement of two estimates within `k` combined standard errors.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        let se = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        (self.value - other.value).abs() <= k * se + 1e-12
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct McOptions {
    /// Step cap per replicate; `None` derives it from the environment.
    pub max_steps: Option<usize>,
    pub threads: Option<usize>,
}


impl McOptions {
    pub fn with_threads(threads: usize) -> Self {
        McOptions {
            max_steps: None,
            threads: Some(threads),
        }
    }

    fn steps(&self, env: &EnvironmentSpec, n: i64) -> usize {
        self.max_steps.unwrap_or_else(|| {
            crate::oracle::path_length_bound(env, n).map_or(DEFAULT_MAX_STEPS, |b| b + 1)
        })
    }
}

fn replicate_values(reps: u64, threads: Option<usize>, f: impl Fn(u64) -> f64 + Sync + Send) -> Vec<f64> {
    with_threads(threads, || (0..reps).into_par_iter().map(f).collect())
}

/// Estimates `P*(B_n)`.
pub fn estimate_bn(
    env: &EnvironmentSpec,
    jump: &JumpLaw,
    n: i64,
    reps: u64,
    seed: u64,
    kind: EstimatorKind,
    opts: &McOptions,
) -> Result<Estimate> {
    if reps == 0 {
        return Err(Error::config("reps", "must be at least 1"));
    }
    let max_steps = opts.steps(env, n);
    let samples = match kind {
        EstimatorKind::Weighted => {
            let model = SurvivalModel::<f64>::new(env);
            replicate_values(reps, opts.threads, |i| {
                let mut rng = stream(seed, i);
                let s = sample_path(&model, jump, n, max_steps, &mut rng);
                if s.stop == StopReason::HitLevel {
                    s.weight
                } else {
                    0.0
                }
            })
        }
        EstimatorKind::Naive => replicate_values(reps, opts.threads, |i| {
            let mut rng = stream(seed, NAIVE_STREAM_OFFSET + i);
            let run = sample_path_naive(env, jump, n, max_steps, &mut rng);
            if run.reached {
                1.0
            } else {
                0.0
            }
        }),
    };
    Ok(Estimate::from_samples(&samples, seed, kind))
}

/// A law on prefixes `S_0..S_k`.
pub type PrefixLaw = BTreeMap<Vec<Site>, f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct PrefixEstimate {
    pub law: PrefixLaw,
    /// `(Σw)² / Σw²`.
    pub ess: f64,
    pub low_confidence: bool,
}

/// Self-normalized weighted law of `S_0..S_k` given `B_n`.
pub fn conditional_prefix_law(
    env: &EnvironmentSpec,
    jump: &JumpLaw,
    k: usize,
    n: i64,
    reps: u64,
    seed: u64,
    opts: &McOptions,
) -> Result<PrefixEstimate> {
    if (k as i64) > n {
        return Err(Error::config("k", "prefix length must not exceed n"));
    }
    let model = SurvivalModel::<f64>::new(env);
    let max_steps = opts.steps(env, n);
    let draws: Vec<Option<(Vec<Site>, f64)>> = with_threads(opts.threads, || {
        (0..reps)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed, i);
                let s = sample_path(&model, jump, n, max_steps, &mut rng);
                (s.stop == StopReason::HitLevel && s.weight > 0.0)
                    .then(|| (s.path.points[..=k].to_vec(), s.weight))
            })
            .collect()
    });
    let mut law: BTreeMap<Vec<Site>, CompensatedSum> = BTreeMap::new();
    let (mut total, mut squares) = (CompensatedSum::default(), CompensatedSum::default());
    for (prefix, w) in draws.into_iter().flatten() {
        law.entry(prefix).or_default().add(w);
        total.add(w);
        squares.add(w * w);
    }
    let z = total.value();
    let ess = if squares.value() > 0.0 { z * z / squares.value() } else { 0.0 };
    Ok(PrefixEstimate {
        law: law.into_iter().map(|(p, s)| (p, s.value() / z)).collect(),
        ess,
        low_confidence: ess < MIN_ESS,
    })
}

/// Exact law of `S_0..S_k` given `B_n` from the joint support.
pub fn exact_conditional_prefix_law<W: Prob>(tables: &CoefficientTables<W>, k: usize, n: i64) -> Result<PrefixLaw> {
    if tables.joint_n_max.is_none_or(|m| n > m) {
        return Err(Error::Capability(format!("joint support not stored for n = {n}")));
    }
    let mut law: BTreeMap<Vec<Site>, W> = BTreeMap::new();
    let mut z = W::zero();
    for e in tables.env_entries(n) {
        let w = law.entry(e.path[..=k].to_vec()).or_insert_with(W::zero);
        *w = w.clone() + e.weight.clone();
        z = z + e.weight.clone();
    }
    Ok(law.into_iter().map(|(p, w)| (p, (w / z.clone()).to_f64())).collect())
}

/// Law of `S̄_0..S̄_k` under the exact block tables at the midpoint constants.
pub fn core_prefix_law<W: Prob>(laws: &ExactBlockLaws<W>, k: usize) -> PrefixLaw {
    let c = &laws.constants;
    let incs: Vec<(Vec<Site>, f64)> = laws
        .increments
        .iter()
        .map(|(s, m)| (s.segment.clone(), m.eval_mid(c)))
        .collect();
    let mut law = PrefixLaw::new();
    fn grow(path: Vec<Site>, mass: f64, k: usize, incs: &[(Vec<Site>, f64)], law: &mut PrefixLaw) {
        if path.len() > k {
            *law.entry(path[..=k].to_vec()).or_insert(0.0) += mass;
            return;
        }
        let base = path.last().expect("nonempty").clone();
        for (seg, m) in incs {
            let mut next = path.clone();
            next.extend(seg.iter().map(|d| base.add(d)));
            grow(next, mass * m, k, incs, law);
        }
    }
    for (init, m) in &laws.initial {
        grow(init.prefix.clone(), m.eval_mid(c), k, &incs, &mut law);
    }
    law
}

/// `½ Σ |p(x) − q(x)|`.
pub fn tv_distance(p: &PrefixLaw, q: &PrefixLaw) -> f64 {
    let mut keys: Vec<&Vec<Site>> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|x| (p.get(x).copied().unwrap_or(0.0) - q.get(x).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Realizations shorter than this are rejected by [`lln_slope`].
pub const MIN_LLN_HORIZON: usize = 1000;

/// Least-squares slope of `S̄_t[1]` against `t` over `t ∈ [horizon/2, horizon]`.
pub fn lln_slope(real: &CoreRealization, horizon: usize) -> Result<f64> {
    if horizon < MIN_LLN_HORIZON {
        return Err(Error::config("horizon", format!("must be at least {MIN_LLN_HORIZON}")));
    }
    if real.points.len() <= horizon {
        return Err(Error::config("horizon", "realization is shorter than the horizon"));
    }
    let ts: Vec<f64> = (horizon / 2..=horizon).map(|t| t as f64).collect();
    let ys: Vec<f64> = (horizon / 2..=horizon).map(|t| real.points[t].level() as f64).collect();
    let n = ts.len() as f64;
    let (mt, my) = (ts.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in ts.iter().zip(&ys) {
        sxy += (t - mt) * (y - my);
        sxx += (t - mt) * (t - mt);
    }
    Ok(sxy / sxx)
}

/// One row of a decay scan; serialized as a CSV record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: i64,
    pub estimate: f64,
    pub stderr: f64,
    pub exact: Option<f64>,
    /// `u_n / q_mid^n`.
    pub ratio: f64,
    pub target_lo: f64,
    pub target_hi: f64,
}

/// `u_n q^{-n}` from the tables, against the limit `ψ₀/μ`.
pub fn geometric_decay_scan_exact(t: &TableBounds, c: &CramerConstants) -> Vec<ScanRow> {
    let target = c.ratio_limit();
    (0..=t.n_max)
        .map(|n| {
            let u = 0.5 * (t.u_lo[n as usize] + t.u_hi[n as usize]);
            ScanRow {
                n,
                estimate: u,
                stderr: 0.0,
                exact: (t.u_lo[n as usize] == t.u_hi[n as usize]).then_some(u),
                ratio: u / c.q.mid().powi(n as i32),
                target_lo: target.lo,
                target_hi: target.hi,
            }
        })
        .collect()
}

/// `u_n q^{-n}` from Monte Carlo estimates, with exact values where available.
#[allow(clippy::too_many_arguments)]
pub fn geometric_decay_scan_mc(
    env: &EnvironmentSpec,
    jump: &JumpLaw,
    c: &CramerConstants,
    ns: &[i64],
    reps: u64,
    seed: u64,
    exact: Option<&TableBounds>,
    opts: &McOptions,
) -> Result<Vec<ScanRow>> {
    let target = c.ratio_limit();
    ns.iter()
        .map(|&n| {
            let est = estimate_bn(env, jump, n, reps, seed, EstimatorKind::Weighted, opts)?;
            let ex = exact
                .filter(|t| n <= t.n_max && t.u_lo[n as usize] == t.u_hi[n as usize])
                .map(|t| t.u_lo[n as usize]);
            Ok(ScanRow {
                n,
                estimate: est.value,
                stderr: est.stderr,
                exact: ex,
                ratio: est.value / c.q.mid().powi(n as i32),
                target_lo: target.lo,
                target_hi: target.hi,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Independence test between block position (`1..=positions`) and block
/// type `(λ̄, τ̄)` over the realizations. Types with small expected counts
/// are pooled.
pub fn block_stationarity(reals: &[CoreRealization], positions: usize) -> Result<ChiSquareTest> {
    let mut counts: BTreeMap<(i64, usize), Vec<f64>> = BTreeMap::new();
    for r in reals {
        if r.blocks() < positions {
            return Err(Error::config("positions", "realization has too few blocks"));
        }
        for i in 1..=positions {
            counts.entry(r.block(i)).or_insert_with(|| vec![0.0; positions])[i - 1] += 1.0;
        }
    }
    let total = (reals.len() * positions) as f64;
    let per_position = reals.len() as f64;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut pooled = vec![0.0; positions];
    for row in counts.into_values() {
        let expected = row.iter().sum::<f64>() * per_position / total;
        if expected >= 5.0 {
            rows.push(row);
        } else {
            for (p, x) in pooled.iter_mut().zip(row) {
                *p += x;
            }
        }
    }
    if pooled.iter().sum::<f64>() > 0.0 {
        rows.push(pooled);
    }
    if rows.len() < 2 || positions < 2 {
        return Ok(ChiSquareTest {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
        });
    }
    let mut stat = 0.0;
    for row in &rows {
        let row_total: f64 = row.iter().sum();
        for &obs in row {
            let exp = row_total * per_position / total;
            stat += (obs - exp).powi(2) / exp;
        }
    }
    let dof = (rows.len() - 1) * (positions - 1);
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Inconclusive(e.to_string()))?;
    Ok(ChiSquareTest {
        statistic: stat,
        dof,
        p_value: 1.0 - dist.cdf(stat),
    })
}

/// Samples `count` core realizations of `m` blocks in parallel, one stream each.
pub fn sample_cores(
    sampler: &dyn crate::core_process::BlockSampler,
    m: usize,
    count: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<CoreRealization>> {
    with_threads(threads, || {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed, i);
                crate::core_process::build_core(sampler, m, &mut rng)
            })
            .collect()
    })
}

/// Samples `count` core realizations of at least `horizon` steps each.
pub fn sample_cores_horizon(
    sampler: &dyn crate::core_process::BlockSampler,
    horizon: usize,
    count: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<CoreRealization>> {
    with_threads(threads, || {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed, i);
                crate::core_process::build_core_horizon(sampler, horizon, &mut rng)
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::ConstraintLaw;
    use num_rational::BigRational;

    fn env(h: u32) -> EnvironmentSpec {
        EnvironmentSpec::zero_environment(ConstraintLaw::constant(h), 1).unwrap()
    }

    #[test]
    fn unit_budget_estimate() {
        let est = estimate_bn(
            &env(1),
            &JumpLaw::simple_symmetric(),
            5,
            20_000,
            3,
            EstimatorKind::Weighted,
            &McOptions::default(),
        )
        .unwrap();
        assert!(est.within(1.0 / 32.0, 3.0), "{est:?}");
    }

    #[test]
    fn point_mass_jump_is_exact() {
        let up = JumpLaw::new(1, vec![(vec![1], BigRational::from_integer(1.into()))]).unwrap();
        let est = estimate_bn(&env(2), &up, 7, 100, 1, EstimatorKind::Weighted, &McOptions::default()).unwrap();
        assert_eq!((est.value, est.stderr), (1.0, 0.0));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let e = env(2);
        let j = JumpLaw::simple_symmetric();
        let base = estimate_bn(&e, &j, 3, 5000, 11, EstimatorKind::Weighted, &McOptions::with_threads(1)).unwrap();
        for t in [2, 4, 8] {
            let est = estimate_bn(&e, &j, 3, 5000, 11, EstimatorKind::Weighted, &McOptions::with_threads(t)).unwrap();
            assert_eq!(est.value.to_bits(), base.value.to_bits());
            assert_eq!(est.stderr.to_bits(), base.stderr.to_bits());
        }
    }

    #[test]
    fn unit_budget_prefix_law_is_point_mass() {
        let est = conditional_prefix_law(&env(1), &JumpLaw::simple_symmetric(), 1, 3, 4000, 5, &McOptions::default())
            .unwrap();
        assert_eq!(est.law.len(), 1);
        assert_eq!(est.law[&crate::walk::sites_1d(&[0, 1])], 1.0);
        let est = conditional_prefix_law(&env(1), &JumpLaw::simple_symmetric(), 0, 3, 4000, 5, &McOptions::default())
            .unwrap();
        assert_eq!(est.law[&crate::walk::sites_1d(&[0])], 1.0);
    }

    #[test]
    fn low_ess_is_flagged() {
        let est = conditional_prefix_law(&env(1), &JumpLaw::simple_symmetric(), 1, 6, 200, 5, &McOptions::default())
            .unwrap();
        assert!(est.low_confidence);
    }

    #[test]
    fn tv_distance_basics() {
        let a: PrefixLaw = [(crate::walk::sites_1d(&[0]), 1.0)].into();
        let b: PrefixLaw = [(crate::walk::sites_1d(&[1]), 1.0)].into();
        assert_eq!(tv_distance(&a, &b), 1.0);
        assert_eq!(tv_distance(&a, &a), 0.0);
    }

    #[test]
    fn lln_slope_of_a_line() {
        let real = CoreRealization {
            points: (0..=2000).map(|t| Site(vec![t])).collect(),
            nu_bar: vec![0],
            t_bar: vec![0],
        };
        assert!((lln_slope(&real, 2000).unwrap() - 1.0).abs() < 1e-12);
        assert!(lln_slope(&real, 100).is_err());
    }
}
