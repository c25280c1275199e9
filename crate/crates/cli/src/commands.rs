use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use num_rational::BigRational;
use serde::Serialize;
use serde_json::json;

use sepwalk_core::config::{load_config, preset, ExperimentConfig};
use sepwalk_core::core_process::{
    lambda_law, renewal_function, verify_corollary, verify_regeneration, verify_representation_all, BlockSampler,
    ExactBlockLaws, RejectionSampler, RegenerationCheck, TableSampler,
};
use sepwalk_core::cramer::{ensure_theorem_applicable, CramerConstants};
use sepwalk_core::io::{
    joint_lines, parse_joint_jsonl, parse_tables_json, render_tables_json, write_joint_jsonl,
    write_realizations_jsonl, write_scan_csv, TableFile,
};
use sepwalk_core::monte_carlo::{
    core_prefix_law, estimate_bn, exact_conditional_prefix_law, geometric_decay_scan_exact, lln_slope,
    sample_cores, sample_cores_horizon, tv_distance, EstimatorKind, McOptions, ScanRow,
};
use sepwalk_core::oracle::{
    enumerate as enumerate_tables, path_length_bound, verify_block_factorization_all, verify_factorization,
    verify_renewal, verify_renewal_bounds, CoefficientTables, EnumerateOptions, TableBounds, FLOAT_IDENTITY_TOL,
};
use sepwalk_core::prob::Prob;
use sepwalk_core::walk::Site;
use sepwalk_core::Error;

use crate::{Arith, Common, Estimator, Suite};

/// Step cap for truncated enumeration when none is given.
pub const DEFAULT_STEP_CAP: usize = 400;
/// Default cap when budgets depend on local times; the path tree grows
/// exponentially in the cap.
pub const DEFAULT_DFS_STEP_CAP: usize = 12;
const DEFAULT_N_MAX: i64 = 6;
const DEFAULT_VERIFY_N_MAX: i64 = 4;
const DEFAULT_REPS: u64 = 10_000;
const DEFAULT_CORES: u64 = 100;
/// Table range behind the rejection sampler's tilted height laws.
const DEFAULT_SAMPLER_N_MAX: i64 = 20;
/// Levels of the renewal function reported by `limits`.
const LIMITS_V_N: i64 = 20;
/// Agreement required between `V_20` and `1/μ`.
pub const LIMITS_V_TOL: f64 = 1e-6;
/// Gap values below this are rounding noise for the monotonicity check.
pub const LIMITS_MONOTONE_FLOOR: f64 = 1e-9;
/// Levels of the prefix-law distance trend.
const LIMITS_TV_LEVELS: std::ops::RangeInclusive<i64> = 3..=8;

/// Model and run parameters after merging config, preset and flags.
struct Run {
    cfg: ExperimentConfig,
    common: Common,
}

impl Run {
    fn resolve(common: &Common) -> Result<Self> {
        let cfg = match (&common.config, &common.preset) {
            (Some(_), Some(_)) => {
                return Err(Error::config("preset", "give either --config or --preset, not both").into())
            }
            (Some(path), None) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(name)) => preset(name)?,
            (None, None) => return Err(Error::config("config", "one of --config or --preset is required").into()),
        };
        let r = &cfg.run;
        let mut c = common.clone();
        c.n = c.n.or(r.n);
        c.n_max = c.n_max.or(r.n_max);
        c.reps = c.reps.or(r.reps);
        c.seed = c.seed.or(r.seed);
        c.tol = c.tol.or(r.tol);
        c.step_cap = c.step_cap.or(r.step_cap);
        c.joint_n_max = c.joint_n_max.or(r.joint_n_max);
        c.threads = c.threads.or(r.threads);
        c.out = c.out.clone().or_else(|| r.out.as_ref().map(PathBuf::from));
        Ok(Run { cfg, common: c })
    }

    fn seed(&self) -> Result<u64> {
        self.common
            .seed
            .ok_or_else(|| Error::config("seed", "--seed is required for commands that sample").into())
    }

    fn n_max(&self, default: i64) -> i64 {
        self.common.n_max.or(self.common.n).unwrap_or(default)
    }

    fn tol(&self) -> f64 {
        self.common.tol.unwrap_or(FLOAT_IDENTITY_TOL)
    }

    fn refuse_excluded(&self) -> Result<()> {
        ensure_theorem_applicable(self.cfg.a4_case())?;
        Ok(())
    }

    fn options(&self, n_max: i64, joint: Option<i64>) -> EnumerateOptions {
        let bounded = path_length_bound(&self.cfg.env, n_max).is_ok();
        let mut opts = match (self.common.step_cap, bounded) {
            (Some(cap), _) => EnumerateOptions::truncated(n_max, cap),
            (None, true) => EnumerateOptions::exhaustive(n_max),
            (None, false) if self.cfg.env.is_local_time_free() => EnumerateOptions::truncated(n_max, DEFAULT_STEP_CAP),
            (None, false) => EnumerateOptions::truncated(n_max, DEFAULT_DFS_STEP_CAP),
        };
        if let Some(j) = joint {
            opts = opts.with_joint(j.min(n_max));
        }
        if let Some(t) = self.common.threads {
            opts = opts.with_threads(t);
        }
        opts
    }

    fn exact_arith(&self, arith: Arith, n_max: i64) -> bool {
        match arith {
            Arith::Exact => true,
            Arith::Float => false,
            Arith::Auto => self.common.step_cap.is_none() && path_length_bound(&self.cfg.env, n_max).is_ok(),
        }
    }

    fn tables<W: Prob>(&self, n_max: i64, joint: Option<i64>) -> Result<CoefficientTables<W>> {
        Ok(enumerate_tables(&self.cfg.env, &self.cfg.jump, &self.options(n_max, joint))?)
    }

    fn mc_options(&self) -> McOptions {
        McOptions {
            max_steps: self.common.step_cap,
            threads: self.common.threads,
        }
    }
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut w = open_out(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `tables.json` -> `tables.joint.jsonl`.
pub fn joint_sidecar(path: &Path) -> PathBuf {
    path.with_extension("joint.jsonl")
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_table_file(path: &Path) -> Result<TableFile> {
    let file = parse_tables_json(&read(path)?)?;
    file.validate()?;
    Ok(file)
}

fn load_tables<W: Prob>(path: &Path) -> Result<CoefficientTables<W>> {
    let file = load_table_file(path)?;
    let side = joint_sidecar(path);
    let joint = if side.exists() {
        parse_joint_jsonl(&read(&side)?)?
    } else {
        Vec::new()
    };
    Ok(file.to_tables(&joint)?)
}

pub fn enumerate(common: &Common, arith: Arith) -> Result<()> {
    let run = Run::resolve(common)?;
    let n_max = run.n_max(DEFAULT_N_MAX);
    if run.exact_arith(arith, n_max) {
        enumerate_with::<BigRational>(&run, n_max)
    } else {
        enumerate_with::<f64>(&run, n_max)
    }
}

fn enumerate_with<W: Prob>(run: &Run, n_max: i64) -> Result<()> {
    let tables = run.tables::<W>(n_max, run.common.joint_n_max)?;
    let file = TableFile::from_tables(&tables, Some(run.cfg.a4_case()));
    let mut w = open_out(run.common.out.as_deref())?;
    writeln!(w, "{}", render_tables_json(&file)?)?;
    w.flush()?;
    if let (Some(out), Some(_)) = (&run.common.out, tables.joint_n_max) {
        let mut side = BufWriter::new(File::create(joint_sidecar(out))?);
        write_joint_jsonl(&joint_lines(&tables)?, &mut side)?;
        side.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ConstantsOut {
    q: [f64; 2],
    mu: [f64; 2],
    psi0: [f64; 2],
    a4_case: Option<String>,
    n_max: i64,
    exhaustive: bool,
}

pub fn solve_constants(common: &Common) -> Result<()> {
    let (bounds, case, out) = match &common.tables {
        Some(path) => {
            let file = load_table_file(path)?;
            (file.bounds(), file.a4_case, common.out.clone())
        }
        None => {
            let run = Run::resolve(common)?;
            let n_max = run.n_max(DEFAULT_N_MAX);
            let t = if run.exact_arith(Arith::Auto, n_max) {
                run.tables::<BigRational>(n_max, None)?.bounds()
            } else {
                run.tables::<f64>(n_max, None)?.bounds()
            };
            (t, Some(run.cfg.a4_case()), run.common.out.clone())
        }
    };
    let c = CramerConstants::solve(&bounds)?;
    let pair = |i: sepwalk_core::Interval| [i.lo, i.hi];
    emit_json(
        out.as_deref(),
        &ConstantsOut {
            q: pair(c.q),
            mu: pair(c.mu),
            psi0: pair(c.psi0),
            a4_case: case.map(|c| c.as_str().to_string()),
            n_max: bounds.n_max,
            exhaustive: bounds.exhaustive,
        },
    )
}

/// A block sampler plus the constants it was built from.
struct Sampler {
    inner: Box<dyn BlockSampler>,
    constants: CramerConstants,
    certified: bool,
    kind: &'static str,
}

fn sampler(run: &Run) -> Result<Sampler> {
    let n_max = run.n_max(DEFAULT_VERIFY_N_MAX);
    if run.exact_arith(Arith::Auto, n_max) {
        let joint = run.common.joint_n_max.unwrap_or(n_max);
        let tables = run.tables::<BigRational>(n_max, Some(joint))?;
        let constants = CramerConstants::solve(&tables.bounds())?;
        let laws = ExactBlockLaws::from_tables(&tables, &constants)?;
        return Ok(Sampler {
            inner: Box::new(TableSampler::new(&laws)?),
            constants,
            certified: true,
            kind: "table",
        });
    }
    let n_max = run.common.n_max.or(run.common.n).unwrap_or(DEFAULT_SAMPLER_N_MAX);
    let bounds = run.tables::<f64>(n_max, None)?.bounds();
    let (constants, certified) = CramerConstants::best_effort(&bounds)?;
    // Uncertified constants solve the lower tables, which then form proper laws.
    let bounds = if certified {
        bounds
    } else {
        TableBounds {
            a_hi: bounds.a_lo.clone(),
            b_hi: bounds.b_lo.clone(),
            u_hi: bounds.u_lo.clone(),
            v_hi: bounds.v_lo.clone(),
            ..bounds
        }
    };
    let steps = run.common.step_cap.unwrap_or(sepwalk_core::monte_carlo::DEFAULT_MAX_STEPS);
    let inner = RejectionSampler::new(&run.cfg.env, &run.cfg.jump, &bounds, &constants, steps)?;
    Ok(Sampler {
        inner: Box::new(inner),
        constants,
        certified,
        kind: "rejection",
    })
}

pub fn core(common: &Common, blocks: usize, horizon: Option<usize>) -> Result<()> {
    let run = Run::resolve(common)?;
    run.refuse_excluded()?;
    let seed = run.seed()?;
    let s = sampler(&run)?;
    let count = run.common.reps.unwrap_or(DEFAULT_CORES);
    let reals = match horizon {
        Some(h) => sample_cores_horizon(s.inner.as_ref(), h, count, seed, run.common.threads)?,
        None => sample_cores(s.inner.as_ref(), blocks, count, seed, run.common.threads)?,
    };
    let mut w = open_out(run.common.out.as_deref())?;
    write_realizations_jsonl(&reals, &mut w)?;
    w.flush()?;
    Ok(())
}

fn scan_bounds(run: &Run, n_max: i64) -> Result<TableBounds> {
    if run.exact_arith(Arith::Auto, n_max) {
        Ok(run.tables::<BigRational>(n_max, None)?.bounds())
    } else {
        Ok(run.tables::<f64>(n_max, None)?.bounds())
    }
}

pub fn mc(common: &Common, estimator: Estimator) -> Result<()> {
    let run = Run::resolve(common)?;
    let seed = run.seed()?;
    let n_max = run.n_max(DEFAULT_N_MAX);
    let reps = run.common.reps.unwrap_or(DEFAULT_REPS);
    let kind = match estimator {
        Estimator::Weighted => EstimatorKind::Weighted,
        Estimator::Naive => EstimatorKind::Naive,
    };
    let (exact, constants) = if run.cfg.env.dim() == 1 {
        let b = scan_bounds(&run, n_max)?;
        let c = CramerConstants::best_effort(&b).ok().map(|(c, _)| c);
        (Some(b), c)
    } else {
        (None, None)
    };
    let opts = run.mc_options();
    let mut rows = Vec::new();
    for n in 0..=n_max {
        let est = estimate_bn(&run.cfg.env, &run.cfg.jump, n, reps, seed, kind, &opts)?;
        let ex = exact
            .as_ref()
            .filter(|t| t.u_lo[n as usize] == t.u_hi[n as usize])
            .map(|t| t.u_lo[n as usize]);
        let (ratio, lo, hi) = match &constants {
            Some(c) => {
                let target = c.ratio_limit();
                (est.value / c.q.mid().powi(n as i32), target.lo, target.hi)
            }
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        rows.push(ScanRow {
            n,
            estimate: est.value,
            stderr: est.stderr,
            exact: ex,
            ratio,
            target_lo: lo,
            target_hi: hi,
        });
    }
    let mut w = open_out(run.common.out.as_deref())?;
    write_scan_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct LimitsOut {
    q: [f64; 2],
    mu: [f64; 2],
    inv_mu_mid: f64,
    renewal_function: Vec<[f64; 2]>,
    renewal_gap: Vec<f64>,
    renewal_gap_monotone: bool,
    renewal_tol: f64,
    renewal_converged: bool,
    horizon: usize,
    lln_slope: f64,
    block_speed: [f64; 2],
    prefix_k: usize,
    tv: Vec<(i64, f64)>,
    tv_decreasing: bool,
    exact_scan: Vec<ScanRow>,
}

pub fn limits(common: &Common, horizon: usize, k: usize) -> Result<()> {
    let run = Run::resolve(common)?;
    run.refuse_excluded()?;
    let seed = run.seed()?;
    let tv_max = *LIMITS_TV_LEVELS.end();
    let n_max = run.n_max(tv_max).max(tv_max);
    if path_length_bound(&run.cfg.env, n_max).is_err() {
        return Err(Error::Capability("limits needs a model with exhaustive tables".into()).into());
    }
    let tables = run.tables::<BigRational>(n_max, Some(n_max))?;
    let bounds = tables.bounds();
    let c = CramerConstants::solve(&bounds)?;
    let laws = ExactBlockLaws::from_tables(&tables, &c)?;

    let v = renewal_function(&lambda_law(&bounds, &c), LIMITS_V_N);
    let inv_mu = 1.0 / c.mu.mid();
    let gap: Vec<f64> = v.iter().map(|x| (x.mid() - inv_mu).abs()).collect();
    let monotone = gap.windows(2).all(|w| w[1] <= w[0] || w[1] < LIMITS_MONOTONE_FLOOR);
    let v_last = gap[LIMITS_V_N as usize];

    let sampler = TableSampler::new(&laws)?;
    let real = sample_cores_horizon(&sampler, horizon, 1, seed, run.common.threads)?
        .pop()
        .expect("one realization");
    let slope = lln_slope(&real, horizon)?;
    let speed = laws.mean_height().mul(laws.mean_duration().recip());

    let core_law = core_prefix_law(&laws, k);
    let mut tv = Vec::new();
    for n in LIMITS_TV_LEVELS {
        if (k as i64) > n {
            continue;
        }
        tv.push((n, tv_distance(&exact_conditional_prefix_law(&tables, k, n)?, &core_law)));
    }
    let tv_decreasing = tv.windows(2).all(|w| w[1].1 < w[0].1);
    emit_json(
        run.common.out.as_deref(),
        &LimitsOut {
            q: [c.q.lo, c.q.hi],
            mu: [c.mu.lo, c.mu.hi],
            inv_mu_mid: inv_mu,
            renewal_function: v.iter().map(|x| [x.lo, x.hi]).collect(),
            renewal_gap: gap.clone(),
            renewal_gap_monotone: monotone,
            renewal_tol: LIMITS_V_TOL,
            renewal_converged: v_last < LIMITS_V_TOL,
            horizon,
            lln_slope: slope,
            block_speed: [speed.lo, speed.hi],
            prefix_k: k,
            tv,
            tv_decreasing,
            exact_scan: geometric_decay_scan_exact(&bounds, &c),
        },
    )
}

#[derive(Serialize)]
struct VerifyOut<T: Serialize> {
    suite: &'static str,
    preset: Option<String>,
    a4_case: &'static str,
    arithmetic: &'static str,
    n_max: i64,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    reports: T,
}

pub fn verify(common: &Common, suite: Suite, arith: Arith) -> Result<()> {
    let run = Run::resolve(common)?;
    run.refuse_excluded()?;
    let n_max = match suite {
        Suite::Renewal => run.n_max(DEFAULT_N_MAX),
        _ => run.n_max(DEFAULT_VERIFY_N_MAX),
    };
    let passed = if let Some(path) = &run.common.tables {
        if load_table_file(path)?.exact.is_some() {
            verify_tables::<BigRational>(&run, suite, load_tables(path)?)?
        } else {
            verify_tables::<f64>(&run, suite, load_tables(path)?)?
        }
    } else if suite == Suite::Regeneration {
        verify_regeneration_suite(&run)?
    } else {
        if suite != Suite::Renewal {
            if let Err(e) = path_length_bound(&run.cfg.env, n_max) {
                let msg = format!("suite {} needs exhaustive tables: {e}", suite_name(suite));
                return Err(Error::Capability(msg).into());
            }
        }
        dispatch_tables(&run, suite, arith, n_max)?
    };
    if passed {
        Ok(())
    } else {
        Err(Error::IdentityFailure(format!("suite {} failed; see the report", suite_name(suite))).into())
    }
}

fn dispatch_tables(run: &Run, suite: Suite, arith: Arith, n_max: i64) -> Result<bool> {
    let joint = joint_for(suite, n_max, run);
    if run.exact_arith(arith, n_max) {
        verify_tables::<BigRational>(run, suite, run.tables(n_max, joint)?)
    } else {
        verify_tables::<f64>(run, suite, run.tables(n_max, joint)?)
    }
}

fn joint_for(suite: Suite, n_max: i64, run: &Run) -> Option<i64> {
    match suite {
        Suite::Renewal | Suite::Regeneration => None,
        _ => Some(run.common.joint_n_max.unwrap_or(n_max)),
    }
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::Renewal => "renewal",
        Suite::Factorization => "factorization",
        Suite::Representation => "representation",
        Suite::Corollary => "corollary",
        Suite::Blocks => "blocks",
        Suite::Regeneration => "regeneration",
    }
}

fn report<T: Serialize>(run: &Run, suite: Suite, exact: bool, n_max: i64, passed: bool, note: Option<String>, reports: T) -> Result<bool> {
    emit_json(
        run.common.out.as_deref(),
        &VerifyOut {
            suite: suite_name(suite),
            preset: run.cfg.preset.clone(),
            a4_case: run.cfg.a4_case().as_str(),
            arithmetic: if exact { "exact" } else { "float" },
            n_max,
            passed,
            note,
            reports,
        },
    )?;
    Ok(passed)
}

fn verify_tables<W: Prob>(run: &Run, suite: Suite, tables: CoefficientTables<W>) -> Result<bool> {
    let n_max = tables.n_max;
    let tol = run.tol();
    let joint_max = || tables.joint_n_max.unwrap_or(0).min(n_max);
    match suite {
        Suite::Renewal => {
            if !tables.exhaustive {
                let reps = verify_renewal_bounds(&tables.bounds(), tol);
                let ok = reps.iter().all(|r| r.passed);
                let note = Some("truncated tables: identity checked between lower and upper envelopes".into());
                return report(run, suite, false, n_max, ok, note, reps);
            }
            let mut reps = verify_renewal(&tables)?;
            if !W::EXACT {
                for r in &mut reps {
                    r.passed = r.max_residual <= tol;
                }
            }
            let ok = reps.iter().all(|r| r.passed);
            report(run, suite, W::EXACT, n_max, ok, None, reps)
        }
        Suite::Factorization => {
            let mut out = Vec::new();
            let all = |_: &[Site]| true;
            for n in 1..=joint_max() {
                for k in 0..n {
                    out.push(verify_factorization(&tables, k, n, &all, &all)?);
                    let prefixes: std::collections::BTreeSet<Vec<Site>> =
                        tables.env_entries(k).map(|e| e.path.clone()).collect();
                    for p in prefixes {
                        let one = move |q: &[Site]| q == p.as_slice();
                        out.push(verify_factorization(&tables, k, n, &one, &all)?);
                    }
                }
            }
            let ok = out.iter().all(|r| r.passed);
            report(run, suite, W::EXACT, n_max, ok, None, out)
        }
        Suite::Representation | Suite::Corollary | Suite::Blocks => {
            let c = CramerConstants::solve(&tables.bounds())?;
            let laws = ExactBlockLaws::from_tables(&tables, &c)?;
            let top = joint_max();
            match suite {
                Suite::Representation => {
                    let out = verify_representation_all(&tables, &laws, top)?;
                    let ok = out.iter().all(|r| r.passed);
                    report(run, suite, W::EXACT, n_max, ok, None, out)
                }
                Suite::Corollary => {
                    let out = (0..=top).map(|n| verify_corollary(&tables, &laws, n)).collect::<Result<Vec<_>, _>>()?;
                    let ok = out.iter().all(|r| r.passed);
                    report(run, suite, W::EXACT, n_max, ok, None, out)
                }
                _ => {
                    laws.check_segments()?;
                    let mut out = Vec::new();
                    for n in 0..=top {
                        out.extend(verify_block_factorization_all(&tables, &laws, n)?);
                    }
                    let ok = out.iter().all(|r| r.passed);
                    report(run, suite, W::EXACT, n_max, ok, None, out)
                }
            }
        }
        Suite::Regeneration => Err(Error::config("tables", "the regeneration suite samples from the model").into()),
    }
}

fn verify_regeneration_suite(run: &Run) -> Result<bool> {
    let seed = run.seed()?;
    let s = sampler(run)?;
    let count = run.common.reps.unwrap_or(DEFAULT_CORES);
    let reals = sample_cores(s.inner.as_ref(), 20, count, seed, run.common.threads)?;
    let mut total = RegenerationCheck::default();
    for r in &reals {
        total.merge(&verify_regeneration(r));
    }
    let note = (!s.certified).then(|| {
        format!(
            "q could not be certified; blocks drawn at the uncertified value q = {}",
            s.constants.q.mid()
        )
    });
    let ok = total.ok();
    let summary = json!({
        "sampler": s.kind,
        "realizations": reals.len(),
        "blocks_per_realization": 20,
        "violations": total,
    });
    report(run, Suite::Regeneration, false, 0, ok, note, summary)
}
