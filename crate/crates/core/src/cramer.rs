//! The decay constants `q`, `μ`, `ψ₀` as certified intervals, and the
//! classification of the return assumption on the jump law.
//!
//! `q` is the root of `g(q) = Σ_k a_k q^{-k} = 1`. A root of the lower
//! table bounds `g_lo` is a lower bound for `q`; a root of the upper bounds
//! plus a tail envelope `g_hi` is an upper bound. The tail envelope extends
//! the trailing window of the computed tables geometrically.

use std::collections::HashSet;
use std::fmt;

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::oracle::TableBounds;
use crate::prob::rational_to_f64;
use crate::walk::{ConstraintLaw, JumpLaw};

/// Bisection stops once the bracket is this narrow.
pub const BISECTION_TOL: f64 = 1e-12;

/// Number of trailing ratios used for the geometric tail envelope.
pub const ENVELOPE_WINDOW: usize = 3;

/// Geometric envelope `x_k <= last · ratio^{k-N}` for `k > N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Envelope {
    pub last: f64,
    pub ratio: f64,
    pub n: usize,
}

impl Envelope {
    /// Fits the envelope to the trailing window of `seq`. `None` when a zero
    /// is followed by a positive entry inside the window.
    /// Entries before `start` are ignored.
    pub fn fit(seq: &[f64], start: usize) -> Option<Envelope> {
        let n = seq.len().checked_sub(1)?;
        let last = seq[n];
        let from = n.saturating_sub(ENVELOPE_WINDOW).max(start);
        let mut ratio: f64 = 0.0;
        let mut ratios = Vec::new();
        for k in from..n {
            let (x, y) = (seq[k], seq[k + 1]);
            if x == 0.0 {
                if y > 0.0 {
                    return None;
                }
            } else {
                ratio = ratio.max(y / x);
                ratios.push(y / x);
            }
        }
        // Rising ratios are extrapolated as r_k = r_inf - c/k.
        if let [.., r1, r2] = ratios[..] {
            if r2 > r1 {
                ratio = ratio.max(r2 + (r2 - r1) * (n as f64 - 1.0));
            }
        }
        Some(Envelope { last, ratio, n })
    }

    /// `Σ_{k>N} weight(k) x_k q^{-k}` for `weight(k) = k^power`, `power ∈ {0,1}`.
    fn tail(&self, q: f64, power: u8) -> f64 {
        if self.last == 0.0 {
            return 0.0;
        }
        let x = self.ratio / q;
        if x >= 1.0 {
            return f64::INFINITY;
        }
        let head = self.last * q.powi(-(self.n as i32));
        let n = self.n as f64;
        match power {
            0 => head * x / (1.0 - x),
            _ => head * (n * x / (1.0 - x) + x / ((1.0 - x) * (1.0 - x))),
        }
    }
}

/// Tail bound for a nonnegative sequence known to be dominated by `dominating`.
#[derive(Clone, Debug)]
struct TailBound {
    own: Option<Envelope>,
    dominating: Option<Envelope>,
}

impl TailBound {
    fn new(own: &[f64], dominating: &[f64], start: usize) -> Self {
        TailBound {
            own: Envelope::fit(own, start),
            dominating: Envelope::fit(dominating, start),
        }
    }

    fn at(&self, q: f64, power: u8) -> f64 {
        let own = self.own.map_or(f64::INFINITY, |e| e.tail(q, power));
        let dom = self.dominating.map_or(f64::INFINITY, |e| e.tail(q, power));
        own.min(dom)
    }
}

fn series(coeffs: &[f64], q: f64, power: u8) -> f64 {
    let mut s = crate::prob::CompensatedSum::default();
    for (k, &c) in coeffs.iter().enumerate().skip(1) {
        if c != 0.0 {
            let w = if power == 0 { 1.0 } else { k as f64 };
            s.add(w * c * q.powi(-(k as i32)));
        }
    }
    s.value()
}

/// Result of the root search for `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QSolution {
    pub q: Interval,
    /// `q_hi` came from the tail-bounded upper series rather than the `q <= 1` clamp.
    pub upper_certified: bool,
    /// `q` is known exactly (degenerate tables).
    pub exact: bool,
    pub degenerate: bool,
    /// Tail contribution at `q_lo` used for the upper series; `inf` if unbounded.
    pub tail_at_lo: f64,
}

fn bisect(mut lo: f64, mut hi: f64, above_one: impl Fn(f64) -> bool) -> (f64, f64) {
    // invariant: above_one(lo) && !above_one(hi)
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if above_one(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Degenerate tables: some `a_M = 1` gives `q = 1`; only `a_1 > 0` gives `q = a_1`.
fn degenerate_root(t: &TableBounds) -> Option<f64> {
    if let Some(m) = (1..t.a_lo.len()).find(|&m| t.a_lo[m] >= 1.0) {
        let _ = m;
        return Some(1.0);
    }
    let tail_zero = t.a_hi.iter().skip(2).all(|&x| x == 0.0);
    if t.exhaustive && t.a_hi.len() > 2 && tail_zero && t.a_lo[1] == t.a_hi[1] {
        return Some(t.a_lo[1]);
    }
    None
}

/// Solves `Σ a_k q^{-k} = 1` without failing on an uncertified upper end.
pub fn solve_q_partial(t: &TableBounds) -> Result<QSolution> {
    if t.a_lo.len() < 2 || t.a_lo[1] <= 0.0 {
        return Err(Error::Inconclusive("a_1 must be positive to solve for q".into()));
    }
    if let Some(q) = degenerate_root(t) {
        return Ok(QSolution {
            q: Interval::point(q),
            upper_certified: true,
            exact: true,
            degenerate: true,
            tail_at_lo: 0.0,
        });
    }
    let g_lo = |q: f64| series(&t.a_lo, q, 0);
    let q_lo = if g_lo(1.0) >= 1.0 {
        1.0
    } else {
        bisect(t.a_lo[1].min(1.0), 1.0, |q| g_lo(q) >= 1.0).0
    };
    let tail = TailBound::new(&t.a_hi, &t.v_hi, 1);
    let g_hi = |q: f64| series(&t.a_hi, q, 0) + tail.at(q, 0);
    let (q_hi, upper_certified) = if g_hi(1.0) > 1.0 {
        (1.0, false)
    } else if g_hi(q_lo) <= 1.0 {
        (q_lo, true)
    } else {
        (bisect(q_lo, 1.0, |q| g_hi(q) > 1.0).1, true)
    };
    Ok(QSolution {
        q: Interval::new(q_lo, q_hi),
        upper_certified,
        exact: false,
        degenerate: false,
        tail_at_lo: tail.at(q_lo, 0),
    })
}

/// Certified interval for `q`.
pub fn solve_q(t: &TableBounds) -> Result<QSolution> {
    let sol = solve_q_partial(t)?;
    if !sol.upper_certified {
        return Err(Error::Inconclusive(format!(
            "tail of the series could not be bounded; q ∈ [{:.6}, 1] only. {}",
            sol.q.lo,
            required_n_hint(t, sol.q.lo)
        )));
    }
    Ok(sol)
}

fn required_n_hint(t: &TableBounds, q: f64) -> String {
    let unresolved = t
        .a_hi
        .iter()
        .zip(&t.a_lo)
        .map(|(h, l)| h - l)
        .fold(0.0, f64::max);
    if unresolved > 0.0 {
        return format!("unresolved mass up to {unresolved:.3e} per entry; increase the step cap");
    }
    match Envelope::fit(&t.a_hi, 1) {
        Some(e) if e.ratio < q && e.ratio > 0.0 => {
            let extra = ((BISECTION_TOL / e.last.max(f64::MIN_POSITIVE)).ln() / (e.ratio / q).ln()).ceil();
            format!("about n_max = {} would make the tail negligible", e.n as f64 + extra.max(1.0))
        }
        _ => "the tables decay too slowly at this q; increase n_max".into(),
    }
}

/// `μ = Σ k a_k q^{-k}` over the `q` interval.
pub fn compute_mu(q: &QSolution, t: &TableBounds) -> Result<Interval> {
    if q.exact && q.degenerate {
        let v = series(&t.a_lo, q.q.lo, 1);
        if let Some(m) = (1..t.a_lo.len()).find(|&m| t.a_lo[m] >= 1.0) {
            return Ok(Interval::point(m as f64));
        }
        return Ok(Interval::point(v.max(1.0)));
    }
    let tail = TailBound::new(&t.a_hi, &t.v_hi, 1);
    let hi = series(&t.a_hi, q.q.lo, 1) + tail.at(q.q.lo, 1);
    if !hi.is_finite() {
        return Err(Error::Inconclusive(format!(
            "tail of Σ k a_k q^-k unbounded at q = {:.6}",
            q.q.lo
        )));
    }
    let lo = series(&t.a_lo, q.q.hi, 1).max(1.0);
    Ok(Interval::new(lo, hi.max(lo)))
}

/// `ψ₀ = Σ_m b_m q^{-m}` over the `q` interval.
pub fn compute_psi0(q: &QSolution, t: &TableBounds) -> Result<Interval> {
    let b0 = t.b_lo.first().copied().unwrap_or(0.0);
    if b0 <= 0.0 {
        return Err(Error::Environment("b_0 = P*(B_0) must be positive".into()));
    }
    let tail = TailBound::new(&t.b_hi, &t.u_hi, 0);
    let with_zero = |c: &[f64], q: f64| c[0] + series(c, q, 0);
    if q.exact && tail.at(q.q.lo, 0) == 0.0 && t.b_lo == t.b_hi {
        return Ok(Interval::point(with_zero(&t.b_lo, q.q.lo)));
    }
    let hi = with_zero(&t.b_hi, q.q.lo) + tail.at(q.q.lo, 0);
    if !hi.is_finite() {
        return Err(Error::Inconclusive(format!(
            "tail of Σ b_m q^-m unbounded at q = {:.6}",
            q.q.lo
        )));
    }
    let lo = with_zero(&t.b_lo, q.q.hi).max(b0);
    Ok(Interval::new(lo, hi.max(lo)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CramerConstants {
    pub q: Interval,
    pub mu: Interval,
    pub psi0: Interval,
    pub degenerate: bool,
    pub q_exact: bool,
    pub n_max: i64,
}

impl CramerConstants {
    pub fn solve(t: &TableBounds) -> Result<Self> {
        let q = solve_q(t)?;
        let mu = compute_mu(&q, t)?;
        let psi0 = compute_psi0(&q, t)?;
        Ok(CramerConstants {
            q: q.q,
            mu,
            psi0,
            degenerate: q.degenerate,
            q_exact: q.exact,
            n_max: t.n_max,
        })
    }

    /// Certified constants when possible; otherwise the constants at the
    /// point `q = q_lo` with tail-free series. The flag reports certification.
    pub fn best_effort(t: &TableBounds) -> Result<(Self, bool)> {
        match Self::solve(t) {
            Ok(c) => return Ok((c, true)),
            Err(Error::Inconclusive(_)) => {}
            Err(e) => return Err(e),
        }
        let sol = solve_q_partial(t)?;
        let q = sol.q.lo;
        let mu = series(&t.a_lo, q, 1).max(1.0);
        let b0 = t.b_lo.first().copied().unwrap_or(0.0);
        if b0 <= 0.0 {
            return Err(Error::Environment("b_0 = P*(B_0) must be positive".into()));
        }
        let psi0 = b0 + series(&t.b_lo, q, 0);
        Ok((
            CramerConstants {
                q: Interval::point(q),
                mu: Interval::point(mu),
                psi0: Interval::point(psi0),
                degenerate: false,
                q_exact: false,
                n_max: t.n_max,
            },
            false,
        ))
    }

    /// The limit `ψ₀/μ` of `u_n q^{-n}`.
    pub fn ratio_limit(&self) -> Interval {
        self.psi0.mul(self.mu.recip())
    }
}

/// Checks `g_hi(q_hi) <= 1 <= g_lo(q_lo) + tail(q_lo)`.
pub fn root_certificate(t: &TableBounds, q: &QSolution) -> bool {
    if q.degenerate {
        return true;
    }
    let tail = TailBound::new(&t.a_hi, &t.v_hi, 1);
    let upper = series(&t.a_hi, q.q.hi, 0) + tail.at(q.q.hi, 0);
    let lower = series(&t.a_hi, q.q.lo, 0) + tail.at(q.q.lo, 0);
    (upper <= 1.0 + 1e-9 || !q.upper_certified) && lower >= 1.0 - 1e-9 && series(&t.a_lo, q.q.lo, 0) >= 1.0 - 1e-9
}

/// Root in `(0,1)` of `Σ_x q^{-x} P(ξ[1] = x) = 1` for a walk with negative drift.
pub fn drift_root(jump: &JumpLaw) -> Option<f64> {
    let marginal: Vec<(i32, f64)> = jump
        .atoms()
        .iter()
        .map(|a| (a.vector.level() as i32, rational_to_f64(&a.prob)))
        .collect();
    let mean: f64 = marginal.iter().map(|(x, p)| *x as f64 * p).sum();
    if mean >= 0.0 {
        return None;
    }
    let h = |q: f64| marginal.iter().map(|(x, p)| p * q.powi(-x)).sum::<f64>() - 1.0;
    // h is convex with h(1) = 0 and h'(1) = -mean > 0; locate a point with h < 0
    let (mut a, mut b) = (f64::EPSILON, 1.0);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if h(m1) < h(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let inner = 0.5 * (a + b);
    let (lo, hi) = bisect(f64::EPSILON, inner, |q| h(q) > 0.0);
    Some(0.5 * (lo + hi))
}

/// The five cases of the return assumption, plus `Unknown`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum A4Case {
    /// Nonzero height drift.
    CaseA,
    /// Zero height drift, return to the origin possible but not certain.
    CaseB,
    /// Zero height drift, certain return, finite mean budget.
    CaseC,
    /// Zero height drift, return to the origin impossible.
    CaseD,
    /// Zero height drift, certain return, infinite mean budget.
    CaseE,
    Unknown,
}

impl A4Case {
    pub fn as_str(self) -> &'static str {
        match self {
            A4Case::CaseA => "case_a",
            A4Case::CaseB => "case_b",
            A4Case::CaseC => "case_c",
            A4Case::CaseD => "case_d",
            A4Case::CaseE => "case_e",
            A4Case::Unknown => "unknown",
        }
    }

    pub fn theorems_apply(self) -> bool {
        !matches!(self, A4Case::CaseD | A4Case::CaseE)
    }
}

impl fmt::Display for A4Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// User-asserted behaviour of the unconstrained walk's returns to the origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recurrence {
    Recurrent,
    Transient,
    NoReturn,
}

/// Multiset sums of at most this many atoms are searched for a return.
const RETURN_SEARCH_DEPTH: usize = 12;

fn can_return(jump: &JumpLaw) -> Option<bool> {
    let atoms: Vec<&[i64]> = jump.atoms().iter().map(|a| a.vector.0.as_slice()).collect();
    let d = jump.dim();
    // a coordinate whose atoms all share one strict sign never sums to 0
    for c in 0..d {
        if atoms.iter().all(|v| v[c] > 0) || atoms.iter().all(|v| v[c] < 0) {
            return Some(false);
        }
    }
    let mut frontier: HashSet<Vec<i64>> = atoms.iter().map(|v| v.to_vec()).collect();
    let mut seen = frontier.clone();
    for _ in 0..RETURN_SEARCH_DEPTH {
        if frontier.iter().any(|v| v.iter().all(|&x| x == 0)) {
            return Some(true);
        }
        let mut next = HashSet::new();
        for v in &frontier {
            for a in &atoms {
                let w: Vec<i64> = v.iter().zip(a.iter()).map(|(x, y)| x + y).collect();
                if seen.insert(w.clone()) {
                    next.insert(w);
                }
            }
        }
        frontier = next;
    }
    if frontier.iter().any(|v| v.iter().all(|&x| x == 0)) {
        return Some(true);
    }
    None
}

fn support_rank(jump: &JumpLaw) -> usize {
    let mut rows: Vec<Vec<BigRational>> = jump
        .atoms()
        .iter()
        .map(|a| a.vector.0.iter().map(|&x| BigRational::from_integer(x.into())).collect())
        .collect();
    let d = jump.dim();
    let mut rank = 0;
    for col in 0..d {
        let Some(p) = (rank..rows.len()).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot = rows[rank][col].clone();
        for r in 0..rows.len() {
            if r != rank && !rows[r][col].is_zero() {
                let f = rows[r][col].clone() / pivot.clone();
                let src = rows[rank][..d].to_vec();
                for (x, y) in rows[r][..d].iter_mut().zip(src) {
                    *x = x.clone() - f.clone() * y;
                }
            }
        }
        rank += 1;
    }
    rank
}

fn recurrent_case(virgin: &ConstraintLaw) -> A4Case {
    if virgin.has_finite_mean() {
        A4Case::CaseC
    } else {
        A4Case::CaseE
    }
}

/// Classifies the return assumption from the jump law and the virgin budget law.
pub fn classify_a4(jump: &JumpLaw, virgin: &ConstraintLaw) -> A4Case {
    classify_a4_with(jump, virgin, None)
}

pub fn classify_a4_with(jump: &JumpLaw, virgin: &ConstraintLaw, asserted: Option<Recurrence>) -> A4Case {
    let mean = jump.mean_vector();
    if !mean[0].is_zero() {
        return A4Case::CaseA;
    }
    if let Some(r) = asserted {
        return match r {
            Recurrence::NoReturn => A4Case::CaseD,
            Recurrence::Transient => A4Case::CaseB,
            Recurrence::Recurrent => recurrent_case(virgin),
        };
    }
    if jump.dim() == 1 {
        return recurrent_case(virgin);
    }
    match can_return(jump) {
        Some(false) => A4Case::CaseD,
        None => A4Case::Unknown,
        Some(true) => {
            let drift = mean.iter().any(|m| !m.is_zero());
            if drift || support_rank(jump) >= 3 {
                A4Case::CaseB
            } else {
                // zero-mean walks spanning at most two dimensions are recurrent
                recurrent_case(virgin)
            }
        }
    }
}

/// Refuses theorem checks in the excluded cases.
pub fn ensure_theorem_applicable(case: A4Case) -> Result<()> {
    match case {
        A4Case::CaseD => Err(Error::AssumptionExcluded(
            "case (d): zero height drift and the walk never returns to its start, so every site is visited at most once; the regenerative results do not apply".into(),
        )),
        A4Case::CaseE => Err(Error::AssumptionExcluded(
            "case (e): zero height drift, certain return and infinite mean budget; the regenerative results do not apply".into(),
        )),
        _ => Ok(()),
    }
}

/// Whether the drift of the height is negative.
pub fn negative_drift(jump: &JumpLaw) -> bool {
    jump.mean_vector()[0].is_negative()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn jump(dim: usize, atoms: &[(&[i64], (i64, i64))]) -> JumpLaw {
        JumpLaw::new(dim, atoms.iter().map(|(v, (n, d))| (v.to_vec(), r(*n, *d))).collect()).unwrap()
    }

    #[test]
    fn unit_table_gives_exact_half() {
        let mut a = vec![0.0, 0.5];
        a.resize(11, 0.0);
        let t = TableBounds::exact(a, vec![1.0], 0.5);
        let c = CramerConstants::solve(&t).unwrap();
        assert_eq!(c.q, Interval::point(0.5));
        assert_eq!(c.mu, Interval::point(1.0));
        assert_eq!(c.psi0, Interval::point(1.0));
        assert!(c.degenerate);
    }

    #[test]
    fn unit_jump_mass_gives_one() {
        let t = TableBounds::exact(vec![0.0, 1.0, 0.0], vec![1.0], 1.0);
        let c = CramerConstants::solve(&t).unwrap();
        assert_eq!(c.q, Interval::point(1.0));
        assert_eq!(c.mu, Interval::point(1.0));
    }

    #[test]
    fn two_term_table_quadratic_root() {
        let t = TableBounds::exact(vec![0.0, 0.5, 0.0625], vec![1.0], 0.5);
        let sol = solve_q(&t).unwrap();
        let root = (1.0 + 2f64.sqrt()) / 4.0;
        assert!(sol.q.lo <= root && root <= sol.q.hi, "{:?}", sol.q);
        // the lower endpoint is the root of the truncated series
        assert!((sol.q.lo - root).abs() < 1e-11);
        assert!(root_certificate(&t, &sol));
        let mu = compute_mu(&sol, &t).unwrap();
        assert!(mu.contains(4.0 - 2.0 * 2f64.sqrt()));

        // trailing zeros close the envelope
        let t = TableBounds::exact(vec![0.0, 0.5, 0.0625, 0.0, 0.0, 0.0], vec![1.0], 0.5);
        let sol = solve_q(&t).unwrap();
        assert!(sol.q.width() < 1e-11 && sol.q.contains(root));
        let mu = compute_mu(&sol, &t).unwrap();
        assert!((mu.mid() - (4.0 - 2.0 * 2f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn single_term_psi0() {
        let t = TableBounds::exact(vec![0.0, 0.5, 0.0625], vec![0.75], 0.5);
        let sol = solve_q(&t).unwrap();
        let psi = compute_psi0(&sol, &t).unwrap();
        assert!((psi.lo - 0.75).abs() < 1e-15 && (psi.hi - 0.75).abs() < 1e-15);
    }

    #[test]
    fn slowly_decaying_tables_are_inconclusive() {
        let a: Vec<f64> = (0..8).map(|k| if k == 0 { 0.0 } else { 0.3 * 0.9f64.powi(k) }).collect();
        let mut t = TableBounds::exact(a.clone(), vec![1.0], 0.3);
        t.v_hi = a.iter().map(|x| x * 2.0).collect();
        let err = solve_q(&t).unwrap_err();
        assert!(matches!(err, Error::Inconclusive(_)));
        let partial = solve_q_partial(&t).unwrap();
        assert!(!partial.upper_certified && partial.q.hi == 1.0);
    }

    #[test]
    fn envelope_on_geometric_sequence() {
        let seq: Vec<f64> = (0..10).map(|k| 0.5f64.powi(k)).collect();
        let e = Envelope::fit(&seq, 0).unwrap();
        assert!((e.ratio - 0.5).abs() < 1e-15);
        // Σ_{k>9} 2^-k · 1^-k = 2^-9
        assert!((e.tail(1.0, 0) - 0.5f64.powi(9)).abs() < 1e-15);
        assert!(Envelope::fit(&[1.0, 0.0, 0.0, 1.0], 0).is_none());
    }

    #[test]
    fn drift_root_matches_closed_form() {
        for (p, d) in [(1, 3), (1, 4), (2, 5)] {
            let j = JumpLaw::nearest_neighbour(r(p, d)).unwrap();
            let pf = p as f64 / d as f64;
            let q = drift_root(&j).unwrap();
            assert!((q - pf / (1.0 - pf)).abs() < 1e-10);
        }
        assert!(drift_root(&JumpLaw::simple_symmetric()).is_none());
    }

    #[test]
    fn classifier_cases() {
        let sym = JumpLaw::simple_symmetric();
        assert_eq!(classify_a4(&sym, &ConstraintLaw::constant(2)), A4Case::CaseC);
        let heavy = ConstraintLaw::new(vec![(1, r(1, 2))], r(1, 2)).unwrap();
        assert_eq!(classify_a4(&sym, &heavy), A4Case::CaseE);
        let drift = JumpLaw::nearest_neighbour(r(1, 3)).unwrap();
        assert_eq!(classify_a4(&drift, &heavy), A4Case::CaseA);
        let diag = jump(2, &[(&[1, 1], (1, 2)), (&[-1, 1], (1, 2))]);
        assert_eq!(classify_a4(&diag, &ConstraintLaw::constant(1)), A4Case::CaseD);
        let tilted = jump(
            2,
            &[(&[1, 0], (1, 4)), (&[-1, 0], (1, 4)), (&[0, 1], (1, 3)), (&[0, -1], (1, 6))],
        );
        assert_eq!(classify_a4(&tilted, &ConstraintLaw::constant(2)), A4Case::CaseB);
        let planar = jump(
            2,
            &[(&[1, 0], (1, 4)), (&[-1, 0], (1, 4)), (&[0, 1], (1, 4)), (&[0, -1], (1, 4))],
        );
        assert_eq!(classify_a4(&planar, &ConstraintLaw::constant(2)), A4Case::CaseC);
        let cubic = jump(
            3,
            &[
                (&[1, 0, 0], (1, 6)),
                (&[-1, 0, 0], (1, 6)),
                (&[0, 1, 0], (1, 6)),
                (&[0, -1, 0], (1, 6)),
                (&[0, 0, 1], (1, 6)),
                (&[0, 0, -1], (1, 6)),
            ],
        );
        assert_eq!(classify_a4(&cubic, &heavy), A4Case::CaseB);
        assert_eq!(
            classify_a4_with(&cubic, &heavy, Some(Recurrence::Recurrent)),
            A4Case::CaseE
        );
        assert!(ensure_theorem_applicable(A4Case::CaseD).is_err());
        assert!(ensure_theorem_applicable(A4Case::CaseE).is_err());
        assert!(ensure_theorem_applicable(A4Case::CaseB).is_ok());
        let _ = BigRational::one();
    }
}
