//! The lattice walk, its random visit budgets, and path functionals that do
//! not involve level structure: hitting times, killing, survival weights.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{rational_to_f64, Prob};

/// Mass tolerance for laws given in floating point.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A lattice site in `Z^d`. Coordinate 0 is the height.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn origin(dim: usize) -> Self {
        Site(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// First coordinate.
    #[inline]
    pub fn level(&self) -> i64 {
        self.0[0]
    }

    pub fn add(&self, other: &Site) -> Site {
        Site(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Site) -> Site {
        Site(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<Vec<i64>> for Site {
    fn from(v: Vec<i64>) -> Self {
        Site(v)
    }
}

/// One-dimensional sites from a list of heights.
pub fn sites_1d(levels: &[i64]) -> Vec<Site> {
    levels.iter().map(|&l| Site(vec![l])).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Jump {
    pub vector: Site,
    pub prob: BigRational,
}

/// Finite-support law of the increment, skip-free upward in the height.
#[derive(Clone, Debug)]
pub struct JumpLaw {
    dim: usize,
    atoms: Vec<Jump>,
    probs: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl JumpLaw {
    pub fn new(dim: usize, atoms: Vec<(Vec<i64>, BigRational)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::JumpLaw("dimension must be positive".into()));
        }
        if atoms.is_empty() {
            return Err(Error::JumpLaw("no atoms".into()));
        }
        let mut merged: BTreeMap<Vec<i64>, BigRational> = BTreeMap::new();
        for (v, p) in atoms {
            if v.len() != dim {
                return Err(Error::JumpLaw(format!(
                    "atom {v:?} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            if !p.is_positive() {
                return Err(Error::JumpLaw(format!("atom {v:?} has nonpositive probability")));
            }
            if v[0] > 1 {
                return Err(Error::JumpLaw(format!(
                    "atom {v:?} raises the height by more than one"
                )));
            }
            *merged.entry(v).or_insert_with(BigRational::zero) += p;
        }
        let total: BigRational = merged.values().cloned().sum();
        if (rational_to_f64(&total) - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::JumpLaw(format!(
                "probabilities sum to {}, not 1",
                rational_to_f64(&total)
            )));
        }
        if !merged.keys().any(|v| v[0] == 1) {
            return Err(Error::JumpLaw("no atom raises the height by one".into()));
        }
        let atoms: Vec<Jump> = merged
            .into_iter()
            .map(|(v, p)| Jump {
                vector: Site(v),
                prob: p,
            })
            .collect();
        let probs: Vec<f64> = atoms.iter().map(|a| rational_to_f64(&a.prob)).collect();
        let index = WeightedIndex::new(&probs).map_err(|e| Error::JumpLaw(e.to_string()))?;
        Ok(JumpLaw {
            dim,
            atoms,
            probs,
            index,
        })
    }

    /// The law with probabilities `p_i q^{-x_i[1]} / m`, and `m = E q^{-ξ[1]}`.
    pub fn tilted(&self, q: f64) -> Option<(JumpLaw, f64)> {
        if !(q > 0.0 && q.is_finite()) {
            return None;
        }
        let w: Vec<f64> = self
            .atoms
            .iter()
            .zip(&self.probs)
            .map(|(a, p)| p * q.powi(-(a.vector.level() as i32)))
            .collect();
        let m: f64 = w.iter().sum();
        let raw: Vec<BigRational> = w.iter().map(|x| BigRational::from_float(x / m)).collect::<Option<_>>()?;
        let total: BigRational = raw.iter().cloned().sum();
        let atoms = self
            .atoms
            .iter()
            .zip(raw)
            .map(|(a, p)| (a.vector.0.clone(), p / total.clone()))
            .collect();
        Some((JumpLaw::new(self.dim, atoms).ok()?, m))
    }

    /// Symmetric nearest-neighbour walk on `Z`.
    pub fn simple_symmetric() -> Self {
        let half = BigRational::new(1.into(), 2.into());
        JumpLaw::new(1, vec![(vec![1], half.clone()), (vec![-1], half)]).expect("valid law")
    }

    /// `+1` with probability `up`, `-1` otherwise.
    pub fn nearest_neighbour(up: BigRational) -> Result<Self> {
        let down = BigRational::one() - up.clone();
        if down.is_zero() {
            return JumpLaw::new(1, vec![(vec![1], up)]);
        }
        JumpLaw::new(1, vec![(vec![1], up), (vec![-1], down)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Jump] {
        &self.atoms
    }

    pub fn probs_f64(&self) -> &[f64] {
        &self.probs
    }

    /// `P(ξ[1] = 1)`.
    pub fn up_prob(&self) -> BigRational {
        self.atoms
            .iter()
            .filter(|a| a.vector.level() == 1)
            .map(|a| a.prob.clone())
            .sum()
    }

    pub fn mean_vector(&self) -> Vec<BigRational> {
        (0..self.dim)
            .map(|j| {
                self.atoms
                    .iter()
                    .map(|a| a.prob.clone() * BigRational::from_integer(a.vector.0[j].into()))
                    .sum()
            })
            .collect()
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }
}

/// A visit budget: a count or the distinguished unlimited tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Budget {
    Finite(u32),
    Infinite,
}

impl Budget {
    pub fn allows(self, visits: u32) -> bool {
        match self {
            Budget::Finite(b) => visits <= b,
            Budget::Infinite => true,
        }
    }
}

/// Law of a single budget `H(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintLaw {
    pmf: Vec<(u32, BigRational)>,
    inf_mass: BigRational,
}

impl ConstraintLaw {
    pub fn new(pmf: Vec<(u32, BigRational)>, inf_mass: BigRational) -> Result<Self> {
        let mut merged: BTreeMap<u32, BigRational> = BTreeMap::new();
        for (v, p) in pmf {
            if p.is_negative() {
                return Err(Error::ConstraintLaw(format!("negative mass at {v}")));
            }
            *merged.entry(v).or_insert_with(BigRational::zero) += p;
        }
        if inf_mass.is_negative() {
            return Err(Error::ConstraintLaw("negative mass at infinity".into()));
        }
        let pmf: Vec<(u32, BigRational)> = merged.into_iter().filter(|(_, p)| !p.is_zero()).collect();
        let total: BigRational = pmf.iter().map(|(_, p)| p.clone()).sum::<BigRational>() + inf_mass.clone();
        if (rational_to_f64(&total) - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::ConstraintLaw(format!(
                "total mass {} differs from 1",
                rational_to_f64(&total)
            )));
        }
        Ok(ConstraintLaw { pmf, inf_mass })
    }

    /// Point mass at `value`.
    pub fn constant(value: u32) -> Self {
        ConstraintLaw::new(vec![(value, BigRational::one())], BigRational::zero()).expect("valid law")
    }

    pub fn unlimited() -> Self {
        ConstraintLaw::new(vec![], BigRational::one()).expect("valid law")
    }

    pub fn pmf(&self) -> &[(u32, BigRational)] {
        &self.pmf
    }

    pub fn inf_mass(&self) -> &BigRational {
        &self.inf_mass
    }

    /// Largest finite budget with positive mass, if the law is bounded.
    pub fn max_finite(&self) -> Option<u32> {
        if self.inf_mass.is_zero() {
            self.pmf.last().map(|(v, _)| *v)
        } else {
            None
        }
    }

    pub fn mass_at_zero(&self) -> BigRational {
        self.pmf
            .iter()
            .find(|(v, _)| *v == 0)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(BigRational::zero)
    }

    /// `E H` is finite exactly when there is no mass at infinity.
    pub fn has_finite_mean(&self) -> bool {
        self.inf_mass.is_zero()
    }

    /// `P(H >= visits)`.
    pub fn tail(&self, visits: u32) -> BigRational {
        self.pmf
            .iter()
            .filter(|(v, _)| *v >= visits)
            .map(|(_, p)| p.clone())
            .sum::<BigRational>()
            + self.inf_mass.clone()
    }

    /// True when every draw is `∞`, so local times never matter.
    pub fn is_unlimited(&self) -> bool {
        self.inf_mass.is_one()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Budget {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (v, p) in &self.pmf {
            acc += rational_to_f64(p);
            if u < acc {
                return Budget::Finite(*v);
            }
        }
        if self.inf_mass.is_zero() {
            Budget::Finite(self.pmf.last().map(|(v, _)| *v).unwrap_or(0))
        } else {
            Budget::Infinite
        }
    }
}

/// Budgets outside the virgin half-space.
#[derive(Clone, Debug, PartialEq)]
pub enum LowerMode {
    /// Visits below height 0 are forbidden.
    Zero,
    /// Visits below height 0 are unrestricted.
    Infinite,
    /// Listed sites carry the given budgets; unlisted lower sites have budget 0.
    Explicit(BTreeMap<Site, Budget>),
}

/// The environment family: virgin budget law, lower region, initial position law.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentSpec {
    pub virgin: ConstraintLaw,
    pub lower: LowerMode,
    pub initial: Vec<(Site, BigRational)>,
}

impl EnvironmentSpec {
    pub fn new(
        virgin: ConstraintLaw,
        lower: LowerMode,
        initial: Vec<(Site, BigRational)>,
    ) -> Result<Self> {
        if !virgin.mass_at_zero().is_zero() {
            return Err(Error::Environment(
                "virgin budget law must put no mass on 0".into(),
            ));
        }
        if initial.is_empty() {
            return Err(Error::Environment("initial law is empty".into()));
        }
        let dim = initial[0].0.dim();
        let mut total = BigRational::zero();
        for (s, p) in &initial {
            if s.dim() != dim || dim == 0 {
                return Err(Error::Environment("initial sites disagree on dimension".into()));
            }
            if s.level() > 0 {
                return Err(Error::Environment(format!(
                    "initial site {s:?} lies above height 0"
                )));
            }
            if !p.is_positive() {
                return Err(Error::Environment(format!(
                    "initial site {s:?} has nonpositive probability"
                )));
            }
            total += p.clone();
        }
        if (rational_to_f64(&total) - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Environment("initial law does not sum to 1".into()));
        }
        if let LowerMode::Explicit(map) = &lower {
            for s in map.keys() {
                if s.dim() != dim {
                    return Err(Error::Environment(format!("lower site {s:?} has wrong dimension")));
                }
                if s.level() >= 0 {
                    return Err(Error::Environment(format!(
                        "explicit lower site {s:?} is not below height 0"
                    )));
                }
            }
        }
        Ok(EnvironmentSpec {
            virgin,
            lower,
            initial,
        })
    }

    /// The environment with forbidden lower region started at the origin.
    pub fn zero_environment(virgin: ConstraintLaw, dim: usize) -> Result<Self> {
        EnvironmentSpec::new(virgin, LowerMode::Zero, vec![(Site::origin(dim), BigRational::one())])
    }

    /// The environment with unrestricted lower region started at the origin.
    pub fn plus_environment(virgin: ConstraintLaw, dim: usize) -> Result<Self> {
        EnvironmentSpec::new(
            virgin,
            LowerMode::Infinite,
            vec![(Site::origin(dim), BigRational::one())],
        )
    }

    pub fn dim(&self) -> usize {
        self.initial[0].0.dim()
    }

    /// The companion zero environment sharing this virgin law.
    pub fn as_zero_environment(&self) -> EnvironmentSpec {
        EnvironmentSpec::zero_environment(self.virgin.clone(), self.dim()).expect("virgin law already validated")
    }

    pub fn is_zero_environment(&self) -> bool {
        self.lower == LowerMode::Zero
            && self.initial.len() == 1
            && self.initial[0].0 == Site::origin(self.dim())
    }

    /// Lowest height the walk can occupy alive; `None` when unbounded below.
    pub fn floor(&self) -> Option<i64> {
        match &self.lower {
            LowerMode::Zero => Some(0),
            LowerMode::Infinite => None,
            LowerMode::Explicit(map) => Some(
                map.iter()
                    .filter(|(_, b)| !matches!(b, Budget::Finite(0)))
                    .map(|(s, _)| s.level())
                    .fold(0, i64::min),
            ),
        }
    }

    /// True when every budget is `0` or `∞` almost surely.
    pub fn is_local_time_free(&self) -> bool {
        self.virgin.is_unlimited()
            && match &self.lower {
                LowerMode::Zero | LowerMode::Infinite => true,
                LowerMode::Explicit(map) => map
                    .values()
                    .all(|b| matches!(b, Budget::Infinite | Budget::Finite(0))),
            }
    }

    /// `P(H(site) >= visits)`.
    pub fn tail(&self, site: &Site, visits: u32) -> BigRational {
        if visits == 0 {
            return BigRational::one();
        }
        if site.level() >= 0 {
            return self.virgin.tail(visits);
        }
        let allowed = match &self.lower {
            LowerMode::Zero => false,
            LowerMode::Infinite => true,
            LowerMode::Explicit(map) => map.get(site).copied().unwrap_or(Budget::Finite(0)).allows(visits),
        };
        if allowed {
            BigRational::one()
        } else {
            BigRational::zero()
        }
    }

    /// Realized budget of a lower site (deterministic in every mode).
    pub fn lower_budget(&self, site: &Site) -> Budget {
        match &self.lower {
            LowerMode::Zero => Budget::Finite(0),
            LowerMode::Infinite => Budget::Infinite,
            LowerMode::Explicit(map) => map.get(site).copied().unwrap_or(Budget::Finite(0)),
        }
    }

    fn initial_index(&self) -> WeightedIndex<f64> {
        let w: Vec<f64> = self.initial.iter().map(|(_, p)| rational_to_f64(p)).collect();
        WeightedIndex::new(&w).expect("validated initial law")
    }
}

/// Multiplicative change of the survival weight on one visit.
#[derive(Clone, Debug)]
pub enum Factor<W> {
    One,
    Scale(W),
    Dead,
}

/// Per-visit survival factors of an environment, precomputed in `W`.
#[derive(Clone, Debug)]
pub struct SurvivalModel<W> {
    env: EnvironmentSpec,
    /// `virgin_step[l]` is `P(H >= l) / P(H >= l-1)` for `l >= 1`.
    virgin_step: Vec<Factor<W>>,
    virgin_beyond: Factor<W>,
}

impl<W: Prob> SurvivalModel<W> {
    pub fn new(env: &EnvironmentSpec) -> Self {
        let top = env.virgin.pmf().last().map(|(v, _)| *v).unwrap_or(0) + 1;
        let mut virgin_step = vec![Factor::One];
        for l in 1..=top {
            let prev = env.virgin.tail(l - 1);
            let cur = env.virgin.tail(l);
            let f = if cur.is_zero() {
                Factor::Dead
            } else if cur == prev {
                Factor::One
            } else {
                Factor::Scale(W::from_rational(&(cur / prev)))
            };
            virgin_step.push(f);
        }
        let virgin_beyond = if env.virgin.inf_mass().is_zero() {
            Factor::Dead
        } else {
            Factor::One
        };
        SurvivalModel {
            env: env.clone(),
            virgin_step,
            virgin_beyond,
        }
    }

    pub fn env(&self) -> &EnvironmentSpec {
        &self.env
    }

    /// Factor applied when `site` receives its `visits`-th visit.
    #[inline]
    pub fn step(&self, site: &Site, visits: u32) -> Factor<W> {
        if site.level() >= 0 {
            return self
                .virgin_step
                .get(visits as usize)
                .cloned()
                .unwrap_or_else(|| self.virgin_beyond.clone());
        }
        if self.env.lower_budget(site).allows(visits) {
            Factor::One
        } else {
            Factor::Dead
        }
    }

    /// `P(H(site) >= visits)` in `W`.
    pub fn tail(&self, site: &Site, visits: u32) -> W {
        W::from_rational(&self.env.tail(site, visits))
    }
}

/// A finite lattice trajectory `S_0, ..., S_T`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathRecord {
    pub points: Vec<Site>,
}

impl PathRecord {
    pub fn new(points: Vec<Site>) -> Self {
        PathRecord { points }
    }

    pub fn from_levels(levels: &[i64]) -> Self {
        PathRecord::new(sites_1d(levels))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn levels(&self) -> Vec<i64> {
        self.points.iter().map(Site::level).collect()
    }

    /// Final local times `L_T(x)`.
    pub fn local_times(&self) -> HashMap<Site, u32> {
        let mut lt = HashMap::new();
        for p in &self.points {
            *lt.entry(p.clone()).or_insert(0) += 1;
        }
        lt
    }

    /// `h(t) = H(S_t) - L_t(S_t)` along the path, `None` where the budget is unlimited.
    pub fn capacity_trace<F>(&self, budget_of: F) -> Result<Vec<Option<i64>>>
    where
        F: Fn(&Site) -> Option<Budget>,
    {
        let mut lt: HashMap<&Site, u32> = HashMap::new();
        let mut out = Vec::with_capacity(self.points.len());
        for p in &self.points {
            let visits = lt.entry(p).or_insert(0);
            *visits += 1;
            let budget = budget_of(p).ok_or_else(|| Error::MissingBudget(p.0.clone()))?;
            out.push(match budget {
                Budget::Finite(b) => Some(b as i64 - *visits as i64),
                Budget::Infinite => None,
            });
        }
        Ok(out)
    }
}

/// `α(n)`: first index whose height is at least `n`; `None` stands for `∞`.
pub fn hitting_time(path: &PathRecord, n: i64) -> Option<usize> {
    path.points.iter().position(|p| p.level() >= n)
}

/// `T_*`: first index at which a site's local time exceeds its budget.
pub fn killing_time<F>(path: &PathRecord, budget_of: F) -> Result<Option<usize>>
where
    F: Fn(&Site) -> Option<Budget>,
{
    let trace = path.capacity_trace(budget_of)?;
    Ok(trace.iter().position(|h| matches!(h, Some(v) if *v < 0)))
}

/// Probability, over the i.i.d. environment, that the path survives to its end.
pub fn survival_weight<W: Prob>(path: &PathRecord, env: &EnvironmentSpec) -> W {
    let model = SurvivalModel::<W>::new(env);
    let mut w = W::one();
    for (site, visits) in path.local_times() {
        let t = model.tail(&site, visits);
        if t.is_zero() {
            return W::zero();
        }
        w = w * t;
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    HitLevel,
    KilledCertain,
    HorizonExceeded,
}

#[derive(Clone, Debug)]
pub struct SampledPath {
    pub path: PathRecord,
    pub stop: StopReason,
    /// Survival weight of the whole path under the environment.
    pub weight: f64,
}

/// Simulates the free walk until level `target` is hit, the environment
/// makes survival impossible, or `max_steps` steps have been taken.
pub fn sample_path<R: Rng + ?Sized>(
    model: &SurvivalModel<f64>,
    jump: &JumpLaw,
    target: i64,
    max_steps: usize,
    rng: &mut R,
) -> SampledPath {
    let env = model.env();
    let s0 = env.initial[env.initial_index().sample(rng)].0.clone();
    let mut lt: HashMap<Site, u32> = HashMap::new();
    let mut weight = 1.0;
    let mut points = Vec::with_capacity(16);
    let mut current = s0;
    loop {
        let visits = {
            let e = lt.entry(current.clone()).or_insert(0);
            *e += 1;
            *e
        };
        match model.step(&current, visits) {
            Factor::One => {}
            Factor::Scale(f) => weight *= f,
            Factor::Dead => weight = 0.0,
        }
        let level = current.level();
        points.push(current.clone());
        let stop = if weight == 0.0 {
            Some(StopReason::KilledCertain)
        } else if level >= target {
            Some(StopReason::HitLevel)
        } else if points.len() > max_steps {
            Some(StopReason::HorizonExceeded)
        } else {
            None
        };
        if let Some(stop) = stop {
            return SampledPath {
                path: PathRecord::new(points),
                stop,
                weight,
            };
        }
        let j = jump.sample_index(rng);
        current = current.add(&jump.atoms()[j].vector);
    }
}

/// Outcome of a run with explicitly realized budgets.
#[derive(Clone, Debug)]
pub struct NaiveRun {
    pub path: PathRecord,
    pub reached: bool,
    pub killed: bool,
}

/// Simulates the walk in a realized environment, drawing each virgin budget
/// when its site is first visited.
pub fn sample_path_naive<R: Rng + ?Sized>(
    env: &EnvironmentSpec,
    jump: &JumpLaw,
    target: i64,
    max_steps: usize,
    rng: &mut R,
) -> NaiveRun {
    let s0 = env.initial[env.initial_index().sample(rng)].0.clone();
    let mut realized: HashMap<Site, (Budget, u32)> = HashMap::new();
    let mut points = Vec::with_capacity(16);
    let mut current = s0;
    loop {
        let entry = realized.entry(current.clone()).or_insert_with(|| {
            let b = if current.level() >= 0 {
                env.virgin.sample(rng)
            } else {
                env.lower_budget(&current)
            };
            (b, 0)
        });
        entry.1 += 1;
        let killed = !entry.0.allows(entry.1);
        let level = current.level();
        points.push(current.clone());
        if killed {
            return NaiveRun {
                path: PathRecord::new(points),
                reached: false,
                killed: true,
            };
        }
        if level >= target {
            return NaiveRun {
                path: PathRecord::new(points),
                reached: true,
                killed: false,
            };
        }
        if points.len() > max_steps {
            return NaiveRun {
                path: PathRecord::new(points),
                reached: false,
                killed: false,
            };
        }
        let j = jump.sample_index(rng);
        current = current.add(&jump.atoms()[j].vector);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn half() -> BigRational {
        BigRational::new(1.into(), 2.into())
    }

    fn budgets_12() -> ConstraintLaw {
        ConstraintLaw::new(vec![(1, half()), (2, half())], BigRational::zero()).unwrap()
    }

    #[test]
    fn hitting_time_examples() {
        assert_eq!(hitting_time(&PathRecord::from_levels(&[0]), 0), Some(0));
        assert_eq!(hitting_time(&PathRecord::from_levels(&[0, 1, 0, 1, 2]), 2), Some(4));
        assert_eq!(hitting_time(&PathRecord::from_levels(&[0, 1, 0]), 3), None);
    }

    #[test]
    fn killing_time_examples() {
        let two = |_: &Site| Some(Budget::Finite(2));
        assert_eq!(
            killing_time(&PathRecord::from_levels(&[0, 1, 0, 1, 0]), two).unwrap(),
            Some(4)
        );
        let one = |_: &Site| Some(Budget::Finite(1));
        assert_eq!(killing_time(&PathRecord::from_levels(&[0, 1, 2]), one).unwrap(), None);
        let zero_below = |s: &Site| {
            Some(if s.level() < 0 {
                Budget::Finite(0)
            } else {
                Budget::Finite(1)
            })
        };
        assert_eq!(
            killing_time(&PathRecord::from_levels(&[0, -1]), zero_below).unwrap(),
            Some(1)
        );
    }

    #[test]
    fn killing_time_missing_budget_is_an_error() {
        let only_origin = |s: &Site| (s.level() == 0).then_some(Budget::Finite(3));
        let err = killing_time(&PathRecord::from_levels(&[0, 1]), only_origin).unwrap_err();
        assert!(matches!(err, Error::MissingBudget(_)));
    }

    #[test]
    fn unlimited_budgets_never_kill() {
        let inf = |_: &Site| Some(Budget::Infinite);
        let p = PathRecord::from_levels(&[0, 0, 0, -3, 0, 0, 0]);
        assert_eq!(killing_time(&p, inf).unwrap(), None);
    }

    #[test]
    fn survival_weight_examples() {
        let env = EnvironmentSpec::zero_environment(budgets_12(), 1).unwrap();
        let w: BigRational = survival_weight(&PathRecord::from_levels(&[0, 1]), &env);
        assert!(w.is_one());
        let w: BigRational = survival_weight(&PathRecord::from_levels(&[0, 1, 0, 1, 2]), &env);
        assert_eq!(w, BigRational::new(1.into(), 4.into()));
        let w: BigRational = survival_weight(&PathRecord::from_levels(&[0, -1, 0, 1]), &env);
        assert!(w.is_zero());
    }

    #[test]
    fn jump_law_validation() {
        let third = BigRational::new(1.into(), 3.into());
        assert!(JumpLaw::new(1, vec![(vec![2], BigRational::one())]).is_err());
        assert!(JumpLaw::new(1, vec![(vec![-1], BigRational::one())]).is_err());
        assert!(JumpLaw::new(1, vec![(vec![1], third.clone()), (vec![-1], third)]).is_err());
        assert!(JumpLaw::new(2, vec![(vec![1], BigRational::one())]).is_err());
    }

    #[test]
    fn virgin_law_rejects_zero_budget_mass() {
        let law = ConstraintLaw::new(vec![(0, half()), (1, half())], BigRational::zero()).unwrap();
        assert!(EnvironmentSpec::zero_environment(law, 1).is_err());
    }

    #[test]
    fn deterministic_walk_hits_level() {
        let jump = JumpLaw::new(1, vec![(vec![1], BigRational::one())]).unwrap();
        let env = EnvironmentSpec::zero_environment(ConstraintLaw::constant(1), 1).unwrap();
        let model = SurvivalModel::new(&env);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_path(&model, &jump, 3, 100, &mut rng);
        assert_eq!(s.path.levels(), vec![0, 1, 2, 3]);
        assert_eq!(s.stop, StopReason::HitLevel);
        assert_eq!(s.weight, 1.0);
    }

    #[test]
    fn first_step_down_in_zero_mode_is_certain_death() {
        let jump = JumpLaw::simple_symmetric();
        let env = EnvironmentSpec::zero_environment(ConstraintLaw::constant(2), 1).unwrap();
        let model = SurvivalModel::new(&env);
        for seed in 0..64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_path(&model, &jump, 5, 100, &mut rng);
            if s.path.points.get(1).map(Site::level) == Some(-1) {
                assert_eq!(s.path.levels(), vec![0, -1]);
                assert_eq!(s.stop, StopReason::KilledCertain);
                return;
            }
        }
        panic!("no seed produced a first down-step");
    }

    #[test]
    fn zero_horizon_stops_after_the_start() {
        let jump = JumpLaw::simple_symmetric();
        let env = EnvironmentSpec::zero_environment(ConstraintLaw::constant(2), 1).unwrap();
        let model = SurvivalModel::new(&env);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sample_path(&model, &jump, 4, 0, &mut rng);
        assert_eq!(s.path.len(), 1);
        assert_eq!(s.stop, StopReason::HorizonExceeded);
    }

    #[test]
    fn naive_run_respects_realized_budgets() {
        let jump = JumpLaw::simple_symmetric();
        let env = EnvironmentSpec::zero_environment(ConstraintLaw::constant(1), 1).unwrap();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let run = sample_path_naive(&env, &jump, 3, 100, &mut rng);
            if run.reached {
                assert_eq!(run.path.levels(), vec![0, 1, 2, 3]);
            } else {
                assert!(run.killed);
            }
        }
    }
}
