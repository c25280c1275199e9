//! Separating levels of a trajectory and its block decomposition.
//!
//! Everything here is a pure functional of the path; no environment enters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::walk::{hitting_time, PathRecord, Site};

/// The `n`-separating levels of a path, in increasing order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSet {
    pub n: i64,
    pub levels: Vec<i64>,
}

impl LevelSet {
    /// `η`: number of separating levels minus one.
    pub fn eta(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    /// `κ`: the second-largest level; `None` is the `−∞` marker.
    pub fn kappa(&self) -> Option<i64> {
        let len = self.levels.len();
        (len >= 2).then(|| self.levels[len - 2])
    }
}

/// All `k` in `0..=n` satisfying the `n`-separating condition.
///
/// `k` qualifies when the height before `α(k)` stays below `k`, equals `k`
/// at `α(k)`, and does not drop below `k` strictly between `α(k)` and `α(n)`.
pub fn n_separating_levels(path: &PathRecord, n: i64) -> Result<LevelSet> {
    let h = path.levels();
    let alpha_n = hitting_time(path, n).ok_or(Error::LevelNotReached { level: n })?;
    let mut levels = Vec::new();
    for k in 0..=n {
        let alpha_k = match hitting_time(path, k) {
            Some(t) => t,
            None => continue,
        };
        let before_ok = h[..alpha_k].iter().all(|&y| y < k);
        let at_ok = h[alpha_k] == k;
        let after_ok = alpha_k >= alpha_n || h[alpha_k + 1..alpha_n].iter().all(|&y| y >= k);
        if before_ok && at_ok && after_ok {
            levels.push(k);
        }
    }
    Ok(LevelSet { n, levels })
}

/// Separating-level test with the infinite future replaced by the recorded
/// horizon. A `true` answer can be revoked by a longer path; `false` is final.
pub fn separating_level_finite_horizon(path: &PathRecord, k: i64) -> bool {
    let h = path.levels();
    let Some(alpha_k) = hitting_time(path, k) else {
        return false;
    };
    h[..alpha_k].iter().all(|&y| y < k) && h[alpha_k] == k && h[alpha_k + 1..].iter().all(|&y| y >= k)
}

/// Incremental tracker of the levels that are still separating for the
/// current running maximum. The levels form a stack: a visit to height `y`
/// removes every tracked level above `y`, and each first visit to a new
/// height `k >= 0` pushes `k`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AliveLevels {
    stack: Vec<i64>,
    max_level: Option<i64>,
}

impl AliveLevels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds the next height; returns true if it is a first visit to a level `>= 0`.
    pub fn visit(&mut self, y: i64) -> bool {
        while matches!(self.stack.last(), Some(&top) if top > y) {
            self.stack.pop();
        }
        let new_max = self.max_level.is_none_or(|m| y > m);
        if new_max {
            self.max_level = Some(y);
            if y >= 0 {
                self.stack.push(y);
                return true;
            }
        }
        false
    }

    pub fn levels(&self) -> &[i64] {
        &self.stack
    }

    pub fn max_level(&self) -> Option<i64> {
        self.max_level
    }

    /// Length before a visit, for undoing it.
    pub fn checkpoint(&self) -> (Vec<i64>, Option<i64>) {
        (self.stack.clone(), self.max_level)
    }

    pub fn restore(&mut self, cp: (Vec<i64>, Option<i64>)) {
        self.stack = cp.0;
        self.max_level = cp.1;
    }
}

/// Initial block `(ν_0, T_0, S_0..S_{T_0})`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InitialSegment {
    pub level: i64,
    pub time: usize,
    pub prefix: Vec<Site>,
}

/// Increment block `(λ_i, τ_i, displacements)`; the segment holds
/// `S_{T_{i-1}+t} - S_{T_{i-1}}` for `t = 1..=τ_i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IncrementSegment {
    pub height: i64,
    pub duration: usize,
    pub segment: Vec<Site>,
}

impl IncrementSegment {
    /// Lowest height reached inside the block, relative to its start.
    pub fn internal_min(&self) -> i64 {
        self.segment.iter().map(Site::level).min().unwrap_or(0).min(0)
    }
}

/// Block structure of a path up to `α(n)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub n: i64,
    pub levels: Vec<i64>,
    pub times: Vec<usize>,
    pub initial: InitialSegment,
    pub increments: Vec<IncrementSegment>,
}

impl Decomposition {
    pub fn eta(&self) -> usize {
        self.increments.len()
    }

    pub fn heights(&self) -> Vec<i64> {
        self.increments.iter().map(|b| b.height).collect()
    }

    pub fn durations(&self) -> Vec<usize> {
        self.increments.iter().map(|b| b.duration).collect()
    }

    /// Re-glues the blocks into `S_0..S_{α(n)}`.
    pub fn reassemble(&self) -> Vec<Site> {
        let mut out = self.initial.prefix.clone();
        for block in &self.increments {
            let base = out.last().expect("prefix is nonempty").clone();
            out.extend(block.segment.iter().map(|d| base.add(d)));
        }
        out
    }
}

/// Splits the path at its `n`-separating levels.
pub fn decompose(path: &PathRecord, n: i64) -> Result<Decomposition> {
    let set = n_separating_levels(path, n)?;
    if set.levels.last() != Some(&n) {
        return Err(Error::LevelNotReached { level: n });
    }
    let times: Vec<usize> = set
        .levels
        .iter()
        .map(|&k| hitting_time(path, k).expect("separating level is hit"))
        .collect();
    let initial = InitialSegment {
        level: set.levels[0],
        time: times[0],
        prefix: path.points[..=times[0]].to_vec(),
    };
    let increments = set
        .levels
        .windows(2)
        .zip(times.windows(2))
        .map(|(lv, tm)| {
            let base = &path.points[tm[0]];
            IncrementSegment {
                height: lv[1] - lv[0],
                duration: tm[1] - tm[0],
                segment: path.points[tm[0] + 1..=tm[1]].iter().map(|p| p.sub(base)).collect(),
            }
        })
        .collect();
    Ok(Decomposition {
        n,
        levels: set.levels,
        times,
        initial,
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(levels: &[i64]) -> PathRecord {
        PathRecord::from_levels(levels)
    }

    #[test]
    fn n_separating_examples() {
        let s = n_separating_levels(&p(&[0, 1, 2]), 2).unwrap();
        assert_eq!(s.levels, vec![0, 1, 2]);
        assert_eq!((s.eta(), s.kappa()), (2, Some(1)));

        let s = n_separating_levels(&p(&[0, 1, 0, 1, 2]), 2).unwrap();
        assert_eq!(s.levels, vec![0, 2]);
        assert_eq!((s.eta(), s.kappa()), (1, Some(0)));

        let s = n_separating_levels(&p(&[0]), 0).unwrap();
        assert_eq!(s.levels, vec![0]);
        assert_eq!((s.eta(), s.kappa()), (0, None));
    }

    #[test]
    fn unreached_level_is_an_error() {
        assert!(matches!(
            n_separating_levels(&p(&[0, 1]), 2),
            Err(Error::LevelNotReached { level: 2 })
        ));
        assert!(decompose(&p(&[0, -1]), 1).is_err());
    }

    #[test]
    fn finite_horizon_examples() {
        assert!(separating_level_finite_horizon(&p(&[0, 1, 2]), 1));
        assert!(!separating_level_finite_horizon(&p(&[0, 1, 0]), 1));
        assert!(separating_level_finite_horizon(&p(&[0, 1]), 0));
        assert!(!separating_level_finite_horizon(&p(&[0, 1]), 4));
    }

    #[test]
    fn separating_for_n_need_not_survive_to_n_plus_one() {
        // Level n qualifies for n but not for n+1 once the path drops below 0.
        let n = 4;
        let mut lv: Vec<i64> = (0..=n).collect();
        lv.push(-1);
        lv.extend(0..=n + 1);
        let path = p(&lv);
        assert!(n_separating_levels(&path, n).unwrap().levels.contains(&n));
        assert!(!n_separating_levels(&path, n + 1).unwrap().levels.contains(&n));
    }

    #[test]
    fn decompose_examples() {
        let d = decompose(&p(&[0, 1, 0, 1, 2]), 2).unwrap();
        assert_eq!(d.levels, vec![0, 2]);
        assert_eq!(d.times, vec![0, 4]);
        assert_eq!(d.heights(), vec![2]);
        assert_eq!(d.durations(), vec![4]);

        let d = decompose(&p(&[0, 1, 2]), 2).unwrap();
        assert_eq!(d.levels, vec![0, 1, 2]);
        assert_eq!(d.times, vec![0, 1, 2]);
        assert_eq!(d.heights(), vec![1, 1]);
        assert_eq!(d.durations(), vec![1, 1]);

        let d = decompose(&p(&[0, 1, 2, 3, 4, 5]), 5).unwrap();
        assert_eq!(d.eta(), 5);
        assert!(d.increments.iter().all(|b| b.height == 1 && b.duration == 1));
    }

    #[test]
    fn lower_start_gives_nontrivial_initial_block() {
        let d = decompose(&p(&[-2, -1, 0, -1, 0, 1, 2]), 2).unwrap();
        assert_eq!(d.levels, vec![1, 2]);
        assert_eq!(d.initial.time, 5);
        assert_eq!(d.initial.prefix.len(), 6);
    }

    fn skip_free_path(start: i64, steps: Vec<i64>) -> Vec<i64> {
        let mut lv = vec![start];
        for s in steps {
            let last = *lv.last().unwrap();
            lv.push(last + s);
        }
        lv
    }

    proptest! {
        #[test]
        fn decomposition_round_trips(start in -2i64..=0, steps in prop::collection::vec(-2i64..=1, 1..40), n in 0i64..6) {
            let lv = skip_free_path(start, steps);
            let path = p(&lv);
            if let Some(alpha) = hitting_time(&path, n) {
                let d = decompose(&path, n).unwrap();
                prop_assert_eq!(d.reassemble(), path.points[..=alpha].to_vec());
                prop_assert_eq!(*d.levels.last().unwrap(), n);
                prop_assert_eq!(d.heights().iter().sum::<i64>(), n - d.initial.level);
                prop_assert_eq!(d.durations().iter().sum::<usize>(), alpha - d.initial.time);
                for b in &d.increments {
                    prop_assert!(b.height >= 1);
                    prop_assert!(b.duration as i64 >= b.height);
                    prop_assert!(b.internal_min() >= 0);
                }
                // backward recursion: each level is κ of the next one
                for w in d.levels.windows(2) {
                    let sub = n_separating_levels(&path, w[1]).unwrap();
                    prop_assert!(sub.levels.contains(&w[0]));
                }
            }
        }

        #[test]
        fn alive_stack_matches_definition(start in -2i64..=0, steps in prop::collection::vec(-2i64..=1, 1..40)) {
            let lv = skip_free_path(start, steps);
            let path = p(&lv);
            let mut alive = AliveLevels::new();
            for (t, &y) in lv.iter().enumerate() {
                if alive.visit(y) {
                    let prefix = PathRecord::new(path.points[..=t].to_vec());
                    let set = n_separating_levels(&prefix, y).unwrap();
                    prop_assert_eq!(alive.levels(), set.levels.as_slice());
                }
            }
        }

        #[test]
        fn target_level_always_separates(start in -2i64..=0, steps in prop::collection::vec(-2i64..=1, 1..30), n in 0i64..5) {
            let path = p(&skip_free_path(start, steps));
            if hitting_time(&path, n).is_some() {
                prop_assert_eq!(n_separating_levels(&path, n).unwrap().levels.last().copied(), Some(n));
            }
        }
    }
}
