use super::{TabularMdp, Trajectory};
use crate::error::{Error, Result};

/// Default number of suffixes retained per `(s, a)` key.
pub const DEFAULT_STORE_CAPACITY: usize = 8;

/// Reference to the suffix of a stored trajectory starting at `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredSuffix {
    pub trajectory: usize,
    pub offset: usize,
    /// Greedy return of the suffix the last time it was evaluated.
    pub score: f64,
    seq: u64,
}

/// Per-(state, action) dataset of trajectory suffixes.
///
/// Every suffix stored under `(s, a)` starts with `s_t = s, a_t = a`. When a
/// key exceeds its capacity, the suffix with the highest score is kept and
/// the oldest of the others is evicted.
#[derive(Debug, Clone)]
pub struct TrajectoryStore {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    capacity: Option<usize>,
    trajectories: Vec<Trajectory>,
    keys: Vec<Vec<StoredSuffix>>,
    next_seq: u64,
}

impl TrajectoryStore {
    /// Store with `capacity` suffixes per key; `None` keeps every suffix.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        capacity: Option<usize>,
    ) -> Result<Self> {
        if capacity == Some(0) {
            return Err(Error::InvalidArgument(
                "store capacity must be positive".into(),
            ));
        }
        Ok(Self {
            num_states,
            num_actions,
            gamma,
            capacity,
            trajectories: Vec::new(),
            keys: vec![Vec::new(); num_states * num_actions],
            next_seq: 0,
        })
    }

    pub fn for_mdp(mdp: &TabularMdp, capacity: Option<usize>) -> Result<Self> {
        Self::new(mdp.num_states(), mdp.num_actions(), mdp.gamma(), capacity)
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn trajectory(&self, i: usize) -> &Trajectory {
        &self.trajectories[i]
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn suffixes(&self, s: usize, a: usize) -> &[StoredSuffix] {
        &self.keys[s * self.num_actions + a]
    }

    /// Number of keys holding at least one suffix.
    pub fn populated_keys(&self) -> usize {
        self.keys.iter().filter(|k| !k.is_empty()).count()
    }

    /// Keys holding at least one suffix, in `(s, a)` order.
    pub fn keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let na = self.num_actions;
        self.keys
            .iter()
            .enumerate()
            .filter(|(_, k)| !k.is_empty())
            .map(move |(i, _)| (i / na, i % na))
    }

    /// Inserts every suffix, scored by its plain discounted return.
    pub fn insert(&mut self, trajectory: Trajectory) -> Result<usize> {
        let mut scores = vec![0.0; trajectory.len()];
        let mut acc = 0.0;
        for t in (0..trajectory.len()).rev() {
            acc = trajectory.reward(t) + self.gamma * acc;
            scores[t] = acc;
        }
        self.insert_scored(trajectory, &scores)
    }

    /// Inserts every suffix with caller-supplied scores (one per step),
    /// typically greedy returns under the learner's current Q. Returns the
    /// trajectory's index in the store.
    pub fn insert_scored(&mut self, trajectory: Trajectory, scores: &[f64]) -> Result<usize> {
        self.check_dims(&trajectory)?;
        if scores.len() != trajectory.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} scores", trajectory.len()),
                found: format!("{}", scores.len()),
            });
        }
        let id = self.trajectories.len();
        for (t, &score) in scores.iter().enumerate() {
            let (s, a) = trajectory.key(t);
            let seq = self.next_seq;
            self.next_seq += 1;
            let key = &mut self.keys[s * self.num_actions + a];
            key.push(StoredSuffix {
                trajectory: id,
                offset: t,
                score,
                seq,
            });
            if let Some(cap) = self.capacity {
                while key.len() > cap {
                    evict_one(key);
                }
            }
        }
        self.trajectories.push(trajectory);
        Ok(id)
    }

    /// Records a fresh evaluation of the `i`-th suffix under `(s, a)`.
    pub fn rescore(&mut self, s: usize, a: usize, i: usize, score: f64) {
        self.keys[s * self.num_actions + a][i].score = score;
    }

    fn check_dims(&self, trajectory: &Trajectory) -> Result<()> {
        for t in 0..=trajectory.len() {
            let s = trajectory.state(t);
            let a = trajectory.action(t);
            if s >= self.num_states || a.is_some_and(|a| a >= self.num_actions) {
                return Err(Error::DimensionMismatch {
                    expected: format!("indices within {}x{}", self.num_states, self.num_actions),
                    found: format!("(s={s}, a={a:?}) at t={t}"),
                });
            }
        }
        Ok(())
    }
}

/// Drops the oldest suffix that is not the best-scoring one.
fn evict_one(key: &mut Vec<StoredSuffix>) {
    let best = key
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if s.score > key[b].score { i } else { b });
    let victim = key
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .min_by_key(|(_, s)| s.seq)
        .map(|(i, _)| i)
        .expect("at least two entries when evicting");
    key.remove(victim);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj3() -> Trajectory {
        Trajectory::from_triples(&[(0, 0, 0.0), (1, 1, 0.0), (2, 0, 1.0)], 3, true).unwrap()
    }

    fn one_step(r: f64) -> Trajectory {
        Trajectory::from_triples(&[(0, 0, r)], 1, false).unwrap()
    }

    #[test]
    fn insert_populates_each_key() {
        let mut store = TrajectoryStore::new(4, 2, 0.9, Some(8)).unwrap();
        store.insert(traj3()).unwrap();
        assert_eq!(store.populated_keys(), 3);
        let s = store.suffixes(1, 1)[0];
        assert_eq!(s.offset, 1);
        assert_eq!(store.trajectory(s.trajectory).key(s.offset), (1, 1));
    }

    #[test]
    fn capacity_one_keeps_one_per_key() {
        let mut store = TrajectoryStore::new(4, 2, 0.9, Some(1)).unwrap();
        store.insert(traj3()).unwrap();
        store.insert(traj3()).unwrap();
        for (s, a) in [(0, 0), (1, 1), (2, 0)] {
            assert_eq!(store.suffixes(s, a).len(), 1);
        }
    }

    // Eviction order enumerated by hand: with capacity 2 and scores
    // (first, second, third), the best is kept and the oldest of the rest goes.
    #[test]
    fn evicts_oldest_non_best() {
        for (scores, survivors) in [
            ([5.0, 1.0, 3.0], [5.0, 3.0]),
            ([1.0, 5.0, 3.0], [5.0, 3.0]),
            ([1.0, 3.0, 5.0], [3.0, 5.0]),
            ([2.0, 2.0, 2.0], [2.0, 2.0]),
        ] {
            let mut store = TrajectoryStore::new(2, 1, 0.9, Some(2)).unwrap();
            for r in scores {
                store.insert(one_step(r)).unwrap();
            }
            let kept: Vec<f64> = store.suffixes(0, 0).iter().map(|s| s.score).collect();
            assert_eq!(kept, survivors, "scores {scores:?}");
        }
        // equal scores: the first inserted counts as best and stays
        let mut store = TrajectoryStore::new(2, 1, 0.9, Some(2)).unwrap();
        for _ in 0..3 {
            store.insert(one_step(2.0)).unwrap();
        }
        let ids: Vec<usize> = store.suffixes(0, 0).iter().map(|s| s.trajectory).collect();
        assert_eq!(ids, vec![0, 2]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut store = TrajectoryStore::new(2, 1, 0.9, None).unwrap();
        assert!(matches!(
            store.insert(traj3()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unbounded_store_keeps_everything() {
        let mut store = TrajectoryStore::new(2, 1, 0.9, None).unwrap();
        for i in 0..20 {
            store.insert(one_step(i as f64)).unwrap();
        }
        assert_eq!(store.suffixes(0, 0).len(), 20);
    }
}
