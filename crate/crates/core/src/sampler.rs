//! Triplet construction with a two-phase negative strategy: every
//! `refresh_period` epochs each anchor gets a pool of candidate negatives
//! drawn from outside its positive set; batches then draw negatives from the
//! pool. The next pool is built on a worker thread while training runs and
//! swapped in at the epoch boundary.

use std::sync::Arc;
use std::thread::JoinHandle;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Csr;
use crate::losses::{Relation, TripletBatch};

/// Per-anchor negative candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    /// 0 means the full complement.
    pub pool_size: usize,
    pub refresh_period: usize,
    pub epoch_of_build: usize,
    pub candidates: Vec<Vec<u32>>,
}

impl CandidatePool {
    pub fn of(&self, anchor: usize) -> &[u32] {
        &self.candidates[anchor]
    }
}

/// Uniform sample of `k` distinct indices from `0..universe` minus the sorted
/// set `excluded`; the whole complement when it has at most `k` elements or
/// when `k == 0`. Output is sorted.
pub fn sample_complement<R: Rng + ?Sized>(excluded: &[u32], universe: usize, k: usize, rng: &mut R) -> Vec<u32> {
    debug_assert!(excluded.windows(2).all(|w| w[0] < w[1]));
    let free = universe - excluded.len();
    let mut ranks: Vec<usize> = if k == 0 || k >= free {
        (0..free).collect()
    } else {
        let mut r = index::sample(rng, free, k).into_vec();
        r.sort_unstable();
        r
    };
    // Rank r maps to the r-th index not in `excluded`.
    let mut p = 0;
    for r in ranks.iter_mut() {
        while p < excluded.len() && excluded[p] as usize <= *r + p {
            p += 1;
        }
        *r += p;
    }
    ranks.into_iter().map(|r| r as u32).collect()
}

/// Where a relation's positives come from and which entities it may anchor.
#[derive(Debug, Clone)]
pub struct RelationSource {
    pub relation: Relation,
    /// Row `a` is the sorted positive set of anchor `a` (S_a or N_a).
    pub positives: Csr,
    /// Number of candidate targets.
    pub universe: usize,
    /// Exclude the anchor itself from its negatives (U-U, I-I).
    pub exclude_self: bool,
    /// All (anchor, positive) pairs, row order.
    pub edges: Vec<(u32, u32)>,
}

impl RelationSource {
    pub fn new(relation: Relation, positives: Csr, universe: usize) -> Self {
        let edges = (0..positives.n_rows())
            .flat_map(|a| positives.row(a).iter().map(move |&p| (a as u32, p)))
            .collect();
        RelationSource {
            relation,
            exclude_self: relation != Relation::UserItem,
            positives,
            universe,
            edges,
        }
    }

    /// Sorted exclusion set of `anchor`.
    pub fn exclusion(&self, anchor: usize) -> Vec<u32> {
        let mut ex = self.positives.row(anchor).to_vec();
        if self.exclude_self {
            if let Err(pos) = ex.binary_search(&(anchor as u32)) {
                ex.insert(pos, anchor as u32);
            }
        }
        ex
    }

    pub fn is_negative(&self, anchor: u32, target: u32) -> bool {
        !(self.exclude_self && anchor == target) && !self.positives.contains(anchor as usize, target)
    }
}

fn pool_rng(seed: u64, relation: Relation, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((relation.index() as u64 + 1) << 40) | epoch as u64);
    rng
}

/// Build the pool every anchor with at least one positive. Deterministic in
/// (seed, relation, epoch).
pub fn refresh_pool(source: &RelationSource, pool_size: usize, refresh_period: usize, seed: u64, epoch: usize) -> CandidatePool {
    let mut rng = pool_rng(seed, source.relation, epoch);
    let candidates = (0..source.positives.n_rows())
        .map(|a| {
            if source.positives.row(a).is_empty() {
                Vec::new()
            } else {
                sample_complement(&source.exclusion(a), source.universe, pool_size, &mut rng)
            }
        })
        .collect();
    CandidatePool {
        pool_size,
        refresh_period,
        epoch_of_build: epoch,
        candidates,
    }
}

struct RelationState {
    source: Arc<RelationSource>,
    pool: CandidatePool,
    pending: Option<(usize, JoinHandle<CandidatePool>)>,
}

/// Samples triplet batches for a set of relations.
pub struct TripletSampler {
    states: Vec<RelationState>,
    pub neg_samples: usize,
    pub pool_size: usize,
    pub refresh_period: usize,
    seed: u64,
}

impl TripletSampler {
    pub fn new(sources: Vec<RelationSource>, neg_samples: usize, pool_size: usize, refresh_period: usize, seed: u64) -> Self {
        assert!(neg_samples >= 1, "neg_samples must be at least 1");
        assert!(pool_size == 0 || pool_size >= neg_samples, "pool_size below neg_samples");
        let mut sampler = TripletSampler {
            states: sources
                .into_iter()
                .map(|s| {
                    let s = Arc::new(s);
                    RelationState {
                        pool: refresh_pool(&s, pool_size, refresh_period, seed, 0),
                        source: s,
                        pending: None,
                    }
                })
                .collect(),
            neg_samples,
            pool_size,
            refresh_period,
            seed,
        };
        sampler.schedule(0);
        sampler
    }

    fn refreshing(&self) -> bool {
        self.refresh_period > 0 && self.pool_size > 0
    }

    fn schedule(&mut self, from_epoch: usize) {
        if !self.refreshing() {
            return;
        }
        let next = from_epoch + self.refresh_period;
        let (pool_size, period, seed) = (self.pool_size, self.refresh_period, self.seed);
        for st in &mut self.states {
            let src = Arc::clone(&st.source);
            let handle = std::thread::spawn(move || refresh_pool(&src, pool_size, period, seed, next));
            st.pending = Some((next, handle));
        }
    }

    /// Swap in refreshed pools when `epoch` reaches the next refresh point.
    pub fn begin_epoch(&mut self, epoch: usize) {
        if !self.refreshing() || epoch == 0 || epoch % self.refresh_period != 0 {
            return;
        }
        for st in &mut self.states {
            st.pool = match st.pending.take() {
                Some((e, handle)) if e == epoch => handle.join().expect("pool refresh worker panicked"),
                _ => refresh_pool(&st.source, self.pool_size, self.refresh_period, self.seed, epoch),
            };
        }
        self.schedule(epoch);
    }

    fn state(&self, relation: Relation) -> &RelationState {
        self.states
            .iter()
            .find(|s| s.source.relation == relation)
            .expect("relation not configured")
    }

    pub fn source(&self, relation: Relation) -> &RelationSource {
        &self.state(relation).source
    }

    pub fn pool(&self, relation: Relation) -> &CandidatePool {
        &self.state(relation).pool
    }

    pub fn has(&self, relation: Relation) -> bool {
        self.states.iter().any(|s| s.source.relation == relation)
    }

    /// `count` (anchor, positive) pairs drawn uniformly with replacement from
    /// the relation's edge list. Empty when the relation has no edges.
    pub fn draw_pairs<R: Rng + ?Sized>(&self, relation: Relation, count: usize, rng: &mut R) -> Vec<(u32, u32)> {
        let edges = &self.state(relation).source.edges;
        if edges.is_empty() {
            return Vec::new();
        }
        (0..count).map(|_| edges[rng.random_range(0..edges.len())]).collect()
    }

    /// Each pair becomes `neg_samples` rows with negatives from the pool.
    pub fn expand<R: Rng + ?Sized>(&self, relation: Relation, pairs: &[(u32, u32)], rng: &mut R) -> TripletBatch {
        let st = self.state(relation);
        let mut batch = TripletBatch::new(relation);
        for &(a, p) in pairs {
            let pool = st.pool.of(a as usize);
            if pool.is_empty() {
                continue;
            }
            for _ in 0..self.neg_samples {
                let n = pool[rng.random_range(0..pool.len())];
                batch.push(a, p, n);
            }
        }
        debug_assert!(self.check_membership(&batch).is_ok());
        batch
    }

    /// Verify positives are in the anchor's set and negatives are not.
    pub fn check_membership(&self, batch: &TripletBatch) -> Result<(), String> {
        let src = &self.state(batch.relation).source;
        for r in 0..batch.len() {
            let (a, p, n) = (batch.anchors[r], batch.positives[r], batch.negatives[r]);
            if !src.positives.contains(a as usize, p) {
                return Err(format!("row {r}: {p} is not a positive of {a}"));
            }
            if !src.is_negative(a, n) {
                return Err(format!("row {r}: {n} is not a negative of {a}"));
            }
        }
        Ok(())
    }
}

/// Shuffled U-I training pairs cut into mini-batches of `batch_size` pairs.
pub fn epoch_batches<R: Rng + ?Sized>(pairs: &[(u32, u32)], batch_size: usize, rng: &mut R) -> Vec<Vec<(u32, u32)>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order = pairs.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[_]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn complement_of_all_but_one_is_that_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let excl: Vec<u32> = (0..10).filter(|&i| i != 6).collect();
        assert_eq!(sample_complement(&excl, 10, 500, &mut rng), vec![6]);
    }

    #[test]
    fn full_complement_when_pool_disabled() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_complement(&[1, 3], 6, 0, &mut rng), vec![0, 2, 4, 5]);
    }

    #[test]
    fn pools_are_deterministic_per_epoch() {
        let pos = Csr::from_rows(&[vec![0, 1], vec![2, 5]], 40);
        let src = RelationSource::new(Relation::UserItem, pos, 40);
        let a = refresh_pool(&src, 5, 20, 9, 20);
        assert_eq!(a, refresh_pool(&src, 5, 20, 9, 20));
        assert_ne!(a, refresh_pool(&src, 5, 20, 9, 40));
        assert_eq!(a.of(0).len(), 5);
    }

    #[test]
    fn relation_negatives_exclude_anchor_and_neighbours() {
        let nbrs = Csr::from_rows(&[vec![1], vec![0], vec![]], 3);
        let src = RelationSource::new(Relation::UserUser, nbrs, 3);
        let pool = refresh_pool(&src, 10, 1, 0, 0);
        assert_eq!(pool.of(0), &[2]);
        assert!(pool.of(2).is_empty());
    }

    #[test]
    fn background_refresh_matches_synchronous_build() {
        let rows: Vec<Vec<u32>> = (0..8).map(|u| vec![u, u + 1]).collect();
        let src = RelationSource::new(Relation::UserItem, Csr::from_rows(&rows, 30), 30);
        let mut s = TripletSampler::new(vec![src.clone()], 2, 6, 3, 4);
        for epoch in 0..7 {
            s.begin_epoch(epoch);
            let built = s.pool(Relation::UserItem).epoch_of_build;
            assert!(epoch - built < 3);
            assert_eq!(s.pool(Relation::UserItem), &refresh_pool(&src, 6, 3, 4, built));
        }
    }

    #[test]
    fn one_negative_gives_one_row_per_pair() {
        let src = RelationSource::new(Relation::UserItem, Csr::from_rows(&[vec![0], vec![1, 2]], 10), 10);
        let s = TripletSampler::new(vec![src], 1, 4, 20, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = s.expand(Relation::UserItem, &[(0, 0), (1, 2)], &mut rng);
        assert_eq!(b.len(), 2);
        s.check_membership(&b).unwrap();
    }

    #[test]
    fn negatives_are_uniform_over_the_complement() {
        // Ten items, user owns {0, 1}; full-complement pool.
        let src = RelationSource::new(Relation::UserItem, Csr::from_rows(&[vec![0, 1]], 10), 10);
        let s = TripletSampler::new(vec![src], 1, 0, 0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 80_000;
        let pairs = vec![(0u32, 0u32); n];
        let b = s.expand(Relation::UserItem, &pairs, &mut rng);
        let mut counts = [0usize; 10];
        b.negatives.iter().for_each(|&k| counts[k as usize] += 1);
        assert_eq!(counts[0] + counts[1], 0);
        let expected = n as f64 / 8.0;
        let stat: f64 = counts[2..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(7.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square p = {p}");
    }

    #[test]
    fn epoch_batches_cover_pairs_once() {
        let pairs: Vec<(u32, u32)> = (0..23).map(|i| (i, i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batches = epoch_batches(&pairs, 5, &mut rng);
        assert_eq!(batches.len(), 5);
        let mut all: Vec<_> = batches.concat();
        all.sort();
        assert_eq!(all, pairs);
    }

    proptest! {
        #[test]
        fn pool_never_contains_excluded(
            rows in prop::collection::vec(prop::collection::btree_set(0u32..50, 1..20), 1..10),
            k in 0usize..60,
            seed in 0u64..1000,
        ) {
            let rows: Vec<Vec<u32>> = rows.into_iter().map(|s| s.into_iter().collect()).collect();
            let src = RelationSource::new(Relation::UserItem, Csr::from_rows(&rows, 50), 50);
            let pool = refresh_pool(&src, k, 20, seed, 0);
            for (a, row) in rows.iter().enumerate() {
                let cand = pool.of(a);
                let free = 50 - row.len();
                prop_assert_eq!(cand.len(), if k == 0 { free } else { k.min(free) });
                prop_assert!(cand.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(cand.iter().all(|c| !row.contains(c) && *c < 50));
            }
        }
    }
}
