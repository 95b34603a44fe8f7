//! Full ranking of unseen items by distance and Recall@K / NDCG@K.

use std::fmt::{self, Write as _};

use crate::data::{Csr, FoldSplit};
use crate::distance::{euclidean_squared, w2_squared_sqrt, DistanceKind};
use crate::embeddings::Theta;
use crate::exec;

pub const DEFAULT_KS: [usize; 4] = [5, 10, 15, 20];

/// Read-only ranking view of the embedding tables.
pub struct Ranker<'a> {
    theta: &'a Theta,
    kind: DistanceKind,
    sqrt_users: Vec<f64>,
    sqrt_items: Vec<f64>,
}

impl<'a> Ranker<'a> {
    pub fn new(theta: &'a Theta, kind: DistanceKind) -> Self {
        let gaussian = kind.is_gaussian();
        Ranker {
            theta,
            kind,
            sqrt_users: if gaussian { theta.users.sqrt_sigma() } else { Vec::new() },
            sqrt_items: if gaussian { theta.items.sqrt_sigma() } else { Vec::new() },
        }
    }

    pub fn distance(&self, user: usize, item: usize) -> f64 {
        let h = self.theta.dim();
        let (mu_u, mu_i) = (self.theta.users.mu_row(user), self.theta.items.mu_row(item));
        match self.kind {
            DistanceKind::EuclideanSquared => euclidean_squared(mu_u, mu_i),
            DistanceKind::W2Squared => w2_squared_sqrt(
                mu_u,
                &self.sqrt_users[user * h..(user + 1) * h],
                mu_i,
                &self.sqrt_items[item * h..(item + 1) * h],
            ),
        }
    }

    /// Items not in `exclude` (sorted), ascending by distance, ties by index,
    /// truncated to `k` when given.
    pub fn rank(&self, user: usize, exclude: &[u32], k: Option<usize>) -> Vec<(u32, f64)> {
        let n = self.theta.items.len();
        let mut scored: Vec<(u32, f64)> = Vec::with_capacity(n - exclude.len().min(n));
        let mut ex = exclude.iter().peekable();
        for i in 0..n as u32 {
            if ex.peek() == Some(&&i) {
                ex.next();
                continue;
            }
            scored.push((i, self.distance(user, i as usize)));
        }
        let cmp = |a: &(u32, f64), b: &(u32, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        match k {
            Some(k) if k < scored.len() => {
                scored.select_nth_unstable_by(k, cmp);
                scored.truncate(k);
                scored.sort_unstable_by(cmp);
            }
            _ => scored.sort_unstable_by(cmp),
        }
        scored
    }
}

/// |top ∩ relevant| / |relevant|. `relevant` must be sorted and nonempty.
pub fn recall_at_k(top: &[u32], relevant: &[u32], k: usize) -> f64 {
    assert!(!relevant.is_empty(), "empty relevant set");
    let hits = top.iter().take(k).filter(|i| relevant.binary_search(i).is_ok()).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-relevance NDCG with gain 1/log2(p + 1), 1-based positions.
pub fn ndcg_at_k(top: &[u32], relevant: &[u32], k: usize) -> f64 {
    assert!(!relevant.is_empty(), "empty relevant set");
    let dcg: f64 = top
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(relevant.len())).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    dcg / idcg
}

/// Mean metrics at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricAtK {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

/// Metrics of one fold, with per-user values kept for checks and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldEval {
    pub fold: usize,
    pub n_users: usize,
    pub metrics: Vec<MetricAtK>,
    /// `per_user[u][k_index] = (recall, ndcg)` for evaluated users, user order.
    pub per_user: Vec<(u32, Vec<(f64, f64)>)>,
}

impl FoldEval {
    pub fn at(&self, k: usize) -> Option<MetricAtK> {
        self.metrics.iter().copied().find(|m| m.k == k)
    }
}

/// Per-fold results and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub folds: Vec<FoldEval>,
}

impl EvalReport {
    /// Mean over folds at each K.
    pub fn mean(&self) -> Vec<MetricAtK> {
        let nf = self.folds.len() as f64;
        self.ks
            .iter()
            .map(|&k| {
                let (r, n) = self.folds.iter().fold((0.0, 0.0), |(r, n), f| {
                    let m = f.at(k).expect("fold has every K");
                    (r + m.recall, n + m.ndcg)
                });
                MetricAtK {
                    k,
                    recall: r / nf,
                    ndcg: n / nf,
                }
            })
            .collect()
    }

    pub fn mean_at(&self, k: usize) -> Option<MetricAtK> {
        self.mean().into_iter().find(|m| m.k == k)
    }

    /// `fold,K,recall,ndcg,n_users` rows; a final `mean` block when more than
    /// one fold is present.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,K,recall,ndcg,n_users\n");
        for f in &self.folds {
            for m in &f.metrics {
                let _ = writeln!(out, "{},{},{:.6},{:.6},{}", f.fold, m.k, m.recall, m.ndcg, f.n_users);
            }
        }
        if self.folds.len() > 1 {
            let users: usize = self.folds.iter().map(|f| f.n_users).sum();
            for m in self.mean() {
                let _ = writeln!(out, "mean,{},{:.6},{:.6},{}", m.k, m.recall, m.ndcg, users);
            }
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} {:>4} {:>9} {:>9} {:>7}", "fold", "K", "recall", "ndcg", "users")?;
        for fe in &self.folds {
            for m in &fe.metrics {
                writeln!(f, "{:>6} {:>4} {:>9.4} {:>9.4} {:>7}", fe.fold, m.k, m.recall, m.ndcg, fe.n_users)?;
            }
        }
        if self.folds.len() > 1 {
            for m in self.mean() {
                writeln!(f, "{:>6} {:>4} {:>9.4} {:>9.4}", "mean", m.k, m.recall, m.ndcg)?;
            }
        }
        Ok(())
    }
}

/// Evaluate every user with a nonempty test set on one fold.
pub fn evaluate_fold(theta: &Theta, fold: &FoldSplit, ks: &[usize], kind: DistanceKind) -> FoldEval {
    evaluate_sets(theta, &fold.train, &fold.test, fold.fold_index, ks, kind)
}

/// Same, from explicit train/test matrices.
pub fn evaluate_sets(theta: &Theta, train: &Csr, test: &Csr, fold: usize, ks: &[usize], kind: DistanceKind) -> FoldEval {
    assert!(!ks.is_empty(), "no cutoffs");
    let kmax = *ks.iter().max().unwrap();
    let ranker = Ranker::new(theta, kind);
    let users: Vec<u32> = (0..test.n_rows() as u32).filter(|&u| !test.row(u as usize).is_empty()).collect();
    let per_user: Vec<(u32, Vec<(f64, f64)>)> = exec::map_chunks(users.len(), 32, |range| {
        range
            .map(|idx| {
                let u = users[idx] as usize;
                let top: Vec<u32> = ranker.rank(u, train.row(u), Some(kmax)).into_iter().map(|(i, _)| i).collect();
                let rel = test.row(u);
                (u as u32, ks.iter().map(|&k| (recall_at_k(&top, rel, k), ndcg_at_k(&top, rel, k))).collect())
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let n = per_user.len().max(1) as f64;
    let metrics = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let (r, g) = per_user.iter().fold((0.0, 0.0), |(r, g), (_, v)| (r + v[j].0, g + v[j].1));
            MetricAtK {
                k,
                recall: r / n,
                ndcg: g / n,
            }
        })
        .collect();
    FoldEval {
        fold,
        n_users: per_user.len(),
        metrics,
        per_user,
    }
}

/// Evaluate several folds (each with its own trained tables).
pub fn evaluate(runs: &[(&Theta, &FoldSplit)], ks: &[usize], kind: DistanceKind) -> EvalReport {
    EvalReport {
        ks: ks.to_vec(),
        folds: runs.iter().map(|(t, f)| evaluate_fold(t, f, ks, kind)).collect(),
    }
}
