//! The eight-variant ablation matrix and the generated-margin case study.

use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bilevel::{neighbor_sets, train, Model};
use crate::config::{MarginMode, RunConfig};
use crate::data::{Csr, FoldSplit};
use crate::distance::DistanceKind;
use crate::error::{Error, Result};
use crate::losses::Relation;
use crate::margin_net::{indicator, IndicatorMode};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub id: usize,
    pub name: &'static str,
}

pub const VARIANTS: [Variant; 8] = [
    Variant { id: 1, name: "Fix(U-I) + deterministic" },
    Variant { id: 2, name: "Fix(U-I) + Gaussian" },
    Variant { id: 3, name: "Ada(U-I) + deterministic" },
    Variant { id: 4, name: "Ada(U-I)-concat + deterministic" },
    Variant { id: 5, name: "Ada(U-I)-sum + deterministic" },
    Variant { id: 6, name: "Ada(U-I) + Gaussian" },
    Variant { id: 7, name: "Ada(U-I) + Fix(U-U) + Fix(I-I)" },
    Variant { id: 8, name: "full model" },
];

pub fn variant(id: usize) -> Option<Variant> {
    VARIANTS.iter().copied().find(|v| v.id == id)
}

/// `base` with the model switches of variant `id` applied. Everything else
/// (sizes, step sizes, epochs, sampling) is kept.
pub fn variant_config(base: &RunConfig, id: usize) -> Result<RunConfig> {
    let mut c = base.clone();
    let fixed = MarginMode::Fixed(1.0);
    let (distance, margin, indicator_mode, relations, rel_margin) = match id {
        1 => (DistanceKind::EuclideanSquared, fixed, IndicatorMode::SquaredDiff, "ui", None),
        2 => (DistanceKind::W2Squared, fixed, IndicatorMode::SquaredDiff, "ui", None),
        3 => (DistanceKind::EuclideanSquared, MarginMode::Adaptive, IndicatorMode::SquaredDiff, "ui", None),
        4 => (DistanceKind::EuclideanSquared, MarginMode::Adaptive, IndicatorMode::Concat, "ui", None),
        5 => (DistanceKind::EuclideanSquared, MarginMode::Adaptive, IndicatorMode::Sum, "ui", None),
        6 => (DistanceKind::W2Squared, MarginMode::Adaptive, IndicatorMode::SquaredDiff, "ui", None),
        7 => (DistanceKind::W2Squared, MarginMode::Adaptive, IndicatorMode::SquaredDiff, "ui,uu,ii", Some(fixed)),
        8 => (DistanceKind::W2Squared, MarginMode::Adaptive, IndicatorMode::SquaredDiff, "ui,uu,ii", None),
        _ => return Err(Error::Config(format!("unknown ablation variant {id} (1-8)"))),
    };
    c.distance_kind = distance;
    c.margin_mode = margin;
    c.indicator_mode = indicator_mode;
    c.relations = crate::config::parse_relations(relations).expect("static list");
    c.relation_margin_mode = rel_margin;
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRun {
    pub variant: usize,
    pub seed: u64,
    pub recall: f64,
    pub ndcg: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: Variant,
    pub recalls: Vec<f64>,
    pub ndcgs: Vec<f64>,
}

impl VariantSummary {
    pub fn mean_recall(&self) -> f64 {
        stats::mean(&self.recalls)
    }

    pub fn mean_ndcg(&self) -> f64 {
        stats::mean(&self.ndcgs)
    }
}

/// Train and evaluate every (variant, seed) on one fold, reporting the
/// metrics at cutoff `k`. Neighbour sets are built once and shared.
pub fn run_ablation(
    base: &RunConfig,
    fold: &FoldSplit,
    variants: &[usize],
    seeds: &[u64],
    k: usize,
    mut progress: impl FnMut(&AblationRun),
) -> Result<Vec<AblationRun>> {
    let mut shared = base.clone();
    shared.relations = Relation::ALL.to_vec();
    let needs_nbrs = variants.iter().any(|&v| v >= 7);
    let (user_nbrs, item_nbrs) = if needs_nbrs { neighbor_sets(&shared, fold) } else { (None, None) };
    let mut runs = Vec::new();
    for &v in variants {
        for &seed in seeds {
            let mut cfg = variant_config(base, v)?;
            cfg.seed = seed;
            if !cfg.ks.contains(&k) {
                cfg.ks.push(k);
                cfg.ks.sort_unstable();
            }
            let (u, i) = (
                user_nbrs.as_ref().filter(|_| cfg.uses(Relation::UserUser)),
                item_nbrs.as_ref().filter(|_| cfg.uses(Relation::ItemItem)),
            );
            let out = train(&cfg, fold, u, i, |_, _| {})?;
            let eval = crate::evaluator::evaluate_fold(&out.state.model.theta, fold, &[k], cfg.distance_kind);
            let m = eval.at(k).expect("cutoff evaluated");
            let run = AblationRun {
                variant: v,
                seed,
                recall: m.recall,
                ndcg: m.ndcg,
                epochs: out.state.epoch,
            };
            progress(&run);
            runs.push(run);
        }
    }
    Ok(runs)
}

pub fn summarize(runs: &[AblationRun]) -> Vec<VariantSummary> {
    let mut ids: Vec<usize> = runs.iter().map(|r| r.variant).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            let rs: Vec<&AblationRun> = runs.iter().filter(|r| r.variant == id).collect();
            VariantSummary {
                variant: variant(id).expect("known variant"),
                recalls: rs.iter().map(|r| r.recall).collect(),
                ndcgs: rs.iter().map(|r| r.ndcg).collect(),
            }
        })
        .collect()
}

/// Per-run rows followed by per-variant means, config echoed as comments.
pub fn ablation_csv(base: &RunConfig, runs: &[AblationRun], k: usize) -> String {
    let mut out = base.echo_commented();
    let _ = writeln!(out, "variant,name,seed,recall@{k},ndcg@{k}");
    for r in runs {
        let name = variant(r.variant).map_or("?", |v| v.name);
        let _ = writeln!(out, "{},{},{},{:.6},{:.6}", r.variant, name, r.seed, r.recall, r.ndcg);
    }
    for s in summarize(runs) {
        let _ = writeln!(
            out,
            "{},{},mean,{:.6},{:.6}",
            s.variant.id,
            s.variant.name,
            s.mean_recall(),
            s.mean_ndcg()
        );
    }
    out
}

/// Generated U-I margins for one (user, positive) with a same-label and a
/// different-label negative.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRow {
    pub user: u32,
    pub positive: u32,
    pub similar_negative: u32,
    pub dissimilar_negative: u32,
    pub margin_similar: f64,
    pub margin_dissimilar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudy {
    pub rows: Vec<CaseRow>,
}

impl CaseStudy {
    pub fn mean_similar(&self) -> f64 {
        stats::mean(&self.rows.iter().map(|r| r.margin_similar).collect::<Vec<_>>())
    }

    pub fn mean_dissimilar(&self) -> f64 {
        stats::mean(&self.rows.iter().map(|r| r.margin_dissimilar).collect::<Vec<_>>())
    }

    /// Table with external ids, sorted by user.
    pub fn to_csv(&self, user_ids: &[String], item_ids: &[String]) -> String {
        let mut out = String::from("user,positive,similar_negative,margin_similar,dissimilar_negative,margin_dissimilar\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{:.6}",
                user_ids[r.user as usize],
                item_ids[r.positive as usize],
                item_ids[r.similar_negative as usize],
                r.margin_similar,
                item_ids[r.dissimilar_negative as usize],
                r.margin_dissimilar
            );
        }
        out
    }
}

fn shares_label(a: &[String], b: &[String]) -> bool {
    a.iter().any(|x| b.contains(x))
}

/// For up to `max_users` randomly chosen users (all when 0), draw
/// `per_user` tuples: a training positive, an unaccessed item sharing a
/// label with it and an unaccessed item sharing none. Margins come from the
/// U-I network evaluated on the embedding means (no sampling noise).
/// Users without a valid tuple are skipped. Rows are sorted by user index.
pub fn case_study(
    model: &Model,
    mode: IndicatorMode,
    accessed: &Csr,
    train: &Csr,
    labels: &[Vec<String>],
    max_users: usize,
    per_user: usize,
    seed: u64,
) -> Result<CaseStudy> {
    let net = model
        .net(Relation::UserItem)
        .ok_or_else(|| Error::Config("case study needs an adaptive U-I margin network".into()))?;
    let theta = &model.theta;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users: Vec<usize> = (0..train.n_rows()).collect();
    if max_users > 0 && max_users < users.len() {
        users.shuffle(&mut rng);
        users.truncate(max_users);
        users.sort_unstable();
    }
    let mut rows = Vec::new();
    for u in users {
        let candidates: Vec<u32> = train.row(u).iter().copied().filter(|&i| !labels[i as usize].is_empty()).collect();
        for _ in 0..per_user {
            let Some(&p) = candidates.choose(&mut rng) else { break };
            let pl = &labels[p as usize];
            let unseen = |i: &u32| !accessed.contains(u, *i) && !labels[*i as usize].is_empty();
            let similar: Vec<u32> = (0..accessed.n_cols as u32)
                .filter(|i| unseen(i) && shares_label(pl, &labels[*i as usize]))
                .collect();
            let dissimilar: Vec<u32> = (0..accessed.n_cols as u32)
                .filter(|i| unseen(i) && !shares_label(pl, &labels[*i as usize]))
                .collect();
            let (Some(&s), Some(&d)) = (similar.choose(&mut rng), dissimilar.choose(&mut rng)) else {
                continue;
            };
            let user = theta.users.mu_row(u);
            let pos = theta.items.mu_row(p as usize);
            let margin = |n: u32| net.forward(&indicator(mode, user, pos, theta.items.mu_row(n as usize)).s).0;
            rows.push(CaseRow {
                user: u as u32,
                positive: p,
                similar_negative: s,
                dissimilar_negative: d,
                margin_similar: margin(s),
                margin_dissimilar: margin(d),
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("no user has both a same-label and a different-label negative".into()));
    }
    Ok(CaseStudy { rows })
}
