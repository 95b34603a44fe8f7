use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use pmlam::bilevel;
use pmlam::checkpoint::Checkpoint;
use pmlam::config::RunConfig;
use pmlam::data::{self, FoldAssignment, FoldSplit, InteractionDataset};
use pmlam::evaluator::{self, EvalReport, Ranker};
use pmlam::experiments;
use pmlam::losses::{Relation, Side};
use pmlam::planted::{self, PlantedSpec};
use pmlam::simgraph::{self, NeighborSets};

use crate::flags::ConfigFlags;

const FOLDS_FILE: &str = "folds.txt";
const LABELS_FILE: &str = "labels.tsv";
const PREPARE_FILE: &str = "prepare.cfg";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

struct Loaded {
    dataset: InteractionDataset,
    folds: FoldAssignment,
}

impl Loaded {
    fn open(dir: &Path) -> Result<Self> {
        let dataset = InteractionDataset::load(dir)?;
        let folds = FoldAssignment::load(&dir.join(FOLDS_FILE), &dataset)?;
        Ok(Loaded { dataset, folds })
    }

    fn fold(&self, index: usize) -> Result<FoldSplit> {
        if index >= data::FOLD_COUNT {
            bail!(pmlam::Error::Config(format!("fold must be below {}", data::FOLD_COUNT)));
        }
        Ok(self.folds.split(&self.dataset, index))
    }
}

fn parse_planted(spec: &str, seed: u64) -> Result<PlantedSpec> {
    let parts: Vec<usize> = spec
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| pmlam::Error::Config(format!("bad planted spec `{spec}`")))?;
    let [n_users, n_items, n_clusters, per_user, cross_per_user] = parts[..] else {
        bail!(pmlam::Error::Config(
            "planted spec is USERS,ITEMS,CLUSTERS,PER_USER,CROSS".into()
        ));
    };
    if n_clusters == 0 || n_clusters > n_users.min(n_items) {
        bail!(pmlam::Error::Config("clusters must be between 1 and min(users, items)".into()));
    }
    Ok(PlantedSpec {
        n_users,
        n_items,
        n_clusters,
        per_user,
        cross_per_user,
        seed,
    })
}

pub fn prepare(
    ratings: Option<&Path>,
    planted_spec: Option<&str>,
    labels: Option<&Path>,
    out: &Path,
    flags: &ConfigFlags,
) -> Result<()> {
    let cfg = flags.resolve()?;
    let mut planted_labels = None;
    let dataset = match (ratings, planted_spec) {
        (Some(path), _) => {
            let pairs = data::ingest(path, cfg.rating_threshold)?;
            data::filter_iterative(&pairs, cfg.min_user, cfg.min_item)?
        }
        (None, Some(spec)) => {
            let p = planted::generate(&parse_planted(spec, cfg.seed)?);
            planted_labels = Some(p.labels_file());
            p.dataset
        }
        (None, None) => bail!(pmlam::Error::Config("either --ratings or --planted is required".into())),
    };
    create_dir(out)?;
    dataset.save(out)?;
    let folds = data::assign_folds(&dataset, cfg.split_seed);
    folds.save(&out.join(FOLDS_FILE))?;
    write(&out.join(PREPARE_FILE), &cfg.echo())?;
    let label_text = match labels {
        Some(p) => {
            let found = data::load_labels(p, &dataset)?;
            let n = found.iter().filter(|l| !l.is_empty()).count();
            eprintln!("labels for {n} of {} items", dataset.n_items());
            Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
        }
        None => planted_labels,
    };
    if let Some(text) = label_text {
        write(&out.join(LABELS_FILE), &text)?;
    }
    println!(
        "users {} items {} interactions {} density {:.6}",
        dataset.n_users(),
        dataset.n_items(),
        dataset.n_interactions(),
        dataset.density()
    );
    println!("hash {}", dataset.content_hash());
    Ok(())
}

/// Neighbour sets for the relations `cfg` uses, cached next to the dataset.
fn neighbors(dir: &Path, hash: &str, cfg: &RunConfig, fold: &FoldSplit) -> Result<(Option<NeighborSets>, Option<NeighborSets>)> {
    let get = |side: Side, file: String| -> Result<NeighborSets> {
        let key = simgraph::cache_key(hash, fold.fold_index, side, cfg.sim_threshold);
        let matrix = match side {
            Side::Users => fold.train.clone(),
            Side::Items => fold.train.transpose(),
        };
        Ok(simgraph::load_or_build(&dir.join(file), &key, &matrix, cfg.sim_threshold, side)?)
    };
    let f = fold.fold_index;
    let users = cfg
        .uses(Relation::UserUser)
        .then(|| get(Side::Users, format!("neighbors-fold{f}-users.bin")))
        .transpose()?;
    let items = cfg
        .uses(Relation::ItemItem)
        .then(|| get(Side::Items, format!("neighbors-fold{f}-items.bin")))
        .transpose()?;
    Ok((users, items))
}

/// Resolve the config against the dataset: its fold seed wins.
fn bind_split_seed(cfg: &mut RunConfig, flags: &ConfigFlags, folds: &FoldAssignment) -> Result<()> {
    if flags.is_set("split_seed") && cfg.split_seed != folds.seed {
        bail!(pmlam::Error::Config(format!(
            "dataset was split with seed {}; rerun prepare to change it",
            folds.seed
        )));
    }
    cfg.split_seed = folds.seed;
    if cfg.deterministic {
        pmlam::exec::set_parallel(false);
    }
    Ok(())
}

fn report_csv(cfg: &RunConfig, report: &EvalReport) -> String {
    let mut s = cfg.echo_commented();
    s.push_str(&report.to_csv());
    s
}

pub fn train(dir: &Path, out: &Path, flags: &ConfigFlags) -> Result<()> {
    let mut cfg = flags.resolve()?;
    let loaded = Loaded::open(dir)?;
    bind_split_seed(&mut cfg, flags, &loaded.folds)?;
    let fold = loaded.fold(cfg.fold)?;
    let hash = loaded.dataset.content_hash();
    let (users, items) = neighbors(dir, &hash, &cfg, &fold)?;
    create_dir(out)?;
    let start = Instant::now();
    let outcome = bilevel::train(&cfg, &fold, users.as_ref(), items.as_ref(), |row, eval| {
        let mut line = format!(
            "epoch {:>4}  inner {:.5}  outer {:.5}  margin {:.4}",
            row.epoch, row.inner, row.outer, row.mean_margin
        );
        if let Some(m) = eval.and_then(|e| e.at(10).or_else(|| e.metrics.first().copied())) {
            let _ = write!(line, "  R@{} {:.4}  N@{} {:.4}", m.k, m.recall, m.k, m.ndcg);
        }
        eprintln!("{line}");
    })?;
    if outcome.stopped_early {
        eprintln!("stopped early after epoch {}", outcome.state.epoch);
    }
    write(&out.join("trace.csv"), &bilevel::trace_csv(&cfg, &outcome.trace))?;
    let eval = evaluator::evaluate_fold(&outcome.state.model.theta, &fold, &cfg.ks, cfg.distance_kind);
    let report = EvalReport {
        ks: cfg.ks.clone(),
        folds: vec![eval],
    };
    write(&out.join("eval.csv"), &report_csv(&cfg, &report))?;
    let ckpt = Checkpoint {
        config: cfg,
        fold: fold.fold_index,
        state: outcome.state,
    };
    ckpt.save(&out.join("model.ckpt"))?;
    print!("{report}");
    eprintln!("trained in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn load_checkpoint(path: &Path, loaded: &Loaded) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    let theta = &ck.state.model.theta;
    if theta.users.len() != loaded.dataset.n_users() || theta.items.len() != loaded.dataset.n_items() {
        bail!(pmlam::Error::Config(format!(
            "checkpoint is for {} users × {} items, dataset has {} × {}",
            theta.users.len(),
            theta.items.len(),
            loaded.dataset.n_users(),
            loaded.dataset.n_items()
        )));
    }
    Ok(ck)
}

pub fn evaluate(dir: &Path, checkpoint: &Path, ks: Option<Vec<usize>>, out: Option<&Path>) -> Result<()> {
    let loaded = Loaded::open(dir)?;
    let mut ck = load_checkpoint(checkpoint, &loaded)?;
    if let Some(ks) = ks {
        ck.config.ks = ks;
        ck.config.validate()?;
    }
    let fold = loaded.fold(ck.fold)?;
    let cfg = &ck.config;
    let eval = evaluator::evaluate_fold(&ck.state.model.theta, &fold, &cfg.ks, cfg.distance_kind);
    let report = EvalReport {
        ks: cfg.ks.clone(),
        folds: vec![eval],
    };
    print!("{report}");
    if let Some(out) = out {
        write(out, &report_csv(cfg, &report))?;
    }
    Ok(())
}

pub fn recommend(dir: &Path, checkpoint: &Path, user: &str, k: usize) -> Result<()> {
    let loaded = Loaded::open(dir)?;
    let ck = load_checkpoint(checkpoint, &loaded)?;
    let u = *loaded.dataset.user_index().get(user).ok_or_else(|| pmlam::Error::UnknownId {
        kind: "user",
        id: user.to_string(),
    })?;
    let fold = loaded.fold(ck.fold)?;
    let ranker = Ranker::new(&ck.state.model.theta, ck.config.distance_kind);
    for (rank, (item, d)) in ranker.rank(u, fold.train.row(u), Some(k)).into_iter().enumerate() {
        println!("{}\t{}\t{:.6}", rank + 1, loaded.dataset.item_ids[item as usize], d);
    }
    Ok(())
}

pub fn ablate(dir: &Path, out: &Path, variants: &[usize], seeds: &[u64], at: usize, flags: &ConfigFlags) -> Result<()> {
    let mut cfg = flags.resolve()?;
    let loaded = Loaded::open(dir)?;
    bind_split_seed(&mut cfg, flags, &loaded.folds)?;
    for &v in variants {
        experiments::variant_config(&cfg, v)?;
    }
    let fold = loaded.fold(cfg.fold)?;
    let start = Instant::now();
    let runs = experiments::run_ablation(&cfg, &fold, variants, seeds, at, |r| {
        eprintln!(
            "variant {} seed {}: R@{at} {:.4} N@{at} {:.4}  [{:.0}s]",
            r.variant,
            r.seed,
            r.recall,
            r.ndcg,
            start.elapsed().as_secs_f64()
        );
    })?;
    write(out, &experiments::ablation_csv(&cfg, &runs, at))?;
    println!("{:<4} {:<36} {:>9} {:>9}", "id", "variant", format!("R@{at}"), format!("N@{at}"));
    for s in experiments::summarize(&runs) {
        println!(
            "{:<4} {:<36} {:>9.4} {:>9.4}",
            s.variant.id,
            s.variant.name,
            s.mean_recall(),
            s.mean_ndcg()
        );
    }
    Ok(())
}

pub fn case_study(
    dir: &Path,
    checkpoint: &Path,
    labels: Option<&Path>,
    out: Option<&Path>,
    users: usize,
    per_user: usize,
    seed: u64,
) -> Result<()> {
    let loaded = Loaded::open(dir)?;
    let ck = load_checkpoint(checkpoint, &loaded)?;
    let labels_path: PathBuf = labels.map_or_else(|| dir.join(LABELS_FILE), Path::to_path_buf);
    let labels = data::load_labels(&labels_path, &loaded.dataset)?;
    let fold = loaded.fold(ck.fold)?;
    let study = experiments::case_study(
        &ck.state.model,
        ck.config.indicator_mode,
        &loaded.dataset.matrix,
        &fold.train,
        &labels,
        users,
        per_user,
        seed,
    )?;
    let mut csv = ck.config.echo_commented();
    csv.push_str(&study.to_csv(&loaded.dataset.user_ids, &loaded.dataset.item_ids));
    match out {
        Some(p) => write(p, &csv)?,
        None => print!("{csv}"),
    }
    println!(
        "rows {}  mean margin similar {:.6}  dissimilar {:.6}",
        study.rows.len(),
        study.mean_similar(),
        study.mean_dissimilar()
    );
    Ok(())
}
