//! Run configuration: defaults, flat `key = value` parsing and echo.
//!
//! Keys may be written with `-` or `_`. Lines starting with `#` are comments.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::distance::DistanceKind;
use crate::error::{Error, Result};
use crate::losses::Relation;
use crate::margin_net::IndicatorMode;
use crate::optim::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginMode {
    Fixed(f64),
    Adaptive,
}

impl MarginMode {
    pub fn is_adaptive(self) -> bool {
        matches!(self, MarginMode::Adaptive)
    }
}

impl fmt::Display for MarginMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarginMode::Fixed(m) => write!(f, "fixed:{m}"),
            MarginMode::Adaptive => f.write_str("adaptive"),
        }
    }
}

impl FromStr for MarginMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "adaptive" {
            return Ok(MarginMode::Adaptive);
        }
        if s == "fixed" {
            return Ok(MarginMode::Fixed(1.0));
        }
        match s.strip_prefix("fixed:") {
            Some(m) => {
                let m: f64 = m.parse().map_err(|_| format!("bad fixed margin `{m}`"))?;
                if m.is_finite() && m >= 0.0 {
                    Ok(MarginMode::Fixed(m))
                } else {
                    Err(format!("fixed margin must be finite and ≥ 0, got {m}"))
                }
            }
            None => Err(format!("unknown margin mode `{s}` (fixed[:m] | adaptive)")),
        }
    }
}

/// Whether J_outer uses the inner mini-batch or a freshly drawn one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterBatch {
    Same,
    Fresh,
}

/// Bilevel (proxy hypergradient) or joint minimisation of the adaptive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimization {
    Bilevel,
    Joint,
}

macro_rules! simple_enum_text {
    ($t:ty, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    other => Err(format!("unknown value `{other}`")),
                }
            }
        }
    };
}

simple_enum_text!(OuterBatch, OuterBatch::Same => "same", OuterBatch::Fresh => "fresh");
simple_enum_text!(Optimization, Optimization::Bilevel => "bilevel", Optimization::Joint => "joint");

pub fn parse_relations(s: &str) -> std::result::Result<Vec<Relation>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let r = match part.to_ascii_lowercase().replace('-', "").as_str() {
            "ui" => Relation::UserItem,
            "uu" => Relation::UserUser,
            "ii" => Relation::ItemItem,
            other => return Err(format!("unknown relation `{other}` (ui, uu, ii)")),
        };
        if !out.contains(&r) {
            out.push(r);
        }
    }
    out.sort();
    Ok(out)
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut ks: Vec<usize> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| format!("bad cutoff `{p}`")))
        .collect::<std::result::Result<_, _>>()?;
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(format!("bad boolean `{other}`")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub h: usize,
    pub hidden: usize,
    /// Θ step size; also the proxy step.
    pub alpha: f64,
    /// Φ step size.
    pub phi_alpha: f64,
    pub lambda: f64,
    pub epochs: usize,
    /// (anchor, positive) pairs per U-I mini-batch.
    pub batch_size: usize,
    pub neg_samples: usize,
    /// Candidate negatives per anchor; 0 uses the whole complement.
    pub pool_size: usize,
    pub refresh_period: usize,
    pub sim_threshold: f64,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub split_seed: u64,
    pub fold: usize,
    pub distance_kind: DistanceKind,
    pub margin_mode: MarginMode,
    /// Margin of the U-U / I-I losses; `None` follows `margin_mode`.
    pub relation_margin_mode: Option<MarginMode>,
    pub relations: Vec<Relation>,
    pub indicator_mode: IndicatorMode,
    pub optimizer: OptimizerKind,
    pub init_std: f64,
    pub sigma_init: f64,
    pub eps_fd: f64,
    pub margin_grad_to_theta: bool,
    pub outer_batch: OuterBatch,
    pub optimization: Optimization,
    pub eval_every: usize,
    pub early_stop_patience: usize,
    pub deterministic: bool,
    pub rating_threshold: f64,
    pub min_user: usize,
    pub min_item: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            h: 50,
            hidden: 50,
            alpha: 0.001,
            phi_alpha: 0.001,
            lambda: 0.001,
            epochs: 100,
            batch_size: 5000,
            neg_samples: 2,
            pool_size: 500,
            refresh_period: 20,
            sim_threshold: 0.2,
            ks: crate::evaluator::DEFAULT_KS.to_vec(),
            seed: 1,
            split_seed: 2020,
            fold: 0,
            distance_kind: DistanceKind::W2Squared,
            margin_mode: MarginMode::Adaptive,
            relation_margin_mode: None,
            relations: Relation::ALL.to_vec(),
            indicator_mode: IndicatorMode::SquaredDiff,
            optimizer: OptimizerKind::Adam,
            init_std: crate::embeddings::INIT_STD,
            sigma_init: crate::embeddings::SIGMA_INIT,
            eps_fd: 1e-2,
            margin_grad_to_theta: false,
            outer_batch: OuterBatch::Same,
            optimization: Optimization::Bilevel,
            eval_every: 0,
            early_stop_patience: 0,
            deterministic: false,
            rating_threshold: crate::data::DEFAULT_RATING_THRESHOLD,
            min_user: crate::data::DEFAULT_MIN_USER,
            min_item: crate::data::DEFAULT_MIN_ITEM,
        }
    }
}

/// Keys accepted by [`RunConfig::set`], in echo order.
pub const KEYS: &[&str] = &[
    "h",
    "hidden",
    "alpha",
    "phi_alpha",
    "lambda",
    "epochs",
    "batch_size",
    "neg_samples",
    "pool_size",
    "refresh_period",
    "sim_threshold",
    "ks",
    "seed",
    "split_seed",
    "fold",
    "distance_kind",
    "margin_mode",
    "relation_margin_mode",
    "relations",
    "indicator_mode",
    "optimizer",
    "init_std",
    "sigma_init",
    "eps_fd",
    "margin_grad_to_theta",
    "outer_batch",
    "optimization",
    "eval_every",
    "early_stop_patience",
    "deterministic",
    "rating_threshold",
    "min_user",
    "min_item",
];

pub fn normalize_key(key: &str) -> String {
    let k = key.trim().trim_start_matches("--").to_ascii_lowercase().replace('-', "_");
    match k.as_str() {
        "distance" => "distance_kind".into(),
        "indicator" => "indicator_mode".into(),
        "k" => "ks".into(),
        _ => k,
    }
}

impl RunConfig {
    /// Margin mode of `relation`.
    pub fn margin_for(&self, relation: Relation) -> MarginMode {
        match relation {
            Relation::UserItem => self.margin_mode,
            _ => self.relation_margin_mode.unwrap_or(self.margin_mode),
        }
    }

    pub fn uses(&self, relation: Relation) -> bool {
        self.relations.contains(&relation)
    }

    /// Set one key from text.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let v = value.trim();
        let bad = |e: String| Error::Config(format!("{key}: {e}"));
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad number `{v}`"))
        }
        match key.as_str() {
            "h" => self.h = num(v).map_err(bad)?,
            "hidden" => self.hidden = num(v).map_err(bad)?,
            "alpha" => self.alpha = num(v).map_err(bad)?,
            "phi_alpha" => self.phi_alpha = num(v).map_err(bad)?,
            "lambda" => self.lambda = num(v).map_err(bad)?,
            "epochs" => self.epochs = num(v).map_err(bad)?,
            "batch_size" => self.batch_size = num(v).map_err(bad)?,
            "neg_samples" => self.neg_samples = num(v).map_err(bad)?,
            "pool_size" => self.pool_size = num(v).map_err(bad)?,
            "refresh_period" => self.refresh_period = num(v).map_err(bad)?,
            "sim_threshold" => self.sim_threshold = num(v).map_err(bad)?,
            "ks" => self.ks = parse_list(v).map_err(bad)?,
            "seed" => self.seed = num(v).map_err(bad)?,
            "split_seed" => self.split_seed = num(v).map_err(bad)?,
            "fold" => self.fold = num(v).map_err(bad)?,
            "distance_kind" => self.distance_kind = v.parse().map_err(bad)?,
            "margin_mode" => self.margin_mode = v.parse().map_err(bad)?,
            "relation_margin_mode" => {
                self.relation_margin_mode = match v {
                    "" | "same" => None,
                    _ => Some(v.parse().map_err(bad)?),
                }
            }
            "relations" => self.relations = parse_relations(v).map_err(bad)?,
            "indicator_mode" => self.indicator_mode = v.parse().map_err(bad)?,
            "optimizer" => self.optimizer = v.parse().map_err(bad)?,
            "init_std" => self.init_std = num(v).map_err(bad)?,
            "sigma_init" => self.sigma_init = num(v).map_err(bad)?,
            "eps_fd" => self.eps_fd = num(v).map_err(bad)?,
            "margin_grad_to_theta" => self.margin_grad_to_theta = parse_bool(v).map_err(bad)?,
            "outer_batch" => self.outer_batch = v.parse().map_err(bad)?,
            "optimization" => self.optimization = v.parse().map_err(bad)?,
            "eval_every" => self.eval_every = num(v).map_err(bad)?,
            "early_stop_patience" => self.early_stop_patience = num(v).map_err(bad)?,
            "deterministic" => self.deterministic = parse_bool(v).map_err(bad)?,
            "rating_threshold" => self.rating_threshold = num(v).map_err(bad)?,
            "min_user" => self.min_user = num(v).map_err(bad)?,
            "min_item" => self.min_item = num(v).map_err(bad)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let key = normalize_key(key);
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        Some(match key.as_str() {
            "h" => self.h.to_string(),
            "hidden" => self.hidden.to_string(),
            "alpha" => self.alpha.to_string(),
            "phi_alpha" => self.phi_alpha.to_string(),
            "lambda" => self.lambda.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "neg_samples" => self.neg_samples.to_string(),
            "pool_size" => self.pool_size.to_string(),
            "refresh_period" => self.refresh_period.to_string(),
            "sim_threshold" => self.sim_threshold.to_string(),
            "ks" => join(&self.ks),
            "seed" => self.seed.to_string(),
            "split_seed" => self.split_seed.to_string(),
            "fold" => self.fold.to_string(),
            "distance_kind" => self.distance_kind.to_string(),
            "margin_mode" => self.margin_mode.to_string(),
            "relation_margin_mode" => self.relation_margin_mode.map_or("same".into(), |m| m.to_string()),
            "relations" => self.relations.iter().map(|r| r.short_name()).collect::<Vec<_>>().join(","),
            "indicator_mode" => self.indicator_mode.to_string(),
            "optimizer" => self.optimizer.to_string(),
            "init_std" => self.init_std.to_string(),
            "sigma_init" => self.sigma_init.to_string(),
            "eps_fd" => self.eps_fd.to_string(),
            "margin_grad_to_theta" => self.margin_grad_to_theta.to_string(),
            "outer_batch" => self.outer_batch.to_string(),
            "optimization" => self.optimization.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "early_stop_patience" => self.early_stop_patience.to_string(),
            "deterministic" => self.deterministic.to_string(),
            "rating_threshold" => self.rating_threshold.to_string(),
            "min_user" => self.min_user.to_string(),
            "min_item" => self.min_item.to_string(),
            _ => return None,
        })
    }

    /// Apply `key = value` lines.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("invalid config: "))))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.merge_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every key as `key = value`, one per line.
    pub fn echo(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// The echo with each line prefixed by `# `, for artifact headers.
    pub fn echo_commented(&self) -> String {
        self.echo().lines().map(|l| format!("# {l}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.h == 0 || self.hidden == 0 {
            return err("h and hidden must be at least 1");
        }
        for (name, v) in [("alpha", self.alpha), ("phi_alpha", self.phi_alpha), ("eps_fd", self.eps_fd)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return err("lambda must be ≥ 0");
        }
        if self.batch_size == 0 || self.neg_samples == 0 {
            return err("batch_size and neg_samples must be at least 1");
        }
        if self.pool_size != 0 && self.pool_size < self.neg_samples {
            return err("pool_size must be 0 or at least neg_samples");
        }
        if !(self.sim_threshold > 0.0 && self.sim_threshold <= 1.0) {
            return err("sim_threshold must lie in (0, 1]");
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return err("ks must be a nonempty list of positive cutoffs");
        }
        if self.fold >= crate::data::FOLD_COUNT {
            return err("fold must be in 0..5");
        }
        if !self.relations.contains(&Relation::UserItem) {
            return err("relations must include ui");
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return err("init_std must be ≥ 0");
        }
        if !(self.sigma_init >= crate::embeddings::SIGMA_MIN && self.sigma_init <= 1.0) {
            return err("sigma_init must lie in [1e-6, 1]");
        }
        if !(1.0..=5.0).contains(&self.rating_threshold) {
            return err("rating_threshold must lie in [1, 5]");
        }
        if self.min_user == 0 || self.min_item == 0 {
            return err("min_user and min_item must be at least 1");
        }
        Ok(())
    }
}
