//! Alternating optimisation of the embeddings Θ and the margin networks Φ.
//!
//! Each iteration runs the inner objective at Θ, forms the one-step proxy
//! Θ̃ = Θ − α∇_Θ J_inner, and differentiates the outer loss at Θ̃ with respect
//! to Φ. The mixed second derivative is replaced by a central difference of
//! ∇_Φ J_inner along v = ∇J_outer(Θ̃):
//!
//! ```text
//! g_Φ ≈ −α [∇_Φ J_inner(Θ + εv) − ∇_Φ J_inner(Θ − εv)] / (2ε),   ε = ε_fd / ‖v‖
//! ```
//!
//! Then Θ takes an optimizer step (and is projected) and Φ takes one step on
//! g_Φ + 2λΦ.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{MarginMode, Optimization, OuterBatch, RunConfig};
use crate::data::FoldSplit;
use crate::distance::DistanceKind;
use crate::embeddings::Theta;
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_fold, FoldEval};
use crate::losses::{batch_outer, batch_pass, combined, LossReport, Margin, PassOptions, Relation, RelationReport, TripletBatch};
use crate::margin_net::{IndicatorMode, MarginNetParams};
use crate::optim::OptimizerState;
use crate::sampler::{epoch_batches, RelationSource, TripletSampler};
use crate::simgraph::NeighborSets;

/// Parameter containers the hypergradient engine can perturb.
pub trait ParamVector: Clone {
    /// `self += a · x`
    fn axpy(&mut self, a: f64, x: &Self);
    fn norm(&self) -> f64;
    /// Repair a perturbed copy so objectives stay defined.
    fn sanitize(&mut self) {}
}

impl ParamVector for Vec<f64> {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.iter_mut().zip(x).for_each(|(s, v)| *s += a * v);
    }

    fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl ParamVector for Theta {
    fn axpy(&mut self, a: f64, x: &Self) {
        Theta::axpy(self, a, x);
    }

    fn norm(&self) -> f64 {
        Theta::norm(self)
    }

    fn sanitize(&mut self) {
        self.floor_variances();
    }
}

/// An inner/outer pair with the outer variables Φ held fixed inside.
pub trait BilevelObjective {
    type Params: ParamVector;

    /// ∇_Θ J_inner(Θ, Φ)
    fn inner_grad(&self, theta: &Self::Params) -> Self::Params;
    /// ∇_Φ J_inner(Θ, Φ)
    fn inner_phi_grad(&self, theta: &Self::Params) -> Vec<f64>;
    /// J_outer(Θ̃) and its gradient.
    fn outer_grad(&self, theta_tilde: &Self::Params) -> (f64, Self::Params);
    fn phi_len(&self) -> usize;
}

/// Θ − α·grad, never projected.
pub fn build_proxy<P: ParamVector>(theta: &P, inner_grad: &P, alpha: f64) -> P {
    let mut t = theta.clone();
    t.axpy(-alpha, inner_grad);
    t.sanitize();
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypergradient {
    pub phi_grad: Vec<f64>,
    /// J_outer at the proxy.
    pub outer: f64,
    /// ‖∇J_outer(Θ̃)‖; zero means the perturbation was skipped.
    pub v_norm: f64,
}

/// Approximate dJ_outer(Θ̃(Φ))/dΦ given a precomputed ∇_Θ J_inner at Θ.
pub fn phi_hypergradient<O: BilevelObjective>(
    obj: &O,
    theta: &O::Params,
    inner_grad: &O::Params,
    alpha: f64,
    eps_fd: f64,
) -> Hypergradient {
    assert!(eps_fd > 0.0, "eps_fd must be positive");
    let proxy = build_proxy(theta, inner_grad, alpha);
    let (outer, v) = obj.outer_grad(&proxy);
    let v_norm = v.norm();
    if v_norm == 0.0 || alpha == 0.0 {
        return Hypergradient {
            phi_grad: vec![0.0; obj.phi_len()],
            outer,
            v_norm,
        };
    }
    let eps = eps_fd / v_norm;
    let mut plus = theta.clone();
    plus.axpy(eps, &v);
    plus.sanitize();
    let mut minus = theta.clone();
    minus.axpy(-eps, &v);
    minus.sanitize();
    let gp = obj.inner_phi_grad(&plus);
    let gm = obj.inner_phi_grad(&minus);
    let phi_grad = gp.iter().zip(&gm).map(|(p, m)| -alpha * (p - m) / (2.0 * eps)).collect();
    Hypergradient { phi_grad, outer, v_norm }
}

/// Same, computing the inner gradient itself.
pub fn phi_hypergradient_at<O: BilevelObjective>(obj: &O, theta: &O::Params, alpha: f64, eps_fd: f64) -> Hypergradient {
    let g = obj.inner_grad(theta);
    phi_hypergradient(obj, theta, &g, alpha, eps_fd)
}

/// One relation's inner (adaptive) and outer (m = 1) batch objectives.
pub struct RelationObjective<'a> {
    pub batch: &'a TripletBatch,
    pub outer_batch: &'a TripletBatch,
    pub net: &'a MarginNetParams,
    pub mode: IndicatorMode,
    pub noise: &'a [f64],
    pub kind: DistanceKind,
}

impl RelationObjective<'_> {
    fn margin(&self) -> Margin<'_> {
        Margin::Adaptive {
            net: self.net,
            mode: self.mode,
            noise: self.noise,
        }
    }
}

impl BilevelObjective for RelationObjective<'_> {
    type Params = Theta;

    fn inner_grad(&self, theta: &Theta) -> Theta {
        let opts = PassOptions {
            distance_grad: true,
            margin_grad: true,
            phi_grad: false,
        };
        batch_pass(self.batch, theta, self.kind, self.margin(), opts)
            .theta_grad(true)
            .expect("requested")
    }

    fn inner_phi_grad(&self, theta: &Theta) -> Vec<f64> {
        let opts = PassOptions {
            phi_grad: true,
            ..PassOptions::default()
        };
        batch_pass(self.batch, theta, self.kind, self.margin(), opts)
            .phi_grad
            .expect("requested")
    }

    fn outer_grad(&self, theta_tilde: &Theta) -> (f64, Theta) {
        let (stats, g) = batch_outer(self.outer_batch, theta_tilde, self.kind);
        (stats.loss, g)
    }

    fn phi_len(&self) -> usize {
        self.net.data.len()
    }
}

fn non_finite(phase: impl Into<String>, dump: String) -> Error {
    Error::NonFinite {
        phase: phase.into(),
        dump,
    }
}

/// One optimizer step on Θ followed by projection.
pub fn theta_step(theta: &mut Theta, grad: &Theta, opt: &mut OptimizerState) -> Result<()> {
    if !grad.is_finite() {
        return Err(non_finite("theta step", "non-finite Θ gradient".into()));
    }
    let grads = grad.slices();
    opt.step(&mut theta.slices_mut(), &grads);
    theta.project();
    if !theta.is_finite() {
        return Err(non_finite("theta step", "non-finite Θ after update".into()));
    }
    Ok(())
}

/// One optimizer step on Φ using `hypergrad + 2λΦ`.
pub fn phi_step(net: &mut MarginNetParams, hypergrad: &[f64], lambda: f64, opt: &mut OptimizerState) -> Result<()> {
    assert_eq!(hypergrad.len(), net.data.len(), "hypergradient length");
    let g: Vec<f64> = hypergrad.iter().zip(&net.data).map(|(g, p)| g + 2.0 * lambda * p).collect();
    if g.iter().any(|x| !x.is_finite()) {
        return Err(non_finite("phi step", "non-finite Φ gradient".into()));
    }
    opt.step(&mut [&mut net.data], &[&g]);
    if net.data.iter().any(|x| !x.is_finite()) {
        return Err(non_finite("phi step", "non-finite Φ after update".into()));
    }
    Ok(())
}

/// Embeddings plus one optional margin network per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub theta: Theta,
    pub nets: [Option<MarginNetParams>; 3],
}

impl Model {
    pub fn net(&self, relation: Relation) -> Option<&MarginNetParams> {
        self.nets[relation.index()].as_ref()
    }
}

/// Everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub theta_opt: OptimizerState,
    pub phi_opts: [Option<OptimizerState>; 3],
    pub rng: ChaCha8Rng,
    pub epoch: usize,
}

const STREAM_TRAIN: u64 = 0;
const STREAM_INIT: u64 = 1;

impl TrainState {
    /// Fresh parameters for `n_users × n_items`, deterministic in `cfg.seed`.
    pub fn init(cfg: &RunConfig, n_users: usize, n_items: usize) -> Self {
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_rng.set_stream(STREAM_INIT);
        let theta = Theta::init_with_std(n_users, n_items, cfg.h, &mut init_rng, cfg.init_std, cfg.sigma_init);
        let input = cfg.indicator_mode.input_dim(cfg.h);
        let mut nets: [Option<MarginNetParams>; 3] = [None, None, None];
        let mut phi_opts: [Option<OptimizerState>; 3] = [None, None, None];
        for rel in Relation::ALL {
            if cfg.uses(rel) && cfg.margin_for(rel).is_adaptive() {
                let net = MarginNetParams::init(input, cfg.hidden, &mut init_rng);
                phi_opts[rel.index()] = Some(OptimizerState::new(cfg.optimizer, cfg.phi_alpha, &[net.data.len()]));
                nets[rel.index()] = Some(net);
            }
        }
        let sizes: Vec<usize> = theta.slices().iter().map(|s| s.len()).collect();
        let theta_opt = OptimizerState::new(cfg.optimizer, cfg.alpha, &sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(STREAM_TRAIN);
        TrainState {
            model: Model { theta, nets },
            theta_opt,
            phi_opts,
            rng,
            epoch: 0,
        }
    }
}

/// Per-epoch means of the iteration reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub inner: f64,
    pub outer: f64,
    pub ui: f64,
    pub uu: f64,
    pub ii: f64,
    /// Mean generated U-I margin (the fixed value when margins are fixed).
    pub mean_margin: f64,
}

pub const TRACE_HEADER: &str = "epoch,inner,outer,ui,uu,ii,mean_margin";

impl TraceRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.epoch, self.inner, self.outer, self.ui, self.uu, self.ii, self.mean_margin
        )
    }
}

/// Loss trace as CSV with the config echoed as `#` comments.
pub fn trace_csv(cfg: &RunConfig, rows: &[TraceRow]) -> String {
    let mut out = cfg.echo_commented();
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv());
    }
    out
}

/// Neighbour sets needed by `cfg`, built from the fold's training matrix.
pub fn neighbor_sets(cfg: &RunConfig, fold: &FoldSplit) -> (Option<NeighborSets>, Option<NeighborSets>) {
    use crate::losses::Side;
    let users = cfg
        .uses(Relation::UserUser)
        .then(|| crate::simgraph::build(&fold.train, cfg.sim_threshold, Side::Users));
    let items = cfg
        .uses(Relation::ItemItem)
        .then(|| crate::simgraph::build(&fold.train.transpose(), cfg.sim_threshold, Side::Items));
    (users, items)
}

struct Prepared {
    relation: Relation,
    batch: TripletBatch,
    outer: Option<TripletBatch>,
    noise: Vec<f64>,
}

/// Training driver for one fold.
pub struct Trainer<'a> {
    pub cfg: RunConfig,
    pub fold: &'a FoldSplit,
    pub state: TrainState,
    sampler: TripletSampler,
    train_pairs: Vec<(u32, u32)>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: RunConfig,
        fold: &'a FoldSplit,
        user_nbrs: Option<&NeighborSets>,
        item_nbrs: Option<&NeighborSets>,
    ) -> Result<Self> {
        let state = TrainState::init(&cfg, fold.n_users(), fold.n_items());
        Self::resume(cfg, fold, user_nbrs, item_nbrs, state)
    }

    pub fn resume(
        cfg: RunConfig,
        fold: &'a FoldSplit,
        user_nbrs: Option<&NeighborSets>,
        item_nbrs: Option<&NeighborSets>,
        state: TrainState,
    ) -> Result<Self> {
        cfg.validate()?;
        if state.model.theta.users.len() != fold.n_users() || state.model.theta.items.len() != fold.n_items() {
            return Err(Error::Config("model shape does not match the dataset".into()));
        }
        let mut sources = vec![RelationSource::new(Relation::UserItem, fold.train.clone(), fold.n_items())];
        for (rel, nbrs) in [(Relation::UserUser, user_nbrs), (Relation::ItemItem, item_nbrs)] {
            if cfg.uses(rel) {
                let nbrs = nbrs.ok_or_else(|| Error::Config(format!("relation {rel} needs neighbour sets")))?;
                sources.push(RelationSource::new(rel, nbrs.lists.clone(), nbrs.len()));
            }
        }
        let mut sampler = TripletSampler::new(sources, cfg.neg_samples, cfg.pool_size, cfg.refresh_period, cfg.seed);
        sampler.begin_epoch(state.epoch);
        Ok(Trainer {
            train_pairs: fold.train_pairs(),
            cfg,
            fold,
            state,
            sampler,
        })
    }

    fn margin_mode(&self, rel: Relation) -> MarginMode {
        self.cfg.margin_for(rel)
    }

    fn prepare(&mut self, ui_pairs: &[(u32, u32)]) -> Vec<Prepared> {
        let h = self.cfg.h;
        let gaussian = self.cfg.distance_kind.is_gaussian();
        let mut out = Vec::new();
        for rel in Relation::ALL {
            if !self.cfg.uses(rel) {
                continue;
            }
            let rng = &mut self.state.rng;
            let pairs = match rel {
                Relation::UserItem => ui_pairs.to_vec(),
                _ => self.sampler.draw_pairs(rel, ui_pairs.len(), rng),
            };
            let batch = self.sampler.expand(rel, &pairs, rng);
            let outer = match self.cfg.outer_batch {
                OuterBatch::Same => None,
                OuterBatch::Fresh => {
                    let pairs = match rel {
                        Relation::UserItem => (0..ui_pairs.len())
                            .map(|_| self.train_pairs[rng.random_range(0..self.train_pairs.len())])
                            .collect(),
                        _ => self.sampler.draw_pairs(rel, ui_pairs.len(), rng),
                    };
                    Some(self.sampler.expand(rel, &pairs, rng))
                }
            };
            let noise = if gaussian && self.cfg.margin_for(rel).is_adaptive() {
                (0..batch.len() * 3 * h).map(|_| rng.sample(StandardNormal)).collect()
            } else {
                Vec::new()
            };
            out.push(Prepared {
                relation: rel,
                batch,
                outer,
                noise,
            });
        }
        out
    }

    /// One Θ update and one Φ update on the given U-I pairs.
    pub fn iterate(&mut self, ui_pairs: &[(u32, u32)]) -> Result<LossReport> {
        let prepared = self.prepare(ui_pairs);
        let cfg = &self.cfg;
        let kind = cfg.distance_kind;
        let theta = &self.state.model.theta;
        let mut grad = theta.zeros_like();
        let mut components: [Option<RelationReport>; 3] = [None, None, None];
        let mut phi_grads: [Option<Vec<f64>>; 3] = [None, None, None];

        for p in &prepared {
            let rel = p.relation;
            let outer_batch = p.outer.as_ref().unwrap_or(&p.batch);
            if p.batch.is_empty() {
                components[rel.index()] = Some(RelationReport::default());
                continue;
            }
            let net = self.state.model.net(rel);
            let adaptive = self.margin_mode(rel).is_adaptive();
            let joint = adaptive && cfg.optimization == Optimization::Joint;
            let bilevel = adaptive && cfg.optimization == Optimization::Bilevel;
            let margin = match (self.margin_mode(rel), net) {
                (MarginMode::Fixed(m), _) => Margin::Fixed(m),
                (MarginMode::Adaptive, Some(net)) => Margin::Adaptive {
                    net,
                    mode: cfg.indicator_mode,
                    noise: &p.noise,
                },
                (MarginMode::Adaptive, None) => unreachable!("adaptive relation without a margin net"),
            };
            let theta_margin = adaptive && (cfg.margin_grad_to_theta || joint);
            let opts = PassOptions {
                distance_grad: true,
                margin_grad: theta_margin || bilevel,
                phi_grad: joint,
            };
            let res = batch_pass(&p.batch, theta, kind, margin, opts);
            if !res.stats.loss.is_finite() {
                return Err(non_finite(format!("inner {rel} pass"), p.batch.dump(8)));
            }
            grad.axpy(1.0, &res.theta_grad(theta_margin).expect("requested"));

            let outer = if bilevel {
                let obj = RelationObjective {
                    batch: &p.batch,
                    outer_batch,
                    net: net.expect("adaptive"),
                    mode: cfg.indicator_mode,
                    noise: &p.noise,
                    kind,
                };
                let full = res.theta_grad(true).expect("requested");
                let hg = phi_hypergradient(&obj, theta, &full, cfg.alpha, cfg.eps_fd);
                if hg.phi_grad.iter().any(|x| !x.is_finite()) {
                    return Err(non_finite(format!("{rel} hypergradient"), p.batch.dump(8)));
                }
                phi_grads[rel.index()] = Some(hg.phi_grad);
                hg.outer
            } else {
                if joint {
                    phi_grads[rel.index()] = res.phi_grad.clone();
                }
                batch_pass(outer_batch, theta, kind, Margin::Fixed(1.0), PassOptions::default()).stats.loss
            };
            components[rel.index()] = Some(RelationReport {
                inner: res.stats.loss,
                outer,
                active: res.stats.active,
                rows: res.stats.rows,
                mean_margin: res.stats.mean_margin,
            });
        }

        let state = &mut self.state;
        theta_step(&mut state.model.theta, &grad, &mut state.theta_opt).map_err(|e| with_dump(e, &prepared))?;
        for rel in Relation::ALL {
            if let (Some(g), Some(net), Some(opt)) = (
                &phi_grads[rel.index()],
                state.model.nets[rel.index()].as_mut(),
                state.phi_opts[rel.index()].as_mut(),
            ) {
                phi_step(net, g, cfg.lambda, opt).map_err(|e| with_dump(e, &prepared))?;
            }
        }
        let phis: Vec<&MarginNetParams> = state.model.nets.iter().flatten().collect();
        Ok(combined(components, cfg.lambda, &phis))
    }

    /// One pass over the shuffled U-I training pairs.
    pub fn run_epoch(&mut self) -> Result<TraceRow> {
        self.sampler.begin_epoch(self.state.epoch);
        let batches = epoch_batches(&self.train_pairs, self.cfg.batch_size, &mut self.state.rng);
        let mut sums = [0.0f64; 6];
        for pairs in &batches {
            let rep = self.iterate(pairs)?;
            let comp = |r: Relation| rep.component(r).map_or(0.0, |c| c.inner);
            let ui = rep.component(Relation::UserItem).copied().unwrap_or_default();
            for (s, v) in sums.iter_mut().zip([
                rep.inner_total,
                rep.outer_total,
                comp(Relation::UserItem),
                comp(Relation::UserUser),
                comp(Relation::ItemItem),
                ui.mean_margin,
            ]) {
                *s += v;
            }
        }
        self.state.epoch += 1;
        let n = batches.len().max(1) as f64;
        Ok(TraceRow {
            epoch: self.state.epoch,
            inner: sums[0] / n,
            outer: sums[1] / n,
            ui: sums[2] / n,
            uu: sums[3] / n,
            ii: sums[4] / n,
            mean_margin: sums[5] / n,
        })
    }

    pub fn evaluate(&self) -> FoldEval {
        evaluate_fold(&self.state.model.theta, self.fold, &self.cfg.ks, self.cfg.distance_kind)
    }
}

fn with_dump(e: Error, prepared: &[Prepared]) -> Error {
    match e {
        Error::NonFinite { phase, mut dump } => {
            for p in prepared {
                dump.push('\n');
                dump.push_str(&p.batch.dump(4));
            }
            Error::NonFinite { phase, dump }
        }
        other => other,
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub trace: Vec<TraceRow>,
    /// (epoch, evaluation) every `eval_every` epochs.
    pub evals: Vec<(usize, FoldEval)>,
    pub stopped_early: bool,
}

/// Cutoff monitored for early stopping: 10 if evaluated, else the first K.
fn monitor_k(ks: &[usize]) -> usize {
    if ks.contains(&10) {
        10
    } else {
        ks[0]
    }
}

/// Train for `cfg.epochs` epochs (from a fresh state), calling `on_epoch`
/// after each epoch.
pub fn train(
    cfg: &RunConfig,
    fold: &FoldSplit,
    user_nbrs: Option<&NeighborSets>,
    item_nbrs: Option<&NeighborSets>,
    on_epoch: impl FnMut(&TraceRow, Option<&FoldEval>),
) -> Result<TrainOutcome> {
    let trainer = Trainer::new(cfg.clone(), fold, user_nbrs, item_nbrs)?;
    continue_training(trainer, cfg.epochs, on_epoch)
}

/// Run `epochs` more epochs of an existing trainer.
pub fn continue_training(
    mut trainer: Trainer<'_>,
    epochs: usize,
    mut on_epoch: impl FnMut(&TraceRow, Option<&FoldEval>),
) -> Result<TrainOutcome> {
    let mut trace = Vec::with_capacity(epochs);
    let mut evals: Vec<(usize, FoldEval)> = Vec::new();
    let (every, patience) = (trainer.cfg.eval_every, trainer.cfg.early_stop_patience);
    let k = monitor_k(&trainer.cfg.ks);
    let (mut best, mut since_best) = (f64::NEG_INFINITY, 0usize);
    let mut stopped_early = false;
    for _ in 0..epochs {
        let row = trainer.run_epoch()?;
        trace.push(row);
        let mut eval = None;
        if every > 0 && row.epoch % every == 0 {
            let e = trainer.evaluate();
            let r = e.at(k).map_or(0.0, |m| m.recall);
            if r > best {
                best = r;
                since_best = 0;
            } else {
                since_best += 1;
            }
            evals.push((row.epoch, e));
            eval = evals.last().map(|(_, e)| e);
        }
        on_epoch(&row, eval);
        if patience > 0 && since_best >= patience {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        state: trainer.state,
        trace,
        evals,
        stopped_early,
    })
}
