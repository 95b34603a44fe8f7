//! Margin ranking losses and their batch objectives.
//!
//! A batch pass walks triplet rows in fixed-size chunks (possibly in
//! parallel), records each row's gradient contribution, and scatters the
//! records into dense buffers in row order. Results are therefore identical
//! whatever the thread count.

use std::fmt;

use crate::distance::{accumulate_grad, w2_squared_sqrt, DistanceKind};
use crate::embeddings::{GaussianTable, Theta};
use crate::exec;
use crate::margin_net::{indicator_backward, write_indicator, ForwardCache, IndicatorMode, MarginNetParams};

/// Which embedding table an index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Users,
    Items,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    UserItem,
    UserUser,
    ItemItem,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::UserItem, Relation::UserUser, Relation::ItemItem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn anchor_side(self) -> Side {
        match self {
            Relation::UserItem | Relation::UserUser => Side::Users,
            Relation::ItemItem => Side::Items,
        }
    }

    pub fn target_side(self) -> Side {
        match self {
            Relation::UserItem | Relation::ItemItem => Side::Items,
            Relation::UserUser => Side::Users,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Relation::UserItem => "ui",
            Relation::UserUser => "uu",
            Relation::ItemItem => "ii",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::UserItem => "U-I",
            Relation::UserUser => "U-U",
            Relation::ItemItem => "I-I",
        })
    }
}

/// Sampled (anchor, positive, negative) rows for one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub relation: Relation,
    pub anchors: Vec<u32>,
    pub positives: Vec<u32>,
    pub negatives: Vec<u32>,
}

impl TripletBatch {
    pub fn new(relation: Relation) -> Self {
        TripletBatch {
            relation,
            anchors: Vec::new(),
            positives: Vec::new(),
            negatives: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn push(&mut self, anchor: u32, positive: u32, negative: u32) {
        self.anchors.push(anchor);
        self.positives.push(positive);
        self.negatives.push(negative);
    }

    /// First rows of the batch, for error diagnostics.
    pub fn dump(&self, max_rows: usize) -> String {
        let mut out = format!("{} batch, {} rows\n", self.relation, self.len());
        for r in 0..self.len().min(max_rows) {
            out.push_str(&format!(
                "  {} {} {}\n",
                self.anchors[r], self.positives[r], self.negatives[r]
            ));
        }
        out
    }
}

/// `[d⁺ − d⁻ + m]₊`
pub fn loss_fixed(d2_pos: f64, d2_neg: f64, m: f64) -> f64 {
    debug_assert!(m >= 0.0);
    (d2_pos - d2_neg + m).max(0.0)
}

/// Same hinge with a generated margin.
pub fn loss_adaptive(d2_pos: f64, d2_neg: f64, m_generated: f64) -> f64 {
    debug_assert!(m_generated > 0.0);
    (d2_pos - d2_neg + m_generated).max(0.0)
}

/// How the margin of a batch pass is produced.
#[derive(Debug, Clone, Copy)]
pub enum Margin<'a> {
    Fixed(f64),
    Adaptive {
        net: &'a MarginNetParams,
        mode: IndicatorMode,
        /// Standard-normal noise, `3h` values per row (anchor, positive,
        /// negative). Ignored for deterministic embeddings.
        noise: &'a [f64],
    },
}

/// What a batch pass should differentiate.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassOptions {
    /// Gradient of the distance terms w.r.t. Θ.
    pub distance_grad: bool,
    /// Gradient of the margin w.r.t. Θ through the sampled embeddings.
    pub margin_grad: bool,
    /// Gradient w.r.t. the margin network parameters.
    pub phi_grad: bool,
}

/// Scalar summary of a batch pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PassStats {
    /// Mean hinge loss over the batch.
    pub loss: f64,
    pub rows: usize,
    pub active: usize,
    pub mean_margin: f64,
}

#[derive(Debug, Clone)]
pub struct PassResult {
    pub stats: PassStats,
    pub distance_grad: Option<Theta>,
    pub margin_grad: Option<Theta>,
    pub phi_grad: Option<Vec<f64>>,
}

impl PassResult {
    /// Sum of the requested Θ-gradient parts.
    pub fn theta_grad(&self, include_margin: bool) -> Option<Theta> {
        let mut g = self.distance_grad.clone()?;
        if include_margin {
            if let Some(m) = &self.margin_grad {
                g.axpy(1.0, m);
            }
        }
        Some(g)
    }
}

struct ChunkOut {
    rows: usize,
    loss: f64,
    active: usize,
    margin_sum: f64,
    /// Per row: `[a_mu, a_sigma, p_mu, p_sigma, n_mu, n_sigma]`, each `h` long.
    dist: Vec<f64>,
    marg: Vec<f64>,
    phi: Vec<f64>,
}

fn table(theta: &Theta, side: Side) -> &GaussianTable {
    match side {
        Side::Users => &theta.users,
        Side::Items => &theta.items,
    }
}

fn table_mut(theta: &mut Theta, side: Side) -> &mut GaussianTable {
    match side {
        Side::Users => &mut theta.users,
        Side::Items => &mut theta.items,
    }
}

/// Evaluate the mean hinge loss of `batch` at `theta` and the requested
/// gradients. Hinges at exactly zero count as inactive.
pub fn batch_pass(
    batch: &TripletBatch,
    theta: &Theta,
    kind: DistanceKind,
    margin: Margin<'_>,
    opts: PassOptions,
) -> PassResult {
    let h = theta.dim();
    let rows = batch.len();
    let gaussian = kind.is_gaussian();
    let (a_side, t_side) = (batch.relation.anchor_side(), batch.relation.target_side());
    let (a_tab, t_tab) = (table(theta, a_side), table(theta, t_side));
    let sqrt_users = gaussian.then(|| theta.users.sqrt_sigma());
    let sqrt_items = gaussian.then(|| theta.items.sqrt_sigma());
    let sqrt_of = |side: Side| match side {
        Side::Users => sqrt_users.as_deref(),
        Side::Items => sqrt_items.as_deref(),
    };
    let (a_sqrt, t_sqrt) = (sqrt_of(a_side), sqrt_of(t_side));
    if let Margin::Adaptive { noise, net, mode } = margin {
        assert_eq!(net.input_dim(), mode.input_dim(h), "margin net input dimension");
        if gaussian {
            assert!(noise.len() >= rows * 3 * h, "noise buffer too short");
        }
    }
    let need_margin_backward = matches!(margin, Margin::Adaptive { .. }) && (opts.margin_grad || opts.phi_grad);
    let row_len = 6 * h;
    let zeros = vec![0.0; h];

    let chunks = exec::map_chunks(rows, exec::BATCH_CHUNK, |range| {
        let n = range.len();
        let mut out = ChunkOut {
            rows: n,
            loss: 0.0,
            active: 0,
            margin_sum: 0.0,
            dist: if opts.distance_grad { vec![0.0; n * row_len] } else { Vec::new() },
            marg: if opts.margin_grad && need_margin_backward { vec![0.0; n * row_len] } else { Vec::new() },
            phi: match margin {
                Margin::Adaptive { net, .. } if opts.phi_grad => vec![0.0; net.data.len()],
                _ => Vec::new(),
            },
        };
        let mut u = vec![0.0; h];
        let mut vp = vec![0.0; h];
        let mut vn = vec![0.0; h];
        let (mut s, mut gs, mut cache) = match margin {
            Margin::Adaptive { net, .. } => (
                vec![0.0; net.input_dim()],
                vec![0.0; net.input_dim()],
                ForwardCache::new(net.hidden()),
            ),
            Margin::Fixed(_) => (Vec::new(), Vec::new(), ForwardCache::new(0)),
        };
        let mut du = vec![0.0; h];
        let mut dvp = vec![0.0; h];
        let mut dvn = vec![0.0; h];
        let mut scratch = Vec::new();
        let scale = 1.0 / rows as f64;

        for (local, r) in range.enumerate() {
            let (a, p, q) = (
                batch.anchors[r] as usize,
                batch.positives[r] as usize,
                batch.negatives[r] as usize,
            );
            let (mu_a, mu_p, mu_n) = (a_tab.mu_row(a), t_tab.mu_row(p), t_tab.mu_row(q));
            let (sq_a, sq_p, sq_n) = match (a_sqrt, t_sqrt) {
                (Some(sa), Some(st)) => (&sa[a * h..(a + 1) * h], &st[p * h..(p + 1) * h], &st[q * h..(q + 1) * h]),
                _ => (&zeros[..], &zeros[..], &zeros[..]),
            };
            let d_pos = w2_squared_sqrt(mu_a, sq_a, mu_p, sq_p);
            let d_neg = w2_squared_sqrt(mu_a, sq_a, mu_n, sq_n);

            let m = match margin {
                Margin::Fixed(m) => m,
                Margin::Adaptive { net, mode, noise } => {
                    if gaussian {
                        let e = &noise[r * 3 * h..(r + 1) * 3 * h];
                        for d in 0..h {
                            u[d] = mu_a[d] + sq_a[d] * e[d];
                            vp[d] = mu_p[d] + sq_p[d] * e[h + d];
                            vn[d] = mu_n[d] + sq_n[d] * e[2 * h + d];
                        }
                    } else {
                        u.copy_from_slice(mu_a);
                        vp.copy_from_slice(mu_p);
                        vn.copy_from_slice(mu_n);
                    }
                    write_indicator(mode, &u, &vp, &vn, &mut s);
                    net.forward_into(&s, &mut cache)
                }
            };
            out.margin_sum += m;
            let hinge = d_pos - d_neg + m;
            if hinge <= 0.0 {
                continue;
            }
            out.loss += hinge;
            out.active += 1;

            if opts.distance_grad {
                let rec = &mut out.dist[local * row_len..(local + 1) * row_len];
                let (ga_mu, rest) = rec.split_at_mut(h);
                let (ga_sig, rest) = rest.split_at_mut(h);
                let (gp_mu, rest) = rest.split_at_mut(h);
                let (gp_sig, rest) = rest.split_at_mut(h);
                let (gn_mu, gn_sig) = rest.split_at_mut(h);
                accumulate_grad(kind, scale, mu_a, sq_a, mu_p, sq_p, ga_mu, ga_sig, gp_mu, gp_sig);
                accumulate_grad(kind, -scale, mu_a, sq_a, mu_n, sq_n, ga_mu, ga_sig, gn_mu, gn_sig);
            }

            if need_margin_backward {
                let Margin::Adaptive { net, mode, noise } = margin else { unreachable!() };
                gs.iter_mut().for_each(|x| *x = 0.0);
                let gp = opts.phi_grad.then_some(&mut out.phi[..]);
                let g_in = opts.margin_grad.then_some(&mut gs[..]);
                net.backward_into(&s, &cache, scale, gp, g_in, &mut scratch);
                if opts.margin_grad {
                    du.iter_mut().chain(dvp.iter_mut()).chain(dvn.iter_mut()).for_each(|x| *x = 0.0);
                    indicator_backward(mode, &u, &vp, &vn, &gs, &mut du, &mut dvp, &mut dvn);
                    let rec = &mut out.marg[local * row_len..(local + 1) * row_len];
                    let e = gaussian.then(|| &noise[r * 3 * h..(r + 1) * 3 * h]);
                    for (slot, (g, sq)) in [(&du, sq_a), (&dvp, sq_p), (&dvn, sq_n)].into_iter().enumerate() {
                        let base = slot * 2 * h;
                        for d in 0..h {
                            rec[base + d] += g[d];
                        }
                        if let Some(e) = e {
                            // ∂u/∂σ = ε / (2√σ)
                            for d in 0..h {
                                rec[base + h + d] += g[d] * e[slot * h + d] / (2.0 * sq[d]);
                            }
                        }
                    }
                }
            }
        }
        out
    });

    let mut stats = PassStats {
        rows,
        ..PassStats::default()
    };
    let mut margin_sum = 0.0;
    let mut phi_grad = match margin {
        Margin::Adaptive { net, .. } if opts.phi_grad => Some(vec![0.0; net.data.len()]),
        _ => None,
    };
    let mut distance_grad = opts.distance_grad.then(|| theta.zeros_like());
    let mut margin_grad = (opts.margin_grad && need_margin_backward).then(|| theta.zeros_like());
    let mut row = 0;
    for chunk in &chunks {
        stats.loss += chunk.loss;
        stats.active += chunk.active;
        margin_sum += chunk.margin_sum;
        if let Some(g) = phi_grad.as_mut() {
            g.iter_mut().zip(&chunk.phi).for_each(|(a, b)| *a += b);
        }
        for (grad, records) in [(distance_grad.as_mut(), &chunk.dist), (margin_grad.as_mut(), &chunk.marg)] {
            if let Some(g) = grad {
                scatter(g, batch, row, records, h, a_side, t_side);
            }
        }
        row += chunk.rows;
    }
    if rows > 0 {
        stats.loss /= rows as f64;
        stats.mean_margin = margin_sum / rows as f64;
    }
    PassResult {
        stats,
        distance_grad,
        margin_grad,
        phi_grad,
    }
}

fn scatter(grad: &mut Theta, batch: &TripletBatch, first_row: usize, records: &[f64], h: usize, a_side: Side, t_side: Side) {
    let row_len = 6 * h;
    for (local, rec) in records.chunks(row_len).enumerate() {
        let r = first_row + local;
        let targets = [
            (a_side, batch.anchors[r] as usize),
            (t_side, batch.positives[r] as usize),
            (t_side, batch.negatives[r] as usize),
        ];
        for (slot, (side, idx)) in targets.into_iter().enumerate() {
            let tab = table_mut(grad, side);
            let base = slot * 2 * h;
            tab.mu_row_mut(idx)
                .iter_mut()
                .zip(&rec[base..base + h])
                .for_each(|(g, x)| *g += x);
            tab.sigma_row_mut(idx)
                .iter_mut()
                .zip(&rec[base + h..base + 2 * h])
                .for_each(|(g, x)| *g += x);
        }
    }
}

/// Per-relation part of a combined report.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelationReport {
    pub inner: f64,
    pub outer: f64,
    pub active: usize,
    pub rows: usize,
    pub mean_margin: f64,
}

/// Inner/outer objective values of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub inner_total: f64,
    pub outer_total: f64,
    /// `λ Σ ‖Φ‖_F²` included in `outer_total`.
    pub penalty: f64,
    pub components: [Option<RelationReport>; 3],
}

impl LossReport {
    pub fn component(&self, rel: Relation) -> Option<&RelationReport> {
        self.components[rel.index()].as_ref()
    }

    pub fn active(&self) -> usize {
        self.components.iter().flatten().map(|c| c.active).sum()
    }
}

/// Mean adaptive hinge loss over a batch, with Θ-gradient through the
/// distance terms only.
pub fn batch_inner(
    batch: &TripletBatch,
    theta: &Theta,
    net: &MarginNetParams,
    mode: IndicatorMode,
    noise: &[f64],
    kind: DistanceKind,
) -> (PassStats, Theta) {
    let res = batch_pass(
        batch,
        theta,
        kind,
        Margin::Adaptive { net, mode, noise },
        PassOptions {
            distance_grad: true,
            ..PassOptions::default()
        },
    );
    (res.stats, res.distance_grad.expect("requested"))
}

/// Mean fixed-margin (m = 1) hinge loss at proxy parameters.
pub fn batch_outer(batch: &TripletBatch, theta_tilde: &Theta, kind: DistanceKind) -> (PassStats, Theta) {
    let res = batch_pass(
        batch,
        theta_tilde,
        kind,
        Margin::Fixed(1.0),
        PassOptions {
            distance_grad: true,
            ..PassOptions::default()
        },
    );
    (res.stats, res.distance_grad.expect("requested"))
}

/// Sum per-relation components; the outer total also carries `λ Σ ‖Φ‖²`.
pub fn combined(components: [Option<RelationReport>; 3], lambda: f64, phis: &[&MarginNetParams]) -> LossReport {
    let penalty = lambda * phis.iter().map(|p| p.frob_sq()).sum::<f64>();
    let inner_total = components.iter().flatten().map(|c| c.inner).sum();
    let outer_total = components.iter().flatten().map(|c| c.outer).sum::<f64>() + penalty;
    LossReport {
        inner_total,
        outer_total,
        penalty,
        components,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::SIGMA_INIT;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn fixed_hinge_examples() {
        assert_eq!(loss_fixed(0.5, 2.0, 1.0), 0.0);
        assert_eq!(loss_fixed(2.0, 0.5, 1.0), 2.5);
        assert_eq!(loss_fixed(1.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn adaptive_hinge_examples() {
        assert_eq!(loss_adaptive(0.0, 1.0, std::f64::consts::LN_2), 0.0);
        assert_eq!(loss_adaptive(1.0, 1.0, 3.0), 3.0);
    }

    fn toy(h: usize, seed: u64) -> (Theta, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Theta::init(3, 4, h, &mut rng, SIGMA_INIT);
        for x in theta.users.mu.iter_mut().chain(theta.items.mu.iter_mut()) {
            *x = rng.random_range(-0.5..0.5);
        }
        for x in theta.users.sigma.iter_mut().chain(theta.items.sigma.iter_mut()) {
            *x = rng.random_range(0.05..0.3);
        }
        (theta, rng)
    }

    fn ui_batch() -> TripletBatch {
        let mut b = TripletBatch::new(Relation::UserItem);
        b.push(0, 0, 1);
        b.push(1, 2, 3);
        b.push(2, 1, 0);
        b.push(0, 3, 2);
        b
    }

    #[test]
    fn inactive_hinges_give_zero_loss_and_gradient() {
        let (mut theta, _) = toy(2, 1);
        theta.users.mu_row_mut(0).copy_from_slice(&[0.0, 0.0]);
        theta.items.mu_row_mut(0).copy_from_slice(&[0.0, 0.0]);
        theta.items.mu_row_mut(1).copy_from_slice(&[10.0, 0.0]);
        let mut b = TripletBatch::new(Relation::UserItem);
        b.push(0, 0, 1);
        let (stats, g) = batch_outer(&b, &theta, DistanceKind::EuclideanSquared);
        assert_eq!(stats.loss, 0.0);
        assert_eq!(stats.active, 0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn singleton_batch_matches_scalar_loss() {
        let (theta, mut rng) = toy(3, 2);
        let net = MarginNetParams::init(9, 3, &mut rng);
        let noise: Vec<f64> = (0..9).map(|_| rng.sample(StandardNormal)).collect();
        let mut b = TripletBatch::new(Relation::UserItem);
        b.push(1, 2, 0);
        let (stats, _) = batch_inner(&b, &theta, &net, IndicatorMode::SquaredDiff, &noise, DistanceKind::W2Squared);
        let d = |i: usize, j: usize| {
            crate::distance::w2_squared(
                theta.users.mu_row(i),
                theta.users.sigma_row(i),
                theta.items.mu_row(j),
                theta.items.sigma_row(j),
            )
        };
        let u = theta.users.sample_with_noise(1, noise[..3].to_vec()).value;
        let vp = theta.items.sample_with_noise(2, noise[3..6].to_vec()).value;
        let vn = theta.items.sample_with_noise(0, noise[6..].to_vec()).value;
        let s = crate::margin_net::indicator(IndicatorMode::SquaredDiff, &u, &vp, &vn);
        let m = net.forward(&s.s).0;
        assert!((stats.loss - loss_adaptive(d(1, 2), d(1, 0), m)).abs() < 1e-14);
    }

    #[test]
    fn permutation_invariant() {
        let (theta, _) = toy(2, 3);
        let b = ui_batch();
        let mut perm = TripletBatch::new(Relation::UserItem);
        for r in [3, 1, 0, 2] {
            perm.push(b.anchors[r], b.positives[r], b.negatives[r]);
        }
        let (s1, g1) = batch_outer(&b, &theta, DistanceKind::W2Squared);
        let (s2, g2) = batch_outer(&perm, &theta, DistanceKind::W2Squared);
        assert!((s1.loss - s2.loss).abs() < 1e-15);
        let mut diff = g1.clone();
        diff.axpy(-1.0, &g2);
        assert!(diff.norm() < 1e-15);
    }

    fn fd_check(theta: &Theta, eval: impl Fn(&Theta) -> f64, analytic: &Theta) -> f64 {
        let step = 1e-5;
        let mut t = theta.clone();
        let mut fd = theta.zeros_like();
        for which in 0..4 {
            for k in 0..t.slices()[which].len() {
                let orig = t.slices()[which][k];
                t.slices_mut()[which][k] = orig + step;
                let up = eval(&t);
                t.slices_mut()[which][k] = orig - step;
                let down = eval(&t);
                t.slices_mut()[which][k] = orig;
                fd.slices_mut()[which][k] = (up - down) / (2.0 * step);
            }
        }
        let mut diff = fd.clone();
        diff.axpy(-1.0, analytic);
        diff.norm() / fd.norm().max(analytic.norm()).max(1e-12)
    }

    #[test]
    fn inner_theta_gradient_matches_finite_differences() {
        let (theta, mut rng) = toy(2, 4);
        let net = MarginNetParams::init(6, 2, &mut rng);
        let noise: Vec<f64> = (0..4 * 6).map(|_| rng.sample(StandardNormal)).collect();
        let b = ui_batch();
        let margin = Margin::Adaptive {
            net: &net,
            mode: IndicatorMode::SquaredDiff,
            noise: &noise,
        };
        let full = PassOptions {
            distance_grad: true,
            margin_grad: true,
            phi_grad: false,
        };
        let res = batch_pass(&b, &theta, DistanceKind::W2Squared, margin, full);
        assert!(res.stats.active > 0);
        let analytic = res.theta_grad(true).unwrap();
        let eval = |t: &Theta| batch_pass(&b, t, DistanceKind::W2Squared, margin, PassOptions::default()).stats.loss;
        assert!(fd_check(&theta, eval, &analytic) < 1e-5);
    }

    #[test]
    fn outer_gradient_matches_finite_differences() {
        let (theta, _) = toy(2, 5);
        let b = ui_batch();
        let (stats, g) = batch_outer(&b, &theta, DistanceKind::W2Squared);
        assert!(stats.active > 0);
        let eval = |t: &Theta| batch_outer(&b, t, DistanceKind::W2Squared).0.loss;
        assert!(fd_check(&theta, eval, &g) < 1e-5);
    }

    #[test]
    fn relation_batches_use_single_table() {
        let (theta, _) = toy(2, 6);
        let mut b = TripletBatch::new(Relation::UserUser);
        b.push(0, 1, 2);
        let (_, g) = batch_outer(&b, &theta, DistanceKind::W2Squared);
        assert!(g.users.mu.iter().any(|&x| x != 0.0));
        assert!(g.items.mu.iter().chain(&g.items.sigma).all(|&x| x == 0.0));
    }

    #[test]
    fn combined_sums_components() {
        let c = |v: f64| {
            Some(RelationReport {
                inner: v,
                outer: 2.0 * v,
                ..RelationReport::default()
            })
        };
        let net = MarginNetParams::from_data(1, 1, vec![1.0, 0.0, 2.0, 0.0]);
        let r = combined([c(0.5), c(0.0), c(0.0)], 0.0, &[&net]);
        assert_eq!(r.inner_total, 0.5);
        assert_eq!(r.outer_total, 1.0);
        let r = combined([c(0.5), c(0.25), c(0.125)], 0.001, &[&net]);
        assert_eq!(r.inner_total, 0.875);
        assert!((r.outer_total - (1.75 + 0.005)).abs() < 1e-15);
    }
}
