//! Adaptive margin generator.
//!
//! ```text
//! z = tanh(W1 · s + b1)
//! m = softplus(W2 · z + b2)
//! ```
//!
//! The input `s` is built from sampled embeddings of an (anchor, positive,
//! negative) triple. The default indicator concatenates the per-dimension
//! squared differences to the positive and to the negative and their
//! difference; `concat` and `sum` are the ablation alternatives.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndicatorMode {
    /// `[χ(u, v⁺); χ(u, v⁻); χ(u, v⁻) − χ(u, v⁺)]` with `χ_d = (u_d − v_d)²`.
    SquaredDiff,
    /// `[u; v⁺; v⁻]`
    Concat,
    /// `u + v⁺ + v⁻`
    Sum,
}

impl IndicatorMode {
    pub fn input_dim(self, h: usize) -> usize {
        match self {
            IndicatorMode::SquaredDiff | IndicatorMode::Concat => 3 * h,
            IndicatorMode::Sum => h,
        }
    }
}

impl fmt::Display for IndicatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndicatorMode::SquaredDiff => "sqdiff",
            IndicatorMode::Concat => "concat",
            IndicatorMode::Sum => "sum",
        })
    }
}

impl FromStr for IndicatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sqdiff" | "squared-diff" => Ok(IndicatorMode::SquaredDiff),
            "concat" | "cat" => Ok(IndicatorMode::Concat),
            "sum" | "add" => Ok(IndicatorMode::Sum),
            other => Err(format!("unknown indicator mode `{other}`")),
        }
    }
}

/// Indicator features for one triple.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorFeatures {
    pub s: Vec<f64>,
}

pub fn indicator(mode: IndicatorMode, u: &[f64], v_pos: &[f64], v_neg: &[f64]) -> IndicatorFeatures {
    let mut s = vec![0.0; mode.input_dim(u.len())];
    write_indicator(mode, u, v_pos, v_neg, &mut s);
    IndicatorFeatures { s }
}

pub(crate) fn write_indicator(mode: IndicatorMode, u: &[f64], v_pos: &[f64], v_neg: &[f64], s: &mut [f64]) {
    let h = u.len();
    assert!(v_pos.len() == h && v_neg.len() == h, "dimension mismatch");
    match mode {
        IndicatorMode::SquaredDiff => {
            for d in 0..h {
                let cp = (u[d] - v_pos[d]) * (u[d] - v_pos[d]);
                let cn = (u[d] - v_neg[d]) * (u[d] - v_neg[d]);
                s[d] = cp;
                s[h + d] = cn;
                s[2 * h + d] = cn - cp;
            }
        }
        IndicatorMode::Concat => {
            s[..h].copy_from_slice(u);
            s[h..2 * h].copy_from_slice(v_pos);
            s[2 * h..].copy_from_slice(v_neg);
        }
        IndicatorMode::Sum => {
            for d in 0..h {
                s[d] = u[d] + v_pos[d] + v_neg[d];
            }
        }
    }
}

/// Accumulate `∂s/∂(u, v⁺, v⁻)ᵀ · ds` into the three gradient rows.
pub(crate) fn indicator_backward(
    mode: IndicatorMode,
    u: &[f64],
    v_pos: &[f64],
    v_neg: &[f64],
    ds: &[f64],
    du: &mut [f64],
    dv_pos: &mut [f64],
    dv_neg: &mut [f64],
) {
    let h = u.len();
    match mode {
        IndicatorMode::SquaredDiff => {
            for d in 0..h {
                let g_pos = ds[d] - ds[2 * h + d];
                let g_neg = ds[h + d] + ds[2 * h + d];
                let tp = 2.0 * (u[d] - v_pos[d]) * g_pos;
                let tn = 2.0 * (u[d] - v_neg[d]) * g_neg;
                du[d] += tp + tn;
                dv_pos[d] -= tp;
                dv_neg[d] -= tn;
            }
        }
        IndicatorMode::Concat => {
            for d in 0..h {
                du[d] += ds[d];
                dv_pos[d] += ds[h + d];
                dv_neg[d] += ds[2 * h + d];
            }
        }
        IndicatorMode::Sum => {
            for d in 0..h {
                du[d] += ds[d];
                dv_pos[d] += ds[d];
                dv_neg[d] += ds[d];
            }
        }
    }
}

/// Parameters Φ of one margin network, stored flat as
/// `[W1 (hidden × input, row-major) | b1 | W2 | b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginNetParams {
    input_dim: usize,
    hidden: usize,
    pub data: Vec<f64>,
}

impl MarginNetParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        MarginNetParams {
            input_dim,
            hidden,
            data: vec![0.0; Self::param_count(input_dim, hidden)],
        }
    }

    pub fn from_data(input_dim: usize, hidden: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), Self::param_count(input_dim, hidden), "parameter count");
        MarginNetParams { input_dim, hidden, data }
    }

    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden);
        let b1 = 1.0 / (input_dim as f64).sqrt();
        for w in p.w1_mut() {
            *w = rng.random_range(-b1..b1);
        }
        let b2 = 1.0 / (hidden as f64).sqrt();
        let off = hidden * input_dim + hidden;
        for w in &mut p.data[off..off + hidden] {
            *w = rng.random_range(-b2..b2);
        }
        p
    }

    pub fn param_count(input_dim: usize, hidden: usize) -> usize {
        hidden * input_dim + 2 * hidden + 1
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn w1(&self) -> &[f64] {
        &self.data[..self.hidden * self.input_dim]
    }

    fn w1_mut(&mut self) -> &mut [f64] {
        let n = self.hidden * self.input_dim;
        &mut self.data[..n]
    }

    pub fn b1(&self) -> &[f64] {
        let off = self.hidden * self.input_dim;
        &self.data[off..off + self.hidden]
    }

    pub fn w2(&self) -> &[f64] {
        let off = self.hidden * self.input_dim + self.hidden;
        &self.data[off..off + self.hidden]
    }

    pub fn b2(&self) -> f64 {
        self.data[self.data.len() - 1]
    }

    pub fn set_b2(&mut self, v: f64) {
        let n = self.data.len();
        self.data[n - 1] = v;
    }

    /// ‖Φ‖_F²
    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn forward(&self, s: &[f64]) -> (f64, ForwardCache) {
        let mut cache = ForwardCache::new(self.hidden);
        let m = self.forward_into(s, &mut cache);
        (m, cache)
    }

    pub(crate) fn forward_into(&self, s: &[f64], cache: &mut ForwardCache) -> f64 {
        assert_eq!(s.len(), self.input_dim, "indicator length");
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        let mut out = self.b2();
        for k in 0..self.hidden {
            let row = &w1[k * self.input_dim..(k + 1) * self.input_dim];
            let pre = b1[k] + row.iter().zip(s).map(|(w, x)| w * x).sum::<f64>();
            let z = pre.tanh();
            cache.z[k] = z;
            out += w2[k] * z;
        }
        cache.pre_out = out;
        cache.margin = softplus(out);
        cache.margin
    }

    /// Reverse pass for `upstream · m`. Parameter gradients are added into
    /// `grad_params` (same flat layout as `data`), input gradients into `grad_s`.
    pub fn backward(
        &self,
        s: &[f64],
        cache: &ForwardCache,
        upstream: f64,
        grad_params: Option<&mut [f64]>,
        grad_s: Option<&mut [f64]>,
    ) {
        let mut scratch = Vec::with_capacity(self.hidden);
        self.backward_into(s, cache, upstream, grad_params, grad_s, &mut scratch);
    }

    pub(crate) fn backward_into(
        &self,
        s: &[f64],
        cache: &ForwardCache,
        upstream: f64,
        grad_params: Option<&mut [f64]>,
        grad_s: Option<&mut [f64]>,
        g_pre: &mut Vec<f64>,
    ) {
        if upstream == 0.0 {
            return;
        }
        let (n_in, hid) = (self.input_dim, self.hidden);
        let g_out = upstream * sigmoid(cache.pre_out);
        let w2 = self.w2();
        g_pre.clear();
        g_pre.extend((0..hid).map(|k| g_out * w2[k] * (1.0 - cache.z[k] * cache.z[k])));

        if let Some(gp) = grad_params {
            let (gw1, rest) = gp.split_at_mut(hid * n_in);
            let (gb1, rest) = rest.split_at_mut(hid);
            let (gw2, gb2) = rest.split_at_mut(hid);
            for k in 0..hid {
                let gk = g_pre[k];
                if gk != 0.0 {
                    gw1[k * n_in..(k + 1) * n_in]
                        .iter_mut()
                        .zip(s)
                        .for_each(|(g, x)| *g += gk * x);
                }
                gb1[k] += gk;
                gw2[k] += g_out * cache.z[k];
            }
            gb2[0] += g_out;
        }
        if let Some(gs) = grad_s {
            let w1 = self.w1();
            for k in 0..hid {
                let gk = g_pre[k];
                w1[k * n_in..(k + 1) * n_in]
                    .iter()
                    .zip(gs.iter_mut())
                    .for_each(|(w, g)| *g += gk * w);
            }
        }
    }
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub z: Vec<f64>,
    pub pre_out: f64,
    pub margin: f64,
}

impl ForwardCache {
    pub fn new(hidden: usize) -> Self {
        ForwardCache {
            z: vec![0.0; hidden],
            pre_out: 0.0,
            margin: 0.0,
        }
    }
}

/// `ln(1 + eˣ)` without overflow for large `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
