//! Binary checkpoints (`PMLAM-CKPT v1`).
//!
//! All integers are little-endian `u64` unless noted, floats are IEEE-754
//! `f64` little-endian. Layout, in order:
//!
//! ```text
//! magic        13 bytes  "PMLAM-CKPT v1"
//! config       u64 length + UTF-8 `key = value` text
//! fold         u64
//! epoch        u64       completed epochs
//! users table  n, h, then n·h means, then n·h variances
//! items table  same
//! nets ×3      (U-I, U-U, I-I) u8 present flag; if 1: input_dim, hidden,
//!              parameter count, parameters
//! Θ optimizer  see below
//! Φ opt ×3     u8 present flag; if 1: optimizer
//! rng          32-byte ChaCha seed, u64 stream, u128 word position
//!
//! optimizer    u8 kind (0 SGD, 1 Adam), lr, beta1, beta2, eps (f64),
//!              step count, group count, then per group: length,
//!              first moments, second moments
//! ```
//!
//! Writes go to a temporary sibling that is renamed over the target.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bilevel::{Model, TrainState};
use crate::config::RunConfig;
use crate::data::write_atomic;
use crate::embeddings::{GaussianTable, Theta};
use crate::error::{Error, Result};
use crate::margin_net::MarginNetParams;
use crate::optim::{OptimizerKind, OptimizerState};

const MAGIC: &[u8; 13] = b"PMLAM-CKPT v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub fold: usize,
    pub state: TrainState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }

    fn table(&mut self, t: &GaussianTable) {
        self.u64(t.len() as u64);
        self.u64(t.dim() as u64);
        self.f64s(&t.mu);
        self.f64s(&t.sigma);
    }

    fn optimizer(&mut self, o: &OptimizerState) {
        self.u8(match o.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => 1,
        });
        self.f64s(&[o.lr, o.beta1, o.beta2, o.eps]);
        self.u64(o.t);
        self.u64(o.moments.len() as u64);
        for (m, v) in &o.moments {
            self.u64(m.len() as u64);
            self.f64s(m);
            self.f64s(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, "checkpoint", format!("{} (offset {})", msg.into(), self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| self.err("truncated"))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        let v = usize::try_from(v).map_err(|_| self.err("length overflow"))?;
        if v > self.bytes.len() {
            return Err(self.err("implausible length"));
        }
        Ok(v)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(self.err("bad presence flag")),
        }
    }

    fn table(&mut self) -> Result<GaussianTable> {
        let (n, h) = (self.len()?, self.len()?);
        let size = n.checked_mul(h).ok_or_else(|| self.err("table size overflow"))?;
        let mu = self.f64s(size)?;
        let sigma = self.f64s(size)?;
        Ok(GaussianTable::from_parts(n, h, mu, sigma))
    }

    fn optimizer(&mut self) -> Result<OptimizerState> {
        let kind = match self.u8()? {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::Adam,
            _ => return Err(self.err("bad optimizer kind")),
        };
        let (lr, beta1, beta2, eps) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let t = self.u64()?;
        let groups = self.len()?;
        let mut moments = Vec::with_capacity(groups);
        for _ in 0..groups {
            let n = self.len()?;
            moments.push((self.f64s(n)?, self.f64s(n)?));
        }
        Ok(OptimizerState {
            kind,
            lr,
            beta1,
            beta2,
            eps,
            t,
            moments,
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        let text = self.config.echo();
        w.u64(text.len() as u64);
        w.0.extend_from_slice(text.as_bytes());
        w.u64(self.fold as u64);
        w.u64(self.state.epoch as u64);
        w.table(&self.state.model.theta.users);
        w.table(&self.state.model.theta.items);
        for net in &self.state.model.nets {
            match net {
                None => w.u8(0),
                Some(n) => {
                    w.u8(1);
                    w.u64(n.input_dim() as u64);
                    w.u64(n.hidden() as u64);
                    w.u64(n.data.len() as u64);
                    w.f64s(&n.data);
                }
            }
        }
        w.optimizer(&self.state.theta_opt);
        for o in &self.state.phi_opts {
            match o {
                None => w.u8(0),
                Some(o) => {
                    w.u8(1);
                    w.optimizer(o);
                }
            }
        }
        let rng = &self.state.rng;
        w.0.extend_from_slice(&rng.get_seed());
        w.u64(rng.get_stream());
        w.0.extend_from_slice(&rng.get_word_pos().to_le_bytes());
        w.0
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(r.err("missing PMLAM-CKPT v1 header"));
        }
        let n = r.len()?;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| r.err("config is not UTF-8"))?;
        let config = RunConfig::from_text(text)?;
        let fold = r.len()?;
        let epoch = r.len()?;
        let users = r.table()?;
        let items = r.table()?;
        if users.dim() != items.dim() {
            return Err(r.err("table dimensions differ"));
        }
        let mut nets: [Option<MarginNetParams>; 3] = [None, None, None];
        for slot in nets.iter_mut() {
            if r.flag()? {
                let (input, hidden, len) = (r.len()?, r.len()?, r.len()?);
                if len != MarginNetParams::param_count(input, hidden) {
                    return Err(r.err("margin net size mismatch"));
                }
                *slot = Some(MarginNetParams::from_data(input, hidden, r.f64s(len)?));
            }
        }
        let theta_opt = r.optimizer()?;
        let mut phi_opts: [Option<OptimizerState>; 3] = [None, None, None];
        for slot in phi_opts.iter_mut() {
            if r.flag()? {
                *slot = Some(r.optimizer()?);
            }
        }
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes"));
        }
        Ok(Checkpoint {
            config,
            fold,
            state: TrainState {
                model: Model {
                    theta: Theta { users, items },
                    nets,
                },
                theta_opt,
                phi_opts,
                rng,
                epoch,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
