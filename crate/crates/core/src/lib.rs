//! Probabilistic metric learning for top-K recommendation.
//!
//! Users and items are diagonal Gaussians compared by the closed-form
//! squared 2-Wasserstein distance. Training minimises a margin ranking loss
//! whose per-triplet margin comes from a small network; that network is fit
//! through a one-step bilevel proxy rather than jointly with the embeddings.
//! User-user and item-item neighbour losses pull similar entities together.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] ingests ratings, filters to a fixed point and builds folds.
//! * [`embeddings`], [`distance`], [`margin_net`] and [`losses`] are the
//!   model pieces, each with hand-derived gradients.
//! * [`bilevel`] runs the alternating Θ / Φ optimisation.
//! * [`simgraph`] and [`sampler`] build neighbour sets and triplets.
//! * [`evaluator`] ranks items and computes Recall@K / NDCG@K.
//! * [`experiments`] packages the ablation matrix and the margin case study.

pub mod bilevel;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod distance;
pub mod embeddings;
pub mod error;
pub mod evaluator;
pub mod exec;
pub mod experiments;
pub mod losses;
pub mod margin_net;
pub mod optim;
pub mod planted;
pub mod sampler;
pub mod simgraph;
pub mod stats;

pub use error::{Error, Result};
