//! Deep recurrent Gaussian processes built on sparse spectrum features.
//!
//! The crate is `no_std` with `alloc`. Everything that needs an operating
//! system (threads, files, clocks) lives in the companion `drgp` crate, which
//! plugs into the [`engine::RangeMap`] trait to run the map phase in parallel.
//!
//! Layout of the crate:
//!
//! * [`types`], [`params`], [`transform`]: model containers, flat parameter
//!   vectors and the softplus-squared positivity transform.
//! * [`features`]: the cosine feature map, the spectral mixture kernel and
//!   basis sampling.
//! * [`psi`]: expectations of the feature map under Gaussian inputs and
//!   Gaussian spectral points, with reverse-mode derivatives.
//! * [`bound`], [`engine`]: the collapsed variational bound, the stacked
//!   recurrent objective and its map-reduce evaluation.
//! * [`predictor`], [`trainer`], [`lbfgs`]: moment-matched free simulation
//!   and optimisation.
//! * [`narx`]: lagged-regressor baselines.
#![cfg_attr(not(any(test, feature = "std")), no_std)]
// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod bound;
pub mod data;
pub mod engine;
mod error;
pub mod features;
pub mod lbfgs;
pub mod linalg;
pub mod narx;
pub mod params;
pub mod predictor;
pub mod psi;
pub mod recurrent;
pub mod trainer;
pub mod transform;
pub mod types;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use types::{
    Dataset, DrgpModel, Hyperparams, LatentState, LayerParams, ModelConfig, Period, SpectralBasis,
    Variant,
};
