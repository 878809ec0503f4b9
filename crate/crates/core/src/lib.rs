//! Federated learning with autoencoder-compressed weight updates.
//!
//! Each collaborator trains its model locally, flattens the weights and
//! sends only a short latent code produced by its own autoencoder. The
//! aggregator holds the matching decoders, rebuilds every update, averages
//! them and broadcasts the new global model. A pre-pass round of plain local
//! training harvests the weight snapshots each autoencoder is trained on.
//!
//! Modules, bottom up:
//!
//! - [`nn`]: dense layers, backpropagation, SGD, `FWCK` checkpoints
//! - [`codec`]: flatten/unflatten, weight snapshot datasets (`FWDS`), min-max scaling
//! - [`autoencoder`]: funnel autoencoder, encode/decode, decoder shipment
//! - [`data`]: synthetic blobs, grayscale transform, partitioning, IDX and `FWDA` files
//! - [`fl`]: pre-pass, compressed uplink (`FWUP`), aggregation, federated rounds
//! - [`validation`]: replay of stored snapshots through a trained codec
//! - [`savings`]: savings ratio and break-even analysis
//! - [`cli`]: the `fedae` command line

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autoencoder;
pub mod cli;
pub mod codec;
pub mod data;
pub mod error;
pub mod fl;
pub mod nn;
pub mod rng;
pub mod savings;
pub mod validation;
mod wire;

pub use error::{Error, Result};
