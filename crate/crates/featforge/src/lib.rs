//! featforge: feature-transformation search that teams a latent-space
//! sequence model with a compact local language model.
//!
//! The pipeline: collect scored golden transformation sequences from a
//! teacher model, embed them with a sequence autoencoder plus performance
//! estimator, gradient-ascend the latent space toward better estimated
//! scores, and decode candidates either greedily or jointly with a distilled
//! student LM via product-of-experts mixing.

pub mod checkpoint;
pub mod data;
pub mod expr;
pub mod golden;
pub mod gradcheck;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod search;
pub mod seq2seq;
pub mod studentlm;
pub mod teaming;
