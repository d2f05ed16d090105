//! Leak localization on water-distribution networks.
//!
//! The pipeline has two phases. Phase I learns a pairwise conditional random
//! field over the network graph from simulated pressure/flow observations,
//! trained with a structured SVM, and predicts a set of leaking nodes by MAP
//! inference. Phase II folds in simulated human leak reports: each report
//! spans a clique of nearby nodes, an infinite-cost consistency potential
//! flags cliques that contradict the prediction, and a greedy entropy-gated
//! pass inserts the most uncertain clique member into the leak set.
//!
//! Modules follow the pipeline: [`network`] (graph model and file format),
//! [`hydrosim`] (steady-state hydraulics and scenario simulation),
//! [`features`] (observation residuals and the joint feature map), [`crf`]
//! (energy, MAP inference, calibrated marginals), [`ssvm`] (max-margin
//! training), [`fusion`] (report cliques and the greedy update), and
//! [`harness`] (end-to-end experiments, scoring, and file formats).
//!
//! The `guide` module mirrors the book in `book/`; its code blocks run under
//! `cargo test --doc`.

pub mod error;
pub mod seed;
pub(crate) mod textio;

pub mod network;

pub mod hydrosim;

pub mod features;

pub mod crf;

pub mod ssvm;

pub mod fusion;

pub mod harness;

pub mod guide;

pub use error::{Error, Result};
