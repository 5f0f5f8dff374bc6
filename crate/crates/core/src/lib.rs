//! Desk-scale simulator of self-consuming performative training loops.
//!
//! Small generative models are trained on data they produced themselves while
//! the share of the disadvantaged group in each generation's data follows a
//! controlled schedule. The crate is `no_std` (it needs `alloc`); file formats,
//! configuration and the command line live in the `scpl` crate.
//!
//! Module map:
//!
//! * [`world`]: synthetic task environments and grouped datasets.
//! * [`generator`]: count n-gram and softmax generators, training and sampling.
//! * [`evaluator`]: preference bias, generation quality, pass@1, similarity.
//! * [`sampler`]: group-ratio schedules and performative sampling.
//! * [`curation`]: rewards and the VRS / TPP / TOP / reweighting strategies.
//! * [`simulation`]: the generation loop that ties everything together.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod curation;
pub mod error;
pub mod evaluator;
pub mod generator;
pub mod rng;
pub mod sampler;
pub mod simulation;
pub mod world;

pub use error::{Error, Result};
pub use world::{GroupLabel, GroupedDataset, Origin, Provenance, Sample, Token, World};
