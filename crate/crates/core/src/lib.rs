//! Scene-graph to layout generation with contextualized layout refinement.
//!
//! The crate covers the whole pipeline: scene graphs and their synthetic
//! corpus, layout geometry, a small reverse-mode autodiff engine, the graph
//! encoder / layout generators / pairwise discriminator, the training losses,
//! the layout metrics, and the adversarial trainer.

pub mod autodiff;
pub mod geometry;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod render;
pub mod rle;
pub mod scenes;
pub mod seeding;
pub mod trainer;
