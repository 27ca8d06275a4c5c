pub mod anomaly;
pub mod augment;
pub mod commands;
pub mod config;
pub mod decode;
pub mod error;
pub mod eval;
pub mod fuzzy;
pub mod geometry;
pub mod image;
pub mod loss;
pub mod pipeline;
pub mod train;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/decoding.md")]
    pub struct Decoding;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/augmentation.md")]
    pub struct Augmentation;
    #[doc = include_str!("../../../book/src/cascade.md")]
    pub struct Cascade;
    #[doc = include_str!("../../../book/src/anomaly-engine.md")]
    pub struct AnomalyEngine;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
