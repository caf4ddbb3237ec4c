pub mod annotate;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod imaging;
pub mod proposals;
pub mod retrieval;
pub mod sparsecode;
pub mod synth;

pub use config::PipelineConfig;
pub use dataset::Dataset;
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/superpixels.md")]
    mod superpixels {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/sparse-coding.md")]
    mod sparse_coding {}
    #[doc = include_str!("../../../book/src/proposals.md")]
    mod proposals {}
    #[doc = include_str!("../../../book/src/sessions.md")]
    mod sessions {}
    #[doc = include_str!("../../../book/src/flips.md")]
    mod flips {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
