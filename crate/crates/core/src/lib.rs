//! Cross-modal augmentation for long-tailed recognition under domain shift.
//!
//! Images and their generated texts (a title and a list of ingredients) are
//! projected into one embedding space. A bi-directional triplet loss aligns
//! the two modalities across a source and a target domain, a frequency-aware
//! softmax calibrates the classifier against class imbalance, and the text
//! embedding is added to the image embedding before classification.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! training and evaluation pipelines use.
//!
//! ```
//! use xmaug::{cosine_similarity, EmbeddingVector};
//!
//! let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
//! let b = EmbeddingVector::new(vec![1.0, 1.0]).unwrap();
//! let c = cosine_similarity(&a, &b).unwrap();
//! assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
//! ```

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod losses;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod trainer;
pub mod vector;

pub use config::ExperimentConfig;
pub use data::{ClassGroup, DomainTag};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use losses::NegativeMining;
pub use model::{FusionConfig, ModelDims};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use synth::BenchmarkConfig;
pub use trainer::TrainConfig;
pub use vector::{cosine_similarity, l2_normalize};

pub type EmbeddingVector = vector::EmbeddingVector<f64>;
pub type Sample = data::Sample<f64>;
pub type Dataset = data::Dataset<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type Benchmark = synth::Benchmark<f64>;
pub type LossValue = losses::LossValue<f64>;
