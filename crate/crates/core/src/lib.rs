//! Sparse video tube tokenization and a small ViT encoder.
//!
//! A clip is cut into a handful of strided 3D tubes of different shapes,
//! each tube window is projected to a token, tokens get a fixed sine/cosine
//! embedding of their center, and a pre-norm transformer classifies the set.
//! Images go through the same path using only the tubes that span one frame.
//!
//! ```
//! use tubekit::tube_config::{total_tokens, TubeBank, TubeSpec};
//!
//! let bank = TubeBank::new(vec![TubeSpec::new([1, 16, 16], [16, 16, 16]).image()], 768);
//! assert_eq!(total_tokens(&bank, [32, 224, 224], true).unwrap(), 392);
//! assert_eq!(total_tokens(&bank, [1, 224, 224], false).unwrap(), 196);
//! ```

pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod init;
pub mod model;
pub mod params;
pub mod posemb;
pub mod scalar;
pub mod tokenizer;
pub mod trainer;
pub mod tube_config;

pub use config::{ModelConfig, PosEmbKind};
pub use encoder::{scale_up, EncoderConfig, PoolMode};
pub use error::{Error, GeometryError, Result};
pub use model::TubeVit;
pub use posemb::{add_positions, embed_positions, EmbeddingParams, ExponentMode};
pub use scalar::Scalar;
pub use tokenizer::{tokenize, KernelBank, TokenBatch, VideoClip};
pub use tube_config::{total_tokens, validate_bank, TubeBank, TubeSpec};
