//! Geo-semantic topic discovery: kNN graph construction, MonoGraph and
//! MultiGraph GCN encoders trained with a contrastive/coherence/alignment
//! objective, clustering, topic metrics, and spatial statistics.

pub mod clustering;
pub mod corpus;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod losses;
pub mod pipeline;
pub mod seed;
pub mod spatial;
pub mod synthetic;
pub mod topics;
pub mod trainer;

pub use clustering::{ClusterAssignment, ClusterMethod};
pub use corpus::{load_corpus, stride_chunks, write_corpus, ChunkPlan, Corpus, CorpusFormat, GeoCoordinate, Post};
pub use error::{Error, Result};
pub use gnn::{Arch, Encoder, EncoderConfig, Fusion};
pub use losses::LossWeights;
pub use pipeline::{PipelineConfig, RunKind, RunManifest, RunMetrics};
pub use spatial::SpatialConfig;
pub use synthetic::SynthSpec;
pub use topics::{QualityReport, TopicReport};
pub use trainer::{train, TrainConfig, TrainHistory, TrainOutput};
