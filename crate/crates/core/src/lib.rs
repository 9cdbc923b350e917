//! Semantic structure analysis for long documents: sentence segmentation,
//! embedding, self-similarity matrices, cross-model comparison, novelty
//! detection and figure rendering.

pub mod compare;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod exec;
pub mod novelty;
pub mod pipeline;
pub mod render;
pub mod semv;
pub mod ssm;

pub use compare::{
    agreement_matrices, correlation_map, correlation_map_full_ssm, mean_correlation_map, pearson, sign_summary,
    AgreementMatrices, MatrixKind, ModelMatrix, PairSignSummary,
};
pub use corpus::{load_document, segment_sentences, Document, Sentence};
pub use embedding::{embed_document, EmbeddingMatrix, ModelId, ProviderConfig, ProviderKind};
pub use error::{Error, Result};
pub use exec::Execution;
pub use novelty::{ensemble_flags, novelty_report, row_novelty, NoveltyParams, NoveltyReport};
pub use pipeline::{run_pipeline, CorrelateMode, PipelineConfig, PipelineSummary, StageStatus};
pub use render::{render_heatmap, render_timeseries, ImageFormat, Palette, RenderSpec};
pub use ssm::{build_ssm, standardize, successive_series, Population, Ssm, StandardizedSsm, TimeSeries};
