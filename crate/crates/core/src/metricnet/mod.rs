mod backbone;
mod gradcheck;
mod io;
mod model;
pub mod network;
pub mod tensor;
mod train;

pub use backbone::{build_arch, DEFAULT_BACKBONE, DEFAULT_EMBEDDING_DIM};
pub use gradcheck::{gradient_check, GradCheck, ParamGroup};
pub use io::{MODEL_MAGIC, MODEL_VERSION};
pub use model::{
    l1_distance, l1_vector, logistic, pair_loss, EmbeddingVector, ModelMeta, SiameseModel, SimilarityScore,
    LOGIT_CLAMP,
};
pub use train::{train, write_loss_trace, TrainConfig, TrainOutcome, ViewSource};
