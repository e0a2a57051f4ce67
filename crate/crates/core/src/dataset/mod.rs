//! Episodic co-training datasets and the mixed batch sampler.
//!
//! Layout under a dataset root:
//!
//! ```text
//! manifest.psv            id|steps|source|action_dim|proprio_dim|instruction
//! episodes/<id>/steps.csv step,a0..,p0..,images   (images: name=hash;name=hash)
//! blobs/<sha256>.png      content-addressed observation images
//! ```
//!
//! An RLDS export maps `steps.csv` rows to `steps`, `a*` to `action`,
//! `p*` to `observation/state` and image refs to `observation/<name>`.

mod sampler;
mod store;

pub use sampler::{mixture_stats, MixedSampler, MixtureSpec, MixtureStats, SampleIndex};
pub use store::{episode_from_record, DataStep, EpisodeDataset, EpisodeMeta};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Pretrain,
    Sim,
}

impl std::fmt::Display for SourceTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SourceTag::Pretrain => "pretrain",
            SourceTag::Sim => "sim",
        })
    }
}

impl std::str::FromStr for SourceTag {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pretrain" => Ok(SourceTag::Pretrain),
            "sim" => Ok(SourceTag::Sim),
            _ => Err(DatasetError::Format(format!("unknown source tag {s:?}"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("episode has no steps")]
    EmptyEpisode,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("missing image blob {0}")]
    MissingBlob(String),
    #[error("unknown episode {0}")]
    UnknownEpisode(String),
    #[error("invalid mixture: {0}")]
    Mixture(String),
    #[error("{0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
