//! Multiview self-representation clustering over frozen, pre-extracted
//! feature views.
//!
//! Each view gets a linear head followed by batch attention and a softmax;
//! the views' assignment distributions are averaged into a consensus whose
//! argmax supplies pseudolabels for self-training.

pub mod cli;
pub mod consensus;
pub mod dataio;
pub mod error;
pub mod fsrl;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod theory;
pub mod trainer;

pub use consensus::{ConsensusState, LossBreakdown};
pub use dataio::{FeatureView, MultiviewDataset, SyntheticSpec};
pub use error::{MsrlError, Result};
pub use fsrl::ViewModel;
pub use metrics::ClusteringScores;
pub use numerics::{AdamState, Matrix, SimplexVec};
pub use theory::{TheoryConfig, TheoryReport};

pub use trainer::{predict, train, Checkpoint, Prediction, TrainConfig};
