//! Joint sparse coding and hyper-predictor learning for multivariate
//! performance measures (F1, PRBEP, AUC).
//!
//! Points are represented by sparse codes over a learned dictionary, and a
//! linear predictor over those codes is trained against a structured upper
//! bound on the chosen tuple-level loss.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod hyperloss;
pub mod measures;
pub mod sparse_coding;
pub mod synthetic;
pub mod trainer;

pub use dataio::{kfold_split, parse_csv, parse_svmlight, Dataset, FoldPlan, Label};
pub use error::{Error, Result};
pub use hyperloss::{HyperPredictor, TiePolicy};
pub use measures::MeasureKind;
pub use sparse_coding::{Dictionary, SparseCodes};
pub use trainer::{encode, fit, load_model, save_model, Model, TrainConfig};
