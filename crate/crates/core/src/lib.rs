//! Calibrated optimal decision making with auxiliary samples that share
//! intermediate outcomes with a primary sample.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod calibration;
pub mod config;
pub mod data;
pub mod error;
pub mod nuisance;
pub mod rewards;
pub mod rule;
pub mod search;
pub mod simulation;

pub use basis::{BasisSpec, BasisTerm};
pub use config::{Config, Mode, ModeChoice, SamplingFeatures};
pub use data::{AuxiliarySample, JointSample, PrimarySample};
pub use error::{CodaError, Result};
pub use rule::{apply_rows, apply_rule, DecisionRule, LinearRule, TreeNode, TreeRule};
