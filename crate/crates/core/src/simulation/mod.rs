//! Simulation scenarios, Monte Carlo truth and replication studies.

pub mod scenario;
pub mod study;
pub mod truth;

pub use scenario::{generate, generate_with, Design, NoiseSpec, ScenarioSpec};
pub use study::{run_fixed_rule_study, run_study, write_summary_csv, Cell, CellSummary, FixedRuleRecord, StudySummary};
pub use truth::{best_tree_value, mc_true_value, EvalSample, McValue};
