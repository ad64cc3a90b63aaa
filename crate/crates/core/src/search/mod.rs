//! Rule learning: exact tree search, the calibrated iterative tree search and
//! the linear-rule search.

pub mod coda;
pub mod parametric;
pub mod tree;

pub use coda::{analyze, calibrated_rewards, coda_search, evaluate_rule, Analysis, CodaSearch};
pub use parametric::{linear_actions, parametric_search};
pub use tree::{exact_tree_search, tree_objective, SearchResult};
