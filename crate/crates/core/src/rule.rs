//! Decision rules: depth-limited axis-aligned trees and linear rules over a
//! basis expansion.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{CodaError, Result};

/// A node of an axis-aligned policy tree.
///
/// Rows with `x[feature] <= threshold` descend left. Features are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        action: u8,
    },
}

impl TreeNode {
    pub fn leaf(action: u8) -> Self {
        TreeNode::Leaf { action }
    }

    pub fn split(feature: usize, threshold: f64, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature, left, right, ..
            } => Some(
                (*feature)
                    .max(left.max_feature().unwrap_or(0))
                    .max(right.max_feature().unwrap_or(0)),
            ),
        }
    }

    /// Action for row `i` of `x`; features must already be in range.
    fn descend_row(&self, x: &DMatrix<f64>, i: usize) -> u8 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { action } => return *action,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[(i, *feature)] <= *threshold { left } else { right },
            }
        }
    }

    fn descend(&self, x: &[f64]) -> Result<u8> {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { action } => return Ok(*action),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = x.get(*feature).ok_or_else(|| {
                        CodaError::Structure(format!(
                            "tree splits on feature {feature} but the row has {} covariates",
                            x.len()
                        ))
                    })?;
                    node = if *v <= *threshold { left } else { right };
                }
            }
        }
    }
}

/// Class I rule: a tree of depth at most `depth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRule {
    pub depth: usize,
    pub root: TreeNode,
}

/// Class II rule: `I{phi(x)' beta > 0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRule {
    pub beta: Vec<f64>,
    pub basis: BasisSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DecisionRule {
    Tree(TreeRule),
    Linear(LinearRule),
}

impl DecisionRule {
    /// Treats everyone with `action`.
    pub fn constant(action: u8) -> Self {
        DecisionRule::Tree(TreeRule {
            depth: 0,
            root: TreeNode::leaf(action),
        })
    }

    pub fn tree(root: TreeNode) -> Self {
        DecisionRule::Tree(TreeRule {
            depth: root.depth(),
            root,
        })
    }

    pub fn linear(beta: Vec<f64>, basis: BasisSpec) -> Self {
        DecisionRule::Linear(LinearRule { beta, basis })
    }

    /// Checks the rule can be evaluated on rows with `r` covariates.
    pub fn check_dims(&self, r: usize) -> Result<()> {
        match self {
            DecisionRule::Tree(t) => {
                if t.root.depth() > t.depth {
                    return Err(CodaError::Structure(format!(
                        "tree has depth {} but declares {}",
                        t.root.depth(),
                        t.depth
                    )));
                }
                match t.root.max_feature() {
                    Some(j) if j >= r => Err(CodaError::Structure(format!(
                        "tree splits on feature {j} but there are only {r} covariates"
                    ))),
                    _ => Ok(()),
                }
            }
            DecisionRule::Linear(l) => {
                let q = l.basis.dim(r);
                if l.beta.len() != q {
                    return Err(CodaError::Structure(format!(
                        "linear rule has {} coefficients but its basis has {q} features",
                        l.beta.len()
                    )));
                }
                if l.beta.iter().any(|b| !b.is_finite()) {
                    return Err(CodaError::Structure("non-finite rule coefficient".into()));
                }
                Ok(())
            }
        }
    }
}

/// Evaluates `rule` at a single covariate vector.
pub fn apply_rule(rule: &DecisionRule, x: &[f64]) -> Result<u8> {
    match rule {
        DecisionRule::Tree(t) => t.root.descend(x),
        DecisionRule::Linear(l) => {
            let phi = l.basis.expand(x);
            if phi.len() != l.beta.len() {
                return Err(CodaError::Structure(format!(
                    "linear rule has {} coefficients but its basis has {} features",
                    l.beta.len(),
                    phi.len()
                )));
            }
            let score: f64 = phi.iter().zip(&l.beta).map(|(p, b)| p * b).sum();
            Ok(u8::from(score > 0.0))
        }
    }
}

/// Evaluates `rule` on every row of `x`.
pub fn apply_rows(rule: &DecisionRule, x: &DMatrix<f64>) -> Result<Vec<u8>> {
    rule.check_dims(x.ncols())?;
    if let DecisionRule::Tree(t) = rule {
        return Ok((0..x.nrows()).map(|i| t.root.descend_row(x, i)).collect());
    }
    let mut row = vec![0.0; x.ncols()];
    (0..x.nrows())
        .map(|i| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = x[(i, j)];
            }
            apply_rule(rule, &row)
        })
        .collect()
}
