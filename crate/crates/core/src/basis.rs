//! Feature expansions shared by the nuisance regressions and linear rules.

use serde::{Deserialize, Serialize};

/// One family of terms in a feature expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisTerm {
    /// `x_j` for every covariate.
    Linear,
    /// `x_j * x_k` for every `j < k`.
    Pairwise,
    /// `x_j^2` for every covariate.
    Squares,
}

/// A feature expansion `x -> (1, terms...)`.
///
/// The constant is always the first feature. Terms are laid out in the fixed
/// order linear, squares, pairwise regardless of the order they were listed in.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<BasisTerm>", into = "Vec<BasisTerm>")]
pub struct BasisSpec {
    terms: Vec<BasisTerm>,
}

impl BasisSpec {
    pub fn new(terms: impl IntoIterator<Item = BasisTerm>) -> Self {
        let mut terms: Vec<BasisTerm> = terms.into_iter().collect();
        terms.sort_by_key(|t| match t {
            BasisTerm::Linear => 0,
            BasisTerm::Squares => 1,
            BasisTerm::Pairwise => 2,
        });
        terms.dedup();
        BasisSpec { terms }
    }

    /// Constant only.
    pub fn constant() -> Self {
        BasisSpec { terms: Vec::new() }
    }

    pub fn linear() -> Self {
        Self::new([BasisTerm::Linear])
    }

    /// Linear terms plus all pairwise products.
    pub fn interactions() -> Self {
        Self::new([BasisTerm::Linear, BasisTerm::Pairwise])
    }

    /// Linear, squared and pairwise terms.
    pub fn quadratic() -> Self {
        Self::new([BasisTerm::Linear, BasisTerm::Squares, BasisTerm::Pairwise])
    }

    pub fn terms(&self) -> &[BasisTerm] {
        &self.terms
    }

    pub fn has(&self, term: BasisTerm) -> bool {
        self.terms.contains(&term)
    }

    /// Number of features produced for `r` covariates, constant included.
    pub fn dim(&self, r: usize) -> usize {
        1 + self
            .terms
            .iter()
            .map(|t| match t {
                BasisTerm::Linear | BasisTerm::Squares => r,
                BasisTerm::Pairwise => r * r.saturating_sub(1) / 2,
            })
            .sum::<usize>()
    }

    /// Appends the expansion of `x` to `out`.
    pub fn expand_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.push(1.0);
        for term in &self.terms {
            match term {
                BasisTerm::Linear => out.extend_from_slice(x),
                BasisTerm::Squares => out.extend(x.iter().map(|v| v * v)),
                BasisTerm::Pairwise => {
                    for j in 0..x.len() {
                        for k in j + 1..x.len() {
                            out.push(x[j] * x[k]);
                        }
                    }
                }
            }
        }
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim(x.len()));
        self.expand_into(x, &mut out);
        out
    }
}

impl From<Vec<BasisTerm>> for BasisSpec {
    fn from(terms: Vec<BasisTerm>) -> Self {
        Self::new(terms)
    }
}

impl From<BasisSpec> for Vec<BasisTerm> {
    fn from(b: BasisSpec) -> Self {
        b.terms
    }
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self::interactions()
    }
}
