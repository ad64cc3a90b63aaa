//! Exact search for the depth-limited tree maximizing a sum of per-row
//! rewards.
//!
//! Candidate thresholds are midpoints between consecutive distinct observed
//! values. Enumeration order is: no split first, then feature index, then
//! threshold ascending; a later candidate replaces the incumbent only when
//! it is better by more than `1e-12 * sum |rewards|`. Leaves prefer action 0.
//!
//! Depth 1 is a linear scan per feature. Depth 2 sweeps each root feature
//! while keeping, for every feature and each side, a segment tree over
//! distinct values that answers "best single split of this side" in O(1).
//! Deeper trees recurse on the depth-2 solver.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CodaError, Result};
use crate::rule::{apply_rule, DecisionRule, TreeNode};

/// Outcome of a rule search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub rule: DecisionRule,
    /// Sum of the selected rewards.
    pub objective: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Objective after each search step.
    pub trace: Vec<f64>,
}

/// Sum of `rewards[i][rule(x_i)]`.
pub fn tree_objective(rule: &DecisionRule, rewards: &[[f64; 2]], x: &DMatrix<f64>) -> Result<f64> {
    rule.check_dims(x.ncols())?;
    let mut row = vec![0.0; x.ncols()];
    let mut total = 0.0;
    for (i, r) in rewards.iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[(i, j)];
        }
        total += r[usize::from(apply_rule(rule, &row)?)];
    }
    Ok(total)
}

/// Finds a tree of depth at most `depth` maximizing the summed rewards.
pub fn exact_tree_search(rewards: &[[f64; 2]], x: &DMatrix<f64>, depth: usize) -> Result<SearchResult> {
    let problem = Problem::new(rewards, x)?;
    let all: Vec<usize> = (0..problem.n).collect();
    let (root, _) = problem.solve(&all, depth);
    let rule = DecisionRule::tree(root);
    let objective = tree_objective(&rule, rewards, x)?;
    Ok(SearchResult {
        rule,
        objective,
        iterations_used: 0,
        converged: true,
        trace: vec![objective],
    })
}

struct Problem<'a> {
    rewards: &'a [[f64; 2]],
    x: &'a DMatrix<f64>,
    n: usize,
    r: usize,
    /// Rows sorted by each feature, ties by row index.
    order: Vec<Vec<usize>>,
    /// Rank of each row's value among the distinct values of a feature.
    group: Vec<Vec<usize>>,
    distinct: Vec<Vec<f64>>,
    tol: f64,
}

#[derive(Clone, Copy, Default)]
struct Seg {
    t: [f64; 2],
    /// Best prefix-`a`, suffix-`c` split for `(a, c) = (0, 1)` and `(1, 0)`.
    b01: f64,
    b10: f64,
}

impl Seg {
    fn leaf(s0: f64, s1: f64) -> Seg {
        let m = s0.max(s1);
        Seg {
            t: [s0, s1],
            b01: m,
            b10: m,
        }
    }

    fn merge(l: &Seg, r: &Seg) -> Seg {
        Seg {
            t: [l.t[0] + r.t[0], l.t[1] + r.t[1]],
            b01: (l.b01 + r.t[1]).max(l.t[0] + r.b01),
            b10: (l.b10 + r.t[0]).max(l.t[1] + r.b10),
        }
    }
}

/// Segment tree over the distinct values of one feature.
struct SegTree {
    size: usize,
    nodes: Vec<Seg>,
}

impl SegTree {
    fn new(groups: usize) -> Self {
        let size = groups.next_power_of_two().max(1);
        SegTree {
            size,
            nodes: vec![Seg::default(); 2 * size],
        }
    }

    fn reset(&mut self) {
        self.nodes.iter_mut().for_each(|s| *s = Seg::default());
    }

    /// Adds `(d0, d1)` to the sums of leaf `g` without fixing ancestors.
    fn add_raw(&mut self, g: usize, d0: f64, d1: f64) {
        let leaf = &mut self.nodes[self.size + g];
        *leaf = Seg::leaf(leaf.t[0] + d0, leaf.t[1] + d1);
    }

    fn rebuild(&mut self) {
        for i in (1..self.size).rev() {
            self.nodes[i] = Seg::merge(&self.nodes[2 * i], &self.nodes[2 * i + 1]);
        }
    }

    fn add(&mut self, g: usize, d0: f64, d1: f64) {
        self.add_raw(g, d0, d1);
        let mut i = (self.size + g) / 2;
        while i >= 1 {
            self.nodes[i] = Seg::merge(&self.nodes[2 * i], &self.nodes[2 * i + 1]);
            i /= 2;
        }
    }

    fn root(&self) -> &Seg {
        &self.nodes[1]
    }
}

impl<'a> Problem<'a> {
    fn new(rewards: &'a [[f64; 2]], x: &'a DMatrix<f64>) -> Result<Self> {
        let n = rewards.len();
        if n == 0 {
            return Err(CodaError::invalid("tree search needs at least one row"));
        }
        if x.nrows() != n {
            return Err(CodaError::invalid(format!(
                "{n} reward rows but {} covariate rows",
                x.nrows()
            )));
        }
        if rewards.iter().flatten().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(CodaError::invalid("tree search inputs must be finite"));
        }
        let r = x.ncols();
        let mut order = Vec::with_capacity(r);
        let mut group = Vec::with_capacity(r);
        let mut distinct = Vec::with_capacity(r);
        for j in 0..r {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[(a, j)].total_cmp(&x[(b, j)]).then(a.cmp(&b)));
            let mut g = vec![0; n];
            let mut vals: Vec<f64> = Vec::new();
            for &i in &idx {
                if vals.last() != Some(&x[(i, j)]) {
                    vals.push(x[(i, j)]);
                }
                g[i] = vals.len() - 1;
            }
            order.push(idx);
            group.push(g);
            distinct.push(vals);
        }
        let scale: f64 = rewards.iter().flatten().map(|v| v.abs()).sum();
        Ok(Problem {
            rewards,
            x,
            n,
            r,
            order,
            group,
            distinct,
            tol: 1e-12 * scale,
        })
    }

    fn solve(&self, rows: &[usize], depth: usize) -> (TreeNode, f64) {
        match depth {
            0 => self.leaf(rows),
            1 => self.depth1(rows),
            2 => self.depth2(rows),
            _ => self.deeper(rows, depth),
        }
    }

    fn sums(&self, rows: &[usize]) -> [f64; 2] {
        rows.iter().fold([0.0, 0.0], |acc, &i| {
            [acc[0] + self.rewards[i][0], acc[1] + self.rewards[i][1]]
        })
    }

    fn leaf(&self, rows: &[usize]) -> (TreeNode, f64) {
        let [s0, s1] = self.sums(rows);
        if s1 > s0 + self.tol {
            (TreeNode::leaf(1), s1)
        } else {
            (TreeNode::leaf(0), s0)
        }
    }

    fn membership(&self, rows: &[usize]) -> Vec<bool> {
        let mut mask = vec![false; self.n];
        rows.iter().for_each(|&i| mask[i] = true);
        mask
    }

    /// Rows of `mask` in the sorted order of feature `j`.
    fn sorted_members(&self, j: usize, mask: &[bool]) -> Vec<usize> {
        self.order[j].iter().copied().filter(|&i| mask[i]).collect()
    }

    fn midpoint(&self, j: usize, lo_row: usize, hi_row: usize) -> f64 {
        0.5 * (self.x[(lo_row, j)] + self.x[(hi_row, j)])
    }

    fn depth1(&self, rows: &[usize]) -> (TreeNode, f64) {
        let (mut best, mut best_val) = self.leaf(rows);
        if rows.len() < 2 {
            return (best, best_val);
        }
        let total = self.sums(rows);
        let mask = self.membership(rows);
        for j in 0..self.r {
            let sorted = self.sorted_members(j, &mask);
            let mut pre = [0.0, 0.0];
            for w in sorted.windows(2) {
                let (i, next) = (w[0], w[1]);
                pre[0] += self.rewards[i][0];
                pre[1] += self.rewards[i][1];
                if self.group[j][i] == self.group[j][next] {
                    continue;
                }
                for (a, c) in [(0u8, 1u8), (1, 0)] {
                    let val = pre[usize::from(a)] + (total[usize::from(c)] - pre[usize::from(c)]);
                    if val > best_val + self.tol {
                        best_val = val;
                        best = TreeNode::split(j, self.midpoint(j, i, next), TreeNode::leaf(a), TreeNode::leaf(c));
                    }
                }
            }
        }
        (best, best_val)
    }

    /// Best depth-1 value of the rows loaded into `trees`.
    fn best_single_split(trees: &[SegTree]) -> f64 {
        let root = trees[0].root();
        let mut best = root.t[0].max(root.t[1]);
        for t in trees {
            let s = t.root();
            best = best.max(s.b01).max(s.b10);
        }
        best
    }

    fn depth2(&self, rows: &[usize]) -> (TreeNode, f64) {
        let (mut best, mut best_val) = self.depth1(rows);
        if rows.len() < 2 {
            return (best, best_val);
        }
        let mask = self.membership(rows);
        let mut left: Vec<SegTree> = self.distinct.iter().map(|d| SegTree::new(d.len())).collect();
        let mut right: Vec<SegTree> = self.distinct.iter().map(|d| SegTree::new(d.len())).collect();
        let mut winner: Option<(usize, usize)> = None;
        for j in 0..self.r {
            let sorted = self.sorted_members(j, &mask);
            for f in 0..self.r {
                left[f].reset();
                right[f].reset();
                for &i in &sorted {
                    right[f].add_raw(self.group[f][i], self.rewards[i][0], self.rewards[i][1]);
                }
                right[f].rebuild();
            }
            for (pos, w) in sorted.windows(2).enumerate() {
                let (i, next) = (w[0], w[1]);
                let [r0, r1] = self.rewards[i];
                for f in 0..self.r {
                    let g = self.group[f][i];
                    left[f].add(g, r0, r1);
                    right[f].add(g, -r0, -r1);
                }
                if self.group[j][i] == self.group[j][next] {
                    continue;
                }
                let val = Self::best_single_split(&left) + Self::best_single_split(&right);
                if val > best_val + self.tol {
                    best_val = val;
                    winner = Some((j, pos + 1));
                }
            }
        }
        if let Some((j, cut)) = winner {
            let sorted = self.sorted_members(j, &mask);
            let (l_rows, r_rows) = sorted.split_at(cut);
            let threshold = self.midpoint(j, l_rows[l_rows.len() - 1], r_rows[0]);
            let (l, lv) = self.depth1(l_rows);
            let (r, rv) = self.depth1(r_rows);
            best = TreeNode::split(j, threshold, l, r);
            best_val = lv + rv;
        }
        (best, best_val)
    }

    fn deeper(&self, rows: &[usize], depth: usize) -> (TreeNode, f64) {
        let (mut best, mut best_val) = self.solve(rows, depth - 1);
        if rows.len() < 2 {
            return (best, best_val);
        }
        let mask = self.membership(rows);
        for j in 0..self.r {
            let sorted = self.sorted_members(j, &mask);
            for cut in 1..sorted.len() {
                let (lo, hi) = (sorted[cut - 1], sorted[cut]);
                if self.group[j][lo] == self.group[j][hi] {
                    continue;
                }
                let (l_rows, r_rows) = sorted.split_at(cut);
                let (l, lv) = self.solve(l_rows, depth - 1);
                let (r, rv) = self.solve(r_rows, depth - 1);
                if lv + rv > best_val + self.tol {
                    best_val = lv + rv;
                    best = TreeNode::split(j, self.midpoint(j, lo, hi), l, r);
                }
            }
        }
        (best, best_val)
    }
}
