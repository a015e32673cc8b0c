//! Exact linear assignment: a shortest-augmenting-path Hungarian solver and
//! an exhaustive enumerator used as a small-N oracle.

use crate::error::{Error, Result};
use crate::otcore::CostMatrix;

/// Largest size accepted by [`brute_force_assignment`].
pub const BRUTE_FORCE_MAX: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `sigma[i]` is the column assigned to row `i`.
    pub sigma: Vec<usize>,
    pub total_cost: f64,
}

impl Assignment {
    fn from_sigma(cost: &CostMatrix, sigma: Vec<usize>) -> Self {
        let total_cost = sigma.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
        Self { sigma, total_cost }
    }

    /// The plan with mass `1/N` on `(i, σ(i))`.
    pub fn permutation_plan(&self) -> Vec<f64> {
        let n = self.sigma.len();
        let mut plan = vec![0.0; n * n];
        for (i, &j) in self.sigma.iter().enumerate() {
            plan[i * n + j] = 1.0 / n as f64;
        }
        plan
    }
}

fn require_square(cost: &CostMatrix, op: &'static str) -> Result<usize> {
    if cost.rows() != cost.cols() {
        return Err(Error::dim(
            op,
            format!("{}x{} cost matrix is not square", cost.rows(), cost.cols()),
        ));
    }
    Ok(cost.rows())
}

/// Minimum-cost perfect matching in `O(N³)`.
///
/// Rows are inserted one at a time; each insertion grows a Dijkstra tree
/// over columns using reduced costs `C_ij − u_i − v_j` until it reaches a
/// free column, then augments along the tree and updates the potentials.
/// Columns are scanned in index order and ties keep the first candidate, so
/// the result is deterministic.
pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    let n = require_square(cost, "hungarian")?;
    if n == 0 {
        return Ok(Assignment {
            sigma: Vec::new(),
            total_cost: 0.0,
        });
    }
    const NONE: usize = usize::MAX;
    // Index n is a virtual column holding the row being inserted.
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![NONE; n + 1];
    let mut prev_col = vec![NONE; n + 1];
    let mut min_slack = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for row in 0..n {
        row_of_col[n] = row;
        let mut col0 = n;
        min_slack.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[col0] = true;
            let i0 = row_of_col[col0];
            let c_row = cost.row(i0);
            let u_i0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut next = NONE;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let reduced = c_row[j] - u_i0 - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    prev_col[j] = col0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    next = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            col0 = next;
            if row_of_col[col0] == NONE {
                break;
            }
        }
        // augment along the alternating path back to the virtual column
        while col0 != n {
            let p = prev_col[col0];
            row_of_col[col0] = row_of_col[p];
            col0 = p;
        }
    }

    let mut sigma = vec![0; n];
    for (j, &i) in row_of_col.iter().take(n).enumerate() {
        sigma[i] = j;
    }
    Ok(Assignment::from_sigma(cost, sigma))
}

/// Exhaustive minimum over all `N!` permutations, visited in lexicographic
/// order; ties keep the lexicographically smallest `σ`.
pub fn brute_force_assignment(cost: &CostMatrix) -> Result<Assignment> {
    let n = require_square(cost, "brute_force_assignment")?;
    if n > BRUTE_FORCE_MAX {
        return Err(Error::SizeCap(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>();
    let mut best = perm.clone();
    let mut best_cost = total(&perm);
    while next_permutation(&mut perm) {
        let c = total(&perm);
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
    }
    Ok(Assignment {
        sigma: best,
        total_cost: best_cost,
    })
}

/// Advance to the next permutation in lexicographic order; `false` once the
/// sequence wraps.
pub fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        p.reverse();
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
