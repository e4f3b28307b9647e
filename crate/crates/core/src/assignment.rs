//! Linear assignment: Hungarian solver and Murty's ranked assignments.
//!
//! Costs are row-major with `rows <= cols`; `f64::INFINITY` marks a
//! forbidden pairing.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;

/// Optimal assignment of rows to distinct columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Column chosen for each row.
    pub cols: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost assignment of every row to a distinct column.
///
/// Returns `None` when no assignment avoids forbidden entries.
pub fn hungarian(cost: &DMatrix<f64>) -> Option<Assignment> {
    let (n, m) = cost.shape();
    if n == 0 {
        return Some(Assignment { cols: Vec::new(), cost: 0.0 });
    }
    if n > m {
        return None;
    }
    let finite_max = cost.iter().filter(|v| v.is_finite()).fold(0.0f64, |a, v| a.max(v.abs()));
    // Forbidden entries become a cost that no feasible solution can reach.
    let big = (finite_max + 1.0) * (n as f64 + 1.0) * 4.0;
    let c = |i: usize, j: usize| {
        let v = cost[(i, j)];
        if v.is_finite() {
            v
        } else {
            big
        }
    };

    // Shortest augmenting path with potentials (1-indexed, column 0 is a sentinel).
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            cols[p[j] - 1] = j - 1;
        }
    }
    let mut total = 0.0;
    for (i, &j) in cols.iter().enumerate() {
        let v = cost[(i, j)];
        if !v.is_finite() {
            return None;
        }
        total += v;
    }
    Some(Assignment { cols, cost: total })
}

struct Node {
    cost: f64,
    matrix: DMatrix<f64>,
    cols: Vec<usize>,
    /// Rows `< fixed` are pinned to their current column in this subproblem.
    fixed: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cost == other.cost
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost.
        other.cost.partial_cmp(&self.cost).unwrap_or(Ordering::Equal)
    }
}

/// The `k` cheapest assignments in non-decreasing cost order (Murty).
pub fn murty_k_best(cost: &DMatrix<f64>, k: usize) -> Vec<Assignment> {
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    let Some(first) = hungarian(cost) else { return out };
    let mut heap = BinaryHeap::new();
    heap.push(Node { cost: first.cost, matrix: cost.clone(), cols: first.cols, fixed: 0 });
    while let Some(node) = heap.pop() {
        out.push(Assignment { cols: node.cols.clone(), cost: node.cost });
        if out.len() >= k {
            break;
        }
        let n = node.cols.len();
        let mut base = node.matrix.clone();
        // Rows before `fixed` were pinned by the parent and stay pinned.
        for row in node.fixed..n {
            let mut sub = base.clone();
            sub[(row, node.cols[row])] = f64::INFINITY;
            if let Some(sol) = hungarian(&sub) {
                heap.push(Node { cost: sol.cost, matrix: sub, cols: sol.cols, fixed: row });
            }
            pin(&mut base, row, node.cols[row]);
        }
    }
    out
}

fn pin(matrix: &mut DMatrix<f64>, row: usize, col: usize) {
    let keep = matrix[(row, col)];
    for j in 0..matrix.ncols() {
        matrix[(row, j)] = f64::INFINITY;
    }
    for i in 0..matrix.nrows() {
        matrix[(i, col)] = f64::INFINITY;
    }
    matrix[(row, col)] = keep;
}
