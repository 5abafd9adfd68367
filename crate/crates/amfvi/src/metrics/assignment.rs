//! Exact linear assignment via the Jonker-Volgenant shortest augmenting
//! path algorithm (column reduction, reduction transfer, augmenting row
//! reduction, then Dijkstra-style augmentation with dual prices).
//!
//! Dense square `f64` cost matrices; used by the empirical Wasserstein-2
//! metric at benchmark sizes (n = 2000).

use ndarray::Array2;

use crate::{Error, Result};

const UNASSIGNED: usize = usize::MAX;

/// Minimum-cost one-to-one assignment. Returns the column assigned to each
/// row and the total cost.
pub fn solve_assignment(cost: &Array2<f64>) -> Result<(Vec<usize>, f64)> {
    let n = cost.nrows();
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    if cost.ncols() != n {
        return Err(Error::contract(format!(
            "assignment needs a square matrix, got {}x{}",
            n,
            cost.ncols()
        )));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("assignment cost has non-finite entries"));
    }

    let c = |i: usize, j: usize| cost[[i, j]];
    let mut row_sol = vec![UNASSIGNED; n]; // column assigned to row
    let mut col_sol = vec![UNASSIGNED; n]; // row assigned to column
    let mut v = vec![0.0f64; n]; // column duals
    let mut matches = vec![0usize; n];

    // Column reduction.
    for j in (0..n).rev() {
        let mut min = c(0, j);
        let mut imin = 0;
        for i in 1..n {
            if c(i, j) < min {
                min = c(i, j);
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            row_sol[imin] = j;
            col_sol[j] = imin;
        }
    }

    // Reduction transfer.
    let mut free_rows: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        if matches[i] == 0 {
            free_rows.push(i);
        } else if matches[i] == 1 {
            let j1 = row_sol[i];
            let mut min = f64::INFINITY;
            for j in 0..n {
                if j != j1 && c(i, j) - v[j] < min {
                    min = c(i, j) - v[j];
                }
            }
            v[j1] -= min;
        }
    }

    // Augmenting row reduction, two sweeps.
    for _ in 0..2 {
        let mut k = 0;
        let prev_free = std::mem::take(&mut free_rows);
        let mut queue = prev_free;
        while k < queue.len() {
            let i = queue[k];
            k += 1;
            // Two smallest reduced costs in row i.
            let mut umin = c(i, 0) - v[0];
            let mut j1 = 0usize;
            let mut usubmin = f64::INFINITY;
            let mut j2 = UNASSIGNED;
            for j in 1..n {
                let h = c(i, j) - v[j];
                if h < usubmin {
                    if h >= umin {
                        usubmin = h;
                        j2 = j;
                    } else {
                        usubmin = umin;
                        j2 = j1;
                        umin = h;
                        j1 = j;
                    }
                }
            }
            let mut i0 = col_sol[j1];
            if umin < usubmin {
                v[j1] -= usubmin - umin;
            } else if i0 != UNASSIGNED {
                j1 = j2;
                i0 = col_sol[j1];
            }
            row_sol[i] = j1;
            col_sol[j1] = i;
            if i0 != UNASSIGNED {
                if umin < usubmin {
                    // Reconsider the bumped row immediately.
                    k -= 1;
                    queue[k] = i0;
                } else {
                    free_rows.push(i0);
                }
            }
        }
    }

    // Shortest augmenting path for every remaining free row.
    let mut d = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    let mut col_list: Vec<usize> = (0..n).collect();
    for &free_row in &free_rows {
        for j in 0..n {
            d[j] = c(free_row, j) - v[j];
            pred[j] = free_row;
            col_list[j] = j;
        }
        let mut low = 0usize;
        let mut up = 0usize;
        let mut last = 0usize;
        let mut min = 0.0f64;
        let end_of_path;
        'path: loop {
            if up == low {
                last = low.wrapping_sub(1);
                min = d[col_list[up]];
                up += 1;
                for k in up..n {
                    let j = col_list[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        col_list[k] = col_list[up];
                        col_list[up] = j;
                        up += 1;
                    }
                }
                for k in low..up {
                    let j = col_list[k];
                    if col_sol[j] == UNASSIGNED {
                        end_of_path = j;
                        break 'path;
                    }
                }
            }
            let j1 = col_list[low];
            low += 1;
            let i = col_sol[j1];
            let h = c(i, j1) - v[j1] - min;
            for k in up..n {
                let j = col_list[k];
                let reduced = c(i, j) - v[j] - h;
                if reduced < d[j] {
                    pred[j] = i;
                    if reduced == min && col_sol[j] == UNASSIGNED {
                        end_of_path = j;
                        break 'path;
                    }
                    if reduced == min {
                        col_list[k] = col_list[up];
                        col_list[up] = j;
                        up += 1;
                    }
                    d[j] = reduced;
                }
            }
        }
        // Update duals along scanned columns.
        if last != usize::MAX {
            for k in 0..=last {
                let j1 = col_list[k];
                v[j1] += d[j1] - min;
            }
        }
        // Augment along the alternating path.
        let mut j = end_of_path;
        loop {
            let i = pred[j];
            col_sol[j] = i;
            std::mem::swap(&mut row_sol[i], &mut j);
            if i == free_row {
                break;
            }
        }
    }

    let total = (0..n).map(|i| c(i, row_sol[i])).sum();
    Ok((row_sol, total))
}
