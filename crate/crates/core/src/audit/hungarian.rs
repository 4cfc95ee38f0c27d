// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact minimum-cost assignment (Hungarian method, shortest augmenting
//! paths with dual potentials), `O(n³)`.

use crate::error::{input_err, shape_err, Result};
use crate::numerics::Matrix;

/// Optimal one-to-one assignment of rows to columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column matched to row `i`.
    pub row_to_col: Vec<usize>,
    pub total_cost: f64,
}

/// Solves the square assignment problem minimizing the summed cost.
pub fn solve_assignment(cost: &Matrix) -> Result<Assignment> {
    let n = cost.rows();
    if cost.cols() != n {
        return shape_err(format!(
            "cost matrix must be square, got {:?}",
            cost.shape()
        ));
    }
    if !cost.is_finite() {
        return input_err("cost matrix has non-finite entries");
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            total_cost: 0.0,
        });
    }
    // 1-based arrays; index 0 is the virtual source column/row.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_slack = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0usize;
        min_slack.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            let cost_row = cost.row(r0 - 1);
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let cur = cost_row[col - 1] - u[r0] - v[col];
                if cur < min_slack[col] {
                    min_slack[col] = cur;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for col in 1..=n {
        row_to_col[owner[col] - 1] = col - 1;
    }
    let total_cost = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.get(i, j))
        .sum();
    Ok(Assignment {
        row_to_col,
        total_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_instance() {
        let cost = Matrix::from_rows(&[
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ])
        .unwrap();
        let a = solve_assignment(&cost).unwrap();
        assert_eq!(a.row_to_col, vec![1, 0, 2]);
        assert_eq!(a.total_cost, 5.0);
    }

    #[test]
    fn identity_is_optimal_for_zero_diagonal() {
        let cost = Matrix::from_fn(5, 5, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(
            solve_assignment(&cost).unwrap().row_to_col,
            vec![0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve_assignment(&Matrix::zeros(2, 3)).is_err());
        let mut c = Matrix::zeros(2, 2);
        c.set(0, 0, f64::NAN);
        assert!(solve_assignment(&c).is_err());
        assert_eq!(
            solve_assignment(&Matrix::zeros(0, 0)).unwrap().row_to_col,
            Vec::<usize>::new()
        );
    }
}
