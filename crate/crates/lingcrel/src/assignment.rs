//! Assignment solvers used for row matching: a bottleneck (min-max)
//! assignment via threshold search plus bipartite matching, and a classic
//! Hungarian min-sum assignment for the distribution-distance alignment.
//!
//! Costs are `n x n`; results map row index to column index (0-based).

use nalgebra::DMatrix;

/// Kuhn's augmenting-path matching restricted to edges with cost <= `limit`.
/// Returns `match_of_row[i] = j` when a perfect matching exists.
fn matching_under(cost: &DMatrix<f64>, limit: f64) -> Option<Vec<usize>> {
    let n = cost.nrows();
    let mut match_of_col: Vec<Option<usize>> = vec![None; n];

    fn try_augment(
        i: usize,
        cost: &DMatrix<f64>,
        limit: f64,
        visited: &mut [bool],
        match_of_col: &mut [Option<usize>],
    ) -> bool {
        let n = visited.len();
        for j in 0..n {
            if cost[(i, j)] <= limit && !visited[j] {
                visited[j] = true;
                let free = match match_of_col[j] {
                    None => true,
                    Some(prev) => try_augment(prev, cost, limit, visited, match_of_col),
                };
                if free {
                    match_of_col[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }

    for i in 0..n {
        let mut visited = vec![false; n];
        if !try_augment(i, cost, limit, &mut visited, &mut match_of_col) {
            return None;
        }
    }
    let mut match_of_row = vec![0; n];
    for (j, row) in match_of_col.iter().enumerate() {
        match_of_row[row.unwrap()] = j;
    }
    Some(match_of_row)
}

/// Perfect assignment minimizing the maximum selected cost.
///
/// Binary search over the sorted distinct costs; each feasibility probe is
/// a bipartite matching on the edges at or below the candidate threshold.
pub fn bottleneck_assignment(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    assert!(n > 0);
    let mut levels: Vec<f64> = cost.iter().copied().collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();

    let mut lo = 0;
    let mut hi = levels.len() - 1;
    debug_assert!(matching_under(cost, levels[hi]).is_some());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if matching_under(cost, levels[mid]).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let perm = matching_under(cost, levels[lo]).expect("feasible at the found threshold");
    (perm, levels[lo])
}

/// Perfect assignment minimizing the total cost (Hungarian algorithm with
/// row/column potentials, O(n^3)).
pub fn min_sum_assignment(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    assert!(n > 0);

    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1]; // 0 = unassigned sentinel
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    let mut total = 0.0;
    for j in 1..=n {
        let i = row_of_col[j];
        perm[i - 1] = j - 1;
        total += cost[(i - 1, j - 1)];
    }
    (perm, total)
}
