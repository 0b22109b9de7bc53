//! Minimum-cost rectangular assignment (Kuhn-Munkres with row potentials,
//! O(n^2 m)).

/// Returns, for each row, the assigned column. Exactly `min(n, m)` rows are
/// assigned; the total cost over assigned pairs is minimal.
pub fn hungarian_min_cost(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");
    if m == 0 {
        return vec![None; n];
    }
    if n <= m {
        solve(n, m, |i, j| cost[i][j])
    } else {
        let by_col = solve(m, n, |i, j| cost[j][i]);
        let mut rows = vec![None; n];
        for (col, row) in by_col.into_iter().enumerate() {
            if let Some(row) = row {
                rows[row] = Some(col);
            }
        }
        rows
    }
}

/// Sum of costs over an assignment.
pub fn assignment_cost(cost: &[Vec<f64>], assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| cost[i][j]))
        .sum()
}

// Requires n <= m. 1-based internal indexing with column 0 as the sentinel.
fn solve(n: usize, m: usize, c: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
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
    let mut rows = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            rows[p[j] - 1] = Some(j - 1);
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_examples() {
        let c = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let a = hungarian_min_cost(&c);
        assert_eq!(a, vec![Some(0), Some(1)]);
        assert_eq!(assignment_cost(&c, &a), 2.0);

        let c = vec![vec![4.0, 1.0], vec![2.0, 3.0]];
        let a = hungarian_min_cost(&c);
        assert_eq!(a, vec![Some(1), Some(0)]);
        assert_eq!(assignment_cost(&c, &a), 3.0);
    }

    #[test]
    fn rectangular_and_empty() {
        assert!(hungarian_min_cost(&[]).is_empty());
        assert_eq!(hungarian_min_cost(&[vec![], vec![]]), vec![None, None]);

        let wide = vec![vec![5.0, 1.0, 9.0]];
        assert_eq!(hungarian_min_cost(&wide), vec![Some(1)]);

        let tall = vec![vec![5.0], vec![1.0], vec![9.0]];
        assert_eq!(hungarian_min_cost(&tall), vec![None, Some(0), None]);
    }
}
