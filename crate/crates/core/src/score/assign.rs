//! Maximum-weight bipartite assignment.
//!
//! Shortest augmenting path Hungarian method with row and column potentials,
//! O(n² m) for an n × m matrix with n ≤ m. Scores are negated into costs;
//! since every score is non-negative, an optimal matching of full size
//! min(n, m) is also optimal over all partial matchings.

/// Disjoint `(row, col)` pairs, sorted by row.
pub type Assignment = Vec<(usize, usize)>;

/// Optimal matching of a rectangular score matrix.
///
/// Cells with score `<= threshold` are treated as 0 while solving and never
/// appear in the result, so their rows and columns stay unmatched.
/// Rows are augmented in index order and columns scanned in index order, so
/// the result is deterministic for a given matrix.
pub fn assign(scores: &[Vec<f64>], threshold: f64) -> Assignment {
    let rows = scores.len();
    let cols = scores.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let eligible = |s: f64| if s > threshold && s.is_finite() { s } else { 0.0 };

    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let cost = |i: usize, j: usize| -> f64 {
        let s = if transposed { scores[j][i] } else { scores[i][j] };
        -eligible(s)
    };

    let row_of_col = hungarian(n, m, cost);

    let mut pairs: Assignment = row_of_col
        .iter()
        .enumerate()
        .filter_map(|(j, r)| r.map(|i| if transposed { (j, i) } else { (i, j) }))
        .filter(|&(r, c)| eligible(scores[r][c]) > 0.0)
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Minimum-cost assignment of every row of an `n × m` cost matrix (n ≤ m).
/// Returns, for each column, the row assigned to it.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    debug_assert!(n <= m);
    // 1-based with a virtual column 0, following the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
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
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    (1..=m).map(|j| (p[j] != 0).then(|| p[j] - 1)).collect()
}

/// Sum of the assigned scores, added in row order.
pub fn total(scores: &[Vec<f64>], assignment: &[(usize, usize)]) -> f64 {
    assignment.iter().map(|&(r, c)| scores[r][c]).sum()
}
