//! Minimum-cost perfect matching (assignment problem) on square cost
//! matrices.
//!
//! The solver is the shortest-augmenting-path Hungarian variant with dual
//! potentials, `O(n³)`. The duals certify optimality: every optimal
//! assignment uses only *tight* edges (reduced cost ≈ 0), which
//! [`min_cost_assignment_lex`] exploits to return the lexicographically
//! smallest assignment when several matchings tie in cost.

use crate::error::{LpvError, Result};
use crate::Mat;

/// Solution of the assignment problem.
#[derive(Debug, Clone)]
pub struct Assignment {
    /// `assignment[i]` is the column matched to row `i`.
    pub assignment: Vec<usize>,
    /// Total cost of the matching.
    pub cost: f64,
    /// Row duals; together with `v`, `cost[i][j] − u[i] − v[j] ≥ 0` with
    /// equality on matched edges.
    pub u: Vec<f64>,
    /// Column duals.
    pub v: Vec<f64>,
}

/// Solves `min Σ cost[i][assignment[i]]` over permutations.
pub fn min_cost_assignment(cost: &Mat) -> Result<Assignment> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(LpvError::Internal(format!(
            "assignment needs a square cost matrix, got {}x{}",
            n,
            cost.ncols()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(LpvError::Internal(
            "assignment cost matrix has non-finite entries".into(),
        ));
    }
    if n == 0 {
        return Ok(Assignment {
            assignment: vec![],
            cost: 0.0,
            u: vec![],
            v: vec![],
        });
    }

    // Shortest augmenting path with potentials; indices are 1-based with
    // slot 0 holding the row currently being inserted.
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
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

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[(i, assignment[i])]).sum();
    Ok(Assignment {
        assignment,
        cost: total,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    })
}

/// Like [`min_cost_assignment`], but among all matchings whose cost ties
/// the optimum within `tie_tol` (per edge, via reduced costs), returns the
/// lexicographically smallest assignment vector. Ensures deterministic
/// results when the optimum is not unique.
pub fn min_cost_assignment_lex(cost: &Mat, tie_tol: f64) -> Result<Assignment> {
    refine_on_tight(cost, tie_tol, |_, row| row)
}

/// Like [`min_cost_assignment_lex`], but resolves cost ties by a secondary
/// criterion first: each row takes the feasible tied column with the
/// smallest `secondary` entry, falling back to the smallest column index.
/// Mode matching uses this with eigenvector misalignment as the secondary
/// criterion, so crossings where the primary costs vanish still follow
/// the eigenvectors.
pub fn min_cost_assignment_tiebreak(
    cost: &Mat,
    tie_tol: f64,
    secondary: &Mat,
) -> Result<Assignment> {
    refine_on_tight(cost, tie_tol, |i, mut row| {
        row.sort_by(|&a, &b| {
            secondary[(i, a)]
                .total_cmp(&secondary[(i, b)])
                .then(a.cmp(&b))
        });
        row
    })
}

/// Shared tie-refinement: restrict to the tight subgraph (edges with
/// reduced cost ≤ `tie_tol`; complementary slackness places every optimal
/// matching inside it), then greedily fix each row to its most-preferred
/// feasible column, where `prefer` orders a row's tight columns.
fn refine_on_tight(
    cost: &Mat,
    tie_tol: f64,
    prefer: impl Fn(usize, Vec<usize>) -> Vec<usize>,
) -> Result<Assignment> {
    let base = min_cost_assignment(cost)?;
    let n = base.assignment.len();
    if n <= 1 {
        return Ok(base);
    }

    let mut adj: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<usize> = (0..n)
            .filter(|&j| cost[(i, j)] - base.u[i] - base.v[j] <= tie_tol)
            .collect();
        adj.push(prefer(i, row));
    }

    // Feasibility of a greedy fix = the remaining rows still admit a
    // perfect matching on unused columns.
    let mut used_col = vec![false; n];
    let mut assignment = vec![usize::MAX; n];
    for i in 0..n {
        let mut fixed = false;
        for &j in &adj[i] {
            if used_col[j] {
                continue;
            }
            used_col[j] = true;
            if perfect_matching_exists(&adj, &used_col, i + 1) {
                assignment[i] = j;
                fixed = true;
                break;
            }
            used_col[j] = false;
        }
        if !fixed {
            // The solver's own matching lives in the tight graph, so some
            // column is always feasible.
            return Err(LpvError::Internal(
                "tight subgraph lost its perfect matching".into(),
            ));
        }
    }

    let total = (0..n).map(|i| cost[(i, assignment[i])]).sum();
    Ok(Assignment {
        assignment,
        cost: total,
        u: base.u,
        v: base.v,
    })
}

/// Kuhn's augmenting-path check: can rows `first_row..n` all be matched
/// into columns not yet used?
fn perfect_matching_exists(adj: &[Vec<usize>], used_col: &[bool], first_row: usize) -> bool {
    let n = adj.len();
    let mut match_col: Vec<Option<usize>> = vec![None; n];

    fn try_augment(
        row: usize,
        adj: &[Vec<usize>],
        used_col: &[bool],
        visited: &mut [bool],
        match_col: &mut [Option<usize>],
    ) -> bool {
        for &j in &adj[row] {
            if used_col[j] || visited[j] {
                continue;
            }
            visited[j] = true;
            if match_col[j].is_none()
                || try_augment(match_col[j].unwrap(), adj, used_col, visited, match_col)
            {
                match_col[j] = Some(row);
                return true;
            }
        }
        false
    }

    for row in first_row..n {
        let mut visited = vec![false; n];
        if !try_augment(row, adj, used_col, &mut visited, &mut match_col) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over all permutations (test oracle).
    pub(crate) fn brute_force(cost: &Mat) -> (Vec<usize>, f64, usize) {
        let n = cost.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best_cost = f64::INFINITY;
        let mut best_perm = perm.clone();
        let mut ties = 0usize;
        permute(&mut perm, 0, &mut |p| {
            let c: f64 = (0..n).map(|i| cost[(i, p[i])]).sum();
            if c < best_cost {
                best_cost = c;
                best_perm = p.to_vec();
                ties = 1;
            } else if c == best_cost {
                ties += 1;
                if p < &best_perm[..] {
                    best_perm = p.to_vec();
                }
            }
        });
        (best_perm, best_cost, ties)
    }

    fn permute(perm: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        let n = perm.len();
        if k == n {
            f(perm);
            return;
        }
        for i in k..n {
            perm.swap(k, i);
            permute(perm, k + 1, f);
            perm.swap(k, i);
        }
    }

    #[test]
    fn two_by_two_example() {
        let cost = Mat::from_row_slice(2, 2, &[0.1, 0.9, 0.8, 0.2]);
        let sol = min_cost_assignment(&cost).unwrap();
        assert_eq!(sol.assignment, vec![0, 1]);
        assert!((sol.cost - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_diagonal_gives_identity() {
        let n = 5;
        let cost = Mat::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        let sol = min_cost_assignment_lex(&cost, 1e-12).unwrap();
        assert_eq!(sol.assignment, (0..n).collect::<Vec<_>>());
        assert_eq!(sol.cost, 0.0);
    }

    #[test]
    fn all_equal_costs_tie_break_to_identity() {
        let cost = Mat::from_element(4, 4, 0.7);
        let sol = min_cost_assignment_lex(&cost, 1e-12).unwrap();
        assert_eq!(sol.assignment, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duals_are_feasible_and_tight_on_matching() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 7;
        let cost = Mat::from_fn(n, n, |_, _| rng.gen::<f64>());
        let sol = min_cost_assignment(&cost).unwrap();
        for i in 0..n {
            for j in 0..n {
                let rc = cost[(i, j)] - sol.u[i] - sol.v[j];
                assert!(rc >= -1e-12, "dual infeasible at ({i}, {j}): {rc}");
            }
            let rc = cost[(i, sol.assignment[i])] - sol.u[i] - sol.v[sol.assignment[i]];
            assert!(rc.abs() <= 1e-12, "matched edge not tight: {rc}");
        }
    }

    /// Costs drawn on a dyadic grid: every sum and dual update is exact in
    /// binary floating point, so cost comparisons carry no roundoff.
    fn dyadic_cost(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        Mat::from_fn(n, n, |_, _| rng.gen_range(0..(1u32 << 20)) as f64 / 1024.0)
    }

    #[test]
    fn matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..200 {
            let n = rng.gen_range(1..=8);
            let cost = dyadic_cost(&mut rng, n);
            let sol = min_cost_assignment_lex(&cost, 1e-12).unwrap();
            let (best_perm, best_cost, ties) = brute_force(&cost);
            assert_eq!(sol.cost, best_cost, "trial {trial}: cost mismatch");
            if ties == 1 {
                assert_eq!(sol.assignment, best_perm, "trial {trial}");
            } else {
                // With ties, the contract is the lexicographically
                // smallest optimal permutation.
                assert_eq!(sol.assignment, best_perm, "trial {trial} (ties: {ties})");
            }
            // Permutation validity.
            let mut seen = vec![false; n];
            for &j in &sol.assignment {
                assert!(!seen[j]);
                seen[j] = true;
            }
        }
    }

    #[test]
    fn lex_smallest_among_structured_ties() {
        // Rows 0 and 1 tie on columns 0 and 1.
        let cost = Mat::from_row_slice(3, 3, &[0.0, 0.0, 5.0, 0.0, 0.0, 5.0, 5.0, 5.0, 0.0]);
        let sol = min_cost_assignment_lex(&cost, 1e-12).unwrap();
        assert_eq!(sol.assignment, vec![0, 1, 2]);
    }
}
