//! Transportation simplex for small balanced transport problems.
//!
//! Starts from a north-west corner basis (always a spanning tree with
//! `m + n - 1` cells, degenerate cells included), prices it with row/column
//! potentials and pivots around the unique basis cycle until no cell has a
//! negative reduced cost. Dantzig's rule is used until a run of degenerate
//! pivots is seen, after which Bland's rule takes over to rule out cycling.

use crate::scalar::Scalar;
use std::collections::VecDeque;

/// Optimal plan: total cost plus the basic cells `(row, col, flow)`.
#[derive(Debug, Clone)]
pub struct TransportPlan<S> {
    pub cost: S,
    pub flows: Vec<(usize, usize, S)>,
    pub pivots: usize,
}

/// Solve `min Σ c_ij f_ij` s.t. row sums = `supply`, column sums = `demand`.
///
/// `cost` is row-major `supply.len() × demand.len()`. Supplies and demands
/// must be nonnegative and carry the same total mass.
pub fn solve_transport<S: Scalar>(supply: &[S], demand: &[S], cost: &[S]) -> TransportPlan<S> {
    let (m, n) = (supply.len(), demand.len());
    assert!(m > 0 && n > 0, "transport problem needs both sides nonempty");
    assert_eq!(cost.len(), m * n, "cost matrix shape");

    let mut basis = north_west_corner(supply, demand);
    let mut in_basis = vec![false; m * n];
    for &(r, c, _) in &basis {
        in_basis[r * n + c] = true;
    }

    let scale = cost.iter().fold(S::zero(), |a, &c| a.max(c.abs()));
    let tol = S::epsilon() * S::of(64.0) * scale.max(S::one());

    let mut u = vec![S::zero(); m];
    let mut v = vec![S::zero(); n];
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m + n];
    let mut degenerate_run = 0usize;
    let mut pivots = 0usize;
    let pivot_limit = 100 * (m * n + m + n);

    while pivots < pivot_limit {
        rebuild_adjacency(&basis, m, &mut adjacency);
        potentials(&basis, &adjacency, cost, n, &mut u, &mut v);

        let bland = degenerate_run > m + n;
        let mut entering: Option<(usize, usize, S)> = None;
        'scan: for r in 0..m {
            for c in 0..n {
                if in_basis[r * n + c] {
                    continue;
                }
                let reduced = cost[r * n + c] - u[r] - v[c];
                if reduced < -tol {
                    if bland {
                        entering = Some((r, c, reduced));
                        break 'scan;
                    }
                    if entering.is_none_or(|(_, _, best)| reduced < best) {
                        entering = Some((r, c, reduced));
                    }
                }
            }
        }
        let Some((er, ec, _)) = entering else {
            break;
        };

        // Path in the basis tree from row node `er` to column node `m + ec`;
        // edges alternate -, +, -, ... starting next to the entering cell.
        let path = tree_path(&adjacency, er, m + ec, m + n);
        let mut leaving: Option<(usize, S)> = None;
        for (k, &edge) in path.iter().enumerate() {
            if k % 2 != 0 {
                continue;
            }
            let (r, c, f) = basis[edge];
            let better = match leaving {
                None => true,
                Some((cur, theta)) => {
                    let (cr, cc, _) = basis[cur];
                    f < theta || (f == theta && bland && (r, c) < (cr, cc))
                }
            };
            if better {
                leaving = Some((edge, f));
            }
        }
        let (leave, theta) = leaving.expect("basis cycle always has a decreasing edge");

        for (k, &edge) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis[edge].2 -= theta;
            } else {
                basis[edge].2 += theta;
            }
        }
        let (lr, lc, _) = basis[leave];
        in_basis[lr * n + lc] = false;
        in_basis[er * n + ec] = true;
        basis[leave] = (er, ec, theta);

        if theta == S::zero() {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        pivots += 1;
    }

    let mut total = S::zero();
    for &(r, c, f) in &basis {
        total += f * cost[r * n + c];
    }
    TransportPlan {
        cost: total,
        flows: basis,
        pivots,
    }
}

fn north_west_corner<S: Scalar>(supply: &[S], demand: &[S]) -> Vec<(usize, usize, S)> {
    let (m, n) = (supply.len(), demand.len());
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let mut cells = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let row_exhausted = s[i] <= d[j];
        let x = s[i].min(d[j]);
        cells.push((i, j, x));
        s[i] -= x;
        d[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || row_exhausted {
            i += 1;
        } else {
            j += 1;
        }
    }
    cells
}

fn rebuild_adjacency<S>(basis: &[(usize, usize, S)], m: usize, adj: &mut [Vec<(usize, usize)>]) {
    for list in adj.iter_mut() {
        list.clear();
    }
    for (idx, &(r, c, _)) in basis.iter().enumerate() {
        adj[r].push((m + c, idx));
        adj[m + c].push((r, idx));
    }
}

fn potentials<S: Scalar>(
    basis: &[(usize, usize, S)],
    adj: &[Vec<(usize, usize)>],
    cost: &[S],
    n: usize,
    u: &mut [S],
    v: &mut [S],
) {
    let m = u.len();
    let mut seen = vec![false; m + n];
    let mut queue = VecDeque::new();
    u[0] = S::zero();
    seen[0] = true;
    queue.push_back(0);
    while let Some(node) = queue.pop_front() {
        for &(next, idx) in &adj[node] {
            if seen[next] {
                continue;
            }
            let (r, c, _) = basis[idx];
            let cij = cost[r * n + c];
            if next >= m {
                v[c] = cij - u[r];
            } else {
                u[r] = cij - v[c];
            }
            seen[next] = true;
            queue.push_back(next);
        }
    }
    debug_assert!(seen.iter().all(|&s| s), "basis must span all rows and columns");
}

fn tree_path(adj: &[Vec<(usize, usize)>], from: usize, to: usize, nodes: usize) -> Vec<usize> {
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
    let mut seen = vec![false; nodes];
    let mut queue = VecDeque::new();
    seen[from] = true;
    queue.push_back(from);
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &(next, idx) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, idx));
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = to;
    while node != from {
        let (prev, idx) = parent[node].expect("basis tree is connected");
        path.push(idx);
        node = prev;
    }
    path.reverse();
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_2x2(s: [f64; 2], d: [f64; 2], c: [f64; 4]) -> f64 {
        // one free variable f00 ∈ [max(0, s0 - d1), min(s0, d0)]; cost is linear in it
        let lo = (s[0] - d[1]).max(0.0);
        let hi = s[0].min(d[0]);
        let eval = |f00: f64| {
            let f01 = s[0] - f00;
            let f10 = d[0] - f00;
            let f11 = s[1] - f10;
            c[0] * f00 + c[1] * f01 + c[2] * f10 + c[3] * f11
        };
        eval(lo).min(eval(hi))
    }

    #[test]
    fn northwest_corner_has_spanning_size() {
        let cells = north_west_corner(&[0.5, 0.5], &[0.5, 0.25, 0.25]);
        assert_eq!(cells.len(), 4);
        let cells = north_west_corner(&[1.0], &[0.2, 0.3, 0.5]);
        assert_eq!(cells.len(), 3);
    }

    #[test]
    fn matches_two_by_two_enumeration() {
        let cases = [
            ([0.3, 0.7], [0.6, 0.4], [1.0, 2.0, 3.0, 0.5]),
            ([0.5, 0.5], [0.5, 0.5], [0.0, 1.0, 1.0, 0.0]),
            ([0.5, 0.5], [0.5, 0.5], [1.0, 0.0, 0.0, 1.0]),
            ([0.9, 0.1], [0.2, 0.8], [4.0, 1.0, 0.0, 7.0]),
        ];
        for (s, d, c) in cases {
            let plan = solve_transport(&s, &d, &c);
            assert!((plan.cost - brute_force_2x2(s, d, c)).abs() < 1e-14, "{s:?} {d:?} {c:?}");
        }
    }

    #[test]
    fn plan_respects_marginals() {
        let s = [0.1, 0.2, 0.3, 0.4];
        let d = [0.25, 0.25, 0.5];
        let c: Vec<f64> = (0..12).map(|k| ((k * 7) % 5) as f64).collect();
        let plan = solve_transport(&s, &d, &c);
        let mut rows = [0.0; 4];
        let mut cols = [0.0; 3];
        for &(r, col, f) in &plan.flows {
            assert!(f >= -1e-15);
            rows[r] += f;
            cols[col] += f;
        }
        for (a, b) in rows.iter().zip(&s) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in cols.iter().zip(&d) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn assignment_picks_the_cheap_permutation() {
        // 3x3 uniform assignment: optimal is the anti-diagonal, cost 0
        let w = [1.0_f64 / 3.0; 3];
        let c = [5.0_f64, 5.0, 0.0, 5.0, 0.0, 5.0, 0.0, 5.0, 5.0];
        let plan = solve_transport(&w, &w, &c);
        assert!(plan.cost.abs() < 1e-15);
        assert!(plan.pivots > 0);
    }
}
