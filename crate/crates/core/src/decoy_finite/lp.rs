//! Dense two-phase simplex solver for the small decoy-state programs
//! (tens of variables, tens of rows).
//!
//! Pivoting follows Bland's rule with lowest-index tie-breaking, so the
//! solver cannot cycle and identical inputs produce bit-identical
//! solutions. Rows are scaled by their largest coefficient magnitude up
//! front; the decoy constraints mix coefficients across many orders of
//! magnitude.

use alloc::vec;
use alloc::vec::Vec;

/// Feasibility tolerance on scaled rows.
pub const FEASIBILITY_TOL: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn le(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self {
            coeffs,
            relation: Relation::Le,
            rhs,
        }
    }

    pub fn ge(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self {
            coeffs,
            relation: Relation::Ge,
            rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, solution: Vec<f64> },
    Infeasible,
    Unbounded,
}

/// Solves `sense c.x` subject to `constraints` and per-variable box bounds
/// `lo <= x_i <= hi` (`hi` may be infinite; `lo` must be finite).
pub fn lp_solve(
    sense: Sense,
    objective: &[f64],
    constraints: &[Constraint],
    bounds: &[(f64, f64)],
) -> LpOutcome {
    let n = objective.len();
    assert_eq!(bounds.len(), n, "one bound pair per variable");
    for c in constraints {
        assert_eq!(c.coeffs.len(), n, "constraint arity mismatch");
    }

    // Shift to y = x - lo >= 0 and absorb finite upper bounds as rows.
    let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in constraints {
        let shift: f64 = c.coeffs.iter().zip(&lo).map(|(a, l)| a * l).sum();
        rows.push((c.coeffs.clone(), c.relation, c.rhs - shift));
    }
    for (i, b) in bounds.iter().enumerate() {
        if b.1.is_finite() {
            if b.1 < b.0 {
                return LpOutcome::Infeasible;
            }
            let mut coeffs = vec![0.0; n];
            coeffs[i] = 1.0;
            rows.push((coeffs, Relation::Le, b.1 - b.0));
        }
    }

    // Row scaling, then sign-normalize so every rhs is nonnegative.
    for (coeffs, relation, rhs) in rows.iter_mut() {
        let scale = coeffs
            .iter()
            .fold(0.0f64, |m, a| m.max(a.abs()))
            .max(rhs.abs());
        if scale > 0.0 {
            for a in coeffs.iter_mut() {
                *a /= scale;
            }
            *rhs /= scale;
        }
        if *rhs < 0.0 {
            for a in coeffs.iter_mut() {
                *a = -*a;
            }
            *rhs = -*rhs;
            *relation = match *relation {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();
    // Column layout: structural | slack/surplus | artificial | rhs.
    let n_slack = rows
        .iter()
        .filter(|r| matches!(r.1, Relation::Le | Relation::Ge))
        .count();
    let n_art = rows
        .iter()
        .filter(|r| matches!(r.1, Relation::Ge | Relation::Eq))
        .count();
    let total = n + n_slack + n_art;
    let mut tab = vec![vec![0.0f64; total + 1]; m];
    let mut basis = vec![usize::MAX; m];
    let mut art_cols: Vec<usize> = Vec::new();
    let mut slack_at = n;
    let mut art_at = n + n_slack;
    for (r, (coeffs, relation, rhs)) in rows.iter().enumerate() {
        tab[r][..n].copy_from_slice(coeffs);
        tab[r][total] = *rhs;
        match relation {
            Relation::Le => {
                tab[r][slack_at] = 1.0;
                basis[r] = slack_at;
                slack_at += 1;
            }
            Relation::Ge => {
                tab[r][slack_at] = -1.0;
                slack_at += 1;
                tab[r][art_at] = 1.0;
                basis[r] = art_at;
                art_cols.push(art_at);
                art_at += 1;
            }
            Relation::Eq => {
                tab[r][art_at] = 1.0;
                basis[r] = art_at;
                art_cols.push(art_at);
                art_at += 1;
            }
        }
    }

    let is_artificial = |col: usize| col >= n + n_slack;

    // Phase 1: minimize the sum of artificial variables.
    if !art_cols.is_empty() {
        let mut cost = vec![0.0f64; total];
        for &c in &art_cols {
            cost[c] = 1.0;
        }
        match run_simplex(&mut tab, &mut basis, &cost, total, |_| false) {
            SimplexResult::Optimal(obj) => {
                if obj > FEASIBILITY_TOL {
                    return LpOutcome::Infeasible;
                }
            }
            SimplexResult::Unbounded => return LpOutcome::Infeasible,
            SimplexResult::IterationLimit => return LpOutcome::Infeasible,
        }
        // Pivot any artificial still in the basis onto a structural column.
        for r in 0..m {
            if is_artificial(basis[r]) {
                let col = (0..n + n_slack).find(|&c| tab[r][c].abs() > PIVOT_TOL);
                if let Some(col) = col {
                    pivot(&mut tab, &mut basis, r, col, total);
                }
                // A zero row: redundant constraint, harmless to leave.
            }
        }
    }

    // Phase 2 on the real objective (artificial columns barred).
    let flip = match sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut cost = vec![0.0f64; total];
    for i in 0..n {
        cost[i] = flip * objective[i];
    }
    let outcome = run_simplex(&mut tab, &mut basis, &cost, total, is_artificial);
    match outcome {
        SimplexResult::Optimal(obj) => {
            let mut y = vec![0.0f64; n];
            for r in 0..m {
                if basis[r] < n {
                    y[basis[r]] = tab[r][total];
                }
            }
            let solution: Vec<f64> = y.iter().zip(&lo).map(|(v, l)| v + l).collect();
            let shift: f64 = objective.iter().zip(&lo).map(|(c, l)| c * l).sum();
            LpOutcome::Optimal {
                value: flip * obj + shift,
                solution,
            }
        }
        SimplexResult::Unbounded => LpOutcome::Unbounded,
        SimplexResult::IterationLimit => LpOutcome::Infeasible,
    }
}

enum SimplexResult {
    Optimal(f64),
    Unbounded,
    IterationLimit,
}

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize, total: usize) {
    let inv = 1.0 / tab[row][col];
    for v in tab[row].iter_mut() {
        *v *= inv;
    }
    tab[row][col] = 1.0;
    for r in 0..tab.len() {
        if r == row {
            continue;
        }
        let factor = tab[r][col];
        if factor == 0.0 {
            continue;
        }
        for c in 0..=total {
            tab[r][c] -= factor * tab[row][c];
        }
        tab[r][col] = 0.0;
    }
    basis[row] = col;
}

/// Bland-rule simplex on an already-feasible basis. `barred` marks columns
/// that may not (re)enter, used to keep artificials out in phase 2.
fn run_simplex(
    tab: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &[f64],
    total: usize,
    barred: impl Fn(usize) -> bool,
) -> SimplexResult {
    let m = tab.len();
    for _ in 0..MAX_PIVOTS {
        // Reduced costs: c_j - c_B B^-1 A_j.
        let mut entering = None;
        for j in 0..total {
            if barred(j) || basis.contains(&j) {
                continue;
            }
            let mut red = cost[j];
            for r in 0..m {
                red -= cost[basis[r]] * tab[r][j];
            }
            if red < -PIVOT_TOL {
                entering = Some(j);
                break; // Bland: first improving index
            }
        }
        let Some(col) = entering else {
            let mut obj = 0.0;
            for r in 0..m {
                obj += cost[basis[r]] * tab[r][total];
            }
            return SimplexResult::Optimal(obj);
        };

        // Ratio test; ties broken by smallest basis variable index.
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            if tab[r][col] > PIVOT_TOL {
                let ratio = tab[r][total] / tab[r][col];
                match leave {
                    None => leave = Some((r, ratio)),
                    Some((br, best)) => {
                        if ratio < best - 1e-15
                            || ((ratio - best).abs() <= 1e-15 && basis[r] < basis[br])
                        {
                            leave = Some((r, ratio));
                        }
                    }
                }
            }
        }
        let Some((row, _)) = leave else {
            return SimplexResult::Unbounded;
        };
        pivot(tab, basis, row, col, total);
    }
    SimplexResult::IterationLimit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::SmallRng;

    #[test]
    fn one_variable_box() {
        let out = lp_solve(
            Sense::Maximize,
            &[1.0],
            &[Constraint::le(vec![1.0], 3.0)],
            &[(0.0, f64::INFINITY)],
        );
        match out {
            LpOutcome::Optimal { value, solution } => {
                assert!((value - 3.0).abs() < 1e-9);
                assert!((solution[0] - 3.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_variable_known_vertex() {
        // max x + 2y st x + y <= 4, x <= 2, y <= 3 -> (1, 3), value 7.
        let out = lp_solve(
            Sense::Maximize,
            &[1.0, 2.0],
            &[Constraint::le(vec![1.0, 1.0], 4.0)],
            &[(0.0, 2.0), (0.0, 3.0)],
        );
        match out {
            LpOutcome::Optimal { value, solution } => {
                assert!((value - 7.0).abs() < 1e-9);
                assert!((solution[0] - 1.0).abs() < 1e-9);
                assert!((solution[1] - 3.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let inf = lp_solve(
            Sense::Minimize,
            &[1.0],
            &[
                Constraint::ge(vec![1.0], 5.0),
                Constraint::le(vec![1.0], 1.0),
            ],
            &[(0.0, f64::INFINITY)],
        );
        assert_eq!(inf, LpOutcome::Infeasible);

        let unb = lp_solve(
            Sense::Maximize,
            &[1.0],
            &[Constraint::ge(vec![1.0], 1.0)],
            &[(0.0, f64::INFINITY)],
        );
        assert_eq!(unb, LpOutcome::Unbounded);
    }

    #[test]
    fn equality_constraints_hold() {
        // min x + y st x + 2y = 3, x,y in [0, 10]
        let out = lp_solve(
            Sense::Minimize,
            &[1.0, 1.0],
            &[Constraint {
                coeffs: vec![1.0, 2.0],
                relation: Relation::Eq,
                rhs: 3.0,
            }],
            &[(0.0, 10.0), (0.0, 10.0)],
        );
        match out {
            LpOutcome::Optimal { value, solution } => {
                assert!((solution[0] + 2.0 * solution[1] - 3.0).abs() < 1e-9);
                assert!((value - 1.5).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    /// Brute-force oracle: enumerate all vertices of a 3-variable polytope
    /// given by `rows` (a.x <= b) and the unit box, return the minimum of
    /// `c.x` over feasible vertices.
    fn vertex_enumeration_min(c: &[f64; 3], rows: &[([f64; 3], f64)]) -> f64 {
        let mut planes: Vec<([f64; 3], f64)> = rows.to_vec();
        for i in 0..3 {
            let mut a = [0.0; 3];
            a[i] = 1.0;
            planes.push((a, 1.0));
            let mut a = [0.0; 3];
            a[i] = -1.0;
            planes.push((a, 0.0));
        }
        let det3 = |m: &[[f64; 3]; 3]| -> f64 {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let mut best = f64::INFINITY;
        let k = planes.len();
        for i in 0..k {
            for j in (i + 1)..k {
                for l in (j + 1)..k {
                    let a = [planes[i].0, planes[j].0, planes[l].0];
                    let b = [planes[i].1, planes[j].1, planes[l].1];
                    let d = det3(&a);
                    if d.abs() < 1e-10 {
                        continue;
                    }
                    let mut x = [0.0; 3];
                    for col in 0..3 {
                        let mut m = a;
                        for row in 0..3 {
                            m[row][col] = b[row];
                        }
                        x[col] = det3(&m) / d;
                    }
                    let feasible = planes.iter().all(|(p, rhs)| {
                        p[0] * x[0] + p[1] * x[1] + p[2] * x[2] <= rhs + 1e-9
                    });
                    if feasible {
                        best = best.min(c[0] * x[0] + c[1] * x[1] + c[2] * x[2]);
                    }
                }
            }
        }
        best
    }

    // Embeds random 3-variable programs in a 49-variable instance (the
    // decoy LP size) and cross-checks the optimum against exhaustive
    // vertex enumeration.
    #[test]
    fn random_instances_match_vertex_enumeration() {
        let mut rng = SmallRng::new(0x10ad);
        let n = 49;
        for case in 0..25 {
            let mut c3 = [0.0f64; 3];
            for v in c3.iter_mut() {
                *v = rng.uniform(-1.0, 1.0);
            }
            let mut rows3 = Vec::new();
            for _ in 0..6 {
                let a = [
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                ];
                // keep the origin feasible so the region is nonempty
                let b = rng.uniform(0.1, 1.5);
                rows3.push((a, b));
            }
            let oracle = vertex_enumeration_min(&c3, &rows3);

            let mut objective = vec![0.0f64; n];
            objective[..3].copy_from_slice(&c3);
            let constraints: Vec<Constraint> = rows3
                .iter()
                .map(|(a, b)| {
                    let mut coeffs = vec![0.0f64; n];
                    coeffs[..3].copy_from_slice(a);
                    Constraint::le(coeffs, *b)
                })
                .collect();
            let bounds = vec![(0.0, 1.0); n];
            match lp_solve(Sense::Minimize, &objective, &constraints, &bounds) {
                LpOutcome::Optimal { value, solution } => {
                    assert!(
                        (value - oracle).abs() < 1e-7,
                        "case {case}: simplex {value} vs enumeration {oracle}"
                    );
                    for (a, b) in &rows3 {
                        let lhs: f64 =
                            (0..3).map(|i| a[i] * solution[i]).sum();
                        assert!(lhs <= b + 1e-7);
                    }
                }
                other => panic!("case {case}: {other:?}"),
            }
        }
    }

    #[test]
    fn deterministic_across_reruns() {
        let mut rng = SmallRng::new(42);
        let n = 20;
        let objective: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let constraints: Vec<Constraint> = (0..8)
            .map(|_| {
                Constraint::le(
                    (0..n).map(|_| rng.uniform(0.0, 1.0)).collect(),
                    rng.uniform(0.5, 2.0),
                )
            })
            .collect();
        let bounds = vec![(0.0, 1.0); n];
        let a = lp_solve(Sense::Minimize, &objective, &constraints, &bounds);
        let b = lp_solve(Sense::Minimize, &objective, &constraints, &bounds);
        match (&a, &b) {
            (
                LpOutcome::Optimal {
                    value: va,
                    solution: sa,
                },
                LpOutcome::Optimal {
                    value: vb,
                    solution: sb,
                },
            ) => {
                assert!(va.to_bits() == vb.to_bits());
                for (x, y) in sa.iter().zip(sb) {
                    assert!(x.to_bits() == y.to_bits());
                }
            }
            _ => panic!("expected optimal"),
        }
    }
}
