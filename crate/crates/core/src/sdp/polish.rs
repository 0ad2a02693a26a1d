//! Low-rank refinement of an interior-point solution.
//!
//! Near the end of a path-following run the dual slack `S` has small
//! eigenvalues exactly on the range of the optimal primal point. When the
//! cost spans many orders of magnitude the primal iterate itself still
//! carries an O(mu / s) component outside that range long after `S` has
//! settled. Refitting `X = U W U^T` on the near-kernel `U` of `S` recovers
//! the optimal face. A refit is kept only if it is primal feasible to the
//! solver tolerance, psd, and no worse in objective than the iterate.

use super::{ConicData, ConicSolution, SolverOptions};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest rank tried. Only a refit of rank at most two exhibits a lifted
/// point, so higher ranks would only sharpen a relaxed solution.
const MAX_RANK: usize = 2;

#[derive(Clone, Debug)]
pub struct Polished {
    pub x: DMatrix<f64>,
    pub rank: usize,
    pub primal_objective: f64,
    pub primal_infeasibility: f64,
}

/// Lowest-rank feasible refit on the near-kernel of `S`, if any.
pub fn polish(data: &ConicData, raw: &ConicSolution, opts: &SolverOptions) -> Option<Polished> {
    let n = data.dim;
    let m = data.a.len();
    if n < 2 || raw.s.nrows() != n {
        return None;
    }
    let norms: Vec<f64> = data
        .a
        .iter()
        .map(|a| a.frobenius_sq().sqrt().max(f64::MIN_POSITIVE))
        .collect();
    let b = DVector::from_iterator(m, data.b.iter().zip(&norms).map(|(b, s)| b / s));
    let c_norm = data.c.frobenius_sq().sqrt();
    let dense: Vec<DMatrix<f64>> = data
        .a
        .iter()
        .zip(&norms)
        .map(|(a, s)| a.to_dense() / *s)
        .collect();
    let c_unit = data.c.to_dense() / c_norm.max(f64::MIN_POSITIVE);
    let mult = DVector::from_iterator(
        m,
        raw.y
            .iter()
            .zip(&norms)
            .map(|(y, s)| y * s / c_norm.max(f64::MIN_POSITIVE)),
    );
    let eig = SymmetricEigen::new((&raw.s + raw.s.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[p].total_cmp(&eig.eigenvalues[q]));

    for r in 1..=MAX_RANK.min(n - 1) {
        let unknowns = r * (r + 1) / 2;
        if unknowns > m {
            break;
        }
        let u = DMatrix::from_fn(n, r, |i, k| eig.eigenvectors[(i, order[k])]);
        // Basis of symmetric r x r matrices lifted through U.
        let basis: Vec<DMatrix<f64>> = (0..r)
            .flat_map(|p| (p..r).map(move |q| (p, q)))
            .map(|(p, q)| {
                let up = u.column(p);
                let uq = u.column(q);
                if p == q {
                    up * up.transpose()
                } else {
                    up * uq.transpose() + uq * up.transpose()
                }
            })
            .collect();
        let phi = DMatrix::from_fn(m, unknowns, |i, k| dense[i].dot(&basis[k]));
        let w = phi.clone().svd(true, true).solve(&b, 1e-14).ok()?;
        let mut wm = DMatrix::zeros(r, r);
        let mut k = 0;
        for p in 0..r {
            for q in p..r {
                wm[(p, q)] = w[k];
                wm[(q, p)] = w[k];
                k += 1;
            }
        }
        let we = SymmetricEigen::new(wm);
        let top = we.eigenvalues.amax();
        if we.eigenvalues.iter().any(|&l| l < -1e-9 * top.max(1.0)) {
            continue;
        }
        let root =
            &we.eigenvectors * DMatrix::from_diagonal(&we.eigenvalues.map(|l| l.max(0.0).sqrt()));
        let y = feasible_factor(&dense, &b, &u * root);
        let y = descend_factor(&c_unit, &dense, &b, &mult, y, opts.feas_tol);
        let x = &y * y.transpose();
        let pinf = (residual(&dense, &b, &x)).norm() / (1.0 + b.norm());
        if pinf > opts.feas_tol {
            continue;
        }
        let pobj = data.c.inner(&x);
        let slack = opts.gap_tol * (c_norm + raw.primal_objective.abs() + raw.dual_objective.abs());
        if pobj > raw.primal_objective + slack || (pobj - raw.dual_objective).abs() > slack {
            continue;
        }
        return Some(Polished {
            x,
            rank: r,
            primal_objective: pobj,
            primal_infeasibility: pinf,
        });
    }
    None
}

/// `A(X) - b` with dense constraint matrices.
fn residual(a: &[DMatrix<f64>], b: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().map(|ai| ai.dot(x))) - b
}

/// Gauss-Newton on `A(Y Y^T) = b` with minimum-norm steps, which keep the
/// factor close to its start.
fn feasible_factor(a: &[DMatrix<f64>], b: &DVector<f64>, mut y: DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = y.shape();
    for _ in 0..20 {
        let res = residual(a, b, &(&y * y.transpose()));
        if res.norm() <= 1e-15 * (1.0 + b.norm()) {
            break;
        }
        // d<A_j, Y Y^T> / dY = 2 A_j Y.
        let mut jac = DMatrix::zeros(a.len(), n * r);
        for (j, aj) in a.iter().enumerate() {
            let g = aj * &y * 2.0;
            for (k, v) in g.iter().enumerate() {
                jac[(j, k)] = *v;
            }
        }
        let Ok(step) = jac.svd(true, true).solve(&(-&res), 1e-12) else {
            break;
        };
        let next = &y + DMatrix::from_column_slice(n, r, step.as_slice());
        if residual(a, b, &(&next * next.transpose())).norm() >= res.norm() {
            break;
        }
        y = next;
    }
    y
}

/// Newton on the first-order conditions of `min <C, Y Y^T>` subject to
/// `A(Y Y^T) = b` from a feasible factor and the solver multipliers, with a
/// feasibility restoration after every step. The Lagrangian Hessian is
/// `2 (C - A^T y)`, the dual slack. Falls back to the start unless the result
/// is feasible and no costlier.
fn descend_factor(
    c: &DMatrix<f64>,
    a: &[DMatrix<f64>],
    b: &DVector<f64>,
    mult: &DVector<f64>,
    start: DMatrix<f64>,
    feas_tol: f64,
) -> DMatrix<f64> {
    let (n, r) = start.shape();
    let m = a.len();
    let nv = n * r;
    let tol = feas_tol * (1.0 + b.norm());
    let objective = |y: &DMatrix<f64>| c.dot(&(y * y.transpose()));
    let (mut y, mut mult) = (start.clone(), mult.clone());
    for _ in 0..8 {
        let s = a
            .iter()
            .zip(mult.iter())
            .fold(c.clone(), |acc, (ai, &yi)| acc - ai * yi);
        let grad = &s * &y * 2.0;
        let res = residual(a, b, &(&y * y.transpose()));
        if grad.norm() <= 1e-13 * (1.0 + y.norm()) && res.norm() <= tol {
            break;
        }
        let mut k = DMatrix::zeros(nv + m, nv + m);
        for col in 0..r {
            k.view_mut((col * n, col * n), (n, n))
                .copy_from(&(&s * 2.0));
        }
        for (q, aq) in a.iter().enumerate() {
            let g = aq * &y * 2.0;
            for (p, v) in g.iter().enumerate() {
                k[(p, nv + q)] = -*v;
                k[(nv + q, p)] = *v;
            }
        }
        let mut rhs = DVector::zeros(nv + m);
        rhs.rows_mut(0, nv).copy_from_slice((-&grad).as_slice());
        rhs.rows_mut(nv, m).copy_from(&(-&res));
        // Tiny quasi-definite shift; the rotation gauge of Y is otherwise
        // a null direction. Refinement against the unshifted system.
        let mut shifted = k.clone();
        for p in 0..nv {
            shifted[(p, p)] += 1e-12;
        }
        for q in nv..nv + m {
            shifted[(q, q)] -= 1e-12;
        }
        let lu = shifted.lu();
        let Some(mut step) = lu.solve(&rhs) else {
            break;
        };
        for _ in 0..3 {
            let Some(fix) = lu.solve(&(&rhs - &k * &step)) else {
                break;
            };
            step += fix;
        }
        y = feasible_factor(
            a,
            b,
            y + DMatrix::from_column_slice(n, r, &step.as_slice()[..nv]),
        );
        mult += step.rows(nv, m);
    }
    let feasible = residual(a, b, &(&y * y.transpose())).norm() <= tol;
    let f0 = objective(&start);
    if feasible && objective(&y) <= f0 + 1e-12 * (1.0 + f0.abs()) {
        y
    } else {
        start
    }
}
