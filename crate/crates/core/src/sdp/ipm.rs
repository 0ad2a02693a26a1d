//! Primal-dual path-following solver for standard-form semidefinite programs.
//!
//! Solves `min <C, X>  s.t.  <A_i, X> = b_i, X psd` together with its dual
//! `max b^T y  s.t.  sum_i y_i A_i + S = C, S psd` using the HKM search
//! direction and Mehrotra's predictor-corrector. Each iteration forms the dense
//! Schur complement `M_ij = tr(A_i X A_j S^-1)` and factors it by Cholesky.

use super::{ConicData, ConicSolution, SdpSolver, SolverOptions, Status};
use crate::error::Result;
use crate::lifting::SymmetricMatrix;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use std::time::Instant;

#[derive(Clone, Copy, Debug, Default)]
pub struct InteriorPointSolver;

/// Constraint matrix as full-storage triplets plus its nonzero rows.
struct SparseSym {
    /// Every nonzero `(row, col, value)`, both triangles.
    full: Vec<(usize, usize, f64)>,
    /// Row index and its `(col, value)` entries.
    rows: Vec<(usize, Vec<(usize, f64)>)>,
}

impl SparseSym {
    fn new(a: &SymmetricMatrix<f64>, scale: f64) -> Self {
        let mut full = Vec::with_capacity(2 * a.nnz());
        for (i, j, v) in a.entries() {
            full.push((i, j, v * scale));
            if i != j {
                full.push((j, i, v * scale));
            }
        }
        let mut by_row: std::collections::BTreeMap<usize, Vec<(usize, f64)>> = Default::default();
        for &(i, j, v) in &full {
            by_row.entry(i).or_default().push((j, v));
        }
        Self {
            full,
            rows: by_row.into_iter().collect(),
        }
    }

    /// `<A, Y>` summed over all entries, which equals `<A, sym(Y)>`.
    fn inner(&self, y: &DMatrix<f64>) -> f64 {
        self.full.iter().map(|&(i, j, v)| v * y[(i, j)]).sum()
    }

    fn frobenius(&self) -> f64 {
        self.full.iter().map(|&(_, _, v)| v * v).sum::<f64>().sqrt()
    }
}

struct Operators {
    n: usize,
    a: Vec<SparseSym>,
    /// Factor of `A A^T`, used to restore `A(dX) = rp` exactly.
    gram: Option<Cholesky<f64, nalgebra::Dyn>>,
}

impl Operators {
    fn new(n: usize, a: Vec<SparseSym>) -> Self {
        let m = a.len();
        let mut by_entry: std::collections::BTreeMap<(usize, usize), Vec<(usize, f64)>> =
            Default::default();
        for (k, ak) in a.iter().enumerate() {
            for &(i, j, v) in &ak.full {
                by_entry.entry((i, j)).or_default().push((k, v));
            }
        }
        let mut g = DMatrix::zeros(m, m);
        for users in by_entry.values() {
            for &(p, vp) in users {
                for &(q, vq) in users {
                    g[(p, q)] += vp * vq;
                }
            }
        }
        Self {
            n,
            a,
            gram: Cholesky::new(g),
        }
    }

    /// Minimum-norm symmetric change making `A(dx) = target`.
    fn restore(&self, dx: &mut DMatrix<f64>, target: &DVector<f64>) {
        if let Some(g) = &self.gram {
            let miss = target - self.apply(dx);
            *dx += self.adjoint(&g.solve(&miss));
        }
    }

    fn apply(&self, y: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.a.len(), self.a.iter().map(|a| a.inner(y)))
    }

    fn adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (a, &yi) in self.a.iter().zip(y.iter()) {
            if yi != 0.0 {
                for &(i, j, v) in &a.full {
                    out[(i, j)] += yi * v;
                }
            }
        }
        out
    }

    /// Schur complement `M_ij = tr(A_i X A_j S^-1)`, one column per task.
    fn schur(&self, x: &DMatrix<f64>, sinv: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.a.len();
        let n = self.n;
        let cols: Vec<Vec<f64>> = self
            .a
            .par_iter()
            .map(|aj| {
                // G = X A_j S^-1 assembled one nonzero row of A_j at a time.
                let mut g = DMatrix::zeros(n, n);
                let mut prow = DVector::zeros(n);
                for (c, entries) in &aj.rows {
                    prow.fill(0.0);
                    for &(d, v) in entries {
                        prow.axpy(v, &sinv.column(d), 1.0);
                    }
                    g.ger(1.0, &x.column(*c), &prow, 1.0);
                }
                self.a
                    .iter()
                    .map(|ai| ai.full.iter().map(|&(a, b, v)| v * g[(b, a)]).sum())
                    .collect()
            })
            .collect();
        let mut mm = DMatrix::zeros(m, m);
        for (j, col) in cols.into_iter().enumerate() {
            for (i, v) in col.into_iter().enumerate() {
                mm[(i, j)] = v;
            }
        }
        // Round-off asymmetry only.
        (&mm + mm.transpose()) * 0.5
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Largest `alpha` with `X + alpha dX` psd, `None` if `X` is not positive
/// definite.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    let l = Cholesky::new(x.clone())?.l();
    let t = l.solve_lower_triangular(dx)?;
    let w = l.solve_lower_triangular(&t.transpose())?;
    let lmin = SymmetricEigen::new(sym(&w)).eigenvalues.min();
    Some(if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    })
}

/// Factored Schur complement with a diagonal shift when the plain factor
/// fails.
fn factor(m: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().amax().max(1.0);
    let mut shift = 0.0;
    for _ in 0..6 {
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += shift;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Some(c);
        }
        shift = if shift == 0.0 {
            1e-14 * scale
        } else {
            shift * 100.0
        };
    }
    None
}

struct Direction {
    dx: DMatrix<f64>,
    dy: DVector<f64>,
    ds: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Residuals {
    pobj: f64,
    dobj: f64,
    pinf: f64,
    dinf: f64,
    gap: f64,
    /// Gap relative to the normalized data, `|p - d| / (1 + |p| + |d|)` with
    /// the cost scaled to unit norm.
    scaled_gap: f64,
}

impl InteriorPointSolver {
    #[allow(clippy::too_many_arguments)]
    fn direction(
        ops: &Operators,
        schur: &DMatrix<f64>,
        chol: &Cholesky<f64, nalgebra::Dyn>,
        x: &DMatrix<f64>,
        sinv: &DMatrix<f64>,
        rp: &DVector<f64>,
        rd: &DMatrix<f64>,
        r: &DMatrix<f64>,
        x_rd_sinv: &DVector<f64>,
    ) -> Direction {
        // dX = R - X dS S^-1, dS = Rd - A^T dy, A(dX) = rp.
        let rhs = rp - ops.apply(r) + x_rd_sinv;
        let mut dy = chol.solve(&rhs);
        // Two rounds of iterative refinement against the unshifted matrix.
        for _ in 0..2 {
            let r = &rhs - schur * &dy;
            dy += chol.solve(&r);
        }
        let ds = rd - ops.adjoint(&dy);
        let mut dx = sym(&(r - x * &ds * sinv));
        ops.restore(&mut dx, rp);
        Direction { dx, dy, ds }
    }
}

impl SdpSolver for InteriorPointSolver {
    fn name(&self) -> &'static str {
        "hkm-predictor-corrector"
    }

    fn solve(&self, data: &ConicData, opts: &SolverOptions) -> Result<ConicSolution> {
        let start = Instant::now();
        let n = data.dim;
        let m = data.a.len();

        // Unit-norm rows and a cost normalized to unit Frobenius norm.
        let row_norms: Vec<f64> = data
            .a
            .iter()
            .map(|a| a.frobenius_sq().sqrt().max(f64::MIN_POSITIVE))
            .collect();
        let ops = Operators::new(
            n,
            data.a
                .iter()
                .zip(&row_norms)
                .map(|(a, &s)| SparseSym::new(a, 1.0 / s))
                .collect(),
        );
        let b = DVector::from_iterator(m, data.b.iter().zip(&row_norms).map(|(b, s)| b / s));
        let c_scale = data.c.frobenius_sq().sqrt().max(1.0);
        let c = SparseSym::new(&data.c, 1.0 / c_scale);
        let mut c_dense = DMatrix::zeros(n, n);
        for &(i, j, v) in &c.full {
            c_dense[(i, j)] = v;
        }
        let b_norm = b.norm();
        let c_norm = c.frobenius();

        let nf = n as f64;
        let a_max = ops.a.iter().map(SparseSym::frobenius).fold(0.0, f64::max);
        let xi = b
            .iter()
            .map(|&bi| nf.sqrt() * (1.0 + bi.abs()) / (1.0 + 1.0))
            .fold(10f64.max(nf.sqrt()), f64::max);
        let eta = 10f64.max(nf.sqrt()).max(a_max).max(c_norm);
        let mut x = DMatrix::identity(n, n) * xi;
        let mut s = DMatrix::identity(n, n) * eta;
        let mut y = DVector::zeros(m);

        let unscale = |x: &DMatrix<f64>, y: &DVector<f64>, s: &DMatrix<f64>| {
            let y0 = DVector::from_iterator(
                m,
                y.iter().zip(&row_norms).map(|(yi, ni)| c_scale * yi / ni),
            );
            (x.clone(), y0, s * c_scale)
        };
        let evaluate = |x: &DMatrix<f64>, y: &DVector<f64>, s: &DMatrix<f64>| {
            let rp = &b - ops.apply(x);
            let rd = &c_dense - ops.adjoint(y) - s;
            let pobj = c_scale * c.inner(x);
            let dobj = c_scale * b.dot(y);
            let comp = c_scale * dot(x, s);
            let res = Residuals {
                pobj,
                dobj,
                pinf: rp.norm() / (1.0 + b_norm),
                dinf: rd.norm() / (1.0 + c_norm),
                gap: (pobj - dobj).abs().max(comp.abs()) / pobj.abs().max(1.0),
                scaled_gap: (pobj - dobj).abs().max(comp.abs())
                    / (c_scale + pobj.abs() + dobj.abs()),
            };
            (rp, rd, res)
        };
        let finish = |x: &DMatrix<f64>,
                      y: &DVector<f64>,
                      s: &DMatrix<f64>,
                      res: Residuals,
                      status: Status,
                      it: usize| {
            let (x, y, s) = unscale(x, y, s);
            Ok(ConicSolution {
                x,
                y,
                s,
                status,
                iterations: it,
                primal_objective: res.pobj,
                dual_objective: res.dobj,
                primal_infeasibility: res.pinf,
                dual_infeasibility: res.dinf,
                gap: res.gap,
            })
        };
        let near = |r: &Residuals| {
            r.pinf <= opts.near_tol
                && r.dinf <= opts.near_tol
                && (r.gap <= opts.near_gap_tol || r.scaled_gap <= opts.gap_tol)
        };

        // Best iterate by worst ratio of residual to its tolerance.
        let merit = |r: &Residuals| {
            (r.pinf / opts.feas_tol)
                .max(r.dinf / opts.feas_tol)
                .max(r.gap / opts.gap_tol)
        };
        let mut best: Option<(DMatrix<f64>, DVector<f64>, DMatrix<f64>, Residuals, usize)> = None;
        let mut stalls = 0;

        for it in 0..opts.max_iters.max(1) {
            let (rp, rd, res) = evaluate(&x, &y, &s);
            if opts.verbose {
                eprintln!(
                    "{it:3} p {:+.10e} d {:+.10e} pinf {:.2e} dinf {:.2e} gap {:.2e} sgap {:.2e}",
                    res.pobj, res.dobj, res.pinf, res.dinf, res.gap, res.scaled_gap
                );
            }
            if best.as_ref().map_or(true, |b| merit(&res) < merit(&b.3)) {
                best = Some((x.clone(), y.clone(), s.clone(), res, it));
            }
            if res.pinf <= opts.feas_tol && res.dinf <= opts.feas_tol && res.gap <= opts.gap_tol {
                return finish(&x, &y, &s, res, Status::Optimal, it);
            }
            if opts
                .time_limit_s
                .is_some_and(|limit| start.elapsed().as_secs_f64() > limit)
            {
                return finish(&x, &y, &s, res, Status::Timeout, it);
            }
            if x.amax() > 1e12 || y.amax() > 1e12 {
                return finish(&x, &y, &s, res, Status::Infeasible, it);
            }
            match Self::step(&ops, &mut x, &mut y, &mut s, &rp, &rd, nf) {
                Some(alpha) => {
                    stalls = if alpha < 1e-8 { stalls + 1 } else { 0 };
                    if stalls >= 3 {
                        break;
                    }
                }
                None => break,
            }
        }
        let (x, y, s, res, it) = best.expect("at least one iteration");
        let status = if near(&res) {
            Status::NearOptimal
        } else {
            Status::NumericalError
        };
        finish(&x, &y, &s, res, status, it)
    }
}

impl InteriorPointSolver {
    /// One predictor-corrector step in place; returns the larger step length
    /// or `None` when a factorization fails.
    fn step(
        ops: &Operators,
        x: &mut DMatrix<f64>,
        y: &mut DVector<f64>,
        s: &mut DMatrix<f64>,
        rp: &DVector<f64>,
        rd: &DMatrix<f64>,
        nf: f64,
    ) -> Option<f64> {
        let sinv = sym(&Cholesky::new(s.clone())?.inverse());
        let schur = ops.schur(x, &sinv);
        let chol = factor(schur.clone())?;
        let mu = dot(x, s) / nf;
        let x_rd_sinv = ops.apply(&(&*x * rd * &sinv));

        let pred = Self::direction(ops, &schur, &chol, x, &sinv, rp, rd, &(-&*x), &x_rd_sinv);
        let ap = max_step(x, &pred.dx)?.min(1.0);
        let ad = max_step(s, &pred.ds)?.min(1.0);
        let mu_aff = dot(&(&*x + &pred.dx * ap), &(&*s + &pred.ds * ad)) / nf;
        let expo = (3.0 * ap.min(ad).powi(2)).max(1.0);
        let sigma = (mu_aff / mu).max(0.0).powf(expo).min(1.0);

        let r = &sinv * (sigma * mu) - &*x - &pred.dx * &pred.ds * &sinv;
        let corr = Self::direction(ops, &schur, &chol, x, &sinv, rp, rd, &r, &x_rd_sinv);
        let ap = max_step(x, &corr.dx)?;
        let ad = max_step(s, &corr.ds)?;
        let tau = 0.9 + 0.09 * ap.min(ad).min(1.0);
        let (ap, ad) = ((tau * ap).min(1.0), (tau * ad).min(1.0));

        *x = sym(&(&*x + &corr.dx * ap));
        *y += &corr.dy * ad;
        *s = sym(&(&*s + &corr.ds * ad));
        Some(ap.max(ad))
    }
}
