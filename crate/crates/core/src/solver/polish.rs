//! Active-set refinement of an interior-point solution.
//!
//! Rows with `z_i > s_i` at the interior solution are guessed active. The
//! point is projected onto their intersection and, if the face has free
//! directions with positive curvature, Newton's method finishes the solve in
//! the face's null space. The result is accepted only when it is feasible and
//! the recovered multipliers have the right signs.

use nalgebra::{DMatrix, DVector};

use super::ipm::IpmResult;
use super::program::{independent_rows, ConvexProgram};

#[derive(Debug, Clone)]
pub struct Polished {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowRef {
    Eq(usize),
    Ineq(usize),
}

/// Indices of inequality rows the interior solution treats as active.
pub fn active_rows(ipm: &IpmResult) -> Vec<usize> {
    (0..ipm.z.len()).filter(|&i| ipm.z[i] > ipm.s[i]).collect()
}

pub fn polish(prog: &ConvexProgram<'_>, ipm: &IpmResult, feas_tol: f64) -> Option<Polished> {
    let mut active = active_rows(ipm);
    active.sort_by(|&a, &b| {
        let ra = ipm.z[a] / ipm.s[a];
        let rb = ipm.z[b] / ipm.s[b];
        rb.total_cmp(&ra)
    });
    for _ in 0..=prog.ineq.len() {
        match polish_on(prog, &ipm.x, &active, feas_tol)? {
            Ok(p) => return Some(p),
            Err(release) => active.retain(|i| !release.contains(i)),
        }
    }
    None
}

/// Polishes on the face of `active`. `Err` carries the rows a feasible
/// descent direction moves off of.
fn polish_on(
    prog: &ConvexProgram<'_>,
    x0: &[f64],
    active: &[usize],
    feas_tol: f64,
) -> Option<Result<Polished, Vec<usize>>> {
    let n = prog.num_vars;
    let mut refs: Vec<RowRef> = (0..prog.eq.len()).map(RowRef::Eq).collect();
    refs.extend(active.iter().map(|&i| RowRef::Ineq(i)));
    let row = |r: RowRef| match r {
        RowRef::Eq(i) => &prog.eq[i],
        RowRef::Ineq(i) => &prog.ineq[i],
    };
    let dense: Vec<DVector<f64>> = refs.iter().map(|&r| row(r).dense(n)).collect();
    let keep = independent_rows(&dense, 1e-9);
    let rank = keep.len();

    let e = DMatrix::from_fn(rank, n, |r, c| dense[keep[r]][c]);
    let rhs = DVector::from_iterator(rank, keep.iter().map(|&k| row(refs[k]).rhs));

    // minimum-norm projection onto {E x = rhs}
    let mut x = DVector::from_column_slice(x0);
    if rank > 0 {
        let gram = &e * e.transpose();
        let chol = gram.cholesky()?;
        let corr = e.transpose() * chol.solve(&(&rhs - &e * &x));
        x += corr;
    }

    if rank < n {
        let basis = null_space(&e, n, rank);
        newton_in_face(prog, &mut x, &basis)?;
    }

    let xs: Vec<f64> = x.iter().copied().collect();
    if prog.infeasibility(&xs) > feas_tol {
        return None;
    }

    // multipliers over every face row, inequalities sign-constrained
    let grad = DVector::from_vec(prog.objective.gradient(&xs));
    let all = DMatrix::from_fn(n, refs.len(), |r, c| dense[c][r]);
    let free: Vec<bool> = refs.iter().map(|r| matches!(r, RowRef::Eq(_))).collect();
    let lambda = nnls(&all, &(-&grad), &free);
    let residual = &grad + &all * &lambda;
    let dual_residual = residual.amax() / (1.0 + grad.amax());

    if dual_residual > 1e-8 {
        // -residual is a feasible descent direction; release the rows it leaves
        let leave = all.transpose() * &residual;
        let cut = 1e-9 * residual.norm_squared().max(f64::MIN_POSITIVE);
        let release: Vec<usize> = refs
            .iter()
            .zip(leave.iter())
            .filter_map(|(&r, &l)| match r {
                RowRef::Ineq(i) if l > cut => Some(i),
                _ => None,
            })
            .collect();
        return if release.is_empty() { None } else { Some(Err(release)) };
    }

    let mut y = vec![0.0; prog.eq.len()];
    let mut z = vec![0.0; prog.ineq.len()];
    for (k, &r) in refs.iter().enumerate() {
        match r {
            RowRef::Eq(i) => y[i] += lambda[k],
            RowRef::Ineq(i) => z[i] += lambda[k],
        }
    }
    Some(Ok(Polished {
        x: xs,
        y,
        z,
        dual_residual,
    }))
}

/// `argmin ||a l - b||` with `l_j >= 0` for every `j` not marked `free`
/// (Lawson-Hanson active set).
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, free: &[bool]) -> DVector<f64> {
    let m = a.ncols();
    let mut l = DVector::zeros(m);
    let mut passive: Vec<bool> = free.to_vec();
    let scale = 1.0 + b.amax() + a.amax();
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let cols: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let mut out = DVector::zeros(m);
        if cols.is_empty() {
            return out;
        }
        let sub = DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])]);
        let svd = sub.svd(true, true);
        let sol = svd
            .solve(b, 1e-12 * scale)
            .unwrap_or_else(|_| DVector::zeros(cols.len()));
        for (k, &j) in cols.iter().enumerate() {
            out[j] = sol[k];
        }
        out
    };
    l = if free.iter().any(|&f| f) { solve_passive(&passive) } else { l };
    for _ in 0..3 * m + 10 {
        let w = a.transpose() * (b - a * &l);
        let pick = (0..m)
            .filter(|&j| !passive[j] && w[j] > 1e-12 * scale)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = pick else { break };
        passive[j] = true;
        loop {
            let zsol = solve_passive(&passive);
            let blocked: Vec<usize> = (0..m)
                .filter(|&i| passive[i] && !free[i] && zsol[i] <= 0.0)
                .collect();
            if blocked.is_empty() {
                l = zsol;
                break;
            }
            let alpha = blocked
                .iter()
                .map(|&i| l[i] / (l[i] - zsol[i]))
                .fold(f64::INFINITY, f64::min);
            l += alpha * (&zsol - &l);
            for i in 0..m {
                if passive[i] && !free[i] && l[i] <= 1e-15 * scale {
                    passive[i] = false;
                    l[i] = 0.0;
                }
            }
        }
    }
    l
}

/// Orthonormal basis of the null space of `e` as columns of an `n x (n-rank)`
/// matrix.
fn null_space(e: &DMatrix<f64>, n: usize, rank: usize) -> DMatrix<f64> {
    if rank == 0 {
        return DMatrix::identity(n, n);
    }
    let ete = e.transpose() * e;
    let eig = ete.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let cols: Vec<DVector<f64>> = order[..n - rank]
        .iter()
        .map(|&k| eig.eigenvectors.column(k).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// Minimizes the objective over `x + span(basis)` with damped Newton steps.
/// Fails when the reduced Hessian is not safely positive definite.
fn newton_in_face(
    prog: &ConvexProgram<'_>,
    x: &mut DVector<f64>,
    basis: &DMatrix<f64>,
) -> Option<()> {
    let n = prog.num_vars;
    for _ in 0..200 {
        let xs: Vec<f64> = x.iter().copied().collect();
        let g = DVector::from_vec(prog.objective.gradient(&xs));
        let mut h = DMatrix::zeros(n, n);
        prog.objective.add_hessian(&xs, &mut h);
        let gr = basis.transpose() * &g;
        let hr = basis.transpose() * &h * basis;
        let eig_max = hr.diagonal().amax().max(1e-300);
        let chol = hr.clone().cholesky()?;
        // reject faces whose curvature is numerically flat
        let min_pivot = chol.l().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
        if !(min_pivot > 1e-10 * eig_max) {
            return None;
        }
        if gr.amax() <= 1e-13 * (1.0 + g.amax()) {
            return Some(());
        }
        let dw = chol.solve(&(-&gr));
        let decrement = -gr.dot(&dw);
        if !(decrement > 0.0) {
            return Some(());
        }
        let step = basis * &dw;
        let f0 = prog.objective.value(&xs);
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = xs.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            if prog.objective.value(&trial) <= f0 - 0.25 * alpha * decrement {
                *x = DVector::from_vec(trial);
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return Some(());
            }
        }
    }
    Some(())
}
