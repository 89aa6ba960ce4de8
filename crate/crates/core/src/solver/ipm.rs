//! Infeasible-start primal-dual interior point method with Mehrotra
//! predictor-corrector steps, for [`ConvexProgram`]s.
//!
//! Each iteration solves the reduced Newton system
//!
//! ```text
//! [ H + C' (Z/S) C   A' ] [dx]   [ -r_d - C' ((z r_c - r_s) / s) ]
//! [ A                0  ] [dy] = [ -r_p                          ]
//! ```
//!
//! with `r_d = grad f + A'y + C'z`, `r_p = Ax - b`, `r_c = Cx + s - d`.

use nalgebra::{DMatrix, DVector};

use super::program::{inf_norm, ConvexProgram};

#[derive(Debug, Clone, Copy)]
pub struct IpmSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Converged,
    MaxIter,
    /// Progress stopped before the tolerances were met.
    Stalled,
    /// Primal residual stuck away from zero while duals diverge.
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub iterations: usize,
    pub status: IpmStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub mu: f64,
}

struct Residuals {
    r_d: Vec<f64>,
    r_p: Vec<f64>,
    r_c: Vec<f64>,
    mu: f64,
    primal: f64,
    dual: f64,
}

fn residuals(
    prog: &ConvexProgram<'_>,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    s: &[f64],
    grad: &[f64],
) -> Residuals {
    let mut r_d = grad.to_vec();
    ConvexProgram::scatter(&prog.eq, y, &mut r_d);
    ConvexProgram::scatter(&prog.ineq, z, &mut r_d);
    let r_p: Vec<f64> = prog
        .mul_eq(x)
        .into_iter()
        .zip(&prog.eq)
        .map(|(ax, r)| ax - r.rhs)
        .collect();
    let r_c: Vec<f64> = prog
        .mul_ineq(x)
        .into_iter()
        .zip(&prog.ineq)
        .zip(s)
        .map(|((cx, r), si)| cx + si - r.rhs)
        .collect();
    let m = s.len().max(1);
    let mu = s.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / m as f64;
    let b_norm = prog.eq.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    let d_norm = prog.ineq.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    let primal = (inf_norm(&r_p) / (1.0 + b_norm)).max(inf_norm(&r_c) / (1.0 + d_norm));
    let dual = inf_norm(&r_d) / (1.0 + inf_norm(grad));
    Residuals {
        r_d,
        r_p,
        r_c,
        mu,
        primal,
        dual,
    }
}

/// Largest `alpha <= 1` with `v + alpha * dv >= 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(1.0, f64::min)
}

struct Newton {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl Newton {
    fn factor(prog: &ConvexProgram<'_>, x: &[f64], z: &[f64], s: &[f64]) -> Option<Self> {
        let n = prog.num_vars;
        let p = prog.eq.len();
        let mut k = DMatrix::zeros(n + p, n + p);
        {
            let mut h = DMatrix::zeros(n, n);
            prog.objective.add_hessian(x, &mut h);
            k.view_mut((0, 0), (n, n)).copy_from(&h);
        }
        for (row, (zi, si)) in prog.ineq.iter().zip(z.iter().zip(s)) {
            let w = zi / si;
            for &(i, a) in &row.coefs {
                for &(j, b) in &row.coefs {
                    k[(i, j)] += w * a * b;
                }
            }
        }
        for (r, row) in prog.eq.iter().enumerate() {
            for &(j, a) in &row.coefs {
                k[(n + r, j)] += a;
                k[(j, n + r)] += a;
            }
        }
        // keeps the factorization alive when equality rows are dependent
        // or a variable is unconstrained in a flat direction
        let diag_scale = (0..n).map(|i| k[(i, i)].abs()).fold(1.0, f64::max);
        for i in 0..n {
            k[(i, i)] += 1e-14 * diag_scale;
        }
        for r in 0..p {
            k[(n + r, n + r)] -= 1e-14;
        }
        if k.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let lu = k.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Self { lu, n })
    }

    fn solve(&self, rhs_x: &[f64], rhs_y: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut rhs = DVector::zeros(self.n + rhs_y.len());
        for (i, v) in rhs_x.iter().enumerate() {
            rhs[i] = *v;
        }
        for (i, v) in rhs_y.iter().enumerate() {
            rhs[self.n + i] = *v;
        }
        let sol = self.lu.solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((
            sol.rows(0, self.n).iter().copied().collect(),
            sol.rows(self.n, rhs_y.len()).iter().copied().collect(),
        ))
    }
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
    dz: Vec<f64>,
}

fn direction(
    prog: &ConvexProgram<'_>,
    newton: &Newton,
    res: &Residuals,
    z: &[f64],
    s: &[f64],
    r_s: &[f64],
) -> Option<Direction> {
    let n = prog.num_vars;
    let mut rhs_x: Vec<f64> = res.r_d.iter().map(|v| -v).collect();
    let w: Vec<f64> = (0..s.len())
        .map(|i| (z[i] * res.r_c[i] - r_s[i]) / s[i])
        .collect();
    let mut ctw = vec![0.0; n];
    ConvexProgram::scatter(&prog.ineq, &w, &mut ctw);
    for (r, c) in rhs_x.iter_mut().zip(&ctw) {
        *r -= c;
    }
    let rhs_y: Vec<f64> = res.r_p.iter().map(|v| -v).collect();
    let (dx, dy) = newton.solve(&rhs_x, &rhs_y)?;
    let cdx = prog.mul_ineq(&dx);
    let ds: Vec<f64> = res.r_c.iter().zip(&cdx).map(|(rc, c)| -rc - c).collect();
    let dz: Vec<f64> = (0..s.len())
        .map(|i| (-r_s[i] - z[i] * ds[i]) / s[i])
        .collect();
    Some(Direction { dx, dy, ds, dz })
}

pub fn interior_point(prog: &ConvexProgram<'_>, x0: &[f64], settings: &IpmSettings) -> IpmResult {
    let m = prog.ineq.len();
    let p = prog.eq.len();
    let linear = prog.objective.is_linear();

    let mut x = x0.to_vec();
    let cx = prog.mul_ineq(&x);
    let mut s: Vec<f64> = prog
        .ineq
        .iter()
        .zip(&cx)
        .map(|(r, c)| (r.rhs - c).max(0.5))
        .collect();
    let mut z = vec![1.0; m];
    let mut y = vec![0.0; p];

    let mut best: Option<(f64, IpmResult)> = None;
    let mut since_best = 0usize;
    let mut status = IpmStatus::MaxIter;
    let mut iterations = 0;

    for it in 0..settings.max_iter {
        iterations = it;
        let grad = prog.objective.gradient(&x);
        let res = residuals(prog, &x, &y, &z, &s, &grad);
        let merit = res.primal.max(res.dual).max(res.mu);
        let snapshot = |status| IpmResult {
            x: x.clone(),
            y: y.clone(),
            z: z.clone(),
            s: s.clone(),
            iterations: it,
            status,
            primal_residual: res.primal,
            dual_residual: res.dual,
            mu: res.mu,
        };
        if best.as_ref().is_none_or(|(b, _)| merit < 0.5 * b) {
            since_best = 0;
        } else {
            since_best += 1;
        }
        if best.as_ref().is_none_or(|(b, _)| merit < *b) {
            best = Some((merit, snapshot(IpmStatus::Stalled)));
        }
        if res.primal <= settings.tol && res.dual <= settings.tol && res.mu <= settings.tol {
            status = IpmStatus::Converged;
            best = Some((merit, snapshot(IpmStatus::Converged)));
            break;
        }
        let zmax = inf_norm(&z);
        if res.primal > 1e-6 && zmax > 1e12 {
            status = IpmStatus::Infeasible;
            break;
        }
        if since_best > 40 {
            status = IpmStatus::Stalled;
            break;
        }

        let Some(newton) = Newton::factor(prog, &x, &z, &s) else {
            status = IpmStatus::Stalled;
            break;
        };

        // predictor
        let r_s: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a * b).collect();
        let Some(aff) = direction(prog, &newton, &res, &z, &s, &r_s) else {
            status = IpmStatus::Stalled;
            break;
        };
        let ap = max_step(&s, &aff.ds);
        let ad = max_step(&z, &aff.dz);
        let mu_aff = if m == 0 {
            0.0
        } else {
            (0..m)
                .map(|i| (s[i] + ap * aff.ds[i]) * (z[i] + ad * aff.dz[i]))
                .sum::<f64>()
                / m as f64
        };
        let sigma = if res.mu > 0.0 {
            (mu_aff / res.mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // corrector
        let r_s: Vec<f64> = (0..m)
            .map(|i| s[i] * z[i] + aff.ds[i] * aff.dz[i] - sigma * res.mu)
            .collect();
        let Some(dir) = direction(prog, &newton, &res, &z, &s, &r_s) else {
            status = IpmStatus::Stalled;
            break;
        };
        let mut ap = (0.995 * max_step(&s, &dir.ds)).min(1.0);
        let mut ad = (0.995 * max_step(&z, &dir.dz)).min(1.0);
        if !linear {
            ap = ap.min(ad);
            ad = ap;
        }
        for (xi, d) in x.iter_mut().zip(&dir.dx) {
            *xi += ap * d;
        }
        for (si, d) in s.iter_mut().zip(&dir.ds) {
            *si = (*si + ap * d).max(1e-300);
        }
        for (yi, d) in y.iter_mut().zip(&dir.dy) {
            *yi += ad * d;
        }
        for (zi, d) in z.iter_mut().zip(&dir.dz) {
            *zi = (*zi + ad * d).max(1e-300);
        }
        iterations = it + 1;
    }

    let (_, mut out) = best.expect("at least one iteration runs");
    if status != IpmStatus::Converged {
        out.status = status;
    }
    out.iterations = iterations;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::program::{LinearObjective, LinearRow, SmoothObjective};

    fn bounds(n: usize, lo: f64, hi: f64) -> Vec<LinearRow> {
        (0..n)
            .flat_map(|i| {
                [
                    LinearRow::new(vec![(i, 1.0)], hi),
                    LinearRow::new(vec![(i, -1.0)], -lo),
                ]
            })
            .collect()
    }

    #[test]
    fn small_lp() {
        // max x + y  s.t. x + 2y <= 4, 3x + y <= 6, 0 <= x,y <= 10 -> (1.6, 1.2)
        let obj = LinearObjective { c: vec![-1.0, -1.0] };
        let mut ineq = bounds(2, 0.0, 10.0);
        ineq.push(LinearRow::new(vec![(0, 1.0), (1, 2.0)], 4.0));
        ineq.push(LinearRow::new(vec![(0, 3.0), (1, 1.0)], 6.0));
        let prog = ConvexProgram {
            num_vars: 2,
            objective: &obj,
            eq: vec![],
            ineq,
        };
        let r = interior_point(&prog, &[5.0, 5.0], &IpmSettings::default());
        assert_eq!(r.status, IpmStatus::Converged);
        assert!((r.x[0] - 1.6).abs() < 1e-8 && (r.x[1] - 1.2).abs() < 1e-8);
    }

    struct Quadratic;
    impl SmoothObjective for Quadratic {
        fn value(&self, x: &[f64]) -> f64 {
            (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2)
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)]
        }
        fn add_hessian(&self, _x: &[f64], h: &mut DMatrix<f64>) {
            h[(0, 0)] += 2.0;
            h[(1, 1)] += 2.0;
        }
        fn is_linear(&self) -> bool {
            false
        }
    }

    #[test]
    fn bounded_quadratic_with_equality() {
        // min (x-3)^2 + (y+1)^2, x + y = 1, 0 <= x,y <= 1 -> (1, 0)
        let prog = ConvexProgram {
            num_vars: 2,
            objective: &Quadratic,
            eq: vec![LinearRow::new(vec![(0, 1.0), (1, 1.0)], 1.0)],
            ineq: bounds(2, 0.0, 1.0),
        };
        let r = interior_point(&prog, &[0.5, 0.5], &IpmSettings::default());
        assert_eq!(r.status, IpmStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && r.x[1].abs() < 1e-8);
    }

    #[test]
    fn infeasible_equality_is_detected() {
        let obj = LinearObjective { c: vec![1.0] };
        let prog = ConvexProgram {
            num_vars: 1,
            objective: &obj,
            eq: vec![LinearRow::new(vec![(0, 1.0)], 2.0)],
            ineq: bounds(1, 0.0, 1.0),
        };
        let r = interior_point(&prog, &[0.5], &IpmSettings::default());
        assert_ne!(r.status, IpmStatus::Converged);
        assert!(r.primal_residual > 1e-3);
    }
}
