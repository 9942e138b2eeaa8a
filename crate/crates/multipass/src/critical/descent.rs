//! Monotone geodesic descent to pseudo-minima, and a Levenberg-Marquardt
//! search for critical points of any index.

use nalgebra::{DMatrix, DVector, SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::PairInteraction;
use crate::so3::{retract_pair, riem_grad_uv, riem_hess_uv, Rotation};

/// A scalar function on SO(3) × SO(3) with Riemannian derivatives in body
/// angular-velocity coordinates `(ωU, ωV)`.
pub trait PairObjective: Sync {
    fn value(&self, u: &Rotation, v: &Rotation) -> f64;

    fn gradient(&self, u: &Rotation, v: &Rotation) -> SVector<f64, 6> {
        riem_grad_uv(|a, b| self.value(a, b), u, v, 1e-5).unwrap_or(SVector::repeat(f64::NAN))
    }

    fn hessian(&self, u: &Rotation, v: &Rotation) -> SMatrix<f64, 6, 6> {
        riem_hess_uv(|a, b| self.value(a, b), u, v, 1e-4).unwrap_or(SMatrix::repeat(f64::NAN))
    }
}

impl PairObjective for PairInteraction {
    fn value(&self, u: &Rotation, v: &Rotation) -> f64 {
        PairInteraction::value(self, u, v)
    }

    fn gradient(&self, u: &Rotation, v: &Rotation) -> SVector<f64, 6> {
        PairInteraction::gradient(self, u, v)
    }

    fn hessian(&self, u: &Rotation, v: &Rotation) -> SMatrix<f64, 6, 6> {
        PairInteraction::hessian(self, u, v)
    }
}

/// A plain closure as an objective with finite-difference derivatives.
pub struct FnObjective<F>(pub F);

impl<F: Fn(&Rotation, &Rotation) -> f64 + Sync> PairObjective for FnObjective<F> {
    fn value(&self, u: &Rotation, v: &Rotation) -> f64 {
        (self.0)(u, v)
    }
}

/// `−f`, used for ascent.
pub struct Negated<'a>(pub &'a dyn PairObjective);

impl PairObjective for Negated<'_> {
    fn value(&self, u: &Rotation, v: &Rotation) -> f64 {
        -self.0.value(u, v)
    }

    fn gradient(&self, u: &Rotation, v: &Rotation) -> SVector<f64, 6> {
        -self.0.gradient(u, v)
    }

    fn hessian(&self, u: &Rotation, v: &Rotation) -> SMatrix<f64, 6, 6> {
        -self.0.hessian(u, v)
    }
}

/// Which rotation factors the descent may move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FreeFactors {
    #[default]
    Both,
    FirstOnly,
    SecondOnly,
}

impl FreeFactors {
    fn indices(self) -> Vec<usize> {
        match self {
            FreeFactors::Both => (0..6).collect(),
            FreeFactors::FirstOnly => (0..3).collect(),
            FreeFactors::SecondOnly => (3..6).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentOptions {
    /// Initial trial step length.
    pub step: f64,
    pub tol_grad: f64,
    pub tol_hess: f64,
    pub max_steps: usize,
    /// Largest geodesic length of a single step.
    pub max_step_length: f64,
    /// Newton steps are tried once the gradient norm drops below this.
    pub newton_below: f64,
    pub free: FreeFactors,
    pub record_trajectory: bool,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions {
            step: 0.1,
            tol_grad: 1e-7,
            tol_hess: 1e-6,
            max_steps: 2000,
            max_step_length: 0.5,
            newton_below: 1e-2,
            free: FreeFactors::Both,
            record_trajectory: false,
        }
    }
}

/// Terminal point of a descent and the first/second-order data there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoMinReport {
    pub u: Rotation,
    pub v: Rotation,
    pub grad_norm: f64,
    pub hess_min_eig: f64,
    pub f_value: f64,
    pub steps: usize,
    pub converged: bool,
    /// Accepted iterates including the start, when recorded.
    pub trajectory: Vec<(Rotation, Rotation)>,
    pub trajectory_values: Vec<f64>,
}

/// A smooth function on a manifold chart: values, Riemannian derivatives
/// and a retraction.
pub trait DescentProblem {
    type Point: Clone;
    fn dim(&self) -> usize;
    fn value(&self, x: &Self::Point) -> f64;
    fn gradient(&self, x: &Self::Point) -> DVector<f64>;
    fn hessian(&self, x: &Self::Point) -> DMatrix<f64>;
    fn retract(&self, x: &Self::Point, step: &DVector<f64>) -> Self::Point;
}

/// Outcome of [`minimize`].
#[derive(Clone, Debug)]
pub struct DescentOutcome<P> {
    pub point: P,
    pub value: f64,
    pub grad_norm: f64,
    pub hess_min_eig: f64,
    pub steps: usize,
    pub converged: bool,
    pub trajectory: Vec<P>,
    pub values: Vec<f64>,
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Evaluation(format!("objective returned {x}")))
    }
}

fn min_eigen(h: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut k = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[k] {
            k = i;
        }
    }
    (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned())
}

/// Geodesic gradient descent with Barzilai-Borwein trial steps, Armijo
/// backtracking, Newton steps near convergence and escape along negative
/// curvature. Accepted iterates never increase the objective.
pub fn minimize<D: DescentProblem>(problem: &D, start: D::Point, opts: &DescentOptions) -> Result<DescentOutcome<D::Point>> {
    let mut x = start;
    let mut f = finite(problem.value(&x))?;
    let mut g = problem.gradient(&x);
    if !g.iter().all(|c| c.is_finite()) {
        return Err(Error::Evaluation("non-finite gradient".into()));
    }
    let mut trajectory = Vec::new();
    let mut values = Vec::new();
    if opts.record_trajectory {
        trajectory.push(x.clone());
        values.push(f);
    }
    let mut alpha = opts.step;
    let mut last: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut steps = 0;
    let mut converged = false;
    let mut hess_min = f64::NAN;

    while steps < opts.max_steps {
        let gn = g.norm();
        let mut candidate: Option<(D::Point, f64, DVector<f64>)> = None;

        if gn <= opts.newton_below || gn <= opts.tol_grad {
            let h = problem.hessian(&x);
            let (lmin, vmin) = min_eigen(&h);
            hess_min = lmin;
            if gn <= opts.tol_grad {
                if lmin >= -opts.tol_hess {
                    converged = true;
                    break;
                }
                candidate = escape(problem, &x, f, &vmin, lmin, opts.max_step_length);
                if candidate.is_none() {
                    break;
                }
            } else if lmin > 0.0 {
                if let Some(step) = newton_step(&h, &g, opts.max_step_length) {
                    let y = problem.retract(&x, &step);
                    let fy = problem.value(&y);
                    if fy <= f {
                        candidate = Some((y, fy, step));
                    }
                }
            }
        }

        if candidate.is_none() && gn > opts.tol_grad {
            candidate = armijo_step(problem, &x, f, &g, alpha, opts.max_step_length);
        }

        let Some((y, fy, step)) = candidate else {
            break;
        };
        finite(fy)?;
        debug_assert!(fy <= f, "descent step increased the objective");
        let gy = problem.gradient(&y);
        if !gy.iter().all(|c| c.is_finite()) {
            return Err(Error::Evaluation("non-finite gradient".into()));
        }
        let dg = &gy - &g;
        last = Some((step.clone(), dg));
        if let Some((s, yv)) = &last {
            let sy = s.dot(yv);
            alpha = if sy > 1e-300 { (s.dot(s) / sy).clamp(1e-6, 1e3) } else { opts.step };
        }
        x = y;
        f = fy;
        g = gy;
        steps += 1;
        if opts.record_trajectory {
            trajectory.push(x.clone());
            values.push(f);
        }
    }
    let _ = last;
    if hess_min.is_nan() || !converged {
        hess_min = min_eigen(&problem.hessian(&x)).0;
    }
    Ok(DescentOutcome { point: x, value: f, grad_norm: g.norm(), hess_min_eig: hess_min, steps, converged, trajectory, values })
}

fn newton_step(h: &DMatrix<f64>, g: &DVector<f64>, cap: f64) -> Option<DVector<f64>> {
    let chol = h.clone().cholesky()?;
    let mut s = -chol.solve(g);
    let n = s.norm();
    if !n.is_finite() {
        return None;
    }
    if n > cap {
        s *= cap / n;
    }
    Some(s)
}

fn armijo_step<D: DescentProblem>(
    problem: &D,
    x: &D::Point,
    f: f64,
    g: &DVector<f64>,
    alpha: f64,
    cap: f64,
) -> Option<(D::Point, f64, DVector<f64>)> {
    let gn = g.norm();
    let mut a = alpha.min(cap / gn);
    let mut best: Option<(D::Point, f64, DVector<f64>)> = None;
    for _ in 0..60 {
        let step = -g * a;
        let y = problem.retract(x, &step);
        let fy = problem.value(&y);
        if fy <= f - 1e-4 * a * gn * gn {
            return Some((y, fy, step));
        }
        if fy < f && best.as_ref().is_none_or(|b| fy < b.1) {
            best = Some((y, fy, step));
        }
        a *= 0.5;
    }
    best
}

fn escape<D: DescentProblem>(
    problem: &D,
    x: &D::Point,
    f: f64,
    dir: &DVector<f64>,
    curvature: f64,
    cap: f64,
) -> Option<(D::Point, f64, DVector<f64>)> {
    let mut t = cap.min((2.0 / curvature.abs()).sqrt().max(1e-3));
    for _ in 0..40 {
        let mut best: Option<(D::Point, f64, DVector<f64>)> = None;
        for sign in [1.0, -1.0] {
            let step = dir * (sign * t);
            let y = problem.retract(x, &step);
            let fy = problem.value(&y);
            if fy < f && best.as_ref().is_none_or(|b| fy < b.1) {
                best = Some((y, fy, step));
            }
        }
        if best.is_some() {
            return best;
        }
        t *= 0.5;
    }
    None
}

/// Adapter restricting a pair objective to its free factors.
pub(crate) struct PairProblem<'a> {
    pub objective: &'a dyn PairObjective,
    pub indices: Vec<usize>,
}

impl<'a> PairProblem<'a> {
    pub fn new(objective: &'a dyn PairObjective, free: FreeFactors) -> Self {
        PairProblem { objective, indices: free.indices() }
    }
}

impl DescentProblem for PairProblem<'_> {
    type Point = (Rotation, Rotation);

    fn dim(&self) -> usize {
        self.indices.len()
    }

    fn value(&self, x: &Self::Point) -> f64 {
        self.objective.value(&x.0, &x.1)
    }

    fn gradient(&self, x: &Self::Point) -> DVector<f64> {
        let g = self.objective.gradient(&x.0, &x.1);
        DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| g[i]))
    }

    fn hessian(&self, x: &Self::Point) -> DMatrix<f64> {
        let h = self.objective.hessian(&x.0, &x.1);
        let k = self.indices.len();
        DMatrix::from_fn(k, k, |a, b| h[(self.indices[a], self.indices[b])])
    }

    fn retract(&self, x: &Self::Point, step: &DVector<f64>) -> Self::Point {
        let mut xi = [0.0; 6];
        for (a, &i) in self.indices.iter().enumerate() {
            xi[i] = step[a];
        }
        retract_pair(&x.0, &x.1, &xi)
    }
}

/// Descends `f` from `start` to a pseudo-minimum: gradient norm at most
/// `tol_grad` and Hessian (on the free factors) at least `−tol_hess`.
/// Exhausting `max_steps` returns a report with `converged = false`.
pub fn descend_to_pseudo_minimum(
    f: &dyn PairObjective,
    start: (Rotation, Rotation),
    opts: &DescentOptions,
) -> Result<PseudoMinReport> {
    if !(opts.step > 0.0 && opts.tol_grad > 0.0 && opts.tol_hess > 0.0 && opts.max_step_length > 0.0) {
        return Err(Error::InvalidInput("descent parameters must be positive".into()));
    }
    let problem = PairProblem::new(f, opts.free);
    let out = minimize(&problem, start, opts)?;
    Ok(PseudoMinReport {
        u: out.point.0,
        v: out.point.1,
        grad_norm: out.grad_norm,
        hess_min_eig: out.hess_min_eig,
        f_value: out.value,
        steps: out.steps,
        converged: out.converged,
        trajectory: out.trajectory,
        trajectory_values: out.values,
    })
}

/// A critical point found by [`seek_critical_point`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointReport {
    pub u: Rotation,
    pub v: Rotation,
    pub value: f64,
    pub grad_norm: f64,
    /// Hessian eigenvalues, ascending.
    pub hess_eigenvalues: Vec<f64>,
    pub converged: bool,
}

/// Drives the gradient to zero with damped Gauss-Newton steps on `½‖∇f‖²`;
/// converges to critical points of any Morse index.
pub fn seek_critical_point(
    f: &dyn PairObjective,
    start: (Rotation, Rotation),
    tol: f64,
    max_iter: usize,
) -> Result<CriticalPointReport> {
    let (mut u, mut v) = start;
    let mut g = f.gradient(&u, &v);
    let mut mu = 1e-3 * f.hessian(&u, &v).norm().max(1e-12);
    let mut converged = false;
    for _ in 0..max_iter {
        if !g.iter().all(|c| c.is_finite()) {
            return Err(Error::Evaluation("non-finite gradient".into()));
        }
        if g.norm() <= tol {
            converged = true;
            break;
        }
        let h = f.hessian(&u, &v);
        let lhs = h * h + SMatrix::<f64, 6, 6>::identity() * mu;
        let rhs = -(h * g);
        let Some(step) = lhs.cholesky().map(|c| c.solve(&rhs)) else {
            mu *= 10.0;
            continue;
        };
        let n = step.norm();
        let step = if n > 0.3 { step * (0.3 / n) } else { step };
        let (u2, v2) = retract_pair(&u, &v, step.as_slice());
        let g2 = f.gradient(&u2, &v2);
        if g2.norm() < g.norm() {
            u = u2;
            v = v2;
            g = g2;
            mu = (mu / 3.0).max(1e-15);
        } else {
            mu *= 4.0;
            if mu > 1e12 {
                break;
            }
        }
    }
    let h = f.hessian(&u, &v);
    let mut eig: Vec<f64> = SymmetricEigen::new((h + h.transpose()) * 0.5).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    Ok(CriticalPointReport { u, v, value: f.value(&u, &v), grad_norm: g.norm(), hess_eigenvalues: eig, converged })
}
