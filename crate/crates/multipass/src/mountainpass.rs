//! Model energy surface of two rigid molecules, min-max paths between local
//! minima, the surgery that caps the separation along a path, and
//! transition-state refinement.
//!
//! The model is
//!
//! ```text
//! E(L, U, V) = E₁ + E₂ + κ/L + Σ_{2 ≤ n+m ≤ N} F^(n,m)(U,V) / L^(n+m+1)
//!              − C(U,V)/L⁶ + A/L^p
//! ```
//!
//! with a positive correlation coefficient `C` and an optional short-range
//! repulsion `A/L^p` that gives the model local minima at finite `L`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critical::descent::{minimize, DescentOptions, DescentProblem, FnObjective};
use crate::critical::{descend_to_pseudo_minimum, SublevelConnector};
use crate::error::{Error, Result};
use crate::interaction::PairInteraction;
use crate::multipole::{first_nonzero_multipole, MultipoleSet};
use crate::so3::{haar_sample, hat, retract_config, riem_grad, riem_hess, seeded_rng, Config, Rotation};

const FD_GRAD_STEP: f64 = 1e-5;
const FD_HESS_STEP: f64 = 1e-4;

/// Default number of path nodes.
pub const DEFAULT_NODES: usize = 64;

/// Slack allowed by the surgery invariant.
pub const SURGERY_SLACK: f64 = 1e-9;

/// A caller-supplied correlation coefficient `C(U, V)`.
#[derive(Clone)]
pub struct CvdwFn(pub Arc<dyn Fn(&Rotation, &Rotation) -> f64 + Send + Sync>);

impl fmt::Debug for CvdwFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CvdwFn(..)")
    }
}

/// The van der Waals coefficient `C(U, V) > 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CvdwModel {
    Constant { value: f64 },
    /// `c₀ + Σᵢⱼ cᵢⱼ ((U a)ᵢ (V b)ⱼ)²` with `c₀ > 0` and `cᵢⱼ ≥ 0`.
    Polynomial { c0: f64, coeffs: [[f64; 3]; 3], a: [f64; 3], b: [f64; 3] },
    #[serde(skip)]
    Custom(CvdwFn),
}

impl CvdwModel {
    pub fn constant(value: f64) -> Self {
        CvdwModel::Constant { value }
    }

    pub fn custom(f: impl Fn(&Rotation, &Rotation) -> f64 + Send + Sync + 'static) -> Self {
        CvdwModel::Custom(CvdwFn(Arc::new(f)))
    }

    pub fn value(&self, u: &Rotation, v: &Rotation) -> f64 {
        match self {
            CvdwModel::Constant { value } => *value,
            CvdwModel::Polynomial { c0, coeffs, a, b } => {
                let ua = u.apply(&Vector3::from(*a));
                let vb = v.apply(&Vector3::from(*b));
                let mut s = *c0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += coeffs[i][j] * (ua[i] * vb[j]).powi(2);
                    }
                }
                s
            }
            CvdwModel::Custom(f) => (f.0)(u, v),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            CvdwModel::Constant { value } if !(*value > 0.0) => {
                Err(Error::InvalidInput(format!("C_vdW constant {value} must be positive")))
            }
            CvdwModel::Polynomial { c0, coeffs, .. } => {
                if !(*c0 > 0.0) || coeffs.iter().flatten().any(|c| !(*c >= 0.0)) {
                    Err(Error::InvalidInput("C_vdW polynomial needs c0 > 0 and nonnegative coefficients".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Short-range repulsion `coefficient / L^power`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Repulsion {
    pub coefficient: f64,
    pub power: f64,
}

fn default_l_min() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelEnergy {
    pub e1: f64,
    pub e2: f64,
    pub m1: MultipoleSet,
    pub m2: MultipoleSet,
    pub cvdw: CvdwModel,
    /// Highest total order `n + m` kept in the expansion.
    pub order: usize,
    /// Coefficient of `1/L` for charged fragments; must be `≤ 0`.
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub repulsion: Option<Repulsion>,
    /// Smallest separation at which the model is evaluated.
    #[serde(default = "default_l_min")]
    pub l_min: f64,
}

impl ModelEnergy {
    /// A neutral model with no charged tail and no repulsion.
    pub fn new(e1: f64, e2: f64, m1: MultipoleSet, m2: MultipoleSet, cvdw: CvdwModel, order: usize) -> Self {
        ModelEnergy { e1, e2, m1, m2, cvdw, order, kappa: 0.0, repulsion: None, l_min: default_l_min() }
    }

    pub fn with_repulsion(mut self, coefficient: f64, power: f64) -> Self {
        self.repulsion = Some(Repulsion { coefficient, power });
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_l_min(mut self, l_min: f64) -> Self {
        self.l_min = l_min;
        self
    }

    /// `E₁ + E₂`, the dissociation limit.
    pub fn e_infinity(&self) -> f64 {
        self.e1 + self.e2
    }

    /// Validates parameters and precomputes the multipole couplings.
    pub fn surface(&self) -> Result<EnergySurface> {
        if !(2..=5).contains(&self.order) {
            return Err(Error::InvalidInput(format!("expansion order N = {} must lie in 2..=5", self.order)));
        }
        if !(self.kappa <= 0.0) {
            return Err(Error::InvalidInput(format!("kappa = {} must be ≤ 0", self.kappa)));
        }
        if !(self.l_min > 0.0) {
            return Err(Error::InvalidInput(format!("l_min = {} must be positive", self.l_min)));
        }
        if let Some(r) = &self.repulsion {
            if !(r.coefficient >= 0.0 && r.power > 6.0) {
                return Err(Error::InvalidInput("repulsion needs a nonnegative coefficient and power > 6".into()));
            }
        }
        self.cvdw.validate()?;
        let mut terms = Vec::new();
        for k in 2..=self.order {
            for n in 1..k {
                let m = k - n;
                if n > 4 || m > 4 || self.m1.order_norm(n) == 0.0 || self.m2.order_norm(m) == 0.0 {
                    continue;
                }
                terms.push((k, PairInteraction::new(&self.m1, &self.m2, n, m)?));
            }
        }
        Ok(EnergySurface { model: self.clone(), terms })
    }
}

/// A validated model with its multipole couplings.
#[derive(Clone, Debug)]
pub struct EnergySurface {
    pub model: ModelEnergy,
    terms: Vec<(usize, PairInteraction)>,
}

impl EnergySurface {
    pub fn energy(&self, tau: &Config) -> Result<f64> {
        let l = tau.l;
        if !(l >= self.model.l_min) || !l.is_finite() {
            return Err(Error::OutOfDomain(format!("L = {l} is below the model floor {}", self.model.l_min)));
        }
        let e = self.energy_unchecked(tau);
        if !e.is_finite() {
            return Err(Error::Evaluation(format!("energy at L = {l} is {e}")));
        }
        Ok(e)
    }

    fn energy_unchecked(&self, tau: &Config) -> f64 {
        let m = &self.model;
        let l = tau.l;
        let mut e = m.e_infinity() + m.kappa / l;
        for (k, pair) in &self.terms {
            e += pair.value(&tau.u, &tau.v) / l.powi(*k as i32 + 1);
        }
        e -= m.cvdw.value(&tau.u, &tau.v) / l.powi(6);
        if let Some(r) = &m.repulsion {
            e += r.coefficient / l.powf(r.power);
        }
        e
    }

    /// Orientation part at fixed `L`, used by the surgery legs.
    pub fn at_separation(&self, l: f64) -> impl Fn(&Rotation, &Rotation) -> f64 + Sync + '_ {
        move |u: &Rotation, v: &Rotation| self.energy_unchecked(&Config { l, u: *u, v: *v })
    }

    /// Riemannian gradient in `(L, ωU, ωV)` body coordinates.
    pub fn gradient(&self, tau: &Config) -> Result<SVector<f64, 7>> {
        self.energy(tau)?;
        let h = FD_GRAD_STEP.min(0.25 * (tau.l - self.model.l_min).max(1e-9));
        Ok(riem_grad(|c| self.energy_unchecked(c), tau, h)?.to_vector())
    }

    pub fn hessian(&self, tau: &Config) -> Result<SMatrix<f64, 7, 7>> {
        self.energy(tau)?;
        let h = FD_HESS_STEP.min(0.25 * (tau.l - self.model.l_min).max(1e-9));
        riem_hess(|c| self.energy_unchecked(c), tau, h)
    }

    /// Whether every multipole coupling in the model vanishes identically.
    pub fn is_vdw_dominated(&self) -> bool {
        self.terms.is_empty()
    }

    /// Tangent vectors of the continuous symmetries at `tau`: the common
    /// rotation about `e₁` and the body rotations leaving each molecule's
    /// multipoles unchanged. Returned orthonormal.
    pub fn symmetry_modes(&self, tau: &Config) -> Vec<SVector<f64, 7>> {
        let mut raw = Vec::new();
        let ex = Vector3::x();
        let wu = tau.u.inverse().apply(&ex);
        let wv = tau.v.inverse().apply(&ex);
        raw.push(SVector::<f64, 7>::from_column_slice(&[0.0, wu.x, wu.y, wu.z, wv.x, wv.y, wv.z]));
        for (set, offset) in [(&self.model.m1, 1), (&self.model.m2, 4)] {
            for w in body_symmetries(set, self.model.order) {
                let mut t = SVector::<f64, 7>::zeros();
                for k in 0..3 {
                    t[offset + k] = w[k];
                }
                raw.push(t);
            }
        }
        let mut basis: Vec<SVector<f64, 7>> = Vec::new();
        for mut t in raw {
            for b in &basis {
                t -= b * b.dot(&t);
            }
            if t.norm() > 1e-8 {
                basis.push(t.normalize());
            }
        }
        basis
    }
}

/// Body-frame generators `ω` with `derived(ω̂) = 0` for the orders that
/// enter the model.
fn body_symmetries(set: &MultipoleSet, order: usize) -> Vec<Vector3<f64>> {
    let max_n = order.saturating_sub(1).min(4);
    let columns: Vec<Vec<f64>> = (0..3)
        .map(|k| {
            let d = set.derived(&hat(&Vector3::ith(k, 1.0)));
            let mut v = Vec::new();
            if max_n >= 1 {
                v.extend(d.dipole);
            }
            if max_n >= 2 {
                v.extend(d.quadrupole.iter().flatten());
            }
            if max_n >= 3 {
                v.extend(d.octopole.iter().flatten().flatten());
            }
            if max_n >= 4 {
                v.extend(d.hexadecapole.iter().flatten().flatten().flatten());
            }
            v
        })
        .collect();
    let rows = columns[0].len();
    let a = DMatrix::from_fn(rows, 3, |r, c| columns[c][r]);
    let scale = set.scale().max(1e-300);
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    (0..3)
        .filter(|&k| eig.eigenvalues[k].max(0.0).sqrt() < 1e-9 * scale)
        .map(|k| Vector3::new(eig.eigenvectors[(0, k)], eig.eigenvectors[(1, k)], eig.eigenvectors[(2, k)]))
        .collect()
}

/// `E(τ)` for a model.
pub fn model_energy(me: &ModelEnergy, tau: &Config) -> Result<f64> {
    me.surface()?.energy(tau)
}

/// Nodes of a path with their energies; the parameter is uniform in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub nodes: Vec<Config>,
    pub energies: Vec<f64>,
}

impl DiscretePath {
    pub fn new(surface: &EnergySurface, nodes: Vec<Config>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidInput("a path needs at least two nodes".into()));
        }
        let energies = nodes.par_iter().map(|c| surface.energy(c)).collect::<Result<Vec<_>>>()?;
        Ok(DiscretePath { nodes, energies })
    }

    /// `count` nodes along the product geodesic from `a` to `b`.
    pub fn geodesic(surface: &EnergySurface, a: &Config, b: &Config, count: usize) -> Result<Self> {
        let count = count.max(2);
        let nodes = (0..count).map(|k| a.interpolate(b, k as f64 / (count - 1) as f64)).collect();
        DiscretePath::new(surface, nodes)
    }

    pub fn max_energy(&self) -> f64 {
        self.energies.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> usize {
        (0..self.energies.len()).max_by(|&a, &b| self.energies[a].total_cmp(&self.energies[b])).unwrap_or(0)
    }

    pub fn max_separation(&self) -> f64 {
        self.nodes.iter().map(|c| c.l).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[0].distance(&w[1])).fold(0.0, f64::max)
    }

    /// Parameter value of node `k`.
    pub fn param(&self, k: usize) -> f64 {
        k as f64 / (self.nodes.len() - 1) as f64
    }
}

/// Redistributes nodes to uniform arclength along the piecewise geodesic.
fn remesh(nodes: &[Config], count: usize) -> Vec<Config> {
    let mut cumulative = vec![0.0];
    for w in nodes.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + w[0].distance(&w[1]));
    }
    let total = *cumulative.last().unwrap();
    if total == 0.0 {
        return vec![nodes[0]; count];
    }
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    for k in 0..count {
        if k == 0 {
            out.push(nodes[0]);
            continue;
        }
        if k == count - 1 {
            out.push(*nodes.last().unwrap());
            continue;
        }
        let s = total * k as f64 / (count - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 { ((s - cumulative[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(nodes[seg].interpolate(&nodes[seg + 1], t));
    }
    out
}

/// Exponential coordinates of `x` around `base`.
fn chart(base: &Config, x: &Config) -> SVector<f64, 7> {
    let wu = (base.u.inverse() * x.u).log();
    let wv = (base.v.inverse() * x.v).log();
    SVector::<f64, 7>::from_column_slice(&[x.l - base.l, wu.x, wu.y, wu.z, wv.x, wv.y, wv.z])
}

/// Local-minimum test used for path endpoints.
pub fn is_local_minimum(surface: &EnergySurface, tau: &Config, tol: f64) -> Result<bool> {
    let g = surface.gradient(tau)?;
    let h = surface.hessian(tau)?;
    let min = SymmetricEigen::new((h + h.transpose()) * 0.5).eigenvalues.min();
    Ok(g.norm() <= tol && min >= -tol)
}

struct ConfigProblem<'a> {
    surface: &'a EnergySurface,
}

impl DescentProblem for ConfigProblem<'_> {
    type Point = Config;

    fn dim(&self) -> usize {
        7
    }

    fn value(&self, x: &Config) -> f64 {
        self.surface.energy(x).unwrap_or(f64::INFINITY)
    }

    fn gradient(&self, x: &Config) -> DVector<f64> {
        match self.surface.gradient(x) {
            Ok(g) => DVector::from_column_slice(g.as_slice()),
            Err(_) => DVector::from_element(7, f64::NAN),
        }
    }

    fn hessian(&self, x: &Config) -> DMatrix<f64> {
        match self.surface.hessian(x) {
            Ok(h) => DMatrix::from_column_slice(7, 7, h.as_slice()),
            Err(_) => DMatrix::from_element(7, 7, f64::NAN),
        }
    }

    fn retract(&self, x: &Config, step: &DVector<f64>) -> Config {
        retract_config(x, step.as_slice())
    }
}

/// Relaxes `start` to a local minimum of the model energy by monotone descent.
pub fn relax_to_local_minimum(surface: &EnergySurface, start: &Config) -> Result<Config> {
    surface.energy(start)?;
    let opts = DescentOptions { tol_grad: 1e-9, max_step_length: 0.1, max_steps: 5000, ..DescentOptions::default() };
    let out = minimize(&ConfigProblem { surface }, *start, &opts)?;
    Ok(out.point)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinmaxOptions {
    pub iters: usize,
    /// Initial step along the negative perpendicular gradient.
    pub step: f64,
    /// Largest displacement of a node in one sweep.
    pub max_move: f64,
    /// Tolerance of the endpoint local-minimum check.
    pub endpoint_tol: f64,
}

impl Default for MinmaxOptions {
    fn default() -> Self {
        MinmaxOptions { iters: 500, step: 0.05, max_move: 0.1, endpoint_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinmaxResult {
    pub path: DiscretePath,
    /// Achieved level `max_t E(τ(t))`.
    pub level: f64,
    /// Max energy after each accepted sweep, starting with the initial path.
    pub history: Vec<f64>,
    pub accepted: usize,
    /// Whether the level exceeds both endpoint energies.
    pub above_endpoints: bool,
}

/// String-method descent of `max_t E(τ(t))` with fixed endpoints. Each sweep
/// moves interior nodes along the gradient component normal to the path and
/// remeshes to uniform arclength; sweeps that raise the maximum are rejected.
pub fn minmax_optimize(surface: &EnergySurface, init: &DiscretePath, opts: &MinmaxOptions) -> Result<MinmaxResult> {
    let n = init.nodes.len();
    if n < 2 {
        return Err(Error::InvalidInput("a path needs at least two nodes".into()));
    }
    for (name, c) in [("start", &init.nodes[0]), ("end", &init.nodes[n - 1])] {
        if !is_local_minimum(surface, c, opts.endpoint_tol)? {
            return Err(Error::Precondition(format!("{name} of the path is not a local minimum of the model energy")));
        }
    }
    let mut path = DiscretePath::new(surface, remesh(&init.nodes, n))?;
    if path.max_energy() > init.max_energy() {
        path = init.clone();
    }
    let mut history = vec![path.max_energy()];
    let mut step = opts.step;
    let mut accepted = 0;
    let l_floor = surface.model.l_min;
    for _ in 0..opts.iters {
        if step < 1e-12 {
            break;
        }
        let moved: Vec<Config> = (0..n)
            .into_par_iter()
            .map(|k| -> Result<Config> {
                let x = path.nodes[k];
                if k == 0 || k == n - 1 {
                    return Ok(x);
                }
                let tangent = chart(&x, &path.nodes[k + 1]) - chart(&x, &path.nodes[k - 1]);
                let g = surface.gradient(&x)?;
                let g_perp = if tangent.norm() > 0.0 {
                    let t = tangent.normalize();
                    g - t * t.dot(&g)
                } else {
                    g
                };
                let mut d = -g_perp * step;
                if d.norm() > opts.max_move {
                    d *= opts.max_move / d.norm();
                }
                let mut y = retract_config(&x, d.as_slice());
                y.l = y.l.max(l_floor);
                Ok(y)
            })
            .collect::<Result<_>>()?;
        let candidate = DiscretePath::new(surface, remesh(&moved, n))?;
        if candidate.max_energy() <= path.max_energy() {
            path = candidate;
            accepted += 1;
            history.push(path.max_energy());
            step = (step * 1.2).min(10.0 * opts.step);
        } else {
            step *= 0.5;
        }
    }
    let level = path.max_energy();
    let above_endpoints = level > path.energies[0].max(path.energies[n - 1]);
    Ok(MinmaxResult { path, level, history, accepted, above_endpoints })
}

/// How the surgery built the constant-separation leg.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SurgeryMethod {
    /// The path never exceeds `L_star`.
    NoOp,
    /// Geodesic rotation leg; the energy at `L_star` is below `E₁ + E₂`
    /// for every orientation.
    AnyRotation,
    /// Descent to pseudo-minima of `E(L_star, ·, ·)` and a path inside
    /// `{F^(n,m) < −δ}` of the leading multipole interaction; `max_leading`
    /// is the largest `F^(n,m)` along that connection.
    Sublevel { n: usize, m: usize, delta: f64, max_leading: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeryReport {
    /// Index of the first node with `L ≥ L_star`.
    pub t0_index: Option<usize>,
    /// Index of the last node with `L ≥ L_star`.
    pub t1_index: Option<usize>,
    #[serde(rename = "L_star")]
    pub l_star: f64,
    pub replaced_segment: Option<DiscretePath>,
    /// Maximum over the original nodes and the two crossing points.
    pub max_energy_before: f64,
    pub max_energy_after: f64,
    pub method: SurgeryMethod,
}

/// Replaces the part of `path` beyond `L_star` by a leg at constant
/// separation `L_star` whose energy stays below the original maximum.
pub fn surgery(surface: &EnergySurface, path: &DiscretePath, l_star: f64) -> Result<(DiscretePath, SurgeryReport)> {
    let n = path.nodes.len();
    if n < 2 {
        return Err(Error::InvalidInput("a path needs at least two nodes".into()));
    }
    if !(l_star > path.nodes[0].l && l_star > path.nodes[n - 1].l) {
        return Err(Error::InvalidInput(format!("L_star = {l_star} must exceed the separation at both endpoints")));
    }
    let beyond: Vec<usize> = (0..n).filter(|&k| path.nodes[k].l >= l_star).collect();
    let (Some(&i0), Some(&i1)) = (beyond.first(), beyond.last()) else {
        let report = SurgeryReport {
            t0_index: None,
            t1_index: None,
            l_star,
            replaced_segment: None,
            max_energy_before: path.max_energy(),
            max_energy_after: path.max_energy(),
            method: SurgeryMethod::NoOp,
        };
        return Ok((path.clone(), report));
    };
    let crossing = |a: &Config, b: &Config| {
        let t = (l_star - a.l) / (b.l - a.l);
        let mut c = a.interpolate(b, t);
        c.l = l_star;
        c
    };
    let start = crossing(&path.nodes[i0 - 1], &path.nodes[i0]);
    let end = crossing(&path.nodes[i1 + 1], &path.nodes[i1]);
    let max_before = path.max_energy().max(surface.energy(&start)?).max(surface.energy(&end)?);

    let (rotations, method) = rotation_leg(surface, l_star, (start.u, start.v), (end.u, end.v))?;
    let leg_nodes: Vec<Config> = rotations.iter().map(|(u, v)| Config { l: l_star, u: *u, v: *v }).collect();
    let leg = DiscretePath::new(surface, leg_nodes)?;

    let mut nodes: Vec<Config> = path.nodes[..i0].to_vec();
    nodes.extend(leg.nodes.iter().copied());
    nodes.extend(path.nodes[i1 + 1..].iter().copied());
    let out = DiscretePath::new(surface, nodes)?;
    let report = SurgeryReport {
        t0_index: Some(i0),
        t1_index: Some(i1),
        l_star,
        max_energy_before: max_before,
        max_energy_after: out.max_energy(),
        replaced_segment: Some(leg),
        method,
    };
    if report.max_energy_after > report.max_energy_before + SURGERY_SLACK {
        return Err(Error::Surgery(format!(
            "replacement raises the maximum from {} to {}",
            report.max_energy_before, report.max_energy_after
        )));
    }
    Ok((out, report))
}

/// Geodesic pieces of at most `0.05` between consecutive rotation pairs.
fn geodesic_pairs(a: (Rotation, Rotation), b: (Rotation, Rotation)) -> Vec<(Rotation, Rotation)> {
    let d = (a.0.distance(&b.0).powi(2) + a.1.distance(&b.1).powi(2)).sqrt();
    let pieces = ((d / 0.05).ceil() as usize).max(1);
    (1..=pieces)
        .map(|k| {
            let t = k as f64 / pieces as f64;
            (a.0.slerp(&b.0, t), a.1.slerp(&b.1, t))
        })
        .collect()
}

fn rotation_leg(
    surface: &EnergySurface,
    l_star: f64,
    start: (Rotation, Rotation),
    end: (Rotation, Rotation),
) -> Result<(Vec<(Rotation, Rotation)>, SurgeryMethod)> {
    let model = &surface.model;
    let tol1 = 1e-10 * model.m1.scale().max(1.0);
    let tol2 = 1e-10 * model.m2.scale().max(1.0);
    let n1 = first_nonzero_multipole(&model.m1, tol1)?;
    let n2 = first_nonzero_multipole(&model.m2, tol2)?;
    let leading = match (n1, n2) {
        (Some(a), Some(b)) if a + b <= model.order => Some((a, b)),
        _ => None,
    };
    let Some((n, m)) = leading.filter(|_| model.kappa == 0.0) else {
        let mut nodes = vec![start];
        nodes.extend(geodesic_pairs(start, end));
        return Ok((nodes, SurgeryMethod::AnyRotation));
    };
    if n + m == 5 {
        return Err(Error::Surgery(format!(
            "leading interaction ({n}, {m}) has n + m = 5, where the sublevel connectedness is open"
        )));
    }
    let connector = SublevelConnector::new(n, m, &model.m1, &model.m2)
        .map_err(|e| Error::Surgery(format!("leading interaction ({n}, {m}): {e}")))?;
    let delta = 0.5 * connector.delta0();
    // Rescaled so the descent tolerances are relative to the leading term.
    let e_inf = model.e_infinity();
    let scale = l_star.powi((n + m + 1) as i32);
    let at_l_star = surface.at_separation(l_star);
    let energy = FnObjective(move |u: &Rotation, v: &Rotation| (at_l_star(u, v) - e_inf) * scale);
    let opts = DescentOptions { record_trajectory: true, max_step_length: 0.05, ..DescentOptions::default() };
    let a = descend_to_pseudo_minimum(&energy, start, &opts)?;
    let b = descend_to_pseudo_minimum(&energy, end, &opts)?;
    for (name, r) in [("t0", &a), ("t1", &b)] {
        let f = connector.pair().value(&r.u, &r.v);
        if !(f < -delta) {
            return Err(Error::Surgery(format!(
                "pseudo-minimum at {name} has F^({n},{m}) = {f} > −{delta}: the negative-energy property of \
                 near-critical points fails"
            )));
        }
    }
    let middle = connector
        .connect((a.u, a.v), (b.u, b.v), delta)
        .map_err(|e| Error::Surgery(format!("sublevel connection failed: {e}")))?;
    let max_leading = middle.max_value();
    let mut nodes = a.trajectory.clone();
    nodes.extend(middle.nodes.into_iter().skip(1));
    nodes.extend(b.trajectory.iter().rev().skip(1).copied());
    Ok((nodes, SurgeryMethod::Sublevel { n, m, delta, max_leading }))
}

/// Smallest `L̄` (within `tol`) such that `max over samples of E(L,U,V) < E₁ + E₂`
/// for every tested `L ≥ L̄`, by bisection on `[l_lo, l_hi]`.
pub fn dissociation_threshold(
    surface: &EnergySurface,
    samples: usize,
    seed: u64,
    l_lo: f64,
    l_hi: f64,
    tol: f64,
) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let orientations: Vec<(Rotation, Rotation)> =
        (0..samples).map(|_| (haar_sample(&mut rng), haar_sample(&mut rng))).collect();
    let e_inf = surface.model.e_infinity();
    let below = |l: f64| -> Result<bool> {
        for (u, v) in &orientations {
            if surface.energy(&Config { l, u: *u, v: *v })? >= e_inf {
                return Ok(false);
            }
        }
        Ok(true)
    };
    if !below(l_hi)? {
        return Err(Error::Precondition(format!("energy is not below E₁ + E₂ at L = {l_hi}")));
    }
    let (mut lo, mut hi) = (l_lo, l_hi);
    if below(lo)? {
        return Ok(lo);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if below(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionState {
    pub tau: Config,
    pub energy: f64,
    pub grad_norm: f64,
    /// Eigenvalues of the full 7×7 Hessian, ascending.
    pub hess_spectrum: Vec<f64>,
    /// Eigenvalues on the complement of the symmetry modes, ascending.
    pub reduced_spectrum: Vec<f64>,
    pub symmetry_modes: usize,
    /// Strictly negative eigenvalues of the reduced Hessian.
    pub negative_count: usize,
    /// Unit eigenvector (in `(L, ωU, ωV)` coordinates) of the lowest reduced eigenvalue.
    pub lowest_mode: Vec<f64>,
    pub refined: bool,
}

/// Largest distance the refinement may move from the path maximum.
const TS_RADIUS: f64 = 0.5;

/// Refines the highest node of `path` to a critical point by Newton steps
/// on the gradient with a pseudo-inverse Hessian, then classifies it.
pub fn transition_state(surface: &EnergySurface, path: &DiscretePath) -> Result<TransitionState> {
    let origin = path.nodes[path.argmax()];
    let mut x = origin;
    let mut g = surface.gradient(&x)?;
    let mut refined = false;
    for _ in 0..200 {
        if g.norm() <= 1e-8 {
            refined = true;
            break;
        }
        let h = surface.hessian(&x)?;
        let eig = SymmetricEigen::new((h + h.transpose()) * 0.5);
        let cutoff = 1e-6 * eig.eigenvalues.amax().max(1e-300);
        let mut step = SVector::<f64, 7>::zeros();
        for k in 0..7 {
            let lambda = eig.eigenvalues[k];
            if lambda.abs() > cutoff {
                let v = eig.eigenvectors.column(k);
                step -= v * (v.dot(&g) / lambda);
            }
        }
        if step.norm() > 0.1 {
            step *= 0.1 / step.norm();
        }
        let mut improved = false;
        for _ in 0..20 {
            let y = retract_config(&x, step.as_slice());
            if y.l > surface.model.l_min && y.distance(&origin) <= TS_RADIUS {
                if let Ok(gy) = surface.gradient(&y) {
                    if gy.norm() < g.norm() {
                        x = y;
                        g = gy;
                        improved = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if g.norm() <= 1e-8 {
        refined = true;
    }
    if !refined {
        x = origin;
        g = surface.gradient(&x)?;
    }
    let h = surface.hessian(&x)?;
    let hs = (h + h.transpose()) * 0.5;
    let mut spectrum: Vec<f64> = SymmetricEigen::new(hs).eigenvalues.iter().copied().collect();
    spectrum.sort_by(f64::total_cmp);
    let modes = surface.symmetry_modes(&x);
    // Orthonormal basis of the complement of the symmetry modes.
    let mut basis: Vec<SVector<f64, 7>> = modes.clone();
    for k in 0..7 {
        let mut t = SVector::<f64, 7>::ith(k, 1.0);
        for b in &basis {
            t -= b * b.dot(&t);
        }
        if t.norm() > 1e-8 {
            basis.push(t.normalize());
        }
    }
    let complement = &basis[modes.len()..];
    let dim = complement.len();
    let reduced = DMatrix::from_fn(dim, dim, |i, j| complement[i].dot(&(hs * complement[j])));
    let eig = SymmetricEigen::new(reduced);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let reduced_spectrum: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let scale = spectrum.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let negative_count = reduced_spectrum.iter().filter(|&&l| l < -1e-6 * scale).count();
    let lowest = order[0];
    let mut mode = SVector::<f64, 7>::zeros();
    for (i, c) in complement.iter().enumerate() {
        mode += c * eig.eigenvectors[(i, lowest)];
    }
    Ok(TransitionState {
        tau: x,
        energy: surface.energy(&x)?,
        grad_norm: g.norm(),
        hess_spectrum: spectrum,
        reduced_spectrum,
        symmetry_modes: modes.len(),
        negative_count,
        lowest_mode: mode.iter().copied().collect(),
        refined,
    })
}

/// The axial quadrupole pair used in tests, examples and the CLI demo:
/// `Q = diag(2, −1, −1)` on both molecules, `N = 4`, `C ≡ 1` and a
/// repulsion `A/L¹²` placing the T-shaped minimum at `L = 2`.
pub fn quadrupole_test_model() -> ModelEnergy {
    let q = MultipoleSet::from_quadrupole(Matrix3::from_diagonal(&Vector3::new(2.0, -1.0, -1.0)));
    // dE/dL = 0 at L = 2 for F = −12: 5·12/L⁶ + 6/L⁷ = 12 A/L¹³.
    let l0: f64 = 2.0;
    let a = (60.0 * l0.powi(7) + 6.0 * l0.powi(6)) / 12.0;
    ModelEnergy::new(0.0, 0.0, q.clone(), q, CvdwModel::constant(1.0), 4).with_repulsion(a, 12.0)
}

/// Unit dipoles along `e₁` on both molecules, `N = 2`, `C ≡ 1` and a
/// repulsion `A/L¹²` placing the head-to-tail minimum at `L = 2`.
pub fn dipole_test_model() -> ModelEnergy {
    let d = MultipoleSet::from_dipole(Vector3::x());
    // dE/dL = 0 at L = 2 for F = −2: 6/L⁴ + 6/L⁷ = 12 A/L¹³.
    let l0: f64 = 2.0;
    let a = (6.0 * l0.powi(9) + 6.0 * l0.powi(6)) / 12.0;
    ModelEnergy::new(0.0, 0.0, d.clone(), d, CvdwModel::constant(1.0), 2).with_repulsion(a, 12.0)
}

/// Random orientation pair, exposed for the CLI's seeded sampling.
pub fn random_orientations(rng: &mut impl Rng) -> (Rotation, Rotation) {
    (haar_sample(rng), haar_sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::rot_x;

    fn zero_model() -> ModelEnergy {
        ModelEnergy::new(-1.0, -2.0, MultipoleSet::default(), MultipoleSet::default(), CvdwModel::constant(1.0), 4)
    }

    fn dipole_model() -> ModelEnergy {
        let d = MultipoleSet::from_dipole(Vector3::x());
        ModelEnergy::new(0.0, 0.0, d.clone(), d, CvdwModel::constant(1e-9), 2)
    }

    fn cfg(l: f64) -> Config {
        Config::new(l, Rotation::identity(), Rotation::identity()).unwrap()
    }

    #[test]
    fn vdw_only_energy() {
        let e = model_energy(&zero_model(), &cfg(10.0)).unwrap();
        assert!((e - (-3.0 - 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn aligned_dipoles() {
        let e = model_energy(&dipole_model(), &cfg(10.0)).unwrap();
        assert!((e - (-2e-3 - 1e-15)).abs() < 1e-15);
    }

    #[test]
    fn charged_tail() {
        let e = model_energy(&zero_model().with_kappa(-1.0), &cfg(100.0)).unwrap();
        assert!((e - (-3.0 - 0.01 - 1e-12)).abs() < 1e-14);
    }

    #[test]
    fn domain_and_parameter_errors() {
        assert_eq!(model_energy(&zero_model(), &cfg(0.1)).unwrap_err().kind(), "out-of-domain");
        assert_eq!(model_energy(&zero_model().with_kappa(1.0), &cfg(10.0)).unwrap_err().kind(), "invalid-input");
        let mut m = zero_model();
        m.cvdw = CvdwModel::constant(0.0);
        assert!(m.surface().is_err());
    }

    #[test]
    fn polynomial_cvdw_is_positive() {
        let c = CvdwModel::Polynomial { c0: 0.5, coeffs: [[1.0, 0.0, 2.0], [0.0, 0.3, 0.0], [0.1, 0.0, 0.0]], a: [1.0, 0.0, 0.0], b: [0.0, 1.0, 0.0] };
        let mut rng = seeded_rng(1);
        for _ in 0..100 {
            let (u, v) = random_orientations(&mut rng);
            assert!(c.value(&u, &v) >= 0.5);
        }
    }

    #[test]
    fn remesh_is_uniform_and_keeps_endpoints() {
        let a = cfg(2.0);
        let b = Config::new(5.0, rot_x(1.0), rot_x(-0.5)).unwrap();
        let nodes = vec![a, a.interpolate(&b, 0.1), a.interpolate(&b, 0.9), b];
        let out = remesh(&nodes, 11);
        assert_eq!(out[0], a);
        assert_eq!(out[10], b);
        let d: Vec<f64> = out.windows(2).map(|w| w[0].distance(&w[1])).collect();
        for x in &d {
            assert!((x - d[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetry_modes_of_the_axial_quadrupole_model() {
        let s = quadrupole_test_model().surface().unwrap();
        assert_eq!(s.symmetry_modes(&cfg(2.0)).len(), 2);
        let mut rng = seeded_rng(2);
        let (u, v) = random_orientations(&mut rng);
        // Common rotation about e₁ plus each molecule's own axis.
        assert_eq!(s.symmetry_modes(&Config::new(2.0, u, v).unwrap()).len(), 3);
    }

    #[test]
    fn surgery_noop_below_threshold() {
        let s = zero_model().surface().unwrap();
        let path = DiscretePath::geodesic(&s, &cfg(2.0), &cfg(3.0), 5).unwrap();
        let (out, report) = surgery(&s, &path, 10.0).unwrap();
        assert_eq!(out, path);
        assert_eq!(report.method, SurgeryMethod::NoOp);
    }
}
