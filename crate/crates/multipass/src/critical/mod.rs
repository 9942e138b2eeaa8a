//! Critical points of the multipolar interactions `F^(n,m)` on SO(3)²:
//! descent to pseudo-minima, the negative-energy property of near-critical
//! points with nonnegative Hessian, and paths inside `{F < −δ}`.

pub mod descent;
pub mod dipole;
pub mod octopole;
pub mod quadrupole;
pub mod sphere;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use descent::{
    descend_to_pseudo_minimum, seek_critical_point, CriticalPointReport, DescentOptions, FnObjective, FreeFactors,
    Negated, PairObjective, PseudoMinReport,
};
pub use dipole::{DipoleConnector, DipoleReduction};
pub use octopole::{check_octopole_nondegeneracy, octopole_kernel_vectors, KERNEL_TOL, NONDEGENERACY_TOL};
pub use quadrupole::{orient_m_sign, qq_structure, MSignPattern, QQStructure, QuadrupoleConnector};

use crate::error::{Error, Result};
use crate::interaction::{check_order, Moment, PairInteraction};
use crate::linalg::sym_spectral_norm;
use crate::multipole::MultipoleSet;
use crate::so3::{haar_sample, seeded_rng, Rotation};

/// Largest geodesic distance between consecutive path nodes.
pub const MAX_NODE_SPACING: f64 = 0.1;

/// Samples per deterministic seed stream in the Monte-Carlo checks.
const CHUNK: usize = 256;

/// A path in SO(3)² with its values of `F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SublevelPath {
    pub nodes: Vec<(Rotation, Rotation)>,
    pub f_values: Vec<f64>,
    pub delta: f64,
}

impl SublevelPath {
    pub(crate) fn evaluate(pair: &PairInteraction, nodes: Vec<(Rotation, Rotation)>, delta: f64) -> Self {
        let f_values = nodes.iter().map(|(u, v)| pair.value(u, v)).collect();
        SublevelPath { nodes, f_values, delta }
    }

    pub fn max_value(&self) -> f64 {
        self.f_values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest product-metric distance between consecutive nodes.
    pub fn max_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| pair_distance(&w[0], &w[1])).fold(0.0, f64::max)
    }

    /// Re-evaluates `F` at every node and checks the path invariants.
    pub fn validate(&self, pair: &PairInteraction) -> Result<()> {
        if self.nodes.len() != self.f_values.len() || self.nodes.is_empty() {
            return Err(Error::Construction("path has no nodes or mismatched values".into()));
        }
        for (k, (u, v)) in self.nodes.iter().enumerate() {
            let f = pair.value(u, v);
            if !(f < -self.delta) {
                return Err(Error::Construction(format!("node {k} has F = {f} ≥ −{}", self.delta)));
            }
        }
        let gap = self.max_spacing();
        if gap > MAX_NODE_SPACING {
            return Err(Error::Construction(format!("consecutive nodes {gap} apart")));
        }
        Ok(())
    }
}

/// `√(d(U,U')² + d(V,V')²)`.
pub fn pair_distance(a: &(Rotation, Rotation), b: &(Rotation, Rotation)) -> f64 {
    (a.0.distance(&b.0).powi(2) + a.1.distance(&b.1).powi(2)).sqrt()
}

/// Inserts geodesic midpoints until consecutive nodes are at most
/// `MAX_NODE_SPACING / 2` apart.
fn densify_pairs(nodes: &[(Rotation, Rotation)]) -> Vec<(Rotation, Rotation)> {
    let mut out = vec![nodes[0]];
    for w in nodes.windows(2) {
        let (a, b) = (w[0], w[1]);
        let pieces = ((pair_distance(&a, &b) / (0.5 * MAX_NODE_SPACING)).ceil() as usize).max(1);
        for k in 1..pieces {
            let t = k as f64 / pieces as f64;
            out.push((a.0.slerp(&b.0, t), a.1.slerp(&b.1, t)));
        }
        out.push(b);
    }
    out
}

fn supported_case(n: usize, m: usize) -> Result<()> {
    check_order(n, m)?;
    if n + m == 5 {
        return Err(Error::UnsupportedCase(format!(
            "(n, m) = ({n}, {m}): the connectedness and local-minimum properties are open for n + m = 5"
        )));
    }
    if n == 4 || m == 4 {
        return Err(Error::UnsupportedCase(format!("(n, m) = ({n}, {m})")));
    }
    Ok(())
}

fn check_octopoles(pair: &PairInteraction) -> Result<()> {
    for moment in [pair.first_moment(), pair.second_moment()] {
        if let Moment::Octopole(o) = moment {
            if !check_octopole_nondegeneracy(o, NONDEGENERACY_TOL) {
                return Err(Error::Precondition(
                    "the octopole violates the non-degeneracy assumption O(v,·,·) ≡ 0 ⟹ v = 0".into(),
                ));
            }
        }
    }
    Ok(())
}

enum ConnectorKind {
    Dipole(DipoleConnector),
    Quadrupole(QuadrupoleConnector),
}

/// Builds paths inside `{F^(n,m) < −δ}` for one pair of multipoles.
pub struct SublevelConnector {
    pair: PairInteraction,
    kind: ConnectorKind,
    delta0: f64,
}

impl SublevelConnector {
    pub fn new(n: usize, m: usize, m1: &MultipoleSet, m2: &MultipoleSet) -> Result<Self> {
        supported_case(n, m)?;
        let pair = PairInteraction::new(m1, m2, n, m)?;
        check_octopoles(&pair)?;
        if (n, m) == (2, 2) {
            let qc = QuadrupoleConnector::new(&pair)?;
            let delta0 = qc.delta0();
            return Ok(SublevelConnector { pair, kind: ConnectorKind::Quadrupole(qc), delta0 });
        }
        let red = DipoleReduction::new(&pair)?;
        let dnorm = red.dipole_norm;
        let dc = DipoleConnector::new(red);
        let delta0 = match &dc.reduction.partner {
            Moment::Dipole(d) => 0.5 * dnorm * d.norm(),
            Moment::Quadrupole(q) => {
                let op = sym_spectral_norm(q);
                if dc.phi_min > 1e-6 * op {
                    dnorm * dc.phi_min
                } else {
                    dnorm * op
                }
            }
            _ => 0.95 * dnorm * dc.merge_threshold,
        };
        Ok(SublevelConnector { pair, kind: ConnectorKind::Dipole(dc), delta0 })
    }

    /// Every `δ` below this value is supported.
    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn pair(&self) -> &PairInteraction {
        &self.pair
    }

    pub fn connect(&self, start: (Rotation, Rotation), end: (Rotation, Rotation), delta: f64) -> Result<SublevelPath> {
        if !(delta > 0.0) {
            return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
        }
        if delta >= self.delta0 {
            return Err(Error::UnsupportedDelta { delta, delta0: self.delta0 });
        }
        for (name, (u, v)) in [("start", start), ("end", end)] {
            let f = self.pair.value(&u, &v);
            if !(f < -delta) {
                return Err(Error::Precondition(format!("{name} has F = {f}, not below −{delta}")));
            }
        }
        if pair_distance(&start, &end) == 0.0 {
            return Ok(SublevelPath::evaluate(&self.pair, vec![start], delta));
        }
        let nodes = match &self.kind {
            ConnectorKind::Dipole(dc) => dc.connect(start, end, delta)?,
            ConnectorKind::Quadrupole(qc) => qc.connect(&self.pair, start, end, delta)?,
        };
        let path = SublevelPath::evaluate(&self.pair, densify_pairs(&nodes), delta);
        path.validate(&self.pair)?;
        Ok(path)
    }
}

/// Path from `start` to `end` along which `F^(n,m) < −delta`.
pub fn connect_negative_sublevel(
    n: usize,
    m: usize,
    m1: &MultipoleSet,
    m2: &MultipoleSet,
    start: (Rotation, Rotation),
    end: (Rotation, Rotation),
    delta: f64,
) -> Result<SublevelPath> {
    SublevelConnector::new(n, m, m1, m2)?.connect(start, end, delta)
}

/// A near-critical point with nearly nonnegative Hessian and `F > −δ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub u: Rotation,
    pub v: Rotation,
    pub value: f64,
    pub grad_norm: f64,
    pub hess_min_eig: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalminReport {
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub samples: usize,
    pub seed: u64,
    /// Points satisfying `‖grad‖ ≤ δ` and `Hess ⪰ −δ`.
    pub qualifying_points: usize,
    /// Largest `F` among qualifying points.
    pub max_qualifying_value: f64,
    pub counterexamples: Vec<Counterexample>,
}

/// Default `δ` for [`verify_localmin_property`].
pub fn default_localmin_delta(n: usize, m: usize, m1: &MultipoleSet, m2: &MultipoleSet) -> Result<f64> {
    supported_case(n, m)?;
    let pair = PairInteraction::new(m1, m2, n, m)?;
    check_octopoles(&pair)?;
    if (n, m) == (2, 2) {
        let (Moment::Quadrupole(q1), Moment::Quadrupole(q2)) = (pair.first_moment(), pair.second_moment()) else {
            unreachable!("orders (2, 2) carry quadrupoles");
        };
        return Ok(quadrupole::fiber_gap(q1, q2)? / 8.0);
    }
    let red = DipoleReduction::new(&pair)?;
    let dnorm = red.dipole_norm;
    Ok(match &red.partner {
        Moment::Dipole(d) => dnorm * d.norm() / 3.0,
        Moment::Quadrupole(q) => {
            let op = sym_spectral_norm(q);
            let floor = dipole::fiber_floor(&red);
            if floor > 1e-6 * op {
                dnorm * floor / 3.0
            } else {
                dnorm * op / 100.0
            }
        }
        Moment::Octopole(o) => {
            let kernel = octopole_kernel_vectors(o, KERNEL_TOL)?;
            match octopole::kernel_operator_floor(o, &kernel) {
                Some(lambda) => dnorm * lambda / 100.0,
                None => dnorm * dipole::fiber_floor(&red) / 3.0,
            }
        }
        Moment::Hexadecapole(_) => unreachable!("hexadecapole cases are rejected above"),
    })
}

/// Checks on Haar-random points refined by descent that every point with
/// `‖grad F‖ ≤ δ` and `Hess F ⪰ −δ` has `F ≤ −δ`.
pub fn verify_localmin_property(
    n: usize,
    m: usize,
    m1: &MultipoleSet,
    m2: &MultipoleSet,
    delta: f64,
    samples: usize,
    seed: u64,
) -> Result<LocalminReport> {
    supported_case(n, m)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
    }
    let pair = PairInteraction::new(m1, m2, n, m)?;
    check_octopoles(&pair)?;
    let opts = DescentOptions {
        tol_grad: delta * 1e-2,
        tol_hess: delta * 1e-2,
        max_steps: 500,
        newton_below: 0.0,
        record_trajectory: true,
        ..DescentOptions::default()
    };
    let chunks = samples.div_ceil(CHUNK);
    let results: Vec<Result<(usize, f64, Vec<Counterexample>)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeded_rng(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(c as u64));
            let count = CHUNK.min(samples - c * CHUNK);
            let mut qualifying = 0;
            let mut worst = f64::NEG_INFINITY;
            let mut bad = Vec::new();
            for _ in 0..count {
                let start = (haar_sample(&mut rng), haar_sample(&mut rng));
                let report = descend_to_pseudo_minimum(&pair, start, &opts)?;
                let mut candidates: Vec<(Rotation, Rotation, f64)> = Vec::new();
                let traj = &report.trajectory;
                for (k, (u, v)) in traj.iter().enumerate() {
                    let g = pair.gradient(u, v).norm();
                    if g <= delta && (k == 0 || k + 1 == traj.len() || candidates.len() < 3) {
                        candidates.push((*u, *v, g));
                    }
                }
                for (u, v, g) in candidates {
                    let h = pair.hessian(&u, &v);
                    let min_eig = nalgebra::SymmetricEigen::new((h + h.transpose()) * 0.5).eigenvalues.min();
                    if min_eig < -delta {
                        continue;
                    }
                    qualifying += 1;
                    let f = pair.value(&u, &v);
                    worst = worst.max(f);
                    if f > -delta {
                        bad.push(Counterexample { u, v, value: f, grad_norm: g, hess_min_eig: min_eig });
                    }
                }
            }
            Ok((qualifying, worst, bad))
        })
        .collect();
    let mut report = LocalminReport {
        n,
        m,
        delta,
        samples,
        seed,
        qualifying_points: 0,
        max_qualifying_value: f64::NEG_INFINITY,
        counterexamples: Vec::new(),
    };
    for r in results {
        let (q, w, bad) = r?;
        report.qualifying_points += q;
        report.max_qualifying_value = report.max_qualifying_value.max(w);
        report.counterexamples.extend(bad);
    }
    Ok(report)
}

/// Unit vector along `e₁` seen from a rotation, used by the CLI and tests.
pub fn separation_in_body(r: &Rotation) -> Vector3<f64> {
    r.inverse().apply(&Vector3::x())
}
