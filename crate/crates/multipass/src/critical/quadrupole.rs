//! Quadrupole-quadrupole structure: eigenvalue pairings of `L(Q₁)` and
//! `Q₂`, the fiber minimum `g`, orientations of `Q₁` with a prescribed
//! sign pattern of `M(Q₁)`, and the sublevel-set connector.
//!
//! With `p = e₁e₁ᵀ`, `F = tr(L(Q₁) Q₂)/3`. For fixed `Q₁` the critical
//! values over the orbit of `Q₂` are `A_σ = Σ aᵢ b_σ(i) / 3` with `a`
//! ascending eigenvalues of `L(Q₁)` and `b` descending eigenvalues of `Q₂`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::descent::{descend_to_pseudo_minimum, DescentOptions, FreeFactors};
use super::sphere::{ascend, fibonacci_sphere};
use crate::error::{Error, Result};
use crate::interaction::{coupling_along, quadrupole_coupling, Moment, PairInteraction};
use crate::linalg::{sym_eigen_ascending, sym_eigen_descending};
use crate::multipole::mat_to_array;
use crate::so3::Rotation;

/// The six permutations in the order 123, 132, 213, 231, 312, 321 (0-based).
pub const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

const ORIENTATION_GRID: usize = 4000;
const ROTATION_STEP: f64 = 0.05;
/// Smallest relative gap of `a` accepted for the bridging orientation.
const BRIDGE_GAP: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MSignPattern {
    TwoPositive,
    TwoNegative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QQStructure {
    pub l_of_q1: [[f64; 3]; 3],
    pub m_of_q1: [[f64; 3]; 3],
    /// Eigenvalues of `L(Q₁)`, ascending.
    pub eigen_a: [f64; 3],
    /// Eigenvalues of `Q₂`, descending.
    pub eigen_b: [f64; 3],
    /// `A_σ` for σ in [`PERMUTATIONS`] order.
    pub critical_values: [f64; 6],
    pub g_min: f64,
    pub h_max: f64,
    /// Smallest Hessian eigenvalue of `V ↦ F` at each critical orbit point.
    pub hess_min_eig_at_each_critical: [f64; 6],
}

/// `M(Q) = L(Q) − tr(L(Q))/3 · I`.
pub fn traceless_coupling(q: &Matrix3<f64>) -> Matrix3<f64> {
    let l = quadrupole_coupling(q);
    l - Matrix3::identity() * (l.trace() / 3.0)
}

fn check_quadrupole(q: &Matrix3<f64>, name: &str) -> Result<()> {
    let scale = q.norm();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidInput(format!("{name} is zero or not finite")));
    }
    if (q - q.transpose()).norm() > 1e-10 * scale || q.trace().abs() > 1e-10 * scale {
        return Err(Error::InvalidInput(format!("{name} must be symmetric and traceless")));
    }
    Ok(())
}

/// `Σ aᵢ b_σ(i) / 3`.
pub fn pairing(a: &Vector3<f64>, b: &Vector3<f64>, sigma: &[usize; 3]) -> f64 {
    (0..3).map(|i| a[i] * b[sigma[i]]).sum::<f64>() / 3.0
}

/// Pairing with the entries `i`, `j` of σ exchanged.
fn transposed(sigma: &[usize; 3], i: usize, j: usize) -> [usize; 3] {
    let mut s = *sigma;
    s.swap(i, j);
    s
}

/// Eigen-structure of `F` for `Q₁ = Uᵀ Q1ref U` against the orbit of `Q2ref`.
pub fn qq_structure(q1ref: &Matrix3<f64>, q2ref: &Matrix3<f64>, orientation: &Rotation) -> Result<QQStructure> {
    check_quadrupole(q1ref, "Q1")?;
    check_quadrupole(q2ref, "Q2")?;
    let u = orientation.matrix();
    let q1 = u.transpose() * q1ref * u;
    let l = quadrupole_coupling(&q1);
    let m = l - Matrix3::identity() * (l.trace() / 3.0);
    let (a, _) = sym_eigen_ascending(&l);
    let (b, _) = sym_eigen_descending(q2ref);
    let mut critical_values = [0.0; 6];
    let mut hess = [0.0; 6];
    for (k, sigma) in PERMUTATIONS.iter().enumerate() {
        let value = pairing(&a, &b, sigma);
        critical_values[k] = value;
        let worst = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| value - pairing(&a, &b, &transposed(sigma, i, j)))
            .fold(f64::NEG_INFINITY, f64::max);
        hess[k] = -2.0 * worst;
    }
    Ok(QQStructure {
        l_of_q1: mat_to_array(&l),
        m_of_q1: mat_to_array(&m),
        eigen_a: [a[0], a[1], a[2]],
        eigen_b: [b[0], b[1], b[2]],
        critical_values,
        g_min: critical_values[0],
        h_max: critical_values[5],
        hess_min_eig_at_each_critical: hess,
    })
}

/// A rotation `U` for which `M(Uᵀ Q1ref U)` has the requested sign pattern:
/// `U e₁` is the top eigenvector of `Q1ref` for two negative eigenvalues
/// and the bottom one for two positive eigenvalues.
pub fn orient_m_sign(q1ref: &Matrix3<f64>, want: MSignPattern) -> Result<Rotation> {
    check_quadrupole(q1ref, "Q1")?;
    let (_, vecs) = sym_eigen_descending(q1ref);
    let s: Vector3<f64> = match want {
        MSignPattern::TwoNegative => vecs.column(0).into(),
        MSignPattern::TwoPositive => vecs.column(2).into(),
    };
    Ok(Rotation::between(&Vector3::x(), &s))
}

/// Sign pattern of a traceless symmetric matrix, if it has one.
pub fn m_sign_pattern(m: &Matrix3<f64>) -> Option<MSignPattern> {
    let (e, _) = sym_eigen_ascending(m);
    if e[0] < 0.0 && e[1] > 0.0 {
        Some(MSignPattern::TwoPositive)
    } else if e[1] < 0.0 && e[2] > 0.0 {
        Some(MSignPattern::TwoNegative)
    } else {
        None
    }
}

/// `g` as a function of the separation direction `s = Uᵀe₁` seen from molecule 1.
fn fiber_minimum_along(q1ref: &Matrix3<f64>, b: &Vector3<f64>, s: &Vector3<f64>) -> f64 {
    let (a, _) = sym_eigen_ascending(&coupling_along(q1ref, s));
    pairing(&a, b, &PERMUTATIONS[0])
}

/// `c₀ = min over orientations of −g`, from a dense grid of directions
/// refined by local ascent of `g`.
pub fn fiber_gap(q1ref: &Matrix3<f64>, q2ref: &Matrix3<f64>) -> Result<f64> {
    check_quadrupole(q1ref, "Q1")?;
    check_quadrupole(q2ref, "Q2")?;
    let (b, _) = sym_eigen_descending(q2ref);
    let g = |s: &Vector3<f64>| fiber_minimum_along(q1ref, &b, s);
    let grid = fibonacci_sphere(ORIENTATION_GRID);
    let mut values: Vec<(f64, usize)> = grid.iter().enumerate().map(|(i, s)| (g(s), i)).collect();
    values.sort_by(|x, y| y.0.total_cmp(&x.0));
    let mut best = values[0].0;
    for &(_, i) in values.iter().take(8) {
        if let Some(p) = ascend(&g, &grid[i], f64::INFINITY, 0.01, 400).last() {
            best = best.max(g(p));
        }
    }
    Ok(-best)
}

/// Bridging orientation: lab `U` of molecule 1 at which the fiber minimizers
/// of molecule 2 are linked by π-rotations with margin `delta_prime`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bridge {
    pub rotation: Rotation,
    pub pattern: MSignPattern,
    pub delta_prime: f64,
}

/// Values along the three π-rotations about the eigenvectors of `L`,
/// starting at the minimizer: entry `k` exchanges the other two `b`'s.
fn flip_values(a: &Vector3<f64>, b: &Vector3<f64>) -> [f64; 3] {
    let id = PERMUTATIONS[0];
    [transposed(&id, 1, 2), transposed(&id, 0, 2), transposed(&id, 0, 1)].map(|s| pairing(a, b, &s))
}

fn second_smallest(v: [f64; 3]) -> f64 {
    let mut s = v;
    s.sort_by(f64::total_cmp);
    s[1]
}

/// Searches the direction grid for the orientation with the required sign
/// pattern of `M` that maximizes `δ′`.
pub fn find_bridge(q1ref: &Matrix3<f64>, q2ref: &Matrix3<f64>) -> Result<Bridge> {
    check_quadrupole(q1ref, "Q1")?;
    check_quadrupole(q2ref, "Q2")?;
    let (b, _) = sym_eigen_descending(q2ref);
    let pattern = if b[1] >= 0.0 { MSignPattern::TwoPositive } else { MSignPattern::TwoNegative };
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for s in fibonacci_sphere(ORIENTATION_GRID) {
        let l = coupling_along(q1ref, &s);
        let m = l - Matrix3::identity() * (l.trace() / 3.0);
        if m_sign_pattern(&m) != Some(pattern) {
            continue;
        }
        let (a, _) = sym_eigen_ascending(&l);
        let spread = a[2] - a[0];
        if (a[1] - a[0]).min(a[2] - a[1]) < BRIDGE_GAP * spread {
            continue;
        }
        let dp = -second_smallest(flip_values(&a, &b));
        if best.is_none_or(|(v, _)| dp > v) {
            best = Some((dp, s));
        }
    }
    let Some((delta_prime, s)) = best else {
        return Err(Error::Construction("no orientation with the required sign pattern of M".into()));
    };
    if !(delta_prime > 0.0) {
        return Err(Error::Construction(format!("bridging margin {delta_prime} is not positive")));
    }
    // Lab rotation of molecule 1 with Uᵀe₁ = s.
    Ok(Bridge { rotation: Rotation::between(&s, &Vector3::x()), pattern, delta_prime })
}

/// Cached data for connecting sublevel sets of the quadrupole pair.
#[derive(Clone, Debug)]
pub struct QuadrupoleConnector {
    pub q1ref: Matrix3<f64>,
    pub q2ref: Matrix3<f64>,
    pub c0: f64,
    pub bridge: Bridge,
}

impl QuadrupoleConnector {
    pub fn new(pair: &PairInteraction) -> Result<Self> {
        let (Moment::Quadrupole(q1ref), Moment::Quadrupole(q2ref)) = (pair.first_moment(), pair.second_moment())
        else {
            return Err(Error::UnsupportedCase("not a quadrupole pair".into()));
        };
        let c0 = fiber_gap(q1ref, q2ref)?;
        let bridge = find_bridge(q1ref, q2ref)?;
        Ok(QuadrupoleConnector { q1ref: *q1ref, q2ref: *q2ref, c0, bridge })
    }

    /// `min(δ′, c₀/2)`.
    pub fn delta0(&self) -> f64 {
        self.bridge.delta_prime.min(0.5 * self.c0)
    }

    pub fn connect(
        &self,
        pair: &PairInteraction,
        start: (Rotation, Rotation),
        end: (Rotation, Rotation),
        delta: f64,
    ) -> Result<Vec<(Rotation, Rotation)>> {
        let (mut nodes, signs_a) = self.to_bridge(pair, start, delta)?;
        let (mut tail, signs_b) = self.to_bridge(pair, end, delta)?;
        let (uu, a, b) = self.bridge_frames();
        let u = self.bridge.rotation;
        let mut v = nodes.last().unwrap().1;
        let diff = signs_a.component_mul(&signs_b);
        let flipped: Vec<usize> = (0..3).filter(|&k| diff[k] < 0.0).collect();
        if flipped.len() == 2 {
            let axis = 3 - flipped[0] - flipped[1];
            let values = flip_values(&a, &b);
            let axes = if values[axis] < -delta {
                vec![axis]
            } else {
                vec![flipped[0], flipped[1]]
            };
            for k in axes {
                if values[k] >= -delta {
                    return Err(Error::Construction(format!("π-rotation {k} reaches F = {}", values[k])));
                }
                let axis_vec: Vector3<f64> = uu.column(k).into();
                let pieces = (std::f64::consts::PI / ROTATION_STEP).ceil() as usize;
                for i in 1..=pieces {
                    let r = Rotation::exp(&(axis_vec * (std::f64::consts::PI * i as f64 / pieces as f64)));
                    nodes.push((u, r * v));
                }
                v = nodes.last().unwrap().1;
            }
        } else if !flipped.is_empty() {
            return Err(Error::Construction("minimizer sign patterns differ by an odd flip".into()));
        }
        tail.reverse();
        nodes.extend(tail.into_iter().skip(1));
        Ok(nodes)
    }

    /// Eigenvectors of `L` at the bridge (ascending), `a`, and `b`.
    fn bridge_frames(&self) -> (Matrix3<f64>, Vector3<f64>, Vector3<f64>) {
        let um = self.bridge.rotation.matrix();
        let (a, uu) = sym_eigen_ascending(&quadrupole_coupling(&(um * self.q1ref * um.transpose())));
        let (b, _) = sym_eigen_descending(&self.q2ref);
        (uu, a, b)
    }

    /// Path from `start` to a fiber minimizer `Uu·D·Wᵀ` over the bridge,
    /// with the diagonal of `D`.
    fn to_bridge(
        &self,
        pair: &PairInteraction,
        start: (Rotation, Rotation),
        delta: f64,
    ) -> Result<(Vec<(Rotation, Rotation)>, Vector3<f64>)> {
        let f = |u: &Rotation, v: &Rotation| pair.value(u, v);
        let descend = |u: Rotation, v: Rotation, nodes: &mut Vec<(Rotation, Rotation)>| -> Result<Rotation> {
            let opts = DescentOptions {
                tol_grad: 1e-10,
                free: FreeFactors::SecondOnly,
                record_trajectory: true,
                max_step_length: ROTATION_STEP,
                ..DescentOptions::default()
            };
            let r = descend_to_pseudo_minimum(pair, (u, v), &opts)?;
            nodes.extend(r.trajectory.into_iter().skip(1));
            Ok(r.v)
        };
        let mut nodes = vec![start];
        let (mut u, mut v) = start;
        v = descend(u, v, &mut nodes)?;

        // Move molecule 1 to the bridge, re-descending molecule 2 as needed.
        let target = self.bridge.rotation;
        let redescend_above = -0.5 * (delta + self.c0);
        let keep_below = -delta - 0.1 * (self.c0 - delta);
        let mut step = ROTATION_STEP;
        while u.distance(&target) > 0.0 {
            let dist = u.distance(&target);
            let t = (step / dist).min(1.0);
            let next = if t >= 1.0 { target } else { u.slerp(&target, t) };
            if f(&next, &v) >= keep_below {
                step *= 0.5;
                if step < 1e-9 {
                    return Err(Error::Construction("cannot move molecule 1 inside the sublevel set".into()));
                }
                continue;
            }
            u = next;
            nodes.push((u, v));
            if f(&u, &v) > redescend_above {
                v = descend(u, v, &mut nodes)?;
            }
            step = (step * 2.0).min(ROTATION_STEP);
        }
        v = descend(u, v, &mut nodes)?;

        // Snap to an exact minimizer Uu·D·Wᵀ.
        let (uu, _, b) = self.bridge_frames();
        let (_, w) = sym_eigen_descending(&self.q2ref);
        let spread = b[0] - b[2];
        let coupling = |v: &Rotation| uu.transpose() * v.matrix() * w;
        if let Some(j) = (0..2).find(|&j| b[j] - b[j + 1] < 1e-6 * spread) {
            let k = j + 1;
            let bm = coupling(&v);
            let psi = bm[(j, k)].atan2(bm[(j, j)]) * -1.0;
            // Body rotation inside the degenerate eigenspace of Q2ref.
            let axis: Vector3<f64> = w.column(3 - j - k).into();
            let body = Rotation::exp(&(axis * -psi));
            let pieces = ((psi.abs() / ROTATION_STEP).ceil() as usize).max(1);
            for i in 1..=pieces {
                nodes.push((u, v * Rotation::exp(&(axis * (-psi * i as f64 / pieces as f64)))));
            }
            v = v * body;
        }
        let bm = coupling(&v);
        let signs = Vector3::new(bm[(0, 0)].signum(), bm[(1, 1)].signum(), bm[(2, 2)].signum());
        if (0..3).any(|i| bm[(i, i)].abs() < 0.5) {
            return Err(Error::Construction("descent did not reach an aligned minimizer".into()));
        }
        let snapped = Rotation::from_matrix(&(uu * Matrix3::from_diagonal(&signs) * w.transpose()))?;
        nodes.push((u, snapped));
        Ok((nodes, signs))
    }
}
