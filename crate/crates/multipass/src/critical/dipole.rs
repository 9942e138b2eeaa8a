//! Reduction of the dipole-involving interactions to two unit vectors and
//! the sublevel-set connector built on it.
//!
//! With the dipole on the "guest" molecule and any tensor `T` on the "host",
//!
//! ```text
//! F = sign · ‖D‖ · ⟨w(e), p⟩,   e = Hᵀe₁,   p = Hᵀ G d̂,
//! ```
//!
//! where `H`, `G` are the host and guest rotations, `d̂` the body dipole
//! direction and `w` is linear in the host's body tensor:
//!
//! ```text
//! dipole T = D':      w(e) = D' − 3 (e·D') e
//! quadrupole T = Q:   w(e) = 5 Q(e,e) e − 2 Q e
//! octopole T = O:     w(e) = 3 O(e,e,·) − 7 O(e,e,e) e
//! ```
//!
//! For fixed `e` the minimum over `p` is `−‖D‖‖w(e)‖`, attained at
//! `p = R_e := −sign · w(e)/‖w(e)‖`.

use nalgebra::Vector3;

use super::sphere::{ascend, densify_arc, fibonacci_sphere, SphereGraph};
use crate::error::{Error, Result};
use crate::interaction::{Moment, PairInteraction};
use crate::linalg::contract3_2;
use crate::so3::{rot_x, Rotation};

const GRID_POINTS: usize = 6000;
const GRID_NEIGHBORS: usize = 8;
const TRANSPORT_STEP: f64 = 0.02;

/// `F` of a dipole-involving pair as a function of `(e, p)`.
#[derive(Clone, Debug)]
pub struct DipoleReduction {
    /// Whether molecule 1 carries the dipole (the guest).
    pub dipole_on_first: bool,
    pub sign: f64,
    pub dipole_norm: f64,
    /// Body-frame unit dipole of the guest.
    pub dipole_dir: Vector3<f64>,
    /// Body-frame tensor of the host.
    pub partner: Moment,
}

impl DipoleReduction {
    pub fn new(pair: &PairInteraction) -> Result<Self> {
        let (n, m) = pair.orders();
        let (dipole_on_first, dipole, partner) = match (pair.first_moment(), pair.second_moment()) {
            (Moment::Dipole(d), other) if n == 1 && m <= 3 => (true, *d, other.clone()),
            (other, Moment::Dipole(d)) if m == 1 && n <= 3 => (false, *d, other.clone()),
            _ => return Err(Error::UnsupportedCase(format!("({n}, {m}) is not a dipole case"))),
        };
        let dipole_norm = dipole.norm();
        if !(dipole_norm > 0.0) {
            return Err(Error::InvalidInput("dipole vanishes".into()));
        }
        let sign = if dipole_on_first || (n + m) % 2 == 0 { 1.0 } else { -1.0 };
        Ok(DipoleReduction { dipole_on_first, sign, dipole_norm, dipole_dir: dipole / dipole_norm, partner })
    }

    /// `w(e)` for the host's body tensor.
    pub fn w(&self, e: &Vector3<f64>) -> Vector3<f64> {
        match &self.partner {
            Moment::Dipole(d) => d - e * (3.0 * e.dot(d)),
            Moment::Quadrupole(q) => {
                let qe = q * e;
                e * (5.0 * e.dot(&qe)) - qe * 2.0
            }
            Moment::Octopole(o) => {
                let oee = contract3_2(o, e, e);
                oee * 3.0 - e * (7.0 * oee.dot(e))
            }
            Moment::Hexadecapole(_) => unreachable!("hexadecapole partners are rejected in new"),
        }
    }

    /// `‖w(e)‖`.
    pub fn phi(&self, e: &Vector3<f64>) -> f64 {
        self.w(e).norm()
    }

    /// Fiber minimizer direction `R_e`; `None` where `w(e) = 0`.
    pub fn fiber_direction(&self, e: &Vector3<f64>) -> Option<Vector3<f64>> {
        let w = self.w(e);
        let n = w.norm();
        (n > 1e-300).then(|| -w * (self.sign / n))
    }

    /// `(host, guest)` from `(U, V)`.
    pub fn split(&self, u: &Rotation, v: &Rotation) -> (Rotation, Rotation) {
        if self.dipole_on_first {
            (*v, *u)
        } else {
            (*u, *v)
        }
    }

    /// `(U, V)` from `(host, guest)`.
    pub fn join(&self, host: &Rotation, guest: &Rotation) -> (Rotation, Rotation) {
        if self.dipole_on_first {
            (*guest, *host)
        } else {
            (*host, *guest)
        }
    }

    /// `(e, p)` of a configuration.
    pub fn reduce(&self, u: &Rotation, v: &Rotation) -> (Vector3<f64>, Vector3<f64>) {
        let (h, g) = self.split(u, v);
        let ht = h.matrix().transpose();
        (ht * Vector3::x(), ht * (g.matrix() * self.dipole_dir))
    }

    pub fn value_ep(&self, e: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
        self.sign * self.dipole_norm * self.w(e).dot(p)
    }
}

/// Cached grid data for connecting sublevel sets of a dipole case.
#[derive(Clone, Debug)]
pub struct DipoleConnector {
    pub reduction: DipoleReduction,
    graph: SphereGraph,
    weights: Vec<Vec<f64>>,
    /// Threshold of `‖w‖` above which the superlevel set is connected on the grid.
    pub merge_threshold: f64,
    /// Smallest `‖w‖` on the grid (refined).
    pub phi_min: f64,
}

impl DipoleConnector {
    pub fn new(reduction: DipoleReduction) -> Self {
        let graph = SphereGraph::new(GRID_POINTS, GRID_NEIGHBORS);
        let phi = |e: &Vector3<f64>| reduction.phi(e);
        let values: Vec<f64> = graph.points.iter().map(phi).collect();
        let weights = graph.edge_weights(&values, &phi);
        let merge_threshold = graph.merge_threshold(&weights);
        let phi_min = refine_minimum(&phi, &graph.points, &values);
        DipoleConnector { reduction, graph, weights, merge_threshold, phi_min }
    }

    /// Path inside `{F < −delta}` from `start` to `end` (both `(U, V)`).
    pub fn connect(
        &self,
        start: (Rotation, Rotation),
        end: (Rotation, Rotation),
        delta: f64,
    ) -> Result<Vec<(Rotation, Rotation)>> {
        let red = &self.reduction;
        let floor = delta / red.dipole_norm;
        let phi = |e: &Vector3<f64>| red.phi(e);

        let (h0, g0) = red.split(&start.0, &start.1);
        let (h1, g1) = red.split(&end.0, &end.1);
        let e0 = h0.matrix().transpose() * Vector3::x();
        let e1 = h1.matrix().transpose() * Vector3::x();

        // e-path: ascend ‖w‖, step onto the grid, widest path, and back.
        let mut epath = vec![e0];
        let target = self.merge_threshold;
        epath.extend(ascend(&phi, &e0, target, 0.02, 5000));
        let tail_rev = {
            let mut t = vec![e1];
            t.extend(ascend(&phi, &e1, target, 0.02, 5000));
            t
        };
        let a_anchor = *epath.last().unwrap();
        let b_anchor = *tail_rev.last().unwrap();
        let ia = self.best_anchor(&a_anchor);
        let ib = self.best_anchor(&b_anchor);
        let (nodes, _) = self.graph.widest_path(&self.weights, ia, ib);
        if nodes.is_empty() {
            return Err(Error::Construction("sphere grid is disconnected".into()));
        }
        let mut corners: Vec<Vector3<f64>> = Vec::new();
        corners.extend(nodes.iter().map(|&i| self.graph.points[i]));
        corners.extend(tail_rev.iter().rev());
        let mut dense = epath.clone();
        for c in corners {
            let last = *dense.last().unwrap();
            dense.extend(densify_arc(&last, &c, TRANSPORT_STEP));
        }
        if let Some(bad) = dense.iter().find(|e| phi(e) <= floor) {
            return Err(Error::Construction(format!(
                "transport direction {bad:?} leaves the sublevel set (‖w‖ = {})",
                phi(bad)
            )));
        }

        // Leg A at the start: rotate the guest in the lab so that p → R_e.
        let mut nodes_hg: Vec<(Rotation, Rotation)> = vec![(h0, g0)];
        let guest_after_a = align_guest(red, &h0, &g0, &e0)?;
        push_rotation_leg(&mut nodes_hg, &h0, &g0, &guest_after_a);

        // Transport e along the dense path, keeping p = R_e.
        let mut host = h0;
        let mut guest = guest_after_a;
        for k in 1..dense.len() {
            let (ek, en) = (dense[k - 1], dense[k]);
            let host_next = host * Rotation::between(&en, &ek);
            let tk = host.matrix() * red.fiber_direction(&ek).unwrap();
            let tn = host_next.matrix() * red.fiber_direction(&en).unwrap();
            let guest_next = Rotation::between(&tk, &tn) * guest;
            host = host_next;
            guest = guest_next;
            nodes_hg.push((host, guest));
        }

        // Leg C: a lab rotation about e₁ of both molecules onto the end host.
        let guest_end_a = align_guest(red, &h1, &g1, &e1)?;
        let twist = h1 * host.inverse();
        let phi_c = twist.log().x;
        let pieces = ((phi_c.abs() / TRANSPORT_STEP).ceil() as usize).max(1);
        let (hc, gc) = (host, guest);
        for k in 1..=pieces {
            let r = rot_x(phi_c * k as f64 / pieces as f64);
            nodes_hg.push((r * hc, r * gc));
        }
        let host = h1;
        let guest = rot_x(phi_c) * gc;

        // Leg D: body rotation of the guest about its dipole axis.
        let body = guest.inverse() * guest_end_a;
        let pieces = ((body.angle() / TRANSPORT_STEP).ceil() as usize).max(1);
        let omega = body.log();
        for k in 1..=pieces {
            nodes_hg.push((host, guest * Rotation::exp(&(omega * (k as f64 / pieces as f64)))));
        }

        // Leg A at the end, reversed.
        let mut end_leg = vec![(h1, g1)];
        push_rotation_leg(&mut end_leg, &h1, &g1, &guest_end_a);
        end_leg.reverse();
        nodes_hg.extend(end_leg.into_iter().skip(1));
        Ok(nodes_hg.into_iter().map(|(h, g)| red.join(&h, &g)).collect())
    }

    /// Grid node near `x` whose connecting arc keeps `‖w‖` highest.
    fn best_anchor(&self, x: &Vector3<f64>) -> usize {
        let red = &self.reduction;
        let mut best = (f64::NEG_INFINITY, self.graph.nearest(x));
        for i in self.graph.nearest_k(x, 12) {
            let arc = densify_arc(x, &self.graph.points[i], 0.005);
            let low = arc.iter().map(|e| red.phi(e)).fold(red.phi(x), f64::min);
            if low > best.0 {
                best = (low, i);
            }
        }
        best.1
    }
}

/// Guest rotation after turning its lab dipole onto `H R_e` along the
/// shortest great circle.
fn align_guest(red: &DipoleReduction, host: &Rotation, guest: &Rotation, e: &Vector3<f64>) -> Result<Rotation> {
    let target = host.matrix()
        * red
            .fiber_direction(e)
            .ok_or_else(|| Error::Precondition("endpoint sits where the fiber minimum vanishes".into()))?;
    let current = guest.matrix() * red.dipole_dir;
    Ok(Rotation::between(&current, &target) * *guest)
}

fn push_rotation_leg(nodes: &mut Vec<(Rotation, Rotation)>, host: &Rotation, from: &Rotation, to: &Rotation) {
    let lab = *to * from.inverse();
    let omega = lab.log();
    let pieces = ((omega.norm() / TRANSPORT_STEP).ceil() as usize).max(1);
    for k in 1..=pieces {
        let r = Rotation::exp(&(omega * (k as f64 / pieces as f64)));
        nodes.push((*host, r * *from));
    }
}

fn refine_minimum(phi: &dyn Fn(&Vector3<f64>) -> f64, points: &[Vector3<f64>], values: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut best = values[order[0]];
    let neg = |x: &Vector3<f64>| -phi(x);
    for &i in order.iter().take(8) {
        if let Some(p) = ascend(&neg, &points[i], f64::INFINITY, 0.01, 400).last() {
            best = best.min(phi(p));
        }
    }
    best
}

/// Smallest `‖w(e)‖` over the sphere, from a dense grid refined by descent.
pub fn fiber_floor(reduction: &DipoleReduction) -> f64 {
    let points = fibonacci_sphere(GRID_POINTS);
    let phi = |e: &Vector3<f64>| reduction.phi(e);
    let values: Vec<f64> = points.iter().map(phi).collect();
    refine_minimum(&phi, &points, &values)
}
