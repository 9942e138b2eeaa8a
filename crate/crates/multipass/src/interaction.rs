//! Multipolar interaction energies `F^(n,m)` for `n + m ≤ 5` and the large-L
//! expansion of the Coulomb interaction of two (or K) rotated molecules.
//!
//! Molecule 1 sits at the origin and molecule 2 at `+L e₁`; the exact energy
//! is `Σ q q' / |U x − V y − L e₁|` and
//!
//! ```text
//! energy ≈ Σ_{2 ≤ n+m ≤ N} F^(n,m)(U, V) / L^(n+m+1).
//! ```
//!
//! With `e = e₁`, the lab-frame tensors `Dᵢ, Qᵢ, Oᵢ, Hᵢ` and `n ≤ m`:
//!
//! ```text
//! F^(1,1) = D₁·D₂ − 3 (e·D₁)(e·D₂)
//! F^(1,2) = 5 (e·D₁) Q₂(e,e) − 2 D₁·Q₂e
//! F^(1,3) = 3 O₂(e,e,D₁) − 7 (e·D₁) O₂(e,e,e)
//! F^(1,4) = 9 (e·D₁) H₂(e,e,e,e) − 4 H₂(e,e,e,D₁)
//! F^(2,2) = tr(L(Q₁) Q₂) / 3,  L(Q) = 35 pQp − 10 pQ − 10 Qp + 2Q,  p = eeᵀ
//! F^(2,3) = −21 Q₁(e,e) O₂(e,e,e) + 14 O₂(e,e,Q₁e) − 2 Σ O₂(e,j,k) Q₁(j,k)
//! ```
//!
//! and `F^(n,m)(1, 2) = (−1)^(n+m) F^(m,n)(2, 1)` for `n > m`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Tensor3, Tensor4};
use crate::multipole::{
    add3, add4, apply3, apply4, array_to_mat, compute_multipoles, ChargeDistribution, MultipoleSet,
    NEUTRALITY_TOL,
};
use crate::so3::{hat, Rotation};

/// A single Cartesian multipole tensor.
#[derive(Clone, Debug, PartialEq)]
pub enum Moment {
    Dipole(Vector3<f64>),
    Quadrupole(Matrix3<f64>),
    Octopole(Tensor3),
    Hexadecapole(Tensor4),
}

impl Moment {
    /// The order-`n` tensor of a multipole set.
    pub fn of(set: &MultipoleSet, n: usize) -> Result<Moment> {
        match n {
            1 => Ok(Moment::Dipole(set.d())),
            2 => Ok(Moment::Quadrupole(set.q())),
            3 => Ok(Moment::Octopole(set.octopole)),
            4 => Ok(Moment::Hexadecapole(set.hexadecapole)),
            _ => Err(Error::UnsupportedOrder { n, m: 0 }),
        }
    }

    pub fn order(&self) -> usize {
        match self {
            Moment::Dipole(_) => 1,
            Moment::Quadrupole(_) => 2,
            Moment::Octopole(_) => 3,
            Moment::Hexadecapole(_) => 4,
        }
    }

    /// Every slot contracted with `r`.
    pub fn rotated(&self, r: &Matrix3<f64>) -> Moment {
        match self {
            Moment::Dipole(d) => Moment::Dipole(r * d),
            Moment::Quadrupole(q) => Moment::Quadrupole(r * q * r.transpose()),
            Moment::Octopole(o) => {
                let mut t = *o;
                for slot in 0..3 {
                    t = apply3(&t, r, slot);
                }
                Moment::Octopole(t)
            }
            Moment::Hexadecapole(h) => {
                let mut t = *h;
                for slot in 0..4 {
                    t = apply4(&t, r, slot);
                }
                Moment::Hexadecapole(t)
            }
        }
    }

    /// Infinitesimal action of a skew matrix `a`, slot by slot.
    pub fn derived(&self, a: &Matrix3<f64>) -> Moment {
        match self {
            Moment::Dipole(d) => Moment::Dipole(a * d),
            Moment::Quadrupole(q) => Moment::Quadrupole(a * q + q * a.transpose()),
            Moment::Octopole(o) => {
                let mut t = crate::linalg::zero3();
                for slot in 0..3 {
                    add3(&mut t, &apply3(o, a, slot));
                }
                Moment::Octopole(t)
            }
            Moment::Hexadecapole(h) => {
                let mut t = crate::linalg::zero4();
                for slot in 0..4 {
                    add4(&mut t, &apply4(h, a, slot));
                }
                Moment::Hexadecapole(t)
            }
        }
    }

    fn plus(&self, other: &Moment) -> Moment {
        match (self, other) {
            (Moment::Dipole(a), Moment::Dipole(b)) => Moment::Dipole(a + b),
            (Moment::Quadrupole(a), Moment::Quadrupole(b)) => Moment::Quadrupole(a + b),
            (Moment::Octopole(a), Moment::Octopole(b)) => {
                let mut t = *a;
                add3(&mut t, b);
                Moment::Octopole(t)
            }
            (Moment::Hexadecapole(a), Moment::Hexadecapole(b)) => {
                let mut t = *a;
                add4(&mut t, b);
                Moment::Hexadecapole(t)
            }
            _ => unreachable!("moments of different order"),
        }
    }

    fn scaled(&self, s: f64) -> Moment {
        match self {
            Moment::Dipole(a) => Moment::Dipole(a * s),
            Moment::Quadrupole(a) => Moment::Quadrupole(a * s),
            Moment::Octopole(a) => {
                let mut t = *a;
                t.iter_mut().flatten().flatten().for_each(|x| *x *= s);
                Moment::Octopole(t)
            }
            Moment::Hexadecapole(a) => {
                let mut t = *a;
                t.iter_mut().flatten().flatten().flatten().for_each(|x| *x *= s);
                Moment::Hexadecapole(t)
            }
        }
    }
}

/// `L(Q) = 35 pQp − 10 pQ − 10 Qp + 2Q` for `p = e₁e₁ᵀ`.
pub fn quadrupole_coupling(q: &Matrix3<f64>) -> Matrix3<f64> {
    coupling_along(q, &Vector3::x())
}

/// `L(Q)` for a general unit separation direction `s`.
pub fn coupling_along(q: &Matrix3<f64>, s: &Vector3<f64>) -> Matrix3<f64> {
    let p = s * s.transpose();
    p * q * p * 35.0 - p * q * 10.0 - q * p * 10.0 + q * 2.0
}

/// `F^(n,m)` of two lab-frame moments with separation along `e₁`.
pub fn pair_energy(a: &Moment, b: &Moment) -> f64 {
    use Moment::*;
    match (a, b) {
        (Dipole(d1), Dipole(d2)) => d1.dot(d2) - 3.0 * d1.x * d2.x,
        (Dipole(d1), Quadrupole(q2)) => 5.0 * d1.x * q2[(0, 0)] - 2.0 * d1.dot(&q2.column(0)),
        (Dipole(d1), Octopole(o2)) => {
            let s: f64 = (0..3).map(|k| o2[0][0][k] * d1[k]).sum();
            3.0 * s - 7.0 * d1.x * o2[0][0][0]
        }
        (Dipole(d1), Hexadecapole(h2)) => {
            let s: f64 = (0..3).map(|l| h2[0][0][0][l] * d1[l]).sum();
            9.0 * h2[0][0][0][0] * d1.x - 4.0 * s
        }
        (Quadrupole(q1), Quadrupole(q2)) => (quadrupole_coupling(q1) * q2).trace() / 3.0,
        (Quadrupole(q1), Octopole(o2)) => {
            let qe = q1.column(0);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for j in 0..3 {
                s1 += o2[0][0][j] * qe[j];
                for k in 0..3 {
                    s2 += o2[0][j][k] * q1[(j, k)];
                }
            }
            -21.0 * o2[0][0][0] * q1[(0, 0)] + 14.0 * s1 - 2.0 * s2
        }
        _ if a.order() > b.order() => {
            let sign = if (a.order() + b.order()) % 2 == 0 { 1.0 } else { -1.0 };
            sign * pair_energy(b, a)
        }
        _ => 0.0,
    }
}

/// `F^(n,m)` of two lab-frame multipole sets.
pub fn pair_value(lab1: &MultipoleSet, lab2: &MultipoleSet, n: usize, m: usize) -> Result<f64> {
    check_order(n, m)?;
    Ok(pair_energy(&Moment::of(lab1, n)?, &Moment::of(lab2, m)?))
}

/// Accepts `1 ≤ n, m ≤ 4` with `2 ≤ n + m ≤ 5`.
pub fn check_order(n: usize, m: usize) -> Result<()> {
    if !(1..=4).contains(&n) || !(1..=4).contains(&m) || !(2..=5).contains(&(n + m)) {
        return Err(Error::UnsupportedOrder { n, m });
    }
    Ok(())
}

/// `F^(n,m)` of `m1` rotated by `U` and `m2` rotated by `V`.
pub fn f_nm(m1: &MultipoleSet, m2: &MultipoleSet, u: &Rotation, v: &Rotation, n: usize, m: usize) -> Result<f64> {
    Ok(PairInteraction::new(m1, m2, n, m)?.value(u, v))
}

/// `F^(n,m)` as a function of `(U, V)` with analytic derivatives.
///
/// Derivatives are taken along `U·exp(t ω̂)`: the first derivative in body
/// direction `k` replaces the body tensor `T` by `Gₖ⋆T`, the second by
/// `½(Gᵢ⋆Gⱼ⋆ + Gⱼ⋆Gᵢ⋆)T`, where `Gₖ = hat(eₖ)` and `⋆` is the slotwise
/// Lie-algebra action. These body tensors are precomputed.
#[derive(Clone, Debug)]
pub struct PairInteraction {
    n: usize,
    m: usize,
    first: Derivatives,
    second: Derivatives,
}

#[derive(Clone, Debug)]
struct Derivatives {
    base: Moment,
    d1: Vec<Moment>,
    d2: Vec<Vec<Moment>>,
}

impl Derivatives {
    fn new(base: Moment) -> Self {
        let gens: Vec<Matrix3<f64>> = (0..3).map(|k| hat(&Vector3::ith(k, 1.0))).collect();
        let d1: Vec<Moment> = gens.iter().map(|g| base.derived(g)).collect();
        let d2 = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| d1[j].derived(&gens[i]).plus(&d1[i].derived(&gens[j])).scaled(0.5))
                    .collect()
            })
            .collect();
        Derivatives { base, d1, d2 }
    }
}

impl PairInteraction {
    pub fn new(m1: &MultipoleSet, m2: &MultipoleSet, n: usize, m: usize) -> Result<Self> {
        check_order(n, m)?;
        for (set, order) in [(m1, n), (m2, m)] {
            if order > set.max_order {
                return Err(Error::InvalidInput(format!(
                    "order {order} requested but the multipole set stops at {}",
                    set.max_order
                )));
            }
        }
        Ok(PairInteraction {
            n,
            m,
            first: Derivatives::new(Moment::of(m1, n)?),
            second: Derivatives::new(Moment::of(m2, m)?),
        })
    }

    /// Builds the interaction directly from two body-frame moments.
    pub fn from_moments(first: Moment, second: Moment) -> Result<Self> {
        let (n, m) = (first.order(), second.order());
        check_order(n, m)?;
        Ok(PairInteraction { n, m, first: Derivatives::new(first), second: Derivatives::new(second) })
    }

    pub fn orders(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn first_moment(&self) -> &Moment {
        &self.first.base
    }

    pub fn second_moment(&self) -> &Moment {
        &self.second.base
    }

    pub fn value(&self, u: &Rotation, v: &Rotation) -> f64 {
        self.value_matrices(&u.matrix(), &v.matrix())
    }

    pub fn value_matrices(&self, um: &Matrix3<f64>, vm: &Matrix3<f64>) -> f64 {
        pair_energy(&self.first.base.rotated(um), &self.second.base.rotated(vm))
    }

    /// Gradient in body angular-velocity coordinates `(ωU, ωV)`.
    pub fn gradient(&self, u: &Rotation, v: &Rotation) -> SVector<f64, 6> {
        let (um, vm) = (u.matrix(), v.matrix());
        let a = self.first.base.rotated(&um);
        let b = self.second.base.rotated(&vm);
        let mut g = SVector::<f64, 6>::zeros();
        for k in 0..3 {
            g[k] = pair_energy(&self.first.d1[k].rotated(&um), &b);
            g[k + 3] = pair_energy(&a, &self.second.d1[k].rotated(&vm));
        }
        g
    }

    /// Riemannian Hessian in body angular-velocity coordinates `(ωU, ωV)`.
    pub fn hessian(&self, u: &Rotation, v: &Rotation) -> SMatrix<f64, 6, 6> {
        let (um, vm) = (u.matrix(), v.matrix());
        let a = self.first.base.rotated(&um);
        let b = self.second.base.rotated(&vm);
        let da: Vec<Moment> = self.first.d1.iter().map(|t| t.rotated(&um)).collect();
        let db: Vec<Moment> = self.second.d1.iter().map(|t| t.rotated(&vm)).collect();
        let mut h = SMatrix::<f64, 6, 6>::zeros();
        for i in 0..3 {
            for j in i..3 {
                let uu = pair_energy(&self.first.d2[i][j].rotated(&um), &b);
                let vv = pair_energy(&a, &self.second.d2[i][j].rotated(&vm));
                h[(i, j)] = uu;
                h[(j, i)] = uu;
                h[(i + 3, j + 3)] = vv;
                h[(j + 3, i + 3)] = vv;
            }
            for j in 0..3 {
                let uv = pair_energy(&da[i], &db[j]);
                h[(i, j + 3)] = uv;
                h[(j + 3, i)] = uv;
            }
        }
        h
    }
}

/// One entry `F^(n,m)` of an interaction table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEntry {
    pub n: usize,
    pub m: usize,
    pub value: f64,
}

/// All `F^(n,m)` with `1 ≤ n, m ≤ 4` and `2 ≤ n + m ≤ N` for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionTable {
    pub order: usize,
    pub entries: Vec<InteractionEntry>,
}

impl InteractionTable {
    /// Table for `m1` rotated by `U` and `m2` rotated by `V`.
    pub fn compute(m1: &MultipoleSet, m2: &MultipoleSet, u: &Rotation, v: &Rotation, order: usize) -> Result<Self> {
        if order > 5 {
            return Err(Error::InvalidInput(format!("expansion order {order} exceeds 5")));
        }
        let lab1 = m1.rotated(u);
        let lab2 = m2.rotated(v);
        let mut entries = Vec::new();
        for total in 2..=order {
            for n in 1..total {
                let m = total - n;
                if n > 4 || m > 4 || n > m1.max_order || m > m2.max_order {
                    continue;
                }
                entries.push(InteractionEntry { n, m, value: pair_value(&lab1, &lab2, n, m)? });
            }
        }
        Ok(InteractionTable { order, entries })
    }

    pub fn get(&self, n: usize, m: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.n == n && e.m == m).map(|e| e.value)
    }

    /// `Σ F^(n,m) / L^(n+m+1)`.
    pub fn energy_at(&self, l: f64) -> f64 {
        self.entries.iter().map(|e| e.value / l.powi((e.n + e.m + 1) as i32)).sum()
    }
}

fn require_neutral(dist: &ChargeDistribution) -> Result<()> {
    let q = dist.total_charge();
    if q.abs() > NEUTRALITY_TOL {
        return Err(Error::InvalidInput(format!("distribution '{}' carries charge {q}", dist.label)));
    }
    Ok(())
}

fn require_support(radius: f64, l: f64, label: &str) -> Result<()> {
    if radius > l / 3.0 {
        return Err(Error::OutOfDomain(format!(
            "support radius {radius} of '{label}' exceeds L/3 = {}",
            l / 3.0
        )));
    }
    Ok(())
}

/// Large-L expansion of the interaction of two neutral distributions.
pub fn interaction_expansion(
    dist1: &ChargeDistribution,
    dist2: &ChargeDistribution,
    u: &Rotation,
    v: &Rotation,
    l: f64,
    order: usize,
) -> Result<(InteractionTable, f64)> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::OutOfDomain(format!("separation L = {l} must be positive")));
    }
    require_neutral(dist1)?;
    require_neutral(dist2)?;
    require_support(dist1.support_radius(), l, &dist1.label)?;
    require_support(dist2.support_radius(), l, &dist2.label)?;
    let m1 = compute_multipoles(dist1, 4)?;
    let m2 = compute_multipoles(dist2, 4)?;
    let table = InteractionTable::compute(&m1, &m2, u, v, order)?;
    let value = table.energy_at(l);
    Ok((table, value))
}

/// A molecule's body-frame multipoles placed in the lab.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculePlacement {
    pub multipoles: MultipoleSet,
    pub rotation: Rotation,
    pub center: [f64; 3],
    /// Radius of a ball around `center` containing the molecule's charges.
    pub support_radius: f64,
}

impl MoleculePlacement {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }
}

/// Sum of pair expansions; each pair is evaluated in a frame that maps the
/// axis from molecule `i` to molecule `j` onto `e₁`.
pub fn pairwise_multimolecule_energy(placements: &[MoleculePlacement], order: usize) -> Result<f64> {
    if placements.len() < 2 {
        return Err(Error::InvalidInput("need at least two molecules".into()));
    }
    let mut total = 0.0;
    for i in 0..placements.len() {
        for j in (i + 1)..placements.len() {
            let (a, b) = (&placements[i], &placements[j]);
            let axis = b.center() - a.center();
            let l = axis.norm();
            if !(l > 0.0) {
                return Err(Error::OutOfDomain(format!("molecules {i} and {j} share a center")));
            }
            require_support(a.support_radius, l, &format!("molecule {i}"))?;
            require_support(b.support_radius, l, &format!("molecule {j}"))?;
            let frame = Rotation::between(&axis, &Vector3::x());
            let table =
                InteractionTable::compute(&a.multipoles, &b.multipoles, &(frame * a.rotation), &(frame * b.rotation), order)?;
            total += table.energy_at(l);
        }
    }
    Ok(total)
}

/// Convenience used by the tests and the CLI: the quadrupole of a set as a
/// matrix in the lab frame.
pub fn lab_quadrupole(set: &MultipoleSet, r: &Rotation) -> Matrix3<f64> {
    let m = r.matrix();
    m * array_to_mat(&set.quadrupole) * m.transpose()
}
