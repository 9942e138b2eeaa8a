//! Point-charge distributions, their Cartesian multipole tensors up to the
//! hexadecapole, and the Taylor expansion of `1/|L e₁ − h|`.
//!
//! Conventions, with `r = |z|`:
//!
//! ```text
//! D_i    = Σ q z_i
//! Q_ij   = ½ Σ q (3 z_i z_j − r² δ_ij)
//! O_ijk  = ½ Σ q (5 z_i z_j z_k − r² (z_i δ_jk + z_j δ_ik + z_k δ_ij))
//! H_ijkl = ⅛ Σ q (35 z_i z_j z_k z_l − 30 r² Sym(z_i z_j δ_kl) + 3 r⁴ Sym(δ_ij δ_kl))
//! ```
//!
//! where `Sym` averages over the distinct index placements. A rotation `R`
//! acts on a distribution by moving every point to `R z`, and on a rank-n
//! tensor by contracting each slot with `R`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm3, norm4, zero3, zero4, Tensor3, Tensor4};
use crate::so3::Rotation;

/// Tolerance on `|Σ q − declared_charge|`.
pub const NEUTRALITY_TOL: f64 = 1e-12;

/// Relative factor of the scale-aware vanishing tolerance.
pub const VANISHING_FACTOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCharge {
    pub q: f64,
    pub x: [f64; 3],
}

impl PointCharge {
    pub fn new(q: f64, x: [f64; 3]) -> Self {
        PointCharge { q, x }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.x)
    }
}

/// A rigid molecule modelled as weighted point charges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeDistribution {
    pub label: String,
    pub declared_charge: f64,
    pub points: Vec<PointCharge>,
}

impl ChargeDistribution {
    pub fn new(label: impl Into<String>, declared_charge: f64, points: Vec<PointCharge>) -> Result<Self> {
        let d = ChargeDistribution { label: label.into(), declared_charge, points };
        d.validate()?;
        Ok(d)
    }

    /// A distribution declared neutral.
    pub fn neutral(label: impl Into<String>, points: Vec<PointCharge>) -> Result<Self> {
        Self::new(label, 0.0, points)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidInput(format!("distribution '{}' has no points", self.label)));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.q.is_finite() || p.x.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "distribution '{}': point {i} is not finite",
                    self.label
                )));
            }
        }
        let total = self.total_charge();
        if (total - self.declared_charge).abs() > NEUTRALITY_TOL {
            return Err(Error::InvalidInput(format!(
                "distribution '{}': total charge {total} differs from declared {}",
                self.label, self.declared_charge
            )));
        }
        Ok(())
    }

    /// Parses and validates the JSON molecule format.
    pub fn from_json(text: &str) -> Result<Self> {
        let d: ChargeDistribution = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("molecule file: {e}")))?;
        d.validate()?;
        Ok(d)
    }

    pub fn total_charge(&self) -> f64 {
        let mut s = 0.0;
        let mut c = 0.0;
        for p in &self.points {
            // Neumaier summation keeps the neutrality check meaningful.
            let t = s + p.q;
            c += if s.abs() >= p.q.abs() { (s - t) + p.q } else { (p.q - t) + s };
            s = t;
        }
        s + c
    }

    /// Largest distance of a point from the origin of the body frame.
    pub fn support_radius(&self) -> f64 {
        self.points.iter().map(|p| p.position().norm()).fold(0.0, f64::max)
    }

    pub fn rotated(&self, r: &Rotation) -> Self {
        let m = r.matrix();
        self.map_points(|x| m * x)
    }

    pub fn translated(&self, t: &Vector3<f64>) -> Self {
        self.map_points(|x| x + t)
    }

    fn map_points(&self, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> Self {
        ChargeDistribution {
            label: self.label.clone(),
            declared_charge: self.declared_charge,
            points: self
                .points
                .iter()
                .map(|p| PointCharge { q: p.q, x: f(p.position()).into() })
                .collect(),
        }
    }

    /// Scale-aware threshold below which the order-`n` tensor counts as zero:
    /// `1e-8 · Σ|q| · max|x|ⁿ`.
    pub fn vanishing_tolerance(&self, n: usize) -> f64 {
        let abs_q: f64 = self.points.iter().map(|p| p.q.abs()).sum();
        VANISHING_FACTOR * abs_q * self.support_radius().powi(n as i32)
    }
}

/// Total charge and Cartesian multipole tensors of orders 1 through 4.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultipoleSet {
    pub total_charge: f64,
    pub dipole: [f64; 3],
    pub quadrupole: [[f64; 3]; 3],
    pub octopole: Tensor3,
    pub hexadecapole: Tensor4,
    pub max_order: usize,
}

impl Default for MultipoleSet {
    fn default() -> Self {
        MultipoleSet {
            total_charge: 0.0,
            dipole: [0.0; 3],
            quadrupole: [[0.0; 3]; 3],
            octopole: zero3(),
            hexadecapole: zero4(),
            max_order: 4,
        }
    }
}

impl MultipoleSet {
    /// A neutral set carrying only a dipole.
    pub fn from_dipole(d: Vector3<f64>) -> Self {
        MultipoleSet { dipole: d.into(), ..Default::default() }
    }

    /// A neutral set carrying only a quadrupole.
    pub fn from_quadrupole(q: Matrix3<f64>) -> Self {
        MultipoleSet { quadrupole: mat_to_array(&q), ..Default::default() }
    }

    /// A neutral set carrying only an octopole.
    pub fn from_octopole(o: Tensor3) -> Self {
        MultipoleSet { octopole: o, ..Default::default() }
    }

    /// A neutral set carrying only a hexadecapole.
    pub fn from_hexadecapole(h: Tensor4) -> Self {
        MultipoleSet { hexadecapole: h, ..Default::default() }
    }

    pub fn d(&self) -> Vector3<f64> {
        Vector3::from(self.dipole)
    }

    pub fn q(&self) -> Matrix3<f64> {
        array_to_mat(&self.quadrupole)
    }

    /// Frobenius norm of the order-`n` tensor (`n = 0` is the total charge).
    pub fn order_norm(&self, n: usize) -> f64 {
        match n {
            0 => self.total_charge.abs(),
            1 => self.d().norm(),
            2 => self.q().norm(),
            3 => norm3(&self.octopole),
            4 => norm4(&self.hexadecapole),
            _ => 0.0,
        }
    }

    /// Largest tensor norm, used to scale tolerances.
    pub fn scale(&self) -> f64 {
        (1..=4).map(|n| self.order_norm(n)).fold(0.0, f64::max)
    }

    /// Pushforward by `r`: every slot contracted with `r`.
    pub fn rotated(&self, r: &Rotation) -> Self {
        let m = r.matrix();
        let mut t3 = self.octopole;
        let mut t4 = self.hexadecapole;
        for slot in 0..3 {
            t3 = apply3(&t3, &m, slot);
        }
        for slot in 0..4 {
            t4 = apply4(&t4, &m, slot);
        }
        MultipoleSet {
            total_charge: self.total_charge,
            dipole: (m * self.d()).into(),
            quadrupole: mat_to_array(&(m * self.q() * m.transpose())),
            octopole: t3,
            hexadecapole: t4,
            max_order: self.max_order,
        }
    }

    /// Infinitesimal action of the Lie-algebra element `a` (a skew matrix):
    /// the derivative of `exp(t a)·T` at `t = 0`, slot by slot.
    pub fn derived(&self, a: &Matrix3<f64>) -> Self {
        let mut t3 = zero3();
        let mut t4 = zero4();
        for slot in 0..3 {
            add3(&mut t3, &apply3(&self.octopole, a, slot));
        }
        for slot in 0..4 {
            add4(&mut t4, &apply4(&self.hexadecapole, a, slot));
        }
        let q = self.q();
        MultipoleSet {
            total_charge: 0.0,
            dipole: (a * self.d()).into(),
            quadrupole: mat_to_array(&(a * q + q * a.transpose())),
            octopole: t3,
            hexadecapole: t4,
            max_order: self.max_order,
        }
    }

    /// Checks symmetry and tracelessness of every tensor within `tol · scale`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let s = tol * self.scale().max(1e-300);
        let q = self.q();
        if (q - q.transpose()).abs().max() > s || q.trace().abs() > s {
            return Err(Error::InvalidInput("quadrupole not symmetric traceless".into()));
        }
        let o = &self.octopole;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let v = o[i][j][k];
                    if (v - o[j][i][k]).abs() > s || (v - o[i][k][j]).abs() > s {
                        return Err(Error::InvalidInput("octopole not symmetric".into()));
                    }
                }
                let tr: f64 = (0..3).map(|a| o[a][a][j]).sum();
                if i == 0 && tr.abs() > s {
                    return Err(Error::InvalidInput("octopole not traceless".into()));
                }
            }
        }
        let h = &self.hexadecapole;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let v = h[i][j][k][l];
                        if (v - h[j][i][k][l]).abs() > s
                            || (v - h[i][k][j][l]).abs() > s
                            || (v - h[i][j][l][k]).abs() > s
                        {
                            return Err(Error::InvalidInput("hexadecapole not symmetric".into()));
                        }
                    }
                    let tr: f64 = (0..3).map(|a| h[a][a][j][k]).sum();
                    if i == 0 && tr.abs() > s {
                        return Err(Error::InvalidInput("hexadecapole not traceless".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn mat_to_array(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut a = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] = m[(i, j)];
        }
    }
    a
}

pub(crate) fn array_to_mat(a: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| a[i][j])
}

pub(crate) fn apply3(t: &Tensor3, m: &Matrix3<f64>, slot: usize) -> Tensor3 {
    let mut out = zero3();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                let mut s = 0.0;
                for a in 0..3 {
                    s += match slot {
                        0 => m[(i, a)] * t[a][j][k],
                        1 => m[(j, a)] * t[i][a][k],
                        _ => m[(k, a)] * t[i][j][a],
                    };
                }
                out[i][j][k] = s;
            }
        }
    }
    out
}

pub(crate) fn apply4(t: &Tensor4, m: &Matrix3<f64>, slot: usize) -> Tensor4 {
    let mut out = zero4();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let mut s = 0.0;
                    for a in 0..3 {
                        s += match slot {
                            0 => m[(i, a)] * t[a][j][k][l],
                            1 => m[(j, a)] * t[i][a][k][l],
                            2 => m[(k, a)] * t[i][j][a][l],
                            _ => m[(l, a)] * t[i][j][k][a],
                        };
                    }
                    out[i][j][k][l] = s;
                }
            }
        }
    }
    out
}

pub(crate) fn add3(acc: &mut Tensor3, t: &Tensor3) {
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                acc[i][j][k] += t[i][j][k];
            }
        }
    }
}

pub(crate) fn add4(acc: &mut Tensor4, t: &Tensor4) {
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    acc[i][j][k][l] += t[i][j][k][l];
                }
            }
        }
    }
}

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// Indices in ascending order, so every permutation of an entry is
/// evaluated by the same floating-point expression.
fn sorted<const N: usize>(mut idx: [usize; N]) -> [usize; N] {
    idx.sort_unstable();
    idx
}

/// Multipole tensors by direct summation over the point charges.
pub fn compute_multipoles(dist: &ChargeDistribution, max_order: usize) -> Result<MultipoleSet> {
    if !(1..=4).contains(&max_order) {
        return Err(Error::InvalidInput(format!("max_order {max_order} not in 1..=4")));
    }
    dist.validate()?;
    let mut m = MultipoleSet { total_charge: dist.total_charge(), max_order, ..Default::default() };
    for p in &dist.points {
        let z = p.x;
        let q = p.q;
        let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
        for i in 0..3 {
            m.dipole[i] += q * z[i];
        }
        if max_order >= 2 {
            for a in 0..3 {
                for b in 0..3 {
                    let [i, j] = sorted([a, b]);
                    m.quadrupole[a][b] += 0.5 * q * (3.0 * z[i] * z[j] - r2 * delta(i, j));
                }
            }
        }
        if max_order >= 3 {
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        let [i, j, k] = sorted([a, b, c]);
                        let trace_part = z[i] * delta(j, k) + z[j] * delta(i, k) + z[k] * delta(i, j);
                        m.octopole[a][b][c] += 0.5 * q * (5.0 * z[i] * z[j] * z[k] - r2 * trace_part);
                    }
                }
            }
        }
        if max_order >= 4 {
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        for d in 0..3 {
                            let [i, j, k, l] = sorted([a, b, c, d]);
                            let zz = (z[i] * z[j] * delta(k, l)
                                + z[i] * z[k] * delta(j, l)
                                + z[i] * z[l] * delta(j, k)
                                + z[j] * z[k] * delta(i, l)
                                + z[j] * z[l] * delta(i, k)
                                + z[k] * z[l] * delta(i, j))
                                / 6.0;
                            let dd = (delta(i, j) * delta(k, l)
                                + delta(i, k) * delta(j, l)
                                + delta(i, l) * delta(j, k))
                                / 3.0;
                            m.hexadecapole[a][b][c][d] += 0.125
                                * q
                                * (35.0 * z[i] * z[j] * z[k] * z[l] - 30.0 * r2 * zz + 3.0 * r2 * r2 * dd);
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Validated rotation of a multipole set by an explicit matrix.
pub fn rotate_multipoles(m: &MultipoleSet, r: &Matrix3<f64>) -> Result<MultipoleSet> {
    let rot = Rotation::from_matrix(r)?;
    Ok(m.rotated(&rot))
}

/// Smallest order `n ∈ 1..=4` whose tensor has Frobenius norm above `tol`;
/// `None` means every order up to 4 vanishes (first nonzero order ≥ 5).
pub fn first_nonzero_multipole(m: &MultipoleSet, tol: f64) -> Result<Option<usize>> {
    if m.total_charge.abs() > NEUTRALITY_TOL {
        return Err(Error::InvalidInput(format!(
            "multipole set carries charge {}",
            m.total_charge
        )));
    }
    Ok((1..=4).find(|&n| m.order_norm(n) > tol))
}

/// Terms, partial sum and residuals of the expansion of `1/|L e₁ − h|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    /// `c_n` for `n = 0..=N`; the partial sum is `Σ c_n / L^(n+1)`.
    pub terms: Vec<f64>,
    pub order: usize,
    pub partial_sum: f64,
    pub exact: f64,
    /// `|exact − Σ_{k≤n} c_k / L^(k+1)|` for each `n = 0..=N`.
    pub residuals: Vec<f64>,
    /// Constant `C` of the bound `C (1 + |h|^(N+1)) / L^(N+2)`.
    pub bound_constant: f64,
    pub residual_bound: f64,
}

/// Constant of the residual bound. Every coefficient is `|h|ⁿ Pₙ(cos θ)` with
/// `|Pₙ| ≤ 1`, so the tail is at most `(|h|/L)^(N+1) / (L − |h|)`, which is
/// below `2 |h|^(N+1) / L^(N+2)` for `|h| ≤ L/2`.
pub const EXPANSION_BOUND_CONSTANT: f64 = 2.0;

/// The `n`-th coefficient of `1/|L e₁ − h|` in powers of `1/L`.
pub fn expansion_coefficient(h: &Vector3<f64>, n: usize) -> f64 {
    let a = h.x;
    let r2 = h.norm_squared();
    match n {
        0 => 1.0,
        1 => a,
        2 => (3.0 * a * a - r2) / 2.0,
        3 => (5.0 * a * a * a - 3.0 * a * r2) / 2.0,
        4 => (3.0 * r2 * r2 - 30.0 * a * a * r2 + 35.0 * a.powi(4)) / 8.0,
        5 => (15.0 * a * r2 * r2 - 70.0 * a.powi(3) * r2 + 63.0 * a.powi(5)) / 8.0,
        _ => f64::NAN,
    }
}

pub fn coulomb_expansion(h: &Vector3<f64>, l: f64, order: usize) -> Result<ExpansionReport> {
    if order > 5 {
        return Err(Error::InvalidInput(format!("order {order} exceeds 5")));
    }
    if !(l > 0.0) || !h.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("L must be positive and h finite".into()));
    }
    let hn = h.norm();
    if hn > l / 2.0 {
        return Err(Error::OutOfDomain(format!("|h| = {hn} exceeds L/2 = {}", l / 2.0)));
    }
    let exact = 1.0 / (Vector3::x() * l - h).norm();
    let terms: Vec<f64> = (0..=order).map(|n| expansion_coefficient(h, n)).collect();
    let partial: f64 = terms.iter().enumerate().map(|(n, c)| c / l.powi(n as i32 + 1)).sum();
    let residuals = tail_sums(h, l, order);
    let residual_bound =
        EXPANSION_BOUND_CONSTANT * (1.0 + hn.powi(order as i32 + 1)) / l.powi(order as i32 + 2);
    Ok(ExpansionReport {
        terms,
        order,
        partial_sum: partial,
        exact,
        residuals,
        bound_constant: EXPANSION_BOUND_CONSTANT,
        residual_bound,
    })
}

/// `|Σ_{k>n} c_k / L^(k+1)|` for `n = 0..=order`, summed from the small end
/// with the Legendre recurrence so that residuals far below the machine
/// epsilon of the exact value are still resolved.
fn tail_sums(h: &Vector3<f64>, l: f64, order: usize) -> Vec<f64> {
    let r = h.norm();
    if r == 0.0 {
        return vec![0.0; order + 1];
    }
    let c = h.x / r;
    let ratio = r / l;
    let mut terms = Vec::new();
    let (mut p_prev, mut p) = (1.0, c);
    terms.push(1.0 / l);
    let mut k = 1;
    let mut pow = ratio / l;
    loop {
        terms.push(pow * p);
        if k > order + 2 && pow < 1e-40 * terms[order + 1].abs().max(1e-300) || k >= 2000 {
            break;
        }
        let next = ((2 * k + 1) as f64 * c * p - k as f64 * p_prev) / (k + 1) as f64;
        p_prev = p;
        p = next;
        pow *= ratio;
        k += 1;
    }
    let mut out = vec![0.0; order + 1];
    let mut acc = 0.0;
    for j in (1..terms.len()).rev() {
        acc += terms[j];
        if j - 1 <= order {
            out[j - 1] = acc.abs();
        }
    }
    out
}

/// Double-double arithmetic for the pairwise Coulomb sum, so that the
/// oracle stays accurate when the interaction is many orders of magnitude
/// smaller than the individual pair terms.
#[derive(Clone, Copy, Debug)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        let e = (a - (s - bb)) + (b - bb);
        Dd { hi: s, lo: e }
    }

    fn quick(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd { hi: s, lo: b - (s - a) }
    }

    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, o.hi);
        let t = Dd::two_sum(self.lo, o.lo);
        let r = Dd::quick(s.hi, s.lo + t.hi);
        Dd::quick(r.hi, r.lo + t.lo)
    }

    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Dd::quick(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    fn recip(self) -> Dd {
        let y = Dd::new(1.0 / self.hi);
        let r = Dd::new(1.0).add(self.mul(y).neg());
        y.add(y.mul(r))
    }

    fn sqrt(self) -> Dd {
        let s = Dd::new(self.hi.sqrt());
        let r = self.add(s.mul(s).neg());
        s.add(Dd::new(r.hi / (2.0 * s.hi)))
    }
}

fn dd_matvec(m: &Matrix3<f64>, x: &[f64; 3]) -> [Dd; 3] {
    let mut out = [Dd::new(0.0); 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i] = out[i].add(Dd::new(m[(i, j)]).mul(Dd::new(x[j])));
        }
    }
    out
}

/// `Σᵢⱼ qᵢ q'ⱼ / |R₁ xᵢ + c₁ − R₂ yⱼ − c₂|` evaluated in double-double.
pub fn direct_coulomb_placed(
    dist1: &ChargeDistribution,
    r1: &Rotation,
    c1: &Vector3<f64>,
    dist2: &ChargeDistribution,
    r2: &Rotation,
    c2: &Vector3<f64>,
) -> Result<f64> {
    let m1 = r1.matrix();
    let m2 = r2.matrix();
    let a: Vec<[Dd; 3]> = dist1.points.iter().map(|p| dd_matvec(&m1, &p.x)).collect();
    let b: Vec<[Dd; 3]> = dist2.points.iter().map(|p| dd_matvec(&m2, &p.x)).collect();
    let mut total = Dd::new(0.0);
    for (pa, xa) in dist1.points.iter().zip(&a) {
        for (pb, yb) in dist2.points.iter().zip(&b) {
            let mut r2s = Dd::new(0.0);
            for k in 0..3 {
                let d = xa[k].add(yb[k].neg()).add(Dd::new(c1[k])).add(Dd::new(-c2[k]));
                r2s = r2s.add(d.mul(d));
            }
            if !(r2s.hi > 1e-24) {
                return Err(Error::Singularity(format!(
                    "points of '{}' and '{}' coincide",
                    dist1.label, dist2.label
                )));
            }
            let inv = r2s.sqrt().recip();
            total = total.add(Dd::new(pa.q).mul(Dd::new(pb.q)).mul(inv));
        }
    }
    Ok(total.hi + total.lo)
}

/// `Σᵢⱼ qᵢ q'ⱼ / |U xᵢ − V yⱼ − L e₁|`: molecule 2 sits at `+L e₁`.
pub fn direct_coulomb(
    dist1: &ChargeDistribution,
    dist2: &ChargeDistribution,
    u: &Rotation,
    v: &Rotation,
    l: f64,
) -> Result<f64> {
    direct_coulomb_placed(dist1, u, &Vector3::zeros(), dist2, v, &(Vector3::x() * l))
}
