//! Rotations, configurations `(L, U, V)`, geodesics, Haar sampling and
//! finite-difference Riemannian derivatives.
//!
//! Rotations are unit quaternions `[w, x, y, z]`. Tangent vectors are body
//! angular velocities: the geodesic through `U` with velocity `ω` is
//! `U·exp(t ω̂)`. Exponential coordinates are normal coordinates of the
//! bi-invariant metric, so central differences in them give the Riemannian
//! gradient and Hessian.

use std::fmt;
use std::str::FromStr;

use nalgebra::{
    DMatrix, DVector, Matrix3, Quaternion, Rotation3, SMatrix, SVector, UnitQuaternion, Vector3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default step of the central-difference derivatives (radians / length units).
pub const DEFAULT_FD_STEP: f64 = 1e-4;

const NORM_TOL: f64 = 1e-12;

/// An element of SO(3) stored as a unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds a rotation from quaternion components. Inputs whose norm is
    /// within 1e-6 of one are renormalized; anything else is rejected.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidRotation(format!(
                "quaternion norm {n} is not 1"
            )));
        }
        Ok(Rotation(UnitQuaternion::new_normalize(q)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Rotation(q)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !n.is_finite() || !angle.is_finite() {
            return Err(Error::InvalidRotation("axis must be a finite nonzero vector".into()));
        }
        Ok(Self::exp(&(axis * (angle / n))))
    }

    /// Group exponential of the skew matrix of `omega`.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        Rotation(UnitQuaternion::from_scaled_axis(*omega))
    }

    /// Rotation vector with angle in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        self.0.scaled_axis()
    }

    /// Validates orthogonality and `det = +1` within 1e-10.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidRotation("non-finite matrix entry".into()));
        }
        let defect = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if defect > 1e-10 || (det - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidRotation(format!(
                "orthogonality defect {defect:.3e}, determinant {det}"
            )));
        }
        Ok(Self::from_matrix_unchecked(m))
    }

    /// Converts a numerically orthogonal matrix without validation.
    pub(crate) fn from_matrix_unchecked(m: &Matrix3<f64>) -> Self {
        let r = Rotation3::from_matrix_unchecked(*m);
        Rotation(UnitQuaternion::from_rotation_matrix(&r))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.0.to_rotation_matrix().matrix()
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        self.0
    }

    /// Components `[w, x, y, z]`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.inverse())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn angle(&self) -> f64 {
        self.0.angle()
    }

    /// Geodesic distance, the rotation angle of `self⁻¹·other`.
    pub fn distance(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }

    /// Point at fraction `t` of the shortest geodesic from `self` to `other`.
    pub fn slerp(&self, other: &Rotation, t: f64) -> Self {
        let rel = (self.inverse() * *other).log();
        *self * Rotation::exp(&(rel * t))
    }

    /// Minimal rotation taking the direction of `a` to the direction of `b`.
    /// Antipodal inputs rotate by π about an arbitrary perpendicular axis.
    pub fn between(a: &Vector3<f64>, b: &Vector3<f64>) -> Self {
        let a = a.normalize();
        let b = b.normalize();
        let c = a.cross(&b);
        let s = c.norm();
        let d = a.dot(&b);
        if s < 1e-14 {
            if d > 0.0 {
                return Rotation::identity();
            }
            let axis = perpendicular(&a);
            return Rotation::exp(&(axis * std::f64::consts::PI));
        }
        Rotation::exp(&(c / s * s.atan2(d)))
    }

    /// Parses `[w,x,y,z]`, `w,x,y,z` or axis-angle sugar `ax:ay:az:theta`.
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.contains(':') {
            let parts: Vec<f64> = t
                .split(':')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidRotation(format!("axis-angle '{t}': {e}")))?;
            if parts.len() != 4 {
                return Err(Error::InvalidRotation(format!(
                    "axis-angle '{t}' needs four fields ax:ay:az:theta"
                )));
            }
            return Self::from_axis_angle(&Vector3::new(parts[0], parts[1], parts[2]), parts[3]);
        }
        let body = t.trim_start_matches('[').trim_end_matches(']');
        let parts: Vec<f64> = body
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidRotation(format!("quaternion '{t}': {e}")))?;
        if parts.len() != 4 {
            return Err(Error::InvalidRotation(format!(
                "quaternion '{t}' needs four components [w,x,y,z]"
            )));
        }
        Self::from_quaternion(parts[0], parts[1], parts[2], parts[3])
    }

    /// Deviation of the stored quaternion norm from one.
    pub fn norm_drift(&self) -> f64 {
        (self.0.quaternion().norm() - 1.0).abs()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        let q = self.0 * rhs.0;
        if (q.quaternion().norm() - 1.0).abs() > NORM_TOL {
            Rotation(UnitQuaternion::new_normalize(q.into_inner()))
        } else {
            Rotation(q)
        }
    }
}

impl fmt::Display for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.quaternion();
        write!(f, "[{w},{x},{y},{z}]")
    }
}

impl FromStr for Rotation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Rotation::parse(s)
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.quaternion().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        Rotation::from_quaternion(w, x, y, z).map_err(serde::de::Error::custom)
    }
}

/// Skew-symmetric matrix with `hat(ω)·x = ω × x`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rotation by `angle` about the lab `x` axis.
pub fn rot_x(angle: f64) -> Rotation {
    Rotation::exp(&(Vector3::x() * angle))
}

/// A unit vector perpendicular to `a`.
pub fn perpendicular(a: &Vector3<f64>) -> Vector3<f64> {
    let trial = if a.x.abs() < 0.6 {
        Vector3::x()
    } else if a.y.abs() < 0.6 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    (trial - a * a.dot(&trial)).normalize()
}

/// Separation and the two molecular orientations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "U")]
    pub u: Rotation,
    #[serde(rename = "V")]
    pub v: Rotation,
}

impl Config {
    pub fn new(l: f64, u: Rotation, v: Rotation) -> Result<Self> {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::OutOfDomain(format!("separation L = {l} must be positive")));
        }
        Ok(Config { l, u, v })
    }

    /// Product-metric distance with unit weights on `(dL, ωU, ωV)`.
    pub fn distance(&self, other: &Config) -> f64 {
        let dl = self.l - other.l;
        let du = self.u.distance(&other.u);
        let dv = self.v.distance(&other.v);
        (dl * dl + du * du + dv * dv).sqrt()
    }

    /// Point at fraction `t` of the product geodesic towards `other`.
    pub fn interpolate(&self, other: &Config, t: f64) -> Config {
        Config {
            l: self.l + t * (other.l - self.l),
            u: self.u.slerp(&other.u, t),
            v: self.v.slerp(&other.v, t),
        }
    }
}

/// Tangent vector at a configuration: `(dL, ωU, ωV)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent {
    pub dl: f64,
    pub wu: Vector3<f64>,
    pub wv: Vector3<f64>,
}

impl Tangent {
    pub fn zero() -> Self {
        Tangent { dl: 0.0, wu: Vector3::zeros(), wv: Vector3::zeros() }
    }

    pub fn from_vector(x: &SVector<f64, 7>) -> Self {
        Tangent {
            dl: x[0],
            wu: Vector3::new(x[1], x[2], x[3]),
            wv: Vector3::new(x[4], x[5], x[6]),
        }
    }

    pub fn to_vector(&self) -> SVector<f64, 7> {
        SVector::<f64, 7>::from_column_slice(&[
            self.dl, self.wu.x, self.wu.y, self.wu.z, self.wv.x, self.wv.y, self.wv.z,
        ])
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// `(L + t·dL, U·exp(t ω̂U), V·exp(t ω̂V))`.
pub fn geodesic(p: &Config, v: &Tangent, t: f64) -> Result<Config> {
    let l = p.l + t * v.dl;
    if !(l > 0.0) {
        return Err(Error::OutOfDomain(format!("geodesic leaves L > 0 (L = {l})")));
    }
    Ok(Config {
        l,
        u: p.u * Rotation::exp(&(v.wu * t)),
        v: p.v * Rotation::exp(&(v.wv * t)),
    })
}

fn checked(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Evaluation(format!("function returned {x}")))
    }
}

/// Central-difference gradient of `f` at the origin of `R^dim`.
pub(crate) fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, dim: usize, h: f64) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(dim);
    let mut x = DVector::zeros(dim);
    for k in 0..dim {
        x[k] = h;
        let fp = checked(f(&x))?;
        x[k] = -h;
        let fm = checked(f(&x))?;
        x[k] = 0.0;
        g[k] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Hessian of `f` at the origin of `R^dim`, symmetrized.
pub(crate) fn fd_hessian(f: impl Fn(&DVector<f64>) -> f64, dim: usize, h: f64) -> Result<DMatrix<f64>> {
    let mut hm = DMatrix::zeros(dim, dim);
    let mut x = DVector::zeros(dim);
    let f0 = checked(f(&x))?;
    for k in 0..dim {
        x[k] = h;
        let fp = checked(f(&x))?;
        x[k] = -h;
        let fm = checked(f(&x))?;
        x[k] = 0.0;
        hm[(k, k)] = (fp - 2.0 * f0 + fm) / (h * h);
    }
    for k in 0..dim {
        for l in (k + 1)..dim {
            let mut s = 0.0;
            for (sk, sl, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                x[k] = sk * h;
                x[l] = sl * h;
                s += w * checked(f(&x))?;
            }
            x[k] = 0.0;
            x[l] = 0.0;
            let v = s / (4.0 * h * h);
            hm[(k, l)] = v;
            hm[(l, k)] = v;
        }
    }
    Ok(hm)
}

/// Moves a configuration along exponential coordinates `(ξL, ξU, ξV)`.
pub fn retract_config(p: &Config, xi: &[f64]) -> Config {
    Config {
        l: p.l + xi[0],
        u: p.u * Rotation::exp(&Vector3::new(xi[1], xi[2], xi[3])),
        v: p.v * Rotation::exp(&Vector3::new(xi[4], xi[5], xi[6])),
    }
}

/// Moves a rotation pair along exponential coordinates `(ξU, ξV)`.
pub fn retract_pair(u: &Rotation, v: &Rotation, xi: &[f64]) -> (Rotation, Rotation) {
    (
        *u * Rotation::exp(&Vector3::new(xi[0], xi[1], xi[2])),
        *v * Rotation::exp(&Vector3::new(xi[3], xi[4], xi[5])),
    )
}

/// Riemannian gradient on `(0, ∞) × SO(3) × SO(3)` by central differences.
pub fn riem_grad(f: impl Fn(&Config) -> f64, p: &Config, h: f64) -> Result<Tangent> {
    check_step(h, p.l)?;
    let g = fd_gradient(|xi| f(&retract_config(p, xi.as_slice())), 7, h)?;
    Ok(Tangent::from_vector(&SVector::<f64, 7>::from_column_slice(g.as_slice())))
}

/// Riemannian Hessian on `(0, ∞) × SO(3) × SO(3)`, ordered `(L, ωU, ωV)`.
pub fn riem_hess(f: impl Fn(&Config) -> f64, p: &Config, h: f64) -> Result<SMatrix<f64, 7, 7>> {
    check_step(h, p.l)?;
    let hm = fd_hessian(|xi| f(&retract_config(p, xi.as_slice())), 7, h)?;
    Ok(SMatrix::<f64, 7, 7>::from_column_slice(hm.as_slice()))
}

/// The `(U, V)` block of a 7×7 configuration Hessian.
pub fn uv_block(h7: &SMatrix<f64, 7, 7>) -> SMatrix<f64, 6, 6> {
    h7.fixed_view::<6, 6>(1, 1).into_owned()
}

/// Riemannian gradient of a function on SO(3) × SO(3).
pub fn riem_grad_uv(
    f: impl Fn(&Rotation, &Rotation) -> f64,
    u: &Rotation,
    v: &Rotation,
    h: f64,
) -> Result<SVector<f64, 6>> {
    check_step(h, f64::INFINITY)?;
    let g = fd_gradient(
        |xi| {
            let (a, b) = retract_pair(u, v, xi.as_slice());
            f(&a, &b)
        },
        6,
        h,
    )?;
    Ok(SVector::<f64, 6>::from_column_slice(g.as_slice()))
}

/// Riemannian Hessian of a function on SO(3) × SO(3).
pub fn riem_hess_uv(
    f: impl Fn(&Rotation, &Rotation) -> f64,
    u: &Rotation,
    v: &Rotation,
    h: f64,
) -> Result<SMatrix<f64, 6, 6>> {
    check_step(h, f64::INFINITY)?;
    let hm = fd_hessian(
        |xi| {
            let (a, b) = retract_pair(u, v, xi.as_slice());
            f(&a, &b)
        },
        6,
        h,
    )?;
    Ok(SMatrix::<f64, 6, 6>::from_column_slice(hm.as_slice()))
}

fn check_step(h: f64, l: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("difference step h = {h} must be positive")));
    }
    if 2.0 * h >= l {
        return Err(Error::OutOfDomain(format!("step h = {h} too large for L = {l}")));
    }
    Ok(())
}

/// Deterministic generator used by every seeded routine.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Haar-uniform rotation via a uniform unit quaternion (Shoemake's method).
pub fn haar_sample<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let tau = std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = Quaternion::new(b * (tau * u3).cos(), a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin());
    Rotation(UnitQuaternion::new_normalize(q))
}

/// `count` Haar samples from a fresh generator seeded with `seed`.
pub fn haar_samples(seed: u64, count: usize) -> Vec<Rotation> {
    let mut rng = seeded_rng(seed);
    (0..count).map(|_| haar_sample(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_tangent_is_stationary() {
        let p = Config::new(3.0, haar_samples(1, 1)[0], haar_samples(2, 1)[0]).unwrap();
        let q = geodesic(&p, &Tangent::zero(), 5.0).unwrap();
        assert!(p.distance(&q) < 1e-14);
    }

    #[test]
    fn half_turn_about_z() {
        let p = Config::new(1.0, Rotation::identity(), Rotation::identity()).unwrap();
        let v = Tangent { dl: 0.0, wu: Vector3::new(0.0, 0.0, PI), wv: Vector3::zeros() };
        let q = geodesic(&p, &v, 1.0).unwrap();
        let expected = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!((q.u.matrix() - expected).abs().max() < 1e-12);
    }

    #[test]
    fn geodesic_composes() {
        let mut rng = seeded_rng(3);
        let p = Config::new(2.0, haar_sample(&mut rng), haar_sample(&mut rng)).unwrap();
        let v = Tangent { dl: 0.1, wu: Vector3::new(0.3, -1.2, 0.4), wv: Vector3::new(-0.7, 0.2, 0.9) };
        let (s, t) = (0.37, 1.41);
        let a = geodesic(&p, &v, s + t).unwrap();
        let b = geodesic(&geodesic(&p, &v, s).unwrap(), &v, t).unwrap();
        assert!(a.u.distance(&b.u) < 1e-10 && a.v.distance(&b.v) < 1e-10);
        assert!((a.l - b.l).abs() < 1e-12);
    }

    #[test]
    fn leaving_the_domain_is_an_error() {
        let p = Config::new(1.0, Rotation::identity(), Rotation::identity()).unwrap();
        let v = Tangent { dl: -1.0, ..Tangent::zero() };
        assert!(matches!(geodesic(&p, &v, 2.0), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn constant_function_has_zero_derivatives() {
        let p = Config::new(4.0, haar_samples(5, 1)[0], haar_samples(6, 1)[0]).unwrap();
        let g = riem_grad(|_| 3.5, &p, DEFAULT_FD_STEP).unwrap();
        let h = riem_hess(|_| 3.5, &p, DEFAULT_FD_STEP).unwrap();
        assert!(g.norm() == 0.0);
        assert!(h.abs().max() == 0.0);
    }

    #[test]
    fn gradient_of_a_height_function() {
        // f(U) = e1·U e1; its body gradient is -(U^T e1) × e1 direction.
        let u = haar_samples(9, 1)[0];
        let f = |a: &Rotation, _: &Rotation| Vector3::x().dot(&a.apply(&Vector3::x()));
        let g = riem_grad_uv(f, &u, &Rotation::identity(), DEFAULT_FD_STEP).unwrap();
        let s = u.inverse().apply(&Vector3::x());
        let exact = Vector3::x().cross(&s);
        let got = Vector3::new(g[0], g[1], g[2]);
        assert!((got - exact).norm() < 1e-8, "{got} vs {exact}");
    }

    #[test]
    fn non_finite_values_are_reported() {
        let p = Config::new(4.0, Rotation::identity(), Rotation::identity()).unwrap();
        assert!(matches!(riem_grad(|_| f64::NAN, &p, 1e-4), Err(Error::Evaluation(_))));
    }

    #[test]
    fn haar_is_reproducible_and_centered() {
        assert_eq!(haar_samples(42, 10), haar_samples(42, 10));
        let s = haar_samples(7, 100_000);
        let mean: Vector3<f64> = s.iter().map(|r| r.apply(&Vector3::x())).sum::<Vector3<f64>>() / s.len() as f64;
        assert!(mean.norm() <= 0.02);
    }

    #[test]
    fn parse_forms_agree() {
        let a = Rotation::parse("0:0:1:1.5707963267948966").unwrap();
        let b = Rotation::parse("[0.7071067811865476, 0, 0, 0.7071067811865476]").unwrap();
        assert!(a.distance(&b) < 1e-12);
        assert!(Rotation::parse("1,2").is_err());
        assert!(Rotation::parse("[2,0,0,0]").is_err());
    }

    #[test]
    fn between_maps_directions() {
        let mut rng = seeded_rng(11);
        for _ in 0..50 {
            let a = haar_sample(&mut rng).apply(&Vector3::x());
            let b = haar_sample(&mut rng).apply(&Vector3::y());
            let r = Rotation::between(&a, &b);
            assert!((r.apply(&a) - b).norm() < 1e-12);
            assert!((r.angle() - a.angle(&b)).abs() < 1e-10);
        }
        let r = Rotation::between(&Vector3::x(), &(-Vector3::x()));
        assert!((r.apply(&Vector3::x()) + Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn matrix_validation() {
        assert!(Rotation::from_matrix(&Matrix3::identity()).is_ok());
        assert!(Rotation::from_matrix(&(Matrix3::identity() * 1.1)).is_err());
        assert!(Rotation::from_matrix(&-Matrix3::identity()).is_err());
    }
}
