//! Directions `v` with `O(v, v, ·) = 0` and the non-degeneracy condition
//! `O(v, ·, ·) ≡ 0 ⟹ v = 0`.

use nalgebra::{Matrix3, Matrix3x2, SMatrix, Vector3};

use super::sphere::fibonacci_sphere;
use crate::error::{Error, Result};
use crate::linalg::{contract3_1, contract3_2, norm3, Tensor3};
use crate::so3::perpendicular;

/// Default relative tolerance of [`octopole_kernel_vectors`].
pub const KERNEL_TOL: f64 = 1e-8;

/// Default relative tolerance of [`check_octopole_nondegeneracy`].
pub const NONDEGENERACY_TOL: f64 = 1e-8;

const SCAN_POINTS: usize = 20_000;

/// Unit vectors `v` (one per antipodal pair) with `‖O(v,v,·)‖ ≤ tol·‖O‖`,
/// found by a dense sphere scan refined with Gauss-Newton steps in the
/// tangent plane. At most three such directions exist for a nonzero
/// symmetric traceless `O`; more indicates `O ≈ 0` or a loose `tol`.
pub fn octopole_kernel_vectors(o: &Tensor3, tol: f64) -> Result<Vec<Vector3<f64>>> {
    let scale = norm3(o);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidInput("octopole is zero or not finite".into()));
    }
    let residual = |v: &Vector3<f64>| contract3_2(o, v, v).norm();
    let grid = fibonacci_sphere(SCAN_POINTS);
    let mut scored: Vec<(f64, Vector3<f64>)> =
        grid.iter().filter(|p| p.z >= 0.0).map(|p| (residual(p), *p)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let cutoff = 0.05 * scale;
    let mut found: Vec<Vector3<f64>> = Vec::new();
    for (k, (r, start)) in scored.iter().enumerate() {
        if k >= 40 && *r > cutoff {
            break;
        }
        if found.iter().any(|f| f.dot(start).abs() > 0.999) {
            continue;
        }
        let v = gauss_newton(o, start);
        if residual(&v) <= tol * scale && !found.iter().any(|f| f.dot(&v).abs() > 1.0 - 1e-6) {
            found.push(canonical_sign(&v));
        }
    }
    if found.len() > 3 {
        return Err(Error::Precondition(format!(
            "{} non-parallel kernel directions found; the octopole is numerically zero or the tolerance is too loose",
            found.len()
        )));
    }
    found.sort_by(|a, b| {
        (0..3)
            .find(|&k| (a[k] - b[k]).abs() > 1e-9)
            .map_or(std::cmp::Ordering::Equal, |k| b[k].total_cmp(&a[k]))
    });
    Ok(found)
}

fn canonical_sign(v: &Vector3<f64>) -> Vector3<f64> {
    for k in 0..3 {
        if v[k].abs() > 1e-9 {
            return if v[k] < 0.0 { -v } else { *v };
        }
    }
    *v
}

fn gauss_newton(o: &Tensor3, start: &Vector3<f64>) -> Vector3<f64> {
    let mut v = *start;
    for _ in 0..60 {
        let r = contract3_2(o, &v, &v);
        let t1 = perpendicular(&v);
        let t2 = v.cross(&t1);
        let j_full = contract3_1(o, &v) * 2.0;
        let j = Matrix3x2::from_columns(&[j_full * t1, j_full * t2]);
        let jtj = j.transpose() * j;
        let Some(inv) = jtj.try_inverse() else {
            break;
        };
        let step = -(inv * j.transpose() * r);
        if !step.iter().all(|x| x.is_finite()) {
            break;
        }
        let next = (v + t1 * step[0] + t2 * step[1]).normalize();
        let done = step.norm() < 1e-15;
        v = next;
        if done {
            break;
        }
    }
    v
}

/// The 9×3 matrix of `v ↦ O(v, ·, ·)`.
pub fn octopole_matricization(o: &Tensor3) -> SMatrix<f64, 9, 3> {
    SMatrix::<f64, 9, 3>::from_fn(|row, i| o[i][row / 3][row % 3])
}

/// Whether `v ↦ O(v, ·, ·)` has trivial kernel: the smallest singular
/// value of the matricization exceeds `tol` times the largest.
pub fn check_octopole_nondegeneracy(o: &Tensor3, tol: f64) -> bool {
    let s = octopole_matricization(o).svd(false, false).singular_values;
    let max = s.max();
    let min = s.min();
    max > 0.0 && min > tol * max
}

/// `min` over kernel directions `v` of the spectral norm of `O(v, ·, ·)`;
/// `None` when there are no kernel directions.
pub fn kernel_operator_floor(o: &Tensor3, kernel: &[Vector3<f64>]) -> Option<f64> {
    kernel
        .iter()
        .map(|v| crate::linalg::sym_spectral_norm(&contract3_1(o, v)))
        .min_by(f64::total_cmp)
}

/// `(5 a⊗a⊗a − |a|² Σ a⊗I)/2`, a multiple of the traceless part of `a⊗a⊗a`.
pub fn axial_octopole(a: &Vector3<f64>) -> Tensor3 {
    let mut t = [[[0.0; 3]; 3]; 3];
    let r2 = a.norm_squared();
    let id = Matrix3::<f64>::identity();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                t[i][j][k] = 0.5
                    * (5.0 * a[i] * a[j] * a[k] - r2 * (a[i] * id[(j, k)] + a[j] * id[(i, k)] + a[k] * id[(i, j)]));
            }
        }
    }
    t
}
