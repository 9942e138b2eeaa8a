//! Small dense helpers: ordered symmetric eigen-decompositions and the
//! 3-index / 4-index tensor storage used for octopoles and hexadecapoles.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

pub type Tensor3 = [[[f64; 3]; 3]; 3];
pub type Tensor4 = [[[[f64; 3]; 3]; 3]; 3];

pub fn zero3() -> Tensor3 {
    [[[0.0; 3]; 3]; 3]
}

pub fn zero4() -> Tensor4 {
    [[[[0.0; 3]; 3]; 3]; 3]
}

pub fn norm3(t: &Tensor3) -> f64 {
    t.iter().flatten().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm4(t: &Tensor4) -> f64 {
    t.iter().flatten().flatten().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// `O(a, b, ·)` as a vector.
pub fn contract3_2(t: &Tensor3, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let mut out = Vector3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let w = a[i] * b[j];
            if w != 0.0 {
                for k in 0..3 {
                    out[k] += w * t[i][j][k];
                }
            }
        }
    }
    out
}

/// `O(a, ·, ·)` as a matrix.
pub fn contract3_1(t: &Tensor3, a: &Vector3<f64>) -> Matrix3<f64> {
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[(j, k)] += a[i] * t[i][j][k];
            }
        }
    }
    out
}

/// Symmetric eigen-decomposition with eigenvalues ascending.
///
/// Eigenvectors are sign-normalized (first component above 1e-12 in modulus
/// is positive); within a numerically degenerate cluster they are ordered
/// lexicographically. The eigenvector matrix is completed to `det = +1` by
/// flipping the last column when needed.
pub fn sym_eigen_ascending(m: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    ordered_eigen(m, false)
}

/// Same as [`sym_eigen_ascending`] but with eigenvalues descending.
pub fn sym_eigen_descending(m: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    ordered_eigen(m, true)
}

fn ordered_eigen(m: &Matrix3<f64>, descending: bool) -> (Vector3<f64>, Matrix3<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.abs().max().max(1e-300);
    let mut items: Vec<(f64, Vector3<f64>)> = (0..3)
        .map(|i| (eig.eigenvalues[i], normalize_sign(&eig.eigenvectors.column(i).into_owned())))
        .collect();
    if descending {
        items.sort_by(|a, b| b.0.total_cmp(&a.0));
    } else {
        items.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let tol = 1e-12 * scale;
    let mut i = 0;
    while i < 3 {
        let mut j = i + 1;
        while j < 3 && (items[j].0 - items[i].0).abs() <= tol {
            j += 1;
        }
        items[i..j].sort_by(|a, b| lex_cmp(&a.1, &b.1));
        i = j;
    }
    let vals = Vector3::new(items[0].0, items[1].0, items[2].0);
    let mut vecs = Matrix3::from_columns(&[items[0].1, items[1].1, items[2].1]);
    if vecs.determinant() < 0.0 {
        let c = -vecs.column(2).into_owned();
        vecs.set_column(2, &c);
    }
    (vals, vecs)
}

fn normalize_sign(v: &Vector3<f64>) -> Vector3<f64> {
    for k in 0..3 {
        if v[k].abs() > 1e-12 {
            return if v[k] < 0.0 { -v } else { *v };
        }
    }
    *v
}

fn lex_cmp(a: &Vector3<f64>, b: &Vector3<f64>) -> std::cmp::Ordering {
    for k in 0..3 {
        match a[k].total_cmp(&b[k]) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &Matrix3<f64>) -> f64 {
    let (v, _) = sym_eigen_ascending(m);
    v[0].abs().max(v[2].abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_order_and_orientation() {
        let m = Matrix3::new(2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let (vals, vecs) = sym_eigen_ascending(&m);
        assert_eq!(vals, Vector3::new(-1.0, -1.0, 2.0));
        assert!((vecs.determinant() - 1.0).abs() < 1e-12);
        assert!((m * vecs - vecs * Matrix3::from_diagonal(&vals)).abs().max() < 1e-12);
        let (d, w) = sym_eigen_descending(&m);
        assert_eq!(d, Vector3::new(2.0, -1.0, -1.0));
        assert!((w.column(0).into_owned() - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn degenerate_ordering_is_deterministic() {
        let r = crate::so3::haar_samples(4, 1)[0].matrix();
        let m = r * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -2.0)) * r.transpose();
        let (a, va) = sym_eigen_ascending(&m);
        let (b, vb) = sym_eigen_ascending(&m.clone());
        assert_eq!(a, b);
        assert_eq!(va, vb);
    }
}
