#![allow(dead_code)]

use multipass::mountainpass::{random_orientations, DiscretePath, EnergySurface};
use multipass::toyquantum::{hermitian_eigen, random_hermitian, CMatrix, HermitianFamily};
use multipass::{ChargeDistribution, Config, PointCharge};
use multipass::so3::haar_sample;
use multipass::Rotation;
use nalgebra::{Complex, Matrix3, SymmetricEigen, Vector3};
use rand::Rng;

/// Neutral point charges in the unit ball; the last charge balances the rest.
pub fn random_neutral_distribution(rng: &mut impl Rng, count: usize) -> ChargeDistribution {
    let mut points = Vec::with_capacity(count);
    let mut total = 0.0;
    for k in 0..count {
        let x = loop {
            let p: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            if p.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
                break p;
            }
        };
        let q = if k + 1 == count { -total } else { rng.random_range(-1.0..1.0) };
        total += q;
        points.push(PointCharge::new(q, x));
    }
    ChargeDistribution::neutral("random", points).unwrap()
}

/// Path from `start` to `end` through random orientations whose separation
/// rises to `l_peak` in the middle.
pub fn wandering_path(
    surface: &EnergySurface,
    rng: &mut impl Rng,
    start: Config,
    end: Config,
    nodes: usize,
    l_peak: f64,
) -> DiscretePath {
    let mut out = vec![start];
    let base = start.l.max(end.l);
    for k in 1..nodes - 1 {
        let t = k as f64 / (nodes - 1) as f64;
        let bump = (std::f64::consts::PI * t).sin().powi(2);
        let jitter: f64 = rng.random_range(0.8..1.0);
        let (u, v) = random_orientations(rng);
        out.push(Config { l: base + (l_peak - base) * bump * jitter, u, v });
    }
    out.push(end);
    DiscretePath::new(surface, out).unwrap()
}

pub fn random_unitary(rng: &mut impl Rng, n: usize) -> CMatrix {
    let h = random_hermitian(rng, n);
    let (_, v) = hermitian_eigen(&h);
    v
}

/// `H(t) = W (A(t) ⊕ B(t)) W†`: the lowest level of the 2×2 block crosses
/// the rest at `t = crossing`.
pub fn crossing_family(rng: &mut impl Rng, n: usize, crossing: f64) -> HermitianFamily {
    let w = random_unitary(rng, n);
    let mut c0 = CMatrix::zeros(n, n);
    let mut c1 = CMatrix::zeros(n, n);
    c0[(0, 0)] = Complex::from(-crossing);
    c1[(0, 0)] = Complex::from(1.0);
    c0[(1, 1)] = Complex::from(crossing);
    c1[(1, 1)] = Complex::from(-1.0);
    for k in 2..n {
        c0[(k, k)] = Complex::from(1.0 + k as f64 * 0.2);
    }
    let conj = |m: &CMatrix| {
        let x = &w * m * w.adjoint();
        (&x + x.adjoint()) * Complex::from(0.5)
    };
    HermitianFamily::polynomial(vec![conj(&c0), conj(&c1)]).unwrap()
}

pub fn random_family(rng: &mut impl Rng, n: usize) -> HermitianFamily {
    let c0 = random_hermitian(rng, n);
    let c1 = random_hermitian(rng, n) * Complex::from(0.3);
    let c2 = random_hermitian(rng, n) * Complex::from(0.2);
    HermitianFamily::polynomial(vec![c0, c1, c2]).unwrap()
}

pub fn random_traceless(rng: &mut impl Rng) -> Matrix3<f64> {
    let mut m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    m = (m + m.transpose()) * 0.5;
    m - Matrix3::identity() * (m.trace() / 3.0)
}

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    haar_sample(rng).apply(&Vector3::x())
}

/// Eigenpairs in ascending or descending order with a right-handed basis.
pub fn sorted_eigen(m: &Matrix3<f64>, descending: bool) -> (Vector3<f64>, Matrix3<f64>) {
    let e = SymmetricEigen::new(*m);
    let mut idx = [0, 1, 2];
    idx.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]));
    if descending {
        idx.reverse();
    }
    let vals = Vector3::from_fn(|i, _| e.eigenvalues[idx[i]]);
    let mut vecs = Matrix3::from_fn(|r, c| e.eigenvectors[(r, idx[c])]);
    if vecs.determinant() < 0.0 {
        vecs.set_column(2, &(-vecs.column(2)));
    }
    (vals, vecs)
}

/// Compass search on `SO(3)` by right-multiplied axis steps, from `best` down to a step of 1e-9.
pub fn compass_min(f: impl Fn(&Rotation) -> f64, mut best: Rotation, mut best_f: f64) -> f64 {
    let mut step = 0.1;
    while step > 1e-9 {
        let mut moved = false;
        for k in 0..3 {
            for sign in [1.0, -1.0] {
                let trial = best * Rotation::exp(&(Vector3::ith(k, sign * step)));
                let ft = f(&trial);
                if ft < best_f {
                    best = trial;
                    best_f = ft;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best_f
}
