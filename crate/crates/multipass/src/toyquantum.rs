//! Finite-dimensional stand-ins for the quantum objects behind the model:
//! the van der Waals correlation coefficient of two molecules, its
//! ground-space average, the three-body term of several molecules and the
//! construction of a continuous ground-state path along a Hermitian family.
//!
//! Restricted inverses are evaluated in the product eigenbasis of the
//! molecular Hamiltonians, where `Σ (Hₙ − Eₙ)` is diagonal and the ground
//! block is dropped.

use nalgebra::{Complex, DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mountainpass::CvdwModel;
use crate::so3::{haar_sample, seeded_rng, Rotation};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative eigenvalue tolerance defining a molecule's ground eigenspace.
pub const GROUND_TOL: f64 = 1e-10;

/// Relative tolerance for near-degenerate ground clusters along a family.
pub const CLUSTER_TOL: f64 = 1e-8;

/// Largest number of segments [`dress_path`] will use.
pub const MAX_SEGMENTS: usize = 1_000_000;

/// Dense complex matrix stored as rows of `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComplexMatrixRepr(pub Vec<Vec<[f64; 2]>>);

impl ComplexMatrixRepr {
    pub fn from_matrix(m: &CMatrix) -> Self {
        ComplexMatrixRepr((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect())
    }

    pub fn to_matrix(&self, field: &str) -> Result<CMatrix> {
        let n = self.0.len();
        if n == 0 {
            return Err(Error::InvalidInput(format!("{field}: empty matrix")));
        }
        for (i, row) in self.0.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidInput(format!("{field}: row {i} has {} entries, expected {n}", row.len())));
            }
        }
        let m = CMatrix::from_fn(n, n, |i, j| Complex::new(self.0[i][j][0], self.0[i][j][1]));
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput(format!("{field}: non-finite entry")));
        }
        Ok(m)
    }
}

fn op_norm_hermitian(m: &CMatrix) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn check_hermitian(m: &CMatrix, field: &str) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |a, z| a.max(z.norm())).max(1e-300);
    if (m - m.adjoint()).iter().any(|z| z.norm() > 1e-12 * scale) {
        return Err(Error::InvalidInput(format!("{field}: matrix is not Hermitian")));
    }
    Ok(())
}

/// Eigenvalues ascending with matching eigenvector columns.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new((m + m.adjoint()) * Complex::new(0.5, 0.0));
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ToyMoleculeFile {
    h: ComplexMatrixRepr,
    dipole: [ComplexMatrixRepr; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_multiplicity: Option<usize>,
}

/// A finite quantum system with Hamiltonian `h` and dipole operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ToyMoleculeFile", into = "ToyMoleculeFile")]
pub struct ToyMolecule {
    h: CMatrix,
    dipole: [CMatrix; 3],
    declared_multiplicity: Option<usize>,
    spectrum: Vec<f64>,
    eigenvectors: CMatrix,
    ground_dim: usize,
}

impl TryFrom<ToyMoleculeFile> for ToyMolecule {
    type Error = Error;

    fn try_from(f: ToyMoleculeFile) -> Result<Self> {
        let h = f.h.to_matrix("h")?;
        let dipole = [f.dipole[0].to_matrix("dipole[0]")?, f.dipole[1].to_matrix("dipole[1]")?, f.dipole[2].to_matrix("dipole[2]")?];
        ToyMolecule::with_multiplicity(h, dipole, f.ground_multiplicity)
    }
}

impl From<ToyMolecule> for ToyMoleculeFile {
    fn from(m: ToyMolecule) -> Self {
        ToyMoleculeFile {
            h: ComplexMatrixRepr::from_matrix(&m.h),
            dipole: [
                ComplexMatrixRepr::from_matrix(&m.dipole[0]),
                ComplexMatrixRepr::from_matrix(&m.dipole[1]),
                ComplexMatrixRepr::from_matrix(&m.dipole[2]),
            ],
            ground_multiplicity: m.declared_multiplicity,
        }
    }
}

impl ToyMolecule {
    /// Ground eigenspace taken as the eigenvalues within `GROUND_TOL·‖H‖`
    /// of the lowest one.
    pub fn new(h: CMatrix, dipole: [CMatrix; 3]) -> Result<Self> {
        Self::with_multiplicity(h, dipole, None)
    }

    /// With an explicitly declared ground multiplicity. A declaration that
    /// splits a degenerate level leaves no spectral gap and is rejected
    /// with [`Error::IllPosedResolvent`].
    pub fn with_multiplicity(h: CMatrix, dipole: [CMatrix; 3], multiplicity: Option<usize>) -> Result<Self> {
        let n = h.nrows();
        check_hermitian(&h, "h")?;
        for (k, d) in dipole.iter().enumerate() {
            if d.nrows() != n {
                return Err(Error::InvalidInput(format!("dipole[{k}] is {}×{}, expected {n}×{n}", d.nrows(), d.ncols())));
            }
            check_hermitian(d, &format!("dipole[{k}]"))?;
        }
        let (spectrum, eigenvectors) = hermitian_eigen(&h);
        let tol = GROUND_TOL * op_norm_hermitian(&h).max(1.0);
        let auto = spectrum.iter().take_while(|&&e| e - spectrum[0] <= tol).count();
        let ground_dim = match multiplicity {
            None => auto,
            Some(m) if m == 0 || m > n => {
                return Err(Error::InvalidInput(format!("ground multiplicity {m} outside 1..={n}")));
            }
            Some(m) if m < auto => {
                return Err(Error::IllPosedResolvent(format!(
                    "declared ground multiplicity {m} splits a level of multiplicity {auto}: zero spectral gap"
                )));
            }
            Some(m) if m > auto => {
                return Err(Error::InvalidInput(format!(
                    "declared ground multiplicity {m} exceeds the ground level's multiplicity {auto}"
                )));
            }
            Some(m) => m,
        };
        Ok(ToyMolecule { h, dipole, declared_multiplicity: multiplicity, spectrum, eigenvectors, ground_dim })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.h
    }

    pub fn dipole_ops(&self) -> &[CMatrix; 3] {
        &self.dipole
    }

    pub fn ground_energy(&self) -> f64 {
        self.spectrum[0]
    }

    pub fn ground_multiplicity(&self) -> usize {
        self.ground_dim
    }

    /// Distance from the ground level to the next eigenvalue; `None` when
    /// every state is a ground state.
    pub fn gap(&self) -> Option<f64> {
        self.spectrum.get(self.ground_dim).map(|e| e - self.spectrum[0])
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Orthonormal ground basis as columns.
    pub fn ground_basis(&self) -> CMatrix {
        self.eigenvectors.columns(0, self.ground_dim).into_owned()
    }

    pub fn ground_projector(&self) -> CMatrix {
        let b = self.ground_basis();
        &b * b.adjoint()
    }

    /// `H P = E₀ P`, `P² = P = P†` within `1e-10·‖H‖`.
    pub fn check_invariants(&self) -> Result<()> {
        let p = self.ground_projector();
        let scale = op_norm_hermitian(&self.h).max(1.0);
        let e0 = Complex::new(self.ground_energy(), 0.0);
        let checks = [
            ("H P = E0 P", (&self.h * &p - &p * e0).norm()),
            ("P² = P", (&p * &p - &p).norm() * scale),
            ("P = P†", (&p - p.adjoint()).norm() * scale),
        ];
        for (name, residual) in checks {
            if residual > 1e-10 * scale * (self.dim() as f64).sqrt() {
                return Err(Error::Evaluation(format!("{name} fails with residual {residual}")));
            }
        }
        Ok(())
    }

    /// Validates a caller-supplied ground state or returns the first ground
    /// basis vector.
    pub fn ground_state(&self, psi: Option<&CVector>) -> Result<CVector> {
        let Some(psi) = psi else {
            return Ok(self.eigenvectors.column(0).into_owned());
        };
        if psi.len() != self.dim() {
            return Err(Error::InvalidInput(format!("state has length {}, expected {}", psi.len(), self.dim())));
        }
        if (psi.norm() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidInput(format!("state has norm {}, expected 1", psi.norm())));
        }
        let outside = (psi - self.ground_projector() * psi).norm();
        if outside > 1e-8 {
            return Err(Error::Precondition(format!("state has weight {outside} outside the ground eigenspace")));
        }
        Ok(psi.clone())
    }

    /// `⟨ψ, D ψ⟩` in the molecule's frame.
    pub fn dipole_expectation(&self, psi: &CVector) -> Vector3<f64> {
        Vector3::from_fn(|k, _| psi.dotc(&(&self.dipole[k] * psi)).re)
    }

    /// Coordinates of `D_k ψ` in the eigenbasis, for `k = 0, 1, 2`.
    fn dipole_images(&self, psi: &CVector) -> [CVector; 3] {
        let vh = self.eigenvectors.adjoint();
        [&vh * (&self.dipole[0] * psi), &vh * (&self.dipole[1] * psi), &vh * (&self.dipole[2] * psi)]
    }

    fn excitation(&self, p: usize) -> f64 {
        self.spectrum[p] - self.spectrum[0]
    }
}

/// Coupling matrix `T` with `f = Σᵢⱼ Tᵢⱼ Dᵢ ⊗ Dⱼ` for molecules rotated by
/// `u`, `v` and separated along the unit `axis`:
/// `f = (U D)·(V D′) − 3 (axis·U D)(axis·V D′)`.
pub fn dipole_coupling(u: &Rotation, v: &Rotation, axis: &Vector3<f64>) -> Matrix3<f64> {
    let a = axis.normalize();
    u.matrix().transpose() * (Matrix3::identity() - a * a.transpose() * 3.0) * v.matrix()
}

/// `C_vdW` and the norm of the excited part of `f ψ₁⊗ψ₂`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvdwValue {
    pub value: f64,
    pub excited_norm: f64,
}

/// `⟨Π⊥ f ψ_a⊗ψ_b, (H_a + H_b − E_a − E_b)⁻¹ Π⊥ f ψ_a⊗ψ_b⟩` with the
/// molecules separated along `e₁`. States default to the first ground
/// basis vectors.
pub fn cvdw_pair(
    a: &ToyMolecule,
    b: &ToyMolecule,
    u: &Rotation,
    v: &Rotation,
    psi_a: Option<&CVector>,
    psi_b: Option<&CVector>,
) -> Result<CvdwValue> {
    let psi_a = a.ground_state(psi_a)?;
    let psi_b = b.ground_state(psi_b)?;
    Ok(cvdw_states(a, b, &dipole_coupling(u, v, &Vector3::x()), &psi_a, &psi_b))
}

fn cvdw_states(a: &ToyMolecule, b: &ToyMolecule, t: &Matrix3<f64>, psi_a: &CVector, psi_b: &CVector) -> CvdwValue {
    let da = a.dipole_images(psi_a);
    let db = b.dipole_images(psi_b);
    let mut value = 0.0;
    let mut excited = 0.0;
    for p in 0..a.dim() {
        for q in 0..b.dim() {
            if p < a.ground_dim && q < b.ground_dim {
                continue;
            }
            let mut phi = Complex::new(0.0, 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    phi += da[i][p] * db[j][q] * t[(i, j)];
                }
            }
            let w = phi.norm_sqr();
            excited += w;
            value += w / (a.excitation(p) + b.excitation(q));
        }
    }
    CvdwValue { value, excited_norm: excited.sqrt() }
}

/// Average of [`cvdw_pair`] over the orthonormal ground bases of both molecules.
pub fn cvdw_averaged(a: &ToyMolecule, b: &ToyMolecule, u: &Rotation, v: &Rotation) -> f64 {
    let t = dipole_coupling(u, v, &Vector3::x());
    let (ga, gb) = (a.ground_basis(), b.ground_basis());
    let mut total = 0.0;
    for i in 0..ga.ncols() {
        for j in 0..gb.ncols() {
            total += cvdw_states(a, b, &t, &ga.column(i).into_owned(), &gb.column(j).into_owned()).value;
        }
    }
    total / (ga.ncols() * gb.ncols()) as f64
}

/// The averaged coefficient as a model plug-in.
pub fn toy_cvdw_model(a: ToyMolecule, b: ToyMolecule) -> CvdwModel {
    CvdwModel::custom(move |u, v| cvdw_averaged(&a, &b, u, v))
}

/// `⟨ψ_a⊗ψ_b, f ψ_a⊗ψ_b⟩`, the dipole-dipole part of the multipolar energy.
pub fn interaction_expectation(a: &ToyMolecule, b: &ToyMolecule, u: &Rotation, v: &Rotation) -> f64 {
    let pa = a.dipole_expectation(&a.eigenvectors.column(0).into_owned());
    let pb = b.dipole_expectation(&b.eigenvectors.column(0).into_owned());
    pa.dot(&(dipole_coupling(u, v, &Vector3::x()) * pb))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityViolation {
    pub u: Rotation,
    pub v: Rotation,
    pub value: f64,
    pub excited_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub samples: usize,
    pub seed: u64,
    pub min_value: f64,
    pub min_excited_norm: f64,
    /// Samples where `f ψ⊗ψ` has no excited part, so `C_vdW` vanishes.
    pub violations: Vec<PositivityViolation>,
    /// Samples breaking `‖φ‖²/Δ_max ≤ C_vdW ≤ ‖φ‖²/Δ_min` for the excited
    /// part `φ`, which ties the sign of `C_vdW` to `φ ≠ 0`.
    pub bound_failures: usize,
}

/// Excited-part threshold separating positive from vanishing `C_vdW`.
pub const EXCITED_TOL: f64 = 1e-12;

/// Samples Haar-random orientations and records where `C_vdW` vanishes.
/// Violations are reported, not treated as errors.
pub fn check_vdw_positivity(a: &ToyMolecule, b: &ToyMolecule, samples: usize, seed: u64) -> PositivityReport {
    let mut rng = seeded_rng(seed);
    let pairs: Vec<(Rotation, Rotation)> = (0..samples).map(|_| (haar_sample(&mut rng), haar_sample(&mut rng))).collect();
    let psi_a = a.eigenvectors.column(0).into_owned();
    let psi_b = b.eigenvectors.column(0).into_owned();
    let values: Vec<CvdwValue> = pairs
        .par_iter()
        .map(|(u, v)| cvdw_states(a, b, &dipole_coupling(u, v, &Vector3::x()), &psi_a, &psi_b))
        .collect();
    let mut report = PositivityReport {
        samples,
        seed,
        min_value: f64::INFINITY,
        min_excited_norm: f64::INFINITY,
        violations: Vec::new(),
        bound_failures: 0,
    };
    let (min_den, max_den) = excitation_range(a, b);
    for ((u, v), c) in pairs.iter().zip(&values) {
        report.min_value = report.min_value.min(c.value);
        report.min_excited_norm = report.min_excited_norm.min(c.excited_norm);
        let w = c.excited_norm * c.excited_norm;
        if c.value < w / max_den * (1.0 - 1e-9) || c.value > w / min_den * (1.0 + 1e-9) {
            report.bound_failures += 1;
        }
        if c.excited_norm <= EXCITED_TOL {
            report.violations.push(PositivityViolation { u: *u, v: *v, value: c.value, excited_norm: c.excited_norm });
        }
    }
    report
}

/// Smallest and largest `(λ_p − E_a) + (μ_q − E_b)` off the ground block.
fn excitation_range(a: &ToyMolecule, b: &ToyMolecule) -> (f64, f64) {
    let min = a.gap().into_iter().chain(b.gap()).fold(f64::INFINITY, f64::min);
    let max = a.excitation(a.dim() - 1) + b.excitation(b.dim() - 1);
    (min, max)
}

/// A product state of several molecules in the product eigenbasis.
struct ProductSpace<'a> {
    molecules: &'a [&'a ToyMolecule],
    dims: Vec<usize>,
}

impl<'a> ProductSpace<'a> {
    fn new(molecules: &'a [&'a ToyMolecule]) -> Self {
        ProductSpace { molecules, dims: molecules.iter().map(|m| m.dim()).collect() }
    }

    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    fn indices(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for k in (0..self.dims.len()).rev() {
            idx[k] = flat % self.dims[k];
            flat /= self.dims[k];
        }
        idx
    }

    /// `f_st ⊗ 1 (⊗ₙ ψₙ)` with coupling `t` between molecules `s` and `t_index`.
    fn pair_image(&self, psis: &[CVector], s: usize, t_index: usize, t: &Matrix3<f64>) -> Vec<C64> {
        let images: Vec<[CVector; 3]> = self.molecules.iter().zip(psis).map(|(m, p)| m.dipole_images(p)).collect();
        let ground: Vec<CVector> = self.molecules.iter().zip(psis).map(|(m, p)| m.eigenvectors.adjoint() * p).collect();
        (0..self.len())
            .map(|flat| {
                let idx = self.indices(flat);
                let mut rest = Complex::new(1.0, 0.0);
                for (k, g) in ground.iter().enumerate() {
                    if k != s && k != t_index {
                        rest *= g[idx[k]];
                    }
                }
                let mut c = Complex::new(0.0, 0.0);
                for i in 0..3 {
                    for j in 0..3 {
                        c += images[s][i][idx[s]] * images[t_index][j][idx[t_index]] * t[(i, j)];
                    }
                }
                c * rest
            })
            .collect()
    }

    /// `R_S ⊗ 1` on a state: the restricted inverse of `Σ_{n∈S} (Hₙ − Eₙ)`.
    fn restricted_inverse(&self, subset: &[usize], x: &[C64]) -> Vec<C64> {
        (0..self.len())
            .map(|flat| {
                let idx = self.indices(flat);
                if subset.iter().all(|&k| idx[k] < self.molecules[k].ground_dim) {
                    return Complex::new(0.0, 0.0);
                }
                let denom: f64 = subset.iter().map(|&k| self.molecules[k].excitation(idx[k])).sum();
                x[flat] / denom
            })
            .collect()
    }
}

fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `W` evaluated with each admissible restricted inverse; the three agree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeBodyTerm {
    /// `[re, im]` with the pair inverse `R_ij`.
    pub via_ij: [f64; 2],
    pub via_ik: [f64; 2],
    pub via_ijk: [f64; 2],
}

impl ThreeBodyTerm {
    pub fn value(&self) -> C64 {
        Complex::new(self.via_ij[0], self.via_ij[1])
    }

    /// Largest pairwise disagreement between the three evaluations.
    pub fn spread(&self) -> f64 {
        let z = |a: [f64; 2]| Complex::new(a[0], a[1]);
        let (a, b, c) = (z(self.via_ij), z(self.via_ik), z(self.via_ijk));
        (a - b).norm().max((a - c).norm()).max((b - c).norm())
    }
}

/// `W = ⟨f_ik ψ, R f_ij ψ⟩` for molecule `i` interacting with `j` and `k`,
/// where `ψ = ψ_i⊗ψ_j⊗ψ_k` are the first ground basis vectors and
/// `axis_ij`, `axis_ik` are the unit directions from `i` to `j` and `k`.
pub fn three_body_w(
    molecules: [&ToyMolecule; 3],
    rotations: [&Rotation; 3],
    axis_ij: &Vector3<f64>,
    axis_ik: &Vector3<f64>,
) -> Result<ThreeBodyTerm> {
    for (name, axis) in [("axis_ij", axis_ij), ("axis_ik", axis_ik)] {
        if !((axis.norm() - 1.0).abs() < 1e-9) {
            return Err(Error::InvalidInput(format!("{name} must be a unit vector")));
        }
    }
    let mols: Vec<&ToyMolecule> = molecules.to_vec();
    let space = ProductSpace::new(&mols);
    let psis: Vec<CVector> = molecules.iter().map(|m| m.eigenvectors.column(0).into_owned()).collect();
    let f_ij = space.pair_image(&psis, 0, 1, &dipole_coupling(rotations[0], rotations[1], axis_ij));
    let f_ik = space.pair_image(&psis, 0, 2, &dipole_coupling(rotations[0], rotations[2], axis_ik));
    let via = |subset: &[usize]| {
        let z = inner(&f_ik, &space.restricted_inverse(subset, &f_ij));
        [z.re, z.im]
    };
    Ok(ThreeBodyTerm { via_ij: via(&[0, 1]), via_ik: via(&[0, 2]), via_ijk: via(&[0, 1, 2]) })
}

/// The full second-order correction of several molecules and its split
/// into two-body and three-body parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullCorrection {
    /// `−⟨F ψ, R F ψ⟩` with `F = Σ_{i<j} f_ij / L_ij³`.
    pub total: f64,
    /// `−Σ_{i<j} C_vdW(i, j) / L_ij⁶`.
    pub pairwise: f64,
    /// Cross terms between pairs sharing one molecule.
    pub three_body: f64,
    /// Cross terms between disjoint pairs; zero up to rounding.
    pub disjoint: f64,
}

/// Largest product dimension accepted by [`full_correction`].
pub const MAX_PRODUCT_DIM: usize = 1 << 14;

pub fn full_correction(molecules: &[ToyMolecule], rotations: &[Rotation], positions: &[Vector3<f64>]) -> Result<FullCorrection> {
    let k = molecules.len();
    if k < 2 || rotations.len() != k || positions.len() != k {
        return Err(Error::InvalidInput("need matching molecules, rotations and positions, at least two".into()));
    }
    let mols: Vec<&ToyMolecule> = molecules.iter().collect();
    let space = ProductSpace::new(&mols);
    if space.len() > MAX_PRODUCT_DIM {
        return Err(Error::InvalidInput(format!("product dimension {} exceeds {MAX_PRODUCT_DIM}", space.len())));
    }
    let psis: Vec<CVector> = molecules.iter().map(|m| m.eigenvectors.column(0).into_owned()).collect();
    let all: Vec<usize> = (0..k).collect();
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let d = positions[j] - positions[i];
            let l = d.norm();
            if !(l > 0.0) {
                return Err(Error::InvalidInput(format!("molecules {i} and {j} coincide")));
            }
            let t = dipole_coupling(&rotations[i], &rotations[j], &(d / l));
            let image: Vec<C64> = space.pair_image(&psis, i, j, &t).into_iter().map(|z| z / l.powi(3)).collect();
            let resolved = space.restricted_inverse(&all, &image);
            pairs.push(((i, j), image, resolved));
        }
    }
    let mut out = FullCorrection { total: 0.0, pairwise: 0.0, three_body: 0.0, disjoint: 0.0 };
    for (p, image_p, _) in &pairs {
        for (q, _, resolved_q) in &pairs {
            let term = -inner(image_p, resolved_q).re;
            let shared = [p.0, p.1].iter().filter(|x| **x == q.0 || **x == q.1).count();
            match shared {
                2 => out.pairwise += term,
                1 => out.three_body += term,
                _ => out.disjoint += term,
            }
            out.total += term;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FamilyFile {
    Polynomial { coefficients: Vec<ComplexMatrixRepr> },
    Samples { times: Vec<f64>, matrices: Vec<ComplexMatrixRepr> },
}

/// Continuous Hermitian family on `[0, 1]`: a polynomial `Σ tᵏ Cₖ` or the
/// piecewise-linear interpolation of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyFile", into = "FamilyFile")]
pub enum HermitianFamily {
    Polynomial(Vec<CMatrix>),
    Samples(Vec<f64>, Vec<CMatrix>),
}

impl TryFrom<FamilyFile> for HermitianFamily {
    type Error = Error;

    fn try_from(f: FamilyFile) -> Result<Self> {
        let convert = |ms: &[ComplexMatrixRepr], name: &str| -> Result<Vec<CMatrix>> {
            ms.iter().enumerate().map(|(k, m)| m.to_matrix(&format!("{name}[{k}]"))).collect()
        };
        match f {
            FamilyFile::Polynomial { coefficients } => HermitianFamily::polynomial(convert(&coefficients, "coefficients")?),
            FamilyFile::Samples { times, matrices } => HermitianFamily::samples(times, convert(&matrices, "matrices")?),
        }
    }
}

impl From<HermitianFamily> for FamilyFile {
    fn from(f: HermitianFamily) -> Self {
        let repr = |ms: &[CMatrix]| ms.iter().map(ComplexMatrixRepr::from_matrix).collect();
        match f {
            HermitianFamily::Polynomial(c) => FamilyFile::Polynomial { coefficients: repr(&c) },
            HermitianFamily::Samples(t, m) => FamilyFile::Samples { times: t, matrices: repr(&m) },
        }
    }
}

fn check_family_matrices(ms: &[CMatrix], name: &str) -> Result<()> {
    let Some(first) = ms.first() else {
        return Err(Error::InvalidInput(format!("{name}: no matrices")));
    };
    for (k, m) in ms.iter().enumerate() {
        if m.nrows() != first.nrows() {
            return Err(Error::InvalidInput(format!("{name}[{k}] has dimension {}, expected {}", m.nrows(), first.nrows())));
        }
        check_hermitian(m, &format!("{name}[{k}]"))?;
    }
    Ok(())
}

impl HermitianFamily {
    pub fn polynomial(coefficients: Vec<CMatrix>) -> Result<Self> {
        check_family_matrices(&coefficients, "coefficients")?;
        Ok(HermitianFamily::Polynomial(coefficients))
    }

    /// Samples at strictly increasing times from `0` to `1`.
    pub fn samples(times: Vec<f64>, matrices: Vec<CMatrix>) -> Result<Self> {
        check_family_matrices(&matrices, "matrices")?;
        if times.len() != matrices.len() || times.len() < 2 {
            return Err(Error::InvalidInput("need at least two samples with one time each".into()));
        }
        if times[0] != 0.0 || *times.last().unwrap() != 1.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("sample times must increase strictly from 0 to 1".into()));
        }
        Ok(HermitianFamily::Samples(times, matrices))
    }

    pub fn dim(&self) -> usize {
        match self {
            HermitianFamily::Polynomial(c) => c[0].nrows(),
            HermitianFamily::Samples(_, m) => m[0].nrows(),
        }
    }

    pub fn at(&self, t: f64) -> CMatrix {
        match self {
            HermitianFamily::Polynomial(c) => {
                let mut out = CMatrix::zeros(self.dim(), self.dim());
                for m in c.iter().rev() {
                    out = out * Complex::new(t, 0.0) + m;
                }
                out
            }
            HermitianFamily::Samples(times, m) => {
                let k = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1);
                let w = ((t - times[k - 1]) / (times[k] - times[k - 1])).clamp(0.0, 1.0);
                &m[k - 1] * Complex::new(1.0 - w, 0.0) + &m[k] * Complex::new(w, 0.0)
            }
        }
    }

    /// Bound on `‖H(t) − H(s)‖ / |t − s|` over `[0, 1]` in operator norm.
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            HermitianFamily::Polynomial(c) => c.iter().enumerate().skip(1).map(|(k, m)| k as f64 * op_norm_hermitian(m)).sum(),
            HermitianFamily::Samples(times, m) => (1..times.len())
                .map(|k| op_norm_hermitian(&(&m[k] - &m[k - 1])) / (times[k] - times[k - 1]))
                .fold(0.0, f64::max),
        }
    }

    /// Lowest eigenvalue and an orthonormal basis of its near-degenerate cluster.
    pub fn ground_cluster(&self, t: f64) -> (f64, CMatrix) {
        let h = self.at(t);
        let (values, vectors) = hermitian_eigen(&h);
        let tol = CLUSTER_TOL * values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        let r = values.iter().take_while(|&&e| e - values[0] <= tol).count();
        (values[0], vectors.columns(0, r).into_owned())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DressedNode {
    pub t: f64,
    /// Entries as `[re, im]`.
    pub state: Vec<[f64; 2]>,
    pub rayleigh: f64,
    pub ground_energy: f64,
    /// `⟨x, H(t_{k+1}) x⟩` for the segment containing the node.
    pub local_rayleigh: f64,
    pub segment: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DressedPath {
    pub nodes: Vec<DressedNode>,
    pub segments: usize,
    pub eps: f64,
    /// A priori bound `2·Lip/N` on the excess over `max E(t)`.
    pub excess_bound: f64,
    /// `max ⟨x, H x⟩ − max E` over the emitted nodes.
    pub observed_excess: f64,
    /// Whether `⟨x, H(t_{k+1}) x⟩` is non-increasing along every segment.
    pub locally_monotone: bool,
}

fn project(basis: &CMatrix, x: &CVector) -> CVector {
    basis * (basis.adjoint() * x)
}

fn phase_aligned(reference: &CVector, x: &CVector) -> (CVector, f64) {
    let overlap = reference.dotc(x);
    if overlap.norm() > 0.0 {
        let phase = overlap / overlap.norm();
        (x * phase.conj(), phase.arg())
    } else {
        (x.clone(), 0.0)
    }
}

/// Unit-norm path inside the span of `from`, `to` (both unit vectors of the
/// same eigenspace): a phase turn followed by a great-circle arc.
fn eigenspace_arc(from: &CVector, to: &CVector, s: f64) -> CVector {
    let (aligned, phase) = phase_aligned(from, to);
    // `aligned` has real nonnegative overlap with `from`.
    let cos = from.dotc(&aligned).re;
    let ortho = &aligned - from * from.dotc(&aligned);
    let sin = ortho.norm();
    let turned = if sin == 0.0 {
        from.clone()
    } else {
        let angle = sin.atan2(cos);
        let ortho = ortho / Complex::new(sin, 0.0);
        from * Complex::new((s * angle).cos(), 0.0) + ortho * Complex::new((s * angle).sin(), 0.0)
    };
    turned * Complex::from_polar(1.0, s * phase)
}

fn rayleigh(h: &CMatrix, x: &CVector) -> f64 {
    x.dotc(&(h * x)).re
}

/// Continuous unit-vector path from `x0` to `x1` whose energy exceeds the
/// ground energy of the family by at most `eps`. The parameter is split
/// into `N = ⌈2·Lip/eps⌉` segments; on each, the state first rotates onto
/// the next ground space and then moves inside it.
pub fn dress_path(fam: &HermitianFamily, x0: Option<&CVector>, x1: Option<&CVector>, eps: f64) -> Result<DressedPath> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps = {eps} must be positive")));
    }
    let lip = fam.lipschitz_bound();
    let needed = (2.0 * lip / eps).ceil().max(1.0);
    if needed > MAX_SEGMENTS as f64 {
        return Err(Error::ResolutionExceeded { achieved: 2.0 * lip / MAX_SEGMENTS as f64, requested: eps });
    }
    let n = needed as usize;
    let ground_vector = |t: f64, x: Option<&CVector>, name: &str| -> Result<CVector> {
        let (_, basis) = fam.ground_cluster(t);
        match x {
            None => Ok(basis.column(0).into_owned()),
            Some(x) => {
                if x.len() != fam.dim() || (x.norm() - 1.0).abs() > 1e-8 {
                    return Err(Error::InvalidInput(format!("{name} must be a unit vector of length {}", fam.dim())));
                }
                if (x - project(&basis, x)).norm() > 1e-6 {
                    return Err(Error::Precondition(format!("{name} is not a ground state of H({t})")));
                }
                Ok(x.clone())
            }
        }
    };
    let start = ground_vector(0.0, x0, "x0")?;
    let end = ground_vector(1.0, x1, "x1")?;

    let clusters: Vec<(f64, CMatrix)> = (0..=n).into_par_iter().map(|k| fam.ground_cluster(k as f64 / n as f64)).collect();
    let mut samples: Vec<(f64, CVector, usize)> = Vec::with_capacity(4 * n + 1);
    let mut x = start;
    for k in 0..n {
        let t0 = k as f64 / n as f64;
        let half = 0.5 / n as f64;
        let basis = &clusters[k + 1].1;
        let p = project(basis, &x);
        let p_norm = p.norm();
        let target_is_end = k + 1 == n;
        if p_norm < 1e-14 {
            // Quarter circle to a ground vector orthogonal to `x`.
            let next = if target_is_end { end.clone() } else { basis.column(0).into_owned() };
            for (j, s) in [0.0, 0.25, 0.5, 0.75].iter().enumerate() {
                let theta = std::f64::consts::FRAC_PI_2 * s;
                let y = &x * Complex::new(theta.cos(), 0.0) + &next * Complex::new(theta.sin(), 0.0);
                let y = &y / Complex::new(y.norm(), 0.0);
                samples.push((t0 + 0.5 * j as f64 / n as f64, y, k));
            }
            x = next;
            continue;
        }
        let y = &p / Complex::new(p_norm, 0.0);
        let rest = &x - &p;
        let rest = &rest - &y * y.dotc(&rest);
        let rest_norm = rest.norm();
        let z = if rest_norm > 1e-15 { &rest / Complex::new(rest_norm, 0.0) } else { CVector::zeros(x.len()) };
        let alpha = rest_norm.atan2(p_norm);
        for s in [0.0, 0.5] {
            let angle = alpha * (1.0 - s);
            let v = &y * Complex::new(angle.cos(), 0.0) + &z * Complex::new(angle.sin(), 0.0);
            let v_norm = v.norm();
            samples.push((t0 + s * half, v / Complex::new(v_norm, 0.0), k));
        }
        let next = if target_is_end { end.clone() } else { y.clone() };
        for s in [0.0, 0.5] {
            samples.push((t0 + half + s * half, eigenspace_arc(&y, &next, s), k));
        }
        x = next;
    }
    samples.push((1.0, x, n - 1));

    let nodes: Vec<DressedNode> = samples
        .par_iter()
        .map(|(t, v, k)| {
            let h = fam.at(*t);
            let (e, _) = fam.ground_cluster(*t);
            let local = rayleigh(&fam.at((*k + 1) as f64 / n as f64), v);
            DressedNode {
                t: *t,
                state: v.iter().map(|z| [z.re, z.im]).collect(),
                rayleigh: rayleigh(&h, v),
                ground_energy: e,
                local_rayleigh: local,
                segment: *k,
            }
        })
        .collect();
    let max_e = nodes.iter().map(|d| d.ground_energy).chain(clusters.iter().map(|c| c.0)).fold(f64::NEG_INFINITY, f64::max);
    let max_r = nodes.iter().map(|d| d.rayleigh).fold(f64::NEG_INFINITY, f64::max);
    let scale = lip.max(max_e.abs()).max(1.0);
    let locally_monotone = nodes
        .windows(2)
        .filter(|w| w[0].segment == w[1].segment)
        .all(|w| w[1].local_rayleigh <= w[0].local_rayleigh + 1e-12 * scale);
    Ok(DressedPath {
        nodes,
        segments: n,
        eps,
        excess_bound: 2.0 * lip / n as f64,
        observed_excess: max_r - max_e,
        locally_monotone,
    })
}

/// Random Hermitian matrix with independent Gaussian-like entries of unit scale.
pub fn random_hermitian(rng: &mut impl Rng, n: usize) -> CMatrix {
    let mut m = CMatrix::from_fn(n, n, |_, _| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    m = (&m + m.adjoint()) * Complex::new(0.5, 0.0);
    m
}

/// Generic molecule with random Hamiltonian and dipole operators.
pub fn random_molecule(rng: &mut impl Rng, n: usize) -> ToyMolecule {
    let h = random_hermitian(rng, n);
    let d = [random_hermitian(rng, n), random_hermitian(rng, n), random_hermitian(rng, n)];
    ToyMolecule::new(h, d).expect("random Hermitian input is valid")
}

/// Two-level molecule `diag(0, gap)` with dipole `Re(z) σₓ + Im(z) σ_y`
/// componentwise, so that `D e₀ = z e₁`.
pub fn two_level_molecule(gap: f64, z: [C64; 3]) -> ToyMolecule {
    let h = CMatrix::from_diagonal(&CVector::from_vec(vec![Complex::new(0.0, 0.0), Complex::new(gap, 0.0)]));
    let d = z.map(|c| CMatrix::from_row_slice(2, 2, &[Complex::new(0.0, 0.0), c.conj(), c, Complex::new(0.0, 0.0)]));
    ToyMolecule::new(h, d).expect("two-level input is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        Complex::new(re, im)
    }

    #[test]
    fn two_level_closed_form() {
        let za = [c(1.0, 0.5), c(-0.3, 0.2), c(0.7, -0.1)];
        let zb = [c(0.2, 0.9), c(0.4, 0.0), c(-0.5, 0.3)];
        let a = two_level_molecule(1.5, za);
        let b = two_level_molecule(0.7, zb);
        let mut rng = seeded_rng(1);
        for _ in 0..50 {
            let (u, v) = (haar_sample(&mut rng), haar_sample(&mut rng));
            let t = dipole_coupling(&u, &v, &Vector3::x());
            let mut amp = c(0.0, 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    amp += za[i] * zb[j] * t[(i, j)];
                }
            }
            let expected = amp.norm_sqr() / (1.5 + 0.7);
            let got = cvdw_pair(&a, &b, &u, &v, None, None).unwrap().value;
            assert!((got - expected).abs() < 1e-12, "{got} {expected}");
        }
    }

    #[test]
    fn zero_dipole_gives_zero() {
        let mut rng = seeded_rng(2);
        let a = ToyMolecule::new(random_hermitian(&mut rng, 3), [CMatrix::zeros(3, 3), CMatrix::zeros(3, 3), CMatrix::zeros(3, 3)]).unwrap();
        let b = random_molecule(&mut rng, 3);
        let r = cvdw_pair(&a, &b, &Rotation::identity(), &Rotation::identity(), None, None).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn invariants_hold_for_random_molecules() {
        let mut rng = seeded_rng(3);
        for n in 2..6 {
            let m = random_molecule(&mut rng, n);
            m.check_invariants().unwrap();
            assert!(m.gap().unwrap() > 0.0);
        }
    }

    #[test]
    fn splitting_a_degenerate_level_is_ill_posed() {
        let h = CMatrix::from_diagonal(&CVector::from_vec(vec![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]));
        let d = [CMatrix::identity(3, 3), CMatrix::identity(3, 3), CMatrix::identity(3, 3)];
        let err = ToyMolecule::with_multiplicity(h.clone(), d.clone(), Some(1)).unwrap_err();
        assert_eq!(err.kind(), "ill-posed-resolvent");
        assert_eq!(ToyMolecule::new(h, d).unwrap().ground_multiplicity(), 2);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = seeded_rng(4);
        let m = random_molecule(&mut rng, 3);
        let s = serde_json::to_string(&m).unwrap();
        let back: ToyMolecule = serde_json::from_str(&s).unwrap();
        assert_eq!(back.dim(), 3);
        assert!((back.hamiltonian() - m.hamiltonian()).norm() == 0.0);
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let mut h = CMatrix::identity(2, 2);
        h[(0, 1)] = c(1.0, 0.0);
        let d = [CMatrix::identity(2, 2), CMatrix::identity(2, 2), CMatrix::identity(2, 2)];
        assert_eq!(ToyMolecule::new(h, d).unwrap_err().kind(), "invalid-input");
    }

    #[test]
    fn constant_family_keeps_ground_energy() {
        let mut rng = seeded_rng(5);
        let h = random_hermitian(&mut rng, 4);
        let fam = HermitianFamily::polynomial(vec![h.clone()]).unwrap();
        let (e0, basis) = fam.ground_cluster(0.0);
        let x0 = basis.column(0).into_owned();
        let x1 = -&x0;
        let out = dress_path(&fam, Some(&x0), Some(&x1), 1e-3).unwrap();
        for node in &out.nodes {
            assert!((node.rayleigh - e0).abs() < 1e-12);
        }
        let last = out.nodes.last().unwrap();
        let end: Vec<[f64; 2]> = x1.iter().map(|z| [z.re, z.im]).collect();
        for (a, b) in last.state.iter().zip(&end) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn family_interpolation() {
        let a = CMatrix::identity(2, 2);
        let b = CMatrix::identity(2, 2) * c(3.0, 0.0);
        let fam = HermitianFamily::samples(vec![0.0, 1.0], vec![a, b]).unwrap();
        assert!((fam.at(0.5)[(0, 0)].re - 2.0).abs() < 1e-15);
        assert!((fam.lipschitz_bound() - 2.0).abs() < 1e-12);
        let poly = HermitianFamily::polynomial(vec![CMatrix::zeros(2, 2), CMatrix::identity(2, 2), CMatrix::identity(2, 2)]).unwrap();
        assert!((poly.at(0.5)[(1, 1)].re - 0.75).abs() < 1e-15);
        assert!((poly.lipschitz_bound() - 3.0).abs() < 1e-12);
    }
}
