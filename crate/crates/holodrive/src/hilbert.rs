//! Dense complex linear algebra and quantum-state bookkeeping.
//!
//! Conventions used throughout the crate:
//! - tensor factors are row-major: the leftmost factor varies slowest;
//! - Hamiltonians carry angular-frequency units (rad/us), times are in us;
//! - storage is dense; the largest production space here is a few hundred
//!   dimensions, where dense eigendecompositions are cheap and testable.

use ndarray::prelude::*;
use ndarray_linalg::{EigValsh, Eigh, UPLO};
pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// The imaginary unit.
pub const IM: C64 = C64::new(0.0, 1.0);

/// Max-entry tolerance for the Hermiticity check on flagged operators.
pub const OP_HERMITICITY_TOL: f64 = 1e-12;
/// Norm tolerance for kets that claim to be normalized.
pub const KET_NORM_TOL: f64 = 1e-12;
/// Hermiticity tolerance for density matrices.
pub const DM_HERMITICITY_TOL: f64 = 1e-10;
/// Trace tolerance for density matrices.
pub const DM_TRACE_TOL: f64 = 1e-8;
/// Smallest admissible density-matrix eigenvalue (numerical negativity floor).
pub const DM_MIN_EIGENVALUE: f64 = -1e-7;

/// Ordered tensor factorization of the working Hilbert space.
///
/// Factors are identified by unique labels; the leftmost factor is the
/// slowest-varying index of the flattened product space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertLayout {
    factors: Vec<(String, usize)>,
    total_dim: usize,
}

impl HilbertLayout {
    pub fn new(factors: Vec<(String, usize)>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidLayout("no factors".into()));
        }
        let mut total = 1usize;
        for (i, (label, dim)) in factors.iter().enumerate() {
            if *dim == 0 {
                return Err(Error::InvalidLayout(format!(
                    "factor `{label}` has dimension 0"
                )));
            }
            if factors[..i].iter().any(|(l, _)| l == label) {
                return Err(Error::InvalidLayout(format!("duplicate label `{label}`")));
            }
            total = total
                .checked_mul(*dim)
                .ok_or_else(|| Error::InvalidLayout("dimension overflow".into()))?;
        }
        Ok(Self {
            factors,
            total_dim: total,
        })
    }

    pub fn single(label: &str, dim: usize) -> Result<Self> {
        Self::new(vec![(label.to_string(), dim)])
    }

    /// Concatenates layouts left to right; labels must stay unique.
    pub fn concat(parts: &[&HilbertLayout]) -> Result<Self> {
        let mut factors = Vec::new();
        for p in parts {
            factors.extend(p.factors.iter().cloned());
        }
        Self::new(factors)
    }

    pub fn factors(&self) -> &[(String, usize)] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.total_dim
    }

    pub fn factor_index(&self, label: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|(l, _)| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Row-major stride of each factor in the flattened index.
    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.factors.len()];
        for k in (0..self.factors.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.factors[k + 1].1;
        }
        strides
    }
}

/// A state vector over a declared layout.
#[derive(Debug, Clone)]
pub struct Ket {
    layout: HilbertLayout,
    amplitudes: Array1<C64>,
}

impl Ket {
    pub fn new(layout: HilbertLayout, amplitudes: Array1<C64>) -> Result<Self> {
        if amplitudes.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                got: amplitudes.len(),
            });
        }
        if !amplitudes.iter().all(|z| z.is_finite()) {
            return Err(Error::InvalidParameter("non-finite amplitude".into()));
        }
        Ok(Self { layout, amplitudes })
    }

    /// Computational basis state `|index>`.
    pub fn basis(layout: HilbertLayout, index: usize) -> Result<Self> {
        if index >= layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                got: index,
            });
        }
        let mut amplitudes = Array1::zeros(layout.dim());
        amplitudes[index] = C64::new(1.0, 0.0);
        Ok(Self { layout, amplitudes })
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalized(&self) -> Result<Ket> {
        let n = self.norm();
        if n < 1e-300 {
            return Err(Error::NotNormalized { norm: n });
        }
        Ok(Ket {
            layout: self.layout.clone(),
            amplitudes: self.amplitudes.mapv(|z| z / n),
        })
    }

    /// Inner product `<self|other>`.
    pub fn inner(&self, other: &Ket) -> Result<C64> {
        check_same_layout(&self.layout, &other.layout)?;
        Ok(self
            .amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        DensityMatrix::from_ket(self)
    }
}

/// An operator over a declared layout. Hermitian-flagged instances are
/// validated to `OP_HERMITICITY_TOL` on construction.
#[derive(Debug, Clone)]
pub struct Op {
    layout: HilbertLayout,
    matrix: Array2<C64>,
    hermitian: bool,
}

impl Op {
    pub fn new(layout: HilbertLayout, matrix: Array2<C64>) -> Result<Self> {
        check_square(&layout, &matrix)?;
        Ok(Self {
            layout,
            matrix,
            hermitian: false,
        })
    }

    pub fn hermitian(layout: HilbertLayout, matrix: Array2<C64>) -> Result<Self> {
        check_square(&layout, &matrix)?;
        let dev = hermitian_deviation(&matrix);
        if dev > OP_HERMITICITY_TOL {
            return Err(Error::NotHermitian { max_dev: dev });
        }
        Ok(Self {
            layout,
            matrix,
            hermitian: true,
        })
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn apply(&self, ket: &Ket) -> Result<Ket> {
        check_same_layout(&self.layout, &ket.layout)?;
        Ket::new(self.layout.clone(), self.matrix.dot(&ket.amplitudes))
    }
}

/// A density matrix over a declared layout; `new` enforces Hermiticity,
/// unit trace, and spectral positivity up to the documented floors.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    layout: HilbertLayout,
    matrix: Array2<C64>,
}

impl DensityMatrix {
    pub fn new(layout: HilbertLayout, matrix: Array2<C64>) -> Result<Self> {
        check_square(&layout, &matrix)?;
        let dev = hermitian_deviation(&matrix);
        if dev > DM_HERMITICITY_TOL {
            return Err(Error::InvalidDensity(format!(
                "hermiticity deviation {dev:.3e}"
            )));
        }
        let tr = trace_of(&matrix);
        if (tr.re - 1.0).abs() > DM_TRACE_TOL {
            return Err(Error::InvalidDensity(format!("trace {:.10}", tr.re)));
        }
        let vals = hermitize(&matrix).eigvalsh(UPLO::Lower)?;
        if vals[0] < DM_MIN_EIGENVALUE {
            return Err(Error::InvalidDensity(format!(
                "minimum eigenvalue {:.3e}",
                vals[0]
            )));
        }
        Ok(Self { layout, matrix })
    }

    /// Pure state `|psi><psi|`; `psi` must be normalized.
    pub fn from_ket(psi: &Ket) -> Result<Self> {
        let n = psi.norm();
        if (n - 1.0).abs() > 1e-8 {
            return Err(Error::NotNormalized { norm: n });
        }
        let a = &psi.amplitudes;
        let d = a.len();
        let matrix = Array2::from_shape_fn((d, d), |(i, j)| a[i] * a[j].conj());
        Ok(Self {
            layout: psi.layout.clone(),
            matrix,
        })
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        trace_of(&self.matrix).re
    }

    /// `Re tr(rho^2)`; 1 exactly for pure states.
    pub fn purity(&self) -> f64 {
        self.matrix
            .iter()
            .zip(self.matrix.t().iter())
            .map(|(a, b)| (a * b).re)
            .sum()
    }
}

fn check_square(layout: &HilbertLayout, matrix: &Array2<C64>) -> Result<()> {
    let d = layout.dim();
    if matrix.nrows() != d || matrix.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: matrix.nrows().max(matrix.ncols()),
        });
    }
    Ok(())
}

fn check_same_layout(a: &HilbertLayout, b: &HilbertLayout) -> Result<()> {
    if a != b {
        return Err(Error::LayoutMismatch(format!(
            "{:?} vs {:?}",
            a.factors, b.factors
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Raw matrix utilities shared by every module.
// ---------------------------------------------------------------------------

/// Conjugate transpose.
pub fn dagger(m: &Array2<C64>) -> Array2<C64> {
    m.t().map(|z| z.conj())
}

pub fn trace_of(m: &Array2<C64>) -> C64 {
    m.diag().sum()
}

pub fn commutator(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    a.dot(b) - b.dot(a)
}

pub fn max_abs(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Largest entry of `m - m^dag`.
pub fn hermitian_deviation(m: &Array2<C64>) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Hermitian part `(m + m^dag) / 2`.
pub fn hermitize(m: &Array2<C64>) -> Array2<C64> {
    let md = dagger(m);
    (m + &md).mapv(|z| z * 0.5)
}

pub fn identity(dim: usize) -> Array2<C64> {
    Array2::eye(dim)
}

/// Bosonic annihilation operator on a truncated Fock space,
/// `a|n> = sqrt(n)|n-1>`.
pub fn destroy(dim: usize) -> Array2<C64> {
    let mut m = Array2::zeros((dim, dim));
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    m
}

pub fn create(dim: usize) -> Array2<C64> {
    dagger(&destroy(dim))
}

pub fn number(dim: usize) -> Array2<C64> {
    Array2::from_diag(&Array1::from_iter(
        (0..dim).map(|n| C64::new(n as f64, 0.0)),
    ))
}

pub fn sigma_x() -> Array2<C64> {
    array![
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
    ]
}

pub fn sigma_y() -> Array2<C64> {
    array![
        [C64::new(0.0, 0.0), C64::new(0.0, -1.0)],
        [C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
    ]
}

pub fn sigma_z() -> Array2<C64> {
    array![
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(-1.0, 0.0)],
    ]
}

/// Raising operator `|1><0|` in the index ordering `{|0>, |1>}`.
pub fn sigma_plus() -> Array2<C64> {
    array![
        [C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
    ]
}

pub fn sigma_minus() -> Array2<C64> {
    array![
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
    ]
}

/// Kronecker product; the left factor is the slowest-varying index.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            let mut block = out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            block.assign(&b.mapv(|x| aij * x));
        }
    }
    out
}

/// Tensor product of operators; the result layout concatenates the factor
/// layouts and the result is Hermitian-flagged iff every factor is.
pub fn tensor_ops(factors: &[Op]) -> Result<Op> {
    if factors.is_empty() {
        return Err(Error::Empty("tensor_ops".into()));
    }
    let layouts: Vec<&HilbertLayout> = factors.iter().map(|f| f.layout()).collect();
    let layout = HilbertLayout::concat(&layouts)?;
    let mut matrix = factors[0].matrix.clone();
    for f in &factors[1..] {
        matrix = kron(&matrix, &f.matrix);
    }
    let all_hermitian = factors.iter().all(|f| f.hermitian);
    if all_hermitian {
        Op::hermitian(layout, matrix)
    } else {
        Op::new(layout, matrix)
    }
}

/// Tensor product of kets; amplitude ordering follows the layouts.
pub fn tensor_kets(factors: &[Ket]) -> Result<Ket> {
    if factors.is_empty() {
        return Err(Error::Empty("tensor_kets".into()));
    }
    let layouts: Vec<&HilbertLayout> = factors.iter().map(|f| f.layout()).collect();
    let layout = HilbertLayout::concat(&layouts)?;
    let mut amps = factors[0].amplitudes.clone();
    for f in &factors[1..] {
        let mut next = Array1::zeros(amps.len() * f.amplitudes.len());
        for (i, &x) in amps.iter().enumerate() {
            for (j, &y) in f.amplitudes.iter().enumerate() {
                next[i * f.amplitudes.len() + j] = x * y;
            }
        }
        amps = next;
    }
    Ket::new(layout, amps)
}

// ---------------------------------------------------------------------------
// Eigendecomposition with degeneracy grouping.
// ---------------------------------------------------------------------------

/// One (possibly degenerate) eigenspace: representative eigenvalue plus an
/// orthonormal basis stored as matrix columns.
#[derive(Debug, Clone)]
pub struct EigSpace {
    pub value: f64,
    pub basis: Array2<C64>,
}

impl EigSpace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Orthogonal projector onto this eigenspace.
    pub fn projector(&self) -> Array2<C64> {
        self.basis.dot(&dagger(&self.basis))
    }
}

/// Full spectrum of a Hermitian operator, ascending, with eigenvalues closer
/// than the grouping tolerance merged into one eigenspace.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    pub spaces: Vec<EigSpace>,
}

impl Eigensystem {
    pub fn group_count(&self) -> usize {
        self.spaces.len()
    }

    /// `sum_n E_n P_n`; equals the input up to roundoff.
    pub fn reconstruct(&self) -> Array2<C64> {
        let d = self.values.len();
        let mut out = Array2::zeros((d, d));
        for s in &self.spaces {
            out = out + s.projector().mapv(|z| z * s.value);
        }
        out
    }
}

/// zheev-backed eigendecomposition returning eigenvectors as matrix columns:
/// the returned basis `B` satisfies `m = B diag(vals) B^dag`. For complex
/// row-major input the backend hands back the conjugated eigenvector matrix
/// in Fortran strides; this wrapper normalizes both.
fn eigh_cols(m: &Array2<C64>) -> Result<(Vec<f64>, Array2<C64>)> {
    let a = m.as_standard_layout().to_owned();
    let (vals, vecs) = a.eigh(UPLO::Lower)?;
    Ok((vals.to_vec(), vecs.mapv(|z| z.conj())))
}

/// Default degeneracy grouping tolerance: `1e-9 *` spectral range.
pub fn default_degeneracy_tol(values: &[f64]) -> f64 {
    match (values.first(), values.last()) {
        (Some(lo), Some(hi)) => 1e-9 * (hi - lo).abs(),
        _ => 0.0,
    }
}

/// Diagonalizes a Hermitian-flagged operator. Eigenvalues come out ascending;
/// neighbors within `degeneracy_tol` (default `1e-9 *` spectral range) are
/// grouped into a single eigenspace with an orthonormal basis.
pub fn eig_hermitian(h: &Op, degeneracy_tol: Option<f64>) -> Result<Eigensystem> {
    if !h.hermitian {
        return Err(Error::NotHermitian {
            max_dev: hermitian_deviation(&h.matrix),
        });
    }
    eig_hermitian_raw(&h.matrix, degeneracy_tol)
}

/// As `eig_hermitian`, for raw matrices already known to be Hermitian.
pub(crate) fn eig_hermitian_raw(
    m: &Array2<C64>,
    degeneracy_tol: Option<f64>,
) -> Result<Eigensystem> {
    let (values, vecs) = eigh_cols(m)?;
    let tol = degeneracy_tol.unwrap_or_else(|| default_degeneracy_tol(&values));
    let mut spaces = Vec::new();
    let n = values.len();
    let mut start = 0usize;
    for i in 1..=n {
        let boundary = i == n || (values[i] - values[i - 1]) > tol;
        if boundary {
            let members = &values[start..i];
            let value = members.iter().sum::<f64>() / members.len() as f64;
            let basis = vecs.slice(s![.., start..i]).to_owned();
            spaces.push(EigSpace { value, basis });
            start = i;
        }
    }
    Ok(Eigensystem { values, spaces })
}

// ---------------------------------------------------------------------------
// Propagators, fidelity, partial trace.
// ---------------------------------------------------------------------------

/// `exp(-i m dt)` for a raw Hermitian matrix, through its eigendecomposition.
pub fn expm_minus_i_h_dt(m: &Array2<C64>, dt: f64) -> Result<Array2<C64>> {
    let (vals, vecs) = eigh_cols(m)?;
    let mut phased = vecs.clone();
    for (k, mut col) in phased.columns_mut().into_iter().enumerate() {
        let phase = C64::from_polar(1.0, -vals[k] * dt);
        col.map_inplace(|z| *z *= phase);
    }
    Ok(phased.dot(&dagger(&vecs)))
}

/// Constant-Hamiltonian step propagator `exp(-i h dt)`.
pub fn propagator_step(h: &Op, dt: f64) -> Result<Op> {
    if !h.hermitian {
        return Err(Error::NotHermitian {
            max_dev: hermitian_deviation(&h.matrix),
        });
    }
    let u = expm_minus_i_h_dt(&h.matrix, dt)?;
    Op::new(h.layout.clone(), u)
}

/// `<psi|rho|psi>`, clamped to `[0, 1]` after discarding the imaginary
/// residue left by finite arithmetic.
pub fn state_fidelity(rho: &DensityMatrix, psi: &Ket) -> Result<f64> {
    check_same_layout(&rho.layout, &psi.layout)?;
    let n = psi.norm();
    if (n - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized { norm: n });
    }
    let v = rho.matrix.dot(&psi.amplitudes);
    let f: C64 = psi
        .amplitudes
        .iter()
        .zip(v.iter())
        .map(|(a, b)| a.conj() * b)
        .sum();
    Ok(f.re.clamp(0.0, 1.0))
}

/// `|<a|b>|^2` for normalized kets.
pub fn ket_fidelity(a: &Ket, b: &Ket) -> Result<f64> {
    Ok(a.inner(b)?.norm_sqr().clamp(0.0, 1.0))
}

/// Traces out every factor not listed in `keep`; the result layout keeps the
/// retained factors in their original order.
pub fn partial_trace(rho: &DensityMatrix, keep: &[&str]) -> Result<DensityMatrix> {
    if keep.is_empty() {
        return Err(Error::Empty("partial_trace keep set".into()));
    }
    let layout = &rho.layout;
    let mut keep_idx: Vec<usize> = Vec::new();
    for label in keep {
        let idx = layout.factor_index(label)?;
        if keep_idx.contains(&idx) {
            return Err(Error::InvalidLayout(format!(
                "label `{label}` listed twice in keep set"
            )));
        }
        keep_idx.push(idx);
    }
    keep_idx.sort_unstable();
    let trace_idx: Vec<usize> = (0..layout.factors.len())
        .filter(|k| !keep_idx.contains(k))
        .collect();

    let strides = layout.strides();
    let kept_factors: Vec<(String, usize)> = keep_idx
        .iter()
        .map(|&k| layout.factors[k].clone())
        .collect();
    let out_layout = HilbertLayout::new(kept_factors)?;
    let d_keep = out_layout.dim();
    let d_trace: usize = trace_idx.iter().map(|&k| layout.factors[k].1).product();

    // Flat offset of a multi-index running over the given factor subset.
    let offset = |flat: usize, subset: &[usize]| -> usize {
        let mut rem = flat;
        let mut off = 0usize;
        for &k in subset.iter().rev() {
            let d = layout.factors[k].1;
            off += (rem % d) * strides[k];
            rem /= d;
        }
        off
    };

    let mut out = Array2::zeros((d_keep, d_keep));
    for a in 0..d_keep {
        let ra = offset(a, &keep_idx);
        for b in 0..d_keep {
            let rb = offset(b, &keep_idx);
            let mut acc = C64::new(0.0, 0.0);
            for t in 0..d_trace {
                let rt = offset(t, &trace_idx);
                acc += rho.matrix[(ra + rt, rb + rt)];
            }
            out[(a, b)] = acc;
        }
    }
    DensityMatrix::new(out_layout, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn qubit(label: &str) -> HilbertLayout {
        HilbertLayout::single(label, 2).unwrap()
    }

    fn random_matrix(rng: &mut impl Rng, dim: usize) -> Array2<C64> {
        Array2::from_shape_fn((dim, dim), |_| {
            c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn random_hermitian(rng: &mut impl Rng, dim: usize) -> Array2<C64> {
        let m = random_matrix(rng, dim);
        hermitize(&m)
    }

    #[test]
    fn layout_rejects_duplicates_and_zero_dims() {
        assert!(HilbertLayout::new(vec![("a".into(), 2), ("a".into(), 3)]).is_err());
        assert!(HilbertLayout::new(vec![("a".into(), 0)]).is_err());
        assert!(HilbertLayout::new(vec![]).is_err());
        let l = HilbertLayout::new(vec![("a".into(), 2), ("b".into(), 3)]).unwrap();
        assert_eq!(l.dim(), 6);
        assert_eq!(l.factor_index("b").unwrap(), 1);
        assert!(l.factor_index("c").is_err());
    }

    #[test]
    fn tensor_sigma_z_with_identity() {
        let sz = Op::hermitian(qubit("q1"), sigma_z()).unwrap();
        let id = Op::hermitian(qubit("q2"), identity(2)).unwrap();
        let prod = tensor_ops(&[sz, id]).unwrap();
        let expect = Array2::from_diag(&array![c(1., 0.), c(1., 0.), c(-1., 0.), c(-1., 0.)]);
        assert!(max_abs_diff(prod.matrix(), &expect) == 0.0);
        assert!(prod.is_hermitian());
    }

    #[test]
    fn tensor_identity_with_identity() {
        let a = Op::hermitian(qubit("q1"), identity(2)).unwrap();
        let b = Op::hermitian(qubit("q2"), identity(2)).unwrap();
        let prod = tensor_ops(&[a, b]).unwrap();
        assert!(max_abs_diff(prod.matrix(), &identity(4)) == 0.0);
    }

    #[test]
    fn tensor_create_with_lowering() {
        // a^dag on a 3-level Fock space has entries (1,0) -> 1, (2,1) -> sqrt 2;
        // sigma_minus has the single entry (0,1) -> 1. The product's nonzeros,
        // enumerated by hand: (2,1) -> 1 and (4,3) -> sqrt 2.
        let fock = HilbertLayout::single("cav", 3).unwrap();
        let adag = Op::new(fock, create(3)).unwrap();
        let sm = Op::new(qubit("q"), sigma_minus()).unwrap();
        let prod = tensor_ops(&[adag, sm]).unwrap();
        let m = prod.matrix();
        let nonzeros: Vec<(usize, usize)> = m
            .indexed_iter()
            .filter(|(_, z)| z.norm() > 0.0)
            .map(|((i, j), _)| (i, j))
            .collect();
        assert_eq!(nonzeros, vec![(2, 1), (4, 3)]);
        assert_abs_diff_eq!(m[(2, 1)].re, 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(m[(4, 3)].re, 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn tensor_kets_product_state() {
        let zero = Ket::basis(qubit("q1"), 0).unwrap();
        let one = Ket::basis(qubit("q2"), 1).unwrap();
        let prod = tensor_kets(&[zero, one]).unwrap();
        assert_eq!(prod.amplitudes()[1], c(1.0, 0.0));
        assert_eq!(prod.norm(), 1.0);
    }

    #[test]
    fn eig_pauli_x_spectrum() {
        let sx = Op::hermitian(qubit("q"), sigma_x()).unwrap();
        let es = eig_hermitian(&sx, None).unwrap();
        assert_eq!(es.group_count(), 2);
        assert_abs_diff_eq!(es.spaces[0].value, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(es.spaces[1].value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eig_zero_matrix_single_group() {
        let layout = HilbertLayout::single("x", 4).unwrap();
        let z = Op::hermitian(layout, Array2::zeros((4, 4))).unwrap();
        let es = eig_hermitian(&z, None).unwrap();
        assert_eq!(es.group_count(), 1);
        assert_eq!(es.spaces[0].dim(), 4);
        assert_abs_diff_eq!(es.spaces[0].value, 0.0, epsilon = 0.0);
    }

    #[test]
    fn eig_single_coupled_row_spectrum() {
        // lambda (|0><u| + |u><0|) with unit |u> supported on indices {2, 3}
        // has spectrum {-lambda, 0, 0, +lambda}: the dark space is 2-dim.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let lambda = rng.gen_range(0.1..5.0);
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let u2 = c((theta / 2.0).sin(), 0.0) * C64::from_polar(1.0, -phi);
            let u3 = c((theta / 2.0).cos(), 0.0);
            let mut m = Array2::zeros((4, 4));
            m[(0, 2)] = u2.conj() * lambda;
            m[(0, 3)] = u3.conj() * lambda;
            m[(2, 0)] = u2 * lambda;
            m[(3, 0)] = u3 * lambda;
            let layout = HilbertLayout::single("dfs", 4).unwrap();
            let h = Op::hermitian(layout, m).unwrap();
            let es = eig_hermitian(&h, None).unwrap();
            assert_eq!(es.group_count(), 3);
            assert_abs_diff_eq!(es.spaces[0].value, -lambda, epsilon = 1e-12);
            assert_abs_diff_eq!(es.spaces[1].value, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(es.spaces[2].value, lambda, epsilon = 1e-12);
            assert_eq!(es.spaces[1].dim(), 2);
        }
    }

    #[test]
    fn eig_reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &dim in &[2usize, 5, 8] {
            for _ in 0..10 {
                let m = random_hermitian(&mut rng, dim);
                let layout = HilbertLayout::single("x", dim).unwrap();
                let h = Op::hermitian(layout, m.clone()).unwrap();
                let es = eig_hermitian(&h, None).unwrap();
                let err = max_abs_diff(&es.reconstruct(), &m);
                assert!(err <= 1e-10 * max_abs(&m).max(1.0));
                // Projectors resolve the identity and are mutually orthogonal.
                let mut sum = Array2::zeros((dim, dim));
                for s in &es.spaces {
                    sum = sum + s.projector();
                }
                assert!(max_abs_diff(&sum, &identity(dim)) <= 1e-10);
                for (i, si) in es.spaces.iter().enumerate() {
                    for sj in es.spaces.iter().skip(i + 1) {
                        let cross = dagger(&si.basis).dot(&sj.basis);
                            assert!(max_abs(&cross) <= 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn eig_rejects_unflagged_operator() {
        let layout = qubit("q");
        let m = array![[c(0., 0.), c(1., 0.)], [c(0., 0.), c(0., 0.)]];
        let op = Op::new(layout, m).unwrap();
        assert!(matches!(
            eig_hermitian(&op, None),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn propagator_of_zero_is_identity() {
        let layout = HilbertLayout::single("x", 3).unwrap();
        let h = Op::hermitian(layout, Array2::zeros((3, 3))).unwrap();
        let u = propagator_step(&h, 0.7).unwrap();
        assert!(max_abs_diff(u.matrix(), &identity(3)) <= 1e-15);
    }

    #[test]
    fn propagator_of_sigma_z() {
        let h = Op::hermitian(qubit("q"), sigma_z()).unwrap();
        let u = propagator_step(&h, std::f64::consts::FRAC_PI_2).unwrap();
        let expect = Array2::from_diag(&array![c(0., -1.), c(0., 1.)]);
        assert!(max_abs_diff(u.matrix(), &expect) <= 1e-12);
    }

    /// Scaling-and-squaring Taylor exponential, independent of the
    /// eigendecomposition path.
    fn expm_taylor(m: &Array2<C64>) -> Array2<C64> {
        let norm = max_abs(m) * m.nrows() as f64;
        let squarings = norm.log2().ceil().max(0.0) as u32 + 2;
        let scaled = m.mapv(|z| z / 2f64.powi(squarings as i32) as f64);
        let dim = m.nrows();
        let mut term = identity(dim);
        let mut acc = identity(dim);
        for k in 1..30 {
            term = term.dot(&scaled).mapv(|z| z / k as f64);
            acc = acc + &term;
        }
        for _ in 0..squarings {
            acc = acc.dot(&acc);
        }
        acc
    }

    #[test]
    fn propagator_matches_taylor_series_and_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let m = random_hermitian(&mut rng, 8);
        let layout = HilbertLayout::single("x", 8).unwrap();
        let h = Op::hermitian(layout, m.clone()).unwrap();
        let dt = 0.3;
        let u = propagator_step(&h, dt).unwrap();
        let ref_u = expm_taylor(&m.mapv(|z| z * c(0., -dt)));
        assert!(max_abs_diff(u.matrix(), &ref_u) <= 1e-10);
        let uu = dagger(u.matrix()).dot(u.matrix());
        assert!(max_abs_diff(&uu, &identity(8)) <= 1e-10);
    }

    #[test]
    fn propagator_semigroup_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let dim = rng.gen_range(2..7);
            let m = random_hermitian(&mut rng, dim);
            let layout = HilbertLayout::single("x", dim).unwrap();
            let h = Op::hermitian(layout, m).unwrap();
            let (t1, t2) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let u1 = propagator_step(&h, t1).unwrap();
            let u2 = propagator_step(&h, t2).unwrap();
            let u12 = propagator_step(&h, t1 + t2).unwrap();
            let err = max_abs_diff(&u1.matrix().dot(u2.matrix()), u12.matrix());
            assert!(err <= 1e-9, "semigroup violation {err:.3e}");
        }
    }

    #[test]
    fn fidelity_pure_orthogonal_and_mixed() {
        let layout = qubit("q");
        let psi = Ket::new(
            layout.clone(),
            array![c(1. / 2f64.sqrt(), 0.), c(0., 1. / 2f64.sqrt())],
        )
        .unwrap();
        let perp = Ket::new(
            layout.clone(),
            array![c(1. / 2f64.sqrt(), 0.), c(0., -1. / 2f64.sqrt())],
        )
        .unwrap();
        let rho = DensityMatrix::from_ket(&psi).unwrap();
        assert_abs_diff_eq!(state_fidelity(&rho, &psi).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(state_fidelity(&rho, &perp).unwrap(), 0.0, epsilon = 1e-12);
        let mixed =
            DensityMatrix::new(layout, identity(2).mapv(|z| z * 0.5)).unwrap();
        assert_abs_diff_eq!(state_fidelity(&mixed, &psi).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fidelity_rejects_layout_mismatch() {
        let psi = Ket::basis(qubit("a"), 0).unwrap();
        let rho = DensityMatrix::from_ket(&Ket::basis(qubit("b"), 0).unwrap()).unwrap();
        assert!(matches!(
            state_fidelity(&rho, &psi),
            Err(Error::LayoutMismatch(_))
        ));
    }

    #[test]
    fn partial_trace_bell_state() {
        let layout = HilbertLayout::new(vec![("qa".into(), 2), ("qb".into(), 2)]).unwrap();
        let r = 1.0 / 2f64.sqrt();
        let bell = Ket::new(layout, array![c(r, 0.), c(0., 0.), c(0., 0.), c(r, 0.)]).unwrap();
        let rho = DensityMatrix::from_ket(&bell).unwrap();
        let reduced = partial_trace(&rho, &["qa"]).unwrap();
        assert!(max_abs_diff(reduced.matrix(), &identity(2).mapv(|z| z * 0.5)) <= 1e-12);
        assert_eq!(reduced.layout().factors(), &[("qa".to_string(), 2)]);
    }

    #[test]
    fn partial_trace_product_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let a = random_matrix(&mut rng, 2);
        let rho_a = {
            let m = a.dot(&dagger(&a));
            let tr = trace_of(&m);
            m.mapv(|z| z / tr)
        };
        let b = random_matrix(&mut rng, 3);
        let rho_b = {
            let m = b.dot(&dagger(&b));
            let tr = trace_of(&m);
            m.mapv(|z| z / tr)
        };
        let layout = HilbertLayout::new(vec![("A".into(), 2), ("B".into(), 3)]).unwrap();
        let joint = DensityMatrix::new(layout, kron(&rho_a, &rho_b)).unwrap();
        let reduced = partial_trace(&joint, &["A"]).unwrap();
        assert!(max_abs_diff(reduced.matrix(), &rho_a) <= 1e-12);
    }

    #[test]
    fn partial_trace_matches_index_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..10 {
            let m = random_matrix(&mut rng, 4);
            let rho_m = {
                let p = m.dot(&dagger(&m));
                let tr = trace_of(&p);
                p.mapv(|z| z / tr)
            };
            let layout =
                HilbertLayout::new(vec![("q1".into(), 2), ("q2".into(), 2)]).unwrap();
            let rho = DensityMatrix::new(layout, rho_m.clone()).unwrap();
            let reduced = partial_trace(&rho, &["q2"]).unwrap();
            // Brute-force double sum over the first factor.
            let mut oracle = Array2::zeros((2, 2));
            for s in 0..2 {
                for t in 0..2 {
                    let mut acc = c(0., 0.);
                    for i in 0..2 {
                        acc += rho_m[(i * 2 + s, i * 2 + t)];
                    }
                    oracle[(s, t)] = acc;
                }
            }
            assert!(max_abs_diff(reduced.matrix(), &oracle) <= 1e-12);
            // Trace is preserved.
            assert_abs_diff_eq!(reduced.trace(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn partial_trace_rejects_unknown_label() {
        let rho = DensityMatrix::from_ket(&Ket::basis(qubit("q"), 0).unwrap()).unwrap();
        assert!(matches!(
            partial_trace(&rho, &["nope"]),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn density_matrix_validation() {
        let layout = qubit("q");
        // Non-unit trace.
        assert!(DensityMatrix::new(layout.clone(), identity(2)).is_err());
        // Negative eigenvalue.
        let neg = Array2::from_diag(&array![c(1.5, 0.), c(-0.5, 0.)]);
        assert!(matches!(
            DensityMatrix::new(layout.clone(), neg),
            Err(Error::InvalidDensity(_))
        ));
        // Non-Hermitian.
        let nh = array![[c(0.5, 0.), c(0.3, 0.)], [c(0., 0.), c(0.5, 0.)]];
        assert!(DensityMatrix::new(layout.clone(), nh).is_err());
        // Valid mixed state.
        let ok = Array2::from_diag(&array![c(0.25, 0.), c(0.75, 0.)]);
        let dm = DensityMatrix::new(layout, ok).unwrap();
        assert_abs_diff_eq!(dm.purity(), 0.625, epsilon = 1e-12);
    }

    #[test]
    fn op_hermitian_flag_validation() {
        let layout = qubit("q");
        let m = array![[c(0., 0.), c(1., 0.)], [c(0., 0.), c(0., 0.)]];
        assert!(matches!(
            Op::hermitian(layout, m),
            Err(Error::NotHermitian { .. })
        ));
    }

    fn arb_matrix(max_dim: usize) -> impl Strategy<Value = Array2<C64>> {
        (1..=max_dim).prop_flat_map(|n| {
            prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n * n).prop_map(move |xs| {
                Array2::from_shape_vec(
                    (n, n),
                    xs.into_iter().map(|(re, im)| C64::new(re, im)).collect(),
                )
                .unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kron_is_associative(
            a in arb_matrix(3),
            b in arb_matrix(3),
            m in arb_matrix(3),
        ) {
            let left = kron(&kron(&a, &b), &m);
            let right = kron(&a, &kron(&b, &m));
            prop_assert!(max_abs_diff(&left, &right) <= 1e-13);
        }

        #[test]
        fn kron_dimensions_multiply(a in arb_matrix(4), b in arb_matrix(4)) {
            let p = kron(&a, &b);
            prop_assert_eq!(p.nrows(), a.nrows() * b.nrows());
            prop_assert_eq!(p.ncols(), a.ncols() * b.ncols());
        }
    }
}
