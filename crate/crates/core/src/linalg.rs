//! Dense complex matrices, block-diagonal ambients and the hermitian
//! eigensolver everything else is built on.
//!
//! Block-diagonal elements of `M_{d1} ⊕ … ⊕ M_{dk}` are stored as one dense
//! matrix per block ([`BlockMatrix`]); `ℓ∞_m` is the shape `[1; m]`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Numerical tolerances shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    /// Eigenvalue floor relative to `max(1, ‖A‖)`.
    pub psd_tol: f64,
    pub bisect_tol: f64,
    /// Feasibility and duality-gap slack for conic certificates.
    pub feas_margin: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self {
            psd_tol: 1e-9,
            bisect_tol: 1e-7,
            feas_margin: 1e-7,
        }
    }
}

impl TolerancePolicy {
    /// Overrides every field with a single user tolerance (CLI `--tol`).
    pub fn uniform(tol: f64) -> Self {
        Self {
            psd_tol: tol.min(1e-9).max(tol * 1e-2),
            bisect_tol: tol,
            feas_margin: tol,
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct CMatrix(DMatrix<C64>);

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows(), self.cols())?;
        for i in 0..self.rows() {
            let row: Vec<String> = (0..self.cols())
                .map(|j| {
                    let z = self.get(i, j);
                    if z.im == 0.0 {
                        format!("{:.4}", z.re)
                    } else {
                        format!("{:.4}{:+.4}i", z.re, z.im)
                    }
                })
                .collect();
            writeln!(f, "  {}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::from_element(rows, cols, ZERO))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self(DMatrix::from_fn(rows, cols, f))
    }

    pub fn from_real(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        Self::from_fn(r, c, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn diag_real(d: &[f64]) -> Self {
        let n = d.len();
        Self::from_fn(n, n, |i, j| if i == j { C64::new(d[i], 0.0) } else { ZERO })
    }

    /// Matrix unit `E_{ij}` (zero-based indices).
    pub fn unit(n: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(n, n);
        m.set(i, j, ONE);
        m
    }

    pub fn from_nalgebra(m: DMatrix<C64>) -> Self {
        Self(m)
    }

    pub fn as_nalgebra(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, z: C64) {
        self.0[(i, j)] = z;
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn scale(&self, z: C64) -> Self {
        Self(&self.0 * z)
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Bilinear trace pairing `Tr(A B)`.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let mut acc = ZERO;
        for i in 0..self.rows() {
            for k in 0..self.cols() {
                acc += self.0[(i, k)] * other.0[(k, i)];
            }
        }
        acc
    }

    /// Real trace inner product `Re Tr(A* B)`.
    pub fn inner_re(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_real(&self) -> bool {
        self.0.iter().all(|z| z.im == 0.0)
    }

    pub fn hermitian_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        (&self.0 - self.0.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_asymmetry() <= tol * self.max_abs().max(1.0)
    }

    /// `(A + A*)/2` and `(A − A*)/(2i)`, both hermitian, with `A = H + iK`.
    pub fn hermitian_parts(&self) -> (Self, Self) {
        let adj = self.adjoint();
        let h = (self + &adj).scale_re(0.5);
        let k = (self - &adj).scale(C64::new(0.0, -0.5));
        (h, k)
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self(self.0.kronecker(&other.0))
    }

    pub fn direct_sum(&self, other: &Self) -> Self {
        let (r1, c1) = (self.rows(), self.cols());
        let mut out = Self::zeros(r1 + other.rows(), c1 + other.cols());
        out.0.view_mut((0, 0), (r1, c1)).copy_from(&self.0);
        out.0
            .view_mut((r1, c1), (other.rows(), other.cols()))
            .copy_from(&other.0);
        out
    }

    /// Writes `src` into the sub-block with top-left corner `(r, c)`.
    pub fn set_block(&mut self, r: usize, c: usize, src: &Self) {
        self.0.view_mut((r, c), (src.rows(), src.cols())).copy_from(&src.0);
    }

    pub fn block(&self, r: usize, c: usize, rows: usize, cols: usize) -> Self {
        Self(self.0.view((r, c), (rows, cols)).into_owned())
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.0[(i, j)] * v[j]).sum())
            .collect()
    }

    /// `v* A v`.
    pub fn quad_form(&self, v: &[C64]) -> C64 {
        let av = self.mul_vec(v);
        v.iter().zip(av.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    /// Spectral norm, from the hermitian dilation `[[0, A], [A*, 0]]`.
    pub fn spectral_norm(&self) -> f64 {
        if self.rows() == 0 || self.cols() == 0 {
            return 0.0;
        }
        if self.is_square() && self.hermitian_asymmetry() == 0.0 {
            let ev = eigenvalues_unchecked(self);
            return ev.iter().map(|x| x.abs()).fold(0.0, f64::max);
        }
        let (r, c) = (self.rows(), self.cols());
        let mut dil = Self::zeros(r + c, r + c);
        dil.set_block(0, r, self);
        dil.set_block(r, 0, &self.adjoint());
        eigenvalues_unchecked(&dil).first().copied().unwrap_or(0.0).max(0.0)
    }

    /// Real symmetric embedding `[[Re A, −Im A], [Im A, Re A]]`.
    pub fn real_embedding(&self) -> DMatrix<f64> {
        let n = self.rows();
        let m = self.cols();
        DMatrix::from_fn(2 * n, 2 * m, |i, j| {
            let z = self.0[(i % n, j % m)];
            match (i < n, j < m) {
                (true, true) | (false, false) => z.re,
                (true, false) => -z.im,
                (false, true) => z.im,
            }
        })
    }

    pub fn real_part(&self) -> DMatrix<f64> {
        self.0.map(|z| z.re)
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        CMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        CMatrix(&self.0 - &rhs.0)
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        CMatrix(&self.0 * &rhs.0)
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        CMatrix(-&self.0)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixWire {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for CMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = |f: fn(&C64) -> f64| -> Vec<Vec<f64>> {
            (0..self.rows())
                .map(|i| (0..self.cols()).map(|j| f(&self.0[(i, j)])).collect())
                .collect()
        };
        MatrixWire {
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = MatrixWire::deserialize(d)?;
        let r = w.re.len();
        let c = w.re.first().map_or(0, Vec::len);
        if w.im.len() != r || w.re.iter().chain(w.im.iter()).any(|row| row.len() != c) {
            return Err(D::Error::custom("re/im arrays must be rectangular and equal-sized"));
        }
        Ok(CMatrix::from_fn(r, c, |i, j| C64::new(w.re[i][j], w.im[i][j])))
    }
}

/// Block sizes `d1..dk` of the ambient `M_{d1} ⊕ … ⊕ M_{dk}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockShape(pub Vec<usize>);

impl BlockShape {
    pub fn new(blocks: Vec<usize>) -> Result<Self> {
        if blocks.is_empty() || blocks.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "block sizes must be a non-empty list of positive integers, got {blocks:?}"
            )));
        }
        Ok(Self(blocks))
    }

    /// `ℓ∞_m`.
    pub fn diagonal(m: usize) -> Self {
        Self(vec![1; m])
    }

    pub fn blocks(&self) -> &[usize] {
        &self.0
    }

    pub fn total_dim(&self) -> usize {
        self.0.iter().sum()
    }

    /// Dimension of the ambient algebra `Σ dᵢ²`.
    pub fn algebra_dim(&self) -> usize {
        self.0.iter().map(|d| d * d).sum()
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self(
            self.0
                .iter()
                .flat_map(|a| other.0.iter().map(move |b| a * b))
                .collect(),
        )
    }

    /// Shape of `M_n(A)` after the canonical reshuffle `M_n(⊕ M_d) ≅ ⊕ M_{nd}`.
    pub fn inflate(&self, n: usize) -> Self {
        Self(self.0.iter().map(|d| d * n).collect())
    }

    /// Matrix units of every block: a basis of the full ambient algebra.
    pub fn matrix_units(&self) -> Vec<BlockMatrix> {
        let mut out = Vec::new();
        for (b, &d) in self.0.iter().enumerate() {
            for i in 0..d {
                for j in 0..d {
                    let mut m = BlockMatrix::zeros(self);
                    m.blocks[b].set(i, j, ONE);
                    out.push(m);
                }
            }
        }
        out
    }

    /// Orthonormal hermitian basis of the hermitian part of the ambient algebra.
    pub fn hermitian_units(&self) -> Vec<BlockMatrix> {
        let mut out = Vec::new();
        for (b, &d) in self.0.iter().enumerate() {
            for h in hermitian_basis(d) {
                let mut m = BlockMatrix::zeros(self);
                m.blocks[b] = h;
                out.push(m);
            }
        }
        out
    }
}

/// Orthonormal (trace inner product) hermitian basis of `M_d`:
/// `E_ii`, `(E_ij + E_ji)/√2`, `i(E_ij − E_ji)/√2`.
pub fn hermitian_basis(d: usize) -> Vec<CMatrix> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        out.push(CMatrix::unit(d, i, i));
    }
    for i in 0..d {
        for j in i + 1..d {
            let mut a = CMatrix::zeros(d, d);
            a.set(i, j, C64::new(s, 0.0));
            a.set(j, i, C64::new(s, 0.0));
            out.push(a);
            let mut b = CMatrix::zeros(d, d);
            b.set(i, j, C64::new(0.0, s));
            b.set(j, i, C64::new(0.0, -s));
            out.push(b);
        }
    }
    out
}

/// Element of a block-diagonal ambient, one dense matrix per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockMatrix {
    pub blocks: Vec<CMatrix>,
}

impl BlockMatrix {
    pub fn zeros(shape: &BlockShape) -> Self {
        Self {
            blocks: shape.0.iter().map(|&d| CMatrix::zeros(d, d)).collect(),
        }
    }

    pub fn identity(shape: &BlockShape) -> Self {
        Self {
            blocks: shape.0.iter().map(|&d| CMatrix::identity(d)).collect(),
        }
    }

    pub fn from_blocks(blocks: Vec<CMatrix>) -> Self {
        Self { blocks }
    }

    /// Diagonal element of `ℓ∞_m`.
    pub fn diagonal(entries: &[f64]) -> Self {
        Self {
            blocks: entries
                .iter()
                .map(|&x| CMatrix::from_fn(1, 1, |_, _| C64::new(x, 0.0)))
                .collect(),
        }
    }

    pub fn single(m: CMatrix) -> Self {
        Self { blocks: vec![m] }
    }

    pub fn shape(&self) -> BlockShape {
        BlockShape(self.blocks.iter().map(CMatrix::rows).collect())
    }

    pub fn matches(&self, shape: &BlockShape) -> bool {
        self.blocks.len() == shape.0.len()
            && self
                .blocks
                .iter()
                .zip(shape.0.iter())
                .all(|(b, &d)| b.rows() == d && b.cols() == d)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(&CMatrix, &CMatrix) -> CMatrix) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .zip(other.blocks.iter())
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, z: C64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b.scale(z)).collect(),
        }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// `self + z·other`.
    pub fn axpy(&self, z: C64, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + &b.scale(z))
    }

    pub fn adjoint(&self) -> Self {
        Self {
            blocks: self.blocks.iter().map(CMatrix::adjoint).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        self.blocks.iter().map(CMatrix::trace).sum()
    }

    pub fn trace_product(&self, other: &Self) -> C64 {
        self.blocks
            .iter()
            .zip(other.blocks.iter())
            .map(|(a, b)| a.trace_product(b))
            .sum()
    }

    pub fn inner_re(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(other.blocks.iter())
            .map(|(a, b)| a.inner_re(b))
            .sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.inner_re(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(CMatrix::max_abs).fold(0.0, f64::max)
    }

    pub fn spectral_norm(&self) -> f64 {
        self.blocks.iter().map(CMatrix::spectral_norm).fold(0.0, f64::max)
    }

    pub fn hermitian_asymmetry(&self) -> f64 {
        self.blocks
            .iter()
            .map(CMatrix::hermitian_asymmetry)
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_asymmetry() <= tol * self.max_abs().max(1.0)
    }

    pub fn hermitian_parts(&self) -> (Self, Self) {
        let (h, k): (Vec<_>, Vec<_>) = self.blocks.iter().map(CMatrix::hermitian_parts).unzip();
        (Self { blocks: h }, Self { blocks: k })
    }

    /// Blockwise Kronecker product; block order `(i, j) ↦ i·k' + j`.
    pub fn kron(&self, other: &Self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .flat_map(|a| other.blocks.iter().map(move |b| a.kron(b)))
                .collect(),
        }
    }

    /// The dense block-diagonal matrix.
    pub fn to_dense(&self) -> CMatrix {
        let n: usize = self.blocks.iter().map(CMatrix::rows).sum();
        let mut out = CMatrix::zeros(n, n);
        let mut off = 0;
        for b in &self.blocks {
            out.set_block(off, off, b);
            off += b.rows();
        }
        out
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let mut lo = f64::INFINITY;
        for b in &self.blocks {
            let ev = eig_hermitian(b)?.values;
            if let Some(&m) = ev.last() {
                lo = lo.min(m);
            }
        }
        Ok(lo)
    }

    pub fn is_psd(&self, tol: &TolerancePolicy) -> Result<bool> {
        for b in &self.blocks {
            if !is_psd(b, tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

impl fmt::Display for BlockMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .blocks
            .iter()
            .map(|b| {
                if b.rows() == 1 {
                    let z = b.get(0, 0);
                    if z.im == 0.0 {
                        format!("{}", z.re)
                    } else {
                        format!("{z}")
                    }
                } else {
                    format!("{b:?}")
                }
            })
            .collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// Spectral decomposition `A = V diag(λ) V*`, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEig {
    pub fn vector(&self, k: usize) -> Vec<C64> {
        (0..self.vectors.rows()).map(|i| self.vectors.get(i, k)).collect()
    }

    pub fn reconstruct(&self) -> CMatrix {
        let d = CMatrix::diag_real(&self.values);
        &(&self.vectors * &d) * &self.vectors.adjoint()
    }
}

const HERMITIAN_TOL: f64 = 1e-9;

/// Cyclic Jacobi on the real symmetric embedding.
pub fn eig_hermitian(a: &CMatrix) -> Result<HermitianEig> {
    let asym = a.hermitian_asymmetry();
    if asym > HERMITIAN_TOL * a.max_abs().max(1.0) {
        return Err(Error::NonHermitian { asymmetry: asym });
    }
    let (h, _) = a.hermitian_parts();
    Ok(eig_hermitian_inner(&h))
}

fn eigenvalues_unchecked(a: &CMatrix) -> Vec<f64> {
    let (h, _) = a.hermitian_parts();
    eig_hermitian_inner(&h).values
}

fn eig_hermitian_inner(a: &CMatrix) -> HermitianEig {
    let n = a.rows();
    if n == 0 {
        return HermitianEig {
            values: vec![],
            vectors: CMatrix::zeros(0, 0),
        };
    }
    if a.is_real() {
        let mut m: Vec<f64> = (0..n * n).map(|k| a.get(k / n, k % n).re).collect();
        let mut v = vec![0.0; n * n];
        jacobi_symmetric(&mut m, n, &mut v);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
        let values = order.iter().map(|&k| m[k * n + k]).collect();
        let vectors = CMatrix::from_fn(n, n, |i, c| C64::new(v[i * n + order[c]], 0.0));
        return HermitianEig { values, vectors };
    }

    let emb = a.real_embedding();
    let n2 = 2 * n;
    let mut m: Vec<f64> = (0..n2 * n2).map(|k| emb[(k / n2, k % n2)]).collect();
    let mut v = vec![0.0; n2 * n2];
    jacobi_symmetric(&mut m, n2, &mut v);
    let mut order: Vec<usize> = (0..n2).collect();
    order.sort_by(|&i, &j| m[j * n2 + j].total_cmp(&m[i * n2 + i]));

    // Each complex eigenvector z yields the real pair [Re z; Im z], [−Im z; Re z];
    // keep one representative per complex direction.
    let mut chosen: Vec<Vec<C64>> = Vec::with_capacity(n);
    for threshold in [1e-3, 1e-8] {
        for &k in &order {
            if chosen.len() == n {
                break;
            }
            let mut z: Vec<C64> = (0..n)
                .map(|i| C64::new(v[i * n2 + k], v[(i + n) * n2 + k]))
                .collect();
            for q in &chosen {
                let c: C64 = q.iter().zip(z.iter()).map(|(a, b)| a.conj() * b).sum();
                for (zi, qi) in z.iter_mut().zip(q.iter()) {
                    *zi -= c * qi;
                }
            }
            let nrm = z.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if nrm > threshold {
                z.iter_mut().for_each(|x| *x /= nrm);
                chosen.push(z);
            }
        }
        if chosen.len() == n {
            break;
        }
    }
    let mut pairs: Vec<(f64, Vec<C64>)> = chosen
        .into_iter()
        .map(|z| (a.quad_form(&z).re, z))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let values = pairs.iter().map(|p| p.0).collect();
    let vectors = CMatrix::from_fn(n, n, |i, c| pairs[c].1[i]);
    HermitianEig { values, vectors }
}

/// In-place cyclic Jacobi; on return the diagonal of `a` holds the
/// eigenvalues and the columns of `v` the eigenvectors (row-major storage).
fn jacobi_symmetric(a: &mut [f64], n: usize, v: &mut [f64]) {
    v.iter_mut().enumerate().for_each(|(k, x)| *x = if k / n == k % n { 1.0 } else { 0.0 });
    let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if fro == 0.0 {
        return;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum();
        if off.sqrt() <= f64::EPSILON * fro * 0.1 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
}

/// `λ_min(A) ≥ −psd_tol·max(1, ‖A‖)`.
pub fn is_psd(a: &CMatrix, tol: &TolerancePolicy) -> Result<bool> {
    if a.rows() == 0 {
        return Ok(true);
    }
    let eig = eig_hermitian(a)?;
    let norm = eig.values.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let lmin = *eig.values.last().unwrap();
    Ok(lmin >= -tol.psd_tol * norm.max(1.0))
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kron(b)
}

/// Orthonormal basis (under `Re Tr(A* B)`) of the real span of `mats`.
pub fn real_span_basis(mats: &[BlockMatrix]) -> Vec<BlockMatrix> {
    let mut basis: Vec<BlockMatrix> = Vec::new();
    for m in mats {
        if let Some(v) = orthogonalize(m, &basis) {
            basis.push(v);
        }
    }
    basis
}

/// Removes the components along an orthonormal family (two Gram–Schmidt
/// passes); returns the normalized remainder unless it is negligible.
pub fn orthogonalize(m: &BlockMatrix, basis: &[BlockMatrix]) -> Option<BlockMatrix> {
    let scale = m.frobenius();
    if scale == 0.0 {
        return None;
    }
    let mut v = m.clone();
    for _ in 0..2 {
        for b in basis {
            let c = b.inner_re(&v);
            v = v.axpy(C64::new(-c, 0.0), b);
        }
    }
    let r = v.frobenius();
    if r <= 1e-10 * scale.max(1.0) {
        None
    } else {
        Some(v.scale_re(1.0 / r))
    }
}

/// Orthogonal projection onto the real span of an orthonormal family.
pub fn project_to_span(m: &BlockMatrix, basis: &[BlockMatrix]) -> BlockMatrix {
    let mut out = BlockMatrix::from_blocks(m.blocks.iter().map(|b| CMatrix::zeros(b.rows(), b.cols())).collect());
    for b in basis {
        out = out.axpy(C64::new(b.inner_re(m), 0.0), b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> CMatrix {
        let g = CMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let (h, _) = g.hermitian_parts();
        h
    }

    #[test]
    fn eig_diagonal_and_pauli() {
        let e = eig_hermitian(&CMatrix::diag_real(&[3.0, -1.0])).unwrap();
        assert_eq!(e.values, vec![3.0, -1.0]);
        let x = CMatrix::from_real(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let e = eig_hermitian(&x).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14 && (e.values[1] + 1.0).abs() < 1e-14);
        let e = eig_hermitian(&CMatrix::identity(4)).unwrap();
        assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = CMatrix::unit(2, 0, 1);
        assert!(matches!(eig_hermitian(&m), Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn eig_complex_degenerate() {
        // Pauli-Y has a doubled real embedding; the identity block makes a degenerate cluster.
        let y = CMatrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => C64::new(0.0, -1.0),
            (1, 0) => C64::new(0.0, 1.0),
            _ => ZERO,
        });
        let m = y.direct_sum(&CMatrix::identity(2));
        let e = eig_hermitian(&m).unwrap();
        let r = &e.reconstruct() - &m;
        assert!(r.max_abs() < 1e-12, "{r:?}");
        assert!((e.values[0] - 1.0).abs() < 1e-12 && (e.values[3] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=12 {
            let a = random_hermitian(&mut rng, n);
            let e = eig_hermitian(&a).unwrap();
            let err = (&e.reconstruct() - &a).spectral_norm();
            assert!(err <= 1e-10 * a.spectral_norm().max(1e-300), "n={n} err={err}");
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
            let vv = &e.vectors.adjoint() * &e.vectors;
            assert!((&vv - &CMatrix::identity(n)).max_abs() < 1e-10);
        }
    }

    #[test]
    fn psd_examples() {
        let tol = TolerancePolicy::default();
        let n = 3.0;
        assert!(is_psd(&CMatrix::diag_real(&[0.0, 1.0, n + 1.0, 0.0]), &tol).unwrap());
        assert!(!is_psd(&CMatrix::from_real(&[vec![0.0, 1.0], vec![1.0, 0.0]]), &tol).unwrap());
        assert!(is_psd(&CMatrix::zeros(3, 3), &tol).unwrap());
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron(&CMatrix::identity(2), &CMatrix::identity(2)), CMatrix::identity(4));
        let k = kron(&CMatrix::unit(2, 0, 0), &CMatrix::unit(2, 1, 1));
        assert_eq!(k, CMatrix::unit(4, 1, 1));
        let k = kron(&CMatrix::diag_real(&[1.0, 2.0]), &CMatrix::diag_real(&[3.0, 4.0]));
        assert_eq!(k, CMatrix::diag_real(&[3.0, 4.0, 6.0, 8.0]));
    }

    #[test]
    fn span_basis_examples() {
        let i2 = BlockMatrix::single(CMatrix::identity(2));
        let b = real_span_basis(&[i2.clone(), i2.scale_re(2.0)]);
        assert_eq!(b.len(), 1);
        assert!((&b[0].blocks[0] - &CMatrix::identity(2).scale_re(std::f64::consts::FRAC_1_SQRT_2)).max_abs() < 1e-15);

        let e11 = BlockMatrix::single(CMatrix::unit(2, 0, 0));
        let e22 = BlockMatrix::single(CMatrix::unit(2, 1, 1));
        let b = real_span_basis(&[e11, e22]);
        assert_eq!(b.len(), 2);
        assert!(b[0].inner_re(&b[1]).abs() < 1e-15);

        let x = BlockMatrix::single(CMatrix::from_real(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
        let b = real_span_basis(&[x]);
        assert!((b[0].blocks[0].get(0, 1).re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(real_span_basis(&[]).is_empty());
    }

    #[test]
    fn json_round_trip() {
        let m = CMatrix::from_fn(2, 3, |i, j| C64::new(i as f64, j as f64 - 1.0));
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.starts_with("{\"re\":"));
        let back: CMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn herm(n: usize) -> impl Strategy<Value = CMatrix> {
            proptest::collection::vec(-1.0f64..1.0, 2 * n * n).prop_map(move |v| {
                let g = CMatrix::from_fn(n, n, |i, j| C64::new(v[2 * (i * n + j)], v[2 * (i * n + j) + 1]));
                g.hermitian_parts().0
            })
        }

        proptest! {
            #[test]
            fn pointed_at_tolerance(a in herm(3)) {
                let tol = TolerancePolicy::default();
                if is_psd(&a, &tol).unwrap() && is_psd(&(-&a), &tol).unwrap() {
                    let nrm = a.spectral_norm();
                    prop_assert!(nrm <= 2.0 * tol.psd_tol * nrm.max(1.0));
                }
            }

            #[test]
            fn kron_mixed_product(a in herm(2), b in herm(2), c in herm(3), d in herm(3)) {
                let lhs = kron(&(&a * &b), &(&c * &d));
                let rhs = &kron(&a, &c) * &kron(&b, &d);
                prop_assert!((&lhs - &rhs).max_abs() < 1e-10);
                let adj = kron(&a, &c).adjoint();
                prop_assert!((&adj - &kron(&a.adjoint(), &c.adjoint())).max_abs() < 1e-15);
            }

            #[test]
            fn projection_idempotent(a in herm(2), b in herm(2), c in herm(2)) {
                let basis = real_span_basis(&[BlockMatrix::single(a), BlockMatrix::single(b)]);
                let p = project_to_span(&BlockMatrix::single(c), &basis);
                let pp = project_to_span(&p, &basis);
                prop_assert!(p.sub(&pp).max_abs() < 1e-12);
                prop_assert!(orthogonalize(&p, &basis).is_none());
            }
        }
    }
}
