//! Concrete operator systems `S ⊆ ⊕ M_{dᵢ}`.

use serde::{Deserialize, Serialize};

use crate::conic::{solve_sdp, AffineMatrix, ConicResult, HermitianVar, LinExpr, SdpProblem, Sense};
use crate::error::{Error, Result};
use crate::linalg::{
    orthogonalize, real_span_basis, BlockMatrix, BlockShape, CMatrix, TolerancePolicy, C64, ONE,
};

/// A unital self-adjoint subspace of a block-diagonal matrix algebra, stored
/// as an orthonormal hermitian basis of its hermitian part. `basis[0]` is
/// the normalized unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteOperatorSystem {
    name: String,
    shape: BlockShape,
    basis: Vec<BlockMatrix>,
}

fn check_hermitian(m: &BlockMatrix, shape: &BlockShape) -> Result<()> {
    if !m.matches(shape) {
        return Err(Error::ShapeMismatch(format!(
            "expected block shape {:?}, got {:?}",
            shape.blocks(),
            m.shape().blocks()
        )));
    }
    let asym = m.hermitian_asymmetry();
    if asym > 1e-9 * m.max_abs().max(1.0) {
        return Err(Error::NonHermitian { asymmetry: asym });
    }
    Ok(())
}

impl ConcreteOperatorSystem {
    /// The real span of `generators` with the unit adjoined.
    pub fn build(shape: BlockShape, generators: &[BlockMatrix], name: impl Into<String>) -> Result<Self> {
        let shape = BlockShape::new(shape.0)?;
        let mut mats = vec![BlockMatrix::identity(&shape)];
        for g in generators {
            check_hermitian(g, &shape)?;
            mats.push(g.hermitian_parts().0);
        }
        Ok(Self {
            name: name.into(),
            basis: real_span_basis(&mats),
            shape,
        })
    }

    /// The whole ambient algebra `⊕ M_{dᵢ}`.
    pub fn full(shape: BlockShape, name: impl Into<String>) -> Result<Self> {
        let shape = BlockShape::new(shape.0)?;
        let units = shape.hermitian_units();
        Self::build(shape, &units, name)
    }

    /// `ℓ∞_m`.
    pub fn diagonal(m: usize) -> Self {
        Self::full(BlockShape::diagonal(m), format!("l{m}_inf")).expect("valid shape")
    }

    /// `M_d`.
    pub fn matrix_algebra(d: usize) -> Self {
        Self::full(BlockShape(vec![d]), format!("M{d}")).expect("valid shape")
    }

    /// Uses an already orthonormal hermitian basis with the unit first.
    #[allow(dead_code)]
    pub(crate) fn from_orthonormal(shape: BlockShape, basis: Vec<BlockMatrix>, name: String) -> Self {
        Self { name, shape, basis }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn shape(&self) -> &BlockShape {
        &self.shape
    }

    pub fn basis(&self) -> &[BlockMatrix] {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn total_dim(&self) -> usize {
        self.shape.total_dim()
    }

    pub fn unit(&self) -> BlockMatrix {
        BlockMatrix::identity(&self.shape)
    }

    pub fn zero(&self) -> BlockMatrix {
        BlockMatrix::zeros(&self.shape)
    }

    /// Whether `S` is the whole ambient algebra, hence a C*-algebra.
    pub fn is_full_algebra(&self) -> bool {
        self.dim() == self.shape.algebra_dim()
    }

    /// Whether `S` is an abelian full algebra `ℓ∞_m`.
    pub fn is_diagonal_algebra(&self) -> bool {
        self.is_full_algebra() && self.shape.blocks().iter().all(|&d| d == 1)
    }

    /// Complex coordinates `Tr(b_a x)` of `x` against the basis.
    pub fn coefficients(&self, x: &BlockMatrix) -> Vec<C64> {
        self.basis.iter().map(|b| b.trace_product(x)).collect()
    }

    /// Real coordinates of a hermitian element.
    pub fn real_coefficients(&self, x: &BlockMatrix) -> Vec<f64> {
        self.basis.iter().map(|b| b.inner_re(x)).collect()
    }

    pub fn from_coefficients(&self, c: &[C64]) -> BlockMatrix {
        let mut out = self.zero();
        for (b, z) in self.basis.iter().zip(c.iter()) {
            out = out.axpy(*z, b);
        }
        out
    }

    pub fn from_real_coefficients(&self, c: &[f64]) -> BlockMatrix {
        let mut out = self.zero();
        for (b, z) in self.basis.iter().zip(c.iter()) {
            out = out.axpy(C64::new(*z, 0.0), b);
        }
        out
    }

    /// Orthogonal projection of an ambient matrix onto `S`.
    pub fn project(&self, x: &BlockMatrix) -> BlockMatrix {
        self.from_coefficients(&self.coefficients(x))
    }

    pub fn contains(&self, x: &BlockMatrix) -> bool {
        x.matches(&self.shape) && self.project(x).sub(x).frobenius() <= 1e-9 * x.frobenius().max(1.0)
    }

    /// Validates `x ∈ S`.
    pub fn element(&self, x: BlockMatrix) -> Result<SystemElement> {
        if !x.matches(&self.shape) {
            return Err(Error::ShapeMismatch(format!(
                "element shape {:?} does not match system shape {:?}",
                x.shape().blocks(),
                self.shape.blocks()
            )));
        }
        if !self.contains(&x) {
            return Err(Error::InvalidInput(format!(
                "matrix does not lie in the span of system '{}'",
                self.name
            )));
        }
        Ok(SystemElement {
            system: self.name.clone(),
            matrix: x,
        })
    }

    /// Positivity of `X ∈ M_n(S)` in the ambient `M_n(A)`.
    pub fn level_positive(&self, x: &MatrixLevelElement, tol: &TolerancePolicy) -> Result<bool> {
        let a = x.assemble();
        let asym = a.hermitian_asymmetry();
        if asym > tol.psd_tol * a.max_abs().max(1.0) {
            return Err(Error::NonHermitian { asymmetry: asym });
        }
        a.is_psd(tol)
    }

    /// `‖x‖`, the spectral norm of the ambient matrix.
    pub fn system_norm(&self, x: &BlockMatrix) -> f64 {
        x.spectral_norm()
    }

    /// `inf{λ : [[λe, x], [x*, λe]] ⪰ 0}` as a certified SDP.
    pub fn system_norm_sdp(&self, x: &BlockMatrix, tol: &TolerancePolicy) -> ConicResult {
        let mut p = SdpProblem::new(Sense::Min);
        let lam = p.add_var();
        for b in &x.blocks {
            let d = b.rows();
            let mut c = CMatrix::zeros(2 * d, 2 * d);
            c.set_block(0, d, b);
            c.set_block(d, 0, &b.adjoint());
            let mut f = AffineMatrix::constant(c);
            f.add_term(lam, CMatrix::identity(2 * d));
            p.add_psd(f);
        }
        p.set_objective(LinExpr::var(lam));
        solve_sdp(&p, tol)
    }

    /// `inf{λ ≥ 0 : λe + x, λe − x ∈ cone}` by bisection; `member` decides the
    /// level-1 cone. The cone must contain `S⁺`.
    pub fn order_seminorm_hermitian(
        &self,
        x: &BlockMatrix,
        mut member: impl FnMut(&BlockMatrix) -> Result<bool>,
        tol: &TolerancePolicy,
    ) -> Result<f64> {
        if !x.is_hermitian(1e-9 * x.max_abs().max(1.0)) {
            return Err(Error::NonHermitian {
                asymmetry: x.hermitian_asymmetry(),
            });
        }
        let e = self.unit();
        let mut pred = |lam: f64| -> Result<bool> {
            Ok(member(&x.axpy(C64::new(lam, 0.0), &e))? && member(&x.scale_re(-1.0).axpy(C64::new(lam, 0.0), &e))?)
        };
        if pred(0.0)? {
            return Ok(0.0);
        }
        let mut hi = self.system_norm(x).max(tol.bisect_tol);
        let mut tries = 0;
        while !pred(hi)? {
            hi *= 2.0;
            tries += 1;
            if tries > 40 {
                return Err(Error::SolverFail("order seminorm bracket did not close".into()));
            }
        }
        crate::conic::bisect_scalar(pred, 0.0, hi, tol.bisect_tol)
    }

    /// Ambient hermitian variable `Σ zᵢ Bᵢ` (one hermitian block per block of
    /// the shape), PSD-constrained when `psd` is set.
    pub(crate) fn ambient_variable(p: &mut SdpProblem, shape: &BlockShape, psd: bool) -> Vec<HermitianVar> {
        shape
            .blocks()
            .iter()
            .map(|&d| {
                let v = p.add_hermitian(d);
                if psd {
                    p.add_psd(v.expr.clone());
                }
                v
            })
            .collect()
    }

    /// `Tr(ρ x)` split into real and imaginary parts.
    pub(crate) fn pairing(rho: &[HermitianVar], x: &BlockMatrix) -> (LinExpr, LinExpr) {
        let mut re = LinExpr::default();
        let mut im = LinExpr::default();
        for (v, b) in rho.iter().zip(x.blocks.iter()) {
            let (r, i) = v.expr.trace_with(b);
            re = re.plus(&r);
            im = im.plus(&i);
        }
        (re, im)
    }

    /// A state of `S` annihilating the listed elements that maximizes
    /// `|Tr(ρ x)|` for the `separate` target. `None` when no annihilating
    /// state exists or the maximum is below `feas_margin`.
    pub fn find_state(
        &self,
        annihilate: &[BlockMatrix],
        separate: Option<&BlockMatrix>,
        tol: &TolerancePolicy,
    ) -> Result<Option<StateVector>> {
        for k in annihilate {
            if !k.matches(&self.shape) {
                return Err(Error::ShapeMismatch("annihilated element has the wrong shape".into()));
            }
        }
        let Some(x) = separate else {
            let r = self.state_extreme(annihilate, None)?;
            return Ok(r.map(|rho| StateVector { rho, value: 0.0 }));
        };
        let (h, k) = x.hermitian_parts();
        let directions: Vec<(f64, f64)> = if k.max_abs() <= 1e-14 * h.max_abs().max(1e-300) {
            vec![(1.0, 0.0), (-1.0, 0.0)]
        } else {
            (0..24)
                .map(|t| {
                    let th = std::f64::consts::PI * 2.0 * t as f64 / 24.0;
                    (th.cos(), th.sin())
                })
                .collect()
        };
        let mut best: Option<StateVector> = None;
        let mut any = false;
        for (c, s) in directions {
            let target = h.scale_re(c).add(&k.scale_re(s));
            let Some(rho) = self.state_extreme(annihilate, Some(&target))? else {
                continue;
            };
            any = true;
            let value = rho.trace_product(x).norm();
            if best.as_ref().is_none_or(|b| value > b.value) {
                best = Some(StateVector { rho, value });
            }
        }
        if !any {
            return Ok(None);
        }
        Ok(best.filter(|b| b.value >= tol.feas_margin))
    }

    /// Maximizer of `Tr(ρ t)` (hermitian `t`) over annihilating states.
    fn state_extreme(&self, annihilate: &[BlockMatrix], target: Option<&BlockMatrix>) -> Result<Option<BlockMatrix>> {
        let tol = TolerancePolicy::default();
        let mut p = SdpProblem::new(Sense::Max);
        let rho = Self::ambient_variable(&mut p, &self.shape, true);
        let (tr, _) = Self::pairing(&rho, &self.unit());
        p.add_eq(tr, 1.0);
        for k in annihilate {
            let (re, im) = Self::pairing(&rho, k);
            p.add_eq(re, 0.0);
            p.add_eq(im, 0.0);
        }
        if let Some(t) = target {
            let (re, _) = Self::pairing(&rho, t);
            p.set_objective(re);
        }
        let r = solve_sdp(&p, &tol);
        match r.status {
            crate::conic::ConicStatus::Infeasible => Ok(None),
            _ if r.is_optimal() => {
                let z = r.z();
                let m = BlockMatrix::from_blocks(rho.iter().map(|v| v.value(z)).collect());
                Ok(Some(m))
            }
            _ => Err(Error::SolverFail(format!("state search: {:?}", r.status))),
        }
    }

    /// `S ⊗ T ⊆ A ⊗ B` with basis `s_a ⊗ t_b` at index `a·dim T + b`.
    pub fn min_tensor(&self, other: &Self) -> Self {
        let mut basis = Vec::with_capacity(self.dim() * other.dim());
        for s in &self.basis {
            for t in &other.basis {
                basis.push(s.kron(t));
            }
        }
        Self {
            name: format!("{}⊗{}", self.name, other.name),
            shape: self.shape.kron(&other.shape),
            basis,
        }
    }

    /// Orthonormal basis of the complement of `sub` in `S_h`.
    pub fn complement_in(&self, sub: &[BlockMatrix]) -> Vec<BlockMatrix> {
        let mut acc: Vec<BlockMatrix> = real_span_basis(sub);
        let mut out = Vec::new();
        for b in &self.basis {
            if let Some(v) = orthogonalize(b, &acc) {
                acc.push(v.clone());
                out.push(v);
            }
        }
        out
    }

    pub fn to_json(&self) -> SystemJson {
        SystemJson {
            name: self.name.clone(),
            shape: self.shape.0.clone(),
            generators: self.basis.clone(),
        }
    }

    pub fn from_json(j: &SystemJson) -> Result<Self> {
        Self::build(BlockShape::new(j.shape.clone())?, &j.generators, j.name.clone())
    }
}

/// `{"name", "shape", "generators"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemJson {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub generators: Vec<BlockMatrix>,
}

/// `{"system", "matrix"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemElement {
    pub system: String,
    pub matrix: BlockMatrix,
}

/// `X = [xᵢⱼ] ∈ M_n(S)`, entries row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixLevelElement {
    pub n: usize,
    pub entries: Vec<BlockMatrix>,
}

impl MatrixLevelElement {
    pub fn new(n: usize, entries: Vec<BlockMatrix>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "level {n} element needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        let shape = entries[0].shape();
        if entries.iter().any(|e| !e.matches(&shape)) {
            return Err(Error::ShapeMismatch("entries of differing shapes".into()));
        }
        Ok(Self { n, entries })
    }

    pub fn level1(x: BlockMatrix) -> Self {
        Self {
            n: 1,
            entries: vec![x],
        }
    }

    /// `H ⊗ x` for a scalar matrix `H`.
    pub fn scalar_times(h: &CMatrix, x: &BlockMatrix) -> Self {
        let n = h.rows();
        let entries = (0..n * n).map(|k| x.scale(h.get(k / n, k % n))).collect();
        Self { n, entries }
    }

    /// `x ⊗ Iₙ`, the diagonal inflation.
    pub fn diagonal(n: usize, x: &BlockMatrix) -> Self {
        Self::scalar_times(&CMatrix::identity(n), x)
    }

    pub fn get(&self, i: usize, j: usize) -> &BlockMatrix {
        &self.entries[i * self.n + j]
    }

    pub fn shape(&self) -> BlockShape {
        self.entries[0].shape()
    }

    /// The element of `M_n(⊕ M_d) ≅ ⊕ M_{nd}` (row index `i·d + r`).
    pub fn assemble(&self) -> BlockMatrix {
        let shape = self.shape();
        let n = self.n;
        let blocks = shape
            .blocks()
            .iter()
            .enumerate()
            .map(|(b, &d)| {
                let mut m = CMatrix::zeros(n * d, n * d);
                for i in 0..n {
                    for j in 0..n {
                        m.set_block(i * d, j * d, &self.get(i, j).blocks[b]);
                    }
                }
                m
            })
            .collect();
        BlockMatrix::from_blocks(blocks)
    }

    /// Inverse of [`assemble`](Self::assemble).
    pub fn disassemble(n: usize, m: &BlockMatrix) -> Self {
        let dims: Vec<usize> = m.blocks.iter().map(|b| b.rows() / n).collect();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(BlockMatrix::from_blocks(
                    m.blocks
                        .iter()
                        .zip(dims.iter())
                        .map(|(b, &d)| b.block(i * d, j * d, d, d))
                        .collect(),
                ));
            }
        }
        Self { n, entries }
    }

    pub fn adjoint(&self) -> Self {
        let n = self.n;
        let entries = (0..n * n).map(|k| self.get(k % n, k / n).adjoint()).collect();
        Self { n, entries }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.assemble().is_hermitian(tol)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().zip(other.entries.iter()).map(|(a, b)| a.add(b)).collect(),
        }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|a| a.scale_re(s)).collect(),
        }
    }

    /// `[[0, X], [X*, 0]]` together with `λ` on the diagonal.
    pub fn norm_dilation(&self, lam: f64, unit: &BlockMatrix) -> Self {
        let n = self.n;
        let m = 2 * n;
        let zero = BlockMatrix::zeros(&unit.shape());
        let mut entries = vec![zero; m * m];
        for i in 0..n {
            entries[i * m + i] = unit.scale_re(lam);
            entries[(n + i) * m + n + i] = unit.scale_re(lam);
            for j in 0..n {
                entries[i * m + n + j] = self.get(i, j).clone();
                entries[(n + j) * m + i] = self.get(i, j).adjoint();
            }
        }
        Self { n: m, entries }
    }
}

/// `f(x) = Tr(ρ x)` with `ρ ⪰ 0`, `Tr ρ = 1`; `value` is `|f|` at the
/// separation target when one was given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub rho: BlockMatrix,
    pub value: f64,
}

impl StateVector {
    pub fn apply(&self, x: &BlockMatrix) -> C64 {
        self.rho.trace_product(x)
    }

    pub fn is_valid(&self, tol: &TolerancePolicy) -> bool {
        (self.rho.trace() - ONE).norm() <= 1e-7 && self.rho.min_eigenvalue().is_ok_and(|l| l >= -tol.psd_tol.max(1e-8))
    }
}
