//! Complete positivity into matrix algebras and the dual system `S*`.

use serde::{Deserialize, Serialize};

use crate::conic::{solve_sdp, AffineMatrix, HermitianVar, LinExpr, SdpProblem, Sense};
use crate::error::{Error, Result};
use crate::linalg::{is_psd, BlockMatrix, BlockShape, CMatrix, TolerancePolicy, C64, ZERO};
use crate::system::{ConcreteOperatorSystem, MatrixLevelElement};

/// A linear map `S → M_k`, stored by its values on the orthonormal basis of
/// the source.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub source: ConcreteOperatorSystem,
    pub k: usize,
    pub action: Vec<CMatrix>,
}

impl LinearMap {
    pub fn new(source: ConcreteOperatorSystem, k: usize, action: Vec<CMatrix>) -> Result<Self> {
        if action.len() != source.dim() {
            return Err(Error::ShapeMismatch(format!(
                "map needs {} basis images, got {}",
                source.dim(),
                action.len()
            )));
        }
        if action.iter().any(|m| m.rows() != k || m.cols() != k) {
            return Err(Error::ShapeMismatch(format!("basis images must be {k}×{k}")));
        }
        Ok(Self { source, k, action })
    }

    pub fn from_fn(source: &ConcreteOperatorSystem, k: usize, f: impl Fn(&BlockMatrix) -> CMatrix) -> Self {
        let action = source.basis().iter().map(&f).collect();
        Self {
            source: source.clone(),
            k,
            action,
        }
    }

    /// The map determined by `inputs[i] ↦ outputs[i]` (least squares over the
    /// source basis; the inputs must span `S`).
    pub fn from_samples(
        source: &ConcreteOperatorSystem,
        k: usize,
        inputs: &[BlockMatrix],
        outputs: &[CMatrix],
    ) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::ShapeMismatch("inputs and outputs differ in length".into()));
        }
        let d = source.dim();
        let coeffs: Vec<Vec<C64>> = inputs.iter().map(|x| source.coefficients(x)).collect();
        let a = nalgebra::DMatrix::from_fn(inputs.len(), d, |i, j| coeffs[i][j]);
        let svd = a.clone().svd(true, true);
        let rank = svd.rank(1e-10 * svd.singular_values.max().max(1.0));
        if rank < d {
            return Err(Error::InvalidInput(format!(
                "map inputs span a {rank}-dimensional subspace of a {d}-dimensional system"
            )));
        }
        let mut action = vec![CMatrix::zeros(k, k); d];
        for p in 0..k {
            for q in 0..k {
                let rhs = nalgebra::DVector::from_iterator(outputs.len(), outputs.iter().map(|o| o.get(p, q)));
                let sol = svd
                    .solve(&rhs, 1e-12)
                    .map_err(|e| Error::InvalidInput(e.to_string()))?;
                for (j, m) in action.iter_mut().enumerate() {
                    m.set(p, q, sol[j]);
                }
            }
        }
        let fit = inputs
            .iter()
            .zip(outputs.iter())
            .map(|(x, y)| {
                let c = source.coefficients(x);
                let mut v = CMatrix::zeros(k, k);
                for (z, m) in c.iter().zip(action.iter()) {
                    v = &v + &m.scale(*z);
                }
                (&v - y).max_abs()
            })
            .fold(0.0, f64::max);
        if fit > 1e-8 * outputs.iter().map(CMatrix::max_abs).fold(1.0, f64::max) {
            return Err(Error::InvalidInput(format!(
                "map samples are inconsistent with linearity (residual {fit:.3e})"
            )));
        }
        Self::new(source.clone(), k, action)
    }

    pub fn identity(p: usize) -> Self {
        let s = ConcreteOperatorSystem::matrix_algebra(p);
        Self::from_fn(&s, p, |b| b.blocks[0].clone())
    }

    pub fn transpose(p: usize) -> Self {
        let s = ConcreteOperatorSystem::matrix_algebra(p);
        Self::from_fn(&s, p, |b| b.blocks[0].transpose())
    }

    /// `x ↦ V x V*` with `V` of size `k × D`.
    pub fn compression(source: &ConcreteOperatorSystem, v: &CMatrix) -> Self {
        let va = v.adjoint();
        Self::from_fn(source, v.rows(), |b| &(v * &b.to_dense()) * &va)
    }

    /// `x ↦ Tr(ρ x)` into `M_1`.
    pub fn functional(source: &ConcreteOperatorSystem, rho: &BlockMatrix) -> Self {
        Self::from_fn(source, 1, |b| CMatrix::from_fn(1, 1, |_, _| rho.trace_product(b)))
    }

    pub fn zero(source: &ConcreteOperatorSystem, k: usize) -> Self {
        Self::from_fn(source, k, |_| CMatrix::zeros(k, k))
    }

    pub fn apply(&self, x: &BlockMatrix) -> CMatrix {
        let c = self.source.coefficients(x);
        let mut out = CMatrix::zeros(self.k, self.k);
        for (z, m) in c.iter().zip(self.action.iter()) {
            if *z != ZERO {
                out = &out + &m.scale(*z);
            }
        }
        out
    }

    /// `φ^{(n)}([xᵢⱼ]) = [φ(xᵢⱼ)]`, index `i·k + p`.
    pub fn apply_level(&self, x: &MatrixLevelElement) -> CMatrix {
        let n = x.n;
        let k = self.k;
        let mut out = CMatrix::zeros(n * k, n * k);
        for i in 0..n {
            for j in 0..n {
                out.set_block(i * k, j * k, &self.apply(x.get(i, j)));
            }
        }
        out
    }

    /// Largest `‖φ(b) − φ(b)*‖` over the hermitian source basis.
    pub fn star_residual(&self) -> f64 {
        self.action.iter().map(CMatrix::hermitian_asymmetry).fold(0.0, f64::max)
    }

    pub fn check_star(&self) -> Result<()> {
        let r = self.star_residual();
        let scale = self.action.iter().map(CMatrix::max_abs).fold(1.0, f64::max);
        if r > 1e-9 * scale {
            return Err(Error::NotStarPreserving(r));
        }
        Ok(())
    }

    /// `ψ ∘ φ` for `ψ` defined on the full algebra `M_k`.
    pub fn then(&self, psi: &LinearMap) -> Result<LinearMap> {
        if psi.source.shape().blocks() != [self.k] {
            return Err(Error::ShapeMismatch("composition needs ψ defined on M_k".into()));
        }
        let action = self
            .action
            .iter()
            .map(|m| psi.apply(&BlockMatrix::single(m.clone())))
            .collect();
        LinearMap::new(self.source.clone(), psi.k, action)
    }

    /// Choi matrix `Σ E_rs ⊗ φ(E_rs)` for a source that is a full `M_p`.
    pub fn choi_matrix(&self) -> Result<CMatrix> {
        let blocks = self.source.shape().blocks();
        if blocks.len() != 1 || !self.source.is_full_algebra() {
            return Err(Error::InvalidInput("Choi matrix needs a full matrix algebra source".into()));
        }
        let p = blocks[0];
        let k = self.k;
        let mut c = CMatrix::zeros(p * k, p * k);
        for r in 0..p {
            for s in 0..p {
                let img = self.apply(&BlockMatrix::single(CMatrix::unit(p, r, s)));
                c.set_block(r * k, s * k, &img);
            }
        }
        Ok(c)
    }

    pub fn to_json(&self) -> MapJson {
        MapJson {
            source: self.source.name().to_string(),
            k: self.k,
            action: self.action.clone(),
            inputs: None,
        }
    }

    /// Reads `{"source", "k", "action", "inputs"?}`; without `inputs` the
    /// action lists images of the source's canonical basis.
    pub fn from_json(source: &ConcreteOperatorSystem, j: &MapJson) -> Result<Self> {
        match &j.inputs {
            Some(inputs) => Self::from_samples(source, j.k, inputs, &j.action),
            None => Self::new(source.clone(), j.k, j.action.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapJson {
    pub source: String,
    pub k: usize,
    pub action: Vec<CMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<BlockMatrix>>,
}

/// Choi-block variables of a map `Φ̃ : ⊕ M_{dᵢ} → M_m`:
/// `Φ̃(a)_{pq} = Σ_{rs} a_{rs} C_{(r·m+p),(s·m+q)}` on block `i`.
pub(crate) struct ChoiVar {
    pub m: usize,
    pub blocks: Vec<HermitianVar>,
    dims: Vec<usize>,
}

impl ChoiVar {
    pub fn new(p: &mut SdpProblem, shape: &BlockShape, m: usize) -> Self {
        let blocks = shape.blocks().iter().map(|&d| p.add_hermitian(d * m)).collect();
        Self {
            m,
            blocks,
            dims: shape.blocks().to_vec(),
        }
    }

    /// `Φ̃(a)` as an affine matrix in the Choi variables.
    pub fn apply(&self, a: &BlockMatrix) -> AffineMatrix {
        let m = self.m;
        let mut out = AffineMatrix::zeros(m, m);
        for ((var, &d), ab) in self.blocks.iter().zip(self.dims.iter()).zip(a.blocks.iter()) {
            if ab.max_abs() == 0.0 {
                continue;
            }
            for (v, mat) in &var.expr.terms {
                let mut img = CMatrix::zeros(m, m);
                let mut any = false;
                for r in 0..d {
                    for s in 0..d {
                        let z = ab.get(r, s);
                        if z == ZERO {
                            continue;
                        }
                        let blk = mat.block(r * m, s * m, m, m);
                        if blk.max_abs() == 0.0 {
                            continue;
                        }
                        img = &img + &blk.scale(z);
                        any = true;
                    }
                }
                if any {
                    out.add_term(*v, img);
                }
            }
        }
        out
    }

    pub fn values(&self, z: &[f64]) -> Vec<CMatrix> {
        self.blocks.iter().map(|b| b.value(z)).collect()
    }

    /// Sum of traces of the Choi blocks.
    pub fn trace(&self) -> LinExpr {
        let mut acc = LinExpr::default();
        for b in &self.blocks {
            let n = b.expr.rows();
            acc = acc.plus(&b.expr.trace_with(&CMatrix::identity(n)).0);
        }
        acc
    }
}

/// Applies a map given by Choi blocks.
pub fn apply_choi(blocks: &[CMatrix], m: usize, a: &BlockMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(m, m);
    for (c, ab) in blocks.iter().zip(a.blocks.iter()) {
        let d = ab.rows();
        for r in 0..d {
            for s in 0..d {
                let z = ab.get(r, s);
                if z != ZERO {
                    out = &out + &c.block(r * m, s * m, m, m).scale(z);
                }
            }
        }
    }
    out
}

/// A level-`n` violation: `v* φ^{(n)}(X) v = value < 0` with `X ⪰ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpWitness {
    pub level: usize,
    pub x: MatrixLevelElement,
    pub v: Vec<C64>,
    pub value: f64,
}

impl CpWitness {
    /// Recomputes positivity of `X`, unit norm of `v`, and the violation.
    pub fn verify(&self, phi: &LinearMap, tol: &TolerancePolicy) -> Result<bool> {
        let xpos = phi.source.level_positive(&self.x, tol)?;
        let vn: f64 = self.v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let val = phi.apply_level(&self.x).quad_form(&self.v).re;
        Ok(xpos && (vn - 1.0).abs() < 1e-9 && val < -tol.feas_margin)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpVerdict {
    pub cp: bool,
    /// Largest `t` with a Choi extension `⪰ t·I`.
    pub margin: f64,
    /// Choi blocks of a cp extension to the ambient algebra.
    pub extension: Option<Vec<CMatrix>>,
    pub witness: Option<CpWitness>,
}

/// Decides complete positivity of `φ : S → M_k` through a cp extension to
/// the ambient algebra.
pub fn cp_check(phi: &LinearMap, tol: &TolerancePolicy) -> Result<CpVerdict> {
    phi.check_star()?;
    let s = &phi.source;
    let k = phi.k;
    let mut p = SdpProblem::new(Sense::Max);
    let choi = ChoiVar::new(&mut p, s.shape(), k);
    let t = p.add_var();
    for c in &choi.blocks {
        let mut f = c.expr.clone();
        let n = f.rows();
        f.add_term(t, CMatrix::identity(n).scale_re(-1.0));
        p.add_psd(f);
    }
    for (b, img) in s.basis().iter().zip(phi.action.iter()) {
        let lhs = choi.apply(b);
        p.add_hermitian_eq(&lhs, &img.hermitian_parts().0);
    }
    p.set_objective(LinExpr::var(t));
    let r = solve_sdp(&p, tol);
    r.expect_optimal("cp extension")?;
    let margin = r.value_hi;
    let scale = phi.action.iter().map(CMatrix::max_abs).fold(1.0, f64::max);
    let cp = margin >= -tol.feas_margin * scale;
    if cp {
        return Ok(CpVerdict {
            cp,
            margin,
            extension: Some(choi.values(r.z())),
            witness: None,
        });
    }
    let witness = cp_witness(phi, tol)?;
    Ok(CpVerdict {
        cp: witness.is_none(),
        margin,
        extension: None,
        witness,
    })
}

/// Minimizes `Ω* φ^{(k)}(X) Ω` over `X ∈ M_k(S)⁺` with `Tr X = 1`, where
/// `Ω = Σ eᵢ ⊗ eᵢ`.
pub fn cp_witness(phi: &LinearMap, tol: &TolerancePolicy) -> Result<Option<CpWitness>> {
    let s = &phi.source;
    let k = phi.k;
    let mut p = SdpProblem::new(Sense::Min);
    let coeff: Vec<HermitianVar> = (0..s.dim()).map(|_| p.add_hermitian(k)).collect();
    let mut obj = LinExpr::default();
    let mut tr = LinExpr::default();
    for ((c, b), img) in coeff.iter().zip(s.basis().iter()).zip(phi.action.iter()) {
        obj = obj.plus(&c.expr.trace_with(&img.transpose()).0);
        tr = tr.plus(&c.expr.trace_with(&CMatrix::identity(k)).0.scaled(b.trace().re));
    }
    for blk in 0..s.shape().blocks().len() {
        let mut f = AffineMatrix::zeros(k * s.shape().blocks()[blk], k * s.shape().blocks()[blk]);
        for (c, b) in coeff.iter().zip(s.basis().iter()) {
            let hb = &b.blocks[blk];
            if hb.max_abs() == 0.0 {
                continue;
            }
            f.add(&c.expr.map(|m| m.kron(hb)));
        }
        p.add_psd(f);
    }
    p.add_eq(tr, 1.0);
    p.set_objective(obj);
    let r = solve_sdp(&p, tol);
    r.expect_optimal("cp witness")?;
    if r.value_hi >= -tol.feas_margin {
        return Ok(None);
    }
    let z = r.z();
    let cs: Vec<CMatrix> = coeff.iter().map(|c| c.value(z)).collect();
    let mut entries = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let mut e = s.zero();
            for (c, b) in cs.iter().zip(s.basis().iter()) {
                e = e.axpy(c.get(i, j), b);
            }
            entries.push(e);
        }
    }
    let x = MatrixLevelElement::new(k, entries)?;
    let norm = (k as f64).sqrt();
    let v: Vec<C64> = (0..k * k)
        .map(|idx| if idx / k == idx % k { C64::new(1.0 / norm, 0.0) } else { ZERO })
        .collect();
    let value = phi.apply_level(&x).quad_form(&v).re;
    Ok(Some(CpWitness { level: k, x, v, value }))
}

/// Complete positivity on a full `M_p` by the Choi matrix alone.
pub fn choi_test(phi: &LinearMap, tol: &TolerancePolicy) -> Result<bool> {
    let c = phi.choi_matrix()?;
    is_psd(&c.hermitian_parts().0, tol)
}

/// `f(x) = Tr(ρ x)` for an ambient matrix `ρ`, identified modulo `S⊥`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Functional {
    pub rho: BlockMatrix,
}

impl Functional {
    pub fn new(rho: BlockMatrix) -> Self {
        Self { rho }
    }

    pub fn apply(&self, x: &BlockMatrix) -> C64 {
        self.rho.trace_product(x)
    }

    /// `f*(x) = conj(f(x*))`.
    pub fn adjoint(&self) -> Self {
        Self {
            rho: self.rho.adjoint(),
        }
    }

    /// Representative in `S`: `Σ f(b_j) b_j`.
    pub fn canonical(&self, s: &ConcreteOperatorSystem) -> BlockMatrix {
        s.project(&self.rho)
    }

    pub fn equals_on(&self, other: &Self, s: &ConcreteOperatorSystem, tol: f64) -> bool {
        self.canonical(s).sub(&other.canonical(s)).max_abs() <= tol
    }
}

/// `S*` with a faithful state as unit.
#[derive(Debug, Clone)]
pub struct DualSystem {
    pub base: ConcreteOperatorSystem,
    pub unit: Functional,
}

impl DualSystem {
    /// Unit `Tr(·)/D`.
    pub fn new(base: &ConcreteOperatorSystem) -> Self {
        let d = base.total_dim() as f64;
        Self {
            base: base.clone(),
            unit: Functional::new(base.unit().scale_re(1.0 / d)),
        }
    }

    /// A user-chosen unit, accepted only if faithful.
    pub fn with_unit(base: &ConcreteOperatorSystem, unit: Functional, tol: &TolerancePolicy) -> Result<Self> {
        let m = min_on_positive_part(base, &unit, tol)?;
        if m <= tol.feas_margin {
            return Err(Error::InvalidInput(format!(
                "dual unit is not faithful: minimum {m:.3e} on unit-trace positives"
            )));
        }
        Ok(Self {
            base: base.clone(),
            unit,
        })
    }

    /// `min{Re f(p) : p ∈ S⁺, Tr p = 1}`.
    pub fn faithfulness(&self, tol: &TolerancePolicy) -> Result<f64> {
        min_on_positive_part(&self.base, &self.unit, tol)
    }

    /// `s ↦ (fᵢⱼ(s))` as a map `S → M_n`.
    pub fn array_map(&self, n: usize, f: &[Functional]) -> Result<LinearMap> {
        if f.len() != n * n {
            return Err(Error::ShapeMismatch(format!("need {} functionals", n * n)));
        }
        Ok(LinearMap::from_fn(&self.base, n, |b| {
            CMatrix::from_fn(n, n, |i, j| f[i * n + j].apply(b))
        }))
    }

    /// `(fᵢⱼ) ∈ M_n(S*)⁺` iff `s ↦ (fᵢⱼ(s))` is completely positive.
    pub fn cone_membership(&self, n: usize, f: &[Functional], tol: &TolerancePolicy) -> Result<bool> {
        let phi = self.array_map(n, f)?;
        Ok(cp_check(&phi, tol)?.cp)
    }
}

fn min_on_positive_part(s: &ConcreteOperatorSystem, f: &Functional, tol: &TolerancePolicy) -> Result<f64> {
    let mut p = SdpProblem::new(Sense::Min);
    let coeffs = p.add_vars(s.dim());
    let mut blocks: Vec<AffineMatrix> = s
        .shape()
        .blocks()
        .iter()
        .map(|&d| AffineMatrix::zeros(d, d))
        .collect();
    let mut obj = LinExpr::default();
    let mut tr = LinExpr::default();
    for (v, b) in coeffs.iter().zip(s.basis().iter()) {
        for (blk, m) in blocks.iter_mut().zip(b.blocks.iter()) {
            blk.add_term(*v, m.clone());
        }
        obj.add_term(*v, f.apply(b).re);
        tr.add_term(*v, b.trace().re);
    }
    for blk in blocks {
        p.add_psd(blk);
    }
    p.add_eq(tr, 1.0);
    p.set_objective(obj);
    let r = solve_sdp(&p, tol);
    r.expect_optimal("faithfulness")?;
    Ok(r.value_lo)
}

/// Shorthand for `dualConeMembership`.
pub fn dual_cone_membership(d: &DualSystem, n: usize, f: &[Functional], tol: &TolerancePolicy) -> Result<bool> {
    d.cone_membership(n, f, tol)
}

/// Membership of `X` in the cone of `M_n(S**)`: `Σ fᵢⱼ(xᵢⱼ) ≥ 0` for all
/// `(fᵢⱼ) ∈ M_n(S*)⁺`. Returns the normalized minimum.
pub fn bidual_value(s: &ConcreteOperatorSystem, x: &MatrixLevelElement, tol: &TolerancePolicy) -> Result<f64> {
    let n = x.n;
    let mut p = SdpProblem::new(Sense::Min);
    let g = ChoiVar::new(&mut p, s.shape(), n);
    for c in &g.blocks {
        p.add_psd(c.expr.clone());
    }
    p.add_eq(g.trace(), 1.0);
    let mut obj = LinExpr::default();
    for i in 0..n {
        for j in 0..n {
            let img = g.apply(x.get(i, j));
            obj = obj.plus(&img.entry(i, j).0);
        }
    }
    p.set_objective(obj);
    let r = solve_sdp(&p, tol);
    r.expect_optimal("bidual pairing")?;
    Ok(r.value_lo)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BidualReport {
    pub samples: usize,
    pub agreements: usize,
    pub disagreements: Vec<BidualDisagreement>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BidualDisagreement {
    pub level: usize,
    pub direct: bool,
    pub bidual: bool,
    pub bidual_value: f64,
}

/// Compares `M_n(S)⁺` with the double-dual cone on the given samples.
pub fn bidual_compare(
    s: &ConcreteOperatorSystem,
    samples: &[MatrixLevelElement],
    tol: &TolerancePolicy,
) -> Result<BidualReport> {
    let mut rep = BidualReport::default();
    for x in samples {
        let direct = s.level_positive(x, tol)?;
        let scale = x.entries.iter().map(BlockMatrix::max_abs).fold(1.0, f64::max);
        let v = bidual_value(s, x, tol)?;
        let bidual = v >= -tol.feas_margin * scale;
        rep.samples += 1;
        if direct == bidual {
            rep.agreements += 1;
        } else {
            rep.disagreements.push(BidualDisagreement {
                level: x.n,
                direct,
                bidual,
                bidual_value: v,
            });
        }
    }
    Ok(rep)
}

/// `L_f : S → T*`, `L_f(x)(y) = f(x ⊗ y)`, represented by the images of the
/// basis of `S` as functionals on `T`.
#[derive(Debug, Clone)]
pub struct LanceMap {
    pub left: ConcreteOperatorSystem,
    pub right: ConcreteOperatorSystem,
    pub images: Vec<Functional>,
}

/// `f` is a functional on the min-tensor ambient of `S ⊗ T`.
pub fn lance_functional_to_map(
    f: &Functional,
    left: &ConcreteOperatorSystem,
    right: &DualSystem,
) -> Result<LanceMap> {
    let t = &right.base;
    let shape = left.shape().kron(t.shape());
    if !f.rho.matches(&shape) {
        return Err(Error::ShapeMismatch("functional does not live on the tensor ambient".into()));
    }
    let images = left
        .basis()
        .iter()
        .map(|a| {
            let mut rep = t.zero();
            for c in t.basis() {
                rep = rep.axpy(f.apply(&a.kron(c)), c);
            }
            Functional::new(rep)
        })
        .collect();
    Ok(LanceMap {
        left: left.clone(),
        right: t.clone(),
        images,
    })
}

impl LanceMap {
    pub fn apply(&self, x: &BlockMatrix) -> Functional {
        let c = self.left.coefficients(x);
        let mut rep = self.right.zero();
        for (z, g) in c.iter().zip(self.images.iter()) {
            rep = rep.axpy(*z, &g.rho);
        }
        Functional::new(rep)
    }

    /// For `S = M_p`: the Choi array `[L_f(E_rs)]` lies in `M_p(T*)⁺`.
    pub fn is_cp(&self, tol: &TolerancePolicy) -> Result<bool> {
        let blocks = self.left.shape().blocks();
        if blocks.len() != 1 || !self.left.is_full_algebra() {
            return Err(Error::InvalidInput("cp test of L_f needs a full matrix algebra on the left".into()));
        }
        let p = blocks[0];
        let arr: Vec<Functional> = (0..p * p)
            .map(|idx| self.apply(&BlockMatrix::single(CMatrix::unit(p, idx / p, idx % p))))
            .collect();
        DualSystem::new(&self.right).cone_membership(p, &arr, tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tol() -> TolerancePolicy {
        TolerancePolicy::default()
    }

    fn rand_c(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMatrix {
        CMatrix::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn identity_and_transpose() {
        let t = tol();
        let id = LinearMap::identity(2);
        let v = cp_check(&id, &t).unwrap();
        assert!(v.cp);
        let ext = v.extension.unwrap();
        let b = BlockMatrix::single(CMatrix::unit(2, 0, 1));
        assert!((&apply_choi(&ext, 2, &b) - &CMatrix::unit(2, 0, 1)).max_abs() < 1e-7);

        let tr = LinearMap::transpose(2);
        let v = cp_check(&tr, &t).unwrap();
        assert!(!v.cp);
        let w = v.witness.unwrap();
        assert_eq!(w.level, 2);
        assert!(w.verify(&tr, &t).unwrap());
        assert!(!choi_test(&tr, &t).unwrap());
    }

    #[test]
    fn states_and_compressions_are_cp() {
        let t = tol();
        let s = crate::gallery::partial_matrix_7();
        let rho = BlockMatrix::single(CMatrix::diag_real(&[0.2, 0.5, 0.3]));
        assert!(cp_check(&LinearMap::functional(&s, &rho), &t).unwrap().cp);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = rand_c(&mut rng, 2, 3);
        assert!(cp_check(&LinearMap::compression(&s, &v), &t).unwrap().cp);
    }

    #[test]
    fn star_preservation_enforced() {
        let s = ConcreteOperatorSystem::matrix_algebra(2);
        let phi = LinearMap::from_fn(&s, 2, |b| b.blocks[0].scale(crate::linalg::I));
        assert!(matches!(cp_check(&phi, &tol()), Err(Error::NotStarPreserving(_))));
    }

    #[test]
    fn samples_round_trip() {
        let s = ConcreteOperatorSystem::matrix_algebra(2);
        let inputs: Vec<BlockMatrix> = s.basis().iter().map(|b| b.scale_re(2.0)).collect();
        let outputs: Vec<CMatrix> = inputs.iter().map(|x| x.blocks[0].transpose()).collect();
        let m = LinearMap::from_samples(&s, 2, &inputs, &outputs).unwrap();
        let e12 = BlockMatrix::single(CMatrix::unit(2, 0, 1));
        assert!((&m.apply(&e12) - &CMatrix::unit(2, 1, 0)).max_abs() < 1e-10);
    }

    #[test]
    fn dual_cone_examples() {
        let t = tol();
        let m2 = ConcreteOperatorSystem::matrix_algebra(2);
        let d = DualSystem::new(&m2);
        let st = Functional::new(BlockMatrix::single(CMatrix::diag_real(&[0.7, 0.3])));
        assert!(d.cone_membership(1, std::slice::from_ref(&st), &t).unwrap());
        let neg = Functional::new(st.rho.scale_re(-1.0));
        assert!(!d.cone_membership(1, &[neg], &t).unwrap());
        assert!(d.faithfulness(&t).unwrap() > 0.0);
        let bad = Functional::new(BlockMatrix::single(CMatrix::diag_real(&[1.0, 0.0])));
        assert!(DualSystem::with_unit(&m2, bad, &t).is_err());
    }

    #[test]
    fn full_algebra_functional_positivity_is_psd() {
        // On M_2 a functional Tr(ρ·) is positive iff ρ ⪰ 0.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = tol();
        let m2 = ConcreteOperatorSystem::matrix_algebra(2);
        let d = DualSystem::new(&m2);
        for _ in 0..20 {
            let h = rand_c(&mut rng, 2, 2).hermitian_parts().0;
            let f = Functional::new(BlockMatrix::single(h.clone()));
            let direct = is_psd(&h, &t).unwrap();
            assert_eq!(d.cone_membership(1, &[f], &t).unwrap(), direct);
        }
    }

    #[test]
    fn lance_examples() {
        let t = tol();
        let m2 = ConcreteOperatorSystem::matrix_algebra(2);
        let d = DualSystem::new(&m2);
        // Product state.
        let g = CMatrix::diag_real(&[0.6, 0.4]);
        let h = CMatrix::diag_real(&[0.1, 0.9]);
        let f = Functional::new(BlockMatrix::single(g.kron(&h)));
        let l = lance_functional_to_map(&f, &m2, &d).unwrap();
        let x = BlockMatrix::single(CMatrix::from_real(&[vec![1.0, 2.0], vec![2.0, -1.0]]));
        let img = l.apply(&x);
        let gx = x.blocks[0].trace_product(&g);
        assert!(img.equals_on(&Functional::new(BlockMatrix::single(h.scale(gx))), &m2, 1e-10));
        assert!(l.is_cp(&t).unwrap());
        // Zero functional.
        let z = lance_functional_to_map(&Functional::new(BlockMatrix::zeros(&BlockShape(vec![4]))), &m2, &d).unwrap();
        assert!(z.images.iter().all(|g| g.rho.max_abs() == 0.0));
        // PSD density on M2 ⊗ M2.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_c(&mut rng, 4, 4);
        let rho = &a * &a.adjoint();
        let l = lance_functional_to_map(&Functional::new(BlockMatrix::single(rho)), &m2, &d).unwrap();
        assert!(l.is_cp(&t).unwrap());
    }

    #[test]
    fn bidual_unit_positive() {
        let s = ConcreteOperatorSystem::diagonal(3);
        let v = bidual_value(&s, &MatrixLevelElement::level1(s.unit()), &tol()).unwrap();
        assert!(v > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn cp_maps_attain_norm_at_unit(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = tol();
            let s = ConcreteOperatorSystem::full(BlockShape(vec![2, 1]), "A").unwrap();
            let v = rand_c(&mut rng, 2, 3);
            let phi = LinearMap::compression(&s, &v);
            let verdict = cp_check(&phi, &t).unwrap();
            prop_assert!(verdict.cp);
            let e = phi.apply(&s.unit());
            prop_assert!(is_psd(&e, &t).unwrap());
            let ne = e.spectral_norm();
            for _ in 0..5 {
                let x = BlockMatrix::from_blocks(vec![rand_c(&mut rng, 2, 2), rand_c(&mut rng, 1, 1)]);
                let x = x.scale_re(1.0 / x.spectral_norm());
                prop_assert!(phi.apply(&x).spectral_norm() <= ne * (1.0 + 1e-6));
            }
        }

        #[test]
        fn composition_closure(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = tol();
            let s = crate::gallery::partial_matrix_7();
            let phi = LinearMap::compression(&s, &rand_c(&mut rng, 2, 3));
            let m2 = ConcreteOperatorSystem::matrix_algebra(2);
            let psi = LinearMap::compression(&m2, &rand_c(&mut rng, 2, 2));
            prop_assert!(cp_check(&phi, &t).unwrap().cp);
            prop_assert!(cp_check(&psi, &t).unwrap().cp);
            prop_assert!(cp_check(&phi.then(&psi).unwrap(), &t).unwrap().cp);
        }

        #[test]
        fn extension_agrees_with_choi(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = tol();
            let p = 2;
            let m = ConcreteOperatorSystem::matrix_algebra(p);
            let c = if seed % 2 == 0 {
                let g = rand_c(&mut rng, p * p, p * p);
                &g * &g.adjoint()
            } else {
                rand_c(&mut rng, p * p, p * p).hermitian_parts().0
            };
            let phi = LinearMap::from_fn(&m, p, |b| apply_choi(std::slice::from_ref(&c), p, b));
            prop_assert_eq!(cp_check(&phi, &t).unwrap().cp, choi_test(&phi, &t).unwrap());
        }

        #[test]
        fn dual_unit_faithful_on_samples(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = crate::gallery::partial_matrix_7();
            let d = DualSystem::new(&s);
            let h = s.from_real_coefficients(&(0..7).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            let p = s.unit().scale_re(h.spectral_norm() + 0.01).add(&h);
            prop_assert!(d.unit.apply(&p).re > 0.0);
        }
    }
}
