//! Kernels `J ⊆ S` and quotient systems `S/J`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_sdp, AffineMatrix, ConicStatus, HermitianVar, LinExpr, SdpProblem, Sense};
use crate::dual::{ChoiVar, Functional, LinearMap};
use crate::error::{Error, Result};
use crate::linalg::{real_span_basis, BlockMatrix, BlockShape, CMatrix, TolerancePolicy, C64, I, ONE, ZERO};
use crate::system::{ConcreteOperatorSystem, MatrixLevelElement, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KernelVerdict {
    Kernel,
    NotKernel,
    Unknown,
}

/// A `*`-closed subspace `J ⊆ S` not containing the unit.
#[derive(Debug, Clone)]
pub struct KernelSubspace {
    /// The generators as given (complex span is `J`).
    pub generators: Vec<BlockMatrix>,
    /// Orthonormal hermitian basis of `J_h`.
    pub basis: Vec<BlockMatrix>,
    pub verdict: KernelVerdict,
    /// For `Kernel`: states whose common kernel in `S` is `J`.
    pub states: Vec<StateVector>,
    /// For `NotKernel`: an element outside `J` on which every `J`-vanishing
    /// state vanishes, and the whole space of such directions found.
    pub witness: Option<BlockMatrix>,
    pub witness_space: Vec<BlockMatrix>,
}

fn complex_inner(a: &BlockMatrix, b: &BlockMatrix) -> C64 {
    a.adjoint().trace_product(b)
}

fn complex_rank(mats: &[BlockMatrix]) -> usize {
    let mut basis: Vec<BlockMatrix> = Vec::new();
    for m in mats {
        let scale = m.frobenius();
        if scale == 0.0 {
            continue;
        }
        let mut v = m.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = complex_inner(b, &v);
                v = v.axpy(-c, b);
            }
        }
        let r = v.frobenius();
        if r > 1e-10 * scale.max(1.0) {
            basis.push(v.scale_re(1.0 / r));
        }
    }
    basis.len()
}

impl KernelSubspace {
    /// Validates `J ⊆ S`, `J* = J` and `e ∉ J`; the verdict starts `Unknown`.
    pub fn new(s: &ConcreteOperatorSystem, generators: Vec<BlockMatrix>) -> Result<Self> {
        let mut parts = Vec::with_capacity(2 * generators.len());
        for g in &generators {
            s.element(g.clone())?;
            let (h, k) = g.hermitian_parts();
            parts.push(h);
            parts.push(k);
        }
        let basis = real_span_basis(&parts);
        if basis.len() != complex_rank(&generators) {
            return Err(Error::InvalidInput("kernel candidate is not closed under adjoints".into()));
        }
        let e = s.unit();
        let proj = crate::linalg::project_to_span(&e, &basis);
        if proj.sub(&e).frobenius() <= 1e-9 * e.frobenius() {
            return Err(Error::UnitInKernel);
        }
        Ok(Self {
            generators,
            basis,
            verdict: KernelVerdict::Unknown,
            states: vec![],
            witness: None,
            witness_space: vec![],
        })
    }

    pub fn zero(s: &ConcreteOperatorSystem) -> Self {
        Self::new(s, vec![]).expect("zero subspace")
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn contains(&self, x: &BlockMatrix) -> bool {
        let (h, k) = x.hermitian_parts();
        let ph = crate::linalg::project_to_span(&h, &self.basis);
        let pk = crate::linalg::project_to_span(&k, &self.basis);
        ph.sub(&h).frobenius() + pk.sub(&k).frobenius() <= 1e-9 * x.frobenius().max(1.0)
    }

    /// Coefficients of `k ∈ J` in the user's generators (least squares).
    pub fn user_coefficients(&self, k: &BlockMatrix) -> Vec<C64> {
        let g = &self.generators;
        let m = g.len();
        if m == 0 {
            return vec![];
        }
        let a = DMatrix::from_fn(m, m, |i, j| complex_inner(&g[i], &g[j]));
        let b = nalgebra::DVector::from_iterator(m, g.iter().map(|gi| complex_inner(gi, k)));
        match a.svd(true, true).solve(&b, 1e-12) {
            Ok(x) => x.iter().copied().collect(),
            Err(_) => vec![ZERO; m],
        }
    }

    /// Whether every `J`-vanishing state vanishes on `x ∉ J`.
    pub fn annihilated_by_all_states(&self, s: &ConcreteOperatorSystem, x: &BlockMatrix, tol: &TolerancePolicy) -> Result<bool> {
        if self.contains(x) {
            return Ok(false);
        }
        Ok(s.find_state(&self.basis, Some(x), tol)?.is_none())
    }

    pub fn to_json(&self, s: &ConcreteOperatorSystem) -> KernelJson {
        KernelJson {
            system: s.name().to_string(),
            basis: self.generators.clone(),
        }
    }

    pub fn from_json(s: &ConcreteOperatorSystem, j: &KernelJson) -> Result<Self> {
        Self::new(s, j.basis.clone())
    }
}

/// `{"system", "basis"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelJson {
    pub system: String,
    pub basis: Vec<BlockMatrix>,
}

/// Orthonormal basis of `{a ∈ ℝᵐ : a·c = 0}`.
fn orthogonal_complement(c: &[f64]) -> Vec<Vec<f64>> {
    let m = c.len();
    let nc = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut basis: Vec<Vec<f64>> = vec![c.iter().map(|x| x / nc).collect()];
    let mut out = Vec::new();
    for i in 0..m {
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = b.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b.iter()).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v.clone());
            out.push(v);
        }
        if out.len() + 1 == m {
            break;
        }
    }
    out
}

/// Certifies `J` as a kernel by greedily collecting separating states, or
/// finds a direction no `J`-vanishing state can see.
pub fn is_kernel(s: &ConcreteOperatorSystem, j: &KernelSubspace, tol: &TolerancePolicy) -> Result<KernelSubspace> {
    let mut out = j.clone();
    out.states.clear();
    out.witness = None;
    out.witness_space.clear();
    let mut w = s.complement_in(&j.basis);
    // Invariant: J ⊕ span(invisible) ⊕ span(w) is the common kernel of the
    // states found so far, and every element of `invisible` is killed by all
    // J-vanishing states.
    let mut invisible: Vec<BlockMatrix> = Vec::new();
    while !w.is_empty() {
        let target = w[0].clone();
        match s.find_state(&j.basis, Some(&target), tol)? {
            None => {
                invisible.push(target);
                w.remove(0);
            }
            Some(st) => {
                let c: Vec<f64> = w.iter().map(|x| st.apply(x).re).collect();
                w = orthogonal_complement(&c)
                    .into_iter()
                    .map(|a| {
                        let mut v = s.zero();
                        for (ai, wi) in a.iter().zip(w.iter()) {
                            v = v.axpy(C64::new(*ai, 0.0), wi);
                        }
                        v
                    })
                    .collect();
                out.states.push(st);
            }
        }
    }
    if invisible.is_empty() {
        out.verdict = KernelVerdict::Kernel;
    } else {
        out.verdict = KernelVerdict::NotKernel;
        out.witness = Some(sparse_witness(s, &j.basis, &invisible).unwrap_or_else(|| invisible[0].clone()));
        out.witness_space = invisible;
    }
    Ok(out)
}

/// A matrix unit of the ambient algebra in `span_ℂ(W) + J` but not in `J`:
/// every `J`-vanishing state kills it.
fn sparse_witness(s: &ConcreteOperatorSystem, j: &[BlockMatrix], w: &[BlockMatrix]) -> Option<BlockMatrix> {
    let mut all = j.to_vec();
    all.extend(w.iter().cloned());
    let span = real_span_basis(&all);
    let inside = |x: &BlockMatrix| {
        let (h, k) = x.hermitian_parts();
        let ph = crate::linalg::project_to_span(&h, &span);
        let pk = crate::linalg::project_to_span(&k, &span);
        ph.sub(&h).frobenius() + pk.sub(&k).frobenius() <= 1e-9
    };
    let jb = real_span_basis(j);
    let in_j = |x: &BlockMatrix| {
        let (h, k) = x.hermitian_parts();
        let ph = crate::linalg::project_to_span(&h, &jb);
        let pk = crate::linalg::project_to_span(&k, &jb);
        ph.sub(&h).frobenius() + pk.sub(&k).frobenius() <= 1e-9
    };
    s.shape().matrix_units().into_iter().find(|e| inside(e) && !in_j(e))
}

/// `S/J`, genuine when `J` is a certified kernel, formal otherwise.
#[derive(Debug, Clone)]
pub struct QuotientSystem {
    pub system: ConcreteOperatorSystem,
    pub kernel: KernelSubspace,
    /// Orthonormal complement of `J_h` in `S_h`: coset representatives.
    pub complement: Vec<BlockMatrix>,
    pub genuine: bool,
}

/// A norm value with its certified interval and the optimizing `J`
/// coefficients (per matrix entry, in the user's generators).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormValue {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub j_coefficients: Vec<Vec<C64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CConeResult {
    pub member: bool,
    pub eps_star: f64,
    pub eps_lo: f64,
    pub eps_hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DConeResult {
    pub member: bool,
    /// Best `t` with `X + K − t·I ⪰ 0` over boxed `K`.
    pub t: f64,
    pub coefficient_bound: f64,
}

/// Bound on `J`-coefficients in the algebraic cone test, relative to `‖X‖`.
pub const D_CONE_BOX: f64 = 1e3;

impl QuotientSystem {
    pub fn new(s: &ConcreteOperatorSystem, kernel: KernelSubspace) -> Result<Self> {
        if kernel.verdict != KernelVerdict::Kernel {
            return Err(Error::NotAKernel);
        }
        Ok(Self::build(s, kernel, true))
    }

    /// Allows non-kernels; norm operations will refuse it.
    pub fn formal(s: &ConcreteOperatorSystem, kernel: KernelSubspace) -> Self {
        let genuine = kernel.verdict == KernelVerdict::Kernel;
        Self::build(s, kernel, genuine)
    }

    fn build(s: &ConcreteOperatorSystem, kernel: KernelSubspace, genuine: bool) -> Self {
        let complement = s.complement_in(&kernel.basis);
        Self {
            system: s.clone(),
            kernel,
            complement,
            genuine,
        }
    }

    pub fn dim(&self) -> usize {
        self.system.dim() - self.kernel.dim()
    }

    fn require_genuine(&self) -> Result<()> {
        if self.genuine {
            Ok(())
        } else {
            Err(Error::NotAKernel)
        }
    }

    /// Canonical representative of `x + J`.
    pub fn representative(&self, x: &BlockMatrix) -> BlockMatrix {
        let (h, k) = x.hermitian_parts();
        let ph = crate::linalg::project_to_span(&h, &self.complement);
        let pk = crate::linalg::project_to_span(&k, &self.complement);
        ph.axpy(I, &pk)
    }

    fn check_level(&self, x: &MatrixLevelElement, hermitian: bool) -> Result<()> {
        for e in &x.entries {
            self.system.element(e.clone())?;
        }
        if hermitian && !x.is_hermitian(1e-9 * x.assemble().max_abs().max(1.0)) {
            return Err(Error::NonHermitian {
                asymmetry: x.assemble().hermitian_asymmetry(),
            });
        }
        Ok(())
    }

    fn inflated(&self, n: usize) -> BlockShape {
        self.system.shape().inflate(n)
    }

    /// `Σ H_k ⊗ h_k`, `H_k` hermitian, one affine matrix per inflated block.
    fn hermitian_j(&self, p: &mut SdpProblem, n: usize) -> (Vec<HermitianVar>, Vec<AffineMatrix>) {
        let shape = self.inflated(n);
        let mut blocks: Vec<AffineMatrix> = shape.blocks().iter().map(|&d| AffineMatrix::zeros(d, d)).collect();
        let mut vars = Vec::new();
        for h in &self.kernel.basis {
            let hv = p.add_hermitian(n);
            for (b, blk) in blocks.iter_mut().enumerate() {
                let hb = &h.blocks[b];
                if hb.max_abs() == 0.0 {
                    continue;
                }
                blk.add(&hv.expr.map(|m| m.kron(hb)));
            }
            vars.push(hv);
        }
        (vars, blocks)
    }

    /// `Σ C_k ⊗ h_k` with complex `C_k`; returns the per-generator variable
    /// lists (re, im per entry) and the affine blocks.
    #[allow(clippy::type_complexity)]
    fn complex_j(&self, p: &mut SdpProblem, n: usize) -> (Vec<Vec<(usize, usize)>>, Vec<AffineMatrix>) {
        let shape = self.inflated(n);
        let mut blocks: Vec<AffineMatrix> = shape.blocks().iter().map(|&d| AffineMatrix::zeros(d, d)).collect();
        let mut vars = Vec::new();
        for h in &self.kernel.basis {
            let mut list = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let re = p.add_var();
                    let im = p.add_var();
                    let eij = CMatrix::unit(n, i, j);
                    for (b, blk) in blocks.iter_mut().enumerate() {
                        let hb = &h.blocks[b];
                        if hb.max_abs() == 0.0 {
                            continue;
                        }
                        let t = eij.kron(hb);
                        blk.add_term(im, t.scale(I));
                        blk.add_term(re, t);
                    }
                    list.push((re, im));
                }
            }
            vars.push(list);
        }
        (vars, blocks)
    }

    /// `Y ⪰ 0` on `M_n(A)` with `Tr Y = 1` annihilating `M_n(J)`.
    fn annihilating_state(&self, p: &mut SdpProblem, n: usize) -> Vec<HermitianVar> {
        let shape = self.inflated(n);
        let y = ConcreteOperatorSystem::ambient_variable(p, &shape, true);
        let (tr, _) = ConcreteOperatorSystem::pairing(&y, &BlockMatrix::identity(&shape));
        p.add_eq(tr, 1.0);
        let hb = crate::linalg::hermitian_basis(n);
        for h in &self.kernel.basis {
            for a in &hb {
                let k = BlockMatrix::from_blocks(h.blocks.iter().map(|blk| a.kron(blk)).collect());
                let (re, _) = ConcreteOperatorSystem::pairing(&y, &k);
                p.add_eq(re, 0.0);
            }
        }
        y
    }

    /// Membership in `D_n`: some `K ∈ M_n(J)` makes `X + K ⪰ 0`, searched
    /// with `J`-coefficients bounded by `D_CONE_BOX·max(1, ‖X‖)`.
    pub fn d_cone_membership(&self, x: &MatrixLevelElement, tol: &TolerancePolicy) -> Result<DConeResult> {
        self.check_level(x, true)?;
        let n = x.n;
        let a = x.assemble().hermitian_parts().0;
        let scale = a.spectral_norm().max(1.0);
        let bound = D_CONE_BOX * scale;
        let mut p = SdpProblem::new(Sense::Max);
        let (vars, kblocks) = self.hermitian_j(&mut p, n);
        let t = p.add_var();
        for (kb, ab) in kblocks.into_iter().zip(a.blocks.iter()) {
            let mut f = kb;
            f.add_constant(ab);
            let d = f.rows();
            f.add_term(t, CMatrix::identity(d).scale_re(-1.0));
            p.add_psd(f);
        }
        for hv in &vars {
            for &v in &hv.vars {
                for s in [1.0, -1.0] {
                    let mut f = AffineMatrix::constant(CMatrix::diag_real(&[bound]));
                    f.add_term(v, CMatrix::diag_real(&[s]));
                    p.add_psd(f);
                }
            }
        }
        p.set_objective(LinExpr::var(t));
        let r = solve_sdp(&p, tol);
        r.expect_optimal("algebraic quotient cone")?;
        let tv = r.value_hi;
        Ok(DConeResult {
            member: tv >= -tol.feas_margin * scale,
            t: tv,
            coefficient_bound: bound,
        })
    }

    /// `ε* = inf{ε ≥ 0 : εI + X + K ⪰ 0 for some K ∈ M_n(J)}`, computed as
    /// `max(0, −min ⟨X, Y⟩)` over `J`-annihilating states `Y` of `M_n(A)`.
    pub fn eps_star(&self, x: &MatrixLevelElement, tol: &TolerancePolicy) -> Result<(f64, f64, f64)> {
        self.check_level(x, true)?;
        let n = x.n;
        let a = x.assemble().hermitian_parts().0;
        let mut p = SdpProblem::new(Sense::Min);
        let y = self.annihilating_state(&mut p, n);
        let (obj, _) = ConcreteOperatorSystem::pairing(&y, &a);
        p.set_objective(obj);
        let r = solve_sdp(&p, tol);
        if r.status == ConicStatus::Infeasible {
            // No state kills M_n(J): every coset is positive.
            return Ok((0.0, 0.0, 0.0));
        }
        r.expect_optimal("Archimedean quotient cone")?;
        let lo = (-r.value_hi).max(0.0);
        let hi = (-r.value_lo).max(0.0);
        Ok(((-r.value()).max(0.0), lo, hi))
    }

    pub fn c_cone_membership(&self, x: &MatrixLevelElement, tol: &TolerancePolicy) -> Result<CConeResult> {
        let (eps, lo, hi) = self.eps_star(x, tol)?;
        Ok(CConeResult {
            member: eps <= tol.bisect_tol,
            eps_star: eps,
            eps_lo: lo,
            eps_hi: hi,
        })
    }

    /// `inf{λ ≥ 0 : λe ± x ∈ C₁(S/J)}`.
    pub fn order_seminorm(&self, x: &BlockMatrix, tol: &TolerancePolicy) -> Result<f64> {
        self.system.order_seminorm_hermitian(
            x,
            |m| Ok(self.c_cone_membership(&MatrixLevelElement::level1(m.clone()), tol)?.member),
            tol,
        )
    }

    /// `‖X + M_n(J)‖_osy = inf{λ : [[λI, X], [X*, λI]] ∈ C_{2n}(S/J)}`, i.e.
    /// the largest `⟨[[0, X], [X*, 0]], Y⟩` over `J`-annihilating states `Y`
    /// of `M_{2n}(A)`.
    pub fn osy_norm(&self, x: &MatrixLevelElement, tol: &TolerancePolicy) -> Result<NormValue> {
        self.require_genuine()?;
        self.check_level(x, false)?;
        let dil = x.norm_dilation(0.0, &self.system.unit()).assemble();
        let mut p = SdpProblem::new(Sense::Max);
        let y = self.annihilating_state(&mut p, 2 * x.n);
        let (obj, _) = ConcreteOperatorSystem::pairing(&y, &dil);
        p.set_objective(obj);
        let r = solve_sdp(&p, tol);
        r.expect_optimal("osy norm")?;
        Ok(NormValue {
            value: r.value().max(0.0),
            lo: r.value_lo.max(0.0),
            hi: r.value_hi.max(0.0),
            j_coefficients: vec![],
        })
    }

    /// `‖X + M_n(J)‖_osp = inf{‖X + K‖ : K ∈ M_n(J)}`.
    pub fn osp_norm(&self, x: &MatrixLevelElement, tol: &TolerancePolicy) -> Result<NormValue> {
        self.require_genuine()?;
        self.check_level(x, false)?;
        let n = x.n;
        let a = x.assemble();
        let mut p = SdpProblem::new(Sense::Min);
        let (vars, kblocks) = self.complex_j(&mut p, n);
        let lam = p.add_var();
        for (kb, ab) in kblocks.into_iter().zip(a.blocks.iter()) {
            let mut upper = kb;
            upper.add_constant(ab);
            let d = upper.rows();
            let lower = upper.adjoint();
            let mut f = AffineMatrix::zeros(2 * d, 2 * d);
            f.add(&upper.map(|m| {
                let mut big = CMatrix::zeros(2 * d, 2 * d);
                big.set_block(0, d, m);
                big
            }));
            f.add(&lower.map(|m| {
                let mut big = CMatrix::zeros(2 * d, 2 * d);
                big.set_block(d, 0, m);
                big
            }));
            f.add_term(lam, CMatrix::identity(2 * d));
            p.add_psd(f);
        }
        p.set_objective(LinExpr::var(lam));
        let r = solve_sdp(&p, tol);
        r.expect_optimal("osp norm")?;
        let z = r.z();
        let k = self.j_value(&vars, n, z);
        let coeffs = k.entries.iter().map(|e| self.kernel.user_coefficients(e)).collect();
        Ok(NormValue {
            value: r.value().max(0.0),
            lo: r.value_lo.max(0.0),
            hi: r.value_hi.max(0.0),
            j_coefficients: coeffs,
        })
    }

    fn j_value(&self, vars: &[Vec<(usize, usize)>], n: usize, z: &[f64]) -> MatrixLevelElement {
        let mut entries = vec![self.system.zero(); n * n];
        for (h, list) in self.kernel.basis.iter().zip(vars.iter()) {
            for (idx, &(re, im)) in list.iter().enumerate() {
                entries[idx] = entries[idx].axpy(C64::new(z[re], z[im]), h);
            }
        }
        MatrixLevelElement { n, entries }
    }

    /// A functional `f` on `A` with `‖f‖ ≤ 1`, `f(J) = 0` and
    /// `f(x) = ‖x + J‖_osp`.
    pub fn osp_norming_functional(&self, x: &BlockMatrix, tol: &TolerancePolicy) -> Result<(Functional, f64)> {
        self.require_genuine()?;
        self.system.element(x.clone())?;
        let shape = self.system.shape().clone();
        let mut p = SdpProblem::new(Sense::Max);
        let mut rho_parts: Vec<AffineMatrix> = Vec::new();
        let mut trace_sum = LinExpr::default();
        for &d in shape.blocks() {
            let mut rho = AffineMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    let re = p.add_var();
                    let im = p.add_var();
                    rho.add_term(re, CMatrix::unit(d, i, j));
                    rho.add_term(im, CMatrix::unit(d, i, j).scale(I));
                }
            }
            let w1 = p.add_hermitian(d);
            let w2 = p.add_hermitian(d);
            let mut f = AffineMatrix::zeros(2 * d, 2 * d);
            let place = |m: &AffineMatrix, r: usize, c: usize| {
                m.map(|x| {
                    let mut big = CMatrix::zeros(2 * d, 2 * d);
                    big.set_block(r, c, x);
                    big
                })
            };
            f.add(&place(&w1.expr, 0, 0));
            f.add(&place(&w2.expr, d, d));
            f.add(&place(&rho, 0, d));
            f.add(&place(&rho.adjoint(), d, 0));
            p.add_psd(f);
            trace_sum = trace_sum
                .plus(&w1.expr.trace_with(&CMatrix::identity(d)).0)
                .plus(&w2.expr.trace_with(&CMatrix::identity(d)).0);
            rho_parts.push(rho);
        }
        let mut slack = AffineMatrix::constant(CMatrix::diag_real(&[2.0]));
        for (v, c) in &trace_sum.terms {
            slack.add_term(*v, CMatrix::diag_real(&[-c]));
        }
        p.add_psd(slack);
        let pair = |m: &BlockMatrix| {
            let mut re = LinExpr::default();
            let mut im = LinExpr::default();
            for (r, b) in rho_parts.iter().zip(m.blocks.iter()) {
                let (a, c) = r.trace_with(b);
                re = re.plus(&a);
                im = im.plus(&c);
            }
            (re, im)
        };
        for h in &self.kernel.basis {
            let (re, im) = pair(h);
            p.add_eq(re, 0.0);
            p.add_eq(im, 0.0);
        }
        let (obj, _) = pair(x);
        p.set_objective(obj);
        let r = solve_sdp(&p, tol);
        r.expect_optimal("osp norming functional")?;
        let z = r.z();
        // Tr(ρ x) pairing: the functional's matrix is ρ itself.
        let rho = BlockMatrix::from_blocks(rho_parts.iter().map(|m| m.eval(z)).collect());
        Ok((Functional::new(rho), r.value()))
    }

    /// Per-coset comparison of the algebraic and Archimedean cones and of
    /// the osp value against the representative it returns.
    pub fn proximinality_probe(&self, samples: &[MatrixLevelElement], tol: &TolerancePolicy) -> Result<ProximinalityReport> {
        let mut rep = ProximinalityReport::default();
        for x in samples {
            let d = self.d_cone_membership(x, tol)?;
            let c = self.c_cone_membership(x, tol)?;
            let order_gap = c.member && !d.member;
            let norm_gap = if self.genuine {
                let osp = self.osp_norm(x, tol)?;
                let mut k = Vec::with_capacity(x.n * x.n);
                for (e, coeffs) in x.entries.iter().zip(osp.j_coefficients.iter()) {
                    let mut v = e.clone();
                    for (g, z) in self.kernel.generators.iter().zip(coeffs.iter()) {
                        v = v.axpy(*z, g);
                    }
                    k.push(v);
                }
                let achieved = MatrixLevelElement { n: x.n, entries: k }.assemble().spectral_norm();
                Some((achieved - osp.value).abs())
            } else {
                None
            };
            if order_gap {
                rep.order_gaps += 1;
                rep.order_gap_witnesses.push(x.clone());
            }
            rep.max_d_c_eps = rep.max_d_c_eps.max(if d.member { 0.0 } else if c.member { c.eps_star.max(-d.t) } else { 0.0 });
            if let Some(g) = norm_gap {
                rep.max_norm_gap = rep.max_norm_gap.max(g);
            }
            rep.samples += 1;
        }
        Ok(rep)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProximinalityReport {
    pub samples: usize,
    /// Cosets in `C_n` but not `D_n`.
    pub order_gaps: usize,
    pub order_gap_witnesses: Vec<MatrixLevelElement>,
    pub max_d_c_eps: f64,
    pub max_norm_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JDecResult {
    pub status: ConicStatus,
    /// `min max{‖ψ₁‖, ‖ψ₂‖}` at the chosen target dimension.
    pub jdec: Option<f64>,
    /// The same program without the `J` constraints: the cb norm.
    pub cb: f64,
    /// `jdec / cb`: a lower bound for the least `J`-decomposable constant of
    /// any map this one factors through with norm one.
    pub ratio: Option<f64>,
}

/// `‖φ‖_{J-dec}` for `φ : S → M_k` vanishing on `J`.
pub fn j_dec_norm(phi: &LinearMap, kernel: &KernelSubspace, tol: &TolerancePolicy) -> Result<JDecResult> {
    let scale = phi.action.iter().map(CMatrix::max_abs).fold(1.0, f64::max);
    let resid = kernel
        .basis
        .iter()
        .map(|h| phi.apply(h).max_abs())
        .fold(0.0, f64::max);
    if resid > tol.feas_margin * scale {
        return Err(Error::KernelNotAnnihilated(resid));
    }
    let cb = decomposition_program(phi, &[], tol)?;
    let cb = cb.ok_or_else(|| Error::SolverFail("cb-norm program infeasible".into()))?;
    let jd = decomposition_program(phi, &kernel.basis, tol)?;
    Ok(JDecResult {
        status: if jd.is_some() { ConicStatus::Optimal } else { ConicStatus::Infeasible },
        jdec: jd,
        cb,
        ratio: jd.map(|v| if cb > 0.0 { v / cb } else if v > 0.0 { f64::INFINITY } else { 1.0 }),
    })
}

fn decomposition_program(phi: &LinearMap, kill: &[BlockMatrix], tol: &TolerancePolicy) -> Result<Option<f64>> {
    let s = &phi.source;
    let k = phi.k;
    let mut p = SdpProblem::new(Sense::Min);
    let choi = ChoiVar::new(&mut p, s.shape(), 2 * k);
    for c in &choi.blocks {
        p.add_psd(c.expr.clone());
    }
    let corner = |m: &AffineMatrix, r: usize, c: usize| m.map(|x| x.block(r, c, k, k));
    for (b, img) in s.basis().iter().zip(phi.action.iter()) {
        let full = choi.apply(b);
        p.add_matrix_eq(&corner(&full, 0, k), img);
    }
    for h in kill {
        let full = choi.apply(h);
        let zero = CMatrix::zeros(k, k);
        p.add_hermitian_eq(&corner(&full, 0, 0), &zero);
        p.add_hermitian_eq(&corner(&full, k, k), &zero);
    }
    let t = p.add_var();
    let fe = choi.apply(&s.unit());
    for off in [0, k] {
        let mut f = corner(&fe, off, off).scaled(-ONE);
        f.add_term(t, CMatrix::identity(k));
        p.add_psd(f);
    }
    p.set_objective(LinExpr::var(t));
    let r = solve_sdp(&p, tol);
    match r.status {
        ConicStatus::Infeasible => Ok(None),
        _ => {
            r.expect_optimal("decomposition program")?;
            Ok(Some(r.value()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EmbeddingVerdict {
    OrderEmbedding,
    NotEmbedding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub verdict: EmbeddingVerdict,
    pub kernel_dim: usize,
    pub samples: usize,
    /// `X` with `π(X) ⪰ 0` in `A/I` but `X + M_n(J) ∉ C_n(S/J)`.
    pub witness: Option<MatrixLevelElement>,
    pub witness_eps_star: Option<f64>,
}

/// `J = S ∩ I` for an ideal `I` made of whole blocks.
pub fn ideal_intersection(s: &ConcreteOperatorSystem, ideal_blocks: &[usize]) -> Vec<BlockMatrix> {
    let keep: Vec<usize> = (0..s.shape().blocks().len()).filter(|b| !ideal_blocks.contains(b)).collect();
    let basis = s.basis();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for &b in &keep {
        let d = s.shape().blocks()[b];
        for i in 0..d {
            for j in 0..d {
                rows.push(basis.iter().map(|m| m.blocks[b].get(i, j).re).collect());
                rows.push(basis.iter().map(|m| m.blocks[b].get(i, j).im).collect());
            }
        }
    }
    let m = basis.len();
    if rows.is_empty() {
        return basis.to_vec();
    }
    let a = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
    let gram = a.transpose() * &a;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max).max(1.0);
    let mut out = Vec::new();
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= 1e-12 * top {
            let mut v = s.zero();
            for (c, bm) in basis.iter().enumerate() {
                v = v.axpy(C64::new(eig.eigenvectors[(c, k)], 0.0), bm);
            }
            out.push(v);
        }
    }
    real_span_basis(&out)
}

/// Tests whether `S/J → A/I` is a complete order embedding on the given
/// candidates plus random hermitian samples at levels `1..=max_level`.
pub fn quotient_embedding_check(
    s: &ConcreteOperatorSystem,
    ideal_blocks: &[usize],
    candidates: &[MatrixLevelElement],
    random_samples: usize,
    max_level: usize,
    seed: u64,
    tol: &TolerancePolicy,
) -> Result<EmbeddingReport> {
    let nb = s.shape().blocks().len();
    if ideal_blocks.iter().any(|&b| b >= nb) {
        return Err(Error::InvalidInput("ideal block index out of range".into()));
    }
    let j = ideal_intersection(s, ideal_blocks);
    let kernel = is_kernel(s, &KernelSubspace::new(s, j)?, tol)?;
    let q = QuotientSystem::formal(s, kernel);
    let keep: Vec<usize> = (0..nb).filter(|b| !ideal_blocks.contains(b)).collect();
    let image_positive = |x: &MatrixLevelElement| -> Result<bool> {
        let a = x.assemble();
        for &b in &keep {
            if !crate::linalg::is_psd(&a.blocks[b].hermitian_parts().0, tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let mut samples: Vec<MatrixLevelElement> = candidates.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in 0..random_samples {
        let n = 1 + idx % max_level.max(1);
        let mut entries = vec![s.zero(); n * n];
        for i in 0..n {
            for jx in i..n {
                let re: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let x = s.from_real_coefficients(&re);
                if i == jx {
                    entries[i * n + i] = x;
                } else {
                    let im: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let y = x.axpy(I, &s.from_real_coefficients(&im));
                    entries[jx * n + i] = y.adjoint();
                    entries[i * n + jx] = y;
                }
            }
        }
        let x = MatrixLevelElement { n, entries };
        // Move to the boundary of positivity in A/I.
        let a = x.assemble();
        let mut lmin = f64::INFINITY;
        for &b in &keep {
            let e = crate::linalg::eig_hermitian(&a.blocks[b])?;
            lmin = lmin.min(*e.values.last().unwrap_or(&0.0));
        }
        if !lmin.is_finite() {
            lmin = 0.0;
        }
        let shifted = x.add(&MatrixLevelElement::diagonal(n, &s.unit().scale_re(-lmin)));
        samples.push(shifted);
    }
    let mut report = EmbeddingReport {
        verdict: EmbeddingVerdict::OrderEmbedding,
        kernel_dim: q.kernel.dim(),
        samples: 0,
        witness: None,
        witness_eps_star: None,
    };
    for x in samples {
        report.samples += 1;
        let img = image_positive(&x)?;
        let c = q.c_cone_membership(&x, tol)?;
        if img != c.member {
            report.verdict = EmbeddingVerdict::NotEmbedding;
            report.witness = Some(x);
            report.witness_eps_star = Some(c.eps_star);
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;
    use proptest::prelude::*;

    fn tol() -> TolerancePolicy {
        TolerancePolicy::default()
    }

    fn l4_quotient(n: usize) -> QuotientSystem {
        let (s, j) = gallery::l4_family(n);
        QuotientSystem::new(&s, is_kernel(&s, &j, &tol()).unwrap()).unwrap()
    }

    #[test]
    fn example_family_norms() {
        for n in 1..=4 {
            let q = l4_quotient(n);
            let x = MatrixLevelElement::level1(BlockMatrix::diagonal(&[0.0, 1.0, n as f64 + 1.0, 0.0]));
            let osy = q.osy_norm(&x, &tol()).unwrap();
            let osp = q.osp_norm(&x, &tol()).unwrap();
            assert!((osy.value - 1.0).abs() < 1e-6, "n={n} osy={}", osy.value);
            let want = 2.0 * (n as f64 + 1.0) / 3.0;
            assert!((osp.value - want).abs() < 1e-6, "n={n} osp={}", osp.value);
            if n == 1 {
                assert!((osp.j_coefficients[0][0].re + 2.0 / 3.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn kernel_examples() {
        let t = tol();
        let (s, j) = gallery::l4_family(3);
        assert_eq!(is_kernel(&s, &j, &t).unwrap().verdict, KernelVerdict::Kernel);

        let (m2, e11) = gallery::e11();
        let v = is_kernel(&m2, &e11, &t).unwrap();
        assert_eq!(v.verdict, KernelVerdict::NotKernel);
        let e12 = BlockMatrix::single(CMatrix::unit(2, 0, 1));
        let w = v.witness.clone().unwrap();
        assert!(w.sub(&e12).max_abs() < 1e-12 || w.sub(&e12.adjoint()).max_abs() < 1e-12);
        assert!(v.annihilated_by_all_states(&m2, &e12, &t).unwrap());

        let z = KernelSubspace::zero(&m2);
        let v = is_kernel(&m2, &z, &t).unwrap();
        assert_eq!(v.verdict, KernelVerdict::Kernel);
        assert_eq!(v.states.len(), 4);

        assert!(matches!(
            KernelSubspace::new(&m2, vec![m2.unit()]),
            Err(Error::UnitInKernel)
        ));
        assert!(KernelSubspace::new(&m2, vec![e12]).is_err());
    }

    #[test]
    fn kernel_states_separate_complement() {
        let t = tol();
        let (s, j) = gallery::l4_family(2);
        let v = is_kernel(&s, &j, &t).unwrap();
        for st in &v.states {
            for h in &v.basis {
                assert!(st.apply(h).norm() < 1e-7);
            }
        }
        // Common kernel of the states inside S_h is exactly J_h.
        let rows: Vec<Vec<f64>> = v.states.iter().map(|st| s.basis().iter().map(|b| st.apply(b).re).collect()).collect();
        let a = DMatrix::from_fn(rows.len(), s.dim(), |i, j| rows[i][j]);
        let rank = a.svd(false, false).rank(1e-7);
        assert_eq!(s.dim() - rank, v.dim());
    }

    #[test]
    fn archimedeanization_is_strict_for_e11() {
        let t = tol();
        let (m2, e11) = gallery::e11();
        let k = is_kernel(&m2, &e11, &t).unwrap();
        let q = QuotientSystem::formal(&m2, k);
        let x = BlockMatrix::single(&CMatrix::unit(2, 0, 1) + &CMatrix::unit(2, 1, 0));
        let xl = MatrixLevelElement::level1(x.clone());
        let c = q.c_cone_membership(&xl, &t).unwrap();
        assert!(c.member && c.eps_star <= 1e-7, "{c:?}");
        let d = q.d_cone_membership(&xl, &t).unwrap();
        assert!(!d.member, "{d:?}");
        assert!(q.order_seminorm(&x, &t).unwrap() <= 1e-6);
        assert!(matches!(q.osy_norm(&xl, &t), Err(Error::NotAKernel)));
    }

    #[test]
    fn cones_trivial_cases() {
        let t = tol();
        let q = l4_quotient(1);
        let pos = MatrixLevelElement::level1(BlockMatrix::diagonal(&[0.0, 1.0, 2.0, 0.0]));
        assert!(q.d_cone_membership(&pos, &t).unwrap().member);
        assert!(q.c_cone_membership(&pos, &t).unwrap().member);
        let zero = MatrixLevelElement::level1(q.system.zero());
        assert!(q.d_cone_membership(&zero, &t).unwrap().member);
        let neg = MatrixLevelElement::level1(q.system.unit().scale_re(-1.0));
        let c = q.c_cone_membership(&neg, &t).unwrap();
        assert!(!c.member && (c.eps_star - 1.0).abs() < 1e-6);
    }

    #[test]
    fn norm_trivial_cases() {
        let t = tol();
        let q = l4_quotient(2);
        let e = MatrixLevelElement::level1(q.system.unit());
        assert!((q.osy_norm(&e, &t).unwrap().value - 1.0).abs() < 1e-6);
        let y = MatrixLevelElement::level1(q.kernel.generators[0].clone());
        assert!(q.osy_norm(&y, &t).unwrap().value < 1e-6);
        assert!(q.osp_norm(&y, &t).unwrap().value < 1e-6);
        let s = q.system.clone();
        let qz = QuotientSystem::new(&s, is_kernel(&s, &KernelSubspace::zero(&s), &t).unwrap()).unwrap();
        let x = BlockMatrix::diagonal(&[0.5, -2.0, 1.0, 0.0]);
        let v = qz.osp_norm(&MatrixLevelElement::level1(x.clone()), &t).unwrap();
        assert!((v.value - s.system_norm(&x)).abs() < 1e-6);
    }

    #[test]
    fn norming_functional_and_jdec() {
        let t = tol();
        for n in [1usize, 3] {
            let q = l4_quotient(n);
            let x = BlockMatrix::diagonal(&[0.0, 1.0, n as f64 + 1.0, 0.0]);
            let (f, v) = q.osp_norming_functional(&x, &t).unwrap();
            let want = 2.0 * (n as f64 + 1.0) / 3.0;
            assert!((v - want).abs() < 1e-6);
            assert!(f.apply(&q.kernel.generators[0]).norm() < 1e-7);
            let phi = LinearMap::functional(&q.system, &f.rho);
            let r = j_dec_norm(&phi, &q.kernel, &t).unwrap();
            assert!((r.cb - 1.0).abs() < 1e-5, "cb {}", r.cb);
            assert!(r.ratio.unwrap() >= want * (1.0 - 1e-5), "{r:?}");
        }
    }

    #[test]
    fn jdec_trivial_cases() {
        let t = tol();
        let q = l4_quotient(1);
        let st = &q.kernel.clone();
        let k = is_kernel(&q.system, st, &t).unwrap();
        let rho = k.states[0].rho.clone();
        let phi = LinearMap::functional(&q.system, &rho);
        let r = j_dec_norm(&phi, &k, &t).unwrap();
        assert!((r.jdec.unwrap() - 1.0).abs() < 1e-6);
        let z = LinearMap::zero(&q.system, 2);
        assert!(j_dec_norm(&z, &k, &t).unwrap().jdec.unwrap().abs() < 1e-6);
        let bad = LinearMap::functional(&q.system, &q.system.unit());
        assert!(matches!(j_dec_norm(&bad, &k, &t), Err(Error::KernelNotAnnihilated(_))));
    }

    #[test]
    fn embedding_examples() {
        let t = tol();
        let (s, witness) = gallery::traceless_direct_sum();
        let r = quotient_embedding_check(&s, &[1], std::slice::from_ref(&witness), 0, 1, 0, &t).unwrap();
        assert_eq!(r.verdict, EmbeddingVerdict::NotEmbedding);
        assert_eq!(r.witness.unwrap(), witness);
        let a = ConcreteOperatorSystem::full(BlockShape(vec![2, 2]), "A").unwrap();
        let r = quotient_embedding_check(&a, &[1], &[], 12, 2, 7, &t).unwrap();
        assert_eq!(r.verdict, EmbeddingVerdict::OrderEmbedding);
        let r = quotient_embedding_check(&s, &[], &[], 6, 2, 7, &t).unwrap();
        assert_eq!(r.verdict, EmbeddingVerdict::OrderEmbedding);
    }

    #[test]
    fn proximinality_examples() {
        let t = tol();
        let q = l4_quotient(2);
        let samples: Vec<MatrixLevelElement> = [[0.0, 1.0, 3.0, 0.0], [1.0, 0.0, 0.0, 2.0], [0.5, 0.5, 0.5, 0.5]]
            .iter()
            .map(|d| MatrixLevelElement::level1(BlockMatrix::diagonal(d)))
            .collect();
        let r = q.proximinality_probe(&samples, &t).unwrap();
        assert_eq!(r.order_gaps, 0);
        assert!(r.max_norm_gap < 1e-6);

        let (m2, e11) = gallery::e11();
        let qf = QuotientSystem::formal(&m2, is_kernel(&m2, &e11, &t).unwrap());
        let x = MatrixLevelElement::level1(BlockMatrix::single(&CMatrix::unit(2, 0, 1) + &CMatrix::unit(2, 1, 0)));
        let r = qf.proximinality_probe(&[x], &t).unwrap();
        assert_eq!(r.order_gaps, 1);
    }

    #[test]
    fn ucp_maps_killing_j_are_bounded_by_osy() {
        let t = tol();
        let n = 2;
        let q = l4_quotient(n);
        let k = is_kernel(&q.system, &q.kernel, &t).unwrap();
        let x = BlockMatrix::diagonal(&[0.0, 1.0, n as f64 + 1.0, 0.0]);
        let osy = q.osy_norm(&MatrixLevelElement::level1(x.clone()), &t).unwrap().value;
        for a in &k.states {
            for b in &k.states {
                let phi = LinearMap::from_fn(&q.system, 2, |m| {
                    let mut out = CMatrix::zeros(2, 2);
                    out.set(0, 0, a.apply(m));
                    out.set(1, 1, b.apply(m));
                    out
                });
                assert!(phi.apply(&x).spectral_norm() <= osy + 1e-6);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn indefinite_spans_are_kernels(seed in 0u64..10_000) {
            let t = tol();
            let (s, y) = gallery::random_system_with_indefinite(seed);
            let j = KernelSubspace::new(&s, vec![y]).unwrap();
            prop_assert_eq!(is_kernel(&s, &j, &t).unwrap().verdict, KernelVerdict::Kernel);
        }

        #[test]
        fn osy_below_osp_and_homogeneous(seed in 0u64..10_000, level in 1usize..=2) {
            let t = tol();
            let (s, y) = gallery::random_system_with_indefinite(seed);
            let j = is_kernel(&s, &KernelSubspace::new(&s, vec![y]).unwrap(), &t).unwrap();
            let q = QuotientSystem::new(&s, j).unwrap();
            let x = gallery::random_level_element(&s, level, seed ^ 0x55);
            let a = q.osy_norm(&x, &t).unwrap().value;
            let b = q.osp_norm(&x, &t).unwrap().value;
            prop_assert!(a <= b + 1e-6, "{a} > {b}");
            let x2 = x.scale_re(2.0);
            prop_assert!((q.osy_norm(&x2, &t).unwrap().value - 2.0 * a).abs() < 1e-6);
            prop_assert!((q.osp_norm(&x2, &t).unwrap().value - 2.0 * b).abs() < 1e-6);
        }

        #[test]
        fn d_cone_inside_c_cone(seed in 0u64..10_000) {
            let t = tol();
            let (s, y) = gallery::random_system_with_indefinite(seed);
            let j = is_kernel(&s, &KernelSubspace::new(&s, vec![y]).unwrap(), &t).unwrap();
            let q = QuotientSystem::new(&s, j).unwrap();
            let mut x = gallery::random_level_element(&s, 1, seed);
            let h = x.entries[0].hermitian_parts().0;
            x.entries[0] = h.axpy(C64::new(0.3 * h.spectral_norm(), 0.0), &s.unit());
            if q.d_cone_membership(&x, &t).unwrap().member {
                prop_assert!(q.c_cone_membership(&x, &t).unwrap().member);
            }
        }
    }
}
