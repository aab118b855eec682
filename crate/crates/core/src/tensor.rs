//! Minimal, maximal and commuting tensor products of concrete systems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_sdp, AffineMatrix, LinExpr, SdpProblem, Sense};
use crate::dual::{DualSystem, Functional};
use crate::error::{Error, Result};
use crate::linalg::{eig_hermitian, hermitian_basis, BlockMatrix, BlockShape, CMatrix, TolerancePolicy, C64};
use crate::system::{ConcreteOperatorSystem, MatrixLevelElement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TensorStructure {
    Min,
    Max,
    CommCstar,
}

#[derive(Debug, Clone)]
pub struct TensorSystem {
    pub left: ConcreteOperatorSystem,
    pub right: ConcreteOperatorSystem,
    pub structure: TensorStructure,
    /// The spatial span `S ⊗ T` with basis `s_a ⊗ t_b` at `a·dim T + b`.
    pub product: ConcreteOperatorSystem,
}

/// Coefficients over basis pairs, index `a·dim T + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorElementJson {
    pub left: String,
    pub right: String,
    pub coefficients: Vec<C64>,
}

impl TensorSystem {
    pub fn new(left: &ConcreteOperatorSystem, right: &ConcreteOperatorSystem, structure: TensorStructure) -> Result<Self> {
        if structure == TensorStructure::CommCstar && !right.is_full_algebra() {
            return Err(Error::PartnerNotCStar);
        }
        Ok(Self {
            left: left.clone(),
            right: right.clone(),
            structure,
            product: left.min_tensor(right),
        })
    }

    pub fn ambient_shape(&self) -> &BlockShape {
        self.product.shape()
    }

    pub fn unit(&self) -> BlockMatrix {
        self.product.unit()
    }

    pub fn element_from_json(&self, j: &TensorElementJson) -> Result<BlockMatrix> {
        if j.coefficients.len() != self.product.dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} coefficients, got {}",
                self.product.dim(),
                j.coefficients.len()
            )));
        }
        Ok(self.product.from_coefficients(&j.coefficients))
    }

    pub fn element_to_json(&self, u: &BlockMatrix) -> TensorElementJson {
        TensorElementJson {
            left: self.left.name().to_string(),
            right: self.right.name().to_string(),
            coefficients: self.product.coefficients(u),
        }
    }

    /// `U ∈ M_n(S ⊗_min T)⁺`: the ambient Kronecker matrix is PSD.
    pub fn min_membership(&self, u: &MatrixLevelElement, tol: &TolerancePolicy) -> Result<bool> {
        for e in &u.entries {
            self.product.element(e.clone())?;
        }
        self.product.level_positive(u, tol)
    }

    fn nuclear_partner(&self) -> bool {
        self.left.is_full_algebra()
            || self.left.is_diagonal_algebra()
            || self.right.is_full_algebra()
            || self.right.is_diagonal_algebra()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaxStatus {
    Member,
    NotMember,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertificateReason {
    ReasonNuclearPartner,
    ReasonDecomposition,
    ReasonOuterRelaxation,
    ReasonSeparatingFunctional,
}

/// `u + ε·e = Σ_terms Σᵢⱼ Pᵢⱼ ⊗ Qᵢⱼ` with `P ∈ M_k(S)⁺`, `Q ∈ M_k(T)⁺`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decomposition {
    pub terms: Vec<(MatrixLevelElement, MatrixLevelElement)>,
    pub eps: f64,
}

impl Decomposition {
    pub fn reassemble(&self) -> BlockMatrix {
        let mut acc: Option<BlockMatrix> = None;
        for (p, q) in &self.terms {
            for i in 0..p.n {
                for j in 0..p.n {
                    let t = p.get(i, j).kron(q.get(i, j));
                    acc = Some(match acc {
                        None => t,
                        Some(a) => a.add(&t),
                    });
                }
            }
        }
        acc.expect("nonempty decomposition")
    }

    /// `‖u + ε·e − Σ P ⊗ Q‖` (spectral).
    pub fn residual(&self, u: &BlockMatrix, unit: &BlockMatrix) -> f64 {
        u.axpy(C64::new(self.eps, 0.0), unit).sub(&self.reassemble()).spectral_norm()
    }

    /// All factors positive within `tol`.
    pub fn factors_positive(&self, tol: &TolerancePolicy) -> Result<bool> {
        for (p, q) in &self.terms {
            if !p.assemble().is_psd(tol)? || !q.assemble().is_psd(tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// `f(x) = Tr(ρ x)` with `f(e ⊗ e) = 1`, `f(u) < 0`, and the checks that
/// certified its positivity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparatingFunctional {
    pub rho: BlockMatrix,
    pub value: f64,
    pub audit: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaxVerdict {
    pub status: MaxStatus,
    pub level: usize,
    pub reason: Option<CertificateReason>,
    /// Smallest certified `ε` with `u + ε·e` decomposed (inner bound).
    pub eps_star: Option<f64>,
    /// Minimum of `f(u)` over the sampled relaxation (outer bound).
    pub outer_min: Option<f64>,
    pub decomposition: Option<Decomposition>,
    pub functional: Option<SeparatingFunctional>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaxOptions {
    /// Hierarchy level `k` of the factors `P`, `Q`.
    pub level: usize,
    /// Run the hierarchy even where the nuclear-partner shortcut applies.
    pub audit: bool,
    pub restarts: usize,
    pub alternations: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for MaxOptions {
    fn default() -> Self {
        Self {
            level: 2,
            audit: false,
            restarts: 5,
            alternations: 6,
            samples: 60,
            seed: 0,
        }
    }
}

/// `Σ_a H_a ⊗ s_a` as an element of `M_k(S)`.
fn level_from_hermitian(s: &ConcreteOperatorSystem, h: &[CMatrix]) -> MatrixLevelElement {
    let k = h.first().map_or(1, CMatrix::rows);
    let mut entries = vec![s.zero(); k * k];
    for (ha, sa) in h.iter().zip(s.basis().iter()) {
        for i in 0..k {
            for j in 0..k {
                let z = ha.get(i, j);
                if z.norm() > 0.0 {
                    entries[i * k + j] = entries[i * k + j].axpy(z, sa);
                }
            }
        }
    }
    MatrixLevelElement { n: k, entries }
}

/// Real coefficients of `u` over `s_a ⊗ t_b`.
fn product_coefficients(ts: &TensorSystem, u: &BlockMatrix) -> Vec<f64> {
    ts.product.real_coefficients(u)
}

/// One alternation step: with the other factor fixed, choose the free factor
/// (and residual) minimizing the certified `ε`. `coupling[i·k+j][c]` is
/// `Tr(basis_c · fixed_ij)` for the fixed factor's system; `free_left` says
/// whether the free factor is the left one.
struct Step {
    free: Vec<CMatrix>,
    eps_total: f64,
    residual: Vec<f64>,
}

fn inner_step(
    ts: &TensorSystem,
    u: &[f64],
    fixed: &MatrixLevelElement,
    free_left: bool,
    weights: &[f64],
    tol: &TolerancePolicy,
) -> Option<Step> {
    let (free_sys, fixed_sys) = if free_left { (&ts.left, &ts.right) } else { (&ts.right, &ts.left) };
    let k = fixed.n;
    let dt = ts.right.dim();
    let nfree = free_sys.dim();
    let nfixed = fixed_sys.dim();
    let coupling: Vec<Vec<C64>> = fixed.entries.iter().map(|e| fixed_sys.coefficients(e)).collect();
    let mut p = SdpProblem::new(Sense::Min);
    let hs: Vec<_> = (0..nfree).map(|_| p.add_hermitian(k)).collect();
    // Positivity of the free factor in M_k(A).
    let inflated = free_sys.shape().inflate(k);
    for (bi, &d) in inflated.blocks().iter().enumerate() {
        let mut f = AffineMatrix::zeros(d, d);
        for (ha, sa) in hs.iter().zip(free_sys.basis().iter()) {
            let blk = &sa.blocks[bi];
            if blk.max_abs() == 0.0 {
                continue;
            }
            f.add(&ha.expr.map(|m| m.kron(blk)));
        }
        p.add_psd(f);
    }
    let eps = p.add_var();
    let r = p.add_vars(u.len());
    let t = p.add_vars(u.len());
    for (&ri, &ti) in r.iter().zip(t.iter()) {
        for s in [1.0, -1.0] {
            let mut f = AffineMatrix::zeros(1, 1);
            f.add_term(ti, CMatrix::diag_real(&[1.0]));
            f.add_term(ri, CMatrix::diag_real(&[s]));
            p.add_psd(f);
        }
    }
    let unit = ts.unit();
    let ucoef = product_coefficients(ts, &unit);
    let entries: Vec<Vec<(LinExpr, LinExpr)>> = hs
        .iter()
        .map(|h| (0..k * k).map(|idx| h.expr.entry(idx / k, idx % k)).collect())
        .collect();
    for a in 0..nfree {
        for c in 0..nfixed {
            let idx = if free_left { a * dt + c } else { c * dt + a };
            let mut lhs = LinExpr::default();
            for (ij, cp) in coupling.iter().enumerate() {
                let z = cp[c];
                let (re, im) = &entries[a][ij];
                lhs = lhs.plus(&re.clone().scaled(z.re)).plus(&im.clone().scaled(-z.im));
            }
            lhs.add_term(r[idx], 1.0);
            lhs.add_term(eps, -ucoef[idx]);
            p.add_eq(lhs, u[idx]);
        }
    }
    let mut obj = LinExpr::var(eps);
    for (&ti, w) in t.iter().zip(weights.iter()) {
        obj.add_term(ti, *w);
    }
    p.set_objective(obj);
    let res = solve_sdp(&p, tol);
    if !res.is_optimal() {
        return None;
    }
    let z = res.z();
    let free: Vec<CMatrix> = hs.iter().map(|h| h.value(z)).collect();
    let residual: Vec<f64> = r.iter().map(|&i| z[i]).collect();
    let eps_total = z[eps] + residual.iter().zip(weights.iter()).map(|(x, w)| x.abs() * w).sum::<f64>();
    Some(Step {
        free,
        eps_total,
        residual,
    })
}

/// Random positive element of `M_k(S)` on the boundary of the cone.
fn random_positive(s: &ConcreteOperatorSystem, k: usize, rng: &mut ChaCha8Rng, shift: f64) -> MatrixLevelElement {
    let hb = hermitian_basis(k);
    let h: Vec<CMatrix> = (0..s.dim())
        .map(|_| {
            let mut m = CMatrix::zeros(k, k);
            for b in &hb {
                m = &m + &b.scale_re(rng.random_range(-1.0..1.0));
            }
            m
        })
        .collect();
    let x = level_from_hermitian(s, &h);
    let lmin = x.assemble().min_eigenvalue().unwrap_or(0.0);
    x.add(&MatrixLevelElement::diagonal(k, &s.unit().scale_re(shift - lmin)))
}

impl TensorSystem {
    /// A density `vv*` on the ambient algebra with `v*uv < 0`, when `u`
    /// is not min-positive.
    fn min_separator(&self, u: &BlockMatrix, tol: &TolerancePolicy) -> Result<Option<SeparatingFunctional>> {
        let dense = u.hermitian_parts().0;
        let mut lmin = f64::INFINITY;
        let mut worst = None;
        for (bi, b) in dense.blocks.iter().enumerate() {
            let e = eig_hermitian(b)?;
            let l = *e.values.last().expect("nonempty block");
            if l < lmin {
                lmin = l;
                worst = Some((bi, e.vector(e.values.len() - 1)));
            }
        }
        if lmin >= -tol.feas_margin * dense.max_abs().max(1.0) {
            return Ok(None);
        }
        let (bi, v) = worst.expect("some block");
        let mut rho = BlockMatrix::zeros(self.ambient_shape());
        let d = v.len();
        rho.blocks[bi] = CMatrix::from_fn(d, d, |i, j| v[i] * v[j].conj());
        let value = Functional::new(rho.clone()).apply(u).re;
        Ok(Some(SeparatingFunctional {
            rho,
            value,
            audit: vec!["density matrix on the ambient algebra: positive on the min cone".into()],
        }))
    }

    /// Decomposition `u = Σ Pᵢⱼ ⊗ Qᵢⱼ` available when one factor is a full
    /// or diagonal algebra.
    fn partner_decomposition(&self, u: &BlockMatrix, tol: &TolerancePolicy) -> Result<std::result::Result<Decomposition, SeparatingFunctional>> {
        if let Some(f) = self.min_separator(u, tol)? {
            return Ok(Err(f));
        }
        let lmin = u.hermitian_parts().0.min_eigenvalue()?;
        let eps = (-lmin).max(0.0);
        let shifted = u.axpy(C64::new(eps, 0.0), &self.unit());
        let right_alg = self.right.is_full_algebra() || self.right.is_diagonal_algebra();
        let (sys, alg) = if right_alg { (&self.left, &self.right) } else { (&self.right, &self.left) };
        // Matrix units of the algebra factor, grouped by block.
        let ashape = alg.shape().clone();
        let sdt = sys.shape().blocks().to_vec();
        let mut p_entries_all: Vec<Vec<BlockMatrix>> = Vec::new();
        let mut q_entries_all: Vec<Vec<BlockMatrix>> = Vec::new();
        for (ab, &q) in ashape.blocks().iter().enumerate() {
            let mut pe = vec![sys.zero(); q * q];
            let mut qe = vec![BlockMatrix::zeros(&ashape); q * q];
            for i in 0..q {
                for j in 0..q {
                    let mut eij = BlockMatrix::zeros(&ashape);
                    eij.blocks[ab] = CMatrix::unit(q, i, j);
                    qe[i * q + j] = eij;
                    // Slice u against E_ji in the algebra factor.
                    let mut blocks = Vec::with_capacity(sdt.len());
                    for (sb, &ds) in sdt.iter().enumerate() {
                        let pb = if right_alg { sb * ashape.blocks().len() + ab } else { ab * sdt.len() + sb };
                        let m = &shifted.blocks[pb];
                        let sl = CMatrix::from_fn(ds, ds, |r, c| {
                            if right_alg {
                                m.get(r * q + i, c * q + j)
                            } else {
                                m.get(i * ds + r, j * ds + c)
                            }
                        });
                        blocks.push(sl);
                    }
                    pe[i * q + j] = BlockMatrix::from_blocks(blocks);
                }
            }
            p_entries_all.push(pe);
            q_entries_all.push(qe);
        }
        // Block-diagonal merge into one term.
        let total: usize = ashape.blocks().iter().sum();
        let mut pe = vec![sys.zero(); total * total];
        let mut qe = vec![BlockMatrix::zeros(&ashape); total * total];
        let mut off = 0;
        for (ab, &q) in ashape.blocks().iter().enumerate() {
            for i in 0..q {
                for j in 0..q {
                    pe[(off + i) * total + off + j] = p_entries_all[ab][i * q + j].clone();
                    qe[(off + i) * total + off + j] = q_entries_all[ab][i * q + j].clone();
                }
            }
            off += q;
        }
        let pl = MatrixLevelElement { n: total, entries: pe };
        let ql = MatrixLevelElement { n: total, entries: qe };
        let term = if right_alg { (pl, ql) } else { (ql, pl) };
        Ok(Ok(Decomposition { terms: vec![term], eps }))
    }

    /// Membership of a level-one `u` in the max cone.
    pub fn max_membership(&self, u: &BlockMatrix, opts: &MaxOptions, tol: &TolerancePolicy) -> Result<MaxVerdict> {
        let uel = self.product.element(u.clone())?;
        let u = uel.matrix;
        if !u.is_hermitian(1e-9 * u.max_abs().max(1.0)) {
            return Err(Error::NonHermitian {
                asymmetry: u.hermitian_asymmetry(),
            });
        }
        if self.nuclear_partner() && !opts.audit {
            return Ok(match self.partner_decomposition(&u, tol)? {
                Ok(d) => MaxVerdict {
                    status: MaxStatus::Member,
                    level: d.terms[0].0.n,
                    reason: Some(CertificateReason::ReasonNuclearPartner),
                    eps_star: Some(d.eps),
                    outer_min: None,
                    decomposition: Some(d),
                    functional: None,
                },
                Err(f) => MaxVerdict {
                    status: MaxStatus::NotMember,
                    level: 1,
                    reason: Some(CertificateReason::ReasonSeparatingFunctional),
                    eps_star: None,
                    outer_min: Some(f.value),
                    decomposition: None,
                    functional: Some(f),
                },
            });
        }
        self.hierarchy(&u, opts, tol)
    }

    fn hierarchy(&self, u: &BlockMatrix, opts: &MaxOptions, tol: &TolerancePolicy) -> Result<MaxVerdict> {
        if let Some(f) = self.min_separator(u, tol)? {
            return Ok(MaxVerdict {
                status: MaxStatus::NotMember,
                level: 1,
                reason: Some(CertificateReason::ReasonSeparatingFunctional),
                eps_star: None,
                outer_min: Some(f.value),
                decomposition: None,
                functional: Some(f),
            });
        }
        let k = opts.level.max(1);
        let ucoef = product_coefficients(self, u);
        let weights: Vec<f64> = self
            .left
            .basis()
            .iter()
            .flat_map(|s| {
                let ns = s.spectral_norm();
                self.right.basis().iter().map(move |t| ns * t.spectral_norm())
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut best: Option<(f64, Decomposition)> = None;
        let mut found: Vec<(MatrixLevelElement, MatrixLevelElement)> = Vec::new();
        for restart in 0..opts.restarts.max(1) {
            let mut q = if restart == 0 {
                MatrixLevelElement::diagonal(k, &self.right.unit())
            } else {
                random_positive(&self.right, k, &mut rng, 0.1)
            };
            let mut pfac: Option<MatrixLevelElement> = None;
            for _ in 0..opts.alternations.max(1) {
                let Some(step) = inner_step(self, &ucoef, &q, true, &weights, tol) else { break };
                let pl = level_from_hermitian(&self.left, &step.free);
                let done = self.record(&mut best, &pl, &q, &step);
                pfac = Some(pl);
                if done <= tol.bisect_tol {
                    break;
                }
                let pref = pfac.as_ref().expect("set above");
                let Some(step) = inner_step(self, &ucoef, pref, false, &weights, tol) else { break };
                let ql = level_from_hermitian(&self.right, &step.free);
                let done = self.record(&mut best, pref, &ql, &step);
                q = ql;
                if done <= tol.bisect_tol {
                    break;
                }
                // Balance the factor scales.
                let (np, nq) = (pref.assemble().max_abs(), q.assemble().max_abs());
                if np > 0.0 && nq > 0.0 {
                    let s = (np / nq).sqrt();
                    pfac = Some(pref.scale_re(1.0 / s));
                    q = q.scale_re(s);
                }
            }
            if let Some(pl) = pfac {
                found.push((pl, q.clone()));
            }
            if best.as_ref().is_some_and(|(e, _)| *e <= tol.bisect_tol) {
                break;
            }
        }
        if let Some((e, d)) = &best {
            if *e <= tol.bisect_tol {
                return Ok(MaxVerdict {
                    status: MaxStatus::Member,
                    level: k,
                    reason: Some(CertificateReason::ReasonDecomposition),
                    eps_star: Some(*e),
                    outer_min: None,
                    decomposition: Some(d.clone()),
                    functional: None,
                });
            }
        }
        let inner_eps = best.as_ref().map(|(e, _)| *e);
        let (outer_min, rho) = self.outer_pass(u, k, opts, &found, &weights, &mut rng, tol)?;
        if outer_min >= -tol.bisect_tol {
            return Ok(MaxVerdict {
                status: MaxStatus::Member,
                level: k,
                reason: Some(CertificateReason::ReasonOuterRelaxation),
                eps_star: Some((-outer_min).max(0.0)),
                outer_min: Some(outer_min),
                decomposition: best.map(|(_, d)| d),
                functional: None,
            });
        }
        // A separating functional only counts once it is certified positive
        // on the whole max cone; positivity on the min cone suffices.
        let f = Functional::new(rho.clone());
        let dual = DualSystem::new(&self.product);
        let certified = outer_min < -tol.feas_margin && dual.cone_membership(1, &[f], tol)?;
        if certified {
            return Ok(MaxVerdict {
                status: MaxStatus::NotMember,
                level: k,
                reason: Some(CertificateReason::ReasonSeparatingFunctional),
                eps_star: inner_eps,
                outer_min: Some(outer_min),
                decomposition: None,
                functional: Some(SeparatingFunctional {
                    rho,
                    value: outer_min,
                    audit: vec!["positive on M_1(S ⊗_min T)⁺ via the dual cone test".into()],
                }),
            });
        }
        Ok(MaxVerdict {
            status: MaxStatus::Undecided,
            level: k,
            reason: None,
            eps_star: inner_eps,
            outer_min: Some(outer_min),
            decomposition: best.map(|(_, d)| d),
            functional: None,
        })
    }

    /// Stores the step as a decomposition if it improves the best `ε`.
    fn record(
        &self,
        best: &mut Option<(f64, Decomposition)>,
        p: &MatrixLevelElement,
        q: &MatrixLevelElement,
        step: &Step,
    ) -> f64 {
        let e = step.eps_total;
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            let mut terms = vec![(p.clone(), q.clone())];
            terms.extend(self.residual_terms(&step.residual));
            let d = Decomposition { terms, eps: e };
            *best = Some((e, d));
        }
        best.as_ref().map_or(e, |(b, _)| *b)
    }

    /// `r·s⊗t + |r|‖s‖‖t‖ e⊗e = ½|r|‖s‖‖t‖[(e + σŝ)⊗(e + t̂) + (e − σŝ)⊗(e − t̂)]`.
    fn residual_terms(&self, r: &[f64]) -> Vec<(MatrixLevelElement, MatrixLevelElement)> {
        let dt = self.right.dim();
        let es = self.left.unit();
        let et = self.right.unit();
        let mut out = Vec::new();
        for (idx, &ri) in r.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            let s = &self.left.basis()[idx / dt];
            let t = &self.right.basis()[idx % dt];
            let (ns, nt) = (s.spectral_norm(), t.spectral_norm());
            let c = 0.5 * ri.abs() * ns * nt;
            let sh = s.scale_re(ri.signum() / ns);
            let th = t.scale_re(1.0 / nt);
            for sign in [1.0, -1.0] {
                let p = es.axpy(C64::new(sign, 0.0), &sh).scale_re(c);
                let q = et.axpy(C64::new(sign, 0.0), &th);
                out.push((MatrixLevelElement::level1(p), MatrixLevelElement::level1(q)));
            }
        }
        out
    }

    /// `min f(u)` over `f` with `f(e ⊗ e) = 1`, `f ≥ 0` on sampled
    /// generators, and the coefficient box every max-state satisfies.
    #[allow(clippy::too_many_arguments)]
    fn outer_pass(
        &self,
        u: &BlockMatrix,
        k: usize,
        opts: &MaxOptions,
        found: &[(MatrixLevelElement, MatrixLevelElement)],
        weights: &[f64],
        rng: &mut ChaCha8Rng,
        tol: &TolerancePolicy,
    ) -> Result<(f64, BlockMatrix)> {
        let mut gens: Vec<BlockMatrix> = Vec::new();
        let pair = |p: &MatrixLevelElement, q: &MatrixLevelElement| {
            Decomposition {
                terms: vec![(p.clone(), q.clone())],
                eps: 0.0,
            }
            .reassemble()
        };
        for (p, q) in found {
            gens.push(pair(p, q));
        }
        for i in 0..opts.samples {
            let lvl = 1 + i % k;
            let p = random_positive(&self.left, lvl, rng, 0.0);
            let q = random_positive(&self.right, lvl, rng, 0.0);
            gens.push(pair(&p, &q));
        }
        let n = self.product.dim();
        let mut p = SdpProblem::new(Sense::Min);
        let phi = p.add_vars(n);
        for (&v, &w) in phi.iter().zip(weights.iter()) {
            for s in [1.0, -1.0] {
                let mut f = AffineMatrix::constant(CMatrix::diag_real(&[w]));
                f.add_term(v, CMatrix::diag_real(&[s]));
                p.add_psd(f);
            }
        }
        let lin = |x: &BlockMatrix| {
            let c = self.product.real_coefficients(x);
            let mut e = LinExpr::default();
            for (&v, ci) in phi.iter().zip(c.iter()) {
                if *ci != 0.0 {
                    e.add_term(v, *ci);
                }
            }
            e
        };
        p.add_eq(lin(&self.unit()), 1.0);
        for g in &gens {
            let e = lin(g);
            let mut f = AffineMatrix::zeros(1, 1);
            for (v, c) in &e.terms {
                f.add_term(*v, CMatrix::diag_real(&[*c]));
            }
            p.add_psd(f);
        }
        p.set_objective(lin(u));
        let r = solve_sdp(&p, tol);
        r.expect_optimal("max-cone outer relaxation")?;
        let z = r.z();
        let mut rho = BlockMatrix::zeros(self.ambient_shape());
        for (&v, b) in phi.iter().zip(self.product.basis().iter()) {
            rho = rho.axpy(C64::new(z[v], 0.0), b);
        }
        Ok((r.value_lo, rho))
    }

    /// `M_n(S ⊗_max T) ≅ S ⊗_max M_n(T)`: the level-`n` test through the
    /// right factor inflated to `M_n(T)`.
    pub fn max_membership_level(&self, u: &MatrixLevelElement, opts: &MaxOptions, tol: &TolerancePolicy) -> Result<MaxVerdict> {
        let (ts, v) = self.inflate_right(u)?;
        ts.max_membership(&v, opts, tol)
    }

    /// The system `S ⊗ M_n(T)` and the image of `U`.
    pub fn inflate_right(&self, u: &MatrixLevelElement) -> Result<(TensorSystem, BlockMatrix)> {
        let n = u.n;
        let right = inflated_system(&self.right, n);
        let ts = TensorSystem::new(&self.left, &right, self.structure)?;
        let a = u.assemble();
        let sb = self.left.shape().blocks();
        let tb = self.right.shape().blocks();
        let mut blocks = Vec::with_capacity(a.blocks.len());
        for (bi, &d) in sb.iter().enumerate() {
            for (ci, &e) in tb.iter().enumerate() {
                let m = &a.blocks[bi * tb.len() + ci];
                let size = n * d * e;
                // Source index (i, r, s) ↦ i·de + r·e + s; target (r, i, s).
                let src = |t: usize| {
                    let r = t / (n * e);
                    let i = (t / e) % n;
                    let s = t % e;
                    i * d * e + r * e + s
                };
                blocks.push(CMatrix::from_fn(size, size, |x, y| m.get(src(x), src(y))));
            }
        }
        let v = BlockMatrix::from_blocks(blocks);
        ts.product.element(v.clone())?;
        Ok((ts, v))
    }
}

/// `M_n(T)` as a concrete system in the inflated ambient.
pub fn inflated_system(t: &ConcreteOperatorSystem, n: usize) -> ConcreteOperatorSystem {
    let mut gens = Vec::new();
    for h in hermitian_basis(n) {
        for b in t.basis() {
            gens.push(BlockMatrix::from_blocks(b.blocks.iter().map(|x| h.kron(x)).collect()));
        }
    }
    ConcreteOperatorSystem::build(t.shape().inflate(n), &gens, format!("M{n}({})", t.name())).expect("inflated basis")
}

/// `comm` with a C*-partner coincides with `max`.
pub fn comm_membership(ts: &TensorSystem, u: &BlockMatrix, opts: &MaxOptions, tol: &TolerancePolicy) -> Result<MaxVerdict> {
    if !ts.right.is_full_algebra() {
        return Err(Error::PartnerNotCStar);
    }
    ts.max_membership(u, opts, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GapStatus {
    NoGap,
    GapFound,
    Candidates,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapCandidate {
    pub level: usize,
    pub element: MatrixLevelElement,
    pub status: MaxStatus,
    pub eps_star: Option<f64>,
    pub outer_min: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub status: GapStatus,
    pub tested: usize,
    pub candidates: Vec<GapCandidate>,
    /// Smallest inner/outer spread among undecided candidates.
    pub residual_gap: Option<f64>,
}

/// Searches for min-positive elements that fail max membership.
pub fn nuclearity_gap_probe(
    s: &ConcreteOperatorSystem,
    t: &ConcreteOperatorSystem,
    levels: usize,
    budget: usize,
    opts: &MaxOptions,
    tol: &TolerancePolicy,
) -> Result<GapReport> {
    let base = TensorSystem::new(s, t, TensorStructure::Max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GapReport {
        status: GapStatus::NoGap,
        tested: 0,
        candidates: vec![],
        residual_gap: None,
    };
    for idx in 0..budget {
        let n = 1 + idx % levels.max(1);
        let u = if idx < levels.max(1) {
            structured_candidate(&base, n)
        } else {
            let x = crate::gallery::random_hermitian_level_element(&base.product, n, rng.random());
            let lmin = x.assemble().min_eigenvalue()?;
            x.add(&MatrixLevelElement::diagonal(n, &base.unit().scale_re(-lmin)))
        };
        debug_assert!(base.min_membership(&u, &TolerancePolicy::uniform(1e-7)).unwrap_or(false));
        let v = base.max_membership_level(&u, opts, tol)?;
        report.tested += 1;
        match v.status {
            MaxStatus::Member => {}
            MaxStatus::NotMember => report.status = GapStatus::GapFound,
            MaxStatus::Undecided => {
                if report.status == GapStatus::NoGap {
                    report.status = GapStatus::Candidates;
                }
                if let (Some(e), Some(o)) = (v.eps_star, v.outer_min) {
                    let g = e + o.min(0.0).abs();
                    report.residual_gap = Some(report.residual_gap.map_or(g, |r: f64| r.min(g)));
                }
            }
        }
        if v.status != MaxStatus::Member {
            report.candidates.push(GapCandidate {
                level: n,
                element: u,
                status: v.status,
                eps_star: v.eps_star,
                outer_min: v.outer_min,
            });
        }
    }
    Ok(report)
}

/// `Σ_a s_a ⊗ s̄_a`-type element pushed to the min-cone boundary.
fn structured_candidate(ts: &TensorSystem, n: usize) -> MatrixLevelElement {
    let mut x = ts.product.zero();
    let m = ts.left.dim().min(ts.right.dim());
    for a in 0..m {
        let s = &ts.left.basis()[a];
        let t = &ts.right.basis()[a];
        x = x.add(&s.kron(t));
    }
    let base = MatrixLevelElement::diagonal(n, &x);
    let lmin = base.assemble().min_eigenvalue().unwrap_or(0.0);
    base.add(&MatrixLevelElement::diagonal(n, &ts.unit().scale_re(-lmin)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;
    use proptest::prelude::*;

    fn tol() -> TolerancePolicy {
        TolerancePolicy::default()
    }

    fn m2() -> ConcreteOperatorSystem {
        ConcreteOperatorSystem::matrix_algebra(2)
    }

    #[test]
    fn min_examples() {
        let t = tol();
        let ts = TensorSystem::new(&m2(), &m2(), TensorStructure::Min).unwrap();
        let mut ent = BlockMatrix::zeros(ts.ambient_shape());
        let mut flip = BlockMatrix::zeros(ts.ambient_shape());
        for i in 0..2 {
            for j in 0..2 {
                let eij = BlockMatrix::single(CMatrix::unit(2, i, j));
                let eji = BlockMatrix::single(CMatrix::unit(2, j, i));
                ent = ent.add(&eij.kron(&eij));
                flip = flip.add(&eij.kron(&eji));
            }
        }
        assert!(ts.min_membership(&MatrixLevelElement::level1(ent), &t).unwrap());
        assert!(!ts.min_membership(&MatrixLevelElement::level1(flip), &t).unwrap());
        let p = BlockMatrix::single(CMatrix::diag_real(&[1.0, 0.0]));
        let q = BlockMatrix::single(CMatrix::diag_real(&[0.3, 2.0]));
        assert!(ts.min_membership(&MatrixLevelElement::level1(p.kron(&q)), &t).unwrap());
    }

    #[test]
    fn shortcut_decomposition_reassembles() {
        let t = tol();
        for (s, r) in [
            (gallery::partial_matrix_7(), m2()),
            (gallery::l_infinity(3), gallery::partial_matrix_7()),
            (gallery::l_infinity(2), gallery::l_infinity(3)),
        ] {
            let ts = TensorSystem::new(&s, &r, TensorStructure::Max).unwrap();
            for seed in 0..3 {
                let x = gallery::random_hermitian_level_element(&ts.product, 1, seed);
                let lmin = x.assemble().min_eigenvalue().unwrap();
                let u = x.entries[0].axpy(C64::new(0.05 - lmin, 0.0), &ts.unit());
                let v = ts.max_membership(&u, &MaxOptions::default(), &t).unwrap();
                assert_eq!(v.status, MaxStatus::Member);
                assert_eq!(v.reason, Some(CertificateReason::ReasonNuclearPartner));
                let d = v.decomposition.unwrap();
                assert!(d.residual(&u, &ts.unit()) <= 10.0 * t.feas_margin);
                assert!(d.factors_positive(&TolerancePolicy::uniform(1e-8)).unwrap());
            }
            let neg = ts.unit().scale_re(-1.0);
            let v = ts.max_membership(&neg, &MaxOptions::default(), &t).unwrap();
            assert_eq!(v.status, MaxStatus::NotMember);
            assert!(v.functional.unwrap().value < 0.0);
        }
    }

    #[test]
    fn hierarchy_finds_generator_sums() {
        let t = tol();
        let s = gallery::partial_matrix_7();
        let ts = TensorSystem::new(&s, &s, TensorStructure::Max).unwrap();
        let opts = MaxOptions::default();
        let e = ts.unit();
        let v = ts.max_membership(&e, &opts, &t).unwrap();
        assert_eq!(v.status, MaxStatus::Member);
        let d = v.decomposition.unwrap();
        assert!(d.residual(&e, &ts.unit()) <= 10.0 * t.feas_margin);

        let p1 = BlockMatrix::single(CMatrix::diag_real(&[1.0, 0.0, 0.0]));
        let p2 = BlockMatrix::single(&CMatrix::diag_real(&[1.0, 1.0, 0.0]) + &(&CMatrix::unit(3, 0, 1) + &CMatrix::unit(3, 1, 0)));
        let q1 = BlockMatrix::single(CMatrix::diag_real(&[0.0, 1.0, 2.0]));
        let q2 = BlockMatrix::single(CMatrix::diag_real(&[1.0, 0.0, 1.0]));
        let u = p1.kron(&q1).add(&p2.kron(&q2));
        let v = ts.max_membership(&u, &opts, &t).unwrap();
        assert_eq!(v.status, MaxStatus::Member, "{:?}", v.eps_star);
        let d = v.decomposition.unwrap();
        assert!(d.residual(&u, &ts.unit()) <= 10.0 * t.feas_margin);
        assert!(d.factors_positive(&TolerancePolicy::uniform(1e-6)).unwrap());
    }

    #[test]
    fn non_min_positive_is_not_member_in_hierarchy() {
        let t = tol();
        let s = gallery::partial_matrix_7();
        let ts = TensorSystem::new(&s, &s, TensorStructure::Max).unwrap();
        let opts = MaxOptions {
            restarts: 1,
            alternations: 2,
            ..MaxOptions::default()
        };
        let u = ts.unit().scale_re(-1.0);
        let v = ts.max_membership(&u, &opts, &t).unwrap();
        assert_eq!(v.status, MaxStatus::NotMember);
    }

    #[test]
    fn comm_guard_and_delegation() {
        let t = tol();
        let s = gallery::partial_matrix_7();
        assert!(matches!(
            TensorSystem::new(&m2(), &s, TensorStructure::CommCstar),
            Err(Error::PartnerNotCStar)
        ));
        let ts = TensorSystem::new(&s, &gallery::l_infinity(2), TensorStructure::CommCstar).unwrap();
        let tm = TensorSystem::new(&s, &gallery::l_infinity(2), TensorStructure::Max).unwrap();
        for seed in 0..20 {
            let x = gallery::random_hermitian_level_element(&ts.product, 1, seed);
            let u = x.entries[0].axpy(C64::new(1.0, 0.0), &ts.unit());
            let a = comm_membership(&ts, &u, &MaxOptions::default(), &t).unwrap();
            let b = tm.max_membership(&u, &MaxOptions::default(), &t).unwrap();
            assert_eq!(a.status, b.status);
        }
    }

    #[test]
    fn level_two_reduction_matches_min_for_partner() {
        let t = tol();
        let ts = TensorSystem::new(&gallery::partial_matrix_7(), &m2(), TensorStructure::Max).unwrap();
        for seed in 0..4 {
            let x = gallery::random_hermitian_level_element(&ts.product, 2, seed);
            let lmin = x.assemble().min_eigenvalue().unwrap();
            let shift = if seed % 2 == 0 { 0.05 - lmin } else { -0.05 - lmin };
            let u = x.add(&MatrixLevelElement::diagonal(2, &ts.unit().scale_re(shift)));
            let min = ts.min_membership(&u, &t).unwrap();
            let v = ts.max_membership_level(&u, &MaxOptions::default(), &t).unwrap();
            assert_eq!(min, v.status == MaxStatus::Member);
            let (big, w) = ts.inflate_right(&u).unwrap();
            assert_eq!(min, big.min_membership(&MatrixLevelElement::level1(w), &t).unwrap());
        }
    }

    #[test]
    fn probes_on_nuclear_partners() {
        let t = tol();
        let opts = MaxOptions::default();
        let r = nuclearity_gap_probe(&gallery::l_infinity(3), &gallery::l_infinity(3), 2, 8, &opts, &t).unwrap();
        assert_eq!(r.status, GapStatus::NoGap);
        let r = nuclearity_gap_probe(&m2(), &gallery::partial_matrix_7(), 1, 4, &opts, &t).unwrap();
        assert_eq!(r.status, GapStatus::NoGap);
    }

    #[test]
    fn json_round_trip() {
        let ts = TensorSystem::new(&m2(), &gallery::l_infinity(2), TensorStructure::Min).unwrap();
        let u = ts.unit();
        let j = ts.element_to_json(&u);
        let back = ts.element_from_json(&j).unwrap();
        assert!(back.sub(&u).max_abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn audit_never_rejects_min_positive(seed in 0u64..10_000) {
            let t = tol();
            let ts = TensorSystem::new(&gallery::partial_matrix_7(), &m2(), TensorStructure::Max).unwrap();
            let x = gallery::random_hermitian_level_element(&ts.product, 1, seed);
            let lmin = x.assemble().min_eigenvalue().unwrap();
            let u = x.entries[0].axpy(C64::new(0.01 - lmin, 0.0), &ts.unit());
            let opts = MaxOptions { audit: true, restarts: 2, alternations: 3, samples: 30, seed, ..MaxOptions::default() };
            let v = ts.max_membership(&u, &opts, &t).unwrap();
            prop_assert_ne!(v.status, MaxStatus::NotMember);
            if v.status == MaxStatus::Member {
                prop_assert!(ts.min_membership(&MatrixLevelElement::level1(u.clone()), &t).unwrap());
                if let Some(d) = v.decomposition.filter(|_| v.reason == Some(CertificateReason::ReasonDecomposition)) {
                    prop_assert!(d.residual(&u, &ts.unit()) <= 10.0 * t.feas_margin);
                }
            }
        }
    }
}
