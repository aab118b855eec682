//! Small dense semidefinite programs with certificates.
//!
//! Problems are stated over free real variables `z`:
//!
//! ```text
//!   minimize / maximize  cᵀz + c₀
//!   subject to           E z = f
//!                        F_c(z) = F_c0 + Σ zᵢ F_ci ⪰ 0      (hermitian F_ci)
//! ```
//!
//! Equalities are eliminated, hermitian blocks go through the real symmetric
//! embedding, and the reduced problem is solved as the dual of a standard
//! primal–dual pair by an infeasible HKM predictor–corrector method.
//! LPs are the special case of 1×1 blocks.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, TolerancePolicy, C64};

/// `Σ coef·z_var + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn var(v: usize) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![],
            constant: c,
        }
    }

    pub fn add_term(&mut self, v: usize, c: f64) {
        if c != 0.0 {
            self.terms.push((v, c));
        }
    }

    pub fn plus(mut self, other: &LinExpr) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.1 *= s);
        self.constant *= s;
        self
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * z[v]).sum::<f64>()
    }
}

/// Matrix-valued affine expression `M₀ + Σ zᵢ Mᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    pub constant: CMatrix,
    pub terms: Vec<(usize, CMatrix)>,
}

impl AffineMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            constant: CMatrix::zeros(rows, cols),
            terms: vec![],
        }
    }

    pub fn constant(m: CMatrix) -> Self {
        Self {
            constant: m,
            terms: vec![],
        }
    }

    pub fn rows(&self) -> usize {
        self.constant.rows()
    }

    pub fn cols(&self) -> usize {
        self.constant.cols()
    }

    pub fn add_term(&mut self, v: usize, m: CMatrix) {
        self.terms.push((v, m));
    }

    pub fn add_constant(&mut self, m: &CMatrix) {
        self.constant = &self.constant + m;
    }

    pub fn add(&mut self, other: &AffineMatrix) {
        self.constant = &self.constant + &other.constant;
        self.terms.extend(other.terms.iter().cloned());
    }

    pub fn scaled(&self, z: C64) -> Self {
        Self {
            constant: self.constant.scale(z),
            terms: self.terms.iter().map(|(v, m)| (*v, m.scale(z))).collect(),
        }
    }

    /// Applies a fixed linear map to the constant and every coefficient.
    pub fn map(&self, f: impl Fn(&CMatrix) -> CMatrix) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(v, m)| (*v, f(m))).collect(),
        }
    }

    pub fn adjoint(&self) -> Self {
        self.map(CMatrix::adjoint)
    }

    /// Real and imaginary parts of `Tr(W · self)`.
    pub fn trace_with(&self, w: &CMatrix) -> (LinExpr, LinExpr) {
        let c = w.trace_product(&self.constant);
        let mut re = LinExpr::constant(c.re);
        let mut im = LinExpr::constant(c.im);
        for (v, m) in &self.terms {
            let t = w.trace_product(m);
            re.add_term(*v, t.re);
            im.add_term(*v, t.im);
        }
        (re, im)
    }

    /// Real and imaginary parts of entry `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> (LinExpr, LinExpr) {
        let c = self.constant.get(i, j);
        let mut re = LinExpr::constant(c.re);
        let mut im = LinExpr::constant(c.im);
        for (v, m) in &self.terms {
            let t = m.get(i, j);
            re.add_term(*v, t.re);
            im.add_term(*v, t.im);
        }
        (re, im)
    }

    pub fn eval(&self, z: &[f64]) -> CMatrix {
        let mut out = self.constant.clone();
        for (v, m) in &self.terms {
            out = &out + &m.scale_re(z[*v]);
        }
        out
    }
}

/// Places the `n×n` array `entries` (row-major) into one large matrix.
pub fn assemble_affine(n: usize, entries: &[AffineMatrix]) -> AffineMatrix {
    let d = entries[0].rows();
    let mut out = AffineMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            let e = &entries[i * n + j];
            out.constant.set_block(i * d, j * d, &e.constant);
            for (v, m) in &e.terms {
                let mut big = CMatrix::zeros(n * d, n * d);
                big.set_block(i * d, j * d, m);
                out.terms.push((*v, big));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub sense: Sense,
    pub objective: LinExpr,
    pub equalities: Vec<(LinExpr, f64)>,
    pub psd: Vec<AffineMatrix>,
}

/// A hermitian matrix variable `Σ zᵢ Bᵢ` over an orthonormal hermitian basis.
#[derive(Debug, Clone)]
pub struct HermitianVar {
    pub vars: Vec<usize>,
    pub expr: AffineMatrix,
}

impl HermitianVar {
    pub fn value(&self, z: &[f64]) -> CMatrix {
        self.expr.eval(z)
    }
}

impl SdpProblem {
    pub fn new(sense: Sense) -> Self {
        Self {
            num_vars: 0,
            sense,
            objective: LinExpr::default(),
            equalities: vec![],
            psd: vec![],
        }
    }

    pub fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.num_vars - 1
    }

    pub fn add_vars(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.add_var()).collect()
    }

    pub fn add_hermitian(&mut self, n: usize) -> HermitianVar {
        let basis = crate::linalg::hermitian_basis(n);
        let vars = self.add_vars(basis.len());
        let mut expr = AffineMatrix::zeros(n, n);
        for (v, b) in vars.iter().zip(basis) {
            expr.add_term(*v, b);
        }
        HermitianVar { vars, expr }
    }

    pub fn set_objective(&mut self, obj: LinExpr) {
        self.objective = obj;
    }

    pub fn add_eq(&mut self, lhs: LinExpr, target: f64) {
        let t = target - lhs.constant;
        self.equalities.push((
            LinExpr {
                terms: lhs.terms,
                constant: 0.0,
            },
            t,
        ));
    }

    /// Adds `Re` and `Im` equalities for `lhs = target` entrywise.
    pub fn add_matrix_eq(&mut self, lhs: &AffineMatrix, target: &CMatrix) {
        for i in 0..lhs.rows() {
            for j in 0..lhs.cols() {
                let (re, im) = lhs.entry(i, j);
                let t = target.get(i, j);
                self.add_eq(re, t.re);
                self.add_eq(im, t.im);
            }
        }
    }

    /// Like [`add_matrix_eq`](Self::add_matrix_eq) for hermitian-valued
    /// expressions, using only the upper triangle.
    pub fn add_hermitian_eq(&mut self, lhs: &AffineMatrix, target: &CMatrix) {
        for i in 0..lhs.rows() {
            for j in i..lhs.cols() {
                let (re, im) = lhs.entry(i, j);
                let t = target.get(i, j);
                self.add_eq(re, t.re);
                if i != j {
                    self.add_eq(im, t.im);
                }
            }
        }
    }

    pub fn add_psd(&mut self, m: AffineMatrix) {
        debug_assert!(m.constant.is_square());
        self.psd.push(m);
    }

    /// Plain-text dump for reproducing a solve outside the toolkit.
    pub fn to_sexpr(&self) -> String {
        fn mat(m: &CMatrix) -> String {
            let mut s = String::from("(");
            for i in 0..m.rows() {
                s.push('(');
                for j in 0..m.cols() {
                    let z = m.get(i, j);
                    let _ = write!(s, "({} {})", z.re, z.im);
                }
                s.push(')');
            }
            s.push(')');
            s
        }
        let mut out = String::new();
        let sense = match self.sense {
            Sense::Min => "min",
            Sense::Max => "max",
        };
        let _ = writeln!(out, "(sdp (sense {sense}) (vars {})", self.num_vars);
        let _ = write!(out, "  (objective (const {})", self.objective.constant);
        for (v, c) in &self.objective.terms {
            let _ = write!(out, " ({v} {c})");
        }
        out.push_str(")\n");
        for (lhs, t) in &self.equalities {
            out.push_str("  (eq (");
            for (v, c) in &lhs.terms {
                let _ = write!(out, "({v} {c})");
            }
            let _ = writeln!(out, ") {t})");
        }
        for p in &self.psd {
            let _ = writeln!(out, "  (psd (dim {}) (const {})", p.rows(), mat(&p.constant));
            for (v, m) in &p.terms {
                let _ = writeln!(out, "    (term {v} {})", mat(m));
            }
            out.push_str("  )\n");
        }
        out.push(')');
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConicStatus {
    Optimal,
    Feasible,
    Infeasible,
    Unbounded,
    NumericFail,
}

/// Multipliers `(Y_c ⪰ 0, μ)`. For an optimal solve they certify the bound
/// `value`; for an infeasible one `Σ⟨Y_c, F_c(z)⟩ + μᵀ(Ez − f) = value < 0`
/// for every `z`, while the left side would be `≥ 0` at any feasible point.
#[derive(Debug, Clone)]
pub struct DualCertificate {
    pub psd: Vec<CMatrix>,
    pub equality: Vec<f64>,
    pub value: f64,
}

impl DualCertificate {
    /// Residual of `Σ⟨Y_c, F_ci⟩ + (Eᵀμ)ᵢ = target_i` over all variables.
    pub fn stationarity_residual(&self, p: &SdpProblem, target: &[f64]) -> f64 {
        let mut g = vec![0.0; p.num_vars];
        for (c, y) in p.psd.iter().zip(self.psd.iter()) {
            for (v, m) in &c.terms {
                g[*v] += y.trace_product(m).re;
            }
        }
        for ((lhs, _), mu) in p.equalities.iter().zip(self.equality.iter()) {
            for &(v, c) in &lhs.terms {
                g[v] += mu * c;
            }
        }
        g.iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct ConicResult {
    pub status: ConicStatus,
    pub value_lo: f64,
    pub value_hi: f64,
    pub primal: Option<Vec<f64>>,
    pub dual_certificate: Option<DualCertificate>,
    pub iterations: usize,
    pub residuals: Residuals,
}

impl ConicResult {
    pub fn value(&self) -> f64 {
        0.5 * (self.value_lo + self.value_hi)
    }

    pub fn is_optimal(&self) -> bool {
        matches!(self.status, ConicStatus::Optimal | ConicStatus::Feasible)
    }

    pub fn expect_optimal(&self, what: &str) -> Result<&Self> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(Error::SolverFail(format!(
                "{what}: status {:?}, residuals {:?}",
                self.status, self.residuals
            )))
        }
    }

    pub fn z(&self) -> &[f64] {
        self.primal.as_deref().unwrap_or(&[])
    }
}

/// Evaluates a problem's pieces at a point: objective, worst equality
/// residual, most negative eigenvalue across PSD blocks.
pub fn evaluate(p: &SdpProblem, z: &[f64]) -> (f64, f64, f64) {
    let obj = p.objective.eval(z);
    let eq = p
        .equalities
        .iter()
        .map(|(l, t)| (l.eval(z) - t).abs())
        .fold(0.0, f64::max);
    let mut lmin = f64::INFINITY;
    for c in &p.psd {
        let m = c.eval(z);
        let (h, _) = m.hermitian_parts();
        if let Ok(e) = crate::linalg::eig_hermitian(&h) {
            if let Some(&l) = e.values.last() {
                lmin = lmin.min(l);
            }
        }
    }
    (obj, eq, lmin)
}

// ---------------------------------------------------------------------------
// Reduction to standard form.

/// Row-space / null-space split of the equality system.
struct Elimination {
    z0: Vec<f64>,
    null: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn dense_rows(p: &SdpProblem) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = p.num_vars;
    let mut rows = Vec::with_capacity(p.equalities.len());
    let mut rhs = Vec::with_capacity(p.equalities.len());
    for (l, t) in &p.equalities {
        let mut r = vec![0.0; m];
        for &(v, c) in &l.terms {
            r[v] += c;
        }
        rows.push(r);
        rhs.push(*t);
    }
    (rows, rhs)
}

/// Least-squares `μ` with `Eᵀμ ≈ target`.
fn least_squares_multipliers(rows: &[Vec<f64>], target: &[f64]) -> Vec<f64> {
    let q = rows.len();
    if q == 0 {
        return vec![];
    }
    let m = target.len();
    let et = DMatrix::from_fn(m, q, |i, k| rows[k][i]);
    let svd = et.svd(true, true);
    let sol = svd
        .solve(&DVector::from_column_slice(target), 1e-12)
        .unwrap_or_else(|_| DVector::zeros(q));
    sol.iter().copied().collect()
}

fn eliminate(rows: &[Vec<f64>], rhs: &[f64], m: usize) -> std::result::Result<Elimination, Vec<f64>> {
    // Modified Gram–Schmidt on the rows, recording coefficients.
    let mut q_rows: Vec<Vec<f64>> = Vec::new();
    let mut coef_rows: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let scale = norm(r);
        let mut v = r.clone();
        let mut coefs = vec![0.0; q_rows.len()];
        for _ in 0..2 {
            for (l, q) in q_rows.iter().enumerate() {
                let c = dot(q, &v);
                coefs[l] += c;
                v.iter_mut().zip(q.iter()).for_each(|(a, b)| *a -= c * b);
            }
        }
        let nv = norm(&v);
        if scale > 0.0 && nv > 1e-10 * scale {
            v.iter_mut().for_each(|a| *a /= nv);
            q_rows.push(v);
            coefs.push(nv);
            for cr in coef_rows.iter_mut() {
                cr.push(0.0);
            }
        }
        coef_rows.push(coefs);
    }
    let r = q_rows.len();
    for cr in coef_rows.iter_mut() {
        cr.resize(r, 0.0);
    }
    let mut z0 = vec![0.0; m];
    if r > 0 {
        let l = DMatrix::from_fn(rows.len(), r, |i, j| coef_rows[i][j]);
        let c = l
            .svd(true, true)
            .solve(&DVector::from_column_slice(rhs), 1e-14)
            .unwrap_or_else(|_| DVector::zeros(r));
        for (k, q) in q_rows.iter().enumerate() {
            z0.iter_mut().zip(q.iter()).for_each(|(a, b)| *a += c[k] * b);
        }
    }
    let resid: Vec<f64> = rows
        .iter()
        .zip(rhs.iter())
        .map(|(row, t)| t - dot(row, &z0))
        .collect();
    let rscale = 1.0 + norm(rhs);
    if norm(&resid) > 1e-9 * rscale {
        return Err(resid);
    }
    let mut null: Vec<Vec<f64>> = Vec::with_capacity(m - r);
    for i in 0..m {
        if null.len() + r == m {
            break;
        }
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        for _ in 0..2 {
            for q in q_rows.iter().chain(null.iter()) {
                let c = dot(q, &v);
                v.iter_mut().zip(q.iter()).for_each(|(a, b)| *a -= c * b);
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|a| *a /= nv);
            null.push(v);
        }
    }
    Ok(Elimination { z0, null })
}

/// One real symmetric cone block and where it came from.
struct BlockInfo {
    constraint: usize,
    complex: bool,
    n: usize,
}

fn embed(m: &CMatrix, complex: bool) -> DMatrix<f64> {
    let (h, _) = m.hermitian_parts();
    if complex {
        h.real_embedding()
    } else {
        h.real_part()
    }
}

/// Hermitian functional represented by a real symmetric multiplier block.
fn unembed(x: &DMatrix<f64>, info: &BlockInfo) -> CMatrix {
    let n = info.n;
    if !info.complex {
        return CMatrix::from_fn(n, n, |i, j| C64::new(x[(i, j)], 0.0));
    }
    CMatrix::from_fn(n, n, |i, j| {
        C64::new(
            x[(i, j)] + x[(i + n, j + n)],
            x[(i + n, j)] - x[(i, j + n)],
        )
    })
}

/// Standard dual form `max bᵀy  s.t.  C − Σ yⱼ Aⱼ ⪰ 0`; `a[j]` lists the
/// nonzero blocks of `Aⱼ`.
struct StandardForm {
    sizes: Vec<usize>,
    c: Vec<DMatrix<f64>>,
    a: Vec<Vec<(usize, DMatrix<f64>)>>,
    b: Vec<f64>,
}

pub fn solve_sdp(p: &SdpProblem, tol: &TolerancePolicy) -> ConicResult {
    let m = p.num_vars;
    let (rows, rhs) = dense_rows(p);
    let elim = match eliminate(&rows, &rhs, m) {
        Ok(e) => e,
        Err(resid) => {
            let value = -dot(&resid, &rhs);
            return ConicResult {
                status: ConicStatus::Infeasible,
                value_lo: f64::NAN,
                value_hi: f64::NAN,
                primal: None,
                dual_certificate: Some(DualCertificate {
                    psd: p.psd.iter().map(|c| CMatrix::zeros(c.rows(), c.rows())).collect(),
                    equality: resid,
                    value,
                }),
                iterations: 0,
                residuals: Residuals::default(),
            };
        }
    };

    let mut c_obj = vec![0.0; m];
    for &(v, c) in &p.objective.terms {
        c_obj[v] += c;
    }
    let sign = match p.sense {
        Sense::Min => -1.0,
        Sense::Max => 1.0,
    };
    let nw = elim.null.len();

    // Blocks of the reduced problem.
    let mut infos = Vec::new();
    let mut sizes = Vec::new();
    let mut c_blocks = Vec::new();
    let mut a_cols: Vec<Vec<(usize, DMatrix<f64>)>> = vec![Vec::new(); nw];
    for (ci, con) in p.psd.iter().enumerate() {
        let n = con.rows();
        if n == 0 {
            continue;
        }
        let complex = !con.constant.is_real() || con.terms.iter().any(|(_, t)| !t.is_real());
        let mut g0 = con.constant.clone();
        let mut gj = vec![CMatrix::zeros(n, n); nw];
        let mut scale = con.constant.max_abs();
        for (v, t) in &con.terms {
            scale = scale.max(t.max_abs());
            if elim.z0[*v] != 0.0 {
                g0 = &g0 + &t.scale_re(elim.z0[*v]);
            }
            for (j, nv) in elim.null.iter().enumerate() {
                if nv[*v] != 0.0 {
                    gj[j] = &gj[j] + &t.scale_re(nv[*v]);
                }
            }
        }
        let blk = sizes.len();
        sizes.push(if complex { 2 * n } else { n });
        c_blocks.push(embed(&g0, complex));
        for (j, g) in gj.iter().enumerate() {
            if g.max_abs() > 1e-14 * scale.max(1.0) {
                a_cols[j].push((blk, -embed(g, complex)));
            }
        }
        infos.push(BlockInfo {
            constraint: ci,
            complex,
            n,
        });
    }
    let b_w: Vec<f64> = elim
        .null
        .iter()
        .map(|nv| sign * dot(nv, &c_obj))
        .collect();

    // Orthonormalize the constraint matrices: y = T u.
    let gram = DMatrix::from_fn(nw, nw, |i, j| {
        let mut s = 0.0;
        for (bi, ai) in &a_cols[i] {
            for (bj, aj) in &a_cols[j] {
                if bi == bj {
                    s += ai.dot(aj);
                }
            }
        }
        s
    });
    let (t_cols, unbounded_dir) = if nw == 0 {
        (vec![], false)
    } else {
        let eig = gram.symmetric_eigen();
        let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let bnorm = norm(&b_w).max(1e-300);
        let mut cols = Vec::new();
        let mut unb = false;
        for k in 0..nw {
            let lam = eig.eigenvalues[k];
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            if lam > 1e-12 * lmax.max(1e-300) && lmax > 0.0 {
                cols.push(v.iter().map(|x| x / lam.sqrt()).collect::<Vec<f64>>());
            } else if dot(&v, &b_w).abs() > 1e-9 * bnorm.max(1.0) {
                unb = true;
            }
        }
        (cols, unb)
    };
    let nu = t_cols.len();
    let mut a_std: Vec<Vec<(usize, DMatrix<f64>)>> = Vec::with_capacity(nu);
    let mut b_std = Vec::with_capacity(nu);
    for t in &t_cols {
        let mut blocks: Vec<Option<DMatrix<f64>>> = vec![None; sizes.len()];
        for (j, tj) in t.iter().enumerate() {
            if *tj == 0.0 {
                continue;
            }
            for (b, a) in &a_cols[j] {
                match &mut blocks[*b] {
                    Some(acc) => *acc += a * *tj,
                    None => blocks[*b] = Some(a * *tj),
                }
            }
        }
        a_std.push(
            blocks
                .into_iter()
                .enumerate()
                .filter_map(|(b, m)| m.map(|m| (b, m)))
                .collect(),
        );
        b_std.push(dot(t, &b_w));
    }
    let sf = StandardForm {
        sizes,
        c: c_blocks,
        a: a_std,
        b: b_std,
    };

    let ipm = if nu == 0 {
        trivial_solve(&sf)
    } else {
        hkm(&sf, tol)
    };

    // Map back to the user's variables.
    let w: Vec<f64> = (0..nw)
        .map(|j| t_cols.iter().zip(ipm.y.iter()).map(|(t, u)| t[j] * u).sum())
        .collect();
    let mut z = elim.z0.clone();
    for (nv, wj) in elim.null.iter().zip(w.iter()) {
        z.iter_mut().zip(nv.iter()).for_each(|(a, b)| *a += wj * b);
    }
    let mut ys: Vec<CMatrix> = p.psd.iter().map(|c| CMatrix::zeros(c.rows(), c.rows())).collect();
    for (info, x) in infos.iter().zip(ipm.x.iter()) {
        ys[info.constraint] = unembed(x, info);
    }
    let g: Vec<f64> = {
        let mut g = vec![0.0; m];
        for (con, y) in p.psd.iter().zip(ys.iter()) {
            for (v, t) in &con.terms {
                g[*v] += y.trace_product(t).re;
            }
        }
        g
    };
    let psd_const: f64 = p
        .psd
        .iter()
        .zip(ys.iter())
        .map(|(c, y)| y.trace_product(&c.constant).re)
        .sum();

    let residuals = ipm.residuals;
    let iterations = ipm.iterations;
    match ipm.status {
        IpmStatus::Optimal | IpmStatus::Stalled => {
            let ok = ipm.status == IpmStatus::Optimal
                || (residuals.primal <= tol.feas_margin
                    && residuals.dual <= tol.feas_margin
                    && residuals.gap <= tol.feas_margin);
            // Stationarity: c = ±(g + Eᵀμ).
            let target: Vec<f64> = match p.sense {
                Sense::Min => c_obj.iter().zip(g.iter()).map(|(c, gi)| c - gi).collect(),
                Sense::Max => c_obj.iter().zip(g.iter()).map(|(c, gi)| -c - gi).collect(),
            };
            let mu = least_squares_multipliers(&rows, &target);
            let mu_f = dot(&mu, &rhs);
            let primal_val = p.objective.eval(&z);
            let cert_val = match p.sense {
                Sense::Min => -psd_const + mu_f + p.objective.constant,
                Sense::Max => psd_const - mu_f + p.objective.constant,
            };
            // The bound itself comes from the standard form; rebuilding it
            // from (Y, μ) cancels badly when the multipliers are large.
            let cx = blocks_dot(&sf.c, &ipm.x);
            let cz0 = dot(&c_obj, &elim.z0) + p.objective.constant;
            let dual_val = match p.sense {
                Sense::Min => cz0 - cx,
                Sense::Max => cz0 + cx,
            };
            let (lo, hi) = if dual_val <= primal_val {
                (dual_val, primal_val)
            } else {
                (primal_val, dual_val)
            };
            let width_ok = hi - lo <= tol.feas_margin * hi.abs().max(1.0);
            let status = if ok && width_ok {
                if c_obj.iter().all(|c| *c == 0.0) {
                    ConicStatus::Feasible
                } else {
                    ConicStatus::Optimal
                }
            } else {
                ConicStatus::NumericFail
            };
            ConicResult {
                status,
                value_lo: lo,
                value_hi: hi,
                primal: Some(z),
                dual_certificate: Some(DualCertificate {
                    psd: ys,
                    equality: mu,
                    value: cert_val,
                }),
                iterations,
                residuals,
            }
        }
        IpmStatus::DualInfeasible => {
            // The model is infeasible: certificate from the primal ray.
            let target: Vec<f64> = g.iter().map(|gi| -gi).collect();
            let mu = least_squares_multipliers(&rows, &target);
            let value = psd_const - dot(&mu, &rhs);
            ConicResult {
                status: ConicStatus::Infeasible,
                value_lo: f64::NAN,
                value_hi: f64::NAN,
                primal: None,
                dual_certificate: Some(DualCertificate {
                    psd: ys,
                    equality: mu,
                    value,
                }),
                iterations,
                residuals,
            }
        }
        IpmStatus::PrimalInfeasible => unbounded(p, z, iterations, residuals),
        IpmStatus::Trivial if unbounded_dir => unbounded(p, z, iterations, residuals),
        IpmStatus::Trivial => {
            let v = p.objective.eval(&z);
            ConicResult {
                status: if c_obj.iter().all(|c| *c == 0.0) {
                    ConicStatus::Feasible
                } else {
                    ConicStatus::Optimal
                },
                value_lo: v,
                value_hi: v,
                primal: Some(z),
                dual_certificate: Some(DualCertificate {
                    psd: ys,
                    equality: vec![0.0; rows.len()],
                    value: v,
                }),
                iterations,
                residuals,
            }
        }
        IpmStatus::Failed => ConicResult {
            status: ConicStatus::NumericFail,
            value_lo: f64::NAN,
            value_hi: f64::NAN,
            primal: Some(z),
            dual_certificate: None,
            iterations,
            residuals,
        },
    }
}

fn unbounded(p: &SdpProblem, z: Vec<f64>, iterations: usize, residuals: Residuals) -> ConicResult {
    let (lo, hi) = match p.sense {
        Sense::Min => (f64::NEG_INFINITY, f64::NEG_INFINITY),
        Sense::Max => (f64::INFINITY, f64::INFINITY),
    };
    ConicResult {
        status: ConicStatus::Unbounded,
        value_lo: lo,
        value_hi: hi,
        primal: Some(z),
        dual_certificate: None,
        iterations,
        residuals,
    }
}

// ---------------------------------------------------------------------------
// Interior point.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IpmStatus {
    Optimal,
    Stalled,
    /// `C − Aᵀy ⪰ 0` has no solution.
    DualInfeasible,
    /// `A(X) = b, X ⪰ 0` has no solution.
    PrimalInfeasible,
    Trivial,
    Failed,
}

struct IpmOutcome {
    status: IpmStatus,
    x: Vec<DMatrix<f64>>,
    y: Vec<f64>,
    iterations: usize,
    residuals: Residuals,
}

const MAX_ITER: usize = 200;
const TARGET: f64 = 1e-10;

/// No free variables left: only `C ⪰ 0` to decide.
fn trivial_solve(sf: &StandardForm) -> IpmOutcome {
    let mut worst: Option<(usize, f64, DVector<f64>)> = None;
    for (b, c) in sf.c.iter().enumerate() {
        let e = c.clone().symmetric_eigen();
        let (k, lam) = e
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, &l)| if l < acc.1 { (k, l) } else { acc });
        if worst.as_ref().is_none_or(|w| lam < w.1) {
            worst = Some((b, lam, e.eigenvectors.column(k).into_owned()));
        }
    }
    let mut x: Vec<DMatrix<f64>> = sf.sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    let scale = sf.c.iter().map(|c| c.amax()).fold(1.0, f64::max);
    match worst {
        Some((b, lam, v)) if lam < -1e-12 * scale => {
            x[b] = (&v * v.transpose()) / (-lam);
            IpmOutcome {
                status: IpmStatus::DualInfeasible,
                x,
                y: vec![],
                iterations: 0,
                residuals: Residuals::default(),
            }
        }
        _ => IpmOutcome {
            status: IpmStatus::Trivial,
            x,
            y: vec![],
            iterations: 0,
            residuals: Residuals::default(),
        },
    }
}

fn blocks_dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.dot(y)).sum()
}

fn blocks_norm(a: &[DMatrix<f64>]) -> f64 {
    blocks_dot(a, a).sqrt()
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Largest `α` with `X + α·D ⪰ 0` (∞ when unconstrained).
fn max_step(x: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    if x.nrows() == 1 {
        return if d[(0, 0)] < 0.0 { -x[(0, 0)] / d[(0, 0)] } else { f64::INFINITY };
    }
    let Some(ch) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = ch.l();
    let linv = l.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(x.nrows(), x.nrows()));
    let w = sym(&linv * d * linv.transpose());
    let lmin = w.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn inverse_spd(s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if s.nrows() == 1 {
        return if s[(0, 0)] > 0.0 {
            Some(DMatrix::from_element(1, 1, 1.0 / s[(0, 0)]))
        } else {
            None
        };
    }
    s.clone().cholesky().map(|c| c.inverse())
}

fn hkm(sf: &StandardForm, tol: &TolerancePolicy) -> IpmOutcome {
    let nb = sf.sizes.len();
    let m = sf.b.len();
    let n_total: usize = sf.sizes.iter().sum();

    // Per-block index of constraint matrices, for the Schur complement.
    let mut by_block: Vec<Vec<(usize, &DMatrix<f64>)>> = vec![Vec::new(); nb];
    for (j, aj) in sf.a.iter().enumerate() {
        for (b, a) in aj {
            by_block[*b].push((j, a));
        }
    }

    let bnorm = norm(&sf.b);
    let cnorm = blocks_norm(&sf.c);
    let mut x: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
    let mut s: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
    for b in 0..nb {
        let n = sf.sizes[b] as f64;
        let mut xi: f64 = 10f64.max(n.sqrt());
        let mut eta: f64 = 10f64.max(n.sqrt()).max(sf.c[b].norm());
        for (j, a) in &by_block[b] {
            let an = a.norm();
            xi = xi.max(n * (1.0 + sf.b[*j].abs()) / (1.0 + an));
            eta = eta.max(an);
        }
        x.push(DMatrix::identity(sf.sizes[b], sf.sizes[b]) * xi);
        s.push(DMatrix::identity(sf.sizes[b], sf.sizes[b]) * eta);
    }
    let mut y = vec![0.0; m];

    let aop = |z: &[DMatrix<f64>]| -> Vec<f64> {
        sf.a
            .iter()
            .map(|aj| aj.iter().map(|(b, a)| a.dot(&z[*b])).sum())
            .collect()
    };
    let aty = |v: &[f64]| -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = sf.sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (j, aj) in sf.a.iter().enumerate() {
            if v[j] == 0.0 {
                continue;
            }
            for (b, a) in aj {
                out[*b] += a * v[j];
            }
        }
        out
    };

    let mut best_merit = f64::INFINITY;
    let mut since_best = 0usize;
    let mut residuals = Residuals::default();
    let mut best: Option<(Vec<DMatrix<f64>>, Vec<f64>, Residuals)> = None;

    for iter in 0..MAX_ITER {
        let ax = aop(&x);
        let rp: Vec<f64> = sf.b.iter().zip(ax.iter()).map(|(b, a)| b - a).collect();
        let aty_y = aty(&y);
        let rd: Vec<DMatrix<f64>> = (0..nb).map(|b| &sf.c[b] - &aty_y[b] - &s[b]).collect();
        let pobj = blocks_dot(&sf.c, &x);
        let dobj = dot(&sf.b, &y);
        let gap = blocks_dot(&x, &s);
        let mu = gap / n_total as f64;
        let pinf = norm(&rp) / (1.0 + bnorm);
        let dinf = blocks_norm(&rd) / (1.0 + cnorm);
        let denom = 1.0 + pobj.abs() + dobj.abs();
        let relgap = ((pobj - dobj).abs()).max(gap.abs()) / denom;
        residuals = Residuals {
            primal: pinf,
            dual: dinf,
            gap: relgap,
        };
        let merit = pinf.max(dinf).max(relgap);
        if merit < best_merit * 0.9 {
            best_merit = merit;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if best.as_ref().is_none_or(|b| merit <= b.2.primal.max(b.2.dual).max(b.2.gap)) {
            best = Some((x.clone(), y.clone(), residuals));
        }
        if pinf < TARGET && dinf < TARGET && relgap < TARGET {
            return IpmOutcome {
                status: IpmStatus::Optimal,
                x,
                y,
                iterations: iter,
                residuals,
            };
        }

        // Infeasibility rays.
        if iter >= 3 {
            if pobj < 0.0 {
                let ray = norm(&ax) / (-pobj);
                if ray < 1e-9 && -pobj > 1e3 * (1.0 + cnorm) * 1e-6 && dinf > 1e-6 {
                    let scale = -pobj;
                    return IpmOutcome {
                        status: IpmStatus::DualInfeasible,
                        x: x.iter().map(|xb| xb / scale).collect(),
                        y,
                        iterations: iter,
                        residuals,
                    };
                }
            }
            if dobj > 0.0 {
                let cm: Vec<DMatrix<f64>> = (0..nb).map(|b| &rd[b] - &sf.c[b]).collect();
                if blocks_norm(&cm) / dobj < 1e-9 && pinf > 1e-6 {
                    return IpmOutcome {
                        status: IpmStatus::PrimalInfeasible,
                        x,
                        y,
                        iterations: iter,
                        residuals,
                    };
                }
            }
        }
        if since_best > 12 {
            break;
        }

        // Schur complement M_ij = Tr(A_i X A_j S⁻¹).
        let mut sinv = Vec::with_capacity(nb);
        for sb in &s {
            match inverse_spd(sb) {
                Some(i) => sinv.push(i),
                None => {
                    return finish_stalled(best, iter, residuals);
                }
            }
        }
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for (j, aj) in sf.a.iter().enumerate() {
            for (b, a) in aj {
                let g = &x[*b] * a * &sinv[*b];
                for (i, ai) in &by_block[*b] {
                    schur[(*i, j)] += ai.dot(&g);
                }
            }
        }
        let schur = sym(schur);
        let diag_max = schur.diagonal().amax().max(1e-300);
        let factor = {
            let mut reg = 0.0;
            loop {
                let mut mm = schur.clone();
                for i in 0..m {
                    mm[(i, i)] += reg;
                }
                if let Some(ch) = mm.cholesky() {
                    break Some(ch);
                }
                reg = if reg == 0.0 { 1e-14 * diag_max } else { reg * 100.0 };
                if reg > 1e-4 * diag_max {
                    break None;
                }
            }
        };
        let Some(factor) = factor else {
            return finish_stalled(best, iter, residuals);
        };

        let x_rd_sinv: Vec<DMatrix<f64>> = (0..nb).map(|b| &x[b] * &rd[b] * &sinv[b]).collect();
        let a_xrds = aop(&x_rd_sinv);

        let direction = |sigma_mu: f64, corr: Option<&[DMatrix<f64>]>| {
            let base: Vec<DMatrix<f64>> = (0..nb)
                .map(|b| {
                    let mut t = &sinv[b] * sigma_mu - &x[b];
                    if let Some(c) = corr {
                        t -= &c[b] * &sinv[b];
                    }
                    t
                })
                .collect();
            let a_base = aop(&base);
            let rhs: Vec<f64> = (0..m).map(|i| rp[i] - a_base[i] + a_xrds[i]).collect();
            let dy = factor.solve(&DVector::from_vec(rhs));
            let dy: Vec<f64> = dy.iter().copied().collect();
            let at_dy = aty(&dy);
            let ds: Vec<DMatrix<f64>> = (0..nb).map(|b| &rd[b] - &at_dy[b]).collect();
            let dx: Vec<DMatrix<f64>> = (0..nb)
                .map(|b| sym(&base[b] - &x[b] * &ds[b] * &sinv[b]))
                .collect();
            (dx, dy, ds)
        };
        let steps = |dx: &[DMatrix<f64>], ds: &[DMatrix<f64>]| -> (f64, f64) {
            let ap = (0..nb).map(|b| max_step(&x[b], &dx[b])).fold(f64::INFINITY, f64::min);
            let ad = (0..nb).map(|b| max_step(&s[b], &ds[b])).fold(f64::INFINITY, f64::min);
            (ap, ad)
        };

        let (dx_a, _dy_a, ds_a) = direction(0.0, None);
        let (ap, ad) = steps(&dx_a, &ds_a);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff = (0..nb)
            .map(|b| (&x[b] + &dx_a[b] * ap).dot(&(&s[b] + &ds_a[b] * ad)))
            .sum::<f64>()
            / n_total as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let corr: Vec<DMatrix<f64>> = (0..nb).map(|b| &dx_a[b] * &ds_a[b]).collect();
        let (dx, dy, ds) = direction(sigma * mu, Some(&corr));
        let (ap, ad) = steps(&dx, &ds);
        let tau = if merit < 1e-6 { 0.99 } else { 0.95 };
        let ap = (tau * ap).min(1.0);
        let ad = (tau * ad).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            return finish_stalled(best, iter, residuals);
        }
        for b in 0..nb {
            x[b] += &dx[b] * ap;
            s[b] += &ds[b] * ad;
        }
        y.iter_mut().zip(dy.iter()).for_each(|(a, d)| *a += ad * d);
    }
    let _ = tol;
    finish_stalled(best, MAX_ITER, residuals)
}

fn finish_stalled(
    best: Option<(Vec<DMatrix<f64>>, Vec<f64>, Residuals)>,
    iterations: usize,
    last: Residuals,
) -> IpmOutcome {
    match best {
        Some((x, y, r)) => IpmOutcome {
            status: IpmStatus::Stalled,
            x,
            y,
            iterations,
            residuals: r,
        },
        None => IpmOutcome {
            status: IpmStatus::Failed,
            x: vec![],
            y: vec![],
            iterations,
            residuals: last,
        },
    }
}

/// Smallest `t` in `[lo, hi]` where a monotone predicate turns true, to
/// within `tol`.
pub fn bisect_scalar(
    mut pred: impl FnMut(f64) -> Result<bool>,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    if !(lo <= hi) {
        return Err(Error::BracketInvalid(format!("lo {lo} > hi {hi}")));
    }
    if pred(lo)? {
        return Err(Error::BracketInvalid(format!("predicate already true at lo = {lo}")));
    }
    if !pred(hi)? {
        return Err(Error::BracketInvalid(format!("predicate false at hi = {hi}")));
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if pred(mid)? {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Helper for building `λ·I` style terms.
pub fn scalar_identity(n: usize, s: f64) -> CMatrix {
    CMatrix::identity(n).scale_re(s)
}
