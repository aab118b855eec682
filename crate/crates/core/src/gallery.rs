//! Named example systems, kernels and maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{eig_hermitian, hermitian_basis, BlockMatrix, BlockShape, CMatrix, C64, I};
use crate::quotient::KernelSubspace;
use crate::system::{ConcreteOperatorSystem, MatrixLevelElement};

/// The 7-dimensional subspace of `M_3` with vanishing `(1,3)` and `(3,1)`
/// entries.
pub fn partial_matrix_7() -> ConcreteOperatorSystem {
    let mut gens = Vec::new();
    for i in 0..3 {
        gens.push(BlockMatrix::single(CMatrix::unit(3, i, i)));
    }
    for (i, j) in [(0, 1), (1, 2)] {
        gens.push(BlockMatrix::single(&CMatrix::unit(3, i, j) + &CMatrix::unit(3, j, i)));
        gens.push(BlockMatrix::single(
            (&CMatrix::unit(3, i, j) - &CMatrix::unit(3, j, i)).scale(I),
        ));
    }
    ConcreteOperatorSystem::build(BlockShape(vec![3]), &gens, "partial-matrix-7").expect("valid generators")
}

/// `ℓ_m^∞` as the diagonal algebra.
pub fn l_infinity(m: usize) -> ConcreteOperatorSystem {
    ConcreteOperatorSystem::diagonal(m).with_name(format!("l{m}-infinity"))
}

/// `ℓ₄^∞` with `J_n = span((−1, 0, n, 2n))`.
pub fn l4_family(n: usize) -> (ConcreteOperatorSystem, KernelSubspace) {
    let s = l_infinity(4);
    let nf = n as f64;
    let y = BlockMatrix::diagonal(&[-1.0, 0.0, nf, 2.0 * nf]);
    let j = KernelSubspace::new(&s, vec![y]).expect("indefinite span");
    (s, j)
}

/// `x = (0, 1, n+1, 0)`, the element whose two quotient norms differ.
pub fn l4_family_element(n: usize) -> BlockMatrix {
    BlockMatrix::diagonal(&[0.0, 1.0, n as f64 + 1.0, 0.0])
}

/// `M₂` with `J = span(E₁₁)`.
pub fn e11() -> (ConcreteOperatorSystem, KernelSubspace) {
    let s = ConcreteOperatorSystem::matrix_algebra(2).with_name("M2");
    let j = KernelSubspace::new(&s, vec![BlockMatrix::single(CMatrix::unit(2, 0, 0))]).expect("hermitian span");
    (s, j)
}

/// `⊕_{n ≤ m} ℓ₄^∞` with `J = ⊕ J_n`, and `a_m` supported in the last
/// summand as `(0, 1/(m+1), 1, 0)`; its osp/osy ratio is `(2/3)(m+1)`.
pub fn direct_sum_ratio(m: usize) -> (ConcreteOperatorSystem, KernelSubspace, BlockMatrix) {
    let s = l_infinity(4 * m).with_name(format!("direct-sum-{m}"));
    let mut gens = Vec::with_capacity(m);
    for n in 1..=m {
        let mut d = vec![0.0; 4 * m];
        let nf = n as f64;
        d[4 * (n - 1)..4 * n].copy_from_slice(&[-1.0, 0.0, nf, 2.0 * nf]);
        gens.push(BlockMatrix::diagonal(&d));
    }
    let mut a = vec![0.0; 4 * m];
    a[4 * (m - 1) + 1] = 1.0 / (m as f64 + 1.0);
    a[4 * (m - 1) + 2] = 1.0;
    let j = KernelSubspace::new(&s, gens).expect("independent hermitian generators");
    (s, j, BlockMatrix::diagonal(&a))
}

/// `{(λI + a) ⊕ (λI − a) : a traceless hermitian} ⊆ M₃ ⊕ M₃` and the
/// level-one element with `λ = 1`, `a = diag(2, −1, −1)`.
pub fn traceless_direct_sum() -> (ConcreteOperatorSystem, MatrixLevelElement) {
    let mut gens = Vec::new();
    for h in hermitian_basis(3).into_iter().skip(1) {
        let t = h.trace().re / 3.0;
        let a = &h - &CMatrix::identity(3).scale_re(t);
        if a.frobenius() < 1e-12 {
            continue;
        }
        gens.push(BlockMatrix::from_blocks(vec![a.clone(), a.scale_re(-1.0)]));
    }
    let s = ConcreteOperatorSystem::build(BlockShape(vec![3, 3]), &gens, "traceless-direct-sum").expect("valid generators");
    let a = CMatrix::diag_real(&[2.0, -1.0, -1.0]);
    let id = CMatrix::identity(3);
    let w = BlockMatrix::from_blocks(vec![&id + &a, &id - &a]);
    (s, MatrixLevelElement::level1(w))
}

/// A random system in `M₂ ⊕ M₁` containing a hermitian indefinite `y`.
pub fn random_system_with_indefinite(seed: u64) -> (ConcreteOperatorSystem, BlockMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = BlockShape(vec![2, 1]);
    let units = shape.hermitian_units();
    let rand_herm = |rng: &mut ChaCha8Rng| {
        let mut x = BlockMatrix::zeros(&shape);
        for u in &units {
            x = x.axpy(C64::new(rng.random_range(-1.0..1.0), 0.0), u);
        }
        x
    };
    loop {
        let g1 = rand_herm(&mut rng);
        let g2 = rand_herm(&mut rng);
        let h = rand_herm(&mut rng);
        let mut eig = Vec::new();
        for b in &h.blocks {
            eig.extend(eig_hermitian(b).expect("hermitian").values);
        }
        let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if hi - lo < 0.4 {
            continue;
        }
        let e = BlockMatrix::identity(&shape);
        let y = h.axpy(C64::new(-(hi + lo) / 2.0, 0.0), &e);
        if let Ok(s) = ConcreteOperatorSystem::build(shape.clone(), &[g1, g2, y.clone()], format!("random-{seed}")) {
            if s.dim() == 4 {
                return (s, y);
            }
        }
    }
}

/// A random (not necessarily hermitian) element of `M_n(S)`.
pub fn random_level_element(s: &ConcreteOperatorSystem, n: usize, seed: u64) -> MatrixLevelElement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..n * n)
        .map(|_| {
            let c: Vec<C64> = (0..s.dim())
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            s.from_coefficients(&c)
        })
        .collect();
    MatrixLevelElement { n, entries }
}

/// A random hermitian element of `M_n(S)`.
pub fn random_hermitian_level_element(s: &ConcreteOperatorSystem, n: usize, seed: u64) -> MatrixLevelElement {
    let x = random_level_element(s, n, seed);
    let adj = x.adjoint();
    x.add(&adj).scale_re(0.5)
}
