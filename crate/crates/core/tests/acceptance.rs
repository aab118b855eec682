//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opsys::dual::{bidual_compare, choi_test, cp_check, LinearMap};
use opsys::gallery;
use opsys::linalg::{BlockMatrix, BlockShape, CMatrix, TolerancePolicy, C64};
use opsys::quotient::{
    is_kernel, j_dec_norm, quotient_embedding_check, EmbeddingVerdict, KernelSubspace, KernelVerdict, QuotientSystem,
};
use opsys::system::{ConcreteOperatorSystem, MatrixLevelElement};
use opsys::tensor::{CertificateReason, MaxOptions, MaxStatus, TensorStructure, TensorSystem};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn tol() -> TolerancePolicy {
    TolerancePolicy::default()
}

fn ratio_family(n: usize) -> f64 {
    2.0 * (n as f64 + 1.0) / 3.0
}

fn norms(q: &QuotientSystem, x: &MatrixLevelElement) -> Result<(f64, f64), String> {
    let t = tol();
    let osy = q.osy_norm(x, &t).map_err(|e| e.to_string())?.value;
    let osp = q.osp_norm(x, &t).map_err(|e| e.to_string())?.value;
    Ok((osy, osp))
}

fn certified(s: &ConcreteOperatorSystem, gens: Vec<BlockMatrix>) -> Result<KernelSubspace, String> {
    let j = KernelSubspace::new(s, gens).map_err(|e| e.to_string())?;
    is_kernel(s, &j, &tol()).map_err(|e| e.to_string())
}

fn c1_family_norms() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for n in 1..=10 {
        let (s, j) = gallery::l4_family(n);
        let q = QuotientSystem::new(&s, certified(&s, j.generators)?).map_err(|e| e.to_string())?;
        let x = MatrixLevelElement::level1(gallery::l4_family_element(n));
        let (osy, osp) = norms(&q, &x)?;
        let err = (osy - 1.0).abs().max((osp - ratio_family(n)).abs());
        worst = worst.max(err);
        if err > 1e-6 {
            return Err(format!("n={n}: osy={osy}, osp={osp}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 5.0 {
        return Err(format!("runtime {secs:.2}s"));
    }
    Ok(format!("n=1..10, max error {worst:.1e}, {secs:.2}s"))
}

fn c2_norm_ordering() -> Outcome {
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..200u64 {
        let (s, y) = gallery::random_system_with_indefinite(seed);
        let k = certified(&s, vec![y])?;
        let q = QuotientSystem::new(&s, k).map_err(|e| format!("seed {seed}: {e}"))?;
        let level = 1 + (seed % 2) as usize;
        let x = gallery::random_level_element(&s, level, seed + 10_000);
        let (osy, osp) = norms(&q, &x)?;
        worst = worst.max(osy - osp);
        if osy > osp + 1e-6 {
            violations += 1;
        }
    }
    if violations > 0 {
        return Err(format!("{violations} violations"));
    }
    Ok(format!("200 triples, max(osy - osp) = {worst:.2e}"))
}

fn c3_kernels() -> Outcome {
    let t = tol();
    let (s, j) = gallery::e11();
    let k = is_kernel(&s, &j, &t).map_err(|e| e.to_string())?;
    if k.verdict != KernelVerdict::NotKernel {
        return Err(format!("E11 verdict {:?}", k.verdict));
    }
    let w = k.witness.ok_or("no witness")?;
    let e12 = BlockMatrix::single(CMatrix::unit(2, 0, 1));
    if w.sub(&e12).max_abs() > 1e-9 {
        return Err(format!("witness {w}"));
    }
    if !j.annihilated_by_all_states(&s, &w, &t).map_err(|e| e.to_string())? {
        return Err("witness not annihilated".into());
    }
    let mut wrong = 0;
    for seed in 0..100u64 {
        let (s, y) = gallery::random_system_with_indefinite(1_000 + seed);
        if certified(&s, vec![y])?.verdict != KernelVerdict::Kernel {
            wrong += 1;
        }
    }
    if wrong > 0 {
        return Err(format!("{wrong} of 100 indefinite spans misclassified"));
    }
    Ok("E11 -> NOT_KERNEL (witness E12), 100/100 indefinite spans -> KERNEL".into())
}

fn c4_archimedeanization() -> Outcome {
    let t = tol();
    let (s, j) = gallery::e11();
    let q = QuotientSystem::formal(&s, j);
    let xm = &CMatrix::unit(2, 0, 1) + &CMatrix::unit(2, 1, 0);
    let x = MatrixLevelElement::level1(BlockMatrix::single(xm.clone()));
    let c = q.c_cone_membership(&x, &t).map_err(|e| e.to_string())?;
    let d = q.d_cone_membership(&x, &t).map_err(|e| e.to_string())?;
    let sn = q.order_seminorm(&x.entries[0], &t).map_err(|e| e.to_string())?;
    let detail = format!("eps*={:.1e}, d-cone t={:.1e}, seminorm={sn:.1e}", c.eps_star, d.t);
    if c.member && c.eps_star <= 1e-7 && !d.member && sn <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c5_direct_sums() -> Outcome {
    let mut prev = 0.0;
    let mut worst = 0.0f64;
    for m in 1..=10 {
        let (s, j, a) = gallery::direct_sum_ratio(m);
        let q = QuotientSystem::new(&s, certified(&s, j.generators)?).map_err(|e| e.to_string())?;
        let (osy, osp) = norms(&q, &MatrixLevelElement::level1(a))?;
        let r = osp / osy;
        worst = worst.max((r - ratio_family(m)).abs());
        if (r - ratio_family(m)).abs() > 1e-5 || r <= prev {
            return Err(format!("m={m}: ratio {r}"));
        }
        prev = r;
    }
    Ok(format!("m=1..10 ratio (2/3)(m+1), max error {worst:.1e}, ratio at m=10 {prev:.6}"))
}

fn random_cmatrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_density(rng: &mut ChaCha8Rng, shape: &BlockShape) -> BlockMatrix {
    let blocks: Vec<CMatrix> = shape
        .blocks()
        .iter()
        .map(|&d| {
            let g = random_cmatrix(rng, d, d);
            &g * &g.adjoint()
        })
        .collect();
    let b = BlockMatrix::from_blocks(blocks);
    let tr = b.trace().re;
    b.scale_re(1.0 / tr)
}

fn c6_cp() -> Outcome {
    let t = tol();
    let is_cp = |phi: &LinearMap| cp_check(phi, &t).map_err(|e| e.to_string());

    let tr = LinearMap::transpose(2);
    let v = is_cp(&tr)?;
    let w = v.witness.ok_or("transpose: no witness")?;
    if v.cp || w.level != 2 || !w.verify(&tr, &t).map_err(|e| e.to_string())? {
        return Err("transpose witness".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sources = [
        ConcreteOperatorSystem::matrix_algebra(2),
        ConcreteOperatorSystem::matrix_algebra(3),
        gallery::partial_matrix_7(),
        gallery::l_infinity(3),
    ];
    let mut positive = vec![LinearMap::identity(2), LinearMap::identity(3)];
    for s in &sources {
        let d = s.shape().total_dim();
        for k in 1..=2 {
            positive.push(LinearMap::compression(s, &random_cmatrix(&mut rng, k, d)));
        }
        positive.push(LinearMap::functional(s, &random_density(&mut rng, s.shape())));
    }
    for phi in &positive {
        if !is_cp(phi)?.cp {
            return Err(format!("cp map on {} rejected", phi.source.name()));
        }
    }

    let mut disagreements = 0;
    let mut cp_count = 0;
    for i in 0..100 {
        let p = 2 + i % 2;
        let k = 1 + (i / 2) % 2;
        let s = ConcreteOperatorSystem::matrix_algebra(p);
        let kraus: Vec<CMatrix> = (0..7).map(|_| random_cmatrix(&mut rng, k, p)).collect();
        let neg = rng.random_range(0.0..1.0);
        let phi = LinearMap::from_fn(&s, k, |b| {
            let x = b.to_dense();
            let mut acc = CMatrix::zeros(k, k);
            for (r, v) in kraus.iter().enumerate() {
                let c = if r == 6 { -neg } else { 1.0 };
                acc = &acc + &(&(v * &x) * &v.adjoint()).scale_re(c);
            }
            acc
        });
        let a = is_cp(&phi)?.cp;
        let b = choi_test(&phi, &t).map_err(|e| e.to_string())?;
        cp_count += a as usize;
        if a != b {
            disagreements += 1;
        }
    }
    if disagreements > 0 {
        return Err(format!("{disagreements} disagreements with the Choi test"));
    }
    Ok(format!(
        "transpose level-2 witness verified, {} cp maps accepted, 100/100 Choi agreements ({cp_count} cp)",
        positive.len()
    ))
}

fn c7_bidual() -> Outcome {
    let t = tol();
    let l3 = gallery::l_infinity(3);
    let mut samples = Vec::new();
    let signs = [-1.0, 0.0, 1.0];
    for a in signs {
        for b in signs {
            for c in signs {
                samples.push(MatrixLevelElement::level1(BlockMatrix::diagonal(&[a, b, c])));
            }
        }
    }
    // Level 2: each coordinate carries a 2x2 pattern, positive or not.
    let patterns: [[f64; 4]; 4] = [
        [1.0, 0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0, -1.0],
        [1.0, 1.0, 1.0, 1.0],
        [1.0, 2.0, 2.0, 1.0],
    ];
    for a in &patterns {
        for b in &patterns {
            for c in &patterns {
                let entries = (0..4).map(|e| BlockMatrix::diagonal(&[a[e], b[e], c[e]])).collect();
                samples.push(MatrixLevelElement::new(2, entries).map_err(|e| e.to_string())?);
            }
        }
    }
    let r1 = bidual_compare(&l3, &samples, &t).map_err(|e| e.to_string())?;

    let m2 = ConcreteOperatorSystem::matrix_algebra(2);
    let mut msamples = Vec::new();
    for i in 0..100u64 {
        let n = 1 + (i % 2) as usize;
        let x = gallery::random_hermitian_level_element(&m2, n, 7_000 + i);
        let lmin = x.assemble().min_eigenvalue().map_err(|e| e.to_string())?;
        let shift = if (i / 2) % 2 == 0 { 0.05 } else { -0.05 };
        msamples.push(x.add(&MatrixLevelElement::diagonal(n, &m2.unit().scale_re(shift - lmin))));
    }
    let r2 = bidual_compare(&m2, &msamples, &t).map_err(|e| e.to_string())?;
    let bad = r1.disagreements.len() + r2.disagreements.len();
    let detail = format!("l3: {}/{} agree, M2: {}/{} agree", r1.agreements, r1.samples, r2.agreements, r2.samples);
    if bad == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c8_embedding() -> Outcome {
    let t = tol();
    let (s, w) = gallery::traceless_direct_sum();
    let r = quotient_embedding_check(&s, &[1], std::slice::from_ref(&w), 20, 2, 8, &t).map_err(|e| e.to_string())?;
    if r.verdict != EmbeddingVerdict::NotEmbedding {
        return Err("traceless direct sum embeds".into());
    }
    let found = r.witness.ok_or("no witness")?;
    let a = CMatrix::diag_real(&[2.0, -1.0, -1.0]);
    let i3 = CMatrix::identity(3);
    let expected = BlockMatrix::from_blocks(vec![&i3 + &a, &i3 - &a]);
    if found.n != 1 || found.entries[0].sub(&expected).max_abs() > 1e-9 {
        return Err("unexpected witness".into());
    }
    let full = ConcreteOperatorSystem::full(BlockShape(vec![3, 3]), "M3+M3").map_err(|e| e.to_string())?;
    let c = quotient_embedding_check(&full, &[1], &[], 20, 2, 8, &t).map_err(|e| e.to_string())?;
    if c.verdict != EmbeddingVerdict::OrderEmbedding {
        return Err("control not an embedding".into());
    }
    Ok(format!(
        "NOT_EMBEDDING (lambda=1, a=diag(2,-1,-1), eps*={:.3}), control ORDER_EMBEDDING on {} samples",
        r.witness_eps_star.unwrap_or(f64::NAN),
        c.samples
    ))
}

fn c9_tensor() -> Outcome {
    let t = tol();
    let pairs = [
        (gallery::partial_matrix_7(), ConcreteOperatorSystem::matrix_algebra(2)),
        (gallery::l_infinity(3), ConcreteOperatorSystem::matrix_algebra(2)),
        (gallery::partial_matrix_7(), gallery::l_infinity(2)),
        (ConcreteOperatorSystem::matrix_algebra(2), gallery::l_infinity(3)),
    ];
    let mut counts = [0usize; 3];
    let mut worst_residual = 0.0f64;
    let mut verdicts = 0;
    for i in 0..100u64 {
        let (s, r) = &pairs[(i % 4) as usize];
        let ts = TensorSystem::new(s, r, TensorStructure::Max).map_err(|e| e.to_string())?;
        let x = gallery::random_hermitian_level_element(&ts.product, 1, 9_000 + i);
        let lmin = x.assemble().min_eigenvalue().map_err(|e| e.to_string())?;
        let margin = [0.01, 0.1, 0.5][(i % 3) as usize];
        let u = x.entries[0].axpy(C64::new(margin - lmin, 0.0), &ts.unit());
        let u_level = MatrixLevelElement::level1(u.clone());
        if !ts.min_membership(&u_level, &t).map_err(|e| e.to_string())? {
            return Err(format!("sample {i} not min-positive"));
        }
        let opts = MaxOptions {
            audit: true,
            restarts: 2,
            alternations: 3,
            samples: 30,
            seed: i,
            ..MaxOptions::default()
        };
        let v = ts.max_membership(&u, &opts, &t).map_err(|e| e.to_string())?;
        verdicts += 1;
        match v.status {
            MaxStatus::NotMember => return Err(format!("sample {i}: NOT_MEMBER for a min-positive element")),
            MaxStatus::Member => {
                counts[0] += 1;
                if v.reason == Some(CertificateReason::ReasonDecomposition) {
                    let d = v.decomposition.ok_or("MEMBER without decomposition")?;
                    let res = d.residual(&u, &ts.unit());
                    worst_residual = worst_residual.max(res);
                    if res > 1e-7 || !d.factors_positive(&t).map_err(|e| e.to_string())? {
                        return Err(format!("sample {i}: certificate residual {res:.2e}"));
                    }
                }
            }
            MaxStatus::Undecided => counts[2] += 1,
        }

        // Shortcut verdicts on a possibly non-positive shift of the same sample.
        let w = x.entries[0].axpy(C64::new(-0.05 - lmin, 0.0), &ts.unit());
        let sv = ts.max_membership(&w, &MaxOptions::default(), &t).map_err(|e| e.to_string())?;
        verdicts += 1;
        if sv.status == MaxStatus::Member {
            counts[1] += 1;
            if !ts.min_membership(&MatrixLevelElement::level1(w), &t).map_err(|e| e.to_string())? {
                return Err(format!("sample {i}: max-MEMBER but not min-positive"));
            }
        }
    }
    Ok(format!(
        "audit: {} MEMBER / {} UNDECIDED / 0 NOT_MEMBER, max residual {worst_residual:.1e}; {verdicts} verdicts consistent with min",
        counts[0], counts[2]
    ))
}

fn c10_jdec() -> Outcome {
    let t = tol();
    let mut rows = Vec::new();
    for n in 1..=5 {
        let (s, j) = gallery::l4_family(n);
        let q = QuotientSystem::new(&s, certified(&s, j.generators)?).map_err(|e| e.to_string())?;
        let (f, _) = q
            .osp_norming_functional(&gallery::l4_family_element(n), &t)
            .map_err(|e| e.to_string())?;
        let phi = LinearMap::functional(&s, &f.rho);
        let r = j_dec_norm(&phi, &q.kernel, &t).map_err(|e| e.to_string())?;
        let bound = r.ratio.ok_or(format!("n={n}: no J-dec value ({:?})", r.status))?;
        if bound < ratio_family(n) * (1.0 - 1e-5) {
            return Err(format!("n={n}: bound {bound} < {}", ratio_family(n)));
        }
        rows.push(format!("{bound:.4}"));
    }
    Ok(format!("lower bounds for n=1..5: {}", rows.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("l4 family norms", c1_family_norms),
        ("norm ordering", c2_norm_ordering),
        ("kernel certification", c3_kernels),
        ("archimedeanization strictness", c4_archimedeanization),
        ("direct-sum ratio growth", c5_direct_sums),
        ("cp certification", c6_cp),
        ("bidual consistency", c7_bidual),
        ("quotient embedding", c8_embedding),
        ("tensor consistency", c9_tensor),
        ("J-dec lower bound", c10_jdec),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d} [{secs:.2}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
