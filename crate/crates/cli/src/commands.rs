use serde_json::{json, Value};

use opsys::dual::{bidual_compare, choi_test, cp_check, LinearMap};
use opsys::gallery;
use opsys::linalg::{BlockMatrix, BlockShape, TolerancePolicy, C64};
use opsys::quotient::{
    is_kernel, j_dec_norm, quotient_embedding_check, KernelSubspace, KernelVerdict, NormValue, QuotientSystem,
};
use opsys::system::{ConcreteOperatorSystem, MatrixLevelElement};
use opsys::tensor::{nuclearity_gap_probe, MaxOptions, MaxStatus, TensorStructure, TensorSystem};

use crate::inputs::Inputs;
use crate::{Cli, CliError, CliResult, Command};

type Outcome = CliResult<(Option<String>, Value)>;

fn need<'a, T>(x: &'a Option<T>, what: &str) -> CliResult<&'a T> {
    x.as_ref().ok_or_else(|| CliError::Invalid(format!("missing {what}")))
}

fn to_json<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

fn norm_json(v: &NormValue) -> Value {
    json!({
        "value": v.value,
        "interval": [v.lo, v.hi],
        "j_coefficients": to_json(&v.j_coefficients),
    })
}

pub fn dispatch(cli: &Cli, inp: &Inputs, tol: &TolerancePolicy) -> Outcome {
    let anchor = inp.anchor.clone();
    let results = match cli.command {
        Command::CheckKernel => check_kernel(inp, tol)?,
        Command::QuotientNorms => quotient_norms(inp, tol)?,
        Command::QuotientCones => quotient_cones(inp, tol)?,
        Command::CpCheck => cp(inp, tol)?,
        Command::DualCompare => dual_compare(cli, inp, tol)?,
        Command::TensorMin => tensor_min(cli, inp, tol)?,
        Command::TensorMax => tensor_max(cli, inp, tol)?,
        Command::NuclearityProbe => probe(cli, inp, tol)?,
        Command::EmbeddingCheck => embedding(cli, inp, tol)?,
        Command::Gallery => return showcase(cli, inp, tol),
    };
    Ok((anchor, results))
}

fn kernel_json(s: &ConcreteOperatorSystem, k: &KernelSubspace, tol: &TolerancePolicy) -> CliResult<Value> {
    let witness_check = match &k.witness {
        Some(w) => Some(k.annihilated_by_all_states(s, w, tol)?),
        None => None,
    };
    Ok(json!({
        "verdict": to_json(&k.verdict),
        "kernel_dim": k.dim(),
        "separating_states": to_json(&k.states),
        "witness": to_json(&k.witness),
        "witness_killed_by_all_states": witness_check,
        "witness_space_dim": k.witness_space.len(),
    }))
}

fn certified_kernel(inp: &Inputs, tol: &TolerancePolicy) -> CliResult<(ConcreteOperatorSystem, KernelSubspace)> {
    let s = need(&inp.system, "system (--input or --gallery)")?;
    let j = need(&inp.kernel, "kernel (--kernel or --gallery)")?;
    Ok((s.clone(), is_kernel(s, j, tol)?))
}

fn check_kernel(inp: &Inputs, tol: &TolerancePolicy) -> CliResult<Value> {
    let (s, k) = certified_kernel(inp, tol)?;
    kernel_json(&s, &k, tol)
}

fn norms_of(q: &QuotientSystem, x: &MatrixLevelElement, tol: &TolerancePolicy) -> CliResult<Value> {
    let osy = q.osy_norm(x, tol)?;
    let osp = q.osp_norm(x, tol)?;
    let ratio = if osy.value > 0.0 { Some(osp.value / osy.value) } else { None };
    Ok(json!({
        "level": x.n,
        "osy": norm_json(&osy),
        "osp": norm_json(&osp),
        "ratio": ratio,
    }))
}

fn quotient_norms(inp: &Inputs, tol: &TolerancePolicy) -> CliResult<Value> {
    let (s, k) = certified_kernel(inp, tol)?;
    let x = need(&inp.element, "element (--element or --gallery)")?;
    if k.verdict != KernelVerdict::Kernel {
        return Err(opsys::Error::NotAKernel.into());
    }
    let q = QuotientSystem::new(&s, k)?;
    norms_of(&q, x, tol)
}

fn cones_of(q: &QuotientSystem, x: &MatrixLevelElement, tol: &TolerancePolicy) -> CliResult<Value> {
    let d = q.d_cone_membership(x, tol)?;
    let c = q.c_cone_membership(x, tol)?;
    let seminorm = if x.n == 1 {
        Some(q.order_seminorm(&x.entries[0], tol)?)
    } else {
        None
    };
    Ok(json!({
        "level": x.n,
        "genuine_quotient": q.genuine,
        "d_cone": { "member": d.member, "t": d.t, "coefficient_bound": d.coefficient_bound },
        "c_cone": { "member": c.member, "eps_star": c.eps_star, "interval": [c.eps_lo, c.eps_hi] },
        "order_seminorm": seminorm,
    }))
}

fn quotient_cones(inp: &Inputs, tol: &TolerancePolicy) -> CliResult<Value> {
    let (s, k) = certified_kernel(inp, tol)?;
    let x = need(&inp.element, "element (--element or --gallery)")?;
    let q = QuotientSystem::formal(&s, k);
    cones_of(&q, x, tol)
}

fn cp_json(phi: &LinearMap, tol: &TolerancePolicy) -> CliResult<Value> {
    let v = cp_check(phi, tol)?;
    let verified = match &v.witness {
        Some(w) => Some(w.verify(phi, tol)?),
        None => None,
    };
    let choi = if phi.source.is_full_algebra() && phi.source.shape().blocks().len() == 1 {
        Some(choi_test(phi, tol)?)
    } else {
        None
    };
    Ok(json!({
        "cp": v.cp,
        "margin": v.margin,
        "witness": to_json(&v.witness),
        "witness_verified": verified,
        "choi_test": choi,
    }))
}

fn cp(inp: &Inputs, tol: &TolerancePolicy) -> CliResult<Value> {
    cp_json(need(&inp.map, "map (--map or --gallery)")?, tol)
}

fn dual_compare(cli: &Cli, inp: &Inputs, tol: &TolerancePolicy) -> CliResult<Value> {
    let s = need(&inp.system, "system (--input or --gallery)")?;
    let levels = cli.level.unwrap_or(2).max(1);
    let budget = cli.budget.unwrap_or(20);
    let mut samples = Vec::new();
    for i in 0..budget {
        let n = 1 + i % levels;
        let x = gallery::random_hermitian_level_element(s, n, cli.seed.wrapping_add(i as u64));
        // Alternate samples around the cone boundary.
        let lmin = x.assemble().min_eigenvalue()?;
        let shift = if i % 2 == 0 { 0.05 } else { -0.05 };
        samples.push(x.add(&MatrixLevelElement::diagonal(n, &s.unit().scale_re(shift - lmin))));
    }
    Ok(to_json(&bidual_compare(s, &samples, tol)?))
}

fn tensor_system(inp: &Inputs, structure: TensorStructure) -> CliResult<TensorSystem> {
    let s = need(&inp.system, "left factor (--input or --gallery)")?;
    let t = need(&inp.right, "right factor (--right or --gallery)")?;
    Ok(TensorSystem::new(s, t, structure)?)
}

/// The element to test: the file's coefficients, or gallery samples.
fn tensor_elements(ts: &TensorSystem, inp: &Inputs, seed: u64) -> CliResult<Vec<(String, BlockMatrix)>> {
    if let Some(j) = &inp.tensor_coefficients {
        return Ok(vec![("input".into(), ts.element_from_json(j)?)]);
    }
    if inp.gallery.is_none() {
        return Err(CliError::Invalid("missing tensor element (--element)".into()));
    }
    let x = gallery::random_hermitian_level_element(&ts.product, 1, seed);
    let lmin = x.assemble().min_eigenvalue()?;
    let boundary = x.entries[0].axpy(C64::new(-lmin, 0.0), &ts.unit());
    let outside = x.entries[0].axpy(C64::new(-lmin - 0.1, 0.0), &ts.unit());
    Ok(vec![
        ("unit".into(), ts.unit()),
        ("min-boundary".into(), boundary),
        ("outside".into(), outside),
    ])
}

fn tensor_min(cli: &Cli, inp: &Inputs, tol: &TolerancePolicy) -> CliResult<Value> {
    let ts = tensor_system(inp, TensorStructure::Min)?;
    let mut rows = Vec::new();
    for (label, u) in tensor_elements(&ts, inp, cli.seed)? {
        let m = ts.min_membership(&MatrixLevelElement::level1(u), tol)?;
        rows.push(json!({ "label": label, "min_positive": m }));
    }
    Ok(json!({ "elements": rows }))
}

fn max_options(cli: &Cli) -> MaxOptions {
    MaxOptions {
        level: cli.level.unwrap_or(2).max(1),
        audit: cli.audit,
        seed: cli.seed,
        ..MaxOptions::default()
    }
}

fn tensor_max(cli: &Cli, inp: &Inputs, tol: &TolerancePolicy) -> CliResult<Value> {
    let ts = tensor_system(inp, TensorStructure::Max)?;
    let opts = max_options(cli);
    let mut rows = Vec::new();
    for (label, u) in tensor_elements(&ts, inp, cli.seed)? {
        let min = ts.min_membership(&MatrixLevelElement::level1(u.clone()), tol)?;
        let v = ts.max_membership(&u, &opts, tol)?;
        let residual = v.decomposition.as_ref().map(|d| d.residual(&u, &ts.unit()));
        rows.push(json!({
            "label": label,
            "min_positive": min,
            "status": to_json(&v.status),
            "reason": to_json(&v.reason),
            "level": v.level,
            "eps_star": v.eps_star,
            "outer_min": v.outer_min,
            "decomposition_residual": residual,
            "decomposition": to_json(&v.decomposition),
            "functional": to_json(&v.functional),
        }));
    }
    Ok(json!({ "elements": rows }))
}

fn probe(cli: &Cli, inp: &Inputs, tol: &TolerancePolicy) -> CliResult<Value> {
    let s = need(&inp.system, "left factor (--input or --gallery)")?;
    let t = need(&inp.right, "right factor (--right or --gallery)")?;
    let opts = MaxOptions {
        level: cli.level.unwrap_or(1).max(1),
        restarts: 2,
        alternations: 3,
        samples: 40,
        ..max_options(cli)
    };
    let levels = cli.level.unwrap_or(1).max(1);
    let r = nuclearity_gap_probe(s, t, levels, cli.budget.unwrap_or(4), &opts, tol)?;
    Ok(to_json(&r))
}

fn embedding(cli: &Cli, inp: &Inputs, tol: &TolerancePolicy) -> CliResult<Value> {
    let s = need(&inp.system, "system (--input or --gallery)")?;
    let candidates: Vec<MatrixLevelElement> = inp.element.iter().cloned().collect();
    let r = quotient_embedding_check(
        s,
        &inp.ideal,
        &candidates,
        cli.budget.unwrap_or(20),
        cli.level.unwrap_or(2).clamp(1, 3),
        cli.seed,
        tol,
    )?;
    Ok(to_json(&r))
}

/// Runs the full demonstration attached to a gallery key.
fn showcase(cli: &Cli, inp: &Inputs, tol: &TolerancePolicy) -> Outcome {
    let key = need(&inp.gallery, "--gallery key")?.clone();
    let anchor = inp.anchor.clone();
    let results = match key.as_str() {
        "example-4.4" => {
            let n = inp.n.unwrap_or(5);
            let (s, k) = certified_kernel(inp, tol)?;
            let x = need(&inp.element, "element")?;
            let kj = kernel_json(&s, &k, tol)?;
            let q = QuotientSystem::new(&s, k)?;
            let mut v = norms_of(&q, x, tol)?;
            let (f, fv) = q.osp_norming_functional(&x.entries[0], tol)?;
            let phi = LinearMap::functional(&s, &f.rho);
            let jd = j_dec_norm(&phi, &q.kernel, tol)?;
            v["n"] = json!(n);
            v["kernel"] = kj;
            v["expected_osp"] = json!(2.0 * (n as f64 + 1.0) / 3.0);
            v["norming_functional_value"] = json!(fv);
            v["jdec"] = to_json(&jd);
            v
        }
        "e11-non-kernel" => {
            let (s, k) = certified_kernel(inp, tol)?;
            let x = need(&inp.element, "element")?;
            let kj = kernel_json(&s, &k, tol)?;
            let q = QuotientSystem::formal(&s, k);
            json!({
                "kernel": kj,
                "archimedean_witness": to_json(&x.entries[0]),
                "cones": cones_of(&q, x, tol)?,
            })
        }
        "direct-sum-ratio" => {
            let top = inp.n.unwrap_or(6);
            let mut rows = Vec::new();
            for m in 1..=top {
                let (s, j, a) = gallery::direct_sum_ratio(m);
                let k = is_kernel(&s, &j, tol)?;
                let q = QuotientSystem::new(&s, k)?;
                let mut v = norms_of(&q, &MatrixLevelElement::level1(a), tol)?;
                v["m"] = json!(m);
                v["expected_ratio"] = json!(2.0 * (m as f64 + 1.0) / 3.0);
                rows.push(v);
            }
            json!({ "rows": rows })
        }
        "partial-matrix-7" => {
            let s = need(&inp.system, "system")?;
            let mut v = probe(cli, inp, tol)?;
            v["dim"] = json!(s.dim());
            v["note"] = json!("exploratory search; UNDECIDED candidates are expected");
            v
        }
        "traceless-direct-sum" => {
            let mut v = embedding(cli, inp, tol)?;
            let a = ConcreteOperatorSystem::full(BlockShape(vec![3, 3]), "M3+M3")?;
            let control = quotient_embedding_check(&a, &[1], &[], cli.budget.unwrap_or(20), 2, cli.seed, tol)?;
            v["control_full_algebra"] = to_json(&control);
            v
        }
        "nuclear-partner" => {
            let ts = tensor_system(inp, TensorStructure::Max)?;
            let mut v = tensor_max(cli, inp, tol)?;
            let opts = MaxOptions {
                level: 1,
                audit: true,
                restarts: 2,
                alternations: 3,
                samples: 40,
                seed: cli.seed,
            };
            // The hierarchy without the shortcut on the min-positive sample.
            let rows = tensor_elements(&ts, inp, cli.seed)?;
            let (_, u) = &rows[1];
            let audit = ts.max_membership(u, &opts, tol)?;
            v["audit_status"] = to_json(&audit.status);
            v["audit_never_not_member"] = json!(audit.status != MaxStatus::NotMember);
            let gap = nuclearity_gap_probe(&ts.left, &ts.right, 1, cli.budget.unwrap_or(4), &MaxOptions::default(), tol)?;
            v["probe"] = to_json(&gap);
            v
        }
        "transpose" => cp(inp, tol)?,
        _ => unreachable!("keys validated during resolution"),
    };
    Ok((anchor, results))
}
