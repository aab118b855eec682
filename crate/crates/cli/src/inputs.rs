use std::path::Path;

use serde::Deserialize;

use opsys::dual::{LinearMap, MapJson};
use opsys::gallery;
use opsys::quotient::{KernelJson, KernelSubspace};
use opsys::system::{ConcreteOperatorSystem, MatrixLevelElement, SystemElement, SystemJson};
use opsys::tensor::TensorElementJson;

use crate::{Cli, CliError, CliResult};

pub const GALLERY_KEYS: &[&str] = &[
    "example-4.4",
    "e11-non-kernel",
    "direct-sum-ratio",
    "partial-matrix-7",
    "traceless-direct-sum",
    "nuclear-partner",
    "transpose",
];

/// Objects a command may draw on.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub gallery: Option<String>,
    pub anchor: Option<String>,
    pub system: Option<ConcreteOperatorSystem>,
    pub kernel: Option<KernelSubspace>,
    pub element: Option<MatrixLevelElement>,
    pub tensor_coefficients: Option<TensorElementJson>,
    pub map: Option<LinearMap>,
    pub right: Option<ConcreteOperatorSystem>,
    pub ideal: Vec<usize>,
    /// Parameter `n` after gallery defaults.
    pub n: Option<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ElementFile {
    Level(MatrixLevelElement),
    Single(SystemElement),
    Tensor(TensorElementJson),
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn load_system(path: &Path) -> CliResult<ConcreteOperatorSystem> {
    let j: SystemJson = read_json(path)?;
    Ok(ConcreteOperatorSystem::from_json(&j)?)
}

pub fn resolve(cli: &Cli) -> CliResult<Inputs> {
    let mut inp = match &cli.gallery {
        Some(key) => from_gallery(key, cli.n)?,
        None => Inputs {
            n: cli.n,
            ..Inputs::default()
        },
    };
    if let Some(p) = &cli.input {
        inp.system = Some(load_system(p)?);
    }
    if let Some(p) = &cli.right {
        inp.right = Some(load_system(p)?);
    }
    if let Some(p) = &cli.kernel {
        let s = inp
            .system
            .as_ref()
            .ok_or_else(|| CliError::Invalid("--kernel needs a system (--input or --gallery)".into()))?;
        let j: KernelJson = read_json(p)?;
        if j.system != s.name() {
            return Err(CliError::Invalid(format!(
                "kernel refers to system '{}', loaded '{}'",
                j.system,
                s.name()
            )));
        }
        inp.kernel = Some(KernelSubspace::from_json(s, &j)?);
    }
    if let Some(p) = &cli.element {
        match read_json::<ElementFile>(p)? {
            ElementFile::Level(x) => inp.element = Some(MatrixLevelElement::new(x.n, x.entries)?),
            ElementFile::Single(x) => {
                if let Some(s) = &inp.system {
                    if x.system != s.name() {
                        return Err(CliError::Invalid(format!(
                            "element refers to system '{}', loaded '{}'",
                            x.system,
                            s.name()
                        )));
                    }
                }
                inp.element = Some(MatrixLevelElement::level1(x.matrix));
            }
            ElementFile::Tensor(t) => inp.tensor_coefficients = Some(t),
        }
    }
    if let Some(p) = &cli.map {
        let s = inp
            .system
            .as_ref()
            .ok_or_else(|| CliError::Invalid("--map needs its source system (--input or --gallery)".into()))?;
        let j: MapJson = read_json(p)?;
        if j.source != s.name() {
            return Err(CliError::Invalid(format!("map source '{}' but loaded '{}'", j.source, s.name())));
        }
        inp.map = Some(LinearMap::from_json(s, &j)?);
    }
    if !cli.ideal.is_empty() {
        inp.ideal = cli.ideal.clone();
    }
    Ok(inp)
}

/// Compiled-in examples; unknown keys are rejected here, before any work.
fn from_gallery(key: &str, n: Option<usize>) -> CliResult<Inputs> {
    let mut inp = Inputs {
        gallery: Some(key.to_string()),
        ..Inputs::default()
    };
    let need_pos = |n: usize| {
        if n == 0 {
            Err(CliError::Invalid("--n must be at least 1".into()))
        } else {
            Ok(n)
        }
    };
    match key {
        "example-4.4" => {
            let n = need_pos(n.unwrap_or(5))?;
            let (s, j) = gallery::l4_family(n);
            inp.element = Some(MatrixLevelElement::level1(gallery::l4_family_element(n)));
            inp.system = Some(s);
            inp.kernel = Some(j);
            inp.n = Some(n);
            inp.anchor = Some("l4-infinity quotient by span(-1, 0, n, 2n) with x = (0, 1, n+1, 0)".into());
        }
        "e11-non-kernel" => {
            let (s, j) = gallery::e11();
            let x = opsys::linalg::BlockMatrix::single(
                &opsys::linalg::CMatrix::unit(2, 0, 1) + &opsys::linalg::CMatrix::unit(2, 1, 0),
            );
            inp.element = Some(MatrixLevelElement::level1(x));
            inp.system = Some(s);
            inp.kernel = Some(j);
            inp.anchor = Some("span(E11) in M2 is not a kernel".into());
        }
        "direct-sum-ratio" => {
            let m = need_pos(n.unwrap_or(6))?;
            let (s, j, a) = gallery::direct_sum_ratio(m);
            inp.system = Some(s);
            inp.kernel = Some(j);
            inp.element = Some(MatrixLevelElement::level1(a));
            inp.n = Some(m);
            inp.anchor = Some("finite direct sums of the l4-infinity family: osp/osy grows like (2/3)(m+1)".into());
        }
        "partial-matrix-7" => {
            let s = gallery::partial_matrix_7();
            inp.right = Some(s.clone());
            inp.system = Some(s);
            inp.anchor = Some("3x3 matrices with vanishing (1,3) and (3,1) entries".into());
        }
        "traceless-direct-sum" => {
            let (s, w) = gallery::traceless_direct_sum();
            inp.system = Some(s);
            inp.element = Some(w);
            inp.ideal = vec![1];
            inp.anchor = Some("quotient of a direct-sum system by the second summand is not an order embedding".into());
        }
        "nuclear-partner" => {
            let p = need_pos(n.unwrap_or(2))?;
            inp.system = Some(ConcreteOperatorSystem::matrix_algebra(p).with_name(format!("M{p}")));
            inp.right = Some(gallery::l_infinity(p + 1));
            inp.n = Some(p);
            inp.anchor = Some("finite-dimensional C*-algebra partners make min and max agree".into());
        }
        "transpose" => {
            let p = need_pos(n.unwrap_or(2))?;
            let t = LinearMap::transpose(p);
            inp.system = Some(t.source.clone());
            inp.map = Some(t);
            inp.n = Some(p);
            inp.anchor = Some("the transpose map is positive but not completely positive".into());
        }
        other => {
            return Err(CliError::Invalid(format!(
                "unknown gallery key '{other}'; known keys: {}",
                GALLERY_KEYS.join(", ")
            )))
        }
    }
    Ok(inp)
}
