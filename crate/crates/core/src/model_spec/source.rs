//! Textual (serde) form of a model and its conversion to [`ModelSpec`].

use serde::{Deserialize, Serialize};

use super::{Friction, ModelError, ModelSpec, Noise};
use crate::exprlang::Expr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticSource {
    /// Strictly increasing positive powers of ζ.
    pub powers: Vec<u32>,
    pub coeffs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AMode {
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSource {
    pub mode: AMode,
    /// n entries (diagonal) or n² row-major entries (full).
    pub entries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum FrictionSource {
    /// n² row-major entries of γ.
    Explicit {
        gamma: Vec<String>,
    },
    Scaled {
        b2: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseSource {
    /// n·k row-major entries of σ.
    Explicit {
        k: usize,
        sigma: Vec<String>,
    },
    Fd {
        b1: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    pub n: usize,
    pub kinetic: KineticSource,
    #[serde(rename = "A")]
    pub a: MatrixSource,
    pub psi: Vec<String>,
    #[serde(rename = "V")]
    pub v: String,
    pub friction: FrictionSource,
    pub noise: NoiseSource,
    /// Defaults to zero forcing.
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<Vec<String>>,
    pub lambda_floor: f64,
}

impl ModelSource {
    /// One-dimensional reference model: K̃ = ζ, A = ½ (so K = z²/2),
    /// γ = 2 + sin q, Σ = 2γ (k_BT = 1), ψ = 0, V = q²/2.
    pub fn benchmark_1d() -> ModelSource {
        ModelSource {
            n: 1,
            kinetic: KineticSource { powers: vec![1], coeffs: vec!["1".into()] },
            a: MatrixSource { mode: AMode::Diagonal, entries: vec!["0.5".into()] },
            psi: vec!["0".into()],
            v: "0.5*q1^2".into(),
            // γ = b₂A⁻¹ = 2 + sin q needs b₂ = (2 + sin q)/2
            friction: FrictionSource::Scaled { b2: "(2 + sin(q1))/2".into() },
            noise: NoiseSource::Fd { b1: "2 + sin(q1)".into() },
            forcing: None,
            lambda_floor: 1.0,
        }
    }
}

fn parse(src: &str, n: usize, pointer: String) -> Result<Expr, ModelError> {
    Expr::parse(src, n).map_err(|source| ModelError::Parse { pointer, source })
}

fn parse_list(srcs: &[String], n: usize, base: &str) -> Result<Vec<Expr>, ModelError> {
    srcs.iter().enumerate().map(|(i, s)| parse(s, n, format!("{base}/{i}"))).collect()
}

fn length(what: &str, got: usize, want: usize) -> Result<(), ModelError> {
    if got == want {
        Ok(())
    } else {
        Err(ModelError::Source { pointer: what.into(), message: format!("expected {want} entries, got {got}") })
    }
}

pub(super) fn build(src: &ModelSource) -> Result<ModelSpec, ModelError> {
    let n = src.n;
    if n == 0 {
        return Err(ModelError::Source { pointer: "/n".into(), message: "dimension must be at least 1".into() });
    }
    let k = &src.kinetic;
    if k.powers.is_empty() {
        return Err(ModelError::Source { pointer: "/kinetic/powers".into(), message: "at least one power".into() });
    }
    if k.powers[0] == 0 || k.powers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ModelError::Source {
            pointer: "/kinetic/powers".into(),
            message: "powers must be positive and strictly increasing".into(),
        });
    }
    if k.powers.iter().any(|&p| p > 64) {
        return Err(ModelError::Source { pointer: "/kinetic/powers".into(), message: "powers above 64".into() });
    }
    length("/kinetic/coeffs", k.coeffs.len(), k.powers.len())?;
    let kinetic_coeffs = parse_list(&k.coeffs, n, "/kinetic/coeffs")?;

    let a = match src.a.mode {
        super::AMode::Diagonal => {
            length("/A/entries", src.a.entries.len(), n)?;
            let diag = parse_list(&src.a.entries, n, "/A/entries")?;
            let mut m = vec![Expr::constant(0.0, n); n * n];
            for (i, e) in diag.into_iter().enumerate() {
                m[i * n + i] = e;
            }
            m
        }
        super::AMode::Full => {
            length("/A/entries", src.a.entries.len(), n * n)?;
            parse_list(&src.a.entries, n, "/A/entries")?
        }
    };

    length("/psi", src.psi.len(), n)?;
    let psi = parse_list(&src.psi, n, "/psi")?;
    let v = parse(&src.v, n, "/V".into())?;

    let friction = match &src.friction {
        FrictionSource::Explicit { gamma } => {
            length("/friction/gamma", gamma.len(), n * n)?;
            Friction::Explicit(parse_list(gamma, n, "/friction/gamma")?)
        }
        FrictionSource::Scaled { b2 } => Friction::Scaled { b2: parse(b2, n, "/friction/b2".into())? },
    };
    let noise = match &src.noise {
        NoiseSource::Explicit { k, sigma } => {
            if *k == 0 {
                return Err(ModelError::Source { pointer: "/noise/k".into(), message: "k must be at least 1".into() });
            }
            length("/noise/sigma", sigma.len(), n * k)?;
            Noise::Explicit { k: *k, sigma: parse_list(sigma, n, "/noise/sigma")? }
        }
        NoiseSource::Fd { b1 } => Noise::FluctuationDissipation { b1: parse(b1, n, "/noise/b1".into())? },
    };
    let f = match &src.forcing {
        Some(f) => {
            length("/F", f.len(), n)?;
            parse_list(f, n, "/F")?
        }
        None => vec![Expr::constant(0.0, n); n],
    };
    if !(src.lambda_floor > 0.0 && src.lambda_floor.is_finite()) {
        return Err(ModelError::Source { pointer: "/lambda_floor".into(), message: "must be positive".into() });
    }
    Ok(ModelSpec {
        n,
        kinetic_powers: k.powers.clone(),
        kinetic_coeffs,
        a,
        psi,
        v,
        friction,
        noise,
        f,
        lambda_floor: src.lambda_floor,
        source: src.clone(),
    })
}
