//! Built-in generator and terminal catalogs selectable by name.
//!
//! Each entry constructs a [`GeneratorSpec`] with honest metadata: the
//! declared constants are the ones the assumption validators check by
//! sampling, and the weight floors and step-size guards are derived from
//! them.

use crate::error::{BsviError, Result};
use crate::generator::{GeneratorSpec, Regime};
use crate::measure::w2_to_dirac0;
use crate::solver::TerminalSpec;
use serde::Deserialize;
use std::sync::Arc;

/// Parameters shared by the generator catalog; unused fields default to
/// zero.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    /// Coefficient of `y` in F.
    #[serde(default)]
    pub a: f64,
    /// Coefficient of the row sums of `z` in F.
    #[serde(default)]
    pub b: f64,
    /// Constant term of F.
    #[serde(default)]
    pub c: f64,
    /// Coefficient of the law's Y-mean in F.
    #[serde(default)]
    pub mean_coeff: f64,
    /// Coefficient of the law's distance to the origin Dirac in F.
    #[serde(default)]
    pub w2_coeff: f64,
    /// Saturation cap (saturating entry) or growth exponent input.
    #[serde(default)]
    pub cap: f64,
    /// Damping slope of the saturating entry.
    #[serde(default)]
    pub slope: f64,
    /// Growth exponent of the polynomial entry.
    #[serde(default)]
    pub alpha: f64,
    /// Coefficient of `y` in G.
    #[serde(default)]
    pub g_slope: f64,
    /// Constant term of G.
    #[serde(default)]
    pub g_const: f64,
}

fn g_parts(k: usize, params: &GeneratorParams) -> (crate::generator::GFn, f64, f64) {
    let slope = params.g_slope;
    let constant = params.g_const;
    let g: crate::generator::GFn =
        Arc::new(move |_t, y: &[f64]| y.iter().map(|v| slope * v + constant).collect());
    let nu = constant.abs() * (k as f64).sqrt();
    (g, slope.abs(), nu)
}

/// `F = a y + b (row sums of z) + c`, globally Lipschitz.
pub fn linear(k: usize, d: usize, params: &GeneratorParams) -> GeneratorSpec {
    let (a, b, c) = (params.a, params.b, params.c);
    let f: crate::generator::FFn = Arc::new(move |_t, y: &[f64], z: &[f64], _law| {
        (0..y.len())
            .map(|j| {
                let row: f64 = z[j * (z.len() / y.len())..(j + 1) * (z.len() / y.len())]
                    .iter()
                    .sum();
                a * y[j] + b * row + c
            })
            .collect()
    });
    let (g, gk, nu) = g_parts(k, params);
    let eta = c.abs() * (k as f64).sqrt();
    GeneratorSpec {
        f,
        g,
        lipschitz_l: a.abs() + b.abs() * (d as f64).sqrt(),
        lipschitz_k: gk,
        growth_alpha: 1.0,
        eta: Arc::new(move |_| eta),
        nu: Arc::new(move |_| nu),
        regime: Regime::GlobalLipschitz,
        local_r: None,
        dim_y: k,
        dim_w: d,
    }
}

/// `F = a y + b (row sums of z) + c + mean_coeff E[Y] + w2_coeff W2(law, delta_0)`.
pub fn affine_in_law(k: usize, d: usize, params: &GeneratorParams) -> GeneratorSpec {
    let (a, b, c) = (params.a, params.b, params.c);
    let (m1, m2) = (params.mean_coeff, params.w2_coeff);
    let f: crate::generator::FFn = Arc::new(move |_t, y: &[f64], z: &[f64], law| {
        let mean = law.mean_head(y.len());
        let rad = w2_to_dirac0(law);
        (0..y.len())
            .map(|j| {
                let row: f64 = z[j * (z.len() / y.len())..(j + 1) * (z.len() / y.len())]
                    .iter()
                    .sum();
                a * y[j] + b * row + c + m1 * mean[j] + m2 * rad
            })
            .collect()
    });
    let (g, gk, nu) = g_parts(k, params);
    let eta = c.abs() * (k as f64).sqrt();
    GeneratorSpec {
        f,
        g,
        lipschitz_l: a.abs() + b.abs() * (d as f64).sqrt() + m1.abs() * (k as f64).sqrt() + m2.abs(),
        lipschitz_k: gk,
        growth_alpha: 1.0,
        eta: Arc::new(move |_| eta),
        nu: Arc::new(move |_| nu),
        regime: Regime::GlobalLipschitz,
        local_r: None,
        dim_y: k,
        dim_w: d,
    }
}

/// `F_j = a y_j min(|y_j|, cap) / (1 + slope |y_j|)`: bounded, locally
/// Lipschitz with constants growing linearly in the radius until the cap.
pub fn saturating(k: usize, d: usize, params: &GeneratorParams) -> Result<GeneratorSpec> {
    let (a, cap, slope) = (params.a, params.cap, params.slope);
    if a < 0.0 || cap <= 0.0 || slope <= 0.0 {
        return Err(BsviError::Invalid {
            context: "saturating generator".into(),
            detail: "need a >= 0, cap > 0, slope > 0".into(),
        });
    }
    let f: crate::generator::FFn = Arc::new(move |_t, y: &[f64], _z, _law| {
        y.iter()
            .map(|&v| a * v * v.abs().min(cap) / (1.0 + slope * v.abs()))
            .collect()
    });
    let (g, gk, nu) = g_parts(k, params);
    let bound = a * cap / slope * (k as f64).sqrt();
    Ok(GeneratorSpec {
        f,
        g,
        lipschitz_l: 0.0,
        lipschitz_k: gk,
        growth_alpha: 0.5,
        eta: Arc::new(move |_| bound),
        nu: Arc::new(move |_| nu),
        regime: Regime::LocalLipschitz,
        local_r: Some(Arc::new(move |r: f64| 2.0 * a * r.min(cap) + a)),
        dim_y: k,
        dim_w: d,
    })
}

/// `F_j = a y_j (1 + y_j^2)^{(alpha - 1)/2}`: sublinear growth of
/// exponent `alpha`, with radius-independent local constants.
pub fn polynomial(k: usize, d: usize, params: &GeneratorParams) -> Result<GeneratorSpec> {
    let (a, alpha) = (params.a, params.alpha);
    if a < 0.0 || !(0.0..1.0).contains(&alpha) {
        return Err(BsviError::Invalid {
            context: "polynomial generator".into(),
            detail: "need a >= 0 and alpha in [0, 1)".into(),
        });
    }
    let f: crate::generator::FFn = Arc::new(move |_t, y: &[f64], _z, _law| {
        y.iter()
            .map(|&v| a * v * (1.0 + v * v).powf(0.5 * (alpha - 1.0)))
            .collect()
    });
    let (g, gk, nu) = g_parts(k, params);
    Ok(GeneratorSpec {
        f,
        g,
        lipschitz_l: a * (k as f64).sqrt(),
        lipschitz_k: gk,
        growth_alpha: alpha,
        eta: Arc::new(|_| 0.0),
        nu: Arc::new(move |_| nu),
        regime: Regime::LocalLipschitz,
        local_r: Some(Arc::new(move |_| a)),
        dim_y: k,
        dim_w: d,
    })
}

/// Builds a catalog generator by name.
pub fn generator_by_name(
    name: &str,
    k: usize,
    d: usize,
    params: &GeneratorParams,
) -> Result<GeneratorSpec> {
    match name {
        "zero" => Ok(linear(k, d, &GeneratorParams::default())),
        "linear" => Ok(linear(k, d, params)),
        "affine_in_law" => Ok(affine_in_law(k, d, params)),
        "saturating" => saturating(k, d, params),
        "polynomial" => polynomial(k, d, params),
        other => Err(BsviError::Invalid {
            context: "generator catalog".into(),
            detail: format!("unknown generator {other}"),
        }),
    }
}

/// Parameters of the terminal catalog.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TerminalParams {
    #[serde(default)]
    pub value: Vec<f64>,
    #[serde(default)]
    pub scale: f64,
    #[serde(default)]
    pub lo: f64,
    #[serde(default)]
    pub hi: f64,
}

/// Builds a catalog terminal condition by name.
pub fn terminal_by_name(name: &str, k: usize, params: &TerminalParams) -> Result<TerminalSpec> {
    match name {
        "constant" => {
            if params.value.len() != k {
                return Err(BsviError::Invalid {
                    context: "terminal catalog".into(),
                    detail: format!("constant terminal needs {k} components"),
                });
            }
            Ok(TerminalSpec::constant(params.value.clone()))
        }
        "brownian" => Ok(TerminalSpec::brownian(k, params.scale)),
        "abs_brownian" => Ok(TerminalSpec::abs_brownian(k, params.scale)),
        "clamped_brownian" => {
            if params.lo >= params.hi {
                return Err(BsviError::Invalid {
                    context: "terminal catalog".into(),
                    detail: "clamped terminal needs lo < hi".into(),
                });
            }
            Ok(TerminalSpec::clamped_brownian(
                k,
                params.scale,
                params.lo,
                params.hi,
            ))
        }
        other => Err(BsviError::Invalid {
            context: "terminal catalog".into(),
            detail: format!("unknown terminal {other}"),
        }),
    }
}
