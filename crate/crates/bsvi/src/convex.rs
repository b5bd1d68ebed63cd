//! Exact proximal calculus for the convex barriers.
//!
//! Every barrier comes from a closed catalog with closed-form resolvents,
//! so Moreau envelopes and Yosida gradients are computed without an inner
//! optimization loop. Indicator barriers report infinite values through
//! [`BarrierValue::Infinite`], never through a large float.

use crate::error::{BsviError, Result};
use crate::generator::GeneratorSpec;
use crate::measure::DiscreteMeasure;
use crate::vecmath::{all_finite, dist_sq, dot, norm, sub};
use serde::{Deserialize, Serialize};

/// Extended-real barrier value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BarrierValue {
    Finite(f64),
    Infinite,
}

impl BarrierValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, BarrierValue::Finite(_))
    }

    /// The finite value, or an error naming `context`.
    pub fn finite(&self, context: &str) -> Result<f64> {
        match self {
            BarrierValue::Finite(v) => Ok(*v),
            BarrierValue::Infinite => Err(BsviError::InfeasiblePoint {
                context: context.to_string(),
            }),
        }
    }
}

/// Catalog of proper convex lower-semicontinuous barriers.
///
/// The catalog spans the cases of interest: `Zero` recovers an
/// unconstrained equation, the indicators recover reflected dynamics, and
/// `Quadratic` / `Norm1D` are smooth and nonsmooth penalties with known
/// shrinkage resolvents.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ConvexVariant {
    Zero,
    /// Indicator of the box `[lo, hi]` (entries may be infinite).
    IndicatorBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Indicator of the half-space `direction * y[axis] >= 0`.
    IndicatorHalfLine { axis: usize, direction: i8 },
    /// `(c/2) |y|^2` with `c >= 0`.
    Quadratic { c: f64 },
    /// `scale * sum_j |y_j|` with `scale >= 0`.
    Norm1D { scale: f64 },
}

/// A convex barrier together with its ambient dimension.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvexSpec {
    pub variant: ConvexVariant,
    pub dim: usize,
}

impl ConvexSpec {
    pub fn new(variant: ConvexVariant, dim: usize) -> Result<Self> {
        let spec = ConvexSpec { variant, dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn zero(dim: usize) -> Self {
        ConvexSpec {
            variant: ConvexVariant::Zero,
            dim,
        }
    }

    /// Structural validation: the feasible set must contain the origin so
    /// that `value(0) = 0`, and parameter shapes must match `dim`.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(BsviError::Invalid {
                context: "ConvexSpec".into(),
                detail: "dimension must be positive".into(),
            });
        }
        match &self.variant {
            ConvexVariant::Zero => {}
            ConvexVariant::IndicatorBox { lo, hi } => {
                if lo.len() != self.dim || hi.len() != self.dim {
                    return Err(BsviError::DimensionMismatch {
                        context: "IndicatorBox bounds".into(),
                        expected: self.dim,
                        got: lo.len().min(hi.len()),
                    });
                }
                for j in 0..self.dim {
                    if lo[j].is_nan() || hi[j].is_nan() || lo[j] > hi[j] {
                        return Err(BsviError::Invalid {
                            context: "IndicatorBox".into(),
                            detail: format!("invalid bounds at coordinate {j}"),
                        });
                    }
                    if lo[j] > 0.0 || hi[j] < 0.0 {
                        return Err(BsviError::Invalid {
                            context: "IndicatorBox".into(),
                            detail: format!("origin outside the box at coordinate {j}"),
                        });
                    }
                }
            }
            ConvexVariant::IndicatorHalfLine { axis, direction } => {
                if *axis >= self.dim {
                    return Err(BsviError::Invalid {
                        context: "IndicatorHalfLine".into(),
                        detail: format!("axis {axis} out of range for dim {}", self.dim),
                    });
                }
                if *direction != 1 && *direction != -1 {
                    return Err(BsviError::Invalid {
                        context: "IndicatorHalfLine".into(),
                        detail: "direction must be +1 or -1".into(),
                    });
                }
            }
            ConvexVariant::Quadratic { c } => {
                if !c.is_finite() || *c < 0.0 {
                    return Err(BsviError::Invalid {
                        context: "Quadratic".into(),
                        detail: "coefficient must be finite and nonnegative".into(),
                    });
                }
            }
            ConvexVariant::Norm1D { scale } => {
                if !scale.is_finite() || *scale < 0.0 {
                    return Err(BsviError::Invalid {
                        context: "Norm1D".into(),
                        detail: "scale must be finite and nonnegative".into(),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_point(&self, y: &[f64], context: &str) -> Result<()> {
        if y.len() != self.dim {
            return Err(BsviError::DimensionMismatch {
                context: context.into(),
                expected: self.dim,
                got: y.len(),
            });
        }
        if !all_finite(y) {
            return Err(BsviError::NonFinite {
                context: context.into(),
            });
        }
        Ok(())
    }

    /// Barrier value, with `Infinite` outside indicator domains.
    pub fn value(&self, y: &[f64]) -> BarrierValue {
        match &self.variant {
            ConvexVariant::Zero => BarrierValue::Finite(0.0),
            ConvexVariant::IndicatorBox { lo, hi } => {
                let feasible = y
                    .iter()
                    .enumerate()
                    .all(|(j, &v)| v >= lo[j] && v <= hi[j]);
                if feasible {
                    BarrierValue::Finite(0.0)
                } else {
                    BarrierValue::Infinite
                }
            }
            ConvexVariant::IndicatorHalfLine { axis, direction } => {
                if f64::from(*direction) * y[*axis] >= 0.0 {
                    BarrierValue::Finite(0.0)
                } else {
                    BarrierValue::Infinite
                }
            }
            ConvexVariant::Quadratic { c } => {
                BarrierValue::Finite(0.5 * c * y.iter().map(|v| v * v).sum::<f64>())
            }
            ConvexVariant::Norm1D { scale } => {
                BarrierValue::Finite(scale * y.iter().map(|v| v.abs()).sum::<f64>())
            }
        }
    }

    /// Euclidean distance from `y` to the barrier's feasible set (0 for
    /// finite-valued variants, whose domain is all of space).
    pub fn feasible_distance(&self, y: &[f64]) -> f64 {
        match &self.variant {
            ConvexVariant::IndicatorBox { .. } | ConvexVariant::IndicatorHalfLine { .. } => {
                let p = self.project(y);
                dist_sq(y, &p).sqrt()
            }
            _ => 0.0,
        }
    }

    fn project(&self, y: &[f64]) -> Vec<f64> {
        match &self.variant {
            ConvexVariant::IndicatorBox { lo, hi } => y
                .iter()
                .enumerate()
                .map(|(j, &v)| v.clamp(lo[j], hi[j]))
                .collect(),
            ConvexVariant::IndicatorHalfLine { axis, direction } => {
                let mut p = y.to_vec();
                let s = f64::from(*direction);
                if s * p[*axis] < 0.0 {
                    p[*axis] = 0.0;
                }
                p
            }
            _ => y.to_vec(),
        }
    }
}

/// A full Yosida evaluation at one point: resolvent, gradient, envelope.
#[derive(Debug, Clone)]
pub struct YosidaEval {
    pub eps: f64,
    pub point: Vec<f64>,
    pub resolvent: Vec<f64>,
    pub gradient: Vec<f64>,
    pub envelope: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(BsviError::Invalid {
            context: "eps".into(),
            detail: format!("must be positive and finite, got {eps}"),
        });
    }
    Ok(())
}

/// The resolvent `(I + eps * subdifferential)^{-1} y`, i.e. the unique
/// minimizer of `|v - y|^2 / (2 eps) + value(v)`.
pub fn resolvent(spec: &ConvexSpec, eps: f64, y: &[f64]) -> Result<Vec<f64>> {
    check_eps(eps)?;
    spec.check_point(y, "resolvent")?;
    Ok(match &spec.variant {
        ConvexVariant::Zero => y.to_vec(),
        ConvexVariant::IndicatorBox { .. } | ConvexVariant::IndicatorHalfLine { .. } => {
            spec.project(y)
        }
        ConvexVariant::Quadratic { c } => y.iter().map(|v| v / (1.0 + eps * c)).collect(),
        ConvexVariant::Norm1D { scale } => {
            let t = eps * scale;
            y.iter()
                .map(|v| v.signum() * (v.abs() - t).max(0.0))
                .collect()
        }
    })
}

/// The Yosida gradient `(y - resolvent(y)) / eps`; it lies in the
/// subdifferential at the resolvent point.
pub fn yosida_gradient(spec: &ConvexSpec, eps: f64, y: &[f64]) -> Result<Vec<f64>> {
    let j = resolvent(spec, eps, y)?;
    Ok(y.iter().zip(&j).map(|(v, jv)| (v - jv) / eps).collect())
}

/// Moreau envelope `value(Jy) + |y - Jy|^2 / (2 eps)`.
pub fn moreau_envelope(spec: &ConvexSpec, eps: f64, y: &[f64]) -> Result<f64> {
    let j = resolvent(spec, eps, y)?;
    let v = spec.value(&j).finite("moreau_envelope resolvent value")?;
    Ok(v + dist_sq(y, &j) / (2.0 * eps))
}

/// Resolvent, gradient, and envelope in one pass.
pub fn yosida_eval(spec: &ConvexSpec, eps: f64, y: &[f64]) -> Result<YosidaEval> {
    let j = resolvent(spec, eps, y)?;
    let g: Vec<f64> = y.iter().zip(&j).map(|(v, jv)| (v - jv) / eps).collect();
    let v = spec.value(&j).finite("yosida_eval resolvent value")?;
    let e = v + dist_sq(y, &j) / (2.0 * eps);
    Ok(YosidaEval {
        eps,
        point: y.to_vec(),
        resolvent: j,
        gradient: g,
        envelope: e,
    })
}

const SUBGRADIENT_TOL: f64 = 1e-9;

/// Whether `v` belongs to the subdifferential of the barrier at `x`.
///
/// For catalog variants the answer is exact (closed-form normal cones and
/// gradients); `probe_count` is retained for the probe-based fallback
/// exposed via [`subgradient_probe_check`].
pub fn subgradient_contains(
    spec: &ConvexSpec,
    x: &[f64],
    v: &[f64],
    _probe_count: usize,
) -> Result<bool> {
    spec.check_point(x, "subgradient_contains x")?;
    spec.check_point(v, "subgradient_contains v")?;
    if !spec.value(x).is_finite() {
        return Err(BsviError::InfeasiblePoint {
            context: "subgradient_contains".into(),
        });
    }
    Ok(match &spec.variant {
        ConvexVariant::Zero => v.iter().all(|&g| g.abs() <= SUBGRADIENT_TOL),
        ConvexVariant::IndicatorBox { lo, hi } => x.iter().enumerate().all(|(j, &xj)| {
            let at_lo = xj <= lo[j] + SUBGRADIENT_TOL;
            let at_hi = xj >= hi[j] - SUBGRADIENT_TOL;
            match (at_lo, at_hi) {
                (true, true) => true,
                (true, false) => v[j] <= SUBGRADIENT_TOL,
                (false, true) => v[j] >= -SUBGRADIENT_TOL,
                (false, false) => v[j].abs() <= SUBGRADIENT_TOL,
            }
        }),
        ConvexVariant::IndicatorHalfLine { axis, direction } => {
            let s = f64::from(*direction);
            x.iter().enumerate().all(|(j, &xj)| {
                if j == *axis {
                    if s * xj <= SUBGRADIENT_TOL {
                        // boundary: the normal cone points against `direction`
                        s * v[j] <= SUBGRADIENT_TOL
                    } else {
                        v[j].abs() <= SUBGRADIENT_TOL
                    }
                } else {
                    v[j].abs() <= SUBGRADIENT_TOL
                }
            })
        }
        ConvexVariant::Quadratic { c } => x
            .iter()
            .zip(v)
            .all(|(&xj, &vj)| (vj - c * xj).abs() <= SUBGRADIENT_TOL),
        ConvexVariant::Norm1D { scale } => x.iter().zip(v).all(|(&xj, &vj)| {
            if xj.abs() <= SUBGRADIENT_TOL {
                vj.abs() <= scale + SUBGRADIENT_TOL
            } else {
                (vj - scale * xj.signum()).abs() <= SUBGRADIENT_TOL
            }
        }),
    })
}

/// Probe-based subgradient test: checks
/// `<v, y - x> + value(x) <= value(y)` on a deterministic sphere/grid
/// pattern of probes around `x`. Kept independent of the closed forms so
/// the two can be cross-checked.
pub fn subgradient_probe_check(
    spec: &ConvexSpec,
    x: &[f64],
    v: &[f64],
    probe_count: usize,
) -> Result<bool> {
    spec.check_point(x, "subgradient_probe_check x")?;
    let fx = spec.value(x).finite("subgradient_probe_check")?;
    let radii = [1e-3, 1e-2, 0.1, 1.0, 10.0];
    let mut probes: Vec<Vec<f64>> = Vec::new();
    for j in 0..spec.dim {
        for &r in &radii {
            for sgn in [-1.0, 1.0] {
                let mut p = x.to_vec();
                p[j] += sgn * r;
                probes.push(p);
            }
        }
    }
    // diagonal directions fill in after the axis sweep
    let mut idx = 0usize;
    while probes.len() < probe_count.max(probes.len()) && idx < probe_count {
        let r = radii[idx % radii.len()];
        let p: Vec<f64> = (0..spec.dim)
            .map(|j| x[j] + r * if (idx >> j) & 1 == 0 { 1.0 } else { -1.0 })
            .collect();
        probes.push(p);
        idx += 1;
    }
    for p in &probes {
        if let BarrierValue::Finite(fp) = spec.value(p) {
            let lhs = dot(v, &sub(p, x)) + fx;
            if lhs > fp + SUBGRADIENT_TOL {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

const COMPAT_TOL: f64 = 1e-10;

/// One sample point for the compatibility check.
#[derive(Debug, Clone)]
pub struct CompatSample {
    pub t: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub law: DiscreteMeasure,
}

/// Outcome of the three compatibility conditions at one (sample, eps) pair.
#[derive(Debug, Clone, Serialize)]
pub struct CompatEntry {
    pub sample: usize,
    pub eps: f64,
    /// `<grad_phi, grad_psi> >= 0`
    pub inner_product_ok: bool,
    /// `<grad_phi, G> <= <grad_psi, G>^+`
    pub g_alignment_ok: bool,
    /// `<grad_psi, F> <= <grad_phi, F>^+`
    pub f_alignment_ok: bool,
    pub inner_product: f64,
    pub g_margin: f64,
    pub f_margin: f64,
}

impl CompatEntry {
    pub fn ok(&self) -> bool {
        self.inner_product_ok && self.g_alignment_ok && self.f_alignment_ok
    }
}

/// Report of the compatibility validator across all samples and eps values.
#[derive(Debug, Clone, Serialize)]
pub struct CompatReport {
    pub entries: Vec<CompatEntry>,
    pub pass: bool,
    /// Index of the first failing entry, if any.
    pub first_violation: Option<usize>,
}

/// Checks the gradient-alignment conditions between the two barriers and
/// the generator on the supplied samples. Violations are report entries,
/// not errors.
pub fn check_compatibility(
    phi: &ConvexSpec,
    psi: &ConvexSpec,
    gen: &GeneratorSpec,
    eps_list: &[f64],
    samples: &[CompatSample],
) -> Result<CompatReport> {
    if eps_list.is_empty() || samples.is_empty() {
        return Err(BsviError::Invalid {
            context: "check_compatibility".into(),
            detail: "eps list and sample set must be nonempty".into(),
        });
    }
    let mut entries = Vec::with_capacity(eps_list.len() * samples.len());
    for (si, s) in samples.iter().enumerate() {
        let f_val = gen.eval_f(s.t, &s.y, &s.z, &s.law)?;
        let g_val = gen.eval_g(s.t, &s.y)?;
        for &eps in eps_list {
            let gp = yosida_gradient(phi, eps, &s.y)?;
            let gq = yosida_gradient(psi, eps, &s.y)?;
            let ip = dot(&gp, &gq);
            let g_lhs = dot(&gp, &g_val);
            let g_rhs = dot(&gq, &g_val).max(0.0);
            let f_lhs = dot(&gq, &f_val);
            let f_rhs = dot(&gp, &f_val).max(0.0);
            entries.push(CompatEntry {
                sample: si,
                eps,
                inner_product_ok: ip >= -COMPAT_TOL,
                g_alignment_ok: g_lhs <= g_rhs + COMPAT_TOL,
                f_alignment_ok: f_lhs <= f_rhs + COMPAT_TOL,
                inner_product: ip,
                g_margin: g_rhs - g_lhs,
                f_margin: f_rhs - f_lhs,
            });
        }
    }
    let first_violation = entries.iter().position(|e| !e.ok());
    Ok(CompatReport {
        pass: first_violation.is_none(),
        entries,
        first_violation,
    })
}

/// Samples the midpoint-convexity inequality and the sign conditions on a
/// deterministic pattern; rejects specs whose values misbehave.
pub fn validate_convexity(spec: &ConvexSpec, points: &[Vec<f64>]) -> Result<()> {
    for p in points {
        if let BarrierValue::Finite(v) = spec.value(p) {
            if v < -1e-12 {
                return Err(BsviError::Invalid {
                    context: "ConvexSpec".into(),
                    detail: format!("negative barrier value {v} at |y|={}", norm(p)),
                });
            }
        }
    }
    let zero = vec![0.0; spec.dim];
    let v0 = spec.value(&zero).finite("value at origin")?;
    if v0.abs() > 1e-12 {
        return Err(BsviError::Invalid {
            context: "ConvexSpec".into(),
            detail: format!("value(0) = {v0}, expected 0"),
        });
    }
    for pair in points.chunks(2) {
        if pair.len() < 2 {
            break;
        }
        let (x, y) = (&pair[0], &pair[1]);
        let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
        if let (BarrierValue::Finite(fx), BarrierValue::Finite(fy), BarrierValue::Finite(fm)) =
            (spec.value(x), spec.value(y), spec.value(&mid))
        {
            if fm > 0.5 * (fx + fy) + 1e-12 {
                return Err(BsviError::Invalid {
                    context: "ConvexSpec".into(),
                    detail: "midpoint convexity violated on a sampled segment".into(),
                });
            }
        }
    }
    Ok(())
}
