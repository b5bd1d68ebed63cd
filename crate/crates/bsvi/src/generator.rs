//! Generator specifications with assumption metadata, the radial
//! smoothstep truncation, and the integrated sup seminorm estimator.

use crate::error::{BsviError, Result};
use crate::measure::{w2_to_dirac0, DiscreteMeasure};
use crate::vecmath::{all_finite, norm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

/// Lipschitz regime of the dt-generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    GlobalLipschitz,
    LocalLipschitz,
}

pub type FFn = Arc<dyn Fn(f64, &[f64], &[f64], &DiscreteMeasure) -> Vec<f64> + Send + Sync>;
pub type GFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The drivers F (dt-generator, law dependent) and G (dA-generator),
/// together with the declared growth and Lipschitz metadata.
#[derive(Clone)]
pub struct GeneratorSpec {
    pub f: FFn,
    pub g: GFn,
    /// Lipschitz constant of F (global regime) or growth constant (local).
    pub lipschitz_l: f64,
    /// Lipschitz constant of G.
    pub lipschitz_k: f64,
    /// Growth exponent: 1 in the global regime, below 1 in the local one.
    pub growth_alpha: f64,
    pub eta: ScalarFn,
    pub nu: ScalarFn,
    pub regime: Regime,
    /// Local Lipschitz constants as a function of the radius.
    pub local_r: Option<ScalarFn>,
    /// Solution dimension the closures expect.
    pub dim_y: usize,
    /// Noise dimension (z has `dim_y * dim_w` entries).
    pub dim_w: usize,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("lipschitz_l", &self.lipschitz_l)
            .field("lipschitz_k", &self.lipschitz_k)
            .field("growth_alpha", &self.growth_alpha)
            .field("regime", &self.regime)
            .field("dim_y", &self.dim_y)
            .field("dim_w", &self.dim_w)
            .finish()
    }
}

impl GeneratorSpec {
    /// Evaluates F with shape and finiteness checks.
    pub fn eval_f(&self, t: f64, y: &[f64], z: &[f64], law: &DiscreteMeasure) -> Result<Vec<f64>> {
        if y.len() != self.dim_y || z.len() != self.dim_y * self.dim_w {
            return Err(BsviError::DimensionMismatch {
                context: "eval_f".into(),
                expected: self.dim_y,
                got: y.len(),
            });
        }
        let out = (self.f)(t, y, z, law);
        if out.len() != self.dim_y || !all_finite(&out) {
            return Err(BsviError::GeneratorEval {
                t,
                y_norm: norm(y),
                z_norm: norm(z),
            });
        }
        Ok(out)
    }

    /// Evaluates G with shape and finiteness checks.
    pub fn eval_g(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim_y {
            return Err(BsviError::DimensionMismatch {
                context: "eval_g".into(),
                expected: self.dim_y,
                got: y.len(),
            });
        }
        let out = (self.g)(t, y);
        if out.len() != self.dim_y || !all_finite(&out) {
            return Err(BsviError::GeneratorEval {
                t,
                y_norm: norm(y),
                z_norm: 0.0,
            });
        }
        Ok(out)
    }

    /// Local Lipschitz constant at radius `radius`: the declared local
    /// profile when present, otherwise the global constant.
    pub fn lipschitz_at(&self, radius: f64) -> f64 {
        match &self.local_r {
            Some(r) => r(radius),
            None => self.lipschitz_l,
        }
    }
}

/// The cubic smoothstep profile: 1 below `n`, 0 above `n + 1`,
/// `1 - 3u^2 + 2u^3` with `u = x - n` in between. C^1 with slope at
/// most 1.5.
pub fn smoothstep_cutoff(n: f64, x: f64) -> f64 {
    if x <= n {
        1.0
    } else if x >= n + 1.0 {
        0.0
    } else {
        let u = x - n;
        1.0 - 3.0 * u * u + 2.0 * u * u * u
    }
}

/// A generator truncated to a ball of radius `n` by radial cutoffs in
/// `|y|`, `|z|`, and the law's distance to the origin Dirac.
#[derive(Clone)]
pub struct TruncatedGenerator {
    pub base: GeneratorSpec,
    pub n: usize,
}

impl TruncatedGenerator {
    pub fn factor(&self, y: &[f64], z: &[f64], law: &DiscreteMeasure) -> f64 {
        let n = self.n as f64;
        smoothstep_cutoff(n, norm(y))
            * smoothstep_cutoff(n, norm(z))
            * smoothstep_cutoff(n, w2_to_dirac0(law))
    }

    pub fn eval_f(&self, t: f64, y: &[f64], z: &[f64], law: &DiscreteMeasure) -> Result<Vec<f64>> {
        let s = self.factor(y, z, law);
        if s == 0.0 {
            return Ok(vec![0.0; self.base.dim_y]);
        }
        let mut out = self.base.eval_f(t, y, z, law)?;
        for v in out.iter_mut() {
            *v *= s;
        }
        Ok(out)
    }
}

/// Builds the radius-`n` truncation. Permitted in both regimes; inside
/// radius `n` it is the identity.
pub fn truncate(spec: &GeneratorSpec, n: usize) -> Result<TruncatedGenerator> {
    if n == 0 {
        return Err(BsviError::Invalid {
            context: "truncate".into(),
            detail: "radius must be positive".into(),
        });
    }
    Ok(TruncatedGenerator {
        base: spec.clone(),
        n,
    })
}

/// Deterministic low-discrepancy points in the radius-`radius` ball of
/// `R^dim`, as a nested sequence (prefixes of a fixed Weyl sequence), so
/// estimates built on them are monotone in the budget.
pub fn ball_samples(dim: usize, radius: f64, budget: usize) -> Vec<Vec<f64>> {
    const SEEDS: [f64; 16] = [
        2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0, 43.0, 47.0, 53.0,
    ];
    let alphas: Vec<f64> = (0..dim)
        .map(|j| SEEDS[j % SEEDS.len()].sqrt().fract())
        .collect();
    let mut out = Vec::with_capacity(budget);
    // the origin first, then axis extremes, then the Weyl fill
    out.push(vec![0.0; dim]);
    for j in 0..dim {
        for sgn in [1.0, -1.0] {
            if out.len() >= budget {
                return out;
            }
            let mut p = vec![0.0; dim];
            p[j] = sgn * radius;
            out.push(p);
        }
    }
    let mut s = 0usize;
    while out.len() < budget {
        s += 1;
        let mut p: Vec<f64> = (0..dim)
            .map(|j| (2.0 * ((s as f64) * alphas[j]).fract() - 1.0) * radius)
            .collect();
        let r = norm(&p);
        if r > radius {
            let scale = radius / r;
            for v in p.iter_mut() {
                *v *= scale;
            }
        }
        out.push(p);
    }
    out
}

/// Estimate of the integrated sup seminorm
/// `( int_0^T sup_{|y|,|z|,W2 <= N} |f|^2 dt )^{1/2}` for a generator
/// difference `f`, by maximizing over a nested deterministic sample of
/// `(y, z, law)` per grid time and integrating with the trapezoid rule.
/// Nested sampling makes the estimate monotone in the budget.
pub fn rho_n_dims<F>(
    f: F,
    dim_y: usize,
    dim_w: usize,
    radius: f64,
    time_grid: &[f64],
    sample_budget: usize,
) -> Result<f64>
where
    F: Fn(f64, &[f64], &[f64], &DiscreteMeasure) -> Vec<f64>,
{
    if sample_budget == 0 || time_grid.len() < 2 || radius <= 0.0 {
        return Err(BsviError::Invalid {
            context: "rho_n".into(),
            detail: "need a positive radius, a sample budget, and two grid times".into(),
        });
    }
    let dim_z = dim_y * dim_w;
    // one-atom laws are parametrized by a point in the joint space; the
    // W2 distance to the origin Dirac is then exactly the point norm
    let points = ball_samples(dim_y + dim_z + dim_y + dim_z, radius, sample_budget);
    let mut sup_sq = Vec::with_capacity(time_grid.len());
    for &t in time_grid {
        let mut m = 0.0f64;
        for p in &points {
            let y = &p[..dim_y];
            let z = &p[dim_y..dim_y + dim_z];
            let atom = &p[dim_y + dim_z..];
            let law = DiscreteMeasure::dirac(atom);
            let v = f(t, y, z, &law);
            m = m.max(v.iter().map(|x| x * x).sum());
        }
        sup_sq.push(m);
    }
    let mut integral = 0.0;
    for i in 0..time_grid.len() - 1 {
        let h = time_grid[i + 1] - time_grid[i];
        integral += 0.5 * h * (sup_sq[i] + sup_sq[i + 1]);
    }
    Ok(integral.max(0.0).sqrt())
}

/// One clause of the sampled assumption report.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionClause {
    pub name: String,
    pub pass: bool,
    pub worst: f64,
    pub bound: f64,
    pub witness: Option<String>,
}

/// Sampled validation of the declared Lipschitz and growth metadata.
/// Sampling cannot prove the assumptions; a passing report means no
/// violation was found at the stated budget.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub budget: usize,
    pub radius: f64,
    pub clauses: Vec<AssumptionClause>,
    pub pass: bool,
    pub note: String,
}

const QUOTIENT_SLACK: f64 = 1e-9;

/// Samples difference quotients and growth ratios of F and G against the
/// declared constants.
pub fn validate_assumptions(
    spec: &GeneratorSpec,
    sample_budget: usize,
    radius: f64,
    seed: u64,
) -> Result<AssumptionReport> {
    if sample_budget < 2 {
        return Err(BsviError::Invalid {
            context: "validate_assumptions".into(),
            detail: "budget must be at least 2".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.dim_y;
    let kd = spec.dim_y * spec.dim_w;
    let mut worst_f_quotient = 0.0f64;
    let mut worst_f_witness = None;
    let mut worst_g_quotient = 0.0f64;
    let mut worst_g_witness = None;
    let mut worst_f_growth = 0.0f64;
    let mut worst_g_growth = 0.0f64;

    let draw = |rng: &mut ChaCha8Rng, dim: usize, r: f64| -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-r..=r)).collect()
    };

    for s in 0..sample_budget {
        let t = rng.gen_range(0.0..=1.0);
        let y: Vec<f64> = draw(&mut rng, k, radius);
        // near pairs every other sample catch local slopes; far pairs the rest
        let y2: Vec<f64> = if s % 2 == 0 {
            y.iter().map(|v| v * 0.9).collect()
        } else {
            draw(&mut rng, k, radius)
        };
        let z = draw(&mut rng, kd, radius);
        let z2: Vec<f64> = if s % 2 == 0 {
            z.clone()
        } else {
            draw(&mut rng, kd, radius)
        };
        let atom1 = draw(&mut rng, k + kd, radius);
        let atom2 = if s % 2 == 0 {
            atom1.clone()
        } else {
            draw(&mut rng, k + kd, radius)
        };
        let law1 = DiscreteMeasure::dirac(&atom1);
        let law2 = DiscreteMeasure::dirac(&atom2);
        let w2_laws = crate::vecmath::dist(&atom1, &atom2);

        let f1 = spec.eval_f(t, &y, &z, &law1)?;
        let f2 = spec.eval_f(t, &y2, &z2, &law2)?;
        let denom = crate::vecmath::dist(&y, &y2) + crate::vecmath::dist(&z, &z2) + w2_laws;
        if denom > 1e-12 {
            let q = crate::vecmath::dist(&f1, &f2) / denom;
            if q > worst_f_quotient {
                worst_f_quotient = q;
                worst_f_witness = Some(format!(
                    "|y|={:.3}, |y'|={:.3}, quotient {:.6}",
                    norm(&y),
                    norm(&y2),
                    q
                ));
            }
        }
        // growth ratio against the declared bound
        let alpha = spec.growth_alpha;
        let eta_t = (spec.eta)(t);
        let grow_bound = spec.lipschitz_l
            * (norm(&y).powf(alpha) + norm(&z).powf(alpha) + w2_to_dirac0(&law1))
            + eta_t;
        let excess = norm(&f1) - grow_bound;
        worst_f_growth = worst_f_growth.max(excess);

        let g1 = spec.eval_g(t, &y)?;
        let g2 = spec.eval_g(t, &y2)?;
        let ydist = crate::vecmath::dist(&y, &y2);
        if ydist > 1e-12 {
            let q = crate::vecmath::dist(&g1, &g2) / ydist;
            if q > worst_g_quotient {
                worst_g_quotient = q;
                worst_g_witness = Some(format!("|y|={:.3}, quotient {:.6}", norm(&y), q));
            }
        }
        let nu_t = (spec.nu)(t);
        worst_g_growth = worst_g_growth.max(norm(&g1) - (spec.lipschitz_k * norm(&y) + nu_t));
    }

    let f_bound = match spec.regime {
        Regime::GlobalLipschitz => spec.lipschitz_l,
        Regime::LocalLipschitz => spec.lipschitz_at(radius),
    };
    let clauses = vec![
        AssumptionClause {
            name: "f-lipschitz".into(),
            pass: worst_f_quotient <= f_bound * (1.0 + 1e-6) + QUOTIENT_SLACK,
            worst: worst_f_quotient,
            bound: f_bound,
            witness: worst_f_witness,
        },
        AssumptionClause {
            name: "f-growth".into(),
            pass: worst_f_growth <= QUOTIENT_SLACK,
            worst: worst_f_growth,
            bound: 0.0,
            witness: None,
        },
        AssumptionClause {
            name: "g-lipschitz".into(),
            pass: worst_g_quotient <= spec.lipschitz_k * (1.0 + 1e-6) + QUOTIENT_SLACK,
            worst: worst_g_quotient,
            bound: spec.lipschitz_k,
            witness: worst_g_witness,
        },
        AssumptionClause {
            name: "g-growth".into(),
            pass: worst_g_growth <= QUOTIENT_SLACK,
            worst: worst_g_growth,
            bound: 0.0,
            witness: None,
        },
    ];
    let pass = clauses.iter().all(|c| c.pass);
    Ok(AssumptionReport {
        budget: sample_budget,
        radius,
        clauses,
        pass,
        note: format!("no violation found at budget {sample_budget}; sampling is not a proof"),
    })
}

/// Whether sampled local Lipschitz constants respect the logarithmic
/// growth `r_N^2 <= (1 - alpha) / (5 T) * ln N - 1/2` needed for the
/// truncation scheme to converge. Returns the radii that violate it.
pub fn log_condition_violations(
    spec: &GeneratorSpec,
    horizon: f64,
    radii: &[f64],
) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for &n in radii {
        if n <= 1.0 {
            continue;
        }
        let r = spec.lipschitz_at(n);
        let bound = (1.0 - spec.growth_alpha) / (5.0 * horizon) * n.ln() - 0.5;
        if r * r > bound {
            out.push((n, r, bound));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_generator(k: usize, d: usize) -> GeneratorSpec {
        GeneratorSpec {
            f: Arc::new(move |_, _, _, _| vec![0.0; k]),
            g: Arc::new(move |_, _| vec![0.0; k]),
            lipschitz_l: 0.0,
            lipschitz_k: 0.0,
            growth_alpha: 1.0,
            eta: Arc::new(|_| 0.0),
            nu: Arc::new(|_| 0.0),
            regime: Regime::GlobalLipschitz,
            local_r: None,
            dim_y: k,
            dim_w: d,
        }
    }

    fn scaling_generator(a: f64) -> GeneratorSpec {
        GeneratorSpec {
            f: Arc::new(move |_, y, _, _| y.iter().map(|v| a * v).collect()),
            g: Arc::new(|_, _| vec![0.0]),
            lipschitz_l: a,
            lipschitz_k: 0.0,
            growth_alpha: 1.0,
            eta: Arc::new(|_| 0.0),
            nu: Arc::new(|_| 0.0),
            regime: Regime::GlobalLipschitz,
            local_r: None,
            dim_y: 1,
            dim_w: 1,
        }
    }

    #[test]
    fn eval_examples() {
        let z = zero_generator(1, 1);
        let law = DiscreteMeasure::dirac0(2);
        assert_eq!(z.eval_f(0.3, &[5.0], &[1.0], &law).unwrap(), vec![0.0]);

        let s = scaling_generator(0.5);
        assert_eq!(s.eval_f(0.0, &[2.0], &[0.0], &law).unwrap(), vec![1.0]);

        // F returning the law's distance to the origin Dirac
        let w: GeneratorSpec = GeneratorSpec {
            f: Arc::new(|_, _, _, law| vec![w2_to_dirac0(law)]),
            ..zero_generator(1, 1)
        };
        let sym = DiscreteMeasure::new(2, vec![1.0, 0.0, -1.0, 0.0], vec![0.5, 0.5]).unwrap();
        let v = w.eval_f(0.0, &[0.0], &[0.0], &sym).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let bad: GeneratorSpec = GeneratorSpec {
            f: Arc::new(|_, _, _, _| vec![f64::NAN]),
            ..zero_generator(1, 1)
        };
        let law = DiscreteMeasure::dirac0(2);
        assert!(bad.eval_f(0.0, &[1.0], &[0.0], &law).is_err());
    }

    #[test]
    fn smoothstep_profile() {
        assert_eq!(smoothstep_cutoff(2.0, 1.0), 1.0);
        assert_eq!(smoothstep_cutoff(2.0, 2.0), 1.0);
        assert_eq!(smoothstep_cutoff(2.0, 3.0), 0.0);
        assert_eq!(smoothstep_cutoff(2.0, 3.5), 0.0);
        // the declared profile at the midpoint
        assert!((smoothstep_cutoff(2.0, 2.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn truncation_examples() {
        let s = scaling_generator(1.0);
        let tr = truncate(&s, 2).unwrap();
        let law = DiscreteMeasure::dirac0(2);

        // inside the radius the truncation is the identity
        let inside = tr.eval_f(0.0, &[1.0], &[0.5], &law).unwrap();
        assert_eq!(inside, vec![1.0]);

        // outside it vanishes
        let outside = tr.eval_f(0.0, &[3.5], &[0.0], &law).unwrap();
        assert_eq!(outside, vec![0.0]);

        // on the shoulder the declared smoothstep value applies
        let shoulder = tr.eval_f(0.0, &[2.5], &[0.0], &law).unwrap();
        assert!((shoulder[0] - 2.5 * 0.5).abs() < 1e-14);
    }

    #[test]
    fn truncation_is_dominated() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = scaling_generator(0.7);
        for n in [1usize, 2, 4] {
            let tr = truncate(&s, n).unwrap();
            for _ in 0..200 {
                let y = vec![rng.gen_range(-6.0..6.0)];
                let z = vec![rng.gen_range(-6.0..6.0)];
                let atom = vec![rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
                let law = DiscreteMeasure::dirac(&atom);
                let full = s.eval_f(0.0, &y, &z, &law).unwrap();
                let cut = tr.eval_f(0.0, &y, &z, &law).unwrap();
                assert!(norm(&cut) <= norm(&full) + 1e-12);
            }
        }
    }

    #[test]
    fn rho_examples() {
        let grid: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
        let zero = rho_n_dims(|_, _, _, _| vec![0.0], 1, 1, 2.0, &grid, 64).unwrap();
        assert_eq!(zero, 0.0);

        // constant c over T = 1 integrates to c
        let c = 1.7;
        let constant = rho_n_dims(move |_, _, _, _| vec![c], 1, 1, 2.0, &grid, 64).unwrap();
        assert!((constant - c).abs() < 1e-12);

        // truncation difference vanishes on the ball once n >= N
        let s = scaling_generator(1.0);
        let tr = truncate(&s, 3).unwrap();
        let sf = s.clone();
        let diff = move |t: f64, y: &[f64], z: &[f64], law: &DiscreteMeasure| {
            let a = tr.eval_f(t, y, z, law).unwrap();
            let b = sf.eval_f(t, y, z, law).unwrap();
            crate::vecmath::sub(&a, &b)
        };
        let r = rho_n_dims(diff, 1, 1, 2.0, &grid, 256).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rho_monotone_in_budget() {
        let s = scaling_generator(1.0);
        let tr = truncate(&s, 1).unwrap();
        let grid: Vec<f64> = (0..=4).map(|i| i as f64 / 4.0).collect();
        let diff = |t: f64, y: &[f64], z: &[f64], law: &DiscreteMeasure| {
            let a = tr.eval_f(t, y, z, law).unwrap();
            let b = s.eval_f(t, y, z, law).unwrap();
            crate::vecmath::sub(&a, &b)
        };
        let mut last = 0.0;
        for budget in [8usize, 32, 128, 512] {
            let r = rho_n_dims(diff, 1, 1, 3.0, &grid, budget).unwrap();
            assert!(r >= last - 1e-15, "budget {budget}: {r} < {last}");
            last = r;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn rho_nonincreasing_in_truncation_radius() {
        let s = scaling_generator(1.0);
        let grid: Vec<f64> = (0..=4).map(|i| i as f64 / 4.0).collect();
        let mut last = f64::INFINITY;
        for n in [1usize, 2, 3, 4] {
            let tr = truncate(&s, n).unwrap();
            let sf = s.clone();
            let diff = move |t: f64, y: &[f64], z: &[f64], law: &DiscreteMeasure| {
                let a = tr.eval_f(t, y, z, law).unwrap();
                let b = sf.eval_f(t, y, z, law).unwrap();
                crate::vecmath::sub(&a, &b)
            };
            let r = rho_n_dims(diff, 1, 1, 3.0, &grid, 256).unwrap();
            assert!(r <= last + 1e-15);
            last = r;
        }
    }

    #[test]
    fn assumption_validation_detects_quadratic() {
        // F = y^2 declared globally Lipschitz with L = 1 must fail: the
        // difference quotient reaches ~19 near |y| = 10
        let quad: GeneratorSpec = GeneratorSpec {
            f: Arc::new(|_, y, _, _| vec![y[0] * y[0]]),
            lipschitz_l: 1.0,
            ..zero_generator(1, 1)
        };
        let report = validate_assumptions(&quad, 512, 10.0, 42).unwrap();
        assert!(!report.pass);
        let clause = report.clauses.iter().find(|c| c.name == "f-lipschitz").unwrap();
        assert!(!clause.pass);
        assert!(clause.worst > 1.0);
        assert!(clause.witness.is_some());
    }

    #[test]
    fn assumption_validation_passes_honest_specs() {
        let zero = zero_generator(1, 1);
        assert!(validate_assumptions(&zero, 256, 10.0, 1).unwrap().pass);

        // G = clamp(y, -1, 1) with K = 1 is 1-Lipschitz
        let clamp: GeneratorSpec = GeneratorSpec {
            g: Arc::new(|_, y| y.iter().map(|v| v.clamp(-1.0, 1.0)).collect()),
            lipschitz_k: 1.0,
            nu: Arc::new(|_| 1.0),
            ..zero_generator(1, 1)
        };
        assert!(validate_assumptions(&clamp, 256, 10.0, 1).unwrap().pass);
    }

    #[test]
    fn log_condition_flags_fast_growth() {
        let mut sat = zero_generator(1, 1);
        sat.regime = Regime::LocalLipschitz;
        sat.growth_alpha = 0.5;
        sat.local_r = Some(Arc::new(|n: f64| 2.0 * n.min(5.0)));
        let v = log_condition_violations(&sat, 0.5, &[2.0, 4.0, 8.0]);
        assert!(!v.is_empty());

        let mut tame = zero_generator(1, 1);
        tame.regime = Regime::LocalLipschitz;
        tame.growth_alpha = 0.5;
        tame.local_r = Some(Arc::new(|_| 0.0));
        // even r = 0 violates for small N where the bound is negative
        let v = log_condition_violations(&tame, 0.5, &[1024.0, 4096.0]);
        assert!(v.is_empty());
    }
}
