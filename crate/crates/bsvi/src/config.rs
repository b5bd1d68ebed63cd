//! JSON run configuration: schema, cross-validation, and the content
//! digest embedded in every output artifact.
//!
//! The JSON document is the single source of truth for a run; the CLI
//! only selects the config path, output directory, and verbosity.
//! Unknown keys are rejected everywhere.

use crate::catalog::{self, GeneratorParams, TerminalParams};
use crate::convex::{check_compatibility, CompatSample, ConvexSpec, ConvexVariant};
use crate::error::{BsviError, Result};
use crate::generator::{validate_assumptions, Regime};
use crate::measure::DiscreteMeasure;
use crate::noise::{IncreasingProcess, NoiseTree, DEFAULT_NODE_CAP};
use crate::solver::{
    SolverConfig, TerminalSpec, WeightConfig, DEFAULT_INNER_MAX, DEFAULT_INNER_TOL,
    DEFAULT_PICARD_MAX, DEFAULT_PICARD_TOL,
};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TreeSection {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub d: usize,
    #[serde(default)]
    pub node_cap: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConvexParams {
    #[serde(default)]
    pub lo: Option<Vec<f64>>,
    #[serde(default)]
    pub hi: Option<Vec<f64>>,
    #[serde(default)]
    pub axis: Option<usize>,
    #[serde(default)]
    pub direction: Option<i8>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConvexSection {
    pub variant: String,
    #[serde(default)]
    pub params: ConvexParams,
    pub dim: usize,
}

impl ConvexSection {
    pub fn build(&self) -> Result<ConvexSpec> {
        let missing = |what: &str| {
            BsviError::ConfigValidation(format!(
                "barrier variant {} needs parameter {what}",
                self.variant
            ))
        };
        let variant = match self.variant.as_str() {
            "zero" => ConvexVariant::Zero,
            "indicator_box" => ConvexVariant::IndicatorBox {
                lo: self.params.lo.clone().ok_or_else(|| missing("lo"))?,
                hi: self.params.hi.clone().ok_or_else(|| missing("hi"))?,
            },
            "indicator_half_line" => ConvexVariant::IndicatorHalfLine {
                axis: self.params.axis.unwrap_or(0),
                direction: self.params.direction.unwrap_or(1),
            },
            "quadratic" => ConvexVariant::Quadratic {
                c: self.params.c.ok_or_else(|| missing("c"))?,
            },
            "norm1d" => ConvexVariant::Norm1D {
                scale: self.params.scale.ok_or_else(|| missing("scale"))?,
            },
            other => {
                return Err(BsviError::ConfigValidation(format!(
                    "unknown barrier variant {other}"
                )))
            }
        };
        ConvexSpec::new(variant, self.dim)
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub name: String,
    #[serde(default)]
    pub params: GeneratorParams,
    #[serde(default)]
    pub regime: Option<String>,
    #[serde(rename = "L", default)]
    pub lipschitz_l: Option<f64>,
    #[serde(rename = "K", default)]
    pub lipschitz_k: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TerminalSection {
    pub name: String,
    #[serde(default)]
    pub params: TerminalParams,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    #[serde(default)]
    pub auto: bool,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub eps_schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub n_schedule: Option<Vec<usize>>,
    #[serde(default)]
    pub picard_tol: Option<f64>,
    #[serde(default)]
    pub picard_max: Option<usize>,
    #[serde(default)]
    pub inner_tol: Option<f64>,
    #[serde(default)]
    pub inner_max: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentParamsSection {
    /// Perturbation scales for the stability experiment.
    #[serde(default)]
    pub scales: Option<Vec<f64>>,
    /// Terminal-direction of the stability perturbation.
    #[serde(default)]
    pub h: Option<TerminalSection>,
    /// Penalization schedule override.
    #[serde(default)]
    pub eps_list: Option<Vec<f64>>,
    /// Truncation radii or baseline step counts.
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    /// Seminorm radii for the truncation tables.
    #[serde(default)]
    pub radius_list: Option<Vec<f64>>,
    /// Regularization values for the compatibility samples.
    #[serde(default)]
    pub eps_grid: Option<Vec<f64>>,
    /// Sampling budget for validators.
    #[serde(default)]
    pub budget: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub params: ExperimentParamsSection,
}

/// The full run document.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tree: TreeSection,
    pub increasing_process: IncreasingProcess,
    pub phi: ConvexSection,
    pub psi: ConvexSection,
    pub generator: GeneratorSection,
    pub terminal: TerminalSection,
    pub weights: WeightsSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub experiment: Option<ExperimentSection>,
    pub seed: u64,
}

/// Baseline families with closed-form oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineFamily {
    /// Linear drift in y, constant terminal: exponential oracle.
    LinearDrift,
    /// No generator, path-dependent terminal: conditional expectation.
    ConditionalExpectation,
    /// Mean-field linear drift, constant terminal: mean ODE oracle.
    MeanField,
}

/// A parsed and cross-validated run: the solver configuration plus the
/// schedule and experiment data the harness needs.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub raw: RunConfig,
    pub solver: SolverConfig,
    pub digest: String,
    pub seed: u64,
}

fn is_zero_barrier(section: &ConvexSection) -> bool {
    section.variant == "zero"
}

impl RunSpec {
    /// Parses a JSON document and runs every structural validator. The
    /// compatibility gate is separate (see [`RunSpec::compatibility_gate`])
    /// so the compatibility experiment can run on failing fixtures.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| BsviError::ConfigValidation(format!("invalid JSON: {e}")))?;
        let raw: RunConfig = serde_json::from_value(value.clone())
            .map_err(|e| BsviError::ConfigValidation(e.to_string()))?;
        let digest = digest_of(&value);
        Self::build(raw, digest)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    fn build(raw: RunConfig, digest: String) -> Result<Self> {
        let tree = NoiseTree::build(raw.tree.n, raw.tree.horizon, raw.tree.d)?;
        let phi = raw.phi.build()?;
        let psi = raw.psi.build()?;
        let k = phi.dim;
        let mut generator =
            catalog::generator_by_name(&raw.generator.name, k, raw.tree.d, &raw.generator.params)?;
        if let Some(regime) = &raw.generator.regime {
            generator.regime = match regime.as_str() {
                "global_lipschitz" => Regime::GlobalLipschitz,
                "local_lipschitz" => Regime::LocalLipschitz,
                other => {
                    return Err(BsviError::ConfigValidation(format!(
                        "unknown regime {other}"
                    )))
                }
            };
        }
        if let Some(l) = raw.generator.lipschitz_l {
            generator.lipschitz_l = l;
        }
        if let Some(kk) = raw.generator.lipschitz_k {
            generator.lipschitz_k = kk;
        }
        if let Some(alpha) = raw.generator.alpha {
            generator.growth_alpha = alpha;
        }
        let terminal = catalog::terminal_by_name(&raw.terminal.name, k, &raw.terminal.params)?;
        let weights = if raw.weights.auto {
            WeightConfig::auto(generator.lipschitz_l, generator.lipschitz_k)
        } else {
            match (raw.weights.lambda, raw.weights.mu) {
                (Some(lambda), Some(mu)) => WeightConfig { lambda, mu },
                _ => {
                    return Err(BsviError::ConfigValidation(
                        "weights need either auto=true or explicit lambda and mu".into(),
                    ))
                }
            }
        };
        let mut solver = SolverConfig::new(
            tree,
            raw.increasing_process.clone(),
            phi,
            psi,
            generator,
            terminal,
            weights,
        );
        solver.picard_tol = raw.solver.picard_tol.unwrap_or(DEFAULT_PICARD_TOL);
        solver.picard_max = raw.solver.picard_max.unwrap_or(DEFAULT_PICARD_MAX);
        solver.inner_tol = raw.solver.inner_tol.unwrap_or(DEFAULT_INNER_TOL);
        solver.inner_max = raw.solver.inner_max.unwrap_or(DEFAULT_INNER_MAX);
        solver.node_cap = raw.tree.node_cap.unwrap_or(DEFAULT_NODE_CAP);

        let spec = RunSpec {
            seed: raw.seed,
            raw,
            solver,
            digest,
        };
        spec.cross_validate()?;
        Ok(spec)
    }

    /// Everything except the compatibility gate: barrier structure,
    /// weight floors, step-size guards, terminal feasibility, and the
    /// sampled assumption report.
    fn cross_validate(&self) -> Result<()> {
        let radius = self
            .raw
            .solver
            .n_schedule
            .as_ref()
            .and_then(|s| s.iter().max())
            .map(|&n| (n + 1) as f64);
        self.solver.validate(radius)?;
        let k = self.solver.dim_y();
        let segment_points: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                (0..k)
                    .map(|j| -4.0 + 0.125 * ((i * (j + 3) + 5 * j) % 64) as f64)
                    .collect()
            })
            .collect();
        crate::convex::validate_convexity(&self.solver.phi, &segment_points)?;
        crate::convex::validate_convexity(&self.solver.psi, &segment_points)?;
        let budget = self
            .raw
            .experiment
            .as_ref()
            .and_then(|e| e.params.budget)
            .unwrap_or(512);
        let report = validate_assumptions(&self.solver.generator, budget, 10.0, self.seed)?;
        if !report.pass {
            let failing: Vec<String> = report
                .clauses
                .iter()
                .filter(|c| !c.pass)
                .map(|c| format!("{} (worst {}, bound {})", c.name, c.worst, c.bound))
                .collect();
            return Err(BsviError::ConfigValidation(format!(
                "declared generator assumptions violated: {}",
                failing.join("; ")
            )));
        }
        Ok(())
    }

    /// Deterministic sample points for the compatibility conditions:
    /// a y-grid crossed with representative z values and Dirac laws.
    pub fn compatibility_samples(&self) -> Vec<CompatSample> {
        let k = self.solver.dim_y();
        let kd = k * self.solver.tree.dim;
        let mut samples = Vec::new();
        let times = [
            0.0,
            0.5 * self.solver.tree.horizon,
            self.solver.tree.horizon,
        ];
        for step in 0..17 {
            let y0 = -2.0 + 0.25 * step as f64;
            let y: Vec<f64> = (0..k).map(|j| y0 + 0.1 * j as f64).collect();
            let z: Vec<f64> = (0..kd)
                .map(|j| 0.2 * ((step + j) % 3) as f64 - 0.2)
                .collect();
            let mut atom = y.clone();
            atom.extend_from_slice(&z);
            let law = DiscreteMeasure::dirac(&atom);
            let t = times[step % times.len()];
            samples.push(CompatSample { t, y, z, law });
        }
        samples
    }

    /// The compatibility gate run before any solve.
    pub fn compatibility_gate(&self) -> Result<()> {
        let eps_grid = self.experiment_eps_grid();
        let samples = self.compatibility_samples();
        let report = check_compatibility(
            &self.solver.phi,
            &self.solver.psi,
            &self.solver.generator,
            &eps_grid,
            &samples,
        )?;
        if !report.pass {
            let idx = report.first_violation.unwrap_or(0);
            let e = &report.entries[idx];
            return Err(BsviError::ConfigValidation(format!(
                "compatibility violated at sample {} (eps {}): inner product {}, G margin {}, F margin {}",
                e.sample, e.eps, e.inner_product, e.g_margin, e.f_margin
            )));
        }
        Ok(())
    }

    pub fn experiment_eps_grid(&self) -> Vec<f64> {
        self.raw
            .experiment
            .as_ref()
            .and_then(|e| e.params.eps_grid.clone())
            .unwrap_or_else(|| vec![0.5, 0.1, 0.02])
    }

    /// The penalization schedule: experiment override, then the solver
    /// schedule, then a dyadic default.
    pub fn eps_schedule(&self) -> Vec<f64> {
        if let Some(e) = self
            .raw
            .experiment
            .as_ref()
            .and_then(|e| e.params.eps_list.clone())
        {
            return e;
        }
        if let Some(e) = self.raw.solver.eps_schedule.clone() {
            return e;
        }
        (2..=7).map(|m| 0.5f64.powi(m)).collect()
    }

    pub fn n_schedule(&self) -> Vec<usize> {
        if let Some(n) = self
            .raw
            .experiment
            .as_ref()
            .and_then(|e| e.params.n_list.clone())
        {
            return n;
        }
        if let Some(n) = self.raw.solver.n_schedule.clone() {
            return n;
        }
        vec![2, 4, 8, 16, 32]
    }

    pub fn scales(&self) -> Vec<f64> {
        self.raw
            .experiment
            .as_ref()
            .and_then(|e| e.params.scales.clone())
            .unwrap_or_else(|| vec![0.0, 1.0, 0.5, 0.25])
    }

    pub fn radius_list(&self) -> Vec<f64> {
        self.raw
            .experiment
            .as_ref()
            .and_then(|e| e.params.radius_list.clone())
            .unwrap_or_else(|| vec![1.0, 2.0, 4.0])
    }

    /// Stability perturbation direction; defaults to the constant 0.1.
    pub fn stability_direction(&self) -> Result<TerminalSpec> {
        let k = self.solver.dim_y();
        match self
            .raw
            .experiment
            .as_ref()
            .and_then(|e| e.params.h.as_ref())
        {
            Some(section) => catalog::terminal_by_name(&section.name, k, &section.params),
            None => Ok(TerminalSpec::constant(vec![0.1; k])),
        }
    }

    /// Rebuilds the solver configuration with a different step count
    /// (used by the baseline order sweeps).
    pub fn with_tree_steps(&self, n: usize) -> Result<SolverConfig> {
        let mut solver = self.solver.clone();
        solver.tree = NoiseTree::build(n, self.solver.tree.horizon, self.solver.tree.dim)?;
        Ok(solver)
    }

    /// Which closed-form baseline family the configuration belongs to.
    pub fn baseline_family(&self) -> Option<BaselineFamily> {
        if !is_zero_barrier(&self.raw.phi) || !is_zero_barrier(&self.raw.psi) {
            return None;
        }
        let g = &self.raw.generator;
        let p = &g.params;
        if p.g_slope != 0.0 || p.g_const != 0.0 {
            return None;
        }
        let constant_terminal = self.raw.terminal.name == "constant";
        match g.name.as_str() {
            "zero" if !constant_terminal => Some(BaselineFamily::ConditionalExpectation),
            "linear" if p.a == 0.0 && p.b == 0.0 && p.c == 0.0 && !constant_terminal => {
                Some(BaselineFamily::ConditionalExpectation)
            }
            "linear" if p.b == 0.0 && p.c == 0.0 && p.a != 0.0 && constant_terminal => {
                Some(BaselineFamily::LinearDrift)
            }
            "affine_in_law"
                if p.a == 0.0
                    && p.b == 0.0
                    && p.c == 0.0
                    && p.w2_coeff == 0.0
                    && p.mean_coeff != 0.0
                    && constant_terminal =>
            {
                Some(BaselineFamily::MeanField)
            }
            _ => None,
        }
    }
}

/// First 12 hex characters of the SHA-256 of the canonical (sorted-key)
/// JSON encoding.
pub fn digest_of(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).unwrap_or_default();
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config() -> String {
        r#"{
            "tree": {"n": 4, "T": 1.0, "d": 1},
            "increasing_process": {"variant": "zero"},
            "phi": {"variant": "zero", "dim": 1},
            "psi": {"variant": "zero", "dim": 1},
            "generator": {"name": "zero"},
            "terminal": {"name": "constant", "params": {"value": [1.0]}},
            "weights": {"auto": true},
            "solver": {"eps": 0.25},
            "seed": 7
        }"#
        .to_string()
    }

    #[test]
    fn parses_and_validates_minimal_config() {
        let spec = RunSpec::from_json(&minimal_config()).unwrap();
        assert_eq!(spec.solver.tree.steps, 4);
        assert_eq!(spec.digest.len(), 12);
        assert!(spec.compatibility_gate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = minimal_config().replace("\"seed\": 7", "\"seed\": 7, \"extra\": 1");
        let err = RunSpec::from_json(&bad).unwrap_err();
        assert!(matches!(err, BsviError::ConfigValidation(_)));
    }

    #[test]
    fn missing_required_key_is_named() {
        let bad = minimal_config().replace("\"n\": 4, ", "");
        let err = RunSpec::from_json(&bad).unwrap_err();
        let text = err.to_string();
        assert!(text.contains('n'), "error should name the key: {text}");
    }

    #[test]
    fn digest_is_content_stable() {
        let a = RunSpec::from_json(&minimal_config()).unwrap();
        let b = RunSpec::from_json(&minimal_config()).unwrap();
        assert_eq!(a.digest, b.digest);
        let other = minimal_config().replace("\"seed\": 7", "\"seed\": 8");
        let c = RunSpec::from_json(&other).unwrap();
        assert_ne!(a.digest, c.digest);
    }

    #[test]
    fn baseline_detection() {
        let spec = RunSpec::from_json(&minimal_config()).unwrap();
        assert_eq!(spec.baseline_family(), None); // constant terminal, zero generator

        let linear = minimal_config().replace(
            r#""generator": {"name": "zero"}"#,
            r#""generator": {"name": "linear", "params": {"a": 0.5}}"#,
        );
        let spec = RunSpec::from_json(&linear).unwrap();
        assert_eq!(spec.baseline_family(), Some(BaselineFamily::LinearDrift));

        let cond = minimal_config().replace(
            r#""terminal": {"name": "constant", "params": {"value": [1.0]}}"#,
            r#""terminal": {"name": "brownian", "params": {"scale": 1.0}}"#,
        );
        let spec = RunSpec::from_json(&cond).unwrap();
        assert_eq!(
            spec.baseline_family(),
            Some(BaselineFamily::ConditionalExpectation)
        );
    }

    #[test]
    fn dishonest_lipschitz_declaration_fails() {
        let lying = minimal_config().replace(
            r#""generator": {"name": "zero"}"#,
            r#""generator": {"name": "linear", "params": {"a": 0.4}, "L": 0.01}"#,
        );
        let err = RunSpec::from_json(&lying).unwrap_err();
        assert!(matches!(err, BsviError::ConfigValidation(_)));
    }
}
