//! Weighted-norm accounting: the exponential-weight sup, dt, dA, and
//! martingale-part norms of a path, and the terminal-data functional that
//! bounds them.
//!
//! Time integrals use left-endpoint weighting so that the one-step
//! balance identity and the norms share the same quadrature; the
//! eta-integral of the terminal functional is trapezoidal in dt and exact
//! in dA.

use super::{SolutionPath, SolverConfig};
use crate::error::{BsviError, Result};
use crate::noise::{evaluate_a, LevelValues};
use crate::vecmath::norm_sq;

/// The four weighted norms of a path (stored as norms, not squares).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBundle {
    /// `sqrt(E max_i w_i |Y_i|^2)`.
    pub sup_norm: f64,
    /// `sqrt(E sum_i w_i |Y_i|^2 dt)`.
    pub dt_norm: f64,
    /// `sqrt(E sum_i w_i |Y_i|^2 dA_i)`.
    pub da_norm: f64,
    /// `sqrt(E sum_i w_i |Z_i|^2 dt)`.
    pub z_norm: f64,
}

impl NormBundle {
    /// Sum of the squared norms; the quantity the stability and
    /// continuation estimates bound.
    pub fn total_sq(&self) -> f64 {
        self.sup_norm * self.sup_norm
            + self.dt_norm * self.dt_norm
            + self.da_norm * self.da_norm
            + self.z_norm * self.z_norm
    }
}

/// Per-level expectation of `|v|^2` under the uniform node law.
fn level_mean_sq(values: &LevelValues, prob: f64) -> f64 {
    if values.is_uniform() {
        norm_sq(values.get(0))
    } else {
        (0..values.stored())
            .map(|node| prob * norm_sq(values.get(node)))
            .sum()
    }
}

/// Weighted norms of the processes `y` (levels 0..=n) and `z`
/// (levels 0..n) under the configured weights.
pub fn weighted_norms(
    config: &SolverConfig,
    y: &[LevelValues],
    z: &[LevelValues],
) -> Result<NormBundle> {
    let tree = &config.tree;
    let n = tree.steps;
    if y.len() != n + 1 || z.len() != n {
        return Err(BsviError::DimensionMismatch {
            context: "weighted_norms".into(),
            expected: n + 1,
            got: y.len(),
        });
    }
    let a = evaluate_a(&config.a_process, tree)?;
    let weights: Vec<f64> = (0..=n)
        .map(|i| (config.weights.lambda * tree.time(i) + config.weights.mu * a.values[i]).exp())
        .collect();

    let mut dt_sq = 0.0;
    let mut da_sq = 0.0;
    let mut z_sq = 0.0;
    for i in 0..n {
        let prob = tree.node_probability(i);
        let ey = level_mean_sq(&y[i], prob);
        dt_sq += weights[i] * ey * tree.dt;
        da_sq += weights[i] * ey * a.increments[i];
        z_sq += weights[i] * level_mean_sq(&z[i], prob) * tree.dt;
    }

    // pathwise running maximum of w_i |Y_i|^2, then expectation at the
    // terminal level
    let sup_sq = if y[n].is_uniform() {
        (0..=n)
            .map(|i| weights[i] * norm_sq(y[i].get(0)))
            .fold(0.0f64, f64::max)
    } else {
        let mut running = vec![weights[0] * norm_sq(y[0].get(0))];
        for i in 1..=n {
            let count = y[i].stored();
            let mut next = Vec::with_capacity(count);
            for node in 0..count {
                let parent = running[node / tree.branch];
                next.push(parent.max(weights[i] * norm_sq(y[i].get(node))));
            }
            running = next;
        }
        let prob = tree.node_probability(n);
        running.iter().map(|m| prob * m).sum()
    };

    Ok(NormBundle {
        sup_norm: sup_sq.max(0.0).sqrt(),
        dt_norm: dt_sq.max(0.0).sqrt(),
        da_norm: da_sq.max(0.0).sqrt(),
        z_norm: z_sq.max(0.0).sqrt(),
    })
}

/// Weighted norms of a solution path.
pub fn norms_of_path(config: &SolverConfig, path: &SolutionPath) -> Result<NormBundle> {
    weighted_norms(config, &path.y, &path.z)
}

/// Combined squared weighted distance between two solves of the same
/// configuration (difference of Y including the terminal level, and of
/// Z).
pub fn path_distance_sq(
    config: &SolverConfig,
    a: &SolutionPath,
    b: &SolutionPath,
) -> Result<f64> {
    let dy: Vec<LevelValues> = a.y.iter().zip(&b.y).map(|(x, y)| x.minus(y)).collect();
    let dz: Vec<LevelValues> = a.z.iter().zip(&b.z).map(|(x, y)| x.minus(y)).collect();
    Ok(weighted_norms(config, &dy, &dz)?.total_sq())
}

/// The terminal-data functional: the weighted expectation of
/// `|xi|^2 + phi(xi) + psi(xi)` plus the integrated squared growth
/// processes. Infinite barrier values at any terminal node reject the
/// configuration.
pub fn m_of_t(config: &SolverConfig) -> Result<f64> {
    let tree = &config.tree;
    let n = tree.steps;
    let a = evaluate_a(&config.a_process, tree)?;
    let w_terminal = (config.weights.lambda * tree.horizon + config.weights.mu * a.values[n]).exp();

    let xi = config.terminal.evaluate(tree, config.node_cap)?;
    let mut terminal_part = 0.0;
    if xi.is_uniform() {
        let v = xi.get(0);
        let phi = config
            .phi
            .value(v)
            .finite("")
            .map_err(|_| BsviError::InfiniteTerminalBarrier { node: 0 })?;
        let psi = config
            .psi
            .value(v)
            .finite("")
            .map_err(|_| BsviError::InfiniteTerminalBarrier { node: 0 })?;
        terminal_part = w_terminal * (norm_sq(v) + phi + psi);
    } else {
        let prob = tree.node_probability(n);
        for node in 0..xi.stored() {
            let v = xi.get(node);
            let phi = config
                .phi
                .value(v)
                .finite("")
                .map_err(|_| BsviError::InfiniteTerminalBarrier { node })?;
            let psi = config
                .psi
                .value(v)
                .finite("")
                .map_err(|_| BsviError::InfiniteTerminalBarrier { node })?;
            terminal_part += prob * w_terminal * (norm_sq(v) + phi + psi);
        }
    }

    let weight = |i: usize| {
        (config.weights.lambda * tree.time(i) + config.weights.mu * a.values[i]).exp()
    };
    let mut eta_part = 0.0;
    for i in 0..n {
        let f0 = weight(i) * (config.generator.eta)(tree.time(i)).powi(2);
        let f1 = weight(i + 1) * (config.generator.eta)(tree.time(i + 1)).powi(2);
        eta_part += 0.5 * tree.dt * (f0 + f1);
    }
    let mut nu_part = 0.0;
    for i in 0..n {
        nu_part += weight(i) * (config.generator.nu)(tree.time(i)).powi(2) * a.increments[i];
    }
    Ok(terminal_part + eta_part + nu_part)
}
