//! Discrete-time driver: a non-recombining binary tree surrogate of the
//! Brownian motion, a deterministic increasing process, and the exact
//! conditional expectation / martingale representation on the tree.
//!
//! Nodes are implicit: level `l` has `(2^d)^l` nodes, node `p` at level
//! `l` has children `p * 2^d + c` at level `l + 1`, and each child edge
//! carries the increment `sqrt(dt) * sigma(c)` where `sigma(c)` is the
//! sign pattern given by the bits of `c` (coordinate 0 is the most
//! significant bit; bit 0 means +1). Per-level values are materialized
//! only when they actually vary across nodes, so deterministic solves run
//! at any step count without enumerating paths.

use crate::error::{BsviError, Result};
use serde::{Deserialize, Serialize};

/// Default cap on the number of terminal nodes a path-dependent solve may
/// enumerate.
pub const DEFAULT_NODE_CAP: usize = 1 << 16;

/// Structural description of the noise tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseTree {
    pub steps: usize,
    pub horizon: f64,
    pub dim: usize,
    pub dt: f64,
    /// children per node, `2^d`
    pub branch: usize,
}

impl NoiseTree {
    pub fn build(steps: usize, horizon: f64, dim: usize) -> Result<Self> {
        if steps == 0 || dim == 0 || !(horizon.is_finite() && horizon > 0.0) {
            return Err(BsviError::Invalid {
                context: "NoiseTree".into(),
                detail: format!("need steps >= 1, dim >= 1, horizon > 0; got n={steps}, d={dim}, T={horizon}"),
            });
        }
        if dim >= usize::BITS as usize - 1 {
            return Err(BsviError::Invalid {
                context: "NoiseTree".into(),
                detail: format!("noise dimension {dim} too large"),
            });
        }
        Ok(NoiseTree {
            steps,
            horizon,
            dim,
            dt: horizon / steps as f64,
            branch: 1usize << dim,
        })
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    /// Node count at `level`, or None on overflow.
    pub fn level_count(&self, level: usize) -> Option<u128> {
        (self.branch as u128).checked_pow(level as u32)
    }

    /// Node count at `level` as usize, enforcing the enumeration cap.
    pub fn level_count_capped(&self, level: usize, cap: usize) -> Result<usize> {
        let count = self
            .level_count(level)
            .ok_or(BsviError::NodeCap { count: u128::MAX, cap })?;
        if count > cap as u128 {
            return Err(BsviError::NodeCap { count, cap });
        }
        Ok(count as usize)
    }

    /// Probability of each node at `level` (uniform by construction).
    pub fn node_probability(&self, level: usize) -> f64 {
        (-((self.dim * level) as f64)).exp2()
    }

    /// Sign pattern of child slot `c`: coordinate 0 is the most
    /// significant bit, cleared bits mean +1.
    pub fn child_signs(&self, c: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|j| {
                if (c >> (self.dim - 1 - j)) & 1 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect()
    }

    /// Brownian increment on the edge into child slot `c`.
    pub fn increment(&self, c: usize) -> Vec<f64> {
        let s = self.dt.sqrt();
        self.child_signs(c).iter().map(|x| x * s).collect()
    }

    /// Brownian path `W_0, ..., W_level` leading to `node` at `level`.
    pub fn path_to(&self, level: usize, node: usize) -> Vec<Vec<f64>> {
        let mut slots = vec![0usize; level];
        let mut idx = node;
        for i in (0..level).rev() {
            slots[i] = idx % self.branch;
            idx /= self.branch;
        }
        let mut w = vec![0.0; self.dim];
        let mut path = Vec::with_capacity(level + 1);
        path.push(w.clone());
        for &c in &slots {
            let inc = self.increment(c);
            for j in 0..self.dim {
                w[j] += inc[j];
            }
            path.push(w.clone());
        }
        path
    }
}

/// Per-level values of a node-indexed process.
///
/// `Uniform` levels store one vector shared by every node; backward
/// induction preserves uniformity (conditional expectations of constants
/// are constants and their martingale part vanishes), which is what makes
/// constant-terminal solves tractable at large step counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelValues {
    dim: usize,
    uniform: bool,
    data: Vec<f64>,
}

impl LevelValues {
    pub fn uniform(values: Vec<f64>) -> Self {
        LevelValues {
            dim: values.len(),
            uniform: true,
            data: values,
        }
    }

    pub fn per_node(dim: usize, data: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && data.len().is_multiple_of(dim));
        LevelValues {
            dim,
            uniform: false,
            data,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Number of stored vectors (1 for uniform levels).
    pub fn stored(&self) -> usize {
        if self.uniform {
            1
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn get(&self, node: usize) -> &[f64] {
        if self.uniform {
            &self.data
        } else {
            &self.data[node * self.dim..(node + 1) * self.dim]
        }
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Elementwise difference; both sides must share storage shape.
    pub fn minus(&self, other: &LevelValues) -> LevelValues {
        assert_eq!(self.dim, other.dim);
        assert_eq!(self.uniform, other.uniform);
        assert_eq!(self.data.len(), other.data.len());
        LevelValues {
            dim: self.dim,
            uniform: self.uniform,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// Exact conditional expectation one level up: each parent gets the equal
/// weight average of its `2^d` children.
pub fn conditional_expectation(
    tree: &NoiseTree,
    level: usize,
    child_values: &LevelValues,
) -> Result<LevelValues> {
    if child_values.is_uniform() {
        return Ok(child_values.clone());
    }
    let child_count = child_values.stored();
    let expected = tree
        .level_count(level + 1)
        .map(|c| c as usize)
        .unwrap_or(usize::MAX);
    if child_count != expected {
        return Err(BsviError::DimensionMismatch {
            context: format!("conditional_expectation at level {level}"),
            expected,
            got: child_count,
        });
    }
    let dim = child_values.dim();
    let parents = child_count / tree.branch;
    let inv = 1.0 / tree.branch as f64;
    let mut out = vec![0.0; parents * dim];
    for p in 0..parents {
        for c in 0..tree.branch {
            let v = child_values.get(p * tree.branch + c);
            for j in 0..dim {
                out[p * dim + j] += v[j];
            }
        }
        for j in 0..dim {
            out[p * dim + j] *= inv;
        }
    }
    Ok(LevelValues::per_node(dim, out))
}

/// Least-squares martingale representation at one level.
///
/// Returns the per-parent `k x d` matrices (flat row-major) solving
/// `value_child = mean + <Z, dW_child>` and the largest orthogonal
/// residual. For `d = 1` the system is square and the residual is zero.
pub fn martingale_representation(
    tree: &NoiseTree,
    level: usize,
    child_values: &LevelValues,
) -> Result<(LevelValues, f64)> {
    let dim = child_values.dim();
    if child_values.is_uniform() {
        return Ok((LevelValues::uniform(vec![0.0; dim * tree.dim]), 0.0));
    }
    let child_count = child_values.stored();
    let expected = tree
        .level_count(level + 1)
        .map(|c| c as usize)
        .unwrap_or(usize::MAX);
    if child_count != expected {
        return Err(BsviError::DimensionMismatch {
            context: format!("martingale_representation at level {level}"),
            expected,
            got: child_count,
        });
    }
    let parents = child_count / tree.branch;
    let branch = tree.branch;
    let d = tree.dim;
    let sqrt_dt = tree.dt.sqrt();
    // Normal equations decouple: sum_c sigma sigma^T = branch * I, so
    // Z[r][c'] = sum_sigma sigma_c' v_sigma_r / (branch * sqrt_dt).
    let signs: Vec<Vec<f64>> = (0..branch).map(|c| tree.child_signs(c)).collect();
    let mut out = vec![0.0; parents * dim * d];
    let mut max_residual = 0.0f64;
    let inv = 1.0 / (branch as f64 * sqrt_dt);
    for p in 0..parents {
        let mut mean = vec![0.0; dim];
        for c in 0..branch {
            let v = child_values.get(p * branch + c);
            for j in 0..dim {
                mean[j] += v[j];
            }
        }
        for m in mean.iter_mut() {
            *m /= branch as f64;
        }
        let z = &mut out[p * dim * d..(p + 1) * dim * d];
        for (c, sign) in signs.iter().enumerate() {
            let v = child_values.get(p * branch + c);
            for r in 0..dim {
                for (cc, s) in sign.iter().enumerate() {
                    z[r * d + cc] += s * (v[r] - mean[r]) * inv;
                }
            }
        }
        // orthogonal residual diagnostic
        for (c, sign) in signs.iter().enumerate() {
            let v = child_values.get(p * branch + c);
            let mut res_sq = 0.0;
            for r in 0..dim {
                let mut fit = mean[r];
                for (cc, s) in sign.iter().enumerate() {
                    fit += z[r * d + cc] * s * sqrt_dt;
                }
                res_sq += (v[r] - fit) * (v[r] - fit);
            }
            max_residual = max_residual.max(res_sq.sqrt());
        }
    }
    Ok((LevelValues::per_node(dim * d, out), max_residual))
}

/// Deterministic increasing process variants.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum IncreasingProcess {
    Zero,
    Linear { rate: f64 },
    /// One jump of size `jump` applied at the grid time nearest `tau`.
    StepAt { tau: f64, jump: f64 },
}

impl IncreasingProcess {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        match self {
            IncreasingProcess::Zero => Ok(()),
            IncreasingProcess::Linear { rate } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(BsviError::Invalid {
                        context: "IncreasingProcess::Linear".into(),
                        detail: "rate must be nonnegative".into(),
                    });
                }
                Ok(())
            }
            IncreasingProcess::StepAt { tau, jump } => {
                if !(tau.is_finite() && *tau > 0.0 && *tau < horizon) {
                    return Err(BsviError::Invalid {
                        context: "IncreasingProcess::StepAt".into(),
                        detail: format!("tau must lie in (0, {horizon})"),
                    });
                }
                if !(jump.is_finite() && *jump > 0.0) {
                    return Err(BsviError::Invalid {
                        context: "IncreasingProcess::StepAt".into(),
                        detail: "jump must be positive".into(),
                    });
                }
                Ok(())
            }
        }
    }
}

/// Evaluated increasing process on the grid: values `A_0..A_n` and
/// increments `dA_0..dA_{n-1}`.
#[derive(Debug, Clone)]
pub struct EvaluatedA {
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
}

pub fn evaluate_a(proc: &IncreasingProcess, tree: &NoiseTree) -> Result<EvaluatedA> {
    proc.validate(tree.horizon)?;
    let n = tree.steps;
    let mut increments = vec![0.0; n];
    match proc {
        IncreasingProcess::Zero => {}
        IncreasingProcess::Linear { rate } => {
            for inc in increments.iter_mut() {
                *inc = rate * tree.dt;
            }
        }
        IncreasingProcess::StepAt { tau, jump } => {
            let idx = ((tau / tree.dt).round() as usize).min(n - 1);
            increments[idx] = *jump;
        }
    }
    let mut values = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    values.push(0.0);
    for &inc in &increments {
        acc += inc;
        values.push(acc);
    }
    Ok(EvaluatedA { values, increments })
}
