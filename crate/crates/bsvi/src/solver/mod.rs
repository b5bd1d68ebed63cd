//! Backward induction for the penalized equation with a measure-flow
//! fixed point, continuation in the penalization parameter, and the
//! truncated local-Lipschitz path.
//!
//! Per step, the conditional expectation and martingale part are exact on
//! the tree, the generators enter explicitly at the predictor, and the
//! penalization terms enter implicitly through a relaxed fixed-point
//! iteration on the one-step equation
//! `Y + dt grad(phi_eps)(Y) + dA grad(psi_eps)(Y) = rhs`.
//! The outer loop freezes the whole per-level law flow, re-solves, and
//! rebuilds the flow until the max-over-levels W2 residual drops below
//! tolerance.

mod norms;

pub use norms::{m_of_t, norms_of_path, path_distance_sq, weighted_norms, NormBundle};

use crate::convex::{resolvent, yosida_gradient, ConvexSpec, ConvexVariant};
use crate::error::{BsviError, Result};
use crate::generator::{GeneratorSpec, TruncatedGenerator};
use crate::measure::{DiscreteMeasure, MeasureFlow};
use crate::noise::{
    conditional_expectation, evaluate_a, martingale_representation, EvaluatedA, IncreasingProcess,
    LevelValues, NoiseTree, DEFAULT_NODE_CAP,
};
use crate::vecmath::norm;
use std::sync::Arc;

/// Exponential weight parameters. Validity requires
/// `lambda > 3 + 16 L^2` and `mu > 2 + 4 K^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightConfig {
    pub lambda: f64,
    pub mu: f64,
}

pub const WEIGHT_AUTO_MARGIN: f64 = 0.5;

impl WeightConfig {
    /// Smallest admissible weights for the declared constants, plus a
    /// fixed margin.
    pub fn auto(lipschitz_l: f64, lipschitz_k: f64) -> Self {
        WeightConfig {
            lambda: 3.0 + 16.0 * lipschitz_l * lipschitz_l + WEIGHT_AUTO_MARGIN,
            mu: 2.0 + 4.0 * lipschitz_k * lipschitz_k + WEIGHT_AUTO_MARGIN,
        }
    }

    pub fn validate(&self, lipschitz_l: f64, lipschitz_k: f64) -> Result<()> {
        let lambda_floor = 3.0 + 16.0 * lipschitz_l * lipschitz_l;
        let mu_floor = 2.0 + 4.0 * lipschitz_k * lipschitz_k;
        // NaN weights fail the comparison and are rejected with the rest
        let ok = self.lambda > lambda_floor && self.mu > mu_floor;
        if !ok {
            return Err(BsviError::ConfigValidation(format!(
                "weights lambda={}, mu={} must exceed {lambda_floor} and {mu_floor}",
                self.lambda, self.mu
            )));
        }
        Ok(())
    }
}

pub type TerminalFn = Arc<dyn Fn(&[Vec<f64>]) -> Vec<f64> + Send + Sync>;

/// Terminal condition: either a constant vector (solves stay uniform per
/// level at any step count) or a function of the Brownian path to the
/// terminal node.
#[derive(Clone)]
pub enum TerminalSpec {
    Constant(Vec<f64>),
    PathDependent(TerminalFn),
}

impl std::fmt::Debug for TerminalSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TerminalSpec::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            TerminalSpec::PathDependent(_) => f.write_str("PathDependent(..)"),
        }
    }
}

impl TerminalSpec {
    pub fn constant(values: Vec<f64>) -> Self {
        TerminalSpec::Constant(values)
    }

    /// `xi_j = scale * W_T[j mod d]`.
    pub fn brownian(k: usize, scale: f64) -> Self {
        TerminalSpec::PathDependent(Arc::new(move |path| {
            let w = path.last().expect("nonempty path");
            (0..k).map(|j| scale * w[j % w.len()]).collect()
        }))
    }

    /// `xi_j = scale * |W_T[j mod d]|`.
    pub fn abs_brownian(k: usize, scale: f64) -> Self {
        TerminalSpec::PathDependent(Arc::new(move |path| {
            let w = path.last().expect("nonempty path");
            (0..k).map(|j| (scale * w[j % w.len()]).abs()).collect()
        }))
    }

    /// `xi_j = clamp(scale * W_T[j mod d], lo, hi)`.
    pub fn clamped_brownian(k: usize, scale: f64, lo: f64, hi: f64) -> Self {
        TerminalSpec::PathDependent(Arc::new(move |path| {
            let w = path.last().expect("nonempty path");
            (0..k).map(|j| (scale * w[j % w.len()]).clamp(lo, hi)).collect()
        }))
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TerminalSpec::Constant(_))
    }

    /// Terminal values per node (uniform storage for constants).
    pub fn evaluate(&self, tree: &NoiseTree, node_cap: usize) -> Result<LevelValues> {
        match self {
            TerminalSpec::Constant(v) => Ok(LevelValues::uniform(v.clone())),
            TerminalSpec::PathDependent(f) => {
                let count = tree.level_count_capped(tree.steps, node_cap)?;
                let mut data = Vec::new();
                let mut dim = 0usize;
                for node in 0..count {
                    let path = tree.path_to(tree.steps, node);
                    let v = f(&path);
                    if node == 0 {
                        dim = v.len();
                        data.reserve(dim * count);
                    }
                    debug_assert_eq!(v.len(), dim);
                    data.extend_from_slice(&v);
                }
                Ok(LevelValues::per_node(dim, data))
            }
        }
    }
}

/// Everything a solve needs: the tree, the barriers, the generator, the
/// terminal data, the weights, and the iteration tolerances.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub tree: NoiseTree,
    pub a_process: IncreasingProcess,
    pub phi: ConvexSpec,
    pub psi: ConvexSpec,
    pub generator: GeneratorSpec,
    pub terminal: TerminalSpec,
    pub weights: WeightConfig,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub inner_tol: f64,
    pub inner_max: usize,
    pub node_cap: usize,
}

pub const DEFAULT_PICARD_TOL: f64 = 1e-10;
pub const DEFAULT_PICARD_MAX: usize = 200;
pub const DEFAULT_INNER_TOL: f64 = 1e-12;
pub const DEFAULT_INNER_MAX: usize = 20_000;

impl SolverConfig {
    pub fn new(
        tree: NoiseTree,
        a_process: IncreasingProcess,
        phi: ConvexSpec,
        psi: ConvexSpec,
        generator: GeneratorSpec,
        terminal: TerminalSpec,
        weights: WeightConfig,
    ) -> Self {
        SolverConfig {
            tree,
            a_process,
            phi,
            psi,
            generator,
            terminal,
            weights,
            picard_tol: DEFAULT_PICARD_TOL,
            picard_max: DEFAULT_PICARD_MAX,
            inner_tol: DEFAULT_INNER_TOL,
            inner_max: DEFAULT_INNER_MAX,
            node_cap: DEFAULT_NODE_CAP,
        }
    }

    pub fn dim_y(&self) -> usize {
        self.phi.dim
    }

    /// Structural and stability validation shared by all solve entry
    /// points: weight floors, the explicit-part step-size guard, and
    /// finiteness of the terminal functional.
    pub fn validate(&self, working_radius: Option<f64>) -> Result<()> {
        self.phi.validate()?;
        self.psi.validate()?;
        if self.psi.dim != self.phi.dim {
            return Err(BsviError::ConfigValidation(format!(
                "barrier dimensions differ: {} vs {}",
                self.phi.dim, self.psi.dim
            )));
        }
        if self.generator.dim_y != self.phi.dim || self.generator.dim_w != self.tree.dim {
            return Err(BsviError::ConfigValidation(
                "generator dimensions do not match barriers and tree".into(),
            ));
        }
        self.weights
            .validate(self.generator.lipschitz_l, self.generator.lipschitz_k)?;

        let l_eff = match working_radius {
            Some(r) => self.generator.lipschitz_at(r).max(self.generator.lipschitz_l),
            None => self.generator.lipschitz_l,
        };
        if l_eff > 0.0 && self.tree.dt >= 1.0 / (2.0 * l_eff) {
            return Err(BsviError::StepSizeGuard(format!(
                "dt = {} is not below 1/(2L) = {} for effective L = {l_eff}",
                self.tree.dt,
                1.0 / (2.0 * l_eff)
            )));
        }
        let a = evaluate_a(&self.a_process, &self.tree)?;
        let k = self.generator.lipschitz_k;
        if k > 0.0 {
            let max_da = a.increments.iter().cloned().fold(0.0f64, f64::max);
            if max_da >= 1.0 / (2.0 * k) {
                return Err(BsviError::StepSizeGuard(format!(
                    "max dA = {max_da} is not below 1/(2K) = {}",
                    1.0 / (2.0 * k)
                )));
            }
        }
        // the terminal functional must be finite at every terminal node
        m_of_t(self)?;
        Ok(())
    }
}

/// The dt-generator actually driven by a solve: the configured one or a
/// truncation of it.
#[derive(Clone)]
pub enum GeneratorDriver {
    Plain(GeneratorSpec),
    Truncated(TruncatedGenerator),
}

impl GeneratorDriver {
    pub fn eval_f(&self, t: f64, y: &[f64], z: &[f64], law: &DiscreteMeasure) -> Result<Vec<f64>> {
        match self {
            GeneratorDriver::Plain(g) => g.eval_f(t, y, z, law),
            GeneratorDriver::Truncated(g) => g.eval_f(t, y, z, law),
        }
    }

    pub fn eval_g(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            GeneratorDriver::Plain(g) => g.eval_g(t, y),
            GeneratorDriver::Truncated(g) => g.eval_g(t, y),
        }
    }
}

impl TruncatedGenerator {
    pub fn eval_g(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.base.eval_g(t, y)
    }
}

/// Convergence record of one penalized solve.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub eps: f64,
    pub picard_iterations: usize,
    pub flow_residuals: Vec<f64>,
    pub max_representation_residual: f64,
    pub max_balance_residual: f64,
    pub max_inner_iterations: usize,
    pub warnings: Vec<String>,
}

/// Node-indexed solution processes plus diagnostics.
#[derive(Debug, Clone)]
pub struct SolutionPath {
    /// Y at levels 0..=n.
    pub y: Vec<LevelValues>,
    /// Z at levels 0..n (k x d per node, flat).
    pub z: Vec<LevelValues>,
    /// Penalization gradients of phi at levels 0..n.
    pub u: Vec<LevelValues>,
    /// Penalization gradients of psi at levels 0..n.
    pub v: Vec<LevelValues>,
    /// Exact per-level law of (Y, Z); terminal level uses (xi, 0).
    pub flow: MeasureFlow,
    /// The frozen flow the final induction actually used.
    pub frozen_flow: MeasureFlow,
    pub diagnostics: Diagnostics,
}

impl SolutionPath {
    pub fn root_y(&self) -> &[f64] {
        self.y[0].get(0)
    }
}

struct StepContext<'a> {
    tree: &'a NoiseTree,
    a: &'a EvaluatedA,
    phi: &'a ConvexSpec,
    psi: &'a ConvexSpec,
    driver: &'a GeneratorDriver,
    eps: f64,
    inner_tol: f64,
    inner_max: usize,
}

fn barrier_active(spec: &ConvexSpec) -> bool {
    !matches!(spec.variant, ConvexVariant::Zero)
}

/// Solves `y + dt grad(phi_eps)(y) + da grad(psi_eps)(y) = rhs`.
///
/// The plain fixed point `y <- rhs - dt grad(phi_eps)(y) - ...` contracts
/// when `(dt + da) / eps < 1`; beyond that the iteration is relaxed with
/// the step `2 / (2 + (dt + da)/eps)`, which converges for any ratio
/// because the left side is strongly monotone and Lipschitz.
fn inner_solve(
    ctx: &StepContext,
    dt_phi: f64,
    da_psi: f64,
    rhs: &[f64],
) -> Result<(Vec<f64>, usize)> {
    if dt_phi == 0.0 && da_psi == 0.0 {
        return Ok((rhs.to_vec(), 0));
    }
    let ratio = (dt_phi + da_psi) / ctx.eps;
    let theta = if ratio < 0.9 { 1.0 } else { 2.0 / (2.0 + ratio) };
    let mut y = rhs.to_vec();
    for iter in 0..ctx.inner_max {
        let gp = if dt_phi > 0.0 {
            yosida_gradient(ctx.phi, ctx.eps, &y)?
        } else {
            vec![0.0; y.len()]
        };
        let gq = if da_psi > 0.0 {
            yosida_gradient(ctx.psi, ctx.eps, &y)?
        } else {
            vec![0.0; y.len()]
        };
        let mut residual_sq = 0.0;
        let mut next = y.clone();
        for j in 0..y.len() {
            let r = y[j] + dt_phi * gp[j] + da_psi * gq[j] - rhs[j];
            residual_sq += r * r;
            next[j] = y[j] - theta * r;
        }
        if residual_sq.sqrt() <= ctx.inner_tol {
            return Ok((y, iter));
        }
        y = next;
    }
    // final residual for the error report
    let gp = yosida_gradient(ctx.phi, ctx.eps, &y)?;
    let gq = yosida_gradient(ctx.psi, ctx.eps, &y)?;
    let residual = (0..y.len())
        .map(|j| {
            let r = y[j] + dt_phi * gp[j] + da_psi * gq[j] - rhs[j];
            r * r
        })
        .sum::<f64>()
        .sqrt();
    Err(BsviError::InnerNoConvergence {
        residual,
        max_iter: ctx.inner_max,
    })
}

struct StepOutput {
    y: LevelValues,
    z: LevelValues,
    u: LevelValues,
    v: LevelValues,
    representation_residual: f64,
    inner_iterations: usize,
}

/// One backward step: exact conditional expectation and martingale part,
/// explicit generators at the predictor, implicit penalization.
fn backward_step(
    ctx: &StepContext,
    level: usize,
    y_next: &LevelValues,
    law: &DiscreteMeasure,
) -> Result<StepOutput> {
    let k = y_next.dim();
    let t = ctx.tree.time(level);
    let dt = ctx.tree.dt;
    let da = ctx.a.increments[level];
    let mean = conditional_expectation(ctx.tree, level, y_next)?;
    let (z, representation_residual) = martingale_representation(ctx.tree, level, y_next)?;

    let dt_phi = if barrier_active(ctx.phi) { dt } else { 0.0 };
    let da_psi = if barrier_active(ctx.psi) && da > 0.0 { da } else { 0.0 };

    let stored = mean.stored();
    let mut y_data = Vec::with_capacity(stored * k);
    let mut u_data = Vec::with_capacity(stored * k);
    let mut v_data = Vec::with_capacity(stored * k);
    let mut inner_iterations = 0usize;
    for p in 0..stored {
        let m = mean.get(p);
        let zp = z.get(p);
        let f = ctx.driver.eval_f(t, m, zp, law)?;
        let g = ctx.driver.eval_g(t, m)?;
        let rhs: Vec<f64> = (0..k).map(|j| m[j] + dt * f[j] + da * g[j]).collect();
        let (yp, iters) = inner_solve(ctx, dt_phi, da_psi, &rhs)?;
        inner_iterations = inner_iterations.max(iters);
        let up = yosida_gradient(ctx.phi, ctx.eps, &yp)?;
        let vp = yosida_gradient(ctx.psi, ctx.eps, &yp)?;
        y_data.extend_from_slice(&yp);
        u_data.extend_from_slice(&up);
        v_data.extend_from_slice(&vp);
    }
    let make = |data: Vec<f64>| {
        if mean.is_uniform() {
            LevelValues::uniform(data)
        } else {
            LevelValues::per_node(k, data)
        }
    };
    Ok(StepOutput {
        y: make(y_data),
        z,
        u: make(u_data),
        v: make(v_data),
        representation_residual,
        inner_iterations,
    })
}

/// Joint (Y, Z) law at one level; Z values default to zero when absent
/// (the terminal level).
fn level_law(
    tree: &NoiseTree,
    level: usize,
    y: &LevelValues,
    z: Option<&LevelValues>,
) -> DiscreteMeasure {
    let k = y.dim();
    let kd = z.map(|zz| zz.dim()).unwrap_or(k * tree.dim);
    let dim = k + kd;
    if y.is_uniform() {
        let mut atom = Vec::with_capacity(dim);
        atom.extend_from_slice(y.get(0));
        match z {
            Some(zz) => atom.extend_from_slice(zz.get(0)),
            None => atom.extend(std::iter::repeat_n(0.0, kd)),
        }
        return DiscreteMeasure::dirac(&atom);
    }
    let count = y.stored();
    let prob = tree.node_probability(level);
    let mut atoms = Vec::with_capacity(count * dim);
    for node in 0..count {
        atoms.extend_from_slice(y.get(node));
        match z {
            Some(zz) => atoms.extend_from_slice(zz.get(node)),
            None => atoms.extend(std::iter::repeat_n(0.0, kd)),
        }
    }
    // weights are uniform by construction; renormalize the tail entry so
    // rounding in 2^-dl cannot break the sum-to-one invariant
    let mut weights = vec![prob; count];
    let sum: f64 = weights.iter().sum();
    if let Some(last) = weights.last_mut() {
        *last += 1.0 - sum;
    }
    DiscreteMeasure::new(dim, atoms, weights).expect("level law construction")
}

fn flow_of(tree: &NoiseTree, y: &[LevelValues], z: &[LevelValues]) -> MeasureFlow {
    let n = tree.steps;
    let mut levels = Vec::with_capacity(n + 1);
    for i in 0..n {
        levels.push(level_law(tree, i, &y[i], Some(&z[i])));
    }
    levels.push(level_law(tree, n, &y[n], None));
    MeasureFlow { levels }
}

fn delta0_flow(tree: &NoiseTree, k: usize) -> MeasureFlow {
    let dim = k + k * tree.dim;
    MeasureFlow {
        levels: (0..=tree.steps)
            .map(|_| DiscreteMeasure::dirac0(dim))
            .collect(),
    }
}

/// Solves the penalized equation at fixed `eps` by iterating the measure
/// flow from the all-Dirac initialization to its fixed point.
pub fn solve_penalized_with(
    config: &SolverConfig,
    eps: f64,
    driver: &GeneratorDriver,
) -> Result<SolutionPath> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(BsviError::Invalid {
            context: "solve_penalized".into(),
            detail: format!("eps must be positive, got {eps}"),
        });
    }
    let tree = &config.tree;
    let a = evaluate_a(&config.a_process, tree)?;
    let terminal = config.terminal.evaluate(tree, config.node_cap)?;
    let k = terminal.dim();
    let n = tree.steps;
    let ctx = StepContext {
        tree,
        a: &a,
        phi: &config.phi,
        psi: &config.psi,
        driver,
        eps,
        inner_tol: config.inner_tol,
        inner_max: config.inner_max,
    };

    let mut frozen = delta0_flow(tree, k);
    let mut residual_history = Vec::new();
    for iteration in 0..config.picard_max {
        let mut y_levels: Vec<LevelValues> = vec![terminal.clone(); n + 1];
        let mut z_levels: Vec<LevelValues> = Vec::with_capacity(n);
        let mut u_levels: Vec<LevelValues> = Vec::with_capacity(n);
        let mut v_levels: Vec<LevelValues> = Vec::with_capacity(n);
        z_levels.resize(n, LevelValues::uniform(vec![0.0; k * tree.dim]));
        u_levels.resize(n, LevelValues::uniform(vec![0.0; k]));
        v_levels.resize(n, LevelValues::uniform(vec![0.0; k]));
        let mut max_repr = 0.0f64;
        let mut max_inner = 0usize;
        for i in (0..n).rev() {
            let out = backward_step(&ctx, i, &y_levels[i + 1], frozen.level(i))?;
            max_repr = max_repr.max(out.representation_residual);
            max_inner = max_inner.max(out.inner_iterations);
            y_levels[i] = out.y;
            z_levels[i] = out.z;
            u_levels[i] = out.u;
            v_levels[i] = out.v;
        }
        let new_flow = flow_of(tree, &y_levels, &z_levels);
        let residual = new_flow.distance(&frozen)?;
        residual_history.push(residual);
        let converged = residual < config.picard_tol;
        if converged {
            let mut path = SolutionPath {
                y: y_levels,
                z: z_levels,
                u: u_levels,
                v: v_levels,
                flow: new_flow,
                frozen_flow: frozen,
                diagnostics: Diagnostics {
                    eps,
                    picard_iterations: iteration + 1,
                    flow_residuals: residual_history,
                    max_representation_residual: max_repr,
                    max_balance_residual: 0.0,
                    max_inner_iterations: max_inner,
                    warnings: Vec::new(),
                },
            };
            path.diagnostics.max_balance_residual = balance_residual(config, driver, eps, &path)?;
            return Ok(path);
        }
        frozen = new_flow;
    }
    Err(BsviError::PicardNoConvergence {
        last: *residual_history.last().unwrap_or(&f64::NAN),
        max_iter: config.picard_max,
        history: residual_history,
    })
}

/// Solves the penalized equation with the configured generator.
pub fn solve_penalized(config: &SolverConfig, eps: f64) -> Result<SolutionPath> {
    solve_penalized_with(config, eps, &GeneratorDriver::Plain(config.generator.clone()))
}

/// Largest violation of the one-step balance identity
/// `Y_i + U_i dt + V_i dA_i = E_i[Y_{i+1}] + F dt + G dA_i`
/// over all nodes, with F and G at the predictor and the frozen law the
/// final induction used.
pub fn balance_residual(
    config: &SolverConfig,
    driver: &GeneratorDriver,
    _eps: f64,
    path: &SolutionPath,
) -> Result<f64> {
    let tree = &config.tree;
    let a = evaluate_a(&config.a_process, tree)?;
    let k = path.y[0].dim();
    let mut worst = 0.0f64;
    for i in 0..tree.steps {
        let t = tree.time(i);
        let dt = tree.dt;
        let da = a.increments[i];
        let mean = conditional_expectation(tree, i, &path.y[i + 1])?;
        let law = path.frozen_flow.level(i);
        for p in 0..mean.stored() {
            let m = mean.get(p);
            let z = path.z[i].get(p);
            let f = driver.eval_f(t, m, z, law)?;
            let g = driver.eval_g(t, m)?;
            let y = path.y[i].get(p);
            let u = path.u[i].get(p);
            let v = path.v[i].get(p);
            let mut res_sq = 0.0;
            for j in 0..k {
                let lhs = y[j] + u[j] * dt + v[j] * da;
                let rhs = m[j] + f[j] * dt + g[j] * da;
                res_sq += (lhs - rhs) * (lhs - rhs);
            }
            worst = worst.max(res_sq.sqrt());
        }
    }
    Ok(worst)
}

/// One row of the continuation table produced by [`solve_bsvi`].
#[derive(Debug, Clone)]
pub struct ContinuationRow {
    pub eps: f64,
    /// `max_i E[w_i |Y - J_eps(Y)|^2]` for the phi barrier.
    pub gap_phi: f64,
    /// Same for the psi barrier.
    pub gap_psi: f64,
    /// Max over nodes of the distance to the phi feasible set.
    pub feasibility_phi: f64,
    pub feasibility_psi: f64,
    pub picard_iterations: usize,
}

/// A pairwise distance between two solves in a continuation schedule.
#[derive(Debug, Clone)]
pub struct PairDistance {
    pub eps: f64,
    pub delta: f64,
    /// Combined squared weighted norm of the differences.
    pub distance_sq: f64,
}

/// Output of the continuation in the penalization parameter.
#[derive(Debug, Clone)]
pub struct BsviOutput {
    pub rows: Vec<ContinuationRow>,
    pub pairs: Vec<PairDistance>,
    /// Largest balance-identity violation across every solve in the
    /// schedule.
    pub max_balance_residual: f64,
}

/// Weighted per-level expectation of the squared resolvent gap, maxed
/// over levels.
fn resolvent_gap(
    config: &SolverConfig,
    spec: &ConvexSpec,
    eps: f64,
    path: &SolutionPath,
    a: &EvaluatedA,
) -> Result<(f64, f64)> {
    let tree = &config.tree;
    let mut worst = 0.0f64;
    let mut worst_dist = 0.0f64;
    for i in 0..=tree.steps {
        let w = (config.weights.lambda * tree.time(i) + config.weights.mu * a.values[i]).exp();
        let level = &path.y[i];
        let mut acc = 0.0;
        if level.is_uniform() {
            let y = level.get(0);
            let j = resolvent(spec, eps, y)?;
            acc = crate::vecmath::dist_sq(y, &j);
            worst_dist = worst_dist.max(spec.feasible_distance(y));
        } else {
            let prob = tree.node_probability(i);
            for node in 0..level.stored() {
                let y = level.get(node);
                let j = resolvent(spec, eps, y)?;
                acc += prob * crate::vecmath::dist_sq(y, &j);
                worst_dist = worst_dist.max(spec.feasible_distance(y));
            }
        }
        worst = worst.max(w * acc);
    }
    Ok((worst, worst_dist))
}

/// Solves along a strictly decreasing penalization schedule and returns
/// the last path together with the gap and Cauchy tables.
pub fn solve_bsvi(config: &SolverConfig, eps_schedule: &[f64]) -> Result<(SolutionPath, BsviOutput)> {
    if eps_schedule.is_empty() || eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(BsviError::Invalid {
            context: "solve_bsvi".into(),
            detail: "schedule must be nonempty and strictly decreasing".into(),
        });
    }
    let a = evaluate_a(&config.a_process, &config.tree)?;
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    let mut max_balance = 0.0f64;
    let mut last: Option<(f64, SolutionPath)> = None;
    for &eps in eps_schedule {
        let path = solve_penalized(config, eps)?;
        max_balance = max_balance.max(path.diagnostics.max_balance_residual);
        let (gap_phi, feas_phi) = resolvent_gap(config, &config.phi, eps, &path, &a)?;
        let (gap_psi, feas_psi) = resolvent_gap(config, &config.psi, eps, &path, &a)?;
        rows.push(ContinuationRow {
            eps,
            gap_phi,
            gap_psi,
            feasibility_phi: feas_phi,
            feasibility_psi: feas_psi,
            picard_iterations: path.diagnostics.picard_iterations,
        });
        if let Some((prev_eps, prev_path)) = &last {
            pairs.push(PairDistance {
                eps: *prev_eps,
                delta: eps,
                distance_sq: path_distance_sq(config, prev_path, &path)?,
            });
        }
        last = Some((eps, path));
    }
    let (_, final_path) = last.expect("nonempty schedule");
    Ok((
        final_path,
        BsviOutput {
            rows,
            pairs,
            max_balance_residual: max_balance,
        },
    ))
}

/// One row of the truncation table produced by [`solve_local_lipschitz`].
#[derive(Debug, Clone)]
pub struct TruncationRow {
    pub n: usize,
    pub eps: f64,
    pub picard_iterations: usize,
    /// Integrated sup-seminorm estimate of `F_n - F` at the working radius.
    pub rho: f64,
}

/// Output of the truncated local-Lipschitz continuation.
#[derive(Debug, Clone)]
pub struct TruncationOutput {
    pub rows: Vec<TruncationRow>,
    pub pairs: Vec<PairDistance>,
    /// Radius used for the rho estimates (from the final solution bounds).
    pub working_radius: f64,
    /// Weighted generator-gap diagnostic per schedule entry against the
    /// finest solve.
    pub generator_gaps: Vec<f64>,
    pub log_condition_warning: Option<String>,
    /// Largest balance-identity violation across every solve in the
    /// schedule.
    pub max_balance_residual: f64,
}

fn sup_radius(path: &SolutionPath) -> f64 {
    let mut r = 0.0f64;
    for level in path.y.iter().chain(path.z.iter()) {
        for node in 0..level.stored() {
            r = r.max(norm(level.get(node)));
        }
    }
    for m in &path.flow.levels {
        r = r.max(crate::measure::w2_to_dirac0(m));
    }
    r
}

/// Weighted squared gap between the generator used by one solve and the
/// plain generator on the reference solution.
fn generator_gap(
    config: &SolverConfig,
    truncated: &TruncatedGenerator,
    solve: &SolutionPath,
    reference: &SolutionPath,
) -> Result<f64> {
    let tree = &config.tree;
    let a = evaluate_a(&config.a_process, tree)?;
    let mut acc = 0.0;
    for i in 0..tree.steps {
        let t = tree.time(i);
        let w = (config.weights.lambda * tree.time(i) + config.weights.mu * a.values[i]).exp();
        let law_n = solve.frozen_flow.level(i);
        let law_ref = reference.frozen_flow.level(i);
        let stored = solve.y[i].stored().max(reference.y[i].stored());
        let prob = if stored == 1 {
            1.0
        } else {
            tree.node_probability(i)
        };
        let mut level_acc = 0.0;
        for node in 0..stored {
            let fn_val = truncated.eval_f(t, solve.y[i].get(node), solve.z[i].get(node), law_n)?;
            let f_val = config.generator.eval_f(
                t,
                reference.y[i].get(node),
                reference.z[i].get(node),
                law_ref,
            )?;
            level_acc += prob * crate::vecmath::dist_sq(&fn_val, &f_val);
        }
        acc += w * level_acc * tree.dt;
    }
    Ok(acc)
}

/// Continuation in the truncation radius with `eps = 1/n`, following the
/// schedule upward; distances between consecutive solves must be
/// empirically Cauchy.
pub fn solve_local_lipschitz(
    config: &SolverConfig,
    n_schedule: &[usize],
) -> Result<(SolutionPath, TruncationOutput)> {
    if n_schedule.is_empty() || n_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BsviError::Invalid {
            context: "solve_local_lipschitz".into(),
            detail: "schedule must be nonempty and strictly increasing".into(),
        });
    }
    let mut solves: Vec<(usize, TruncatedGenerator, SolutionPath)> = Vec::new();
    let mut pairs = Vec::new();
    let mut max_balance = 0.0f64;
    for &n in n_schedule {
        let truncated = crate::generator::truncate(&config.generator, n)?;
        let driver = GeneratorDriver::Truncated(truncated.clone());
        let eps = 1.0 / n as f64;
        let path = solve_penalized_with(config, eps, &driver)?;
        max_balance = max_balance.max(path.diagnostics.max_balance_residual);
        if let Some((prev_n, _, prev_path)) = solves.last() {
            pairs.push(PairDistance {
                eps: 1.0 / *prev_n as f64,
                delta: eps,
                distance_sq: path_distance_sq(config, prev_path, &path)?,
            });
        }
        solves.push((n, truncated, path));
    }
    let (_, _, reference) = solves.last().expect("nonempty schedule");
    let reference = reference.clone();
    let radius = sup_radius(&reference).max(1.0);
    let grid: Vec<f64> = (0..=config.tree.steps)
        .map(|i| config.tree.time(i))
        .collect();

    let mut rows = Vec::new();
    let mut generator_gaps = Vec::new();
    for (n, truncated, path) in &solves {
        let base = config.generator.clone();
        let tr = truncated.clone();
        let diff = move |t: f64, y: &[f64], z: &[f64], law: &DiscreteMeasure| {
            let a = tr.eval_f(t, y, z, law).unwrap_or_else(|_| vec![f64::NAN]);
            let b = base.eval_f(t, y, z, law).unwrap_or_else(|_| vec![f64::NAN]);
            crate::vecmath::sub(&a, &b)
        };
        let rho = crate::generator::rho_n_dims(
            diff,
            config.dim_y(),
            config.tree.dim,
            radius,
            &grid,
            256,
        )?;
        rows.push(TruncationRow {
            n: *n,
            eps: 1.0 / *n as f64,
            picard_iterations: path.diagnostics.picard_iterations,
            rho,
        });
        generator_gaps.push(generator_gap(config, truncated, path, &reference)?);
    }
    let radii: Vec<f64> = n_schedule.iter().map(|&n| n as f64).collect();
    let violations =
        crate::generator::log_condition_violations(&config.generator, config.tree.horizon, &radii);
    let log_condition_warning = if violations.is_empty() {
        None
    } else {
        let (n, r, bound) = violations[violations.len() - 1];
        Some(format!(
            "sampled local Lipschitz constant r({n}) = {r:.3} exceeds the logarithmic bound {bound:.3}; convergence of the truncation scheme is not guaranteed"
        ))
    };
    let (_, _, final_path) = solves.pop().expect("nonempty schedule");
    Ok((
        final_path,
        TruncationOutput {
            rows,
            pairs,
            working_radius: radius,
            generator_gaps,
            log_condition_warning,
            max_balance_residual: max_balance,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{self, GeneratorParams};
    use crate::convex::ConvexVariant;

    fn basic_config(
        n: usize,
        horizon: f64,
        phi: ConvexSpec,
        generator: GeneratorSpec,
        terminal: TerminalSpec,
    ) -> SolverConfig {
        let tree = NoiseTree::build(n, horizon, 1).unwrap();
        SolverConfig::new(
            tree,
            IncreasingProcess::Zero,
            phi,
            ConvexSpec::zero(1),
            generator,
            terminal,
            WeightConfig::auto(0.0, 0.0),
        )
    }

    fn zero_generator() -> GeneratorSpec {
        catalog::linear(1, 1, &GeneratorParams::default())
    }

    #[test]
    fn unconstrained_step_is_conditional_expectation() {
        // terminal {2, 4} one step up gives 3 with the representation Z
        let config = basic_config(
            1,
            1.0,
            ConvexSpec::zero(1),
            zero_generator(),
            TerminalSpec::PathDependent(Arc::new(|path: &[Vec<f64>]| {
                vec![if path[1][0] > 0.0 { 2.0 } else { 4.0 }]
            })),
        );
        let path = solve_penalized(&config, 0.5).unwrap();
        assert!((path.root_y()[0] - 3.0).abs() < 1e-14);
        // Z = (v_up - v_down) / (2 sqrt(dt)) = (2 - 4) / 2 = -1
        assert!((path.z[0].get(0)[0] + 1.0).abs() < 1e-14);
        assert_eq!(path.u[0].get(0)[0], 0.0);
        assert_eq!(path.v[0].get(0)[0], 0.0);
    }

    #[test]
    fn implicit_step_matches_bisection_oracle() {
        // one step, terminal -1, half-line barrier, dt/eps = 10: the
        // one-shot implicit equation y + (dt/eps)(y - max(y, 0)) = -1
        let phi = ConvexSpec::new(
            ConvexVariant::IndicatorHalfLine {
                axis: 0,
                direction: 1,
            },
            1,
        )
        .unwrap();
        let config = basic_config(
            1,
            1.0,
            phi,
            zero_generator(),
            TerminalSpec::constant(vec![-1.0]),
        );
        let eps = 0.1;
        let path = solve_penalized(&config, eps).unwrap();
        let y0 = path.root_y()[0];

        // independent oracle: bisection on the monotone residual
        let h = |y: f64| y + (1.0 / eps) * (y - y.max(0.0)) + 1.0;
        let (mut lo, mut hi) = (-2.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((y0 - oracle).abs() < 1e-9, "got {y0} vs oracle {oracle}");
        assert!((y0 + 1.0 / 11.0).abs() < 1e-9);
        // the reported gradient closes the balance identity
        assert!(path.diagnostics.max_balance_residual < 1e-9);
    }

    #[test]
    fn constant_drift_shifts_by_dt() {
        let params = GeneratorParams {
            c: 2.0,
            ..Default::default()
        };
        let config = basic_config(
            2,
            1.0,
            ConvexSpec::zero(1),
            catalog::linear(1, 1, &params),
            TerminalSpec::constant(vec![1.0]),
        );
        let path = solve_penalized(&config, 0.5).unwrap();
        // two steps of dt = 0.5 with F = 2: root = 1 + 2 * 1
        assert!((path.root_y()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_terminal_stays_constant() {
        let config = basic_config(
            4,
            1.0,
            ConvexSpec::zero(1),
            zero_generator(),
            TerminalSpec::constant(vec![2.5]),
        );
        let path = solve_penalized(&config, 0.25).unwrap();
        for level in &path.y {
            assert!(level.is_uniform());
            assert!((level.get(0)[0] - 2.5).abs() < 1e-15);
        }
        for level in &path.z {
            assert_eq!(level.get(0)[0], 0.0);
        }
        assert!(path.diagnostics.picard_iterations <= 2);
    }

    #[test]
    fn linear_generator_tracks_the_exponential() {
        // F = a y with constant terminal: the root converges to e^{aT}
        // at first order; at n = 64 the gap is within 1.6e-2
        let params = GeneratorParams {
            a: 0.5,
            ..Default::default()
        };
        let config = basic_config(
            64,
            1.0,
            ConvexSpec::zero(1),
            catalog::linear(1, 1, &params),
            TerminalSpec::constant(vec![1.0]),
        );
        let path = solve_penalized(&config, 0.5).unwrap();
        let target = 0.5f64.exp();
        assert!(
            (path.root_y()[0] - target).abs() < 1.6e-2,
            "root {} vs {target}",
            path.root_y()[0]
        );
    }

    #[test]
    fn self_consistent_zero_fixed_point() {
        // F = W2(law, delta_0) with zero terminal keeps the zero path
        let mut gen = zero_generator();
        gen.f = Arc::new(|_, y: &[f64], _, law: &DiscreteMeasure| {
            vec![crate::measure::w2_to_dirac0(law); y.len()]
        });
        gen.lipschitz_l = 1.0;
        let config = basic_config(
            3,
            0.25,
            ConvexSpec::zero(1),
            gen,
            TerminalSpec::constant(vec![0.0]),
        );
        let path = solve_penalized(&config, 0.5).unwrap();
        assert_eq!(path.root_y()[0], 0.0);
        assert_eq!(path.diagnostics.picard_iterations, 1);
        for m in &path.flow.levels {
            assert_eq!(crate::measure::w2_to_dirac0(m), 0.0);
        }
    }

    #[test]
    fn weighted_norm_examples() {
        // unit path, unit weights: S = 1, H = 1 (left-endpoint sum), dA = 0
        let mut config = basic_config(
            4,
            1.0,
            ConvexSpec::zero(1),
            zero_generator(),
            TerminalSpec::constant(vec![1.0]),
        );
        config.weights = WeightConfig {
            lambda: 0.0,
            mu: 0.0,
        };
        let path = solve_penalized(&config, 0.5).unwrap();
        let bundle = norms_of_path(&config, &path).unwrap();
        assert!((bundle.sup_norm - 1.0).abs() < 1e-14);
        assert!((bundle.dt_norm - 1.0).abs() < 1e-14);
        assert_eq!(bundle.da_norm, 0.0);
        assert_eq!(bundle.z_norm, 0.0);

        // n = 1, lambda = ln 2: the left endpoint carries weight 1
        let mut config1 = basic_config(
            1,
            1.0,
            ConvexSpec::zero(1),
            zero_generator(),
            TerminalSpec::constant(vec![1.0]),
        );
        config1.weights = WeightConfig {
            lambda: 2.0f64.ln(),
            mu: 0.0,
        };
        let path1 = solve_penalized(&config1, 0.5).unwrap();
        let bundle1 = norms_of_path(&config1, &path1).unwrap();
        assert!((bundle1.dt_norm - 1.0).abs() < 1e-14);
        // the sup picks up the terminal weight e^{ln 2} = 2
        assert!((bundle1.sup_norm - 2.0f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn m_of_t_examples() {
        let zero_cfg = basic_config(
            4,
            1.0,
            ConvexSpec::zero(1),
            zero_generator(),
            TerminalSpec::constant(vec![0.0]),
        );
        let mut c = zero_cfg.clone();
        c.weights = WeightConfig {
            lambda: 0.0,
            mu: 0.0,
        };
        assert_eq!(m_of_t(&c).unwrap(), 0.0);

        let mut one = c.clone();
        one.terminal = TerminalSpec::constant(vec![1.0]);
        assert!((m_of_t(&one).unwrap() - 1.0).abs() < 1e-14);

        let mut weighted = one.clone();
        weighted.weights = WeightConfig {
            lambda: 2.0f64.ln(),
            mu: 0.0,
        };
        assert!((m_of_t(&weighted).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn m_of_t_rejects_infeasible_terminal() {
        let phi = ConvexSpec::new(
            ConvexVariant::IndicatorHalfLine {
                axis: 0,
                direction: 1,
            },
            1,
        )
        .unwrap();
        let config = basic_config(
            2,
            1.0,
            phi,
            zero_generator(),
            TerminalSpec::brownian(1, 1.0),
        );
        let err = m_of_t(&config).unwrap_err();
        assert!(matches!(err, BsviError::InfiniteTerminalBarrier { .. }));
    }

    #[test]
    fn bsvi_schedule_inactive_barriers() {
        let config = basic_config(
            3,
            1.0,
            ConvexSpec::zero(1),
            zero_generator(),
            TerminalSpec::brownian(1, 1.0),
        );
        let (path, output) = solve_bsvi(&config, &[0.25, 0.125, 0.0625]).unwrap();
        for row in &output.rows {
            assert_eq!(row.gap_phi, 0.0);
            assert_eq!(row.gap_psi, 0.0);
        }
        for pair in &output.pairs {
            assert!(pair.distance_sq < 1e-24);
        }
        // the solution is the conditional expectation of the terminal
        assert!(path.root_y()[0].abs() < 1e-12);
    }

    #[test]
    fn truncation_of_global_lipschitz_stabilizes() {
        // once the radius exceeds the solution bound the truncation is
        // inactive and consecutive solves coincide
        let params = GeneratorParams {
            a: 0.4,
            ..Default::default()
        };
        let config = basic_config(
            3,
            0.5,
            ConvexSpec::zero(1),
            catalog::linear(1, 1, &params),
            TerminalSpec::brownian(1, 0.5),
        );
        let (_, output) = solve_local_lipschitz(&config, &[2, 4, 8, 16]).unwrap();
        let last = output.pairs.last().unwrap();
        assert!(last.distance_sq < 1e-20, "distance {}", last.distance_sq);
        // rho at the working radius vanishes once n covers it
        let last_row = output.rows.last().unwrap();
        assert_eq!(last_row.rho, 0.0);
    }

    #[test]
    fn multidimensional_noise_solve() {
        // d = 2: four children per node, least-squares martingale part
        let tree = NoiseTree::build(3, 0.5, 2).unwrap();
        let params = GeneratorParams {
            a: 0.3,
            ..Default::default()
        };
        let config = SolverConfig::new(
            tree,
            IncreasingProcess::Zero,
            ConvexSpec::zero(1),
            ConvexSpec::zero(1),
            catalog::linear(1, 2, &params),
            TerminalSpec::brownian(1, 1.0),
            WeightConfig::auto(0.3, 0.0),
        );
        let path = solve_penalized(&config, 0.25).unwrap();
        assert!(path.diagnostics.max_balance_residual < 1e-9);
        // terminal values lie in the increment span, so the binary
        // representation is exact here as well
        assert!(path.diagnostics.max_representation_residual < 1e-9);
        assert_eq!(path.z[0].get(0).len(), 2);
    }

    #[test]
    fn vector_state_solve() {
        // k = 2 with a quadratic barrier couples all the vector paths
        let tree = NoiseTree::build(3, 0.5, 1).unwrap();
        let config = SolverConfig::new(
            tree,
            IncreasingProcess::Linear { rate: 0.5 },
            ConvexSpec::new(ConvexVariant::Quadratic { c: 0.4 }, 2).unwrap(),
            ConvexSpec::zero(2),
            catalog::linear(2, 1, &GeneratorParams {
                a: 0.2,
                g_slope: 0.1,
                ..Default::default()
            }),
            TerminalSpec::constant(vec![1.0, -0.5]),
            WeightConfig::auto(0.2, 0.1),
        );
        let path = solve_penalized(&config, 0.1).unwrap();
        assert!(path.diagnostics.max_balance_residual < 1e-9);
        assert_eq!(path.root_y().len(), 2);
        // the barrier shrinks both components toward the origin
        assert!(path.root_y()[0] < 1.0 && path.root_y()[0] > 0.0);
        assert!(path.root_y()[1] > -0.5 && path.root_y()[1] < 0.0);
    }

    #[test]
    fn weight_validation_enforces_floors() {
        let w = WeightConfig::auto(0.25, 0.5);
        assert!(w.validate(0.25, 0.5).is_ok());
        assert!(WeightConfig {
            lambda: 3.0,
            mu: 4.0
        }
        .validate(0.0, 0.0)
        .is_err());
        assert!(WeightConfig {
            lambda: 4.0,
            mu: 2.0
        }
        .validate(0.0, 0.0)
        .is_err());
    }

    #[test]
    fn step_size_guard_rejects_coarse_grids() {
        let params = GeneratorParams {
            a: 2.0,
            ..Default::default()
        };
        let mut config = basic_config(
            2,
            1.0,
            ConvexSpec::zero(1),
            catalog::linear(1, 1, &params),
            TerminalSpec::constant(vec![1.0]),
        );
        config.weights = WeightConfig::auto(2.0, 0.0);
        // dt = 0.5 is not below 1/(2L) = 0.25
        let err = config.validate(None).unwrap_err();
        assert!(matches!(err, BsviError::StepSizeGuard(_)));
    }

    #[test]
    fn balance_identity_on_reflected_solve() {
        let phi = ConvexSpec::new(
            ConvexVariant::IndicatorHalfLine {
                axis: 0,
                direction: 1,
            },
            1,
        )
        .unwrap();
        let params = GeneratorParams {
            c: -2.0,
            ..Default::default()
        };
        let config = basic_config(
            4,
            0.5,
            phi,
            catalog::linear(1, 1, &params),
            TerminalSpec::abs_brownian(1, 0.5),
        );
        let path = solve_penalized(&config, 0.05).unwrap();
        assert!(
            path.diagnostics.max_balance_residual < 1e-9,
            "residual {}",
            path.diagnostics.max_balance_residual
        );
        // the barrier is active somewhere: gradients are nonzero
        let active = path
            .u
            .iter()
            .any(|lvl| (0..lvl.stored()).any(|p| lvl.get(p)[0].abs() > 1e-6));
        assert!(active);
    }
}
