//! Weighted discrete probability measures on the joint (Y, Z) space and
//! exact Wasserstein-2 distances between them.
//!
//! Measures are finitely supported, so the coupling infimum is a finite
//! transportation program and is solved exactly. Ties are broken
//! deterministically by atom index.

mod transport;

use crate::error::{BsviError, Result};
use crate::vecmath::{all_finite, dist_sq, norm_sq};

/// Default cap on the combined atom count of one transport solve.
pub const DEFAULT_ATOM_CAP: usize = 4096;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A finitely supported probability measure with flat atom storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from `count = atoms.len() / dim` atoms. Weights
    /// must be nonnegative and sum to one within 1e-12.
    pub fn new(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || weights.is_empty() || atoms.len() != dim * weights.len() {
            return Err(BsviError::Invalid {
                context: "DiscreteMeasure".into(),
                detail: format!(
                    "need at least one atom of dimension {dim}; got {} coordinates, {} weights",
                    atoms.len(),
                    weights.len()
                ),
            });
        }
        if !all_finite(&atoms) {
            return Err(BsviError::NonFinite {
                context: "DiscreteMeasure atoms".into(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) || (sum - 1.0).abs() > WEIGHT_SUM_TOL
        {
            return Err(BsviError::WeightSum { sum });
        }
        Ok(DiscreteMeasure {
            dim,
            atoms,
            weights,
        })
    }

    /// The Dirac measure at the origin of `R^dim`.
    pub fn dirac0(dim: usize) -> Self {
        DiscreteMeasure {
            dim,
            atoms: vec![0.0; dim],
            weights: vec![1.0],
        }
    }

    /// The Dirac measure at `point`.
    pub fn dirac(point: &[f64]) -> Self {
        DiscreteMeasure {
            dim: point.len(),
            atoms: point.to_vec(),
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted mean of the first `k` coordinates of each atom.
    pub fn mean_head(&self, k: usize) -> Vec<f64> {
        let mut m = vec![0.0; k];
        for i in 0..self.len() {
            let a = self.atom(i);
            for j in 0..k {
                m[j] += self.weights[i] * a[j];
            }
        }
        m
    }

    /// Second moment `sum_i w_i |x_i|^2`.
    pub fn second_moment(&self) -> f64 {
        (0..self.len())
            .map(|i| self.weights[i] * norm_sq(self.atom(i)))
            .sum()
    }
}

/// Exact Wasserstein-2 distance between two discrete measures.
///
/// Single-atom cases are closed-form (there is only one coupling), and
/// bitwise-identical measures short-circuit to zero with the identity
/// coupling. Everything else runs the exact transportation solve on the
/// squared-distance cost matrix.
pub fn w2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    w2_capped(mu, nu, DEFAULT_ATOM_CAP)
}

/// `w2` with an explicit combined atom cap.
pub fn w2_capped(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cap: usize) -> Result<f64> {
    if mu.dim != nu.dim {
        return Err(BsviError::DimensionMismatch {
            context: "w2".into(),
            expected: mu.dim,
            got: nu.dim,
        });
    }
    if mu == nu {
        return Ok(0.0);
    }
    // a Dirac on either side leaves only one coupling
    if nu.len() == 1 {
        let b = nu.atom(0);
        let cost: f64 = (0..mu.len())
            .map(|i| mu.weight(i) * dist_sq(mu.atom(i), b))
            .sum();
        return Ok(cost.max(0.0).sqrt());
    }
    if mu.len() == 1 {
        return w2_capped(nu, mu, cap);
    }
    let count = mu.len() + nu.len();
    if count > cap {
        return Err(BsviError::AtomCap { count, cap });
    }
    let cost = |i: usize, j: usize| dist_sq(mu.atom(i), nu.atom(j));
    let total = transport::transport_cost(&mu.weights, &nu.weights, &cost);
    Ok(total.max(0.0).sqrt())
}

/// Distance to the Dirac at the origin: the square root of the second
/// moment. Identical to `w2(mu, dirac0)` but O(atoms).
pub fn w2_to_dirac0(mu: &DiscreteMeasure) -> f64 {
    mu.second_moment().max(0.0).sqrt()
}

const COUPLING_TOL: f64 = 1e-10;

/// Checks the coupling chain bound
/// `W2^2(law, perturbed law) <= 2 (E|dz|^2 + E|dy|^2)` with the left side
/// computed exactly from the two induced joint measures and the right
/// side from the synchronous coupling of the aligned ensembles.
pub fn coupling_bound_check(
    base_y: &[Vec<f64>],
    base_z: &[Vec<f64>],
    diff_y: &[Vec<f64>],
    diff_z: &[Vec<f64>],
    weights: &[f64],
) -> Result<bool> {
    let n = weights.len();
    for (name, v) in [
        ("base_y", base_y.len()),
        ("base_z", base_z.len()),
        ("diff_y", diff_y.len()),
        ("diff_z", diff_z.len()),
    ] {
        if v != n {
            return Err(BsviError::Misaligned { left: v, right: n }).map_err(|e| {
                BsviError::Invalid {
                    context: "coupling_bound_check".into(),
                    detail: format!("{name}: {e}"),
                }
            });
        }
    }
    let ky = base_y[0].len();
    let kz = base_z[0].len();
    let dim = ky + kz;
    let mut atoms_a = Vec::with_capacity(n * dim);
    let mut atoms_b = Vec::with_capacity(n * dim);
    let mut rhs = 0.0;
    for i in 0..n {
        atoms_a.extend_from_slice(&base_y[i]);
        atoms_a.extend_from_slice(&base_z[i]);
        for j in 0..ky {
            atoms_b.push(base_y[i][j] + diff_y[i][j]);
        }
        for j in 0..kz {
            atoms_b.push(base_z[i][j] + diff_z[i][j]);
        }
        rhs += weights[i] * (norm_sq(&diff_z[i]) + norm_sq(&diff_y[i]));
    }
    let mu = DiscreteMeasure::new(dim, atoms_a, weights.to_vec())?;
    let nu = DiscreteMeasure::new(dim, atoms_b, weights.to_vec())?;
    let lhs = w2(&mu, &nu)?.powi(2);
    Ok(lhs <= 2.0 * rhs + COUPLING_TOL)
}

/// Per-time-level laws of the solution, one measure per tree level.
#[derive(Debug, Clone)]
pub struct MeasureFlow {
    pub levels: Vec<DiscreteMeasure>,
}

impl MeasureFlow {
    pub fn level(&self, i: usize) -> &DiscreteMeasure {
        &self.levels[i]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Max over levels of the exact W2 distance to another flow.
    pub fn distance(&self, other: &MeasureFlow) -> Result<f64> {
        if self.len() != other.len() {
            return Err(BsviError::Misaligned {
                left: self.len(),
                right: other.len(),
            });
        }
        let mut worst = 0.0f64;
        for (a, b) in self.levels.iter().zip(&other.levels) {
            worst = worst.max(w2(a, b)?);
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force W2 over all permutation couplings of two equal-weight,
    /// equal-count measures.
    pub(crate) fn w2_permutation_oracle(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        assert_eq!(mu.len(), nu.len());
        let n = mu.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let cost: f64 = (0..n)
                .map(|i| dist_sq(mu.atom(i), nu.atom(p[i])))
                .sum::<f64>()
                / n as f64;
            if cost < best {
                best = cost;
            }
        });
        best.sqrt()
    }

    fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            visit(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, visit);
            p.swap(k, i);
        }
    }

    fn measure_1d(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(1, points.to_vec(), weights.to_vec()).unwrap()
    }

    #[test]
    fn dirac_pair_distance() {
        let a = DiscreteMeasure::dirac(&[1.0, 2.0]);
        let b = DiscreteMeasure::dirac(&[4.0, 2.0]);
        assert!((w2(&a, &b).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_matching_is_optimal() {
        // brute force over both couplings confirms the monotone matching
        let mu = measure_1d(&[0.0, 2.0], &[0.5, 0.5]);
        let nu = measure_1d(&[1.0, 3.0], &[0.5, 0.5]);
        let d = w2(&mu, &nu).unwrap();
        assert!((d - 1.0).abs() < 1e-12, "got {d}");
        assert!((d - w2_permutation_oracle(&mu, &nu)).abs() < 1e-12);
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let mu = measure_1d(&[0.3, -1.7, 2.2], &[0.2, 0.5, 0.3]);
        assert_eq!(w2(&mu, &mu).unwrap(), 0.0);
    }

    #[test]
    fn second_moment_examples() {
        let sym = DiscreteMeasure::new(2, vec![1.0, 0.0, -1.0, 0.0], vec![0.5, 0.5]).unwrap();
        assert!((w2_to_dirac0(&sym) - 1.0).abs() < 1e-12);
        assert_eq!(w2_to_dirac0(&DiscreteMeasure::dirac0(3)), 0.0);
        let m = measure_1d(&[2.0, 0.0], &[0.25, 0.75]);
        assert!((w2_to_dirac0(&m) - 1.0).abs() < 1e-12);
        // cross-check against the full solver
        let d = w2(&m, &DiscreteMeasure::dirac0(1)).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_agreement_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let n = rng.gen_range(2..=5);
            let dim = rng.gen_range(1..=2);
            let w = vec![1.0 / n as f64; n];
            let atoms_a: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let atoms_b: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mu = DiscreteMeasure::new(dim, atoms_a, w.clone()).unwrap();
            let nu = DiscreteMeasure::new(dim, atoms_b, w).unwrap();
            let exact = w2(&mu, &nu).unwrap();
            let oracle = w2_permutation_oracle(&mu, &nu);
            assert!(
                (exact - oracle).abs() < 1e-9,
                "solver {exact} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn unequal_weights_against_refinement_oracle() {
        // split the 0.5-weight atom into two quarter atoms; the optimum is
        // unchanged, and the refined problem is equal-weight so the
        // permutation oracle applies
        let mu = measure_1d(&[0.0, 4.0], &[0.5, 0.5]);
        let nu = measure_1d(&[1.0, 3.0, 5.0], &[0.25, 0.5, 0.25]);
        let nu_refined = measure_1d(&[1.0, 3.0, 3.0, 5.0], &[0.25; 4]);
        let mu_refined = measure_1d(&[0.0, 0.0, 4.0, 4.0], &[0.25; 4]);
        let exact = w2(&mu, &nu).unwrap();
        let oracle = w2_permutation_oracle(&mu_refined, &nu_refined);
        assert!(
            (exact - oracle).abs() < 1e-9,
            "solver {exact} vs refined oracle {oracle}"
        );
    }

    #[test]
    fn coupling_bound_cases() {
        // zero perturbation: both sides vanish
        let by = vec![vec![0.5], vec![-0.5]];
        let bz = vec![vec![0.0], vec![0.0]];
        let dy0 = vec![vec![0.0], vec![0.0]];
        let dz0 = vec![vec![0.0], vec![0.0]];
        assert!(coupling_bound_check(&by, &bz, &dy0, &dz0, &[0.5, 0.5]).unwrap());

        // single atom shifted by (1, 0): W2^2 = 1 <= 2
        let one_y = vec![vec![0.0]];
        let one_z = vec![vec![0.0]];
        assert!(
            coupling_bound_check(&one_y, &one_z, &[vec![1.0]], &[vec![0.0]], &[1.0]).unwrap()
        );
    }

    #[test]
    fn coupling_bound_random_ensemble() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 8;
        let by: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let bz: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let dy: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-0.5..0.5)]).collect();
        let dz: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-0.5..0.5)]).collect();
        let w = vec![1.0 / n as f64; n];
        assert!(coupling_bound_check(&by, &bz, &dy, &dz, &w).unwrap());
    }

    #[test]
    fn atom_cap_is_enforced() {
        let mu = measure_1d(&[0.0, 1.0, 2.0], &[0.3, 0.3, 0.4]);
        let nu = measure_1d(&[0.5, 1.5, 2.5], &[0.3, 0.3, 0.4]);
        let err = w2_capped(&mu, &nu, 4).unwrap_err();
        assert!(matches!(err, BsviError::AtomCap { count: 6, cap: 4 }));
    }

    #[test]
    fn weight_validation() {
        assert!(DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.6, 0.6]).is_err());
        assert!(DiscreteMeasure::new(1, vec![0.0, 1.0], vec![1.2, -0.2]).is_err());
        assert!(DiscreteMeasure::new(1, vec![f64::NAN], vec![1.0]).is_err());
    }
}
