//! Property-based invariants for the proximal calculus, the transport
//! distance, the tree operators, and the truncation.

use bsvi::convex::{moreau_envelope, resolvent, yosida_gradient, BarrierValue, ConvexSpec, ConvexVariant};
use bsvi::generator::{smoothstep_cutoff, truncate, GeneratorSpec, Regime};
use bsvi::measure::{w2, DiscreteMeasure};
use bsvi::noise::{conditional_expectation, martingale_representation, LevelValues, NoiseTree};
use bsvi::vecmath::dist_sq;
use proptest::prelude::*;
use std::sync::Arc;

fn barrier_strategy() -> impl Strategy<Value = ConvexSpec> {
    prop_oneof![
        Just(ConvexSpec::new(ConvexVariant::Zero, 1).unwrap()),
        (0.2f64..2.0).prop_map(|c| ConvexSpec::new(ConvexVariant::Quadratic { c }, 1).unwrap()),
        (0.2f64..2.0)
            .prop_map(|s| ConvexSpec::new(ConvexVariant::Norm1D { scale: s }, 1).unwrap()),
        ((0.2f64..2.0), (0.2f64..2.0)).prop_map(|(a, b)| ConvexSpec::new(
            ConvexVariant::IndicatorBox {
                lo: vec![-a],
                hi: vec![b]
            },
            1
        )
        .unwrap()),
        Just(
            ConvexSpec::new(
                ConvexVariant::IndicatorHalfLine {
                    axis: 0,
                    direction: 1
                },
                1
            )
            .unwrap()
        ),
    ]
}

proptest! {
    /// The envelope never exceeds the barrier value and is nondecreasing
    /// as eps decreases along a dyadic grid.
    #[test]
    fn envelope_dominated_and_monotone(spec in barrier_strategy(), y in -4.0f64..4.0) {
        let mut previous = f64::NEG_INFINITY;
        for m in (1..=8).rev() {
            let eps = 0.5f64.powi(m);
            // iterate from the smallest eps: envelopes shrink as eps grows
            let env = moreau_envelope(&spec, eps, &[y]).unwrap();
            prop_assert!(env >= -1e-12);
            if let BarrierValue::Finite(v) = spec.value(&[y]) {
                prop_assert!(env <= v + 1e-10);
            }
            if previous > f64::NEG_INFINITY {
                // previous had smaller eps, so it must dominate
                prop_assert!(previous >= env - 1e-12);
            }
            previous = env;
        }
    }

    /// The quadratic residual is a summand of the envelope, so it can
    /// never exceed it.
    #[test]
    fn residual_bounded_by_envelope(spec in barrier_strategy(), y in -4.0f64..4.0, eps in 0.01f64..1.0) {
        let j = resolvent(&spec, eps, &[y]).unwrap();
        let env = moreau_envelope(&spec, eps, &[y]).unwrap();
        let residual = dist_sq(&[y], &j) / (2.0 * eps);
        prop_assert!(residual <= env + 1e-14);
    }

    /// Yosida gradients are monotone and 1/eps-Lipschitz in the point.
    #[test]
    fn gradient_monotone_lipschitz(
        spec in barrier_strategy(),
        a in -4.0f64..4.0,
        b in -4.0f64..4.0,
        eps in 0.01f64..1.0,
    ) {
        let ga = yosida_gradient(&spec, eps, &[a]).unwrap();
        let gb = yosida_gradient(&spec, eps, &[b]).unwrap();
        prop_assert!((ga[0] - gb[0]) * (a - b) >= -1e-10);
        prop_assert!((ga[0] - gb[0]).abs() <= (a - b).abs() / eps + 1e-10);
    }

    /// Transport distance is symmetric and satisfies the triangle
    /// inequality on small random measures.
    #[test]
    fn w2_metric_properties(
        xs in prop::collection::vec(-2.0f64..2.0, 2..5),
        ys in prop::collection::vec(-2.0f64..2.0, 2..5),
        zs in prop::collection::vec(-2.0f64..2.0, 2..5),
    ) {
        let uniform = |v: &Vec<f64>| {
            DiscreteMeasure::new(1, v.clone(), vec![1.0 / v.len() as f64; v.len()]).unwrap()
        };
        let (a, b, c) = (uniform(&xs), uniform(&ys), uniform(&zs));
        let ab = w2(&a, &b).unwrap();
        prop_assert!((ab - w2(&b, &a).unwrap()).abs() <= 1e-9);
        prop_assert!(ab <= w2(&a, &c).unwrap() + w2(&c, &b).unwrap() + 1e-9);
    }

    /// Synchronous coupling bounds the distance between aligned laws.
    #[test]
    fn w2_synchronous_upper_bound(
        xs in prop::collection::vec(-2.0f64..2.0, 3..7),
        shifts in prop::collection::vec(-1.0f64..1.0, 7),
    ) {
        let n = xs.len();
        let w = vec![1.0 / n as f64; n];
        let shifted: Vec<f64> = xs.iter().zip(&shifts).map(|(x, s)| x + s).collect();
        let a = DiscreteMeasure::new(1, xs.clone(), w.clone()).unwrap();
        let b = DiscreteMeasure::new(1, shifted, w.clone()).unwrap();
        let rhs: f64 = (0..n).map(|i| w[i] * shifts[i] * shifts[i]).sum::<f64>().sqrt();
        prop_assert!(w2(&a, &b).unwrap() <= rhs + 1e-10);
    }

    /// Tower property: composing conditional expectations to the root
    /// reproduces the probability-weighted terminal mean.
    #[test]
    fn tower_property(values in prop::collection::vec(-5.0f64..5.0, 8)) {
        let tree = NoiseTree::build(3, 1.0, 1).unwrap();
        let mut level = LevelValues::per_node(1, values.clone());
        for l in (0..3).rev() {
            level = conditional_expectation(&tree, l, &level).unwrap();
        }
        let expected: f64 = values.iter().sum::<f64>() / 8.0;
        prop_assert!((level.get(0)[0] - expected).abs() <= 1e-12);
    }

    /// For the binary driver the martingale part reproduces each child
    /// exactly.
    #[test]
    fn representation_reconstructs_children(up in -5.0f64..5.0, down in -5.0f64..5.0) {
        let tree = NoiseTree::build(4, 1.0, 1).unwrap();
        let children = LevelValues::per_node(1, vec![up, down]);
        let mean = 0.5 * (up + down);
        let (z, residual) = martingale_representation(&tree, 0, &children).unwrap();
        prop_assert!(residual <= 1e-12);
        let sqrt_dt = tree.dt.sqrt();
        prop_assert!((mean + z.get(0)[0] * sqrt_dt - up).abs() <= 1e-12);
        prop_assert!((mean - z.get(0)[0] * sqrt_dt - down).abs() <= 1e-12);
    }

    /// The smoothstep stays in [0, 1] and is monotone.
    #[test]
    fn smoothstep_profile(n in 1.0f64..8.0, x in 0.0f64..10.0, dx in 0.0f64..1.0) {
        let s = smoothstep_cutoff(n, x);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(smoothstep_cutoff(n, x + dx) <= s + 1e-15);
    }
}

fn saturating_generator() -> GeneratorSpec {
    GeneratorSpec {
        f: Arc::new(|_, y: &[f64], _, _| {
            y.iter()
                .map(|&v| 0.4 * v * v.abs().min(5.0) / (1.0 + 0.05 * v.abs()))
                .collect()
        }),
        g: Arc::new(|_, y: &[f64]| vec![0.0; y.len()]),
        lipschitz_l: 0.0,
        lipschitz_k: 0.0,
        growth_alpha: 0.5,
        eta: Arc::new(|_| 40.0),
        nu: Arc::new(|_| 0.0),
        regime: Regime::LocalLipschitz,
        local_r: Some(Arc::new(|r: f64| 2.0 * 0.4 * r.min(5.0) + 0.4)),
        dim_y: 1,
        dim_w: 1,
    }
}

proptest! {
    /// Truncation never increases the magnitude of the generator.
    #[test]
    fn truncation_dominance(
        n in 1usize..6,
        y in -12.0f64..12.0,
        z in -12.0f64..12.0,
        atom in -12.0f64..12.0,
    ) {
        let spec = saturating_generator();
        let truncated = truncate(&spec, n).unwrap();
        let law = DiscreteMeasure::dirac(&[atom, 0.0]);
        let full = spec.eval_f(0.0, &[y], &[z], &law).unwrap();
        let cut = truncated.eval_f(0.0, &[y], &[z], &law).unwrap();
        prop_assert!(cut[0].abs() <= full[0].abs() + 1e-12);
    }

    /// Sampled difference quotients of the truncated generator stay below
    /// the product-rule constant: the local constant inside the support
    /// plus the smoothstep slope against the sup of |F| there.
    #[test]
    fn truncation_is_globally_lipschitz(
        n in 1usize..5,
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let spec = saturating_generator();
        let truncated = truncate(&spec, n).unwrap();
        let law = DiscreteMeasure::dirac(&[0.0, 0.0]);
        let fa = truncated.eval_f(0.0, &[a], &[0.0], &law).unwrap();
        let fb = truncated.eval_f(0.0, &[b], &[0.0], &law).unwrap();
        if (a - b).abs() > 1e-9 {
            let radius = (n + 1) as f64;
            let sup_f = 0.4 * radius * radius.min(5.0);
            let bound = spec.lipschitz_at(radius) + 1.5 * sup_f;
            let quotient = (fa[0] - fb[0]).abs() / (a - b).abs();
            prop_assert!(quotient <= bound + 1e-9, "quotient {quotient} > bound {bound}");
        }
    }
}
