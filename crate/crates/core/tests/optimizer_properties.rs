use fedbayes_core::optimizer::{minimize, OptimizerConfig, Termination};
use fedbayes_core::Result;
use proptest::prelude::*;

/// `f(x) = 1/2 sum_i d_i (x_i - c_i)^2`.
fn diag_quadratic(d: Vec<f64>, c: Vec<f64>) -> impl FnMut(&[f64], &mut [f64]) -> Result<f64> {
    move |x, g| {
        let mut f = 0.0;
        for i in 0..x.len() {
            let r = x[i] - c[i];
            g[i] = d[i] * r;
            f += 0.5 * d[i] * r * r;
        }
        Ok(f)
    }
}

/// Smooth, convex, non-quadratic: log-sum-exp plus a small ridge.
fn soft_max_objective(x: &[f64], g: &mut [f64]) -> Result<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|v| (v - m).exp()).sum();
    for (gi, xi) in g.iter_mut().zip(x) {
        *gi = (xi - m).exp() / z + 0.1 * xi;
    }
    Ok(m + z.ln() + 0.05 * x.iter().map(|v| v * v).sum::<f64>())
}

fn problem() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|n| {
        (
            prop::collection::vec(0.1f64..50.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn trace_never_increases_and_cap_holds((d, c, x0) in problem(), cap in 0usize..30) {
        let mut f = diag_quadratic(d, c);
        let r = minimize(&mut f, &x0, &OptimizerConfig::with_max_iterations(cap)).unwrap();
        prop_assert!(r.iterations_used <= cap);
        prop_assert_eq!(r.objective_trace.len(), r.iterations_used + 1);
        prop_assert!(r.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        if r.termination == Termination::IterationCap {
            prop_assert_eq!(r.iterations_used, cap);
        }
    }

    #[test]
    fn every_accepted_step_decreases_sufficiently(x0 in prop::collection::vec(-5.0f64..5.0, 1..10)) {
        let mut f = soft_max_objective;
        let r = minimize(&mut f, &x0, &OptimizerConfig::with_max_iterations(50)).unwrap();
        prop_assert!(r.objective_trace.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(*r.objective_trace.last().unwrap() <= r.objective_trace[0]);
    }

    #[test]
    fn warm_start_is_never_worse((d, c, x0) in problem(), a in 1usize..6, b in 1usize..6) {
        let mut f = diag_quadratic(d, c);
        let first = minimize(&mut f, &x0, &OptimizerConfig::with_max_iterations(a)).unwrap();
        let second = minimize(&mut f, &first.final_point, &OptimizerConfig::with_max_iterations(b)).unwrap();
        prop_assert!(second.final_value <= first.final_value);
    }

    #[test]
    fn deterministic((d, c, x0) in problem()) {
        let mut f = diag_quadratic(d.clone(), c.clone());
        let mut g = diag_quadratic(d, c);
        let cfg = OptimizerConfig::with_max_iterations(7);
        prop_assert_eq!(minimize(&mut f, &x0, &cfg).unwrap(), minimize(&mut g, &x0, &cfg).unwrap());
    }
}

#[test]
fn ill_conditioned_quadratic_converges() {
    let d: Vec<f64> = (0..20).map(|i| 10f64.powf(i as f64 / 5.0)).collect();
    let c: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
    let mut f = diag_quadratic(d, c.clone());
    // condition number ~6e3; a reference L-BFGS-B needs ~400 iterations here too
    let cfg = OptimizerConfig {
        max_iterations: 2000,
        grad_tolerance: 1e-9,
        ..OptimizerConfig::default()
    };
    let r = minimize(&mut f, &[0.0; 20], &cfg).unwrap();
    assert_eq!(r.termination, Termination::GradientTolerance);
    for (x, t) in r.final_point.iter().zip(&c) {
        assert!((x - t).abs() < 1e-6);
    }
}

#[test]
fn memory_of_one_still_converges() {
    let mut f = diag_quadratic(vec![1.0, 9.0, 4.0], vec![1.0, 2.0, 3.0]);
    let cfg = OptimizerConfig {
        memory: 1,
        max_iterations: 200,
        grad_tolerance: 1e-10,
        ..OptimizerConfig::default()
    };
    let r = minimize(&mut f, &[0.0; 3], &cfg).unwrap();
    assert!(r.final_value < 1e-18);
}
