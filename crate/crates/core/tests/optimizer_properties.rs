use exphedge::optimizer::{log_derivatives, log_objective, objective};
use exphedge::{minimize, ObjectiveData, OptimStatus, SolverOptions};
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (Vec<f64>, usize, Vec<f64>, Vec<f64>, f64)> {
    (2usize..20, 1usize..4).prop_flat_map(|(n, w)| {
        (
            prop::collection::vec(-1.0f64..1.0, n * w),
            Just(w),
            prop::collection::vec(-0.5f64..0.5, n),
            prop::collection::vec(-1.0f64..1.0, n),
            0.2f64..3.0,
        )
            .prop_map(|(mut f, w, inc, carry, g)| {
                f.iter_mut().step_by(w).for_each(|x| *x = 1.0);
                (f, w, inc, carry, g)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn midpoint_convexity(
        (f, w, inc, carry, g) in instance(),
        a in prop::collection::vec(-2.0f64..2.0, 3),
        b in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let data = ObjectiveData::new(&f, w, &inc, 1, &carry, g).unwrap();
        let (a, b) = (&a[..w], &b[..w]);
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let fa = objective(&data, a).unwrap().value;
        let fb = objective(&data, b).unwrap().value;
        let fm = objective(&data, &mid).unwrap().value;
        prop_assert!(fm <= 0.5 * (fa + fb) + 1e-12 * fa.max(fb), "{fm} > mean of {fa}, {fb}");
    }

    #[test]
    fn converged_results_carry_a_certificate((f, w, inc, carry, g) in instance()) {
        let data = ObjectiveData::new(&f, w, &inc, 1, &carry, g).unwrap();
        let opts = SolverOptions::default();
        let res = minimize(&data, &opts, None).unwrap();
        if res.status == OptimStatus::Converged {
            let grad = log_derivatives(&data, &res.coefficients).unwrap().gradient;
            prop_assert!(grad.norm() <= opts.tol_g);
            prop_assert!(res.objective_value > 0.0);
        }
    }

    #[test]
    fn rescaling_increments_rescales_the_optimum(
        inc in prop::collection::vec(-1.0f64..1.0, 4..12),
        s in 0.1f64..10.0,
    ) {
        prop_assume!(inc.iter().any(|x| *x > 0.05) && inc.iter().any(|x| *x < -0.05));
        let n = inc.len();
        let ones = vec![1.0; n];
        let carry = vec![0.0; n];
        let scaled: Vec<f64> = inc.iter().map(|x| x * s).collect();
        // An absolute gradient tolerance pins the argument only to tol/s², so
        // solve both problems well below the comparison band.
        let opts = SolverOptions { tol_g: 1e-13, ..Default::default() };
        let base = minimize(&ObjectiveData::new(&ones, 1, &inc, 1, &carry, 1.0).unwrap(), &opts, None).unwrap();
        let resc = minimize(&ObjectiveData::new(&ones, 1, &scaled, 1, &carry, 1.0).unwrap(), &opts, None).unwrap();
        prop_assert_eq!(base.status, OptimStatus::Converged);
        prop_assert_eq!(resc.status, OptimStatus::Converged);
        let want = base.coefficients[0] / s;
        prop_assert!((resc.coefficients[0] - want).abs() <= 1e-7 * (1.0 + want.abs()));
    }

    #[test]
    fn hessian_matches_differenced_gradient((f, w, inc, carry, g) in instance(), c in prop::collection::vec(-1.0f64..1.0, 3)) {
        let data = ObjectiveData::new(&f, w, &inc, 1, &carry, g).unwrap();
        let c = &c[..w];
        let d = log_derivatives(&data, c).unwrap();
        for u in 0..w {
            let h = 1e-5;
            let mut up = c.to_vec();
            let mut dn = c.to_vec();
            up[u] += h;
            dn[u] -= h;
            let gu = log_derivatives(&data, &up).unwrap().gradient;
            let gd = log_derivatives(&data, &dn).unwrap().gradient;
            for v in 0..w {
                let fd = (gu[v] - gd[v]) / (2.0 * h);
                prop_assert!((fd - d.hessian[(v, u)]).abs() <= 1e-6 * (1.0 + d.hessian.norm()));
            }
        }
    }
}

#[test]
fn large_carry_does_not_overflow() {
    let ones = [1.0; 3];
    let carry = [900.0, 901.0, 899.5];
    let data = ObjectiveData::new(&ones, 1, &[0.2, -0.1, 0.05], 1, &carry, 1.0).unwrap();
    let res = minimize(&data, &SolverOptions::default(), None).unwrap();
    assert_eq!(res.status, OptimStatus::Converged);
    assert!(res.log_objective.is_finite() && res.log_objective > 899.0);
    assert!(log_objective(&data, &res.coefficients).unwrap() <= log_objective(&data, &[0.0]).unwrap());
}
