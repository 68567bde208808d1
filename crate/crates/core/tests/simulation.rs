use icqr::sim::{
    calibrate_p0, censoring_sweep, error_quantile, generate, run_study, ErrorLaw, Estimator, Hetero, Scheme,
    SimScenario, StudyDesign, TrueError, CALIBRATION_N,
};
use icqr::pipeline::KernelChoice;
use icqr::QuantileLevel;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn tau(v: f64) -> QuantileLevel {
    QuantileLevel::new(v).unwrap()
}

#[test]
fn chi3_quantile_inverts_the_gamma_distribution_function() {
    let oracle = ChiSquared::new(3.0).unwrap();
    let law = TrueError::standard(ErrorLaw::ChiSquared3);
    for k in 1..200 {
        let u = k as f64 / 200.0;
        let q = error_quantile(&law, u).unwrap();
        assert!((oracle.cdf(q) - u).abs() <= 1e-10, "u = {u}: F({q}) = {}", oracle.cdf(q));
    }
    let median = error_quantile(&law, 0.5).unwrap();
    assert!((median - 2.3660).abs() < 5e-5, "{median}");
}

#[test]
fn closed_form_quantiles() {
    let logistic = TrueError::standard(ErrorLaw::Logistic);
    assert!((error_quantile(&logistic, 0.5).unwrap() + 2.0).abs() < 1e-15);
    let ev = TrueError::standard(ErrorLaw::ExtremeValue);
    let u = 1.0 - (-1.0f64).exp();
    assert!((error_quantile(&ev, u).unwrap() + 1.0).abs() < 1e-12);
    for law in [logistic, ev] {
        assert!(error_quantile(&law, 0.0).is_err() && error_quantile(&law, 1.0).is_err());
    }
}

proptest! {
    #[test]
    fn quantiles_are_strictly_increasing(a in 1e-6f64..0.999, gap in 1e-4f64..0.5) {
        let b = (a + gap).min(1.0 - 1e-7);
        prop_assume!(b > a);
        for law in [ErrorLaw::ExtremeValue, ErrorLaw::Logistic, ErrorLaw::ChiSquared3] {
            let law = TrueError::standard(law);
            prop_assert!(error_quantile(&law, a).unwrap() < error_quantile(&law, b).unwrap());
        }
    }
}

#[test]
fn calibrated_design_censors_about_half_of_a_large_sample() {
    for error in [ErrorLaw::ExtremeValue, ErrorLaw::Logistic, ErrorLaw::ChiSquared3] {
        let mut s = SimScenario::new(5000, tau(0.5), error, Hetero::M2, Scheme::Pic);
        s.p0 = calibrate_p0(&s, 0.5, CALIBRATION_N).unwrap();
        s.seed = 77;
        let share = generate(&s).unwrap().dataset.censored_fraction();
        assert!((share - 0.5).abs() <= 0.05, "{error:?}: p0 = {}, censored {share}", s.p0);
    }
}

#[test]
fn unreachable_censoring_rate_is_an_error() {
    let s = SimScenario::new(100, tau(0.5), ErrorLaw::ExtremeValue, Hetero::M1, Scheme::Pic);
    assert!(calibrate_p0(&s, 0.001, 5000).is_err());
    let ic = SimScenario { scheme: Scheme::Ic, ..s };
    assert!(calibrate_p0(&ic, 0.5, 5000).is_err());
}

#[test]
fn true_conditional_quantile_is_linear() {
    // Share of T below 1.5 + x1 + x2 in each x1 bin should be tau.
    for (error, level) in [(ErrorLaw::ChiSquared3, 0.3), (ErrorLaw::ExtremeValue, 0.7)] {
        let mut s = SimScenario::new(50_000, tau(level), error, Hetero::M2, Scheme::Pic);
        s.seed = 5;
        let sim = generate(&s).unwrap();
        let beta = s.true_beta();
        assert_eq!(beta, vec![1.5, 1.0, 1.0]);
        let mut below = [0usize; 8];
        let mut total = [0usize; 8];
        for (o, &t) in sim.dataset.iter().zip(&sim.true_times) {
            let x = &o.covariates;
            let bin = (((x[1] + 1.0) / 2.0 * 8.0) as usize).min(7);
            total[bin] += 1;
            if t <= beta[0] + beta[1] * x[1] + beta[2] * x[2] {
                below[bin] += 1;
            }
        }
        for b in 0..8 {
            let share = below[b] as f64 / total[b] as f64;
            let se = (level * (1.0 - level) / total[b] as f64).sqrt();
            assert!((share - level).abs() <= 3.0 * se, "{error:?} bin {b}: {share} vs {level}");
        }
    }
}

#[test]
fn generation_is_seeded() {
    let s = SimScenario::new(300, tau(0.5), ErrorLaw::Logistic, Hetero::M1, Scheme::Pic);
    assert_eq!(generate(&s).unwrap().dataset, generate(&s).unwrap().dataset);
    let other = SimScenario { seed: 1, ..s.clone() };
    assert_ne!(generate(&s).unwrap().true_times, generate(&other).unwrap().true_times);
}

fn small_design(n: usize, replicates: usize) -> StudyDesign {
    let mut s = SimScenario::new(n, tau(0.5), ErrorLaw::ExtremeValue, Hetero::M2, Scheme::Pic);
    s.seed = 13;
    let mut d = StudyDesign::new(s, vec![Estimator::Ks, Estimator::Zfd], replicates);
    d.kernel = KernelChoice::Bandwidth(0.3);
    d
}

#[test]
fn censoring_sweep_has_one_row_per_rate_and_estimator() {
    let rows = censoring_sweep(&small_design(40, 3), &[0.5, 0.7, 1.0]).unwrap();
    assert_eq!(rows.len(), 6);
    let settings: Vec<f64> = rows.iter().map(|r| r.setting).collect();
    assert_eq!(settings, [0.5, 0.5, 0.7, 0.7, 1.0, 1.0]);
    for r in &rows {
        assert!(r.log_mse.is_finite());
        assert!((r.log_mse - (100.0 * r.mse_total).ln()).abs() < 1e-12);
    }
    assert!(censoring_sweep(&small_design(40, 3), &[0.001]).is_err());
}

#[test]
fn full_censoring_means_no_exact_rows() {
    let mut d = small_design(60, 4);
    d.scenario.scheme = Scheme::Ic;
    let report = run_study(&d).unwrap();
    assert_eq!(report.censored_fraction, 1.0);
    // With nothing observed exactly, every subject's order is indeterminate
    // somewhere, so the two rules must disagree.
    assert_ne!(report.metrics[0].estimates, report.metrics[1].estimates);
}

#[test]
fn study_is_reproducible_and_reference_has_unit_efficiency() {
    let d = small_design(50, 6);
    let a = run_study(&d).unwrap();
    assert_eq!(a, run_study(&d).unwrap());
    assert_eq!(a.replicates, 6);
    assert!(a.metrics[0].re.iter().all(|&r| r == 1.0));
    let zfd = &a.metrics[1];
    for (k, c) in zfd.coefficients.iter().enumerate() {
        assert!(c.mse + 1e-12 >= c.bias * c.bias);
        assert!((zfd.re[k] - a.metrics[0].coefficients[k].mse / c.mse).abs() < 1e-12);
    }
}

#[test]
#[ignore = "runs 400 kernel fits; about a minute"]
fn light_censoring_does_not_hurt_the_kernel_estimator() {
    let mut d = small_design(200, 200);
    d.estimators = vec![Estimator::Ks];
    d.kernel = KernelChoice::Auto;
    let rows = censoring_sweep(&d, &[0.3, 1.0]).unwrap();
    assert!(rows[0].mse_total <= 1.1 * rows[1].mse_total, "{rows:?}");
}
