//! How censored subjects are split into weighted pseudo-rows, and a fit that
//! plugs in the true conditional distribution instead of estimating it.

use std::sync::Arc;

use icqr::pipeline::{fit, EstimatorKind, EstimatorSpec};
use icqr::sim::{generate, ErrorLaw, Hetero, Scheme, SimScenario, TrueError};
use icqr::weighting::{is_order_indeterminate, local_weight, FnCdf};
use icqr::{CensoringClass, QuantileLevel};

fn main() -> icqr::Result<()> {
    let tau = QuantileLevel::new(0.5)?;
    println!("F(L)  F(R)  class          w      indeterminate");
    for (fl, fr, class) in [
        (0.6, 0.9, CensoringClass::Interval),
        (0.1, 0.3, CensoringClass::Interval),
        (0.2, 0.8, CensoringClass::Interval),
        (0.0, 0.8, CensoringClass::LeftCensored),
        (0.3, 1.0, CensoringClass::RightCensored),
    ] {
        let w = local_weight(fl, fr, tau, class)?.value();
        let ind = is_order_indeterminate(fl, fr, tau, class);
        println!("{fl:<5} {fr:<5} {:<14} {w:<6.3} {ind}", format!("{class:?}"));
    }

    // Oracle version: the data-generating distribution supplies F(t | x).
    let scenario = SimScenario::new(400, tau, ErrorLaw::ExtremeValue, Hetero::M1, Scheme::Pic);
    let law = TrueError::standard(ErrorLaw::ExtremeValue);
    let shift = law.quantile(tau.value())?;
    let beta = scenario.true_beta();
    let truth = FnCdf(move |t: f64, x: &[f64]| {
        let mean: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let z = (t - mean) / Hetero::M1.sigma(x[1]) + shift - law.loc;
        1.0 - (-z.exp()).exp()
    });
    let data = generate(&scenario)?;
    let spec = EstimatorSpec::new(EstimatorKind::IcqrPlugin(Arc::new(truth)), tau);
    let oracle = fit(&data.dataset, &spec)?;
    let kernel = fit(&data.dataset, &EstimatorSpec::new(EstimatorKind::IcqrKernel, tau))?;
    println!("\ntruth  {:?}", scenario.true_beta());
    println!("oracle {:.3?}", oracle.beta);
    println!("kernel {:.3?}", kernel.beta);
    Ok(())
}
