//! Coefficient paths over a grid of quantile levels. The conditional
//! distributions are estimated once and reused at every level.

use icqr::io::parse_tau_grid;
use icqr::pipeline::{quantile_process, EstimatorKind, EstimatorSpec};
use icqr::sim::{generate, ErrorLaw, Hetero, Scheme, SimScenario};
use icqr::QuantileLevel;

fn main() -> icqr::Result<()> {
    let scenario = SimScenario::new(
        250,
        QuantileLevel::new(0.5)?,
        ErrorLaw::ChiSquared3,
        Hetero::M2,
        Scheme::Pic,
    );
    let data = generate(&scenario)?;
    let taus = parse_tau_grid("0.1:0.9:0.1")?;
    let spec = EstimatorSpec::new(EstimatorKind::IcqrKernel, taus[0]);
    println!("{:>5} {:>8} {:>8} {:>8}", "tau", "beta0", "beta1", "beta2");
    for (tau, fit) in taus.iter().zip(quantile_process(&data.dataset, &spec, &taus)?) {
        match fit {
            Ok(f) => println!(
                "{:>5.1} {:>8.3} {:>8.3} {:>8.3}",
                tau.value(),
                f.beta[0],
                f.beta[1],
                f.beta[2]
            ),
            Err(e) => println!("{:>5.1} failed: {e}", tau.value()),
        }
    }
    Ok(())
}
