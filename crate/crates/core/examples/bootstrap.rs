//! Perturbation bootstrap standard errors and intervals at the 30th percentile.

use icqr::inference::{bootstrap, BootstrapConfig, CiKind};
use icqr::pipeline::{fit, EstimatorKind, EstimatorSpec};
use icqr::sim::{generate, ErrorLaw, Hetero, Scheme, SimScenario};
use icqr::QuantileLevel;

fn main() -> icqr::Result<()> {
    let tau = QuantileLevel::new(0.3)?;
    let scenario = SimScenario::new(200, tau, ErrorLaw::ExtremeValue, Hetero::M1, Scheme::Pic);
    let data = generate(&scenario)?;
    let spec = EstimatorSpec::new(EstimatorKind::IcqrKernel, tau);
    let point = fit(&data.dataset, &spec)?;

    for ci_kind in [CiKind::Percentile, CiKind::Wald] {
        let config = BootstrapConfig {
            n_replicates: 50,
            seed: 11,
            ci_kind,
            ..BootstrapConfig::default()
        };
        let res = bootstrap(&data.dataset, tau, &spec, &config)?;
        println!("{ci_kind:?} intervals, {} failed replicates", res.failed);
        for k in 0..point.beta.len() {
            println!(
                "  beta{k} = {:>7.3}  se {:.3}  [{:>7.3}, {:>7.3}]  truth {}",
                res.beta_hat[k], res.se[k], res.ci_lower[k], res.ci_upper[k], scenario.beta0[k]
            );
        }
    }
    Ok(())
}
