//! A small Monte Carlo comparison of the kernel-weighted and zero-weighting
//! estimators, with the exact-observation probability calibrated to a 60%
//! censoring rate. Pass a replicate count to change the size (default 20).

use icqr::io::commands::write_study_table;
use icqr::sim::{calibrate_p0, run_study, Estimator, ErrorLaw, Hetero, Scheme, SimScenario, StudyDesign, CALIBRATION_N};
use icqr::QuantileLevel;

fn main() -> icqr::Result<()> {
    let replicates = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(20);
    let mut scenario = SimScenario::new(
        200,
        QuantileLevel::new(0.5)?,
        ErrorLaw::ExtremeValue,
        Hetero::M2,
        Scheme::Pic,
    );
    scenario.seed = 2024;
    scenario.p0 = calibrate_p0(&scenario, 0.6, CALIBRATION_N)?;
    eprintln!("calibrated p0 = {:.4}", scenario.p0);

    let mut design = StudyDesign::new(scenario, vec![Estimator::Ks, Estimator::Zfd], replicates);
    design.n_bootstrap = 20;
    let report = run_study(&design)?;
    write_study_table(std::io::stdout().lock(), &report)?;
    Ok(())
}
