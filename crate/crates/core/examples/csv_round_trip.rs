//! Writes a simulated dataset in the CSV layout the command-line tool reads,
//! reads it back, and prints the JSON the `fit` subcommand would produce.
//!
//! `cargo run --example csv_round_trip -- data.csv` keeps the file.

use icqr::inference::CiKind;
use icqr::io::commands::{run_fit, to_json};
use icqr::io::{read_dataset, write_dataset, CsvData, EstimatorName, FitOptions};
use icqr::pipeline::KernelChoice;
use icqr::sim::{generate, ErrorLaw, Hetero, Scheme, SimScenario};
use icqr::QuantileLevel;

fn main() -> icqr::Result<()> {
    let scenario = SimScenario::new(
        120,
        QuantileLevel::new(0.5)?,
        ErrorLaw::ExtremeValue,
        Hetero::M1,
        Scheme::Pic,
    );
    let data = CsvData {
        dataset: generate(&scenario)?.dataset,
        covariate_names: vec!["x1".into(), "x2".into()],
    };
    let mut buf = Vec::new();
    write_dataset(&mut buf, &data)?;
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, &buf)?;
        eprintln!("wrote {path}");
    }
    let back = read_dataset(buf.as_slice(), false)?;
    assert_eq!(back, data, "round trip changed the data");
    eprintln!("{} rows survived the round trip", back.dataset.len());

    let opts = FitOptions {
        tau: 0.5,
        estimator: EstimatorName::Ks,
        bandwidth: KernelChoice::Auto,
        bootstrap: 20,
        seed: 1,
        ci_kind: CiKind::Percentile,
        ci_level: 0.95,
    };
    print!("{}", to_json(&run_fit(&back, &opts)?)?);
    Ok(())
}
