//! Kernel EM estimate of the conditional event-time distribution at a few
//! covariate points, next to the unconditional self-consistency estimate.

use icqr::npmle::{EmOptions, KernelSpec, LocalNpmle};
use icqr::sim::{generate, ErrorLaw, Hetero, Scheme, SimScenario};
use icqr::turnbull::{turnbull, DEFAULT_MAX_ITER, DEFAULT_TOL};
use icqr::QuantileLevel;

fn main() -> icqr::Result<()> {
    let tau = QuantileLevel::new(0.5)?;
    let scenario = SimScenario::new(300, tau, ErrorLaw::Logistic, Hetero::M2, Scheme::Ic);
    let data = generate(&scenario)?;
    let spec = KernelSpec::auto(&data.dataset)?;
    println!("kernel: {:?}", spec.components);

    let local = LocalNpmle::new(&data.dataset, spec, EmOptions::default())?;
    let overall = turnbull(&data.dataset, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let times = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
    print!("{:<22}", "log time");
    for t in times {
        print!("{t:>7.1}");
    }
    println!();
    for x0 in [[1.0, -0.5, 0.0], [1.0, 0.0, 1.0], [1.0, 0.5, 1.0]] {
        let curve = local.curve(&x0)?;
        print!("{:<22}", format!("F(t | x1={}, x2={})", x0[1], x0[2]));
        for t in times {
            print!("{:>7.3}", curve.eval(t));
        }
        println!();
    }
    print!("{:<22}", "F(t) unconditional");
    for t in times {
        print!("{:>7.3}", overall.eval(t));
    }
    println!();
    Ok(())
}
