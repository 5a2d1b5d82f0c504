// Rescaled stochastic paths against the hydrodynamic solution for growing
// total mass N.

use mindriven::hydro::{convergence_experiment, ConvergenceConfig};
use mindriven::ode::SolverControls;
use mindriven::Kernel;

pub fn run() -> mindriven::Result<()> {
    let k = Kernel::constant(1.0);
    let cfg = ConvergenceConfig::new(0.8, vec![100, 1_000, 10_000], 8, 1);
    let controls = SolverControls {
        cap: 256,
        ..Default::default()
    };
    let r = convergence_experiment(&[1.0], &k, &cfg, &controls)?;
    for s in &r.summaries {
        println!("N = {:>6}: median sup error {:.4} [{:.4}, {:.4}]", s.n, s.median_error, s.q25, s.q75);
    }
    println!("slope of ln(error) in ln N: {:.3}", r.fitted_slope);
    for d in r.deviations_for(1) {
        println!("N = {:>6}: median |T_1 - t_1| = {:.4}", d.n, d.median_abs);
    }
    Ok(())
}

fn main() {
    run().unwrap();
}
