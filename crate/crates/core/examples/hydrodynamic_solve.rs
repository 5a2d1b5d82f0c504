// Piecewise hydrodynamic solve from monomers. For `K = 1` the first segment
// is known in closed form: `x_1 = (1 - t) e^-t` and `t_1 = 1`.

use mindriven::ode::{integrate_piecewise, PiecewiseStop, SolverControls};
use mindriven::Kernel;

pub fn run() -> mindriven::Result<()> {
    let controls = SolverControls {
        cap: 256,
        ..Default::default()
    };
    let k = Kernel::constant(1.0);
    let sol = integrate_piecewise(&[1.0], &k, PiecewiseStop::min_size(4), &controls)?;
    for (i, (t, s)) in sol.switch_times.iter().zip(&sol.durations).enumerate() {
        println!("t_{} = {t:.8}  (s = {s:.6})", i + 1);
    }
    let mut worst: f64 = 0.0;
    for n in 0..=100 {
        let t = 0.01 * n as f64 * sol.switch_times[0];
        worst = worst.max((sol.value_at(t, 1)? - (1.0 - t) * (-t).exp()).abs());
    }
    println!("max |x_1 - (1-t)e^-t| on the first segment: {worst:.2e}");

    let k = Kernel::from_preset("min-pow:1")?;
    let sol = integrate_piecewise(&[1.0], &k, PiecewiseStop::min_size(20), &controls)?;
    println!(
        "min-pow:1: t_20 = {:.5}, Aitken guess for t_inf (heuristic) = {:?}",
        sol.switch_times[19],
        sol.t_inf_extrapolation()
    );
    Ok(())
}

fn main() {
    run().unwrap();
}
