// Does the minimal size of the hydrodynamic solution blow up in finite
// time? Logarithmic kernels grow too slowly; min-pow kernels do not.

use mindriven::lifespan::{blowup_classify, BlowupEvidence, LyapunovWeights};
use mindriven::ode::SolverControls;
use mindriven::Kernel;

pub fn run() -> mindriven::Result<()> {
    let controls = SolverControls {
        cap: 4096,
        dense_output: false,
        ..Default::default()
    };
    if let BlowupEvidence::GrowsUnbounded(e) = blowup_classify(&Kernel::min_log(1.0), &[1.0], 8, &controls, None)? {
        for c in &e.checks {
            println!("min-log: t_{} = {:.4} >= {:.4}", c.i, c.t_i, c.bound);
        }
    }
    let w = LyapunovWeights::power(1.0);
    if let BlowupEvidence::TInfFinite(e) = blowup_classify(&Kernel::min_pow(1.0), &[1.0], 30, &controls, Some(&w))? {
        let (i, s) = e.partial_sums.last().copied().unwrap_or_default();
        println!("min-pow:1: s_1 + ... + s_{i} = {s:.4} <= {:.4}", e.bound);
        println!("extrapolated t_inf (heuristic): {:?}", e.t_inf_extrapolation);
    }
    Ok(())
}

fn main() {
    run().unwrap();
}
