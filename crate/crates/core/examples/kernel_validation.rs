// Kernel presets and their declared bounds.

use mindriven::model::validate_kernel;
use mindriven::Kernel;

pub fn run() -> mindriven::Result<()> {
    for preset in ["const:2", "min-pow:1", "min-log:1", "min-logpow:1,0.5"] {
        let k = Kernel::from_preset(preset)?;
        let rep = validate_kernel(&k, 200)?;
        println!(
            "{preset:>16}: K(3,7) = {:.4}, violations {}, kappa_inf {:?}",
            k.eval(3, 7),
            rep.violation_count,
            rep.kappa_infinity
        );
    }
    Ok(())
}

fn main() {
    run().unwrap();
}
