// Expected time to the last coalescence from n monomers. It stays bounded
// in n exactly when `sum 1/(i phi(i))` converges.

use mindriven::lifespan::{dichotomy_scan, lower_bound_check};
use mindriven::{Kernel, Phi};

pub fn run() -> mindriven::Result<()> {
    let ladder: Vec<u64> = (3..=9).map(|e| 1 << e).collect();
    for preset in ["const:1", "min-pow:1"] {
        let rep = dichotomy_scan(&Kernel::from_preset(preset)?, &ladder, 300, 5)?;
        println!("{preset}: series {:?}, partial sum {:.4}", rep.classification, rep.series.last());
        for e in &rep.et_by_n {
            println!("  n = {:>4}: E T = {:.4} +- {:.4} (exact {:?})", e.n, e.mean, e.stderr, e.exact);
        }
        println!("  plateau {}, growing {}, consistent {}", rep.plateau, rep.growing, rep.consistent());
    }
    println!("lower bound n = 1024, phi = i^2: {:.4}", lower_bound_check(1024, &Phi::Power(2.0))?);
    Ok(())
}

fn main() {
    run().unwrap();
}
