// Drift and local variance of the rescaled process, checked against an
// ensemble of short exact runs. With a power-of-two mass and an integer
// kernel every drift term is a dyadic rational, so mass neutrality holds
// without rounding.

use mindriven::ssa::{drift, generator_consistency, local_variance};
use mindriven::{Kernel, ParticleState};

pub fn run() -> mindriven::Result<()> {
    let k = Kernel::constant(1.0);
    let x0 = ParticleState::from_counts([(1, 80), (2, 16), (4, 4)])?;
    let n = x0.total_mass();
    let xi = x0.rescaled(n as f64);
    let b = drift(&xi, &k, n)?;
    let a = local_variance(&xi, &k, n)?;
    let mass: f64 = b.iter().map(|(j, v)| *j as f64 * v).sum();
    println!("drift {b:?}");
    println!("sum j b_j = {mass:e}");
    println!("local variance {a:?}");

    let rep = generator_consistency(&x0, &k, 1e-3, 20_000, 11)?;
    println!("lambda h = {:.3}, max |z| = {:.2}", rep.load, rep.max_abs_z);
    Ok(())
}

fn main() {
    run().unwrap();
}
