// Shared-randomness coupling for `K = min(i, j)`: a state whose sorted sizes
// dominate another's finishes first, and a rescaled start changes only the
// clock.

use mindriven::rng::{stream, StreamRole};
use mindriven::ssa::{coupled_simulate, scaling_coupling};
use mindriven::{ParticleState, Phi};

pub fn run() -> mindriven::Result<()> {
    let phi = Phi::Power(1.0);
    let y0 = ParticleState::monodisperse(1, 12)?;
    let x0 = ParticleState::from_counts([(1, 6), (2, 3), (3, 2), (5, 1)])?;
    let mut ordered = 0;
    for r in 0..200 {
        let run = coupled_simulate(&x0, &y0, &phi, &mut stream(3, r, StreamRole::Coupling))?;
        ordered += (run.x.t_last <= run.y.t_last) as usize;
    }
    println!("T(x0) <= T(y0) in {ordered} of 200 coupled runs");

    let mut rng = stream(3, 0, StreamRole::Coupling);
    for i in [2, 5, 10] {
        let (ti, t1) = scaling_coupling(100, i, &phi, &mut rng)?;
        println!("i = {i:>2}: T_i phi(i) = {:.12}, T_1 phi(1) = {:.12}", ti * i as f64, t1);
    }
    Ok(())
}

fn main() {
    run().unwrap();
}
