// Exact simulation of 200 monomers under `K = min(i, j)` until one particle
// is left, exported as JSONL and read back.

use std::io::Cursor;

use mindriven::rng::{stream, StreamRole};
use mindriven::ssa::{read_trajectory_jsonl, simulate, write_trajectory_jsonl, StopRule};
use mindriven::{Kernel, ParticleState};

pub fn run() -> mindriven::Result<()> {
    let k = Kernel::from_preset("min-pow:1")?;
    let x0 = ParticleState::monodisperse(1, 200)?;
    let mut rng = stream(7, 0, StreamRole::Simulation);
    let traj = simulate(&x0, &k, StopRule::UntilSingleton, &mut rng)?;

    println!("events: {}", traj.events.len());
    println!("T (last coalescence): {:.4}", traj.t_last.unwrap_or(0.0));
    for i in 1..=4 {
        if let Some(t) = traj.exhaustion_time(i) {
            println!("T_{i} = {t:.4}");
        }
    }

    let mut buf = Vec::new();
    write_trajectory_jsonl(&mut buf, &traj, 7, k.name())?;
    let (header, events) = read_trajectory_jsonl(Cursor::new(&buf))?;
    assert_eq!(events, traj.events);
    println!("round trip ok: header seed {}, {} lines", header.seed, buf.split(|&b| b == b'\n').count() - 1);
    Ok(())
}

fn main() {
    run().unwrap();
}
