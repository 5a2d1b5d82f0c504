//! JSON-lines trajectory files: a header line followed by one line per event.

use std::io::{BufRead, Write};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{ParticleState, Size};

use super::{Event, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryHeader {
    pub initial: ParticleState,
    pub seed: u64,
    pub kernel: String,
}

#[derive(Deserialize)]
struct RawHeader {
    initial: serde_json::Map<String, serde_json::Value>,
    seed: u64,
    kernel: String,
}

#[derive(Deserialize)]
struct RawEvent {
    t: f64,
    l: Size,
    j: Size,
}

/// Writes the header and all events of `traj`. Initial sizes are written in
/// increasing numeric order.
pub fn write_trajectory_jsonl<W: Write>(mut w: W, traj: &Trajectory, seed: u64, kernel: &str) -> Result<()> {
    write!(w, "{{\"initial\":{{")?;
    for (k, (s, c)) in traj.initial.iter().enumerate() {
        if k > 0 {
            write!(w, ",")?;
        }
        write!(w, "\"{s}\":{c}")?;
    }
    writeln!(w, "}},\"seed\":{seed},\"kernel\":{}}}", serde_json::to_string(kernel)?)?;
    for e in &traj.events {
        writeln!(w, "{{\"t\":{},\"l\":{},\"j\":{}}}", fmt_f64(e.t), e.min_size, e.partner)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_f64(x: f64) -> String {
    // serde_json prints the shortest round-tripping representation
    serde_json::to_string(&x).expect("finite event time")
}

/// Reads a trajectory file back as its header and event list.
pub fn read_trajectory_jsonl<R: BufRead>(r: R) -> Result<(TrajectoryHeader, Vec<Event>)> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| Error::Parse {
        token: String::new(),
        reason: "empty trajectory file".into(),
    })??;
    let raw: RawHeader = serde_json::from_str(&first)?;
    let mut counts = Vec::with_capacity(raw.initial.len());
    for (k, v) in &raw.initial {
        let size: Size = k.parse().map_err(|_| Error::Parse {
            token: k.clone(),
            reason: "size key is not a positive integer".into(),
        })?;
        let count = v.as_u64().ok_or_else(|| Error::Parse {
            token: v.to_string(),
            reason: "count is not a non-negative integer".into(),
        })?;
        counts.push((size, count));
    }
    let header = TrajectoryHeader {
        initial: ParticleState::from_counts(counts)?,
        seed: raw.seed,
        kernel: raw.kernel,
    };
    let mut events = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: RawEvent = serde_json::from_str(&line)?;
        events.push(Event {
            t: e.t,
            partner: e.j,
            min_size: e.l,
        });
    }
    Ok((header, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Kernel;
    use crate::rng::{stream, StreamRole};
    use crate::ssa::{simulate, StopRule};

    #[test]
    fn round_trip() {
        let x0 = ParticleState::from_counts([(1, 12), (2, 3), (10, 1)]).unwrap();
        let k = Kernel::min_pow(1.0);
        let mut rng = stream(7, 0, StreamRole::Simulation);
        let tr = simulate(&x0, &k, StopRule::UntilSingleton, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_trajectory_jsonl(&mut buf, &tr, 7, k.name()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"initial\":{\"1\":12,\"2\":3,\"10\":1},\"seed\":7,\"kernel\":\"min-pow:1\"}\n"));
        assert_eq!(text.lines().count(), 1 + tr.events.len());

        let (h, events) = read_trajectory_jsonl(&buf[..]).unwrap();
        assert_eq!(h.initial, x0);
        assert_eq!(h.seed, 7);
        assert_eq!(events, tr.events);
    }

    #[test]
    fn rejects_bad_header() {
        let e = read_trajectory_jsonl(&b"{\"initial\":{\"x\":1},\"seed\":1,\"kernel\":\"a\"}\n"[..]);
        assert!(matches!(e, Err(Error::Parse { .. })));
        assert!(read_trajectory_jsonl(&b""[..]).is_err());
    }
}
