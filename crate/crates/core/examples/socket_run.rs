//! The same scenario over a localhost TCP connection and on the virtual
//! clock; the bytes exchanged are identical.

use std::sync::Arc;

use shadowtutor::cli::{build_scenario, load_stream, pretrained_student, ExperimentConfig};
use shadowtutor::netsim::{run_sim, run_socket};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    cfg.set("scene.preset", "fixed-street")?;
    cfg.set("scene.frames", "300")?;
    let (student, _) = pretrained_student(&cfg)?;
    let scenario = build_scenario(&cfg, Arc::new(load_stream(&cfg)?), student)?;

    let sock = run_socket(&scenario, None)?;
    let sim = run_sim(&scenario)?;
    println!(
        "socket: {} frames in {:.3} s wall time, {} key frames, {} bytes",
        sock.stats.n,
        sock.stats.time,
        sock.stats.k,
        sock.stats.bytes_up + sock.stats.bytes_down
    );
    println!("sim:    {} key frames, {:.3} s simulated", sim.stats.k, sim.stats.time);
    println!("transcripts identical: {}", sock.transcript == sim.transcript);
    Ok(())
}
