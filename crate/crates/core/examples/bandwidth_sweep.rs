//! Throughput against bandwidth for ShadowTutor and the naive baseline on a
//! 64x64 profile fast enough that the network hides only above ~25 Mbps.

use shadowtutor::cli::{sweep_reports, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("scene.preset", "stationary"),
        ("scene.frames", "1000"),
        ("latency.t_si", "0.001"),
        ("latency.t_sd", "0.0001"),
        ("latency.t_ti", "0.001"),
    ] {
        cfg.set(k, v)?;
    }
    let reports = sweep_reports(&cfg)?;
    let (st, naive) = reports.split_at(cfg.sweep_mbps.len());
    println!("{:>6} {:>12} {:>10}", "Mbps", "shadowtutor", "naive");
    for ((mbps, a), b) in cfg.sweep_mbps.iter().zip(st).zip(naive) {
        println!("{mbps:>6} {:>12.1} {:>10.1}", a.fps, b.fps);
    }
    Ok(())
}
