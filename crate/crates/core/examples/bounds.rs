//! Closed-form latency, traffic and throughput bounds for the reference
//! 720p profile, and the general form for one hypothetical run.

use shadowtutor::analytics::{t_c_bounds, throughput_general, traffic_general, Bounds, LatencyProfile, MEGA};
use shadowtutor::distill::AlgoParams;

fn main() {
    let p = LatencyProfile::reference();
    let a = AlgoParams::default();
    let b = Bounds::of(&p, &a);
    println!("t_c        [{:.3}, {:.3}] s", b.t_c.0, b.t_c.1);
    println!("traffic    [{:.3}, {:.3}] Mbps", b.traffic_bps.0 / MEGA, b.traffic_bps.1 / MEGA);
    println!("throughput [{:.3}, {:.3}] FPS", b.throughput_fps.0, b.throughput_fps.1);

    // 5000 frames, 100 key frames, 383 distillation steps, no blocking
    let (n, k, d) = (5000, 100, 383);
    let t_c = t_c_bounds(&p, &a).0;
    println!(
        "n={n} k={k} d={d}: {:.2} FPS, {:.2} Mbps",
        throughput_general(n, k, d, t_c, &p, &a).unwrap(),
        traffic_general(n, k, d, t_c, &p, &a).unwrap() / MEGA
    );
}
