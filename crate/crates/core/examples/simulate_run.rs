//! A ShadowTutor run and the naive baseline on the virtual clock, with the
//! reference 720p latencies.

use std::sync::Arc;

use shadowtutor::analytics::{aggregate, Bounds, MEGA};
use shadowtutor::cli::{pretrained_student, ExperimentConfig};
use shadowtutor::distill::AlgoParams;
use shadowtutor::model::{OracleTeacher, Teacher};
use shadowtutor::netsim::{run_sim, ChannelConfig, ComputeLatency, Scenario};
use shadowtutor::protocol::Strategy;
use shadowtutor::videogen::{generate, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (student, _) = pretrained_student(&ExperimentConfig::default())?;
    let stream = Arc::new(generate(&SceneConfig::preset("moving-people").expect("preset"), 1000)?);
    let teacher = Teacher::Oracle(OracleTeacher::new(Arc::new(stream.labels.clone()), stream.classes, 0.0, 0));
    let mut scenario = Scenario {
        name: "moving-people".into(),
        stream,
        student,
        teacher,
        params: AlgoParams::default(),
        strategy: Strategy::ShadowTutor,
        channel: ChannelConfig::default(),
        latency: ComputeLatency::reference(),
    };
    for strategy in [Strategy::ShadowTutor, Strategy::Naive] {
        scenario.strategy = strategy;
        let out = run_sim(&scenario)?;
        let r = aggregate(&out.stats, Some(Bounds::of(&scenario.profile(), &scenario.params)))?;
        println!(
            "{strategy:12} {:.3} FPS, key frames {:.2}%, {:.3} Mbps, mIoU {:.4}, {} steps",
            r.fps, r.key_ratio_pct, r.traffic_mbps, r.miou_mean, r.d
        );
        if strategy == Strategy::ShadowTutor {
            let b = r.bounds.expect("given");
            println!("  bounds: {:.3}..{:.3} FPS", b.throughput_fps.0, b.throughput_fps.1);
            println!("  traffic bounds: {:.4}..{:.4} Mbps", b.traffic_bps.0 / MEGA, b.traffic_bps.1 / MEGA);
            println!("  strides: {:?}", &r.stride_trace[..r.stride_trace.len().min(12)]);
        }
    }
    Ok(())
}
