//! Key-frame stride trajectories for a few metric sequences.

use shadowtutor::distill::AlgoParams;
use shadowtutor::scheduler::{next_stride, stride_ratio, Stride};

fn main() {
    let params = AlgoParams::default();
    for m in [0.0, 0.4, 0.8, 0.9, 1.0] {
        println!("metric {m:.1}: ratio {:.3}", stride_ratio(m, params.threshold));
    }
    let runs: [(&str, Vec<f64>); 3] = [
        ("perfect", vec![1.0; 6]),
        ("good", vec![0.95; 8]),
        ("scene cut", vec![1.0, 1.0, 1.0, 0.3, 0.5, 0.9, 0.95]),
    ];
    for (name, metrics) in runs {
        let mut s = Stride::initial(&params);
        let mut trace = vec![s.effective()];
        for m in metrics {
            s = next_stride(s, m, &params).expect("metric in [0, 1]");
            trace.push(s.effective());
        }
        println!("{name:10} {trace:?}");
    }
}
