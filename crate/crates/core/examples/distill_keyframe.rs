//! One server-side distillation: a barely trained student learns a key
//! frame's label, and the trainable suffix becomes the update message.

use shadowtutor::distill::{train_student, AlgoParams};
use shadowtutor::model::{pretrain_student, ArchDescriptor, StudentModel};
use shadowtutor::protocol::Message;
use shadowtutor::videogen::{generate, scene_corpus, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut student = StudentModel::build(ArchDescriptor::desk_student(4), 7)?;
    pretrain_student(&mut student, &scene_corpus(32, 32, 4, 8, 1)?, 1, 0.01, 3)?;

    let cfg = SceneConfig { height: 32, width: 32, seed: 3, ..SceneConfig::preset("moving-street").expect("preset") };
    let stream = generate(&cfg, 1)?;
    let params = AlgoParams { max_updates: 20, ..AlgoParams::default() };
    let r = train_student(student, &stream.frames[0], &stream.labels[0], &params)?;
    println!("initial mIoU {:.3}", r.initial_metric);
    for (i, m) in r.step_metrics.iter().enumerate() {
        println!("step {:2}: {m:.3}", i + 1);
    }
    println!("best {:.3} after {} steps", r.best_metric, r.steps_taken);

    let update = Message::StudentUpdate { metric: r.best_metric as f32, delta: r.student.extract_diff() };
    println!(
        "update: {} bytes on the wire for {} of {} parameters",
        update.encoded_len(),
        r.student.trainable_param_count(),
        r.student.total_param_count()
    );
    Ok(())
}
