//! Pre-trains the desk student on a scene corpus and round-trips the
//! checkpoint.

use shadowtutor::model::{pretrain_student, ArchDescriptor, Checkpoint, StudentModel};
use shadowtutor::videogen::scene_corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = scene_corpus(64, 64, 4, 64, 1)?;
    let mut student = StudentModel::build(ArchDescriptor::desk_student(4), 7)?;
    println!(
        "{} parameters, {} trainable after block {}",
        student.total_param_count(),
        student.trainable_param_count(),
        student.freeze_boundary()
    );
    let (ckpt, report) = pretrain_student(&mut student, &corpus, 5, 0.01, 3)?;
    for (e, loss) in report.epoch_loss.iter().enumerate() {
        println!("epoch {e}: loss {loss:.4}");
    }
    println!("training mIoU {:.3} -> {:.3}", report.initial_miou, report.final_miou);

    let path = std::env::temp_dir().join("student.ckpt");
    ckpt.write_file(&path)?;
    let loaded = Checkpoint::read_file(&path)?.load()?;
    assert_eq!(loaded, student);
    println!("checkpoint {} ({} bytes)", path.display(), ckpt.bytes().len());
    Ok(())
}
