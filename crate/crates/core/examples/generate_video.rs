//! Renders a short clip for every scene preset and writes one to disk.

use shadowtutor::videogen::{generate, mean_label_change, read_stream, write_stream, SceneConfig};

const PRESETS: [&str; 8] = [
    "stationary",
    "fixed-animals",
    "fixed-people",
    "fixed-street",
    "moving-animals",
    "moving-people",
    "moving-street",
    "egocentric-people",
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in PRESETS {
        let cfg = SceneConfig::preset(name).expect("known preset");
        let stream = generate(&cfg, 120)?;
        let (h, w) = stream.dims();
        println!("{name:18} {h}x{w} {} fps, {:.4} of labels change per frame", stream.fps, mean_label_change(&stream));
    }

    let stream = generate(&SceneConfig::preset("moving-street").expect("known preset"), 60)?;
    let path = std::env::temp_dir().join("moving-street.svid");
    write_stream(&stream, std::fs::File::create(&path)?)?;
    let back = read_stream(std::io::BufReader::new(std::fs::File::open(&path)?))?;
    assert_eq!(back.frames, stream.frames);
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    Ok(())
}
