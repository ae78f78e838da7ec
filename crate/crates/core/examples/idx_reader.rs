//! Write a tiny IDX image/label pair and read it back, the same path MNIST
//! files take.
//!
//! cargo run --example idx_reader

use fedveca::data::read_idx;

fn idx_images(images: &[[u8; 4]]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, 0x03];
    out.extend((images.len() as u32).to_be_bytes());
    out.extend(2u32.to_be_bytes());
    out.extend(2u32.to_be_bytes());
    for img in images {
        out.extend(img);
    }
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, 0x01];
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

pub fn run_example() -> fedveca::Result<()> {
    let dir = std::env::temp_dir().join(format!("fedveca-idx-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let images = dir.join("images");
    let labels = dir.join("labels");
    std::fs::write(&images, idx_images(&[[0, 255, 128, 0], [255, 255, 0, 0]]))?;
    std::fs::write(&labels, idx_labels(&[3, 8]))?;

    let ds = read_idx(&images, &labels)?;
    for s in &ds.samples {
        println!("label {} pixels {:?}", s.label, s.features);
    }
    let parity = ds.to_parity();
    println!("even/odd labels: {:?}", parity.samples.iter().map(|s| s.label).collect::<Vec<_>>());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
