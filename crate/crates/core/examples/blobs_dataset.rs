//! Generates the blob benchmark, writes it as CSV and reads it back.
//!
//! ```text
//! cargo run --example blobs_dataset -- [out_dir]
//! ```

use adaptive_kd::data::{generate_blobs, load_table, BlobSpec, Split, TableSchema};

fn main() -> adaptive_kd::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().display().to_string());
    let spec = BlobSpec::default();
    let (train, test) = generate_blobs(&spec)?;
    println!("centers after overlap scaling: {:?}", spec.effective_centers());
    println!("train {:?} / test {:?} per class", train.class_counts(), test.class_counts());

    std::fs::create_dir_all(&out).map_err(|source| adaptive_kd::Error::Io { path: out.clone().into(), source })?;
    let path = std::path::Path::new(&out).join("blobs_train.csv");
    train.save_csv(&path)?;
    let back = load_table(&path, &TableSchema::canonical(spec.dim, spec.num_classes, Split::Train))?;
    assert_eq!(back, train);
    println!("round-tripped {} rows through {}", back.len(), path.display());

    for overlap in [0.5, 1.0, 2.0] {
        let spec = BlobSpec { overlap, ..BlobSpec::default() };
        println!("overlap {overlap}: centers {:?}", spec.effective_centers());
    }
    Ok(())
}
