//! Generates a small shapes dataset, saves it, and writes a preview sheet.
//!
//! cargo run --release --example generate_shapes -- [out_dir]

use cartoondiff::dataset::{generate, load_dataset, save_dataset, ShapeClass};
use cartoondiff::pnm::{contact_sheet, write_image};

fn main() -> cartoondiff::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "shapes_out".into());
    std::fs::create_dir_all(&dir)?;
    let ds = generate(32, 32, 0)?;
    let path = format!("{dir}/shapes.cdds");
    save_dataset(&ds, &path)?;
    let back = load_dataset(&path)?;
    assert_eq!(back.images(), ds.images());

    let mut counts = [0usize; 4];
    for &l in ds.labels() {
        counts[l] += 1;
    }
    for (c, n) in counts.iter().enumerate() {
        println!("{:>8}: {n}", ShapeClass::from_index(c).unwrap().name());
    }
    let rows: Vec<Vec<_>> = ds.images().chunks(8).map(|c| c.to_vec()).collect();
    write_image(&contact_sheet(&rows, 2, 1.0)?, format!("{dir}/preview.pgm"))?;
    println!("wrote {path} and {dir}/preview.pgm");
    Ok(())
}
