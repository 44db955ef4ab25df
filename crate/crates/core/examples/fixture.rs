//! Writes the desk scene as a ground-truth PFM pair with sidecars, plus a CSV
//! of quantized observations of ten known depths.
//!
//! `cargo run --release -p graphdepth --example fixture -- fixtures/desk`

use std::fmt::Write as _;
use std::path::PathBuf;

use graphdepth::io::{atomic_write, write_depth, ImageFormat, Metadata};
use graphdepth::scene::{Scene, View};
use graphdepth::{corrupt, derive_seed, DepthImageF64, NoiseModelF64, QuantizerParamsF64};

fn main() -> graphdepth::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/desk".into()));
    std::fs::create_dir_all(&dir).map_err(|e| graphdepth::Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let q = QuantizerParamsF64::realsense_d435();
    let m = NoiseModelF64::realsense_d435();
    let scene = Scene::desk();
    for (view, name) in [(View::Left, "left"), (View::Right, "right")] {
        let img: DepthImageF64 = scene.render(view)?;
        let meta = Metadata::new(&img.intrinsics, &q).with("scene", "desk");
        write_depth(dir.join(format!("{name}.pfm")), &img, ImageFormat::Pfm, &meta)?;
    }

    // one flat 10x10 patch per depth, corrupted once
    let mut csv = String::from("cluster_id,x_star_mm,y_mm\n");
    for k in 0..10u64 {
        let x = 615.0 + 910.0 * k as f64 / 9.0;
        let flat = DepthImageF64::filled(10, 10, x, scene.intrinsics()?)?;
        let y = corrupt(&flat, &q, &m, derive_seed(11, 2, k))?;
        for v in y.values() {
            let _ = writeln!(csv, "c{k},{x},{v}");
        }
    }
    atomic_write(dir.join("clusters.csv"), csv.as_bytes())?;
    println!("wrote fixture to {}", dir.display());
    Ok(())
}
