//! Runs the desk scene for a few seeds and prints the scores.
//!
//! `cargo run --release -p graphdepth --example desk -- [seeds] [unit] [g1] [g2]`

use graphdepth::baseline::BilateralOptions;
use graphdepth::benchmark::run_trial;
use graphdepth::enhance::EnhanceOptions;
use graphdepth::scene::Scene;
use graphdepth::{NoiseModelF64, QuantizerParamsF64};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize| args.get(i).map(|s| s.parse::<f64>().expect("numeric argument"));
    let seeds = arg(1).map_or(3, |s| s as u64);
    let mut opts = EnhanceOptions::default();
    if let Some(u) = arg(2) {
        opts.depth_unit = u;
    }
    if let Some(g) = arg(3) {
        opts.g1 = g;
    }
    if let Some(g) = arg(4) {
        opts.g2 = g;
    }
    let q = QuantizerParamsF64::realsense_d435();
    let m = NoiseModelF64::realsense_d435();
    let mut ratios = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for seed in 0..seeds {
        let t = run_trial(&Scene::desk(), &q, &m, &opts, &BilateralOptions::default(), seed).expect("trial");
        println!(
            "seed {seed}: c2c {:.3e} / {:.3e} / {:.3e} / {:.3e}  c2p {:.3e} / {:.3e} / {:.3e} / {:.3e}  ({:.2}s)",
            t.corrupted.c2c,
            t.adaptive_bilateral.c2c,
            t.baseline.c2c,
            t.enhanced.c2c,
            t.corrupted.c2p,
            t.adaptive_bilateral.c2p,
            t.baseline.c2p,
            t.enhanced.c2p,
            t.seconds
        );
        ratios.0.push(t.enhanced.c2c / t.corrupted.c2c);
        ratios.1.push(t.enhanced.c2p / t.corrupted.c2p);
        total += t.seconds;
    }
    println!(
        "median ratio c2c {:.3} c2p {:.3}, total {total:.1}s",
        median(ratios.0),
        median(ratios.1)
    );
}
