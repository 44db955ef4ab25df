use std::path::{Path, PathBuf};

use graphdepth::benchmark::{pair_cloud, score_pair};
use graphdepth::cloud::{c2c, PointCloud};
use graphdepth::config::PipelineConfig;
use graphdepth::enhance::enhance_pair;
use graphdepth::forward::{corrupt, derive_seed};
use graphdepth::io::{read_clusters, read_depth, read_ply, write_depth, write_ply, FitReport, ImageFormat, Metadata};
use graphdepth::{Error, NoiseFamily};
use proptest::prelude::*;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/desk")
}

#[test]
fn bundled_config_resolves_its_inputs() {
    let cfg = PipelineConfig::load(fixture().join("config.toml")).unwrap();
    let left = cfg.paths.left.clone().unwrap();
    assert!(left.is_absolute() || left.starts_with(fixture()));
    assert!(left.exists(), "{}", left.display());
    assert_eq!(cfg.solver.k, 30);
    cfg.quantizer().unwrap();
    cfg.noise_model().unwrap();
    cfg.enhance_options().validate().unwrap();
}

#[test]
fn fixture_pair_enhances_through_files() {
    let cfg = PipelineConfig::load(fixture().join("config.toml")).unwrap();
    let (q, m) = (cfg.quantizer().unwrap(), cfg.noise_model().unwrap());
    let (gl, meta_l) = read_depth(cfg.paths.left.as_ref().unwrap()).unwrap();
    let (gr, _) = read_depth(cfg.paths.right.as_ref().unwrap()).unwrap();
    assert_eq!(meta_l.extra.get("scene").map(String::as_str), Some("desk"));

    let dir = tempfile::tempdir().unwrap();
    let yl = corrupt(&gl, &q, &m, derive_seed(cfg.seed, 1, 0)).unwrap();
    let yr = corrupt(&gr, &q, &m, derive_seed(cfg.seed, 1, 1)).unwrap();
    for (name, img) in [("l.pgm", &yl), ("r.pgm", &yr)] {
        write_depth(dir.path().join(name), img, ImageFormat::Pgm16, &meta_l).unwrap();
    }
    let (yl2, _) = read_depth(dir.path().join("l.pgm")).unwrap();
    let (yr2, _) = read_depth(dir.path().join("r.pgm")).unwrap();
    // 16-bit integers store the reconstruction levels to within half a millimetre
    for (a, b) in yl.values().iter().zip(yl2.values()) {
        assert!((a - b).abs() <= 0.5);
    }

    let pair = enhance_pair(&yl2, &yr2, &q, &m, &cfg.enhance_options()).unwrap();
    let before = score_pair((&gl, &gr), (&yl2, &yr2)).unwrap();
    let after = score_pair((&gl, &gr), (&pair.left.image, &pair.right.image)).unwrap();
    assert!(after.c2c < before.c2c && after.c2p < before.c2p, "{before:?} -> {after:?}");

    let cloud = pair_cloud(&pair.left.image, &pair.right.image);
    write_ply(dir.path().join("e.ply"), &cloud, true).unwrap();
    let back = read_ply(dir.path().join("e.ply")).unwrap();
    assert_eq!(back.points, cloud.points);
}

#[test]
fn fixture_clusters_fit_near_the_sensor_law() {
    let cfg = PipelineConfig::load(fixture().join("config.toml")).unwrap();
    let clusters = read_clusters(cfg.paths.clusters.as_ref().unwrap()).unwrap();
    assert_eq!(clusters.len(), 10);
    let r = FitReport::fit(&clusters, &cfg.quantizer().unwrap(), NoiseFamily::Gaussian, &Default::default()).unwrap();
    let m = cfg.noise_model().unwrap();
    assert!((r.alpha - m.alpha).abs() < 0.3 * m.alpha, "{}", r.alpha);
    assert!((r.mu - m.mu).abs() < 0.3 * m.mu.abs(), "{}", r.mu);
}

#[test]
fn truncated_files_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read(fixture().join("left.pfm")).unwrap();
    let p = dir.path().join("cut.pfm");
    std::fs::write(&p, &src[..src.len() / 2]).unwrap();
    std::fs::copy(fixture().join("left.meta"), dir.path().join("cut.meta")).unwrap();
    assert!(matches!(read_depth(&p), Err(Error::Parse { .. })));
    std::fs::write(dir.path().join("cut.ply"), "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n").unwrap();
    assert!(matches!(read_ply(dir.path().join("cut.ply")), Err(Error::Parse { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pfm_round_trip_is_exact_to_single_precision(
        values in prop::collection::vec(10.0f64..4999.0, 12),
        missing in prop::collection::vec(any::<bool>(), 12),
    ) {
        let intr = graphdepth::image::Intrinsics::new(64.0, 50.0).unwrap();
        let mut img = graphdepth::image::DepthImage::from_values(3, 4, values.clone(), intr).unwrap();
        for (i, &gone) in missing.iter().enumerate() {
            if gone {
                img.set_missing(i / 4, i % 4);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pfm");
        let meta = Metadata::new(&intr, &graphdepth::QuantizerParamsF64::realsense_d435());
        write_depth(&p, &img, ImageFormat::Pfm, &meta).unwrap();
        let (back, m2) = read_depth(&p).unwrap();
        prop_assert_eq!(back.mask(), img.mask());
        for ((a, b), &ok) in back.values().iter().zip(img.values()).zip(img.mask()) {
            if ok {
                prop_assert_eq!(*a, *b as f32 as f64);
            }
        }
        prop_assert_eq!(m2.intrinsics().unwrap(), intr);
    }

    #[test]
    fn ply_round_trip_preserves_points(
        pts in prop::collection::vec(prop::array::uniform3(-1e3f64..1e3), 1..64),
        binary in any::<bool>(),
    ) {
        let cloud = PointCloud::new(pts).unwrap().with_estimated_normals();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        write_ply(&p, &cloud, binary).unwrap();
        let back = read_ply(&p).unwrap();
        prop_assert_eq!(&back.points, &cloud.points);
        prop_assert_eq!(&back.normals, &cloud.normals);
        prop_assert_eq!(c2c(&cloud, &back).unwrap(), 0.0);
    }
}
