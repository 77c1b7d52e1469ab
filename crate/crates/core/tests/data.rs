use reflect_sod::data::{self, generate_splits, generate_synthetic, DatasetManifest, SyntheticSceneSpec};

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = walk(dir).into_iter().collect();
    out.sort();
    out
}

fn walk(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p).into_iter().map(|(n, b)| (format!("{}/{n}", p.file_name().unwrap().to_string_lossy()), b)));
        } else {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn generation_is_deterministic_and_complete() {
    let spec = SyntheticSceneSpec { seed: 4, ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_synthetic(&spec, 8, a.path()).unwrap();
    generate_synthetic(&spec, 8, b.path()).unwrap();
    let fa = files(a.path());
    assert_eq!(fa.iter().filter(|(n, _)| n.ends_with(".png")).count(), 16);
    assert!(fa.iter().any(|(n, _)| n == data::MANIFEST));
    assert_eq!(fa, files(b.path()));
}

#[test]
fn manifest_and_scan_agree() {
    let spec = SyntheticSceneSpec { size: [24, 32], ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let m = generate_splits(&spec, &[("train", 3), ("val", 2)], dir.path()).unwrap();
    let loaded = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(loaded.split("val").unwrap().stems, m.split("val").unwrap().stems);
    std::fs::remove_file(dir.path().join(data::MANIFEST)).unwrap();
    let scanned = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(scanned.split("train").unwrap().stems, m.split("train").unwrap().stems);

    let samples = data::load_split(&loaded, "train", [24, 32]).unwrap();
    assert_eq!(samples.len(), 3);
    for s in &samples {
        let (img, mask) = data::render_scene(&spec, s.stem.trim_start_matches("train_").parse().unwrap()).unwrap();
        assert_eq!(s.mask, mask, "{}", s.stem);
        let err = (&s.image.data - &img.data).mapv(f64::abs).fold(0.0f64, |a, v| a.max(*v));
        assert!(err <= 0.5 / 255.0 + 1e-12, "{} quantization error {err}", s.stem);
    }
}

#[test]
fn missing_root_is_an_error() {
    assert!(DatasetManifest::load(std::path::Path::new("/nonexistent/reflect-sod")).is_err());
}
