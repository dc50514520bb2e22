use std::cell::RefCell;
use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use sfd_core::colormnist::*;
use sfd_core::Error;

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::fast());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

fn idx_images(n: usize) -> Vec<u8> {
    let mut v = vec![0, 0, 8, 3];
    for d in [n as u32, 28, 28] {
        v.extend(d.to_be_bytes());
    }
    v.resize(16 + n * 784, 0);
    v
}

fn idx_labels(n: usize) -> Vec<u8> {
    let mut v = vec![0, 0, 8, 1];
    v.extend((n as u32).to_be_bytes());
    v.extend((0..n).map(|i| (i % 10) as u8));
    v
}

fn canonical_files() -> Vec<(&'static str, Vec<u8>)> {
    vec![
        (TRAIN_IMAGES, gz(&idx_images(60_000))),
        (TRAIN_LABELS, gz(&idx_labels(60_000))),
        (TEST_IMAGES, gz(&idx_images(10_000))),
        (TEST_LABELS, gz(&idx_labels(10_000))),
    ]
}

/// Serves canned responses and records every requested URL.
struct FakeTransport {
    files: Vec<(&'static str, Vec<u8>)>,
    calls: RefCell<Vec<String>>,
}

impl Transport for FakeTransport {
    fn get(&self, url: &str) -> sfd_core::Result<Vec<u8>> {
        self.calls.borrow_mut().push(url.to_string());
        self.files
            .iter()
            .find(|(name, _)| url.ends_with(name))
            .map(|(_, b)| b.clone())
            .ok_or_else(|| Error::Http { url: url.into(), reason: "404".into() })
    }
}

fn fake(files: Vec<(&'static str, Vec<u8>)>) -> FakeTransport {
    FakeTransport { files, calls: RefCell::new(Vec::new()) }
}

#[test]
fn fetch_downloads_then_serves_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let t = fake(canonical_files());
    let (train, test) = fetch_mnist("http://mirror.invalid/mnist", dir.path(), &t, false).unwrap();
    assert_eq!((train.len(), test.len()), (60_000, 10_000));
    assert_eq!((train.rows, train.cols), (28, 28));
    assert_eq!(t.calls.borrow().len(), 4);
    assert!(dir.path().join("mnist").join(TRAIN_IMAGES).exists());

    let offline = fake(Vec::new());
    let again = fetch_mnist("http://mirror.invalid/mnist", dir.path(), &offline, false).unwrap();
    assert!(offline.calls.borrow().is_empty(), "cache hit must not touch the network");
    assert_eq!(again.0, train);
}

#[test]
fn fetch_errors_are_distinct() {
    let mut files = canonical_files();
    files[1].1 = gz(&idx_labels(59_000));
    let dir = tempfile::tempdir().unwrap();
    let r = fetch_mnist("http://m", dir.path(), &fake(files), false);
    assert!(matches!(r, Err(Error::CountMismatch { expected: 60_000, found: 59_000, .. })), "{r:?}");

    let mut files = canonical_files();
    files[0].1 = b"not gzip at all".to_vec();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(fetch_mnist("http://m", dir.path(), &fake(files), false), Err(Error::Gzip { .. })));

    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(fetch_mnist("http://m", dir.path(), &fake(Vec::new()), false), Err(Error::Http { .. })));
    assert!(matches!(fetch_mnist("http://m", dir.path(), &fake(Vec::new()), true), Err(Error::Offline(_))));
}

#[test]
fn truncated_payload_is_a_count_mismatch() {
    let mut files = canonical_files();
    let mut short = idx_images(60_000);
    short.truncate(16 + 100 * 784);
    files[0].1 = gz(&short);
    let dir = tempfile::tempdir().unwrap();
    let r = fetch_mnist("http://m", dir.path(), &fake(files), false);
    assert!(matches!(r, Err(Error::CountMismatch { found: 100, .. })), "{r:?}");
}

fn colored(n: usize, split: Split, cfg: &ColorConfig) -> ColorBatch {
    build_color_dataset(&synthetic_mnist(n, split, 4), cfg, split).unwrap()
}

#[test]
fn full_shift_makes_colors_uniform() {
    let cfg = ColorConfig { p_test: 1.0, ..Default::default() };
    let b = colored(10_000, Split::Test, &cfg);
    let n = b.len() as f64;
    let se = (0.1 * 0.9 / n).sqrt();
    for j in 0..N_PATCHES {
        let hits = (0..b.len()).filter(|&i| b.patch_colors(i)[j] == cfg.patch_map(j, b.labels()[i])).count();
        let freq = hits as f64 / n;
        assert!((freq - 0.1).abs() < 3.0 * se + 1e-12, "patch {j}: {freq}");
    }
}

#[test]
fn other_color_corruption_never_keeps_the_color() {
    let cfg = ColorConfig { p_test: 1.0, corruption: Corruption::OtherColors, ..Default::default() };
    let b = colored(500, Split::Test, &cfg);
    for i in 0..b.len() {
        for j in 0..N_PATCHES {
            assert_ne!(b.patch_colors(i)[j], cfg.patch_map(j, b.labels()[i]));
        }
    }
}

#[test]
fn no_shift_test_split_matches_train_split() {
    let cfg = ColorConfig { p_test: 0.0, ..Default::default() };
    let a = colored(300, Split::Test, &cfg);
    let b = colored(300, Split::Train, &cfg);
    for i in 0..300 {
        assert_eq!(a.patch_colors(i), b.patch_colors(i));
        assert_eq!(a.image(i), b.image(i));
    }
}

#[test]
fn single_variant_shares_one_color() {
    let cfg = ColorConfig { variant: Variant::Single, p_test: 0.6, ..Default::default() };
    let b = colored(500, Split::Test, &cfg);
    for i in 0..b.len() {
        let c = b.patch_colors(i);
        assert!(c.iter().all(|&x| x == c[0]));
    }
}

#[test]
fn patches_are_independent_given_label() {
    // Chi-squared test on patches 0 and 5 for one label; df = 81.
    let cfg = ColorConfig { p_test: 0.9, ..Default::default() };
    let b = colored(40_000, Split::Test, &cfg);
    let mut table = [[0f64; 10]; 10];
    for i in (0..b.len()).filter(|&i| b.labels()[i] == 3) {
        let c = b.patch_colors(i);
        table[c[0] as usize][c[5] as usize] += 1.0;
    }
    let n: f64 = table.iter().flatten().sum();
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..10).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut chi2 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            let e = rows[i] * cols[j] / n;
            chi2 += (table[i][j] - e).powi(2) / e;
        }
    }
    // 99th percentile of chi-squared with 81 degrees of freedom.
    assert!(chi2 < 113.5, "chi2 = {chi2}");
}

#[test]
fn patch_regions_are_constant_behind_strokes() {
    let b = colored(20, Split::Train, &ColorConfig::default());
    for i in 0..b.len() {
        let img = b.image(i);
        for (j, cell) in patch_cells().iter().enumerate() {
            let color = b.palette[b.patch_colors(i)[j] as usize];
            for y in cell.row * CELL..(cell.row + 1) * CELL {
                for x in cell.col * CELL..(cell.col + 1) * CELL {
                    let px = &img[(y * CANVAS + x) * 3..(y * CANVAS + x) * 3 + 3];
                    // Strokes only whiten; off-stroke pixels show the patch color.
                    assert!(px == color || px.iter().zip(color).all(|(p, c)| *p >= c));
                }
            }
        }
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn containers_and_ppm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = colored(25, Split::Test, &ColorConfig { p_test: 0.5, ..Default::default() });
    write_color_batch(&b, &dir.path().join("b.sfdc")).unwrap();
    assert_eq!(read_color_batch(&dir.path().join("b.sfdc")).unwrap(), b);

    let m = train_mlp(&b, &TrainConfig { steps: 3, batch_size: 10, ..Default::default() }).unwrap();
    write_mlp(&m, &dir.path().join("m.sfdn")).unwrap();
    assert_eq!(read_mlp(&dir.path().join("m.sfdn")).unwrap(), m);
    assert!(read_mlp(&dir.path().join("b.sfdc")).is_err());

    export_ppm(&b.image(0), CANVAS, CANVAS, &dir.path().join("s.ppm")).unwrap();
    let p = read_ppm(&dir.path().join("s.ppm")).unwrap();
    assert_eq!((p.width, p.height, p.data.len()), (42, 42, IMAGE_LEN));
    let expect: Vec<u8> = b.image(0).iter().map(|v| (v * 255.0).round() as u8).collect();
    assert_eq!(p.data, expect);
}

fn small_training(seed: u64) -> (ColorBatch, MlpModel) {
    let b = colored(400, Split::Train, &ColorConfig::default());
    let m = train_mlp(&b, &TrainConfig { steps: 150, batch_size: 50, seed, ..Default::default() }).unwrap();
    (b, m)
}

#[test]
fn training_is_deterministic_and_fits() {
    let (b, m1) = small_training(1);
    let (_, m2) = small_training(1);
    assert_eq!(m1, m2);
    let acc = eval_color(&[&m1], &b, EvalMode::Single).unwrap();
    assert!(acc > 0.99, "train accuracy {acc}");
    let (_, m3) = small_training(2);
    assert_ne!(m1, m3);
}

#[test]
fn ensemble_with_itself_is_the_model() {
    let (b, m) = small_training(3);
    let test = colored(300, Split::Test, &ColorConfig { p_test: 0.8, ..Default::default() });
    let _ = b;
    assert_eq!(
        eval_color(&[&m, &m], &test, EvalMode::Ose).unwrap(),
        eval_color(&[&m], &test, EvalMode::Single).unwrap()
    );
}

#[test]
fn occlusion_controls() {
    let (b, m) = small_training(4);
    let baseline = predictions(&m.logits(&b, None));
    let reserved = GridCell { row: 2, col: 3 };
    assert!(reserved.is_reserved());
    assert_eq!(occlusion_sensitivity_at(&m, &b, reserved, &baseline), 0.0);
    assert!(occlusion_sensitivity(&m, &b, 32).is_err());
    let profile = occlusion_profile(&m, &b);
    assert_eq!(profile.len(), N_PATCHES);
    // 32 redundant patches: one blacked-out cell rarely flips a prediction here.
    assert!(profile.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn heavy_smoothing_flattens_outputs() {
    let b = colored(300, Split::Train, &ColorConfig::default());
    let cfg = TrainConfig { steps: 100, batch_size: 50, label_smoothing: 0.9999, ..Default::default() };
    let m = train_mlp(&b, &cfg).unwrap();
    let conf = mean_confidence(&m.logits(&b, None));
    assert!(conf < 0.2, "{conf}");
}

#[test]
fn divergence_reports_the_step() {
    let b = colored(100, Split::Train, &ColorConfig::default());
    let r = train_mlp(&b, &TrainConfig { steps: 50, lr: 1e38, batch_size: 20, ..Default::default() });
    match r {
        Err(Error::Numeric(msg)) => assert!(msg.contains("step") || msg.contains("finite"), "{msg}"),
        other => panic!("expected numeric error, got {other:?}"),
    }
}

#[test]
fn idx_round_trip_of_real_cache_if_present() {
    let root = default_cache_root();
    if !Path::new(&root).join("mnist").join(TEST_LABELS).exists() {
        eprintln!("skipping: no MNIST cache under {}", root.display());
        return;
    }
    let (train, test) = fetch_mnist(DEFAULT_MIRROR, &root, &fake(Vec::new()), true).unwrap();
    assert_eq!((train.len(), test.len()), (60_000, 10_000));
    assert!(train.labels.iter().all(|&l| l < 10));
}
