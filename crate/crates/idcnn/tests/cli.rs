//! Process-level tests of the command-line surface: file outputs, exit
//! codes, config handling and the wrapper contract against the library.

use std::path::Path;
use std::process::{Command, Output};

use idcnn::image::ColorImage;
use idcnn::io;
use idcnn::metrics;
use idcnn::rng::SeedRng;
use idcnn::synth::synth_image;

fn idcnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idcnn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("failed to spawn idcnn")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_test_image(path: &Path, h: usize, w: usize, seed: u64) -> ColorImage {
    let img = synth_image(h, w, seed);
    io::write_ppm(&img, path).unwrap();
    img
}

#[test]
fn corrupt_rho_zero_is_identity_after_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_test_image(&dir.path().join("in.ppm"), 40, 50, 1);
    let out = idcnn(
        dir.path(),
        &[
            "corrupt",
            "--input",
            "in.ppm",
            "--output",
            "out.ppm",
            "--map-output",
            "map.pgm",
            "--rho",
            "0",
        ],
    );
    assert_ok(&out);
    let original = std::fs::read(dir.path().join("in.ppm")).unwrap();
    let noisy = std::fs::read(dir.path().join("out.ppm")).unwrap();
    assert_eq!(original, noisy);
    let map = io::read_map_pgm(dir.path().join("map.pgm")).unwrap();
    assert_eq!(map.flagged_count(), 0);
}

#[test]
fn corrupt_same_seed_is_reproducible_and_reports_density() {
    let dir = tempfile::tempdir().unwrap();
    write_test_image(&dir.path().join("in.ppm"), 64, 64, 2);
    let args = [
        "corrupt",
        "--input",
        "in.ppm",
        "--output",
        "a.ppm",
        "--map-output",
        "a.pgm",
        "--rho",
        "0.3",
        "--seed",
        "7",
    ];
    let out1 = idcnn(dir.path(), &args);
    assert_ok(&out1);
    let stdout = String::from_utf8_lossy(&out1.stdout);
    assert!(stdout.contains("density"), "{stdout}");
    let mut args2 = args;
    args2[4] = "b.ppm";
    args2[6] = "b.pgm";
    let out2 = idcnn(dir.path(), &args2);
    assert_ok(&out2);
    assert_eq!(
        std::fs::read(dir.path().join("a.ppm")).unwrap(),
        std::fs::read(dir.path().join("b.ppm")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.path().join("a.pgm")).unwrap(),
        std::fs::read(dir.path().join("b.pgm")).unwrap()
    );
    // realized density close to nominal
    let map = io::read_map_pgm(dir.path().join("a.pgm")).unwrap();
    let density = map.flagged_count() as f64 / 4096.0;
    assert!((density - 0.3).abs() < 0.1, "density {density}");
}

#[test]
fn denoise_oracle_mode_and_thin_wrapper_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let clean_img = write_test_image(&dir.path().join("clean.ppm"), 48, 48, 3);
    assert_ok(&idcnn(
        dir.path(),
        &[
            "corrupt", "--input", "clean.ppm", "--output", "noisy.ppm", "--map-output",
            "truth.pgm", "--rho", "0.3", "--seed", "4",
        ],
    ));
    assert_ok(&idcnn(
        dir.path(),
        &[
            "denoise",
            "--input",
            "noisy.ppm",
            "--oracle-map",
            "truth.pgm",
            "--output",
            "restored.ppm",
            "--map-output",
            "est.pgm",
        ],
    ));
    assert_ok(&idcnn(
        dir.path(),
        &[
            "evaluate",
            "--clean",
            "clean.ppm",
            "--restored",
            "restored.ppm",
            "--truth-map",
            "truth.pgm",
            "--est-map",
            "est.pgm",
            "--output",
            "eval.csv",
        ],
    ));

    // The CSV row must equal direct library computation.
    let restored = io::read_ppm(dir.path().join("restored.ppm")).unwrap();
    let truth = io::read_map_pgm(dir.path().join("truth.pgm")).unwrap();
    let want_psnr = metrics::psnr(&clean_img, &restored).unwrap();
    let want_mae = metrics::mae(&clean_img, &restored).unwrap();
    let want_ssim = metrics::ssim_c(&clean_img, &restored).unwrap();
    let c = metrics::confusion(&truth, &truth).unwrap();
    assert_eq!(metrics::wacc(&c), 1.0);

    let csv = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    let row: Vec<&str> = csv
        .lines()
        .find(|l| l.starts_with("clean,"))
        .expect("data row")
        .split(',')
        .collect();
    assert_eq!(row[3], "1.000000"); // wacc
    assert_eq!(row[4], "0.000000"); // fpr
    assert_eq!(row[5], "0.000000"); // fnr
    assert_eq!(row[6], format!("{want_psnr:.6}"));
    assert_eq!(row[7], format!("{want_mae:.6}"));
    assert_eq!(row[8], format!("{want_ssim:.6}"));
    // oracle detection: all residual error on TP pixels
    assert_eq!(row[10], "0.000000");
    assert_eq!(row[11], "0.000000");
}

#[test]
fn evaluate_identical_inputs_report_perfect_scores() {
    let dir = tempfile::tempdir().unwrap();
    write_test_image(&dir.path().join("img.ppm"), 32, 32, 5);
    // perfect map: empty truth and estimate
    let map = idcnn::image::NoiseMap::zeros(32, 32);
    io::write_map_pgm(&map, dir.path().join("map.pgm")).unwrap();
    let out = idcnn(
        dir.path(),
        &[
            "evaluate",
            "--clean",
            "img.ppm",
            "--restored",
            "img.ppm",
            "--truth-map",
            "map.pgm",
            "--est-map",
            "map.pgm",
        ],
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let row = stdout
        .lines()
        .find(|l| l.starts_with("img,"))
        .expect("data row");
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[3], "1.000000"); // wacc
    assert_eq!(fields[6], "inf"); // psnr token
    assert_eq!(fields[7], "0.000000"); // mae
    assert_eq!(fields[8], "1.000000"); // ssim
}

#[test]
fn evaluate_batch_mode_appends_mean_row() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["clean", "restored", "truth", "est"] {
        std::fs::create_dir(dir.path().join(sub)).unwrap();
    }
    let mut rng = SeedRng::new(6);
    for i in 0..3 {
        let clean = synth_image(24, 24, 60 + i);
        io::write_ppm(&clean, dir.path().join(format!("clean/i{i}.ppm"))).unwrap();
        let mut restored = clean.clone();
        for v in restored.data_mut() {
            *v = v.saturating_add((rng.index(3)) as u8);
        }
        io::write_ppm(&restored, dir.path().join(format!("restored/i{i}.ppm"))).unwrap();
        let mut map = idcnn::image::NoiseMap::zeros(24, 24);
        map.set(0, i as usize, 1.0);
        io::write_map_pgm(&map, dir.path().join(format!("truth/i{i}.pgm"))).unwrap();
        io::write_map_pgm(&map, dir.path().join(format!("est/i{i}.pgm"))).unwrap();
    }
    let out = idcnn(
        dir.path(),
        &[
            "evaluate",
            "--clean-dir",
            "clean",
            "--restored-dir",
            "restored",
            "--truth-dir",
            "truth",
            "--est-dir",
            "est",
        ],
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = stdout
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("image,") && !l.is_empty())
        .collect();
    assert_eq!(rows.len(), 4, "{stdout}");
    assert!(rows[3].starts_with("mean,"));
    // mean of the mae column equals the average of per-image values
    let mae = |row: &str| row.split(',').nth(7).unwrap().parse::<f64>().unwrap();
    let expect = (mae(rows[0]) + mae(rows[1]) + mae(rows[2])) / 3.0;
    assert!((mae(rows[3]) - expect).abs() < 1e-5);
}

#[test]
fn train_writes_checkpoint_loss_csv_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("data")).unwrap();
    for i in 0..2 {
        write_test_image(&dir.path().join(format!("data/i{i}.ppm")), 63, 63, 70 + i);
    }
    let common = [
        "train",
        "--data-dir",
        "data",
        "--model-out",
        "m.ckpt",
        "--depth",
        "3",
        "--filters",
        "2",
        "--batch-size",
        "8",
        "--patch-size",
        "21",
        "--scales",
        "1",
        "--seed",
        "3",
    ];
    // continuous 4-epoch run
    let mut four = common.to_vec();
    four.extend(["--epochs", "4", "--loss-out", "full.csv"]);
    assert_ok(&idcnn(dir.path(), &four));
    let full_ckpt = std::fs::read(dir.path().join("m.ckpt")).unwrap();
    let full_csv = std::fs::read_to_string(dir.path().join("full.csv")).unwrap();

    // 2 epochs, then resume for 2 more
    let mut two = common.to_vec();
    two[4] = "m2.ckpt";
    two.extend(["--epochs", "2", "--loss-out", "split.csv"]);
    assert_ok(&idcnn(dir.path(), &two));
    let resumed = [
        "train",
        "--data-dir",
        "data",
        "--model-out",
        "m2.ckpt",
        "--resume",
        "m2.ckpt",
        "--epochs",
        "4",
        "--loss-out",
        "split.csv",
    ];
    assert_ok(&idcnn(dir.path(), &resumed));
    let split_ckpt = std::fs::read(dir.path().join("m2.ckpt")).unwrap();
    assert_eq!(full_ckpt, split_ckpt, "resumed training diverged");

    let split_csv = std::fs::read_to_string(dir.path().join("split.csv")).unwrap();
    let losses = |csv: &str| -> Vec<String> {
        csv.lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("epoch,") && !l.is_empty())
            .map(|l| l.to_string())
            .collect()
    };
    assert_eq!(losses(&full_csv), losses(&split_csv));
}

#[test]
fn train_patch_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("data")).unwrap();
    write_test_image(&dir.path().join("data/i.ppm"), 63, 63, 80);
    let args = [
        "train",
        "--data-dir",
        "data",
        "--model-out",
        "m.ckpt",
        "--depth",
        "3",
        "--filters",
        "2",
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--patch-size",
        "21",
        "--scales",
        "1",
        "--patch-cache",
        "cache.bin",
        "--seed",
        "1",
    ];
    let first = idcnn(dir.path(), &args);
    assert_ok(&first);
    assert!(dir.path().join("cache.bin").exists());
    let second = idcnn(dir.path(), &args);
    assert_ok(&second);
    assert!(String::from_utf8_lossy(&second.stdout).contains("loaded"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    // usage error: missing required flags
    let out = idcnn(dir.path(), &["corrupt"]);
    assert_eq!(out.status.code(), Some(1));
    // data error: unreadable input
    let out = idcnn(
        dir.path(),
        &[
            "corrupt", "--input", "nope.ppm", "--output", "o.ppm", "--map-output", "m.pgm",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    // data error: corrupt checkpoint
    std::fs::write(dir.path().join("bad.ckpt"), b"garbage").unwrap();
    write_test_image(&dir.path().join("img.ppm"), 16, 16, 9);
    let out = idcnn(
        dir.path(),
        &[
            "denoise", "--input", "img.ppm", "--model", "bad.ckpt", "--output", "r.ppm",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    // rho outside [0,1] is a data (contract) error
    let out = idcnn(
        dir.path(),
        &[
            "corrupt", "--input", "img.ppm", "--output", "o.ppm", "--map-output", "m.pgm",
            "--rho", "1.5",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    write_test_image(&dir.path().join("in.ppm"), 32, 32, 10);
    std::fs::write(dir.path().join("run.cfg"), "rho=0.9\nseed=5\n").unwrap();
    let out = idcnn(
        dir.path(),
        &[
            "corrupt", "--input", "in.ppm", "--output", "o.ppm", "--map-output", "m.pgm",
            "--config", "run.cfg", "--rho", "0.1",
        ],
    );
    assert_ok(&out);
    let sidecar = std::fs::read_to_string(dir.path().join("o.ppm.cfg")).unwrap();
    assert!(sidecar.contains("# rho=0.1"), "{sidecar}");
    assert!(sidecar.contains("# seed=5"), "{sidecar}");
    let map = io::read_map_pgm(dir.path().join("m.pgm")).unwrap();
    let density = map.flagged_count() as f64 / 1024.0;
    assert!(density < 0.25, "flag did not override config: {density}");
}

#[test]
fn verify_passes_and_fault_injection_fails_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = idcnn(dir.path(), &["verify"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("grad full depth-5 model"), "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");

    let out = idcnn(dir.path(), &["verify", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn denoise_writes_probability_map_with_16_bit_samples() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("data")).unwrap();
    write_test_image(&dir.path().join("data/i.ppm"), 63, 63, 90);
    assert_ok(&idcnn(
        dir.path(),
        &[
            "train", "--data-dir", "data", "--model-out", "m.ckpt", "--depth", "3",
            "--filters", "2", "--epochs", "1", "--batch-size", "8", "--patch-size", "21",
            "--scales", "1", "--seed", "2",
        ],
    ));
    write_test_image(&dir.path().join("img.ppm"), 32, 32, 91);
    assert_ok(&idcnn(
        dir.path(),
        &[
            "denoise", "--input", "img.ppm", "--model", "m.ckpt", "--output", "r.ppm",
            "--prob-output", "p.pgm",
        ],
    ));
    let prob = io::read_probability_pgm(dir.path().join("p.pgm")).unwrap();
    assert_eq!(prob.dims(), (32, 32));
    assert!(prob.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    // restored map default path
    assert!(dir.path().join("r.ppm.map.pgm").exists());
    assert!(dir.path().join("r.ppm.cfg").exists());
}

#[test]
fn sweep_produces_aggregated_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("train")).unwrap();
    std::fs::create_dir(dir.path().join("test")).unwrap();
    for i in 0..2 {
        write_test_image(&dir.path().join(format!("train/i{i}.ppm")), 63, 63, 100 + i);
    }
    write_test_image(&dir.path().join("test/t.ppm"), 42, 42, 200);
    let out = idcnn(
        dir.path(),
        &[
            "sweep",
            "--data-dir",
            "train",
            "--test-dir",
            "test",
            "--out-dir",
            "sweep",
            "--patch-sizes",
            "21",
            "--dataset-sizes",
            "1,2",
            "--train-rhos",
            "0.3",
            "--test-rhos",
            "0.3",
            "--repeats",
            "1",
            "--depth",
            "3",
            "--filters",
            "2",
            "--epochs",
            "1",
            "--batch-size",
            "8",
        ],
    );
    assert_ok(&out);
    let csv = std::fs::read_to_string(dir.path().join("sweep/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("patch_size,") && !l.is_empty())
        .collect();
    assert_eq!(rows.len(), 2, "{csv}");
    for row in rows {
        assert!(row.starts_with("21,"), "{row}");
        assert_eq!(row.split(',').count(), 11, "{row}");
    }
}
