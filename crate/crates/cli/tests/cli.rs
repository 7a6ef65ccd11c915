mod common;

use std::fs;

use common::{path_str, photo_like, random_set, run};
use gaussimg::{encode, load_image, psnr, save_image, ssim, BitDepth, ImageBuffer};

fn stdout(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["decode", "--input", "a.igs2"]).status.code(), Some(2));
    assert_eq!(run(&["info", "--input", "a", "--bogus"]).status.code(), Some(2));
}

#[test]
fn metrics_on_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.png");
    save_image(&photo_like(24), &path, BitDepth::Eight).unwrap();
    let out = run(&["metrics", "--ref", path_str(&path), "--test", path_str(&path)]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "PSNR inf, SSIM 1.0");
}

#[test]
fn metrics_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    save_image(&photo_like(24), &a, BitDepth::Eight).unwrap();
    let other = ImageBuffer::from_fn(24, 24, |r, c| [r as f64 / 24.0, c as f64 / 24.0, 0.5]).unwrap();
    save_image(&other, &b, BitDepth::Eight).unwrap();
    let (la, lb) = (load_image(&a).unwrap(), load_image(&b).unwrap());
    let expected = format!("PSNR {:?}, SSIM {:?}", psnr(&la, &lb).unwrap(), ssim(&la, &lb).unwrap());
    let out = run(&["metrics", "--ref", path_str(&a), "--test", path_str(&b)]);
    assert_eq!(stdout(&out).trim(), expected);
}

#[test]
fn metrics_dimension_mismatch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    save_image(&photo_like(24), &a, BitDepth::Eight).unwrap();
    save_image(&photo_like(20), &b, BitDepth::Eight).unwrap();
    let out = run(&["metrics", "--ref", path_str(&a), "--test", path_str(&b)]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn info_reports_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.igs2");
    fs::write(&path, encode(&random_set(1, 100, 0.01, 0.1), None, 64, 48, 10).unwrap()).unwrap();
    let out = run(&["info", "--input", path_str(&path)]);
    assert!(out.status.success());
    let text = stdout(&out);
    for line in ["resolution 64x48", "gaussians 100", "blocks 0", "block_bytes 0", "payload_bytes 1600"] {
        assert!(text.lines().any(|l| l.starts_with(line)), "missing {line:?} in {text}");
    }
}

#[test]
fn corrupt_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.igs2");
    let mut bytes = encode(&random_set(1, 10, 0.01, 0.1), None, 8, 8, 10).unwrap();
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    assert_eq!(run(&["info", "--input", path_str(&path)]).status.code(), Some(4));
    let missing = dir.path().join("missing.igs2");
    assert_eq!(run(&["info", "--input", path_str(&missing)]).status.code(), Some(3));
}

#[test]
fn encode_decode_session() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    save_image(&photo_like(48), d("in.png"), BitDepth::Eight).unwrap();
    let encode_args = |out: &str, nmax: &str| {
        run(&[
            "encode",
            "--input",
            path_str(&d("in.png")),
            "--output",
            path_str(&d(out)),
            "--gaussians",
            "64",
            "--iters",
            "600",
            "--warmup",
            "200",
            "--densify-interval",
            "100",
            "--eval-interval",
            "100",
            "--samples",
            "1000",
            "--nmax",
            nmax,
            "--report",
            path_str(&d("fit.log")),
            "--quiet",
        ])
    };
    assert!(encode_args("one.igs2", "64").status.success());
    let bytes = fs::read(d("one.igs2")).unwrap();
    // 64 Gaussians and a single block
    assert_eq!(bytes.len(), 20 + 16 * 64 + 8);

    // decoded PSNR agrees with the last evaluation in the log
    assert!(run(&["decode", "--input", path_str(&d("one.igs2")), "--output", path_str(&d("a.png"))]).status.success());
    let log = fs::read_to_string(d("fit.log")).unwrap();
    let last = log.lines().rfind(|l| l.starts_with("eval ")).unwrap();
    let logged: f64 = last.split_whitespace().find_map(|f| f.strip_prefix("psnr=")).unwrap().parse().unwrap();
    let measured = psnr(&load_image(d("in.png")).unwrap(), &load_image(d("a.png")).unwrap()).unwrap();
    assert!((measured - logged).abs() <= 0.05, "decoded {measured} dB vs logged {logged} dB");

    // with one block the accelerated and global paths write identical files
    let plain = d("b.png");
    assert!(run(&["decode", "--input", path_str(&d("one.igs2")), "--output", path_str(&plain), "--no-accel"])
        .status
        .success());
    assert_eq!(fs::read(d("a.png")).unwrap(), fs::read(&plain).unwrap());

    // resolution-free decode
    let big = d("big.png");
    let out = run(&[
        "decode",
        "--input",
        path_str(&d("one.igs2")),
        "--output",
        path_str(&big),
        "--width",
        "192",
        "--height",
        "192",
    ]);
    assert!(out.status.success());
    let img = load_image(&big).unwrap();
    assert_eq!((img.width(), img.height()), (192, 192));

    // bench lists the global baseline plus one row per n_max
    let out =
        run(&["bench", "--input", path_str(&d("one.igs2")), "--pixels", "500", "--nmax-list", "32,8", "--trials", "2"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 4, "{text}");
}

#[test]
fn sixteen_bit_decode() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.igs2");
    fs::write(&path, encode(&random_set(2, 30, 0.05, 0.2), None, 16, 16, 10).unwrap()).unwrap();
    let png = dir.path().join("a.png");
    let out = run(&["decode", "--input", path_str(&path), "--output", path_str(&png), "--sixteen-bit"]);
    assert!(out.status.success());
    let raw = fs::read(&png).unwrap();
    // IHDR bit depth byte
    assert_eq!(raw[24], 16);
}
