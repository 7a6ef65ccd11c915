use gaussimg::bsp::render_image_blocked;
use gaussimg::fit::{fit, FitConfig};
use gaussimg::{
    build_partition, decode, encode, psnr, quantize_set, render_image, Gaussian2D, GaussianSet, ImageBuffer,
};
use proptest::prelude::*;

fn checker(size: usize) -> ImageBuffer {
    ImageBuffer::from_fn(size, size, |r, c| {
        if (r * 4 / size + c * 4 / size).is_multiple_of(2) {
            [0.9, 0.8, 0.2]
        } else {
            [0.1, 0.2, 0.5]
        }
    })
    .unwrap()
}

#[test]
fn fit_encode_decode_render() {
    let target = checker(32);
    let config = FitConfig {
        iterations: 800,
        samples_per_iter: 512,
        warmup_iters: 200,
        densify_interval: 100,
        eval_interval: 200,
        ..FitConfig::new(32)
    };
    let (set, report) = fit(&target, &config).unwrap();
    let trained = report.final_record().unwrap().psnr;

    let partition = build_partition(&set, 32).unwrap();
    let bytes = encode(&set, Some(&partition), 32, 32, config.k).unwrap();
    let d = decode(&bytes).unwrap();
    assert_eq!(d.partition.as_ref().unwrap().block_count(), 1);

    let global = render_image(&d.set, 32, 32, d.k).unwrap();
    assert_eq!(global, render_image(&quantize_set(&set).unwrap(), 32, 32, d.k).unwrap());
    let blocked = render_image_blocked(&d.set, d.partition.as_ref().unwrap(), 32, 32, d.k).unwrap();

    // float16 storage costs little at this quality
    let decoded = psnr(&target, &global).unwrap();
    assert!((decoded - trained).abs() < 0.1, "{decoded} vs {trained}");
    // a single block is the global renderer
    assert_eq!(blocked, global);
}

fn arb_gaussian() -> impl Strategy<Value = Gaussian2D> {
    ([0.0..1.0f64, 0.0..1.0], 0.0..std::f64::consts::PI, [1e-3..0.3f64, 1e-3..0.3], [0.0..1.0f64, 0.0..1.0, 0.0..1.0])
        .prop_map(|(mu, theta, scale, color)| Gaussian2D::new(mu, theta, scale, color))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decoded_files_render_within_unit_range(gs in prop::collection::vec(arb_gaussian(), 1..60), n_max in 1usize..20) {
        let set = GaussianSet::new(gs);
        let p = build_partition(&set, n_max).unwrap();
        let d = decode(&encode(&set, Some(&p), 12, 9, 10).unwrap()).unwrap();
        let img = render_image_blocked(&d.set, d.partition.as_ref().unwrap(), 12, 9, d.k).unwrap();
        prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn reencoding_is_stable(gs in prop::collection::vec(arb_gaussian(), 1..40)) {
        let set = GaussianSet::new(gs);
        let bytes = encode(&set, None, 100, 50, 7).unwrap();
        let d = decode(&bytes).unwrap();
        prop_assert_eq!(encode(&d.set, None, d.width, d.height, d.k).unwrap(), bytes);
    }
}
