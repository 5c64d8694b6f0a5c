mod support;

use oadg::metrics::{average_precision, GroundTruth, ScoredBox};
use oadg::model::{BBox, ImageBuffer};
use oadg::nn::Linear;
use oadg::rng;
use oadg::transforms::{apply_spatial_op_in_box, TransformKind, TransformOp};
use rand::Rng;

fn random_image<R: Rng>(w: usize, h: usize, r: &mut R) -> ImageBuffer {
    let data = (0..w * h * 3).map(|_| r.random::<f32>()).collect();
    ImageBuffer::from_data(w, h, data).unwrap()
}

#[test]
fn spatial_warps_match_naive_affine_resampling() {
    let mut r = rng::stream(11, &[]);
    for trial in 0..200 {
        let img = random_image(24, 20, &mut r);
        let (w, h) = (r.random_range(1..=16u32), r.random_range(1..=14u32));
        let bbox = BBox::new(r.random_range(0..=24 - w), r.random_range(0..=20 - h), w, h);
        let kind = TransformKind::SPATIAL[trial % 5];
        let op = TransformOp::new(kind, r.random_range(1..=10), if r.random_bool(0.5) { 1 } else { -1 });
        let fast = apply_spatial_op_in_box(&img, &bbox, &op).unwrap();
        let slow = support::naive_warp(&img, &bbox, op.spatial_params(w, h).unwrap());
        let worst = fast.data().iter().zip(slow.data()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        assert!(worst < 1e-5, "{op:?} on {bbox:?}: max diff {worst}");
    }
}

#[test]
fn linear_forward_matches_triple_loop() {
    let mut r = rng::stream(12, &[]);
    for _ in 0..50 {
        let (inputs, outputs, rows) = (r.random_range(1..20), r.random_range(1..20), r.random_range(1..8));
        let layer = Linear::init(inputs, outputs, &mut r);
        let mut layer = layer;
        layer.bias.iter_mut().for_each(|b| *b = r.random_range(-1.0..1.0));
        let x: Vec<Vec<f64>> = (0..rows).map(|_| (0..inputs).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let expected = support::matmul_oracle(&x, &layer.weight, &layer.bias, inputs);
        for (row, want) in x.iter().zip(&expected) {
            for (a, b) in layer.forward(row).iter().zip(want) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }
}

fn random_ap_instance<R: Rng>(r: &mut R) -> (Vec<ScoredBox>, Vec<GroundTruth>) {
    let images = r.random_range(1..=3);
    let rand_box = |r: &mut R| {
        let (x, y) = (r.random_range(0..12u32), r.random_range(0..12u32));
        BBox::new(x, y, r.random_range(2..8), r.random_range(2..8))
    };
    let gts = (0..r.random_range(0..=5)).map(|_| GroundTruth { image: r.random_range(0..images), bbox: rand_box(r) }).collect();
    // Scores from a small set so that ties occur.
    let dets = (0..r.random_range(0..=7))
        .map(|_| ScoredBox { image: r.random_range(0..images), bbox: rand_box(r), score: r.random_range(0..5) as f64 / 4.0 })
        .collect();
    (dets, gts)
}

#[test]
fn average_precision_matches_exhaustive_oracle() {
    let mut r = rng::stream(13, &[]);
    for _ in 0..2000 {
        let (dets, gts) = random_ap_instance(&mut r);
        for thr in [0.1, 0.5] {
            let ap = average_precision(&dets, &gts, thr);
            assert_eq!(ap, support::ap_oracle(&dets, &gts, thr), "{dets:?} {gts:?}");
            let exact = support::ap_oracle_exact(&dets, &gts, thr);
            let exact = *exact.numer() as f64 / *exact.denom() as f64;
            assert!((ap - exact).abs() < 1e-12);
        }
    }
}
