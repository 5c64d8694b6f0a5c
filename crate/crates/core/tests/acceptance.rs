//! End-to-end acceptance gates. Prints one PASS/FAIL line per criterion and
//! fails if any gate fails.
//!
//! Criterion 1 trains both modes on three full-size seeds and dominates the
//! runtime (tens of minutes on a single core).

mod support;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use sha2::{Digest, Sha256};

use oadg::config::RunConfig;
use oadg::corruptions::CorruptionKind;
use oadg::detector::{
    batch_loss, generate_scene, generate_splits, train, CellView, Mode, PairedBatch, SynthConfig,
    TrainConfig,
};
use oadg::diagnostics::{gradient_checks, micro_batch, micro_config};
use oadg::metrics::{average_precision, mpc, GroundTruth, ScoredBox};
use oadg::model::{BBox, ImageBuffer};
use oadg::oaloss::{
    build_positive_sets, contrastive_loss, js_consistency, ContrastiveBatch, Hyper, InstanceLabel, ProbVec,
};
use oadg::oamix::{oamix, precedence_owner, region_augmentations, OamixConfig};
use oadg::pipeline::repro;
use oadg::rng;
use oadg::saliency::{object_saliency_score, spectral_residual_map, SaliencyConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn full_repro(out: &Path) -> (f64, f64, f64) {
    let t = Instant::now();
    let report = repro(&RunConfig::default(), out).expect("repro runs");
    for s in &report.seeds {
        println!(
            "  seed {}: baseline clean {:.4} mPC {:.4} | oadg clean {:.4} mPC {:.4}",
            s.seed, s.baseline.clean_map, s.baseline.mpc, s.oadg.clean_map, s.oadg.mpc
        );
    }
    (report.mean_delta_mpc, report.mean_delta_clean_map, t.elapsed().as_secs_f64())
}

fn robustness_and_guardrail() -> (Outcome, Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let (d_mpc, d_clean, secs) = full_repro(dir.path());
    (
        outcome(
            d_mpc >= 0.02,
            format!("mean delta mPC {d_mpc:+.4} (need >= +0.02), 3 seeds, {secs:.0} s with {} thread(s)", rayon::current_num_threads()),
        ),
        outcome(d_clean >= -0.01, format!("mean delta clean mAP {d_clean:+.4} (need >= -0.01)")),
    )
}

fn gradient_correctness() -> Outcome {
    let r = gradient_checks(0, 100).unwrap();
    outcome(
        r.pass,
        format!(
            "contrastive {:.2e}, consistency {:.2e} over {} batches (tol 1e-4); joint {:.2e} over {} (tol 1e-3)",
            r.contrastive_max, r.consistency_max, r.trials, r.joint_max, r.joint_trials
        ),
    )
}

fn random_labels<R: Rng>(n: usize, r: &mut R) -> (Vec<InstanceLabel>, Vec<(usize, usize)>) {
    let mut labels: Vec<InstanceLabel> = (0..n)
        .map(|_| match r.random_range(0..4) {
            3 => InstanceLabel::Background,
            c => InstanceLabel::Foreground(c),
        })
        .collect();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, r.random_range(0..=i));
    }
    let pairs: Vec<(usize, usize)> = idx
        .chunks_exact(2)
        .filter(|_| r.random_bool(0.5))
        .map(|c| (c[0], c[1]))
        .collect();
    for &(a, b) in &pairs {
        labels[b] = labels[a];
    }
    (labels, pairs)
}

fn random_simplex<R: Rng>(k: usize, r: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -r.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn loss_oracles() -> Outcome {
    let mut r = rng::stream(4, &[]);
    let mut worst_ct = 0f64;
    for _ in 0..1000 {
        let n = r.random_range(2..=6);
        let dim = r.random_range(2..=6);
        let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let (labels, pairs) = random_labels(n, &mut r);
        let batch = ContrastiveBatch::new(feats, labels, &pairs, r.random_range(0.05..1.0)).unwrap();
        let want = support::contrastive_oracle(&batch.features, &batch.labels, &batch.partner, batch.tau);
        worst_ct = worst_ct.max((contrastive_loss(&batch).unwrap().value - want).abs());
    }
    let mut worst_js = 0f64;
    for _ in 0..1000 {
        let k = r.random_range(2..=8);
        let (p, q) = (random_simplex(k, &mut r), random_simplex(k, &mut r));
        let got = js_consistency(&ProbVec::new(p.clone()).unwrap(), &ProbVec::new(q.clone()).unwrap()).unwrap().value;
        worst_js = worst_js.max((got - support::js_oracle(&p, &q)).abs());
    }
    let same_class = ContrastiveBatch::new(
        vec![vec![0.3, -1.0, 2.0], vec![1.5, 0.2, -0.7]],
        vec![InstanceLabel::Foreground(1); 2],
        &[],
        0.1,
    )
    .unwrap();
    let pair_zero = contrastive_loss(&same_class).unwrap().value == 0.0;
    let p = ProbVec::new(vec![0.2, 0.5, 0.3]).unwrap();
    let self_zero = js_consistency(&p, &p).unwrap().value == 0.0;
    let disjoint = js_consistency(&ProbVec::new(vec![0.6, 0.4, 0.0, 0.0]).unwrap(), &ProbVec::new(vec![0.0, 0.0, 0.1, 0.9]).unwrap())
        .unwrap()
        .value;
    let disjoint_ok = (disjoint - std::f64::consts::LN_2).abs() < 1e-12;
    outcome(
        worst_ct <= 1e-10 && worst_js <= 1e-12 && pair_zero && self_zero && disjoint_ok,
        format!(
            "contrastive max err {worst_ct:.1e}, JS max err {worst_js:.1e}, |Z|=2 zero {pair_zero}, JS(p,p) zero {self_zero}, disjoint JS - ln2 = {:.1e}",
            disjoint - std::f64::consts::LN_2
        ),
    )
}

fn positive_set_rule() -> Outcome {
    let mut r = rng::stream(5, &[]);
    let mut violations = 0usize;
    for _ in 0..10_000 {
        let n = r.random_range(2..=12);
        let (labels, pairs) = random_labels(n, &mut r);
        let feats = vec![vec![1.0, 0.0]; n];
        let batch = ContrastiveBatch::new(feats, labels.clone(), &pairs, 0.1).unwrap();
        let sets = build_positive_sets(&batch);
        for (i, set) in sets.iter().enumerate() {
            let expected: Vec<usize> = match labels[i] {
                InstanceLabel::Foreground(_) => (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect(),
                InstanceLabel::Background => pairs
                    .iter()
                    .filter_map(|&(a, b)| if a == i { Some(b) } else if b == i { Some(a) } else { None })
                    .collect(),
            };
            let mut got = set.clone();
            got.sort_unstable();
            let bg_leak = labels[i] == InstanceLabel::Background
                && got.iter().any(|&j| labels[j] == InstanceLabel::Background && batch.partner[i] != Some(j));
            if got != expected || bg_leak {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations over 10000 configurations"))
}

fn annotation_preservation() -> Outcome {
    let synth = SynthConfig::default();
    let cfg = OamixConfig::default();
    let (mut changed, mut outside) = (0usize, 0usize);
    for run in 0..1000u64 {
        let sample = generate_scene(&mut rng::stream(run, &[1]), &synth, format!("scene{run}"));
        let out = oamix(&sample, &mut rng::stream(run, &[2]), &cfg).unwrap();
        if serde_json::to_vec(&out.annotations).unwrap() != serde_json::to_vec(&sample.annotations).unwrap() {
            changed += 1;
        }
        let (w, h) = (sample.image.width(), sample.image.height());
        let owner = precedence_owner(&out.plan.regions, w, h);
        let augs = region_augmentations(&sample, &out.plan);
        for y in 0..h {
            for x in 0..w {
                let (o, m) = (sample.image.pixel(x, y), out.image.pixel(x, y));
                let a = augs[owner[y * w + x]].pixel(x, y);
                if (0..3).any(|c| m[c] < o[c].min(a[c]) || m[c] > o[c].max(a[c])) {
                    outside += 1;
                }
            }
        }
    }
    outcome(
        changed == 0 && outside == 0,
        format!("1000 runs: {changed} with changed annotations, {outside} pixels outside their mixing interval"),
    )
}

fn saliency_oracle() -> Outcome {
    let mut r = rng::stream(7, &[]);
    let cfg = SaliencyConfig::default();
    let mut worst = 0f64;
    for _ in 0..50 {
        let data = (0..64 * 64 * 3).map(|_| r.random::<f32>()).collect();
        let img = ImageBuffer::from_data(64, 64, data).unwrap();
        let fast = spectral_residual_map(&img, &cfg).unwrap();
        let slow = support::saliency_oracle(&img, cfg.box_size, cfg.epsilon, cfg.sigma_divisor);
        worst = fast.values.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    let img = ImageBuffer::from_data(64, 64, (0..64 * 64 * 3).map(|_| r.random::<f32>()).collect()).unwrap();
    let map = spectral_residual_map(&img, &cfg).unwrap();
    let mut worst_score = 0f64;
    for _ in 0..200 {
        let (w, h) = (r.random_range(1..=64u32), r.random_range(1..=64u32));
        let b = BBox::new(r.random_range(0..=64 - w), r.random_range(0..=64 - h), w, h);
        let mut sum = 0.0;
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                sum += map.get(x as usize, y as usize);
            }
        }
        worst_score = worst_score.max((object_saliency_score(&map, &b).unwrap() - sum / b.area() as f64).abs());
    }
    outcome(
        worst <= 1e-4 && worst_score <= 1e-12,
        format!("map max err {worst:.1e} over 50 images (tol 1e-4); box score max err {worst_score:.1e}"),
    )
}

fn metric_correctness() -> Outcome {
    let mut r = rng::stream(8, &[]);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let (c, s) = (r.random_range(1..=15), r.random_range(1..=5));
        let p: Vec<Vec<f64>> = (0..c).map(|_| (0..s).map(|_| r.random::<f64>()).collect()).collect();
        let mean = p.iter().flatten().sum::<f64>() / (c * s) as f64;
        worst = worst.max((mpc(&p).unwrap() - mean).abs());
    }
    let mut mismatches = 0usize;
    for _ in 0..2000 {
        let images = r.random_range(1..=3);
        let mut rand_box = || {
            let (x, y) = (r.random_range(0..12u32), r.random_range(0..12u32));
            (x, y, r.random_range(2..8u32), r.random_range(2..8u32))
        };
        let boxes: Vec<_> = (0..12).map(|_| rand_box()).collect();
        let gts: Vec<GroundTruth> = boxes[..r.random_range(0..=5)]
            .iter()
            .map(|&(x, y, w, h)| GroundTruth { image: r.random_range(0..images), bbox: BBox::new(x, y, w, h) })
            .collect();
        let dets: Vec<ScoredBox> = boxes[5..5 + r.random_range(0..=7)]
            .iter()
            .map(|&(x, y, w, h)| ScoredBox {
                image: r.random_range(0..images),
                bbox: BBox::new(x, y, w, h),
                score: r.random_range(0..5) as f64 / 4.0,
            })
            .collect();
        if average_precision(&dets, &gts, 0.5) != support::ap_oracle(&dets, &gts, 0.5) {
            mismatches += 1;
        }
    }
    outcome(
        worst <= 1e-12 && mismatches == 0,
        format!("mPC max err {worst:.1e} on matrices up to 15x5; AP mismatches {mismatches}/2000"),
    )
}

fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    out
}

/// Reduced pipeline: small splits, few epochs, three corruption kinds.
fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.synth.train = 96;
    cfg.synth.test = 32;
    cfg.train.epochs = 2;
    cfg.eval.kinds = vec![CorruptionKind::GaussianNoise, CorruptionKind::MotionBlur, CorruptionKind::Jpeg];
    cfg.repro.seeds = vec![0, 1];
    cfg
}

fn determinism() -> Outcome {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    repro(&cfg, a.path()).unwrap();
    repro(&cfg, b.path()).unwrap();
    let (ha, hb) = (hash_tree(&a.path().join("repro")), hash_tree(&b.path().join("repro")));
    let differing = ha.iter().filter(|(k, v)| hb.get(*k) != Some(v)).count() + hb.keys().filter(|k| !ha.contains_key(*k)).count();
    outcome(
        differing == 0 && !ha.is_empty(),
        format!("{} files hashed twice, {differing} differ (reduced config: 96/32 scenes, 2 epochs, 3 kinds, 2 seeds)", ha.len()),
    )
}

fn flat(b: &oadg::detector::Detector) -> Vec<u64> {
    b.params.to_flat().iter().map(|v| v.to_bits()).collect()
}

/// Compares the two-view micro batch at lambda = 0 against a single-view
/// batch holding the originals followed by the augmented views.
fn both_views_matches_plain_ce() -> (bool, f64) {
    let (orig, aug, plans, params) = micro_batch(21);
    let cfg = micro_config();
    let hyper = Hyper { lambda: 0.0, ..Default::default() };
    let paired = PairedBatch { originals: &orig, augmented: &aug, plans: &plans };
    let (l_oa, g_oa) = batch_loss(&params, &paired, &hyper, &cfg, Mode::Oadg).unwrap();
    let doubled: Vec<CellView> = orig.iter().chain(&aug).cloned().collect();
    let single = PairedBatch { originals: &doubled, augmented: &[], plans: &[] };
    let (l_ce, g_ce) = batch_loss(&params, &single, &hyper, &cfg, Mode::Baseline).unwrap();
    let err = g_oa
        .to_flat()
        .iter()
        .zip(g_ce.to_flat())
        .map(|(a, b)| (a - b).abs())
        .fold((l_oa.total - l_ce.total).abs(), f64::max);
    (err <= 1e-12, err)
}

fn reduction_sanity() -> Outcome {
    let (train_set, _) = generate_splits(&SynthConfig { train: 64, test: 0, ..Default::default() }, 3);
    let cfg = TrainConfig { epochs: 3, batch_size: 16, det_on_augmented: false, eval_every_epoch: false, ..Default::default() };
    let zero = Hyper { lambda: 0.0, ..Default::default() };
    let oamix_cfg = OamixConfig::default();
    let (base, base_log) = train(&train_set, None, Mode::Baseline, 3, &cfg, &zero, &oamix_cfg).unwrap();
    let (oa, oa_log) = train(&train_set, None, Mode::Oadg, 3, &cfg, &zero, &oamix_cfg).unwrap();
    let same_params = flat(&base) == flat(&oa);
    let same_steps = base_log.steps.iter().zip(&oa_log.steps).all(|(a, b)| a.det.to_bits() == b.det.to_bits())
        && base_log.steps.len() == oa_log.steps.len();
    let (views_ok, views_err) = both_views_matches_plain_ce();
    outcome(
        same_params && same_steps && views_ok,
        format!(
            "det on original view: params bit-identical {same_params}, per-step L_det identical {same_steps} ({} steps); \
             det on both views: lambda=0 gradient equals plain CE on both views (max diff {views_err:.1e})",
            base_log.steps.len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let mut lines = Vec::new();
    let mut record = |n: usize, name: &str, o: Outcome| {
        let line = format!("criterion {n:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        println!("{line}");
        lines.push((o.pass, line));
    };
    record(3, "gradient correctness", gradient_correctness());
    record(4, "loss oracle equivalence", loss_oracles());
    record(5, "positive-set rule", positive_set_rule());
    record(6, "annotation preservation", annotation_preservation());
    record(7, "saliency oracle", saliency_oracle());
    record(8, "metric correctness", metric_correctness());
    record(9, "determinism", determinism());
    record(10, "reduction sanity", reduction_sanity());
    let (gain, guard) = robustness_and_guardrail();
    record(1, "robustness gain", gain);
    record(2, "clean guardrail", guard);

    lines.sort_by_key(|(_, l)| l[10..12].trim().parse::<usize>().unwrap());
    println!("\nsummary:");
    for (_, l) in &lines {
        println!("{l}");
    }
    let failed: Vec<&String> = lines.iter().filter(|(p, _)| !p).map(|(_, l)| l).collect();
    assert!(failed.is_empty(), "failed gates:\n{}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
}
