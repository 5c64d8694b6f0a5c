//! End-to-end runs: synthesize, train both modes, corrupt, evaluate, compare.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, RunConfig};
use crate::corruptions::{corrupt_dataset, CorruptionConfig, CorruptionSpec};
use crate::detector::{evaluate, generate_splits, train, Detector, Mode, TrainLog};
use crate::error::Result;
use crate::metrics::EvalReport;
use crate::model::Dataset;

/// Evaluates every detector on the clean split and on each configured
/// corruption cell. Each corrupted split is generated once and shared.
pub fn benchmark(
    detectors: &[&Detector],
    test: &Dataset,
    eval: &EvalConfig,
    corruption: &CorruptionConfig,
    seed: u64,
    score_threshold: f64,
) -> Result<Vec<EvalReport>> {
    let clean = detectors
        .iter()
        .map(|d| Ok(evaluate(d, test, score_threshold)?.map))
        .collect::<Result<Vec<f64>>>()?;
    let mut p = vec![Vec::with_capacity(eval.kinds.len()); detectors.len()];
    for &kind in &eval.kinds {
        let mut rows = vec![Vec::with_capacity(eval.severities.len()); detectors.len()];
        for &severity in &eval.severities {
            let corrupted = corrupt_dataset(test, CorruptionSpec::new(kind, severity)?, seed, corruption)?;
            for (row, d) in rows.iter_mut().zip(detectors) {
                row.push(evaluate(d, &corrupted, score_threshold)?.map);
            }
        }
        for (m, row) in p.iter_mut().zip(rows) {
            m.push(row);
        }
    }
    let names: Vec<String> = eval.kinds.iter().map(|k| k.name().to_string()).collect();
    p.into_iter()
        .zip(clean)
        .map(|(m, c)| EvalReport::new(names.clone(), eval.severities.clone(), m, c))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub clean_map: f64,
    pub mpc: f64,
}

impl From<&EvalReport> for ModeSummary {
    fn from(r: &EvalReport) -> Self {
        Self { clean_map: r.clean_map, mpc: r.mpc }
    }
}

/// Everything produced for one mode of one seed.
#[derive(Debug, Clone)]
pub struct ModeRun {
    pub detector: Detector,
    pub log: TrainLog,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub baseline: ModeRun,
    pub oadg: ModeRun,
}

/// Synthesizes the splits for `seed`, trains both modes and benchmarks them.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let (train_set, test_set) = generate_splits(&cfg.synth, seed);
    let run = |mode| train(&train_set, Some(&test_set), mode, seed, &cfg.train, &cfg.hyper, &cfg.oamix);
    let (base_det, base_log) = run(Mode::Baseline)?;
    let (oadg_det, oadg_log) = run(Mode::Oadg)?;
    let mut reports =
        benchmark(&[&base_det, &oadg_det], &test_set, &cfg.eval, &cfg.corruption, seed, cfg.train.score_threshold)?
            .into_iter();
    let (base_report, oadg_report) = (reports.next().unwrap(), reports.next().unwrap());
    Ok(SeedRun {
        seed,
        baseline: ModeRun { detector: base_det, log: base_log, report: base_report },
        oadg: ModeRun { detector: oadg_det, log: oadg_log, report: oadg_report },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub baseline: ModeSummary,
    pub oadg: ModeSummary,
    pub delta_clean_map: f64,
    pub delta_mpc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Contents of `repro/report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub seeds: Vec<SeedResult>,
    pub mean_baseline: ModeSummary,
    pub mean_oadg: ModeSummary,
    pub mean_delta_clean_map: f64,
    pub mean_delta_mpc: f64,
    pub gates: Vec<Gate>,
    pub pass: bool,
}

impl ReproReport {
    pub fn from_results(seeds: Vec<SeedResult>, min_mpc_gain: f64, max_clean_drop: f64) -> Self {
        let n = seeds.len().max(1) as f64;
        let mean = |f: &dyn Fn(&SeedResult) -> f64| seeds.iter().map(f).sum::<f64>() / n;
        let mean_baseline =
            ModeSummary { clean_map: mean(&|s| s.baseline.clean_map), mpc: mean(&|s| s.baseline.mpc) };
        let mean_oadg = ModeSummary { clean_map: mean(&|s| s.oadg.clean_map), mpc: mean(&|s| s.oadg.mpc) };
        let mean_delta_mpc = mean(&|s| s.delta_mpc);
        let mean_delta_clean_map = mean(&|s| s.delta_clean_map);
        let gates = vec![
            Gate {
                name: "robustness_gain".into(),
                value: mean_delta_mpc,
                threshold: min_mpc_gain,
                pass: mean_delta_mpc >= min_mpc_gain,
            },
            Gate {
                name: "clean_guardrail".into(),
                value: mean_delta_clean_map,
                threshold: -max_clean_drop,
                pass: mean_delta_clean_map >= -max_clean_drop,
            },
        ];
        let pass = gates.iter().all(|g| g.pass);
        Self { seeds, mean_baseline, mean_oadg, mean_delta_clean_map, mean_delta_mpc, gates, pass }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn write_mode(run: &ModeRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    run.detector.save(&dir.join("params.json"))?;
    std::fs::write(dir.join("log.csv"), run.log.to_csv())?;
    write_json(&run.report, &dir.join("report.json"))?;
    std::fs::write(dir.join("matrix.csv"), run.report.matrix_csv())?;
    Ok(())
}

/// Runs every configured seed and writes the bundle under `out/repro/`:
/// `report.json` plus, per seed and mode, weights, training log and
/// evaluation report. Nothing is written when the config is invalid.
pub fn repro(cfg: &RunConfig, out: &Path) -> Result<ReproReport> {
    cfg.validate()?;
    let root = out.join("repro");
    std::fs::create_dir_all(&root)?;
    let mut results = Vec::new();
    for &offset in &cfg.repro.seeds {
        let seed = cfg.seed.wrapping_add(offset);
        let run = run_seed(cfg, seed)?;
        let dir = root.join(format!("seed-{seed}"));
        write_mode(&run.baseline, &dir.join("baseline"))?;
        write_mode(&run.oadg, &dir.join("oadg"))?;
        let (b, o) = (ModeSummary::from(&run.baseline.report), ModeSummary::from(&run.oadg.report));
        results.push(SeedResult {
            seed,
            baseline: b,
            oadg: o,
            delta_clean_map: o.clean_map - b.clean_map,
            delta_mpc: o.mpc - b.mpc,
        });
    }
    let report = ReproReport::from_results(results, cfg.repro.min_mpc_gain, cfg.repro.max_clean_drop);
    write_json(&report, &root.join("report.json"))?;
    Ok(report)
}
