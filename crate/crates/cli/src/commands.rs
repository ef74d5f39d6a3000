use std::path::{Path, PathBuf};

use cutlayer::diagnostics::{bench_size, gradcheck as run_gradcheck, BenchEntry};
use cutlayer::formats::{decode_cwf, parse_pgm};
use cutlayer::graph::GridGraph;
use cutlayer::learn::{centered_square_target, fit_cut_weights, FitConfig};
use cutlayer::oracles::{cut_value, maxflow_mincut};
use cutlayer::partition::{compare_with_hungarian, CutLayer, PartitionMasks};
use cutlayer::segment::{seeded_weights, SeedSpec};
use serde::{Deserialize, Serialize};

use crate::output::{emit, read, read_text, with_suffix, write, write_masks, Failure};

pub const SIZE_CAP: usize = 256;

fn check_cap(height: usize, width: usize, override_cap: bool) -> Result<(), Failure> {
    if !override_cap && height.max(width) > SIZE_CAP {
        return Err(Failure::input(format!(
            "{height}x{width} exceeds the {SIZE_CAP}-pixel side cap; pass --override-size-cap to proceed"
        )));
    }
    Ok(())
}

fn paths(list: &[PathBuf]) -> Vec<String> {
    list.iter().map(|p| p.display().to_string()).collect()
}

#[derive(Serialize)]
struct CutReport {
    height: usize,
    width: usize,
    gamma: f64,
    tau: f64,
    foreground_pixels: usize,
    rounded_cut_value: f64,
    oracle_cut_value: f64,
    matches_oracle: bool,
    outputs: Vec<String>,
}

/// Foreground is the source side and mask 0; mask 1 comes from the same
/// weights with source and terminal swapped.
pub fn cut(image: &Path, seeds: &Path, gamma: f64, tau: f64, out: &Path, override_cap: bool) -> Result<(), Failure> {
    let img = parse_pgm(&read(image)?)?;
    check_cap(img.height, img.width, override_cap)?;
    let spec = SeedSpec::from_json(&read_text(seeds)?)?;
    let weights = seeded_weights(&img, &spec)?;
    let layer = CutLayer::new(img.height, img.width, gamma)?;
    let masks = layer.masks(&[weights.clone(), weights.swapped_terminals()], tau)?;

    let g = GridGraph::new(img.height, img.width)?;
    let labels: Vec<bool> = masks.argmax().iter().map(|&i| i == 0).collect();
    let oracle = maxflow_mincut(&g, &weights)?;
    let outputs = write_masks(out, &masks)?;
    let report = CutReport {
        height: img.height,
        width: img.width,
        gamma,
        tau,
        foreground_pixels: labels.iter().filter(|&&l| l).count(),
        rounded_cut_value: cut_value(&g, &weights, &labels),
        oracle_cut_value: oracle.value,
        matches_oracle: labels == oracle.pixel_labels(&g),
        outputs: paths(&outputs),
    };
    emit(&report, Some((out, "_stats.json")))
}

#[derive(Serialize)]
struct KpartitionReport {
    k: usize,
    height: usize,
    width: usize,
    gamma: f64,
    tau: f64,
    outputs: Vec<String>,
}

pub fn kpartition(files: &[PathBuf], gamma: f64, tau: f64, out: &Path, override_cap: bool) -> Result<(), Failure> {
    let fields = files
        .iter()
        .map(|f| decode_cwf(&read(f)?).map_err(|e| Failure::input(format!("{}: {e}", f.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    let (h, w) = (fields[0].height(), fields[0].width());
    check_cap(h, w, override_cap)?;
    let masks = cutlayer::partition::k_partition_masks(&fields, gamma, tau)?;
    let outputs = write_masks(out, &masks)?;
    let report = KpartitionReport {
        k: fields.len(),
        height: h,
        width: w,
        gamma,
        tau,
        outputs: paths(&outputs),
    };
    emit(&report, Some((out, "_stats.json")))
}

pub fn gradcheck(h: usize, w: usize, gamma: f64, trials: usize, seed: u64, out: Option<&Path>) -> Result<(), Failure> {
    let report = run_gradcheck(h, w, gamma, trials, seed)?;
    emit(&report, out.map(|p| (p, ".json")))?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::numerical(format!(
            "max relative error {:.3e} exceeds {:.0e}",
            report.max_relative_error, report.tolerance
        )))
    }
}

#[derive(Serialize)]
struct BenchReport {
    gamma: f64,
    repeats: usize,
    sizes: Vec<BenchEntry>,
    /// `t(side_{i+1}) / t(side_i)` of median per-solve times.
    solve_time_ratios: Vec<f64>,
}

pub fn bench(sizes: &[usize], gamma: f64, repeats: usize, out: Option<&Path>) -> Result<(), Failure> {
    if sizes.is_empty() {
        return Err(Failure::input("no sizes given"));
    }
    let entries = sizes
        .iter()
        .map(|&s| bench_size(s, gamma, repeats))
        .collect::<Result<Vec<_>, _>>()?;
    let solve_time_ratios = entries
        .windows(2)
        .map(|p| p[1].solve_seconds_median / p[0].solve_seconds_median)
        .collect();
    let report = BenchReport {
        gamma,
        repeats,
        sizes: entries,
        solve_time_ratios,
    };
    emit(&report, out.map(|p| (p, ".json")))
}

#[derive(Serialize)]
struct MatchReport {
    k: usize,
    gamma: f64,
    tau: f64,
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
    argmax: Vec<usize>,
    hungarian: Vec<usize>,
    agree: bool,
}

pub fn matching(cost_path: &Path, gamma: f64, tau: f64, out: Option<&Path>) -> Result<(), Failure> {
    let cost: Vec<Vec<f64>> = serde_json::from_str(&read_text(cost_path)?)
        .map_err(|e| Failure::input(format!("{}: {e}", cost_path.display())))?;
    let cmp = compare_with_hungarian(&cost, gamma, tau)?;
    let report = MatchReport {
        k: cost.len(),
        gamma,
        tau,
        m: cmp.m.m,
        argmax: cmp.argmax,
        hungarian: cmp.hungarian,
        agree: cmp.agree,
    };
    emit(&report, out.map(|p| (p, ".json")))
}

/// Target of a fit run.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TargetSpec {
    /// Centered square of the given side as class 0, the rest as class 1.
    Square(usize),
    /// The masks of the initial weights, a stationary point.
    Initial,
    /// Explicit `k×H×W` masks, mask-major.
    Masks(Vec<f64>),
}

#[derive(Debug, Deserialize)]
struct FitFile {
    #[serde(flatten)]
    config: FitConfig,
    target: TargetSpec,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    config: &'a FitConfig,
    initial_loss: f64,
    final_loss: f64,
    mean_iou: f64,
    report: &'a cutlayer::learn::FitReport,
}

pub fn fit(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let file: FitFile = serde_json::from_str(&read_text(config)?)
        .map_err(|e| Failure::input(format!("{}: {e}", config.display())))?;
    let mut cfg = file.config;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let target = match file.target {
        TargetSpec::Square(side) => {
            if cfg.k != 2 {
                return Err(Failure::input("a square target needs k = 2"));
            }
            centered_square_target(cfg.height, cfg.width, side)?
        }
        TargetSpec::Initial => CutLayer::new(cfg.height, cfg.width, cfg.gamma)?.masks(&cfg.initial_weights(), cfg.tau)?,
        TargetSpec::Masks(data) => PartitionMasks::new(cfg.k, cfg.height, cfg.width, data)?,
    };
    let report = fit_cut_weights(&target, &cfg)?;
    write_masks(out, &report.final_masks)?;
    write(&with_suffix(out, "_loss.csv"), report.loss_csv().as_bytes())?;
    let summary = FitSummary {
        config: &cfg,
        initial_loss: report.initial_loss(),
        final_loss: report.final_loss,
        mean_iou: report.mean_iou(),
        report: &report,
    };
    let text = serde_json::to_string_pretty(&crate::output::versioned(&summary)).expect("report serializes");
    write(&with_suffix(out, "_report.json"), format!("{text}\n").as_bytes())?;
    let brief = serde_json::json!({
        "schema_version": crate::output::SCHEMA_VERSION,
        "initial_loss": summary.initial_loss,
        "final_loss": summary.final_loss,
        "iou": report.iou,
        "mean_iou": summary.mean_iou,
    });
    println!("{}", serde_json::to_string_pretty(&brief).expect("json"));
    Ok(())
}
