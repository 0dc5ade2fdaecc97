//! Command-line front door. Every subcommand echoes its full parameter set
//! as a provenance JSON block so any output can be regenerated identically.
//!
//! Exit codes: 0 success, 1 validation or I/O error (machine-readable JSON
//! on stderr), 2 dynfilter-check tolerance breach.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use dwih_core::dynfilter::seeded_gradient_check;
use dwih_core::eval::{
    bootstrap_auc, evaluate_cohort, froc, image_quality, CohortReport, Connectivity, EvalCase,
    EvalConfig, FrocCase, ImageQuality, LesionAnnotation, OperatingPoints, BOOTSTRAP_RESAMPLES,
    MATCH_DIST_MM,
};
use dwih_core::hvol::{read_mask_file, read_volume_file, write_mask_file, write_volume_file};
use dwih_core::phantom::{generate_phantom, oracle_heatmap, t2w_placeholder, PhantomSpec};
use dwih_core::preprocess::{
    normalize_adc, normalize_dwi_b2000, normalize_t2w, resample, resample_mask, Interpolation,
    RANGE_CONSTANT,
};
use dwih_core::sidecar::{b_file_name, load_series, save_series};
use dwih_core::signal::{extrapolate_dwi, fit_adc};
use dwih_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dwih", version, about = "DWI fitting, phantoms and detection evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-voxel ADC/S0 maps from a DWI series sidecar
    FitAdc {
        /// Series sidecar (series.json)
        #[arg(long)]
        input: PathBuf,
        /// Directory receiving adc.hvol, s0.hvol, residual.hvol
        #[arg(long, alias = "out")]
        output: PathBuf,
    },
    /// Fit a series, then synthesize the signal volume at a target b-value
    Extrapolate {
        /// Series sidecar (series.json)
        #[arg(long)]
        input: PathBuf,
        /// b-value to synthesize, s/mm^2
        #[arg(long)]
        target_b: f64,
        /// Directory receiving b<target>.hvol
        #[arg(long, alias = "out")]
        output: PathBuf,
    },
    /// Resample volumes to the model grid and normalize them to [0, 1]
    Preprocess {
        /// T2-weighted volume (percentile normalization)
        #[arg(long)]
        t2w: Option<PathBuf>,
        /// ADC map (divide by 3000)
        #[arg(long)]
        adc: Option<PathBuf>,
        /// High-b DWI volume (median-of-b0 normalization, needs --b0 and --mask)
        #[arg(long)]
        dwi_b2000: Option<PathBuf>,
        /// b=0 volume backing the DWI normalization factor
        #[arg(long)]
        b0: Option<PathBuf>,
        /// Prostate mask defining where the b0 median is taken
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = RANGE_CONSTANT)]
        range_constant: f64,
        /// Output grid dimensions
        #[arg(long, value_delimiter = ',', default_value = "240,240,30")]
        target_dims: Vec<usize>,
        /// Output voxel spacing, mm
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.5,3.0")]
        target_spacing: Vec<f64>,
        #[arg(long, alias = "output")]
        out: PathBuf,
    },
    /// Generate a synthetic DWI series with known ground truth
    Phantom {
        /// Phantom description (JSON)
        #[arg(long)]
        spec: PathBuf,
        /// Acquisition b-values, comma separated
        #[arg(long, value_delimiter = ',')]
        b_values: Vec<f64>,
        #[arg(long, alias = "output")]
        out: PathBuf,
        /// Override the seed in the spec
        #[arg(long)]
        seed: Option<u64>,
        /// Also write a constant-level T2w placeholder (t2w.hvol)
        #[arg(long)]
        t2w: bool,
        /// Write heatmap.hvol scoring every lesion voxel at this value
        #[arg(long)]
        oracle_quality: Option<f64>,
        /// Spurious blob rate per volume for the oracle heatmap
        #[arg(long, default_value_t = 0.0)]
        oracle_fp_rate: f64,
        /// Blob placement seed (defaults to the phantom seed)
        #[arg(long)]
        oracle_seed: Option<u64>,
    },
    /// Run the detection protocol over a cohort of heatmaps
    Evaluate {
        /// Directory of <case>.hvol heatmaps
        #[arg(long)]
        heatmaps: PathBuf,
        /// Directory of <case>.hvol lesion masks plus optional <case>.json grade maps
        #[arg(long)]
        annotations: PathBuf,
        /// Candidate extraction threshold in (0, 1]
        #[arg(long)]
        threshold: f64,
        /// A case is positive when some lesion grade reaches this
        #[arg(long, default_value_t = 3)]
        pirads_min: u8,
        /// Candidate-to-lesion centroid gate, mm
        #[arg(long, default_value_t = MATCH_DIST_MM)]
        max_dist: f64,
        /// Connected-component neighbourhood: 6 or 26
        #[arg(long, default_value_t = 26)]
        connectivity: u8,
        #[arg(long, default_value_t = BOOTSTRAP_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, alias = "output")]
        out: PathBuf,
        /// Reconstructed volumes to score against --reference (mean quality)
        #[arg(long)]
        recon: Option<PathBuf>,
        /// Reference volumes matching --recon by file name
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Data range for PSNR/SSIM
        #[arg(long, default_value_t = 1.0)]
        data_range: f64,
    },
    /// Recompute the FROC curve from a saved evaluation report
    Froc {
        /// Report written by `evaluate`
        #[arg(long)]
        report: PathBuf,
        /// Explicit thresholds (default: every candidate peak plus 0 and 1)
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Output file (stdout when omitted)
        #[arg(long, alias = "output")]
        out: Option<PathBuf>,
    },
    /// Recompute the case-level AUC interval from a saved evaluation report
    BootstrapAuc {
        /// Report written by `evaluate`
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = BOOTSTRAP_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted)
        #[arg(long, alias = "output")]
        out: Option<PathBuf>,
    },
    /// Verify conditioning-layer gradients against finite differences
    DynfilterCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds to check
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Central-difference step
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Largest acceptable relative gradient error
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads() {
        return fail(&e);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!(
        "{}",
        json!({"error": {"kind": e.kind(), "message": e.to_string()}})
    );
    ExitCode::from(1)
}

/// DWIH_THREADS caps the worker pool; unset means rayon's default.
fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("DWIH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| Error::Input(format!("DWIH_THREADS must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(Error::Input("DWIH_THREADS must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::FitAdc { input, output } => cmd_fit_adc(&input, &output)?,
        Command::Extrapolate {
            input,
            target_b,
            output,
        } => cmd_extrapolate(&input, target_b, &output)?,
        Command::Preprocess {
            t2w,
            adc,
            dwi_b2000,
            b0,
            mask,
            range_constant,
            target_dims,
            target_spacing,
            out,
        } => cmd_preprocess(
            t2w.as_deref(),
            adc.as_deref(),
            dwi_b2000.as_deref(),
            b0.as_deref(),
            mask.as_deref(),
            range_constant,
            &target_dims,
            &target_spacing,
            &out,
        )?,
        Command::Phantom {
            spec,
            b_values,
            out,
            seed,
            t2w,
            oracle_quality,
            oracle_fp_rate,
            oracle_seed,
        } => cmd_phantom(
            &spec,
            &b_values,
            &out,
            seed,
            t2w,
            oracle_quality,
            oracle_fp_rate,
            oracle_seed,
        )?,
        Command::Evaluate {
            heatmaps,
            annotations,
            threshold,
            pirads_min,
            max_dist,
            connectivity,
            resamples,
            seed,
            out,
            recon,
            reference,
            data_range,
        } => cmd_evaluate(EvaluateArgs {
            heatmaps,
            annotations,
            threshold,
            pirads_min,
            max_dist,
            connectivity,
            resamples,
            seed,
            out,
            recon,
            reference,
            data_range,
        })?,
        Command::Froc {
            report,
            thresholds,
            out,
        } => cmd_froc(&report, thresholds.as_deref(), out.as_deref())?,
        Command::BootstrapAuc {
            report,
            resamples,
            seed,
            out,
        } => cmd_bootstrap_auc(&report, resamples, seed, out.as_deref())?,
        Command::DynfilterCheck {
            seed,
            count,
            step,
            tolerance,
        } => return cmd_dynfilter_check(seed, count, step, tolerance),
    }
    Ok(ExitCode::SUCCESS)
}

fn to_pretty(value: &impl Serialize) -> Result<String> {
    Ok(format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn write_json_file(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, to_pretty(value)?)?;
    Ok(())
}

fn emit_json(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match out {
        Some(path) => write_json_file(path, value),
        None => {
            print!("{}", to_pretty(value)?);
            Ok(())
        }
    }
}

fn triple<T: Copy>(what: &str, v: &[T]) -> Result<[T; 3]> {
    if v.len() != 3 {
        return Err(Error::Input(format!(
            "{what} needs exactly 3 comma-separated values, got {}",
            v.len()
        )));
    }
    Ok([v[0], v[1], v[2]])
}

/// Sorted stems of the `.hvol` files directly inside `dir`.
fn hvol_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("hvol") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// `--input` accepts either the sidecar file itself or its directory.
fn sidecar_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join("series.json")
    } else {
        input.to_path_buf()
    }
}

fn cmd_fit_adc(input: &Path, output: &Path) -> Result<()> {
    let (series, sidecar) = load_series(sidecar_path(input))?;
    let fit = fit_adc(&series)?;
    fs::create_dir_all(output)?;
    write_volume_file(output.join("adc.hvol"), &fit.adc)?;
    write_volume_file(output.join("s0.hvol"), &fit.s0)?;
    write_volume_file(output.join("residual.hvol"), &fit.residual_rms)?;
    write_json_file(
        &output.join("provenance.json"),
        &json!({
            "command": "fit-adc",
            "input": input,
            "b_values": series.b_values(),
            "low_b": series.meta().low_b,
            "high_b": series.meta().high_b,
            "source_provenance": sidecar.provenance,
        }),
    )
}

fn cmd_extrapolate(input: &Path, target_b: f64, output: &Path) -> Result<()> {
    let (series, sidecar) = load_series(sidecar_path(input))?;
    let fit = fit_adc(&series)?;
    let volume = extrapolate_dwi(&fit, target_b)?;
    fs::create_dir_all(output)?;
    let file = b_file_name(target_b);
    write_volume_file(output.join(&file), &volume)?;
    write_json_file(
        &output.join("provenance.json"),
        &json!({
            "command": "extrapolate",
            "input": input,
            "target_b": target_b,
            "file": file,
            "b_values": series.b_values(),
            "source_provenance": sidecar.provenance,
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_preprocess(
    t2w: Option<&Path>,
    adc: Option<&Path>,
    dwi_b2000: Option<&Path>,
    b0: Option<&Path>,
    mask: Option<&Path>,
    range_constant: f64,
    target_dims: &[usize],
    target_spacing: &[f64],
    out: &Path,
) -> Result<()> {
    let dims = triple("--target-dims", target_dims)?;
    let spacing = triple("--target-spacing", target_spacing)?;
    if t2w.is_none() && adc.is_none() && dwi_b2000.is_none() {
        return Err(Error::Input(
            "nothing to preprocess: pass --t2w, --adc or --dwi-b2000".into(),
        ));
    }
    fs::create_dir_all(out)?;
    let grid = |p: &Path| -> Result<_> {
        resample(&read_volume_file(p)?, dims, spacing, Interpolation::Trilinear)
    };
    if let Some(path) = t2w {
        write_volume_file(out.join("t2w.hvol"), &normalize_t2w(&grid(path)?)?)?;
    }
    if let Some(path) = adc {
        write_volume_file(out.join("adc.hvol"), &normalize_adc(&grid(path)?))?;
    }
    if let Some(path) = dwi_b2000 {
        let (b0_path, mask_path) = match (b0, mask) {
            (Some(b), Some(m)) => (b, m),
            _ => {
                return Err(Error::Input(
                    "--dwi-b2000 needs both --b0 and --mask".into(),
                ))
            }
        };
        let mask = resample_mask(&read_mask_file(mask_path)?, dims, spacing)?;
        let normalized = normalize_dwi_b2000(&grid(path)?, &grid(b0_path)?, &mask, range_constant)?;
        write_volume_file(out.join("dwi_b2000.hvol"), &normalized)?;
        write_mask_file(out.join("mask.hvol"), &mask)?;
    }
    write_json_file(
        &out.join("provenance.json"),
        &json!({
            "command": "preprocess",
            "t2w": t2w,
            "adc": adc,
            "dwi_b2000": dwi_b2000,
            "b0": b0,
            "mask": mask,
            "range_constant": range_constant,
            "target_dims": dims,
            "target_spacing": spacing,
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_phantom(
    spec_path: &Path,
    b_values: &[f64],
    out: &Path,
    seed: Option<u64>,
    t2w: bool,
    oracle_quality: Option<f64>,
    oracle_fp_rate: f64,
    oracle_seed: Option<u64>,
) -> Result<()> {
    let mut spec: PhantomSpec = serde_json::from_str(&fs::read_to_string(spec_path)?)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if oracle_quality.is_none() && (oracle_fp_rate != 0.0 || oracle_seed.is_some()) {
        return Err(Error::Input(
            "--oracle-fp-rate/--oracle-seed need --oracle-quality".into(),
        ));
    }
    let phantom = generate_phantom(&spec, b_values)?;
    let blob_seed = oracle_seed.unwrap_or(spec.seed);
    let provenance = json!({
        "command": "phantom",
        "spec_file": spec_path,
        "spec": spec,
        "b_values": b_values,
        "t2w": t2w,
        "oracle": oracle_quality.map(|q| json!({
            "quality": q,
            "fp_rate": oracle_fp_rate,
            "seed": blob_seed,
        })),
    });
    save_series(out, &phantom.series, Some(&phantom.annotation), Some(provenance))?;
    write_mask_file(out.join("gland.hvol"), &phantom.gland)?;
    write_volume_file(out.join("truth_adc.hvol"), &phantom.truth.adc)?;
    write_volume_file(out.join("truth_s0.hvol"), &phantom.truth.s0)?;
    if t2w {
        write_volume_file(out.join("t2w.hvol"), &t2w_placeholder(&spec)?)?;
    }
    if let Some(quality) = oracle_quality {
        let heat = oracle_heatmap(&phantom.annotation, quality, oracle_fp_rate, blob_seed)?;
        write_volume_file(out.join("heatmap.hvol"), &heat)?;
    }
    Ok(())
}

struct EvaluateArgs {
    heatmaps: PathBuf,
    annotations: PathBuf,
    threshold: f64,
    pirads_min: u8,
    max_dist: f64,
    connectivity: u8,
    resamples: usize,
    seed: u64,
    out: PathBuf,
    recon: Option<PathBuf>,
    reference: Option<PathBuf>,
    data_range: f64,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let connectivity = match args.connectivity {
        6 => Connectivity::Six,
        26 => Connectivity::TwentySix,
        other => {
            return Err(Error::Input(format!(
                "--connectivity must be 6 or 26, got {other}"
            )))
        }
    };
    let ids = hvol_ids(&args.heatmaps)?;
    if ids.is_empty() {
        return Err(Error::Input(format!(
            "no .hvol heatmaps in {}",
            args.heatmaps.display()
        )));
    }
    let mut cases = Vec::with_capacity(ids.len());
    for id in &ids {
        let heatmap = read_volume_file(args.heatmaps.join(format!("{id}.hvol")))?;
        let mask = read_mask_file(args.annotations.join(format!("{id}.hvol")))?;
        let grades_path = args.annotations.join(format!("{id}.json"));
        let pirads: BTreeMap<u8, u8> = if grades_path.exists() {
            serde_json::from_str(&fs::read_to_string(&grades_path)?)?
        } else {
            BTreeMap::new()
        };
        cases.push(EvalCase {
            id: id.clone(),
            heatmap,
            annotation: LesionAnnotation::new(mask, pirads)?,
        });
    }
    let config = EvalConfig {
        threshold: args.threshold,
        pirads_min: args.pirads_min,
        max_dist_mm: args.max_dist,
        connectivity,
        resamples: args.resamples,
        seed: args.seed,
    };
    let mut report = evaluate_cohort(&cases, &config)?;
    match (&args.recon, &args.reference) {
        (Some(recon), Some(reference)) => {
            report.report.quality = Some(mean_quality(recon, reference, args.data_range)?);
        }
        (None, None) => {}
        _ => {
            return Err(Error::Input(
                "--recon and --reference must be given together".into(),
            ))
        }
    }
    let mut doc = serde_json::to_value(&report)?;
    doc.as_object_mut().expect("report is an object").insert(
        "provenance".into(),
        json!({
            "command": "evaluate",
            "heatmaps": args.heatmaps,
            "annotations": args.annotations,
            "recon": args.recon,
            "reference": args.reference,
            "data_range": args.data_range,
        }),
    );
    write_json_file(&args.out, &doc)
}

/// Per-volume quality against same-named references, averaged in name order.
fn mean_quality(recon: &Path, reference: &Path, data_range: f64) -> Result<ImageQuality> {
    let ids = hvol_ids(recon)?;
    if ids.is_empty() {
        return Err(Error::Input(format!(
            "no .hvol volumes in {}",
            recon.display()
        )));
    }
    let (mut psnr, mut mse, mut ssim) = (0.0, 0.0, 0.0);
    for id in &ids {
        let a = read_volume_file(recon.join(format!("{id}.hvol")))?;
        let b = read_volume_file(reference.join(format!("{id}.hvol")))?;
        let q = image_quality(&a, &b, data_range)?;
        psnr += q.psnr;
        mse += q.mse;
        ssim += q.ssim;
    }
    let n = ids.len() as f64;
    Ok(ImageQuality {
        psnr: psnr / n,
        mse: mse / n,
        ssim: ssim / n,
    })
}

fn load_report(path: &Path) -> Result<CohortReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn cmd_froc(report_path: &Path, thresholds: Option<&[f64]>, out: Option<&Path>) -> Result<()> {
    let report = load_report(report_path)?;
    let cases: Vec<FrocCase> = report
        .cases
        .iter()
        .map(|c| FrocCase {
            n_lesions: c.n_lesions,
            candidates: c.candidates.clone(),
        })
        .collect();
    let curve = froc(&cases, thresholds)?;
    let operating_points = OperatingPoints::from_curve(&curve)?;
    emit_json(
        out,
        &json!({
            "provenance": {
                "command": "froc",
                "report": report_path,
                "thresholds": thresholds,
            },
            "froc": curve,
            "operating_points": operating_points,
        }),
    )
}

fn cmd_bootstrap_auc(
    report_path: &Path,
    resamples: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let report = load_report(report_path)?;
    let scores: Vec<f64> = report.cases.iter().map(|c| c.score).collect();
    let labels: Vec<bool> = report.cases.iter().map(|c| c.positive).collect();
    let boot = bootstrap_auc(&scores, &labels, resamples, seed)?;
    emit_json(
        out,
        &json!({
            "provenance": {
                "command": "bootstrap-auc",
                "report": report_path,
                "resamples": resamples,
                "seed": seed,
            },
            "auc": boot.auc,
            "ci": [boot.ci_low, boot.ci_high],
        }),
    )
}

fn cmd_dynfilter_check(seed: u64, count: u64, step: f64, tolerance: f64) -> Result<ExitCode> {
    if count == 0 {
        return Err(Error::Input("--count must be positive".into()));
    }
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::Input(format!("--step must be positive, got {step}")));
    }
    if !tolerance.is_finite() || tolerance <= 0.0 {
        return Err(Error::Input(format!(
            "--tolerance must be positive, got {tolerance}"
        )));
    }
    let end = seed
        .checked_add(count)
        .ok_or_else(|| Error::Input("seed range overflows".into()))?;
    let mut checks = Vec::new();
    let mut worst = 0.0f64;
    for s in seed..end {
        let report = seeded_gradient_check(s, step)?;
        worst = worst.max(report.max_rel_err);
        checks.push(json!({"seed": s, "report": report}));
    }
    let pass = worst < tolerance;
    print!(
        "{}",
        to_pretty(&json!({
            "provenance": {
                "command": "dynfilter-check",
                "seed": seed,
                "count": count,
                "step": step,
                "tolerance": tolerance,
            },
            "checks": checks,
            "max_rel_err": worst,
            "pass": pass,
        }))?
    );
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}
