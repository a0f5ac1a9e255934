//! Command-line front end.
//!
//! Every command writes its outputs into `--out DIR` together with a
//! `manifest.json` run record; `xcan replay DIR/manifest.json` re-runs it.
//! Exit codes: 0 success, 2 usage error, 3 data or validation error,
//! 4 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::crossprod::{
    build_xtx, build_xxt, class_map, epsilon_floor, hard_threshold, subtract_min_baseline,
    CrossProducts, Mode, SymMatrix, ThresholdRule, DEFAULT_FLOOR_EPS,
};
use crate::error::{Result, XcanError};
use crate::gradients::{fd_check, random_instance, InstanceSpec};
use crate::io::{
    self, CrossProductProvenance, ModelRecord, RunManifest, FLATTEN_ORDER, MANIFEST_FILE,
};
use crate::model::{self, DataMatrix, PenaltyWeights};
use crate::optimizer::{fit, FitConfig};
use crate::pipeline::{
    autoscale, build_block_data, control_limits, simulate_spectra, OffBlockFill, Preprocessing,
    SimSpec, SpectraSpec, DEFAULT_COVERAGE,
};
use crate::plot::{self, ComponentPanel};

/// Environment variable consulted when no seed is given.
pub const SEED_ENV: &str = "XCAN_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "xcan",
    version,
    about = "Cross-product penalized component analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic block-structured data or spectra.
    Simulate(SimulateArgs),
    /// Build, threshold and floor cross-product matrices.
    Xprod(XprodArgs),
    /// Fit a penalized component model.
    Fit(FitArgs),
    /// Compare the analytic gradient with finite differences.
    Gradcheck(GradcheckArgs),
    /// Draw score and loading bar charts of a fitted model.
    Plot(PlotArgs),
    /// Per-component score control limits and flagged observations.
    Limits(LimitsArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SimKind {
    Blocks,
    Spectra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OffBlocks {
    Noisy,
    Zero,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "blocks")]
    kind: SimKind,
    #[arg(long)]
    seed: Option<u64>,
    /// Standard deviation of the additive noise.
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    #[arg(long, value_enum, default_value = "noisy")]
    offblocks: OffBlocks,
    /// Target mean absolute correlation between variables of a block.
    #[arg(long, default_value_t = 0.9)]
    corr: f64,
    /// Samples per class (spectra only).
    #[arg(long, default_value_t = 12)]
    per_class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum XprodKind {
    Xtx,
    Xxt,
    Both,
}

#[derive(Debug, Args)]
struct XprodArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    kind: XprodKind,
    /// Zero entries strictly inside (LO, HI).
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, conflicts_with = "positive_only")]
    threshold: Option<Vec<f64>>,
    /// Zero every entry below LEVEL.
    #[arg(long, value_name = "LEVEL", allow_negative_numbers = true)]
    positive_only: Option<f64>,
    /// Raise magnitudes below EPS to ±EPS.
    #[arg(long, value_name = "EPS")]
    floor: Option<f64>,
    /// Subtract column minima before thresholding.
    #[arg(long)]
    subtract_min: bool,
    /// Replace XXt by the same-class indicator of the labels in FILE.
    #[arg(long, value_name = "FILE")]
    class_map: Option<PathBuf>,
    /// Autoscale the data before building the matrices.
    #[arg(long)]
    autoscale: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// XtX file; all ones when omitted and the column penalty is off.
    #[arg(long)]
    xtx: Option<PathBuf>,
    /// XXt file; all ones when omitted and the row penalty is off.
    #[arg(long)]
    xxt: Option<PathBuf>,
    /// Key = value defaults, overridden by flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short = 'k')]
    components: Option<usize>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long, visible_alias = "lr")]
    lambda_r: Option<f64>,
    #[arg(long, visible_alias = "lc")]
    lambda_c: Option<f64>,
    #[arg(long)]
    nonneg: bool,
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    autoscale: bool,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    rel_loss_tol: Option<f64>,
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Keys accepted in a `fit --config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitFile {
    components: Option<usize>,
    lambda0: Option<f64>,
    lambda_r: Option<f64>,
    lambda_c: Option<f64>,
    nonneg: Option<bool>,
    baseline: Option<bool>,
    autoscale: Option<bool>,
    max_iters: Option<usize>,
    grad_tol: Option<f64>,
    rel_loss_tol: Option<f64>,
    memory: Option<usize>,
    starts: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 6)]
    m: usize,
    #[arg(long, default_value_t = 3)]
    components: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda0: f64,
    #[arg(long, visible_alias = "lr", default_value_t = 1.0)]
    lambda_r: f64,
    #[arg(long, visible_alias = "lc", default_value_t = 1.0)]
    lambda_c: f64,
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    nonneg: bool,
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Check at a fitted model instead of a random instance (needs --data).
    #[arg(long, requires = "data")]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    xtx: Option<PathBuf>,
    #[arg(long)]
    xxt: Option<PathBuf>,
    /// Also write report.json and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Limits CSV from `xcan limits`, drawn on the score panels.
    #[arg(long)]
    limits: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LimitsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_COVERAGE)]
    coverage: f64,
    /// Also draw the score plots with the limit lines.
    #[arg(long)]
    plot: bool,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (without the program name), runs the command and returns
/// the process exit code. Normal output goes to `out`, errors to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(
        std::iter::once(OsString::from("xcan")).chain(args.iter().cloned()),
    ) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let raw: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli.command, raw, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command, raw: Vec<String>, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a, raw, out),
        Command::Xprod(a) => cmd_xprod(a, raw, out),
        Command::Fit(a) => cmd_fit(a, raw, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, raw, out),
        Command::Plot(a) => cmd_plot(a, raw, out),
        Command::Limits(a) => cmd_limits(a, raw, out),
        Command::Replay(a) => cmd_replay(a, out),
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| XcanError::io("<stdout>", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| XcanError::io(dir, e))
}

/// Flag, then `XCAN_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, fallback: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(fallback) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            XcanError::invalid(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))
        }),
        Err(_) => Ok(0),
    }
}

/// Recorded arguments with the resolved seed spelled out.
fn with_seed(mut raw: Vec<String>, seed: u64) -> Vec<String> {
    if !raw
        .iter()
        .any(|a| a == "--seed" || a.starts_with("--seed="))
    {
        raw.push("--seed".into());
        raw.push(seed.to_string());
    }
    raw
}

fn cmd_simulate(a: SimulateArgs, raw: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let seed = resolve_seed(a.seed, None)?;
    create_dir(&a.out)?;
    let data_path = a.out.join("data.csv");
    let mut manifest = RunManifest::new("simulate", with_seed(raw, seed));
    manifest.seed = Some(seed);
    match a.kind {
        SimKind::Blocks => {
            let spec = SimSpec {
                noise_sd: a.noise,
                corr_level: a.corr,
                offblocks: match a.offblocks {
                    OffBlocks::Noisy => OffBlockFill::Noisy,
                    OffBlocks::Zero => OffBlockFill::Zero,
                },
                seed,
                ..SimSpec::default()
            };
            let (x, truth) = build_block_data(&spec)?;
            io::write_data_csv(&data_path, &x)?;
            let truth_path = a.out.join("truth.csv");
            let mut text = String::from("axis,label,group\n");
            for (label, g) in x.row_labels().iter().zip(&truth.row_groups) {
                text.push_str(&format!("row,{label},{}\n", g + 1));
            }
            for (label, g) in x.col_labels().iter().zip(&truth.col_groups) {
                text.push_str(&format!("column,{label},{}\n", g + 1));
            }
            fs::write(&truth_path, text).map_err(|e| XcanError::io(&truth_path, e))?;
            say(
                out,
                format_args!(
                    "wrote {}x{} block data to {}",
                    x.n_obs(),
                    x.n_vars(),
                    data_path.display()
                ),
            )?;
        }
        SimKind::Spectra => {
            let spec = SpectraSpec {
                per_class: a.per_class,
                seed,
                ..SpectraSpec::default()
            };
            let s = simulate_spectra(&spec)?;
            io::write_data_csv(&data_path, &s.data)?;
            io::write_labels(a.out.join("classes.txt"), &s.classes)?;
            say(
                out,
                format_args!(
                    "wrote {}x{} spectra to {}",
                    s.data.n_obs(),
                    s.data.n_vars(),
                    data_path.display()
                ),
            )?;
        }
    }
    io::write_json(a.out.join(MANIFEST_FILE), &manifest)
}

fn load_data(
    path: &Path,
    scale: bool,
    manifest: &mut RunManifest,
) -> Result<(DataMatrix, Preprocessing)> {
    manifest.add_input(path)?;
    let x = io::read_data_csv(path)?;
    let (x, pre) = if scale {
        autoscale(&x)?
    } else {
        (x, Preprocessing::none())
    };
    manifest.preprocessing = Some(pre.clone());
    Ok((x, pre))
}

fn cmd_xprod(a: XprodArgs, raw: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let mut manifest = RunManifest::new("xprod", raw);
    let (x, _) = load_data(&a.data, a.autoscale, &mut manifest)?;
    let eps = a.floor.unwrap_or(DEFAULT_FLOOR_EPS);
    let rule = match (&a.threshold, a.positive_only) {
        (Some(t), _) => Some(ThresholdRule::new(t[0], t[1], eps)?),
        (None, Some(level)) => Some(ThresholdRule::positive_only(level)?.with_floor(eps)?),
        (None, None) => None,
    };
    let post = |m: SymMatrix| -> Result<SymMatrix> {
        let m = if a.subtract_min {
            subtract_min_baseline(&m)
        } else {
            m
        };
        let m = match &rule {
            Some(r) => hard_threshold(&m, r),
            None => m,
        };
        match a.floor {
            Some(e) => epsilon_floor(&m, e),
            None => Ok(m),
        }
    };

    create_dir(&a.out)?;
    let mut provenance = CrossProductProvenance {
        xtx: Vec::new(),
        xxt: Vec::new(),
    };
    if matches!(a.kind, XprodKind::Xtx | XprodKind::Both) {
        if a.class_map.is_some() && a.kind == XprodKind::Xtx {
            return Err(XcanError::invalid("--class-map applies to XXt only"));
        }
        let m = post(build_xtx(&x)?)?;
        io::write_cross_product(a.out.join("xtx.csv"), &m)?;
        say(
            out,
            format_args!(
                "xtx: {}x{}, min |entry| {:.3e}",
                m.side(),
                m.side(),
                m.min_abs()
            ),
        )?;
        provenance.xtx = m.history().to_vec();
    }
    if matches!(a.kind, XprodKind::Xxt | XprodKind::Both) {
        let m = match &a.class_map {
            Some(path) => {
                manifest.add_input(path)?;
                let labels = io::read_labels(path)?;
                if labels.len() != x.n_obs() {
                    return Err(XcanError::dims("class labels", x.n_obs(), labels.len()));
                }
                let m = class_map(&labels)?;
                match a.floor {
                    Some(e) => epsilon_floor(&m, e)?,
                    None => m,
                }
            }
            None => post(build_xxt(&x)?)?,
        };
        io::write_cross_product(a.out.join("xxt.csv"), &m)?;
        say(
            out,
            format_args!(
                "xxt: {}x{}, min |entry| {:.3e}",
                m.side(),
                m.side(),
                m.min_abs()
            ),
        )?;
        provenance.xxt = m.history().to_vec();
    }
    manifest.cross_products = Some(provenance);
    io::write_json(a.out.join(MANIFEST_FILE), &manifest)
}

fn read_config(path: &Path) -> Result<FitFile> {
    let text = fs::read_to_string(path).map_err(|e| XcanError::io(path, e))?;
    toml::from_str(&text).map_err(|e| XcanError::parse(path, e.message().to_string()))
}

fn cmd_fit(a: FitArgs, raw: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let mut manifest = RunManifest::new("fit", Vec::new());
    let file = match &a.config {
        Some(path) => {
            manifest.add_input(path)?;
            read_config(path)?
        }
        None => FitFile::default(),
    };
    let seed = resolve_seed(a.seed, file.seed)?;
    manifest.args = with_seed(raw, seed);
    manifest.seed = Some(seed);

    let components = a.components.or(file.components).ok_or_else(|| {
        XcanError::invalid("number of components is required (--components or config)")
    })?;
    let mut cfg = FitConfig::new(components);
    cfg.weights = PenaltyWeights::new(
        a.lambda0.or(file.lambda0).unwrap_or(1.0),
        a.lambda_r.or(file.lambda_r).unwrap_or(0.0),
        a.lambda_c.or(file.lambda_c).unwrap_or(0.0),
    )?;
    cfg.nonneg = a.nonneg || file.nonneg.unwrap_or(false);
    cfg.with_baseline = a.baseline || file.baseline.unwrap_or(false);
    cfg.max_iters = a.max_iters.or(file.max_iters).unwrap_or(cfg.max_iters);
    cfg.grad_tol = a.grad_tol.or(file.grad_tol).unwrap_or(cfg.grad_tol);
    cfg.rel_loss_tol = a
        .rel_loss_tol
        .or(file.rel_loss_tol)
        .unwrap_or(cfg.rel_loss_tol);
    cfg.memory = a.memory.or(file.memory).unwrap_or(cfg.memory);
    cfg.starts = a.starts.or(file.starts).unwrap_or(cfg.starts);
    cfg.seed = seed;
    cfg.validate()?;
    let scale = a.autoscale || file.autoscale.unwrap_or(false);

    let (x, pre) = load_data(&a.data, scale, &mut manifest)?;
    let xtx = load_cross_product(
        a.xtx.as_deref(),
        Mode::Variables,
        x.n_vars(),
        cfg.weights.lambda_c,
        &mut manifest,
    )?;
    let xxt = load_cross_product(
        a.xxt.as_deref(),
        Mode::Observations,
        x.n_obs(),
        cfg.weights.lambda_r,
        &mut manifest,
    )?;
    let xp = CrossProducts::new(xtx, xxt)?;
    let provenance = CrossProductProvenance {
        xtx: xp.xtx.history().to_vec(),
        xxt: xp.xxt.history().to_vec(),
    };

    let result = fit(&x, &xp, &cfg)?;
    let final_loss = result.final_loss();
    manifest.cross_products = Some(provenance.clone());
    manifest.fit = Some(cfg.clone());
    manifest.model = Some(ModelRecord {
        components,
        n_obs: x.n_obs(),
        n_vars: x.n_vars(),
        baseline: cfg.with_baseline,
        flatten_order: FLATTEN_ORDER.to_string(),
        weights: cfg.weights,
        preprocessing: pre,
        cross_products: provenance,
        termination: Some(result.termination),
        iterations: Some(result.iterations),
        explained_variance: Some(result.explained_variance),
        final_loss: Some(final_loss),
        row_labels: x.row_labels().to_vec(),
        col_labels: x.col_labels().to_vec(),
    });
    io::save_model(&a.out, &result.model, &manifest)?;
    io::write_trace_csv(a.out.join("trace.csv"), &result.trace)?;

    say(
        out,
        format_args!(
            "explained_variance={:.2}%",
            100.0 * result.explained_variance
        ),
    )?;
    say(
        out,
        format_args!("loss={}", io::format_float(final_loss.total)),
    )?;
    say(out, format_args!("iterations={}", result.iterations))?;
    say(out, format_args!("termination={:?}", result.termination))
}

fn load_cross_product(
    path: Option<&Path>,
    mode: Mode,
    side: usize,
    weight: f64,
    manifest: &mut RunManifest,
) -> Result<SymMatrix> {
    match path {
        Some(p) => {
            manifest.add_input(p)?;
            io::read_cross_product(p, mode)
        }
        None if weight == 0.0 => Ok(SymMatrix::uniform(side, mode)),
        None => Err(XcanError::invalid(format!(
            "a {} file is required when its penalty weight is nonzero",
            mode.short_name()
        ))),
    }
}

fn cmd_gradcheck(a: GradcheckArgs, raw: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let seed = resolve_seed(a.seed, None)?;
    let mut manifest = RunManifest::new("gradcheck", with_seed(raw, seed));
    manifest.seed = Some(seed);
    let w = PenaltyWeights::new(a.lambda0, a.lambda_r, a.lambda_c)?;
    let (x, m, xp) = match &a.model {
        Some(dir) => {
            let (m, _) = io::load_model(dir)?;
            for f in [MANIFEST_FILE, "U.csv", "S.csv", "P.csv"] {
                manifest.add_input(dir.join(f))?;
            }
            let data = a
                .data
                .as_deref()
                .expect("clap enforces --data with --model");
            let (x, _) = load_data(data, false, &mut manifest)?;
            let xtx = load_cross_product(
                a.xtx.as_deref(),
                Mode::Variables,
                x.n_vars(),
                w.lambda_c,
                &mut manifest,
            )?;
            let xxt = load_cross_product(
                a.xxt.as_deref(),
                Mode::Observations,
                x.n_obs(),
                w.lambda_r,
                &mut manifest,
            )?;
            (x, m, CrossProducts::new(xtx, xxt)?)
        }
        None => random_instance(&InstanceSpec {
            n_obs: a.n,
            n_vars: a.m,
            components: a.components,
            baseline: a.baseline,
            nonneg: a.nonneg,
            seed,
        })?,
    };
    let report = fd_check(&x, &m, &xp, &w, a.step)?;
    let pass = report.max_rel_err < a.tol;
    say(out, format_args!("max_rel_err={:e}", report.max_rel_err))?;
    say(
        out,
        format_args!("worst_coordinate={}", report.worst_coordinate),
    )?;
    say(out, format_args!("analytic={:e}", report.analytic))?;
    say(out, format_args!("numeric={:e}", report.numeric))?;
    say(out, format_args!("tol={:e}", a.tol))?;
    say(
        out,
        format_args!("status={}", if pass { "PASS" } else { "FAIL" }),
    )?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        io::write_json(dir.join("report.json"), &report)?;
        io::write_json(dir.join(MANIFEST_FILE), &manifest)?;
    }
    if pass {
        Ok(())
    } else {
        Err(XcanError::Numerical(format!(
            "gradient check failed: max relative error {:e} at {} is not below {:e}",
            report.max_rel_err, report.worst_coordinate, a.tol
        )))
    }
}

fn load_model_inputs(
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(model::FactorModel, ModelRecord)> {
    let (m, run) = io::load_model(dir)?;
    for f in [MANIFEST_FILE, "U.csv", "S.csv", "P.csv"] {
        manifest.add_input(dir.join(f))?;
    }
    if m.p0.is_some() {
        manifest.add_input(dir.join("p0.csv"))?;
    }
    let record = run.model.expect("load_model checks the model record");
    Ok((m, record))
}

fn cmd_plot(a: PlotArgs, raw: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let mut manifest = RunManifest::new("plot", raw);
    let (m, record) = load_model_inputs(&a.model, &mut manifest)?;
    let limits = match &a.limits {
        Some(path) => {
            manifest.add_input(path)?;
            Some(io::read_limits_csv(path)?)
        }
        None => None,
    };
    let ev = record.explained_variance.unwrap_or(f64::NAN);
    let panels = ComponentPanel::from_model(
        &m,
        &record.row_labels,
        &record.col_labels,
        ev,
        limits.as_deref(),
    )?;
    let written = plot::write_panels(&a.out, &panels)?;
    for p in &written {
        say(out, format_args!("wrote {}", p.display()))?;
    }
    io::write_json(a.out.join(MANIFEST_FILE), &manifest)
}

fn cmd_limits(a: LimitsArgs, raw: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let mut manifest = RunManifest::new("limits", raw);
    manifest.coverage = Some(a.coverage);
    let (m, record) = load_model_inputs(&a.model, &mut manifest)?;
    let limits = control_limits(&model::scores(&m), a.coverage)?;
    create_dir(&a.out)?;
    io::write_limits_csv(a.out.join("limits.csv"), &limits, &record.row_labels)?;
    for l in &limits {
        let labels: Vec<&str> = l
            .flagged
            .iter()
            .map(|&i| record.row_labels[i].as_str())
            .collect();
        say(
            out,
            format_args!(
                "component={} lo={:.6e} hi={:.6e} flagged={}",
                l.component + 1,
                l.lo,
                l.hi,
                labels.join(";")
            ),
        )?;
    }
    if a.plot {
        let ev = record.explained_variance.unwrap_or(f64::NAN);
        let panels = ComponentPanel::from_model(
            &m,
            &record.row_labels,
            &record.col_labels,
            ev,
            Some(&limits),
        )?;
        plot::write_panels(&a.out, &panels)?;
    }
    io::write_json(a.out.join(MANIFEST_FILE), &manifest)
}

fn cmd_replay(a: ReplayArgs, out: &mut dyn Write) -> Result<()> {
    let manifest: RunManifest = io::read_json(&a.manifest)?;
    manifest.verify_inputs()?;
    let mut args = manifest.args.clone();
    if let Some(dir) = &a.out {
        let dir = dir.to_string_lossy().into_owned();
        match args.iter().position(|x| x == "--out") {
            Some(i) if i + 1 < args.len() => args[i + 1] = dir,
            _ => {
                args.retain(|x| !x.starts_with("--out="));
                args.push("--out".into());
                args.push(dir);
            }
        }
    }
    let cli = Cli::try_parse_from(std::iter::once("xcan".to_string()).chain(args.iter().cloned()))
        .map_err(|e| {
            XcanError::parse(
                &a.manifest,
                format!("recorded arguments no longer parse: {e}"),
            )
        })?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(XcanError::invalid(
            "a replay manifest cannot replay another replay",
        ));
    }
    execute(cli.command, args, out)
}
