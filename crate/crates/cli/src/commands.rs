//! The five subcommands and their resolved configurations.
//!
//! Each run resolves its flags (or a replayed manifest) into a plain
//! serializable config, executes deterministically from that config plus
//! the hashed input files, and writes its artifacts into `--out`. Nothing
//! here mutates an input.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use misalign_core::basis::{place_knots, place_knots_with_count, JitterPolicy};
use misalign_core::geometry::ContiguityRule;
use misalign_core::model::ModelSpec;
use misalign_core::predict::{build_prediction_basis, predictive_draws};
use misalign_core::sampler::{run_chain, InitStrategy, SamplerConfig};
use misalign_core::simulate::{build_dataset, knot_sensitivity, run_study, SimConfig};
use misalign_core::{basis, derive_seed, KnotSet64, PosteriorSamples64, PriorSpec64};

use crate::artifacts::{
    load_fit_json, load_posterior_csv, write_dataset_csvs, write_fit_json, write_posterior_csv,
    write_prediction_csv, write_summary_json, FitRecord, KnotsRecord, FIT_FILE, POSTERIOR_FILE,
    PREDICTION_FILE, SENSITIVITY_FILE, STUDY_REPORT_FILE, SUMMARY_FILE, TABLE_FILE,
};
use crate::errors::{io_err, CliError};
use crate::inputs::{join_csv, load_layer, JoinedData};
use crate::manifest::{require_exists, write_pretty_json, RunManifest};

/// Neighbourhood rule used to build a layer's adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Contiguity {
    /// Shared edge (the default).
    Rook,
    /// Shared edge or corner.
    Queen,
}

impl Contiguity {
    pub fn rule(self) -> ContiguityRule {
        match self {
            Contiguity::Rook => ContiguityRule::Rook,
            Contiguity::Queen => ContiguityRule::Queen,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the synthetic two-layer study and also write the simulated
    /// datasets themselves.
    Simulate(StudyArgs),
    /// Sample the hybrid-basis posterior on one areal layer.
    Fit(FitArgs),
    /// Push a fit through to a boundary-misaligned target layer.
    Predict(PredictArgs),
    /// Head-to-head study (hybrid vs truncated Moran basis), report only.
    Compare(StudyArgs),
    /// Repeat the study across several knot counts and tabulate accuracy
    /// against runtime.
    KnotsSensitivity(KnotsArgs),
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(args) => run_simulate(args),
        Command::Fit(args) => run_fit(args),
        Command::Predict(args) => run_predict(args),
        Command::Compare(args) => run_compare(args),
        Command::KnotsSensitivity(args) => run_knots_sensitivity(args),
    }
}

// ---------------------------------------------------------------------------
// Study-style subcommands: simulate, compare, knots-sensitivity.

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Replay a saved run-manifest.json; every flag except --out is taken
    /// from the manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Study configuration JSON; omitted fields take built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; replication k runs on a seed derived from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Gibbs iterations per fit.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Hybrid knot count (the baseline uses a matching rank).
    #[arg(long)]
    knots: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

impl StudyArgs {
    /// Resolve flags (or a manifest) into the full study configuration.
    fn resolve(&self, subcommand: &str) -> Result<SimConfig, CliError> {
        if let Some(path) = &self.manifest {
            let manifest = RunManifest::load(path)?;
            let cfg: SimConfig = manifest.config_as(subcommand)?;
            manifest.verify_inputs()?;
            return Ok(cfg);
        }
        let mut cfg = match &self.config {
            None => SimConfig::default(),
            Some(path) => {
                require_exists(path, "--config")?;
                let text = crate::manifest::read_to_string(path)?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::Config(format!("{}: bad study configuration: {e}", path.display()))
                })?
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(replications) = self.replications {
            cfg.replications = replications;
        }
        if let Some(iters) = self.iters {
            cfg.iterations = iters;
        }
        if let Some(burnin) = self.burnin {
            cfg.burnin = burnin;
        }
        if let Some(thin) = self.thin {
            cfg.thin = thin;
        }
        if let Some(knots) = self.knots {
            cfg.knots = knots;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_simulate(args: StudyArgs) -> Result<(), CliError> {
    let cfg = args.resolve("simulate")?;
    let out = prepare_out(&args.out)?;

    let datasets = out.join("datasets");
    fs::create_dir_all(&datasets).map_err(|e| io_err(&datasets, e))?;
    for rep in 0..cfg.replications {
        let dataset = build_dataset(&cfg, derive_seed(cfg.seed, rep as u64))?;
        write_dataset_csvs(&datasets, rep, &dataset)?;
        if rep == 0 {
            // both layers are fixed across replications; record them once
            write_pretty_json(&out.join("fit-layer.json"), &dataset.fit_layer.manifest())?;
            write_pretty_json(&out.join("target-layer.json"), &dataset.target_layer.manifest())?;
        }
    }

    let report = run_study(&cfg)?;
    write_pretty_json(&out.join(STUDY_REPORT_FILE), &report)?;
    let table = report.table();
    fs::write(out.join(TABLE_FILE), &table).map_err(|e| io_err(&out.join(TABLE_FILE), e))?;
    RunManifest::new("simulate", &cfg, &[])?.write(&out)?;
    print!("{table}");
    println!("datasets and reports written to {}", out.display());
    Ok(())
}

fn run_compare(args: StudyArgs) -> Result<(), CliError> {
    let cfg = args.resolve("compare")?;
    let out = prepare_out(&args.out)?;
    let report = run_study(&cfg)?;
    write_pretty_json(&out.join(STUDY_REPORT_FILE), &report)?;
    let table = report.table();
    fs::write(out.join(TABLE_FILE), &table).map_err(|e| io_err(&out.join(TABLE_FILE), e))?;
    RunManifest::new("compare", &cfg, &[])?.write(&out)?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct KnotsArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Knot counts to sweep, as fractions of the fit-layer cell count.
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.10, 0.15])]
    fractions: Vec<f64>,
}

/// Resolved knots-sensitivity configuration (study plus sweep points).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SensitivityConfig {
    sim: SimConfig,
    fractions: Vec<f64>,
}

fn run_knots_sensitivity(args: KnotsArgs) -> Result<(), CliError> {
    let cfg = if let Some(path) = &args.study.manifest {
        let manifest = RunManifest::load(path)?;
        let cfg: SensitivityConfig = manifest.config_as("knots-sensitivity")?;
        manifest.verify_inputs()?;
        cfg
    } else {
        let sim = args.study.resolve("knots-sensitivity")?;
        SensitivityConfig { sim, fractions: args.fractions.clone() }
    };
    let out = prepare_out(&args.study.out)?;

    let rows = knot_sensitivity(&cfg.sim, &cfg.fractions)?;
    write_pretty_json(&out.join(SENSITIVITY_FILE), &rows)?;

    let mut table = format!(
        "{:>10} {:>7} {:>14} {:>16} {:>10}\n",
        "fraction", "knots", "hybrid rmse", "baseline rmse", "seconds"
    );
    for row in &rows {
        table.push_str(&format!(
            "{:>10.3} {:>7} {:>14.4} {:>16.4} {:>10.1}\n",
            row.fraction, row.knots, row.hybrid_rmse_mean, row.baseline_rmse_mean,
            row.runtime_seconds
        ));
    }
    fs::write(out.join(TABLE_FILE), &table).map_err(|e| io_err(&out.join(TABLE_FILE), e))?;
    RunManifest::new("knots-sensitivity", &cfg, &[])?.write(&out)?;
    print!("{table}");
    Ok(())
}

// ---------------------------------------------------------------------------
// fit

/// Flags describing a fit; shared verbatim by `predict` when it fits
/// inline instead of loading a saved fit.
#[derive(Debug, Args)]
pub struct FitFlags {
    /// Fit-layer GeoJSON: a FeatureCollection of polygons, each carrying
    /// the id property named by --id-col.
    #[arg(long)]
    layer: Option<PathBuf>,
    /// CSV with exactly one row per fit-layer unit.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Unit id: CSV column and GeoJSON property name.
    #[arg(long, default_value = "id")]
    id_col: String,
    /// Response column in the CSV.
    #[arg(long, default_value = "y")]
    y_col: String,
    /// Comma-separated covariate columns; an intercept is always added.
    #[arg(long, value_delimiter = ',')]
    x_cols: Vec<String>,
    /// Exact knot count for the bi-square layer of the basis.
    #[arg(long, conflicts_with = "knot_fraction")]
    knots: Option<usize>,
    /// Knot count as a fraction of the unit count (default 0.1).
    #[arg(long)]
    knot_fraction: Option<f64>,
    #[arg(long, value_enum)]
    contiguity: Option<Contiguity>,
    /// Gibbs iterations per chain.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Replay a saved run-manifest.json; every flag except --out is taken
    /// from the manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    flags: FitFlags,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

/// Fully resolved fit configuration; what the manifest records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub layer: PathBuf,
    pub data: PathBuf,
    pub id_col: String,
    pub y_col: String,
    pub x_cols: Vec<String>,
    pub knots: Option<usize>,
    pub knot_fraction: f64,
    pub contiguity: Contiguity,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
}

impl FitFlags {
    fn resolve(&self) -> Result<FitConfig, CliError> {
        let layer = self
            .layer
            .as_ref()
            .ok_or_else(|| CliError::Config("--layer is required".into()))?;
        let data =
            self.data.as_ref().ok_or_else(|| CliError::Config("--data is required".into()))?;
        require_exists(layer, "--layer")?;
        require_exists(data, "--data")?;
        let knot_fraction = self.knot_fraction.unwrap_or(0.1);
        if !(knot_fraction > 0.0 && knot_fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "--knot-fraction {knot_fraction} outside (0, 1]"
            )));
        }
        if self.knots == Some(0) {
            return Err(CliError::Config("--knots must be at least 1".into()));
        }
        Ok(FitConfig {
            layer: layer.clone(),
            data: data.clone(),
            id_col: self.id_col.clone(),
            y_col: self.y_col.clone(),
            x_cols: self.x_cols.clone(),
            knots: self.knots,
            knot_fraction,
            contiguity: self.contiguity.unwrap_or(Contiguity::Rook),
            iterations: self.iters.unwrap_or(5000),
            burnin: self.burnin.unwrap_or(1000),
            thin: self.thin.unwrap_or(1),
            chains: self.chains.unwrap_or(1),
            seed: self.seed.unwrap_or(20240901),
        })
    }
}

/// A completed in-process fit, ready to be written out or predicted from.
struct FittedModel {
    samples: PosteriorSamples64,
    knots: KnotSet64,
    n: usize,
}

impl FittedModel {
    fn record(&self, cfg: &FitConfig) -> FitRecord {
        FitRecord {
            id_col: cfg.id_col.clone(),
            y_col: cfg.y_col.clone(),
            x_cols: cfg.x_cols.clone(),
            contiguity: cfg.contiguity,
            n: self.n,
            p: self.samples.p,
            k: self.samples.k,
            seed: cfg.seed,
            iterations: cfg.iterations,
            burnin: cfg.burnin,
            thin: cfg.thin,
            chains: cfg.chains,
            knots: KnotsRecord::from_knots(&self.knots),
        }
    }
}

fn execute_fit(cfg: &FitConfig) -> Result<FittedModel, CliError> {
    let layer = load_layer(&cfg.layer, cfg.contiguity.rule(), &cfg.id_col)?;
    let ids: Vec<String> = layer.ids().iter().map(|s| s.to_string()).collect();
    let joined = join_csv(&cfg.data, &ids, &cfg.id_col, &cfg.x_cols, Some(&cfg.y_col))?;
    let y = joined.y.expect("join_csv returns y when a response column is requested");

    let n = layer.n();
    let knots = match cfg.knots {
        Some(r) => {
            if r >= n {
                return Err(CliError::Config(format!(
                    "--knots {r} must be below the layer's {n} units"
                )));
            }
            place_knots_with_count(&layer, r)?
        }
        None => place_knots(&layer, cfg.knot_fraction)?,
    };
    let policy = JitterPolicy::default();
    let hybrid = basis::hybrid_basis(&layer, &joined.x, &knots, &policy)?;

    let priors = PriorSpec64::default_for(joined.x.ncols());
    let spec = ModelSpec::new(joined.x, y, hybrid, priors)?;
    let sampler_cfg = SamplerConfig {
        iterations: cfg.iterations,
        burnin: cfg.burnin,
        thin: cfg.thin,
        seed: cfg.seed,
        chains: cfg.chains,
        init: InitStrategy::LeastSquares,
    };
    sampler_cfg.validate::<f64>()?;
    let samples = run_chain(&spec, &sampler_cfg)?;
    Ok(FittedModel { samples, knots, n })
}

fn write_fit_artifacts(out: &Path, cfg: &FitConfig, fitted: &FittedModel) -> Result<(), CliError> {
    write_posterior_csv(&out.join(POSTERIOR_FILE), &fitted.samples)?;
    write_summary_json(&out.join(SUMMARY_FILE), &fitted.samples)?;
    write_fit_json(&out.join(FIT_FILE), &fitted.record(cfg))
}

fn run_fit(args: FitArgs) -> Result<(), CliError> {
    let cfg: FitConfig = if let Some(path) = &args.manifest {
        let manifest = RunManifest::load(path)?;
        let cfg = manifest.config_as("fit")?;
        manifest.verify_inputs()?;
        cfg
    } else {
        args.flags.resolve()?
    };
    let out = prepare_out(&args.out)?;

    let fitted = execute_fit(&cfg)?;
    write_fit_artifacts(&out, &cfg, &fitted)?;
    RunManifest::new("fit", &cfg, &[&cfg.layer, &cfg.data])?.write(&out)?;

    let show = |name: &str| match fitted.samples.summary_for(name) {
        Some(s) => format!("{name} = {:.4} ({:.4}, {:.4})", s.mean, s.q025, s.q975),
        None => format!("{name} = ?"),
    };
    println!(
        "fit: {} units, {} retained draws x {} chain(s)",
        fitted.n,
        fitted.samples.chains.first().map_or(0, Vec::len),
        fitted.samples.chains.len()
    );
    println!("  {}", show("σ²"));
    println!("  {}", show("σ²_η"));
    println!("  {}", show("φ"));
    println!("artifacts written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// predict

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Replay a saved run-manifest.json; every flag except --out is taken
    /// from the manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory holding a saved fit (fit.json + posterior.csv). Omit it
    /// to fit inline from the fit flags instead.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[command(flatten)]
    flags: FitFlags,
    /// Target-layer GeoJSON (same id property as the fit layer).
    #[arg(long)]
    target_layer: Option<PathBuf>,
    /// CSV of covariates for every target unit.
    #[arg(long)]
    target_data: Option<PathBuf>,
    /// Contiguity for the target layer; defaults to the fit's rule.
    #[arg(long, value_enum)]
    target_contiguity: Option<Contiguity>,
    /// Seed for the compositional predictive draws (independent of the
    /// fit seed; keep it equal across runs you want byte-identical).
    #[arg(long, default_value_t = 20240902)]
    predict_seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

/// Where the posterior comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum FitSource {
    /// Load fit.json + posterior.csv from a previous `fit` run.
    Saved { dir: PathBuf },
    /// Run the whole fit in-process first.
    Inline { fit: FitConfig },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictConfig {
    source: FitSource,
    target_layer: PathBuf,
    target_data: PathBuf,
    target_contiguity: Option<Contiguity>,
    predict_seed: u64,
}

impl PredictArgs {
    fn resolve(&self) -> Result<PredictConfig, CliError> {
        let target_layer = self
            .target_layer
            .as_ref()
            .ok_or_else(|| CliError::Config("--target-layer is required".into()))?;
        let target_data = self
            .target_data
            .as_ref()
            .ok_or_else(|| CliError::Config("--target-data is required".into()))?;
        require_exists(target_layer, "--target-layer")?;
        require_exists(target_data, "--target-data")?;
        let source = match &self.fit {
            Some(dir) => {
                require_exists(&dir.join(FIT_FILE), "--fit")?;
                require_exists(&dir.join(POSTERIOR_FILE), "--fit")?;
                FitSource::Saved { dir: dir.clone() }
            }
            None => FitSource::Inline { fit: self.flags.resolve()? },
        };
        Ok(PredictConfig {
            source,
            target_layer: target_layer.clone(),
            target_data: target_data.clone(),
            target_contiguity: self.target_contiguity,
            predict_seed: self.predict_seed,
        })
    }
}

fn run_predict(args: PredictArgs) -> Result<(), CliError> {
    let cfg: PredictConfig = if let Some(path) = &args.manifest {
        let manifest = RunManifest::load(path)?;
        let cfg = manifest.config_as("predict")?;
        manifest.verify_inputs()?;
        cfg
    } else {
        args.resolve()?
    };
    let out = prepare_out(&args.out)?;

    // Gather the posterior, the shared knots, and the design schema, either
    // from disk or by fitting right here.
    let mut inputs: Vec<PathBuf> = vec![cfg.target_layer.clone(), cfg.target_data.clone()];
    let (record, samples) = match &cfg.source {
        FitSource::Saved { dir } => {
            let fit_path = dir.join(FIT_FILE);
            let posterior_path = dir.join(POSTERIOR_FILE);
            let record = load_fit_json(&fit_path)?;
            let samples = load_posterior_csv(&posterior_path, record.p, record.k)?;
            inputs.push(fit_path);
            inputs.push(posterior_path);
            (record, samples)
        }
        FitSource::Inline { fit } => {
            let fitted = execute_fit(fit)?;
            write_fit_artifacts(&out, fit, &fitted)?;
            inputs.push(fit.layer.clone());
            inputs.push(fit.data.clone());
            (fitted.record(fit), fitted.samples)
        }
    };

    let rule = cfg.target_contiguity.unwrap_or(record.contiguity).rule();
    let target = load_layer(&cfg.target_layer, rule, &record.id_col)?;
    let target_ids: Vec<String> = target.ids().iter().map(|s| s.to_string()).collect();
    let JoinedData { x, .. } =
        join_csv(&cfg.target_data, &target_ids, &record.id_col, &record.x_cols, None)?;

    let knots = record.knots.to_knots();
    let policy = JitterPolicy::default();
    let star = build_prediction_basis(&target, &x, &knots, &policy)?;
    let result = predictive_draws(&samples, &x, &star.lambda, &target_ids, cfg.predict_seed)?;

    write_prediction_csv(&out.join(PREDICTION_FILE), &result)?;
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    RunManifest::new("predict", &cfg, &input_refs)?.write(&out)?;

    let means = result.predictive_means();
    println!(
        "predicted {} target units from {} posterior draws (mean range {:.4} to {:.4})",
        result.n_targets(),
        result.n_draws(),
        means.min(),
        means.max()
    );
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn prepare_out(path: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}
