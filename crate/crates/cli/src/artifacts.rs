//! Output artifacts and their readers.
//!
//! Numbers are written in Rust's shortest-round-trip decimal form, so a
//! posterior saved to CSV reloads to bit-identical `f64` values and a
//! prediction made from a saved fit matches the monolithic run exactly.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use misalign_core::basis::KnotSet;
use misalign_core::model::ChainState;
use misalign_core::sampler::PosteriorSamples;
use misalign_core::simulate::SimDataset;
use misalign_core::{KnotSet64, PosteriorSamples64, PredictionResult64};

use crate::commands::Contiguity;
use crate::errors::{io_err, CliError};
use crate::manifest::{read_to_string, write_pretty_json};

pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FIT_FILE: &str = "fit.json";
pub const PREDICTION_FILE: &str = "prediction.csv";
pub const STUDY_REPORT_FILE: &str = "study-report.json";
pub const TABLE_FILE: &str = "comparison-table.txt";
pub const SENSITIVITY_FILE: &str = "knot-sensitivity.json";

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// One retained draw per row: chain index, draw index within the chain,
/// then every parameter in `[beta..., delta..., sigma2, sigma2_eta, phi]`
/// order under its display name.
pub fn write_posterior_csv(path: &Path, samples: &PosteriorSamples64) -> Result<(), CliError> {
    let names = PosteriorSamples::<f64>::parameter_names(samples.p, samples.k);
    let mut text = String::from("chain,draw");
    for name in &names {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    for (c, chain) in samples.chains.iter().enumerate() {
        for (d, state) in chain.iter().enumerate() {
            text.push_str(&format!("{c},{d}"));
            for v in state.beta.iter().chain(state.delta.iter()) {
                text.push(',');
                text.push_str(&fmt(*v));
            }
            for v in [state.sigma2, state.sigma2_eta, state.phi] {
                text.push(',');
                text.push_str(&fmt(v));
            }
            text.push('\n');
        }
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Rebuild a posterior from `posterior.csv` for prediction. The latent mu
/// is not serialized (prediction never touches it), so reloaded states
/// carry an empty mu vector.
pub fn load_posterior_csv(path: &Path, p: usize, k: usize) -> Result<PosteriorSamples64, CliError> {
    let data_err = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;

    let expected: Vec<String> = ["chain".to_string(), "draw".to_string()]
        .into_iter()
        .chain(PosteriorSamples::<f64>::parameter_names(p, k))
        .collect();
    let headers = reader.headers().map_err(|e| data_err(format!("cannot read header: {e}")))?;
    let actual: Vec<String> = headers.iter().map(str::to_string).collect();
    if actual != expected {
        return Err(data_err(format!(
            "posterior columns do not match the saved fit (expected {} columns for p={p}, k={k})",
            expected.len()
        )));
    }

    let mut chains: Vec<Vec<ChainState<f64>>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data_err(format!("row {}: {e}", line + 2)))?;
        if record.len() != expected.len() {
            return Err(data_err(format!("row {} has {} fields", line + 2, record.len())));
        }
        let num = |idx: usize| -> Result<f64, CliError> {
            record[idx]
                .parse()
                .map_err(|_| data_err(format!("row {}: bad number `{}`", line + 2, &record[idx])))
        };
        let chain: usize = record[0]
            .parse()
            .map_err(|_| data_err(format!("row {}: bad chain index `{}`", line + 2, &record[0])))?;
        if chain > chains.len() {
            return Err(data_err(format!("row {}: chain indices must be contiguous", line + 2)));
        }
        if chain == chains.len() {
            chains.push(Vec::new());
        }
        let beta = DVector::from_iterator(p, (2..2 + p).map(num).collect::<Result<Vec<_>, _>>()?);
        let delta =
            DVector::from_iterator(k, (2 + p..2 + p + k).map(num).collect::<Result<Vec<_>, _>>()?);
        chains[chain].push(ChainState {
            beta,
            delta,
            mu: DVector::zeros(0),
            sigma2: num(2 + p + k)?,
            sigma2_eta: num(2 + p + k + 1)?,
            phi: num(2 + p + k + 2)?,
        });
    }
    if chains.iter().any(Vec::is_empty) || chains.is_empty() {
        return Err(data_err("no retained draws".into()));
    }
    Ok(PosteriorSamples {
        chains,
        p,
        k,
        acceptance_rate: 1.0,
        summaries: Vec::new(),
        mean_mu: DVector::zeros(0),
        rhat: None,
    })
}

#[derive(Serialize)]
struct ParameterRow<'a> {
    name: &'a str,
    mean: f64,
    sd: f64,
    q025: f64,
    q50: f64,
    q975: f64,
}

/// Pooled per-parameter posterior summaries plus chain diagnostics.
pub fn write_summary_json(path: &Path, samples: &PosteriorSamples64) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct SummaryDoc<'a> {
        chains: usize,
        draws_per_chain: usize,
        acceptance_rate: f64,
        rhat: Option<&'a Vec<f64>>,
        parameters: Vec<ParameterRow<'a>>,
    }
    let parameters = samples
        .summaries
        .iter()
        .map(|ps| ParameterRow {
            name: &ps.name,
            mean: ps.summary.mean,
            sd: ps.summary.sd,
            q025: ps.summary.q025,
            q50: ps.summary.q50,
            q975: ps.summary.q975,
        })
        .collect();
    let doc = SummaryDoc {
        chains: samples.chains.len(),
        draws_per_chain: samples.chains.first().map_or(0, Vec::len),
        acceptance_rate: samples.acceptance_rate,
        rhat: samples.rhat.as_ref(),
        parameters,
    };
    write_pretty_json(path, &doc)
}

/// Everything `predict` needs to transfer a saved fit to a new layer: the
/// shared knots, the design column names, and the dimensions that pin the
/// posterior CSV layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub id_col: String,
    pub y_col: String,
    pub x_cols: Vec<String>,
    pub contiguity: Contiguity,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub seed: u64,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub chains: usize,
    pub knots: KnotsRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnotsRecord {
    pub points: Vec<[f64; 2]>,
    pub tau: f64,
    pub rows: usize,
    pub cols: usize,
}

impl KnotsRecord {
    pub fn from_knots(knots: &KnotSet64) -> Self {
        KnotsRecord {
            points: knots.points.iter().map(|&(x, y)| [x, y]).collect(),
            tau: knots.tau,
            rows: knots.rows,
            cols: knots.cols,
        }
    }

    pub fn to_knots(&self) -> KnotSet64 {
        KnotSet {
            points: self.points.iter().map(|&[x, y]| (x, y)).collect(),
            tau: self.tau,
            rows: self.rows,
            cols: self.cols,
        }
    }
}

pub fn write_fit_json(path: &Path, record: &FitRecord) -> Result<(), CliError> {
    write_pretty_json(path, record)
}

pub fn load_fit_json(path: &Path) -> Result<FitRecord, CliError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: not a saved fit: {e}", path.display())))
}

/// Per-target-unit predictive summaries.
pub fn write_prediction_csv(path: &Path, result: &PredictionResult64) -> Result<(), CliError> {
    let mut text = String::from("id,mean,sd,q025,q50,q975\n");
    for (id, s) in result.ids.iter().zip(&result.summaries) {
        text.push_str(&format!(
            "{id},{},{},{},{},{}\n",
            fmt(s.mean),
            fmt(s.sd),
            fmt(s.q025),
            fmt(s.q50),
            fmt(s.q975)
        ));
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// One simulated replication as two CSVs: the fit layer with its observed
/// response and the target layer with the aggregated truth to score
/// against. Covariate columns are named x1, x2, ... (the intercept is
/// implicit).
pub fn write_dataset_csvs(dir: &Path, rep: usize, dataset: &SimDataset) -> Result<(), CliError> {
    let covariates = dataset.x_fit.ncols() - 1;
    let header = |value_col: &str| {
        let mut h = String::from("id");
        for j in 1..=covariates {
            h.push_str(&format!(",x{j}"));
        }
        h.push(',');
        h.push_str(value_col);
        h.push('\n');
        h
    };
    let table = |ids: Vec<&str>, x: &DMatrix<f64>, v: &DVector<f64>, value_col: &str| {
        let mut text = header(value_col);
        for (i, id) in ids.iter().enumerate() {
            text.push_str(id);
            for j in 1..x.ncols() {
                text.push(',');
                text.push_str(&fmt(x[(i, j)]));
            }
            text.push(',');
            text.push_str(&fmt(v[i]));
            text.push('\n');
        }
        text
    };

    let fit_path = dir.join(format!("rep-{rep:02}-fit.csv"));
    let fit_text = table(dataset.fit_layer.ids(), &dataset.x_fit, &dataset.y, "y");
    fs::write(&fit_path, fit_text).map_err(|e| io_err(&fit_path, e))?;

    let target_path = dir.join(format!("rep-{rep:02}-target.csv"));
    let target_text =
        table(dataset.target_layer.ids(), &dataset.x_target, &dataset.truth_target, "truth");
    fs::write(&target_path, target_text).map_err(|e| io_err(&target_path, e))
}
