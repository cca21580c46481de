//! Loading areal layers from GeoJSON and joining covariate/response CSVs
//! onto them by unit id. Inputs are only ever read, never modified.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use misalign_core::geometry::{load_geojson, ContiguityRule, GeoJsonOptions};
use misalign_core::ArealLayer64;

use crate::errors::CliError;

pub fn load_layer(
    path: &Path,
    rule: ContiguityRule,
    id_property: &str,
) -> Result<ArealLayer64, CliError> {
    let options = GeoJsonOptions { id_property: id_property.into(), rule, ..Default::default() };
    load_geojson(path, &options)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Covariates (and optionally a response) aligned to a layer's unit order.
pub struct JoinedData {
    /// Design matrix with a leading intercept column.
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
}

/// Read a CSV and join it to `layer_ids` on `id_col`. Every layer unit must
/// match exactly one row; leftover rows or missing units are an error that
/// names the offending ids. The design matrix gets an intercept column
/// prepended, then `x_cols` in the order given.
pub fn join_csv(
    path: &Path,
    layer_ids: &[String],
    id_col: &str,
    x_cols: &[String],
    y_col: Option<&str>,
) -> Result<JoinedData, CliError> {
    let data_err = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| data_err(format!("cannot read header row: {e}")))?
        .clone();
    let col_index = |name: &str| -> Result<usize, CliError> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            data_err(format!(
                "no column named `{name}`; available columns: {}",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let id_idx = col_index(id_col)?;
    let x_idx: Vec<usize> = x_cols.iter().map(|c| col_index(c)).collect::<Result<_, _>>()?;
    let y_idx = y_col.map(|c| col_index(c)).transpose()?;

    let mut rows: HashMap<String, (Vec<f64>, Option<f64>)> = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data_err(format!("row {}: {e}", line + 2)))?;
        let field = |idx: usize| -> Result<&str, CliError> {
            record
                .get(idx)
                .ok_or_else(|| data_err(format!("row {} is missing column {idx}", line + 2)))
        };
        let parse = |idx: usize| -> Result<f64, CliError> {
            let raw = field(idx)?;
            let value: f64 = raw.trim().parse().map_err(|_| {
                data_err(format!(
                    "row {}, column `{}`: cannot parse `{raw}` as a number",
                    line + 2,
                    &headers[idx]
                ))
            })?;
            if !value.is_finite() {
                return Err(data_err(format!(
                    "row {}, column `{}`: non-finite value {value}",
                    line + 2,
                    &headers[idx]
                )));
            }
            Ok(value)
        };

        let id = field(id_idx)?.trim().to_string();
        let xs: Vec<f64> = x_idx.iter().map(|&i| parse(i)).collect::<Result<_, _>>()?;
        let y = y_idx.map(parse).transpose()?;
        if rows.insert(id.clone(), (xs, y)).is_some() {
            return Err(data_err(format!("duplicate rows for id `{id}`")));
        }
    }

    let wanted: BTreeSet<&str> = layer_ids.iter().map(String::as_str).collect();
    let missing: Vec<&str> =
        layer_ids.iter().map(String::as_str).filter(|id| !rows.contains_key(*id)).collect();
    let mut extra: Vec<&String> = rows.keys().filter(|id| !wanted.contains(id.as_str())).collect();
    extra.sort();
    if !missing.is_empty() || !extra.is_empty() {
        let list = |ids: Vec<String>| -> String {
            let shown = ids.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
            if ids.len() > 10 {
                format!("{shown}, and {} more", ids.len() - 10)
            } else {
                shown
            }
        };
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!(
                "layer units with no CSV row: {}",
                list(missing.iter().map(|s| s.to_string()).collect())
            ));
        }
        if !extra.is_empty() {
            parts.push(format!(
                "CSV rows matching no layer unit: {}",
                list(extra.iter().map(|s| s.to_string()).collect())
            ));
        }
        return Err(data_err(format!("id join failed: {}", parts.join("; "))));
    }

    let n = layer_ids.len();
    let p = 1 + x_cols.len();
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut y = y_col.map(|_| DVector::<f64>::zeros(n));
    for (i, id) in layer_ids.iter().enumerate() {
        let (xs, yv) = &rows[id];
        x[(i, 0)] = 1.0;
        for (j, &v) in xs.iter().enumerate() {
            x[(i, j + 1)] = v;
        }
        if let Some(target) = y.as_mut() {
            target[i] = yv.expect("y column was requested, so every row parsed one");
        }
    }
    Ok(JoinedData { x, y })
}
