use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Feature, FeatureKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// JSON sidecar describing a CSV: `{columns: [{name, kind}], sensitive, target}`.
/// Every listed column other than `sensitive` and `target` becomes a feature;
/// CSV columns not listed are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    pub sensitive: String,
    pub target: String,
}

impl Schema {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn parse_binary(cell: &str) -> Option<f64> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v == 0.0 || v == 1.0 => Some(v),
        _ => None,
    }
}

/// Reads a header-row CSV, one-hot expands categorical columns (levels in
/// sorted order) and extracts the binary sensitive and target columns.
/// Values are not standardized; see [`Standardizer`].
pub fn load_tabular(path: &Path, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    for name in [&schema.sensitive, &schema.target] {
        if !schema.columns.iter().any(|c| &c.name == name) {
            return Err(Error::InvalidArgument(format!("schema does not describe column `{name}`")));
        }
    }
    let s_pos = position(&schema.sensitive)?;
    let y_pos = position(&schema.target)?;
    let feature_specs: Vec<(&ColumnSpec, usize)> = schema
        .columns
        .iter()
        .filter(|c| c.name != schema.sensitive && c.name != schema.target)
        .map(|c| position(&c.name).map(|p| (c, p)))
        .collect::<Result<_>>()?;

    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    let cell_error = |row: usize, column: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        row: row + 1,
        column: column.to_string(),
        message,
    };

    let mut levels: Vec<Vec<String>> = Vec::with_capacity(feature_specs.len());
    let mut features = Vec::new();
    for (spec, pos) in &feature_specs {
        match spec.kind {
            ColumnKind::Categorical => {
                let set: BTreeSet<&str> = records.iter().map(|r| r.get(*pos).unwrap_or("").trim()).collect();
                if let Some(row) = records.iter().position(|r| r.get(*pos).is_none_or(|c| c.trim().is_empty())) {
                    return Err(cell_error(row, &spec.name, "missing value".into()));
                }
                let lv: Vec<String> = set.into_iter().map(str::to_string).collect();
                for l in &lv {
                    features.push(Feature {
                        name: format!("{}={}", spec.name, l),
                        source: spec.name.clone(),
                        kind: FeatureKind::Binary,
                    });
                }
                levels.push(lv);
            }
            kind => {
                features.push(Feature {
                    name: spec.name.clone(),
                    source: spec.name.clone(),
                    kind: if kind == ColumnKind::Binary {
                        FeatureKind::Binary
                    } else {
                        FeatureKind::Continuous
                    },
                });
                levels.push(Vec::new());
            }
        }
    }

    let n = records.len();
    let d = features.len();
    let mut x = Vec::with_capacity(n * d);
    let mut s = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (row, rec) in records.iter().enumerate() {
        let cell = |pos: usize, name: &str| -> Result<&str> {
            rec.get(pos).map(str::trim).ok_or_else(|| cell_error(row, name, "missing value".into()))
        };
        for ((spec, pos), lv) in feature_specs.iter().zip(&levels) {
            let raw = cell(*pos, &spec.name)?;
            match spec.kind {
                ColumnKind::Continuous => {
                    let v: f64 = raw
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| cell_error(row, &spec.name, format!("expected a number, found `{raw}`")))?;
                    x.push(v);
                }
                ColumnKind::Binary => {
                    x.push(parse_binary(raw).ok_or_else(|| cell_error(row, &spec.name, format!("expected 0 or 1, found `{raw}`")))?);
                }
                ColumnKind::Categorical => {
                    let hit = lv.binary_search_by(|l| l.as_str().cmp(raw)).expect("level collected above");
                    x.extend((0..lv.len()).map(|k| (k == hit) as u8 as f64));
                }
            }
        }
        for (pos, name, out) in [(s_pos, &schema.sensitive, &mut s), (y_pos, &schema.target, &mut y)] {
            let raw = cell(pos, name)?;
            out.push(parse_binary(raw).ok_or_else(|| cell_error(row, name, format!("expected 0 or 1, found `{raw}`")))?);
        }
    }
    Dataset::new(Tensor::matrix(n, d, x)?, Tensor::matrix(n, 1, s)?, Tensor::vector(y), features)
}

/// Writes `data` as a header-row CSV (features, then `s_name`, then
/// `y_name`) and returns the schema that reads it back unchanged.
pub fn write_tabular(data: &Dataset, path: &Path, s_name: &str, y_name: &str) -> Result<Schema> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = data.features.iter().map(|f| f.name.as_str()).collect();
    header.extend([s_name, y_name]);
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.s.data()[i].to_string());
        row.push(data.y.data()[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let mut columns: Vec<ColumnSpec> = data
        .features
        .iter()
        .map(|f| ColumnSpec {
            name: f.name.clone(),
            kind: match f.kind {
                FeatureKind::Continuous => ColumnKind::Continuous,
                FeatureKind::Binary => ColumnKind::Binary,
            },
        })
        .collect();
    for name in [s_name, y_name] {
        columns.push(ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Binary,
        });
    }
    Ok(Schema {
        columns,
        sensitive: s_name.to_string(),
        target: y_name.to_string(),
    })
}

/// Per-column mean/std of the continuous features, fitted on one split and
/// applied unchanged to the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub columns: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; a constant column keeps std 1.
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("cannot fit a standardizer".into()));
        }
        let columns: Vec<usize> = data
            .features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FeatureKind::Continuous)
            .map(|(j, _)| j)
            .collect();
        let n = data.len() as f64;
        let mut mean = Vec::with_capacity(columns.len());
        let mut std = Vec::with_capacity(columns.len());
        for &j in &columns {
            let m = (0..data.len()).map(|i| data.x.at(i, j)).sum::<f64>() / n;
            let var = (0..data.len()).map(|i| (data.x.at(i, j) - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 });
        }
        Ok(Self { columns, mean, std })
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        let c = out.x.cols();
        let x = out.x.data_mut();
        for i in 0..data.len() {
            for (k, &j) in self.columns.iter().enumerate() {
                x[i * c + j] = (x[i * c + j] - self.mean[k]) / self.std[k];
            }
        }
        out
    }
}
