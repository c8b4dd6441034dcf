//! File formats: model JSON, design CSV, allocation / prior / grid JSON, and
//! result writers.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::ew_bayes::PriorSpec;
use crate::fisher::Allocation;
use crate::grid::AxisSpec;
use crate::links::LinkFunction;
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub link: String,
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
}

impl ModelFile {
    pub fn from_model(model: &ModelSpec) -> Self {
        ModelFile {
            link: model.link.key().to_string(),
            beta: model.beta.clone(),
            theta: model.theta.clone(),
        }
    }

    pub fn into_model(self, design: DMatrix<f64>) -> Result<ModelSpec> {
        let link: LinkFunction = self.link.parse()?;
        Ok(ModelSpec::new(link, self.beta, self.theta, design))
    }
}

/// An allocation file, optionally labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub allocation: Allocation,
}

/// Free axes for grids and scans. `fixed` optionally overrides the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridFile {
    pub free: Vec<AxisSpec>,
    #[serde(default)]
    pub fixed: Option<ModelFile>,
    #[serde(default)]
    pub compare: Vec<Allocation>,
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DesignError::Io {
        context: format!("reading {}", path.display()),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| DesignError::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_model_file(path: &Path) -> Result<ModelFile> {
    read_json(path)
}

pub fn parse_design_csv(text: &str, context: &str) -> Result<DMatrix<f64>> {
    let parse_err = |message: String| DesignError::Parse {
        context: context.to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    for (k, h) in headers.iter().enumerate() {
        if h != format!("x{}", k + 1) {
            return Err(parse_err(format!("header column {} is `{h}`, expected `x{}`", k + 1, k + 1)));
        }
    }
    let d = headers.len();
    if d == 0 {
        return Err(parse_err("empty header".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != d {
            return Err(parse_err(format!("row {} has {} fields, expected {d}", r + 1, record.len())));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("row {}, x{}: `{field}` is not a number", r + 1, c + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, d, &values))
}

pub fn read_design_csv(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| DesignError::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_design_csv(&text, &path.display().to_string())
}

pub fn design_csv(design: &DMatrix<f64>) -> String {
    let mut out = (1..=design.ncols()).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for r in 0..design.nrows() {
        let row: Vec<String> = design.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_allocation(path: &Path) -> Result<AllocationFile> {
    let mut file: AllocationFile = read_json(path)?;
    file.allocation = file.allocation.validated()?;
    Ok(file)
}

pub fn read_prior(path: &Path) -> Result<PriorSpec> {
    read_json(path)
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    read_json(path)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| DesignError::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("result types serialize");
    s.push('\n');
    s
}

/// Rows of plain cells to CSV text.
pub fn csv_string(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| DesignError::Parse {
        context: "csv output".into(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(r).map_err(io_err)?;
    }
    let bytes = w.into_inner().map_err(|e| DesignError::Parse {
        context: "csv output".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
