//! CSV ingestion of trial data.

use std::io::Read;
use std::path::Path;

use mvlogit::model::TrialDataset;
use mvlogit::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;

/// Centre and scale applied to one covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub column: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: TrialDataset,
    pub standardization: Vec<Standardization>,
}

pub fn load_dataset_csv(path: &Path, config: &AnalysisConfig) -> Result<LoadedData> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_dataset(file, config)
}

fn ingestion(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Ingestion {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Parses a dataset from any reader. Rows are numbered from 1, not
/// counting the header.
pub fn read_dataset<R: Read>(input: R, config: &AnalysisConfig) -> Result<LoadedData> {
    config.validate()?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| ingestion(0, "", format!("unreadable header: {e}")))?
        .clone();
    let index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ingestion(0, name, "column not found in header"))
    };
    let outcome_cols = config.outcomes.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;
    let treat_col = index(&config.treatment)?;
    let cov_cols = config.covariates.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;

    let mut responses = Vec::new();
    let mut treatment = Vec::new();
    let mut covariates = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| ingestion(row, "", e.to_string()))?;
        let cell = |col: usize, name: &str| -> Result<&str> {
            match record.get(col) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(ingestion(row, name, "missing value")),
            }
        };
        let binary = |col: usize, name: &str| -> Result<u8> {
            match cell(col, name)? {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(ingestion(row, name, format!("expected 0 or 1, found '{other}'"))),
            }
        };
        responses.push(
            outcome_cols
                .iter()
                .zip(&config.outcomes)
                .map(|(&c, n)| binary(c, n))
                .collect::<Result<Vec<_>>>()?,
        );
        treatment.push(binary(treat_col, &config.treatment)?);
        covariates.push(
            cov_cols
                .iter()
                .zip(&config.covariates)
                .map(|(&c, n)| {
                    let raw = cell(c, n)?;
                    raw.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| ingestion(row, n, format!("'{raw}' is not a finite number")))
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    if responses.is_empty() {
        return Err(ingestion(0, "", "the file has no data rows"));
    }

    let mut standardization = Vec::new();
    for name in &config.standardize {
        let j = config.covariates.iter().position(|c| c == name).expect("validated");
        let n = covariates.len() as f64;
        let mean = covariates.iter().map(|z| z[j]).sum::<f64>() / n;
        let var = covariates.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::Config(format!("cannot standardize '{name}': zero spread")));
        }
        for z in &mut covariates {
            z[j] = (z[j] - mean) / sd;
        }
        standardization.push(Standardization {
            column: name.clone(),
            mean,
            sd,
        });
    }

    let data = TrialDataset::new(config.outcomes.len(), &responses, treatment, covariates, config.layout()?)?;
    Ok(LoadedData { data, standardization })
}
