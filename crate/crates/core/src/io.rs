//! CSV ingestion and train/test splitting.
//!
//! Two schemas are understood. `generic` reads every column as a number and
//! takes the last one as the response. `bankSalary` reads the Fifth National
//! Bank salary layout by header name and builds the design
//! `Gender, PCJob, Edu1..Edu4, JobGrd1..JobGrd5` with `Salary` as response;
//! extra columns such as an employee id are ignored.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PmlsError, Result};
use crate::model::{validate_dataset, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Schema {
    Generic,
    BankSalary,
}

impl FromStr for Schema {
    type Err = PmlsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(Schema::Generic),
            "bankSalary" | "bank" => Ok(Schema::BankSalary),
            other => Err(PmlsError::InvalidConfig(format!(
                "unknown schema `{other}`"
            ))),
        }
    }
}

/// Covariate names of the bank design, in column order.
pub const BANK_COLUMNS: [&str; 11] = [
    "Gender", "PCJob", "Edu1", "Edu2", "Edu3", "Edu4", "JobGrd1", "JobGrd2", "JobGrd3", "JobGrd4",
    "JobGrd5",
];

const BANK_REQUIRED: [&str; 8] = [
    "EduLev", "JobGrade", "YrHired", "YrBorn", "Gender", "YrsPrior", "PCJob", "Salary",
];

/// Parsed covariates and responses with their column names. Rank and size
/// checks are deferred to [`Table::dataset`], so a table may hold a small
/// test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub covariates: Vec<String>,
    pub response: String,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    /// Validated dataset for estimation.
    pub fn dataset(&self) -> Result<Dataset> {
        validate_dataset(self.x.clone(), self.y.clone())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            x: self.x.select_rows(rows.iter()),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            covariates: self.covariates.clone(),
            response: self.response.clone(),
        }
    }
}

pub fn ingest_csv(path: &Path, schema: Schema) -> Result<Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PmlsError::Io(format!("{}: {e}", path.display())))?;
    parse_csv(&text, schema)
}

pub fn parse_csv(text: &str, schema: Schema) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| PmlsError::SchemaMismatch(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| PmlsError::SchemaMismatch(format!("row {}: {e}", i + 1)))?;
        records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    match schema {
        Schema::Generic => generic(&header, &records),
        Schema::BankSalary => bank(&header, &records),
    }
}

fn number(row: usize, column: &str, cell: &str) -> Result<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| PmlsError::UnparseableCell {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        })
}

fn generic(header: &[String], records: &[Vec<String>]) -> Result<Table> {
    if header.is_empty() {
        return Err(PmlsError::SchemaMismatch("no columns".into()));
    }
    let p = header.len() - 1;
    let mut x = DMatrix::zeros(records.len(), p);
    let mut y = DVector::zeros(records.len());
    for (i, rec) in records.iter().enumerate() {
        for (j, cell) in rec.iter().enumerate() {
            let v = number(i + 1, &header[j], cell)?;
            if j < p {
                x[(i, j)] = v;
            } else {
                y[i] = v;
            }
        }
    }
    Ok(Table {
        x,
        y,
        covariates: header[..p].to_vec(),
        response: header[p].clone(),
    })
}

fn gender(row: usize, cell: &str) -> Result<f64> {
    match cell.to_ascii_lowercase().as_str() {
        "female" | "f" | "1" => Ok(1.0),
        "male" | "m" | "0" => Ok(0.0),
        _ => Err(PmlsError::UnparseableCell {
            row,
            column: "Gender".into(),
            value: cell.to_string(),
        }),
    }
}

/// Integer level in `1..=levels`.
fn level(row: usize, column: &str, cell: &str, levels: usize) -> Result<usize> {
    let v = number(row, column, cell)?;
    if v.fract() == 0.0 && v >= 1.0 && v <= levels as f64 {
        Ok(v as usize)
    } else {
        Err(PmlsError::UnparseableCell {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        })
    }
}

fn bank(header: &[String], records: &[Vec<String>]) -> Result<Table> {
    let find = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name));
    let mut col = std::collections::HashMap::new();
    for name in BANK_REQUIRED {
        let j = find(name)
            .ok_or_else(|| PmlsError::SchemaMismatch(format!("missing column `{name}`")))?;
        col.insert(name, j);
    }
    let p = BANK_COLUMNS.len();
    let mut x = DMatrix::zeros(records.len(), p);
    let mut y = DVector::zeros(records.len());
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        let cell = |name: &str| rec[col[name]].as_str();
        // Parsed for validation only; they are latent factors in the model.
        for name in ["YrHired", "YrBorn", "YrsPrior"] {
            number(row, name, cell(name))?;
        }
        x[(i, 0)] = gender(row, cell("Gender"))?;
        x[(i, 1)] = number(row, "PCJob", cell("PCJob"))?;
        let edu = level(row, "EduLev", cell("EduLev"), 5)?;
        if edu < 5 {
            x[(i, 1 + edu)] = 1.0;
        }
        let grade = level(row, "JobGrade", cell("JobGrade"), 6)?;
        if grade < 6 {
            x[(i, 5 + grade)] = 1.0;
        }
        y[i] = number(row, "Salary", cell("Salary"))?;
    }
    Ok(Table {
        x,
        y,
        covariates: BANK_COLUMNS.iter().map(|s| s.to_string()).collect(),
        response: "Salary".into(),
    })
}

/// How a table is divided into estimation and test rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum Split {
    /// First `train` rows in file order, then the next `test` rows.
    FileOrder { train: usize, test: usize },
    /// A seeded random partition into `train` and `test` rows.
    Random {
        train: usize,
        test: usize,
        seed: u64,
    },
}

impl Split {
    pub fn sizes(&self) -> (usize, usize) {
        match *self {
            Split::FileOrder { train, test } | Split::Random { train, test, .. } => (train, test),
        }
    }

    /// Row indices of the estimation and test parts.
    pub fn indices(&self, n_rows: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let (train, test) = self.sizes();
        if train + test != n_rows {
            return Err(PmlsError::InvalidConfig(format!(
                "split {train}/{test} does not cover {n_rows} rows"
            )));
        }
        let mut order: Vec<usize> = (0..n_rows).collect();
        if let Split::Random { seed, .. } = *self {
            order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        }
        let test_rows = order.split_off(train);
        Ok((order, test_rows))
    }

    pub fn apply(&self, table: &Table) -> Result<(Table, Table)> {
        let (a, b) = self.indices(table.n_rows())?;
        Ok((table.select_rows(&a), table.select_rows(&b)))
    }
}
