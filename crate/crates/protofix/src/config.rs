//! Optional TOML config file for the CLI.
//!
//! Keys are the long flag names (`per-class-train = 50`, `budget = "unlimited"`).
//! A flag given on the command line always wins over the file.

use std::fs;
use std::path::{Path, PathBuf};

use protofix_core::Budget;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::report::ReportFormat;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub format: Option<ReportFormat>,

    pub classes: Option<usize>,
    pub dim: Option<usize>,
    pub per_class_train: Option<usize>,
    pub per_class_val: Option<usize>,
    pub per_class_test: Option<usize>,
    pub sigma: Option<f64>,
    pub min_separation: Option<f64>,

    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub seeds: Option<ListValue>,
    pub shots: Option<ListValue>,
    pub budget: Option<BudgetValue>,
    pub protect_server: Option<bool>,
    pub include_support: Option<bool>,

    pub port: Option<u16>,
    pub top_k: Option<usize>,
    pub open_class: Option<bool>,
    pub reveal_labels: Option<bool>,
    pub ui_dir: Option<PathBuf>,
}

/// `[1, 2, 5]` or `"1,2,5"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ListValue {
    Array(Vec<u64>),
    Text(String),
}

impl ListValue {
    pub fn to_vec(&self) -> std::result::Result<Vec<u64>, String> {
        match self {
            ListValue::Array(v) => Ok(v.clone()),
            ListValue::Text(s) => parse_list(s),
        }
    }
}

/// `200` or `"unlimited"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum BudgetValue {
    Limit(usize),
    Text(String),
}

impl BudgetValue {
    pub fn to_budget(&self) -> std::result::Result<Budget, String> {
        match self {
            BudgetValue::Limit(n) => parse_budget(&n.to_string()),
            BudgetValue::Text(s) => parse_budget(s),
        }
    }
}

pub fn parse_budget(s: &str) -> std::result::Result<Budget, String> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("unlimited") {
        return Ok(Budget::Unlimited);
    }
    match s.parse::<usize>() {
        Ok(0) => Err("budget must be at least 1".into()),
        Ok(n) => Ok(Budget::Limited(n)),
        Err(_) => Err(format!("invalid budget {s:?} (expected a positive integer or \"unlimited\")")),
    }
}

pub fn parse_list(s: &str) -> std::result::Result<Vec<u64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u64>().map_err(|_| format!("invalid integer {t:?} in list")))
        .collect()
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(format!("config: {e}")))
    }
}
