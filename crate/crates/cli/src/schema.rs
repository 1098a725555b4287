//! Versioned JSON documents: kernel banks, learner configs, train reports.

use std::path::{Path, PathBuf};

use rgc_core::learn::{LearnConfig, SceneKind, SceneParams, TrainReport};
use rgc_core::{KernelBank, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::format::{FormatError, Result};

pub const BANK_SCHEMA: &str = "rgcsim.bank/1";
pub const LEARN_SCHEMA: &str = "rgcsim.learn/1";
pub const REPORT_SCHEMA: &str = "rgcsim.train_report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankDocument {
    pub schema: String,
    pub bank: KernelBank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Scene {
        kind: SceneKind,
        #[serde(default)]
        params: SceneParams,
        #[serde(default)]
        seed: u64,
    },
    /// Raw tensor video; relative paths resolve against the config file.
    Video { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnDocument {
    pub schema: String,
    pub learn: LearnConfig,
    #[serde(default)]
    pub sim: SimConfig,
    pub bins: usize,
    pub data: Vec<DataSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    pub report: TrainReport,
}

trait Versioned {
    const SCHEMA: &'static str;
    fn schema(&self) -> &str;
}

impl Versioned for BankDocument {
    const SCHEMA: &'static str = BANK_SCHEMA;
    fn schema(&self) -> &str {
        &self.schema
    }
}

impl Versioned for LearnDocument {
    const SCHEMA: &'static str = LEARN_SCHEMA;
    fn schema(&self) -> &str {
        &self.schema
    }
}

impl Versioned for ReportDocument {
    const SCHEMA: &'static str = REPORT_SCHEMA;
    fn schema(&self) -> &str {
        &self.schema
    }
}

fn parse<T: DeserializeOwned + Versioned>(text: &str) -> Result<T> {
    // Check the tag first so a wrong document type is reported as such.
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| FormatError::Header(e.to_string()))?;
    match raw.get("schema").and_then(|s| s.as_str()) {
        Some(s) if s == T::SCHEMA => {}
        Some(s) => {
            return Err(FormatError::Header(format!(
                "schema `{}` where `{}` was expected",
                s,
                T::SCHEMA
            )))
        }
        None => return Err(FormatError::Header(format!("missing `schema` (expected `{}`)", T::SCHEMA))),
    }
    let doc: T = serde_json::from_value(raw).map_err(|e| FormatError::Header(e.to_string()))?;
    debug_assert_eq!(doc.schema(), T::SCHEMA);
    Ok(doc)
}

fn to_json<T: Serialize>(doc: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc).map_err(|e| FormatError::Header(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn bank_to_json(bank: &KernelBank) -> Result<String> {
    to_json(&BankDocument {
        schema: BANK_SCHEMA.into(),
        bank: bank.clone(),
    })
}

pub fn bank_from_json(text: &str) -> Result<KernelBank> {
    let doc: BankDocument = parse(text)?;
    doc.bank.validate()?;
    Ok(doc.bank)
}

pub fn read_bank(path: &Path) -> Result<KernelBank> {
    bank_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_bank(path: &Path, bank: &KernelBank) -> Result<()> {
    Ok(std::fs::write(path, bank_to_json(bank)?)?)
}

pub fn learn_from_json(text: &str) -> Result<LearnDocument> {
    let doc: LearnDocument = parse(text)?;
    doc.learn.validate()?;
    doc.sim.validate()?;
    Ok(doc)
}

pub fn learn_to_json(doc: &LearnDocument) -> Result<String> {
    to_json(doc)
}

pub fn report_to_json(report: &TrainReport) -> Result<String> {
    to_json(&ReportDocument {
        schema: REPORT_SCHEMA.into(),
        report: report.clone(),
    })
}

pub fn report_from_json(text: &str) -> Result<TrainReport> {
    Ok(parse::<ReportDocument>(text)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rgc_core::presets::{preset_kernel, Preset};

    #[test]
    fn bank_round_trip() {
        let bank = KernelBank::multi(vec![
            preset_kernel(&Preset::CsdvsDelbruck, 3).unwrap(),
            preset_kernel(&Preset::Dog { sigma_center: 0.7, sigma_surround: 1.9 }, 5)
                .unwrap()
                .with_thresholds(0.13, 0.07),
        ]);
        let text = bank_to_json(&bank).unwrap();
        assert_eq!(bank_from_json(&text).unwrap(), bank);
    }

    #[test]
    fn schema_is_enforced() {
        let bank = KernelBank::single(preset_kernel(&Preset::Dvs, 1).unwrap());
        let text = bank_to_json(&bank).unwrap().replace(BANK_SCHEMA, "rgcsim.bank/9");
        let err = bank_from_json(&text).unwrap_err().to_string();
        assert!(err.contains("rgcsim.bank/9"));
        assert!(bank_from_json(r#"{"bank": null}"#).is_err());
        assert!(report_from_json(&bank_to_json(&bank).unwrap()).is_err());
    }

    #[test]
    fn invalid_bank_rejected() {
        let bank = KernelBank::single(preset_kernel(&Preset::Dvs, 1).unwrap().with_thresholds(-1.0, 0.1));
        assert!(bank_from_json(&bank_to_json(&bank).unwrap()).is_err());
    }

    #[test]
    fn learn_document_defaults() {
        let text = r#"{
            "schema": "rgcsim.learn/1",
            "learn": {"task": "reconstruction", "steps": 5},
            "bins": 3,
            "data": [{"scene": {"kind": "moving_edge", "seed": 1}}]
        }"#;
        let doc = learn_from_json(text).unwrap();
        assert_eq!(doc.learn.steps, 5);
        assert_eq!(doc.sim, SimConfig::default());
        assert_eq!(doc.data.len(), 1);
        let again = learn_from_json(&learn_to_json(&doc).unwrap()).unwrap();
        assert_eq!(again, doc);
    }
}
