//! JSON-lines metrics: one record per (epoch, stage) of a run.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use drive_core::adaptation::{EpochRecord, Variant};
use drive_core::losses::LossBreakdown;
use drive_core::pseudo_label::Stage;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantFlags {
    pub entropy_off: bool,
    pub perturb_off: bool,
    pub dynamic_eta_off: bool,
}

impl From<Variant> for VariantFlags {
    fn from(v: Variant) -> Self {
        Self {
            entropy_off: v.entropy_off,
            perturb_off: v.perturb_off,
            dynamic_eta_off: v.dynamic_eta_off,
        }
    }
}

impl From<VariantFlags> for Variant {
    fn from(v: VariantFlags) -> Self {
        Self {
            entropy_off: v.entropy_off,
            perturb_off: v.perturb_off,
            dynamic_eta_off: v.dynamic_eta_off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossFields {
    pub tsv: Option<f64>,
    pub mic1: Option<f64>,
    pub mic2: Option<f64>,
    pub pc: Option<f64>,
    pub balance: Option<f64>,
    pub mce: Option<f64>,
    pub total: f64,
}

impl From<&LossBreakdown> for LossFields {
    fn from(b: &LossBreakdown) -> Self {
        let c = b.components;
        Self {
            tsv: c.tsv,
            mic1: c.mic1,
            mic2: c.mic2,
            pc: c.pc,
            balance: c.balance,
            mce: c.mce,
            total: b.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaFields {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub seed: u64,
    pub variant: String,
    pub flags: VariantFlags,
    pub epoch: usize,
    /// 1 or 2.
    pub stage: u8,
    pub losses: LossFields,
    pub accuracy: f64,
    pub prior_accuracy: f64,
    pub eta: EtaFields,
    pub wall_ms: u64,
}

/// Run identifier used for directories and records.
pub fn run_id(variant: Variant, seed: u64) -> String {
    format!("{}-seed{seed}", variant.name())
}

impl MetricsRecord {
    /// The two records of one epoch: stage one, then stage two.
    pub fn from_epoch(variant: Variant, seed: u64, rec: &EpochRecord, wall_ms: [u64; 2]) -> [Self; 2] {
        let (min, mean, max) = rec.eta;
        let make = |stage: Stage, losses: &LossBreakdown, accuracy: f64, ms: u64| Self {
            schema_version: SCHEMA_VERSION,
            run_id: run_id(variant, seed),
            seed,
            variant: variant.name().to_string(),
            flags: variant.into(),
            epoch: rec.epoch,
            stage: match stage {
                Stage::One => 1,
                Stage::Two => 2,
            },
            losses: losses.into(),
            accuracy,
            prior_accuracy: rec.prior_accuracy,
            eta: EtaFields { min, mean, max },
            wall_ms: ms,
        };
        [
            make(Stage::One, &rec.stage1, rec.accuracy_stage1, wall_ms[0]),
            make(Stage::Two, &rec.stage2, rec.accuracy_stage2, wall_ms[1]),
        ]
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metrics records always serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        let rec: Self = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema version {}", rec.schema_version));
        }
        if rec.stage != 1 && rec.stage != 2 {
            return Err(format!("stage {} is not 1 or 2", rec.stage));
        }
        Ok(rec)
    }
}

/// Written next to the metrics when a run aborts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub seed: u64,
    pub variant: String,
    pub error: String,
}

pub fn write_records<W: Write>(out: &mut W, records: &[MetricsRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_line())?;
    }
    out.flush()
}

/// Parsed records and the number of lines that failed to parse.
pub fn read_records<R: BufRead>(input: R) -> std::io::Result<(Vec<MetricsRecord>, usize)> {
    let mut good = Vec::new();
    let mut bad = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match MetricsRecord::from_line(&line) {
            Ok(r) => good.push(r),
            Err(e) => {
                log::warn!("skipping corrupt metrics record: {e}");
                bad += 1;
            }
        }
    }
    Ok((good, bad))
}
