//! Per-step training records, one JSON line each.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub st_loss: f64,
    pub asr_loss: Option<f64>,
    pub grad_norm: f64,
    pub wall_clock_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<StepRecord>,
}

impl TrainingLog {
    /// Equality ignoring the wall-clock field, the only nondeterministic
    /// part of a seeded run.
    pub fn same_modulo_wall_clock(&self, other: &TrainingLog) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.step == b.step
                    && a.lr == b.lr
                    && a.loss == b.loss
                    && a.st_loss == b.st_loss
                    && a.asr_loss == b.asr_loss
                    && a.grad_norm == b.grad_norm
            })
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl Read) -> std::io::Result<TrainingLog> {
        let mut records = Vec::new();
        for line in BufReader::new(r).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(TrainingLog { records })
    }
}
