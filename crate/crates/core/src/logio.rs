//! Exploration-log serialization: JSON Lines, one record per line.
//!
//! Wire form:
//!
//! ```text
//! {"schema":1,"ctx":{"id":"q0","features":[0.9,0.4]},"seed":123,"action":[1,2],"p":0.45,"pvec":[0.55,0.45],"r":1.0}
//! ```
//!
//! `p` is mandatory and must be positive; `pvec` and `seed` are optional.
//! Atomic actions serialize as a bare index, subset actions as the sorted
//! candidate list. Readers reconstruct the action space from the action kind
//! and the vector length, reject unknown schema versions, and report the
//! line number of anything malformed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::collector::{ExplorationRecord, PropensityVector};
use crate::error::{Error, Result};
use crate::types::{Action, ActionMode, Context};

/// Version tag written into every record line.
pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RecordJson {
    schema: u32,
    ctx: Context,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    action: Action,
    p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pvec: Option<Vec<f64>>,
    r: f64,
}

/// Serialize one record to its JSONL line (no trailing newline).
pub fn record_to_line(record: &ExplorationRecord) -> Result<String> {
    let json = RecordJson {
        schema: LOG_SCHEMA_VERSION,
        ctx: record.context.clone(),
        seed: record.seed,
        action: record.action,
        p: record.propensity,
        pvec: record
            .propensity_vector
            .as_ref()
            .map(|v| v.probs().to_vec()),
        r: record.reward,
    };
    Ok(serde_json::to_string(&json)?)
}

/// Parse one JSONL line. `line_number` is 1-based and only used for error
/// reporting.
pub fn record_from_line(line: &str, line_number: usize) -> Result<ExplorationRecord> {
    let json: RecordJson = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_number,
        why: e.to_string(),
    })?;
    if json.schema != LOG_SCHEMA_VERSION {
        return Err(Error::Schema {
            found: json.schema,
            expected: LOG_SCHEMA_VERSION,
        });
    }
    let vector = match json.pvec {
        None => None,
        Some(probs) => {
            let mode = infer_mode(&json.action, probs.len()).map_err(|e| Error::Parse {
                line: line_number,
                why: e.to_string(),
            })?;
            Some(
                PropensityVector::new(mode, probs).map_err(|e| Error::Parse {
                    line: line_number,
                    why: e.to_string(),
                })?,
            )
        }
    };
    ExplorationRecord::new(json.ctx, json.seed, json.action, json.p, vector, json.r).map_err(|e| {
        Error::Parse {
            line: line_number,
            why: e.to_string(),
        }
    })
}

fn infer_mode(action: &Action, vector_len: usize) -> Result<ActionMode> {
    match action {
        Action::Atomic(_) => Ok(ActionMode::Atomic { k: vector_len }),
        Action::Subset(_) => {
            if !vector_len.is_power_of_two() {
                return Err(Error::invalid(
                    "pvec",
                    format!("subset record with non-power-of-two vector length {vector_len}"),
                ));
            }
            Ok(ActionMode::Subset {
                l: vector_len.trailing_zeros() as usize + 1,
            })
        }
    }
}

/// Write a log, one line per record.
pub fn write_log<W: Write>(mut writer: W, records: &[ExplorationRecord]) -> Result<()> {
    for record in records {
        writeln!(writer, "{}", record_to_line(record)?)?;
    }
    Ok(())
}

/// The full log as a string; byte-identical for identical inputs.
pub fn log_to_string(records: &[ExplorationRecord]) -> Result<String> {
    let mut out = Vec::new();
    write_log(&mut out, records)?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

/// Read a whole log, line-streamed. Any malformed line aborts with its
/// number.
pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<ExplorationRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        records.push(record_from_line(&line, i + 1)?);
    }
    Ok(records)
}

pub fn save_log(path: &Path, records: &[ExplorationRecord]) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    write_log(&mut writer, records)?;
    writer.flush()?;
    Ok(())
}

pub fn load_log(path: &Path) -> Result<Vec<ExplorationRecord>> {
    let file = File::open(path)?;
    read_log(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::{collect, RandomizationScheme};
    use crate::speller::generate_scenario;
    use crate::types::{Context, EnvironmentSpec, RewardNoise};

    fn sample_log() -> Vec<ExplorationRecord> {
        let env = EnvironmentSpec::new(
            vec![Context::new("x0", vec![0.1, 0.9]).unwrap()],
            vec![1.0],
            vec![vec![0.3, 0.8]],
            crate::types::ActionMode::Atomic { k: 2 },
            RewardNoise::Bernoulli,
        )
        .unwrap();
        collect(&env, &RandomizationScheme::Uniform, 25, 101).unwrap()
    }

    #[test]
    fn round_trip_preserves_records() {
        let log = sample_log();
        let text = log_to_string(&log).unwrap();
        let back = read_log(text.as_bytes()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn serialization_is_byte_identical_across_runs() {
        let log = sample_log();
        assert_eq!(log_to_string(&log).unwrap(), log_to_string(&log).unwrap());
    }

    #[test]
    fn subset_logs_round_trip() {
        let env = generate_scenario(5, 3, 7)
            .unwrap()
            .to_environment()
            .unwrap();
        let log = collect(&env, &RandomizationScheme::sigmoid_default(), 40, 11).unwrap();
        let text = log_to_string(&log).unwrap();
        assert!(text.lines().next().unwrap().contains("\"action\":[1"));
        let back = read_log(text.as_bytes()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn reader_rejects_nonpositive_propensity() {
        let line = r#"{"schema":1,"ctx":{"id":"x","features":[0.0]},"action":0,"p":0.0,"r":0.5}"#;
        let err = record_from_line(line, 3).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn reader_rejects_unknown_schema() {
        let line = r#"{"schema":2,"ctx":{"id":"x","features":[0.0]},"action":0,"p":0.5,"r":0.5}"#;
        assert!(matches!(
            record_from_line(line, 1),
            Err(Error::Schema {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn reader_reports_malformed_line_number() {
        let log = sample_log();
        let mut text = log_to_string(&log).unwrap();
        text.push_str("{not json}\n");
        let err = read_log(text.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, log.len() + 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn pvec_is_optional_on_read_and_omitted_when_absent() {
        let line = r#"{"schema":1,"ctx":{"id":"x","features":[0.0]},"seed":9,"action":1,"p":0.25,"r":1.0}"#;
        let record = record_from_line(line, 1).unwrap();
        assert!(record.propensity_vector.is_none());
        let out = record_to_line(&record).unwrap();
        assert!(!out.contains("pvec"));
        assert_eq!(record_from_line(&out, 1).unwrap(), record);
    }

    #[test]
    fn file_round_trip() {
        let log = sample_log();
        let dir = std::env::temp_dir().join(format!("ope-logio-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.jsonl");
        save_log(&path, &log).unwrap();
        let back = load_log(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        assert_eq!(back, log);
    }
}
