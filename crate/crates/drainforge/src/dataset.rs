//! From traces to ML-ready datasets.
//!
//! Every transition becomes one numeric feature row; the row's label is the
//! transition's label (0 normal, 1 attack). Categorical data coming from
//! real logs is one-hot encoded ("binarised"); model-generated traces are
//! numeric from the start. Mixing assembles train/test sets at exact class
//! ratios, and standardization z-scores columns using training statistics
//! only.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{SystemConfig, ATTACKER_ID};
use crate::rng::ForgeRng;
use crate::semantics::{Trace, TransitionLabel};

/// Feature columns of an encoded trace, in order. `label` is appended as
/// the final column in files.
pub const TRACE_COLUMNS: [&str; 10] = [
    "inter_arrival",
    "src_code",
    "dst_code",
    "action_code",
    "drain_src",
    "drain_dst",
    "ua_code",
    "ref_code",
    "keepalive",
    "url_unique",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub features: Vec<f64>,
    /// 0 = normal, 1 = attack.
    pub label: u8,
}

/// A labelled numeric dataset with a fixed schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub rows: Vec<DatasetRow>,
}

impl Dataset {
    pub fn empty(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn attack_count(&self) -> usize {
        self.rows.iter().filter(|r| r.label == 1).count()
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("not enough {class} rows: need {need}, have {have}")]
    InsufficientRows {
        class: &'static str,
        need: usize,
        have: usize,
    },
    #[error("datasets have different schemas")]
    SchemaMismatch,
    #[error("attack fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("row {row} has {got} fields, expected {want}")]
    BadRowWidth { row: usize, got: usize, want: usize },
    #[error("empty input")]
    Empty,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

/// Flattens a trace into one feature row per transition.
///
/// The attacker's source id never appears in features: attack rows get a
/// random device code instead, drawn from `spoof_seed`, since a classifier
/// that could read "ATTACKER" off the packet would have nothing to learn.
pub fn encode_trace(trace: &Trace, config: &SystemConfig, spoof_seed: u64) -> Dataset {
    let mut rng = ForgeRng::seed_from_u64(spoof_seed);
    let device_count = config.devices.len();
    let mut rows = Vec::with_capacity(trace.transitions.len());
    let mut prev_end = 0.0;

    for tr in &trace.transitions {
        let src_code = if tr.src == ATTACKER_ID {
            1 + rng.index(device_count) as u32
        } else {
            config.device_code(&tr.src).expect("trace matches config")
        };
        let dst_code = config.device_code(&tr.dst).expect("trace matches config");
        let action_code = config
            .action_code(&tr.action)
            .expect("trace matches config");
        let label = match tr.label {
            TransitionLabel::Normal => 0,
            TransitionLabel::Attack => 1,
        };
        rows.push(DatasetRow {
            features: vec![
                tr.t_end - prev_end,
                src_code as f64,
                dst_code as f64,
                action_code as f64,
                tr.drain_src,
                tr.drain_dst,
                tr.payload.ua_code as f64,
                tr.payload.ref_code as f64,
                tr.payload.keepalive as f64,
                tr.payload.url_unique as f64,
            ],
            label,
        });
        prev_end = tr.t_end;
    }

    Dataset {
        columns: TRACE_COLUMNS.iter().map(|c| c.to_string()).collect(),
        rows,
    }
}

/// One-hot mapping for a single categorical column, positions assigned in
/// first-occurrence order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingMap {
    pub values: Vec<String>,
}

impl EncodingMap {
    pub fn width(&self) -> usize {
        self.values.len()
    }

    /// One-hot position of a value (its bit significance).
    pub fn encode(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    pub fn decode(&self, position: usize) -> Option<&str> {
        self.values.get(position).map(|s| s.as_str())
    }

    /// The binary-word rendering: position 0 is the least significant bit,
    /// so with four values the first becomes `0001` and the last `1000`.
    pub fn bit_string(&self, value: &str) -> Option<String> {
        let position = self.encode(value)?;
        let width = self.width();
        Some(
            (0..width)
                .rev()
                .map(|bit| if bit == position { '1' } else { '0' })
                .collect(),
        )
    }
}

/// Binarises one categorical column: k distinct values become k one-hot
/// indicator columns, exactly one of which is set per row.
pub fn binarise(column: &[String]) -> Result<(EncodingMap, Vec<Vec<u8>>), DatasetError> {
    if column.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut values: Vec<String> = Vec::new();
    for v in column {
        if !values.iter().any(|seen| seen == v) {
            values.push(v.clone());
        }
    }
    let map = EncodingMap { values };
    let rows = column
        .iter()
        .map(|v| {
            let position = map.encode(v).expect("value was interned");
            let mut row = vec![0u8; map.width()];
            row[position] = 1;
            row
        })
        .collect();
    Ok((map, rows))
}

/// Reverses [`binarise`]: maps one-hot rows back to their values.
pub fn decode_onehot(map: &EncodingMap, rows: &[Vec<u8>]) -> Result<Vec<String>, DatasetError> {
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let position = row
                .iter()
                .position(|b| *b == 1)
                .ok_or(DatasetError::Parse {
                    line: i,
                    detail: "no bit set".into(),
                })?;
            map.decode(position)
                .map(|s| s.to_string())
                .ok_or(DatasetError::Parse {
                    line: i,
                    detail: format!("position {position} out of range"),
                })
        })
        .collect()
}

/// Column names of an ingested access log.
pub const LOG_COLUMNS: [&str; 8] = [
    "host",
    "timestamp",
    "method",
    "path",
    "status",
    "size",
    "referrer",
    "user_agent",
];

/// A table of raw categorical values (all strings), e.g. from a web log.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// A line the ingester could not parse, kept for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedLine {
    pub line_number: usize,
    pub text: String,
}

/// Parses an Apache access log in Common Log Format, with the Combined
/// format's referrer and user-agent fields when present.
///
/// Real logs are dirty: malformed lines go to the reject list with their
/// line numbers instead of aborting the ingest.
pub fn ingest_apache_log<R: BufRead>(
    reader: R,
) -> Result<(CategoricalTable, Vec<RejectedLine>), DatasetError> {
    // host ident user [timestamp] "request" status size ["referrer" "agent"]
    let line_re = Regex::new(
        r#"^(\S+) (\S+) (\S+) \[([^\]]+)\] "([^"]*)" (\d{3}|-) (\d+|-)(?: "([^"]*)" "([^"]*)")?\s*$"#,
    )
    .expect("static regex");

    let mut rows = Vec::new();
    let mut rejects = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_number = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let Some(caps) = line_re.captures(&line) else {
            rejects.push(RejectedLine {
                line_number,
                text: line,
            });
            continue;
        };
        let request = caps.get(5).map_or("", |m| m.as_str());
        let mut parts = request.split_whitespace();
        let (Some(method), Some(path)) = (parts.next(), parts.next()) else {
            rejects.push(RejectedLine {
                line_number,
                text: line,
            });
            continue;
        };
        rows.push(vec![
            caps[1].to_string(),
            caps[4].to_string(),
            method.to_string(),
            path.to_string(),
            caps[6].to_string(),
            caps[7].to_string(),
            caps.get(8).map_or("-", |m| m.as_str()).to_string(),
            caps.get(9).map_or("-", |m| m.as_str()).to_string(),
        ]);
    }

    Ok((
        CategoricalTable {
            columns: LOG_COLUMNS.iter().map(|c| c.to_string()).collect(),
            rows,
        },
        rejects,
    ))
}

/// Assembles a dataset of exactly `total` rows with `round(total * attack_fraction)`
/// attack rows, sampled without replacement and shuffled deterministically.
pub fn mix(
    normal: &Dataset,
    attack: &Dataset,
    attack_fraction: f64,
    total: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if !(0.0..=1.0).contains(&attack_fraction) {
        return Err(DatasetError::BadFraction(attack_fraction));
    }
    if normal.columns != attack.columns {
        return Err(DatasetError::SchemaMismatch);
    }
    let attack_count = (total as f64 * attack_fraction).round() as usize;
    let normal_count = total - attack_count;
    if attack.len() < attack_count {
        return Err(DatasetError::InsufficientRows {
            class: "attack",
            need: attack_count,
            have: attack.len(),
        });
    }
    if normal.len() < normal_count {
        return Err(DatasetError::InsufficientRows {
            class: "normal",
            need: normal_count,
            have: normal.len(),
        });
    }

    let mut rng = ForgeRng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(total);
    rows.extend(sample_without_replacement(&normal.rows, normal_count, &mut rng).into_iter());
    rows.extend(sample_without_replacement(&attack.rows, attack_count, &mut rng).into_iter());
    rng.shuffle(&mut rows);

    Ok(Dataset {
        columns: normal.columns.clone(),
        rows,
    })
}

fn sample_without_replacement(
    rows: &[DatasetRow],
    count: usize,
    rng: &mut ForgeRng,
) -> Vec<DatasetRow> {
    let mut indices: Vec<usize> = (0..rows.len()).collect();
    rng.shuffle(&mut indices);
    indices
        .into_iter()
        .take(count)
        .map(|i| rows[i].clone())
        .collect()
}

/// Per-column training statistics used for z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

/// Computes mean and (population) standard deviation per feature column.
pub fn column_stats(dataset: &Dataset) -> Vec<ColumnStats> {
    let n = dataset.len() as f64;
    let width = dataset.width();
    let mut stats = Vec::with_capacity(width);
    for c in 0..width {
        let mean = dataset.rows.iter().map(|r| r.features[c]).sum::<f64>() / n;
        let var = dataset
            .rows
            .iter()
            .map(|r| (r.features[c] - mean).powi(2))
            .sum::<f64>()
            / n;
        stats.push(ColumnStats {
            mean,
            std: var.sqrt(),
        });
    }
    stats
}

/// Applies z-scoring with the given statistics. Zero-variance columns pass
/// through untouched.
pub fn apply_stats(dataset: &Dataset, stats: &[ColumnStats]) -> Dataset {
    let rows = dataset
        .rows
        .iter()
        .map(|row| DatasetRow {
            features: row
                .features
                .iter()
                .zip(stats)
                .map(|(x, s)| if s.std == 0.0 { *x } else { (x - s.mean) / s.std })
                .collect(),
            label: row.label,
        })
        .collect();
    Dataset {
        columns: dataset.columns.clone(),
        rows,
    }
}

/// Standardizes the training set and applies the *training* statistics to
/// every other set, so no test-set information leaks into the transform.
pub fn standardize(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, Vec<ColumnStats>), DatasetError> {
    if train.is_empty() {
        return Err(DatasetError::Empty);
    }
    let stats = column_stats(train);
    let train_std = apply_stats(train, &stats);
    let others_std = others.iter().map(|d| apply_stats(d, &stats)).collect();
    Ok((train_std, others_std, stats))
}

/// Writes a dataset as CSV: header row of column names plus `label`, then
/// one data row per sample. Floats use Rust's shortest round-trip form, so
/// output is byte-stable across platforms.
pub fn write_csv<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{},label", dataset.columns.join(","))?;
    for row in &dataset.rows {
        for feature in &row.features {
            write!(out, "{feature},")?;
        }
        writeln!(out, "{}", row.label)?;
    }
    Ok(())
}

/// Reads a dataset back from [`write_csv`] output.
pub fn read_csv<R: BufRead>(reader: R) -> Result<Dataset, DatasetError> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or(DatasetError::Empty)??;
    let mut columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
    if columns.last().map(|s| s.as_str()) != Some("label") {
        return Err(DatasetError::Parse {
            line: 1,
            detail: "last column must be `label`".into(),
        });
    }
    columns.pop();
    let width = columns.len();

    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 1 {
            return Err(DatasetError::BadRowWidth {
                row: i + 2,
                got: fields.len(),
                want: width + 1,
            });
        }
        let features = fields[..width]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| DatasetError::Parse {
                    line: i + 2,
                    detail: e.to_string(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let label = fields[width].parse::<u8>().map_err(|e| DatasetError::Parse {
            line: i + 2,
            detail: e.to_string(),
        })?;
        rows.push(DatasetRow { features, label });
    }
    Ok(Dataset { columns, rows })
}

/// Writes a dataset as line-delimited JSON: a header object with the
/// columns, then one object per row.
pub fn write_jsonl<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Header<'a> {
        columns: &'a [String],
    }
    let header = serde_json::to_string(&Header {
        columns: &dataset.columns,
    })
    .expect("header serializes");
    writeln!(out, "{header}")?;
    for row in &dataset.rows {
        let line = serde_json::to_string(row).expect("row serializes");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Sidecar document mapping column names to their one-hot encodings, saved
/// next to binarised datasets for decoding and audit.
pub type EncodingSidecar = BTreeMap<String, EncodingMap>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacker::{simulate_attack, AttackMode};
    use crate::model::load_config;
    use crate::semantics::{replay, simulate, StopCondition};

    const TABLE1: &str = include_str!("../../../fixtures/table1.cfg");

    #[test]
    fn empty_trace_encodes_to_empty_dataset() {
        let config = load_config(TABLE1).unwrap();
        let trace = simulate(&config, 1, StopCondition::MaxSteps(0));
        let dataset = encode_trace(&trace, &config, 0);
        assert!(dataset.is_empty());
        assert_eq!(dataset.width(), 10);
    }

    #[test]
    fn trace1_rows_have_the_table_deltas() {
        let config = load_config(TABLE1).unwrap();
        let trace = replay(&config, &["write_yz", "write_xy", "read_xy"]).unwrap();
        let dataset = encode_trace(&trace, &config, 0);
        assert_eq!(dataset.len(), 3);
        assert!(dataset.rows.iter().all(|r| r.label == 0));
        let deltas: Vec<f64> = dataset.rows.iter().map(|r| r.features[0]).collect();
        assert_eq!(deltas, [30.0, 20.0, 15.0]);
    }

    #[test]
    fn attack_rows_are_labelled_and_spoofed() {
        let doc = r#"
seed = 0

[[devices]]
id = "victim"
battery_capacity = 4.0

[attacker]
power_level = 1

[[attacker.actions]]
label = "flood"
target = "victim"
drain_target = 2.0
time_per_message = 5.0
"#;
        let config = load_config(doc).unwrap();
        let trace =
            simulate_attack(&config, AttackMode::Optimal, 3, StopCondition::UntilExhausted)
                .unwrap();
        let dataset = encode_trace(&trace, &config, 9);
        assert_eq!(dataset.len(), 2);
        for row in &dataset.rows {
            assert_eq!(row.label, 1);
            // url_unique always set on attack messages
            assert_eq!(row.features[9], 1.0);
            // src spoofed to a real device code, never an out-of-range id
            assert_eq!(row.features[1], 1.0);
        }
    }

    #[test]
    fn binarise_matches_the_http_fixture() {
        let column: Vec<String> = ["GET", "POST", "DELETE", "PUT"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (map, rows) = binarise(&column).unwrap();
        assert_eq!(map.bit_string("GET").unwrap(), "0001");
        assert_eq!(map.bit_string("POST").unwrap(), "0010");
        assert_eq!(map.bit_string("DELETE").unwrap(), "0100");
        assert_eq!(map.bit_string("PUT").unwrap(), "1000");
        for row in &rows {
            assert_eq!(row.iter().map(|b| *b as u32).sum::<u32>(), 1);
        }
    }

    #[test]
    fn binarise_single_value_is_one_column_of_ones() {
        let column: Vec<String> = vec!["GET".into(), "GET".into(), "GET".into()];
        let (map, rows) = binarise(&column).unwrap();
        assert_eq!(map.width(), 1);
        assert!(rows.iter().all(|r| r == &vec![1u8]));
    }

    #[test]
    fn onehot_round_trips() {
        let column: Vec<String> = ["a", "b", "a", "c", "b", "a"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (map, rows) = binarise(&column).unwrap();
        assert_eq!(decode_onehot(&map, &rows).unwrap(), column);
    }

    #[test]
    fn clf_line_parses() {
        let line = r#"127.0.0.1 - - [10/Oct/2000:13:55:36 -0700] "GET /s HTTP/1.0" 200 23"#;
        let (table, rejects) = ingest_apache_log(line.as_bytes()).unwrap();
        assert!(rejects.is_empty());
        assert_eq!(table.rows.len(), 1);
        let row = &table.rows[0];
        assert_eq!(row[0], "127.0.0.1");
        assert_eq!(row[2], "GET");
        assert_eq!(row[3], "/s");
        assert_eq!(row[4], "200");
        assert_eq!(row[5], "23");
    }

    #[test]
    fn combined_format_fills_referrer_and_agent() {
        let line = r#"10.0.0.1 - frank [10/Oct/2000:13:55:36 -0700] "POST /api HTTP/1.1" 404 512 "http://example.com/" "Mozilla/5.0""#;
        let (table, rejects) = ingest_apache_log(line.as_bytes()).unwrap();
        assert!(rejects.is_empty());
        let row = &table.rows[0];
        assert_eq!(row[6], "http://example.com/");
        assert_eq!(row[7], "Mozilla/5.0");
    }

    #[test]
    fn empty_log_is_empty_table() {
        let (table, rejects) = ingest_apache_log("".as_bytes()).unwrap();
        assert!(table.rows.is_empty());
        assert!(rejects.is_empty());
    }

    #[test]
    fn malformed_line_goes_to_rejects() {
        let text = "127.0.0.1 - - [10/Oct/2000:13:55:36 -0700] GET /s 200 23\n\
                    127.0.0.1 - - [10/Oct/2000:13:55:37 -0700] \"GET /t HTTP/1.0\" 200 5\n";
        let (table, rejects) = ingest_apache_log(text.as_bytes()).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(rejects.len(), 1);
        assert_eq!(rejects[0].line_number, 1);
    }

    fn toy_rows(label: u8, count: usize) -> Vec<DatasetRow> {
        (0..count)
            .map(|i| DatasetRow {
                features: vec![i as f64, label as f64],
                label,
            })
            .collect()
    }

    fn toy_dataset(label: u8, count: usize) -> Dataset {
        Dataset {
            columns: vec!["a".into(), "b".into()],
            rows: toy_rows(label, count),
        }
    }

    #[test]
    fn mix_hits_exact_counts() {
        let normal = toy_dataset(0, 30_000);
        let attack = toy_dataset(1, 5_000);
        let mixed = mix(&normal, &attack, 0.10, 20_000, 7).unwrap();
        assert_eq!(mixed.len(), 20_000);
        assert_eq!(mixed.attack_count(), 2_000);
    }

    #[test]
    fn mix_fraction_zero_is_all_normal() {
        let normal = toy_dataset(0, 100);
        let attack = toy_dataset(1, 100);
        let mixed = mix(&normal, &attack, 0.0, 50, 7).unwrap();
        assert_eq!(mixed.attack_count(), 0);
    }

    #[test]
    fn mix_reports_the_short_class() {
        let normal = toy_dataset(0, 100);
        let attack = toy_dataset(1, 3);
        match mix(&normal, &attack, 0.5, 100, 7) {
            Err(DatasetError::InsufficientRows { class, need, have }) => {
                assert_eq!(class, "attack");
                assert_eq!(need, 50);
                assert_eq!(have, 3);
            }
            other => panic!("expected InsufficientRows, got {other:?}"),
        }
    }

    #[test]
    fn mix_is_deterministic_and_without_replacement() {
        let normal = toy_dataset(0, 500);
        let attack = toy_dataset(1, 500);
        let a = mix(&normal, &attack, 0.2, 400, 99).unwrap();
        let b = mix(&normal, &attack, 0.2, 400, 99).unwrap();
        assert_eq!(a, b);
        // Without replacement: no duplicate (feature, label) pairs since the
        // toy rows are all distinct.
        let mut keys: Vec<String> = a.rows.iter().map(|r| format!("{r:?}")).collect();
        keys.sort();
        let before = keys.len();
        keys.dedup();
        assert_eq!(before, keys.len());
    }

    #[test]
    fn constant_columns_pass_through_standardization() {
        let mut train = toy_dataset(0, 10);
        for row in &mut train.rows {
            row.features[1] = 4.0;
        }
        let (std_train, _, stats) = standardize(&train, &[]).unwrap();
        assert_eq!(stats[1].std, 0.0);
        assert!(std_train.rows.iter().all(|r| r.features[1] == 4.0));
    }

    #[test]
    fn z_score_arithmetic() {
        // Column with mean 10, population std 2: value 12 maps to 1.
        let train = Dataset {
            columns: vec!["v".into()],
            rows: [8.0, 12.0, 8.0, 12.0]
                .iter()
                .map(|v| DatasetRow {
                    features: vec![*v],
                    label: 0,
                })
                .collect(),
        };
        let (std_train, _, stats) = standardize(&train, &[]).unwrap();
        assert_eq!(stats[0].mean, 10.0);
        assert_eq!(stats[0].std, 2.0);
        assert_eq!(std_train.rows[1].features[0], 1.0);
    }

    #[test]
    fn standardized_train_has_zero_mean_unit_std() {
        let config = load_config(TABLE1).unwrap();
        let trace = simulate(&config, 21, StopCondition::UntilExhausted);
        let dataset = encode_trace(&trace, &config, 1);
        let (std_train, _, _) = standardize(&dataset, &[]).unwrap();
        for (c, stat) in column_stats(&std_train).iter().enumerate() {
            let original = column_stats(&dataset)[c].std;
            if original == 0.0 {
                continue;
            }
            assert!(stat.mean.abs() < 1e-9, "column {c} mean {}", stat.mean);
            assert!((stat.std - 1.0).abs() < 1e-9, "column {c} std {}", stat.std);
        }
    }

    #[test]
    fn test_stats_come_from_train_only() {
        let train = toy_dataset(0, 50);
        let mut test = toy_dataset(0, 50);
        for row in &mut test.rows {
            row.features[0] += 1000.0;
        }
        let (_, others, stats) = standardize(&train, &[&test]).unwrap();
        // The shifted test column keeps its shift after the transform.
        let mean_test: f64 =
            others[0].rows.iter().map(|r| r.features[0]).sum::<f64>() / test.len() as f64;
        assert!((mean_test - 1000.0 / stats[0].std).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trips() {
        let config = load_config(TABLE1).unwrap();
        let trace = simulate(&config, 4, StopCondition::MaxSteps(5));
        let dataset = encode_trace(&trace, &config, 2);
        let mut buf = Vec::new();
        write_csv(&dataset, &mut buf).unwrap();
        let reread = read_csv(buf.as_slice()).unwrap();
        assert_eq!(dataset, reread);
    }

    #[test]
    fn hulk_payload_distributions() {
        // 10,000 attack messages: ua uniform over its list, url_unique all 1,
        // keepalive a fair coin. Tolerance +/- 2%.
        let doc = r#"
seed = 0

[[devices]]
id = "victim"
battery_capacity = 100000.0

[attacker]
power_level = 1

[[attacker.actions]]
label = "flood"
target = "victim"
drain_target = 1.0
time_per_message = 1.0
"#;
        let config = load_config(doc).unwrap();
        let trace = simulate_attack(
            &config,
            AttackMode::Stochastic,
            123,
            StopCondition::MaxSteps(10_000),
        )
        .unwrap();
        let dataset = encode_trace(&trace, &config, 5);
        let n = dataset.len() as f64;
        assert_eq!(n, 10_000.0);

        let mut ua_counts = BTreeMap::new();
        let mut keepalive = 0.0;
        for row in &dataset.rows {
            assert_eq!(row.label, 1);
            assert_eq!(row.features[9], 1.0);
            *ua_counts.entry(row.features[6] as u32).or_insert(0.0) += 1.0;
            keepalive += row.features[8];
        }
        assert_eq!(ua_counts.len(), 8);
        for (ua, count) in &ua_counts {
            assert!(
                (count / n - 0.125).abs() <= 0.02,
                "ua {ua}: frequency {}",
                count / n
            );
        }
        assert!((keepalive / n - 0.5).abs() <= 0.02);
    }

    #[test]
    fn label_fidelity_through_encoding() {
        let doc = r#"
seed = 0

[[devices]]
id = "a"
battery_capacity = 50.0
passive = ["pong"]

[[devices.active]]
label = "ping"
receiver = "b"
probability = 1.0
drain_send = 1.0
drain_recv = 1.0
time_send = 2.0

[[devices]]
id = "b"
battery_capacity = 50.0
passive = ["ping"]

[[devices.active]]
label = "pong"
receiver = "a"
probability = 1.0
drain_send = 1.0
drain_recv = 1.0
time_send = 2.0

[attacker]
power_level = 1

[[attacker.actions]]
label = "flood"
target = "b"
drain_target = 2.0
time_per_message = 1.0
"#;
        let config = load_config(doc).unwrap();
        let trace = simulate_attack(
            &config,
            AttackMode::Stochastic,
            17,
            StopCondition::UntilExhausted,
        )
        .unwrap();
        let dataset = encode_trace(&trace, &config, 3);
        assert_eq!(dataset.len(), trace.transitions.len());
        for (row, tr) in dataset.rows.iter().zip(&trace.transitions) {
            let expected = match tr.label {
                TransitionLabel::Normal => 0,
                TransitionLabel::Attack => 1,
            };
            assert_eq!(row.label, expected);
        }
    }
}
