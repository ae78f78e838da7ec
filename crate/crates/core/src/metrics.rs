//! Test-set evaluation and the per-round metric stream.
//!
//! CSV layout: `round,algo,seed,loss,accuracy,tau_k,eta_tau_L` followed by
//! `tau_i,beta_i,delta_i,A_i` for every client `i`. A row with round `k`
//! evaluates the model produced by aggregating round `k` (0-based). Empty
//! cells mean "not defined for this row". Reals are written with 17
//! significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelSpec};
use crate::numerics::ParamVector;

/// Mean test loss and fraction of correct predictions.
pub fn evaluate(w: &ParamVector, spec: &ModelSpec, test: &Dataset) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let loss = model::loss(spec, w, &test.samples)?;
    let correct = test
        .samples
        .iter()
        .filter(|s| spec.predict(w, &s.features) == s.label)
        .count();
    Ok((loss, correct as f64 / test.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedLabel {
    Seed(u64),
    /// Average over all seeds of a multi-seed run.
    Mean(MeanTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanTag {
    Mean,
}

impl std::fmt::Display for SeedLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SeedLabel::Seed(s) => write!(f, "{s}"),
            SeedLabel::Mean(_) => f.write_str("mean"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub round: u32,
    pub algo: String,
    pub seed: SeedLabel,
    pub loss: f64,
    pub accuracy: f64,
    pub tau_k: Option<f64>,
    pub eta_tau_l: Option<f64>,
    pub clients: Vec<ClientMetrics>,
}

/// Fixed-width scientific notation with 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_tau(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format_real(x)
    }
}

fn opt(x: Option<f64>, f: fn(f64) -> String) -> String {
    x.map(f).unwrap_or_default()
}

pub fn header(n_clients: usize) -> Vec<String> {
    let mut h: Vec<String> = ["round", "algo", "seed", "loss", "accuracy", "tau_k", "eta_tau_L"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 0..n_clients {
        h.extend([
            format!("tau_{i}"),
            format!("beta_{i}"),
            format!("delta_{i}"),
            format!("A_{i}"),
        ]);
    }
    h
}

impl MetricRecord {
    fn to_row(&self) -> Vec<String> {
        let mut row = vec![
            self.round.to_string(),
            self.algo.clone(),
            self.seed.to_string(),
            format_real(self.loss),
            format_real(self.accuracy),
            opt(self.tau_k, format_real),
            opt(self.eta_tau_l, format_real),
        ];
        for c in &self.clients {
            row.extend([
                opt(c.tau, format_tau),
                opt(c.beta, format_real),
                opt(c.delta, format_real),
                opt(c.a, format_real),
            ]);
        }
        row
    }
}

/// Renders records as CSV text.
pub fn to_csv(records: &[MetricRecord]) -> Result<Vec<u8>> {
    let first = records.first().ok_or(Error::Empty("metric records"))?;
    let n = first.clients.len();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header(n))?;
    for r in records {
        if r.clients.len() != n {
            return Err(Error::InvalidArgument(format!(
                "record has {} clients, header has {n}",
                r.clients.len()
            )));
        }
        w.write_record(r.to_row())?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Renders records as JSON lines.
pub fn to_json_lines(records: &[MetricRecord]) -> Result<Vec<u8>> {
    if records.is_empty() {
        return Err(Error::Empty("metric records"));
    }
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    JsonLines,
}

pub fn write_metrics(records: &[MetricRecord], path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
    let bytes = match format {
        OutputFormat::Csv => to_csv(records)?,
        OutputFormat::JsonLines => to_json_lines(records)?,
    };
    let mut f = BufWriter::new(File::create(path.as_ref())?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

fn parse_opt(cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::InvalidArgument(format!("bad numeric cell {cell:?}")))
}

fn parse_req(cell: &str) -> Result<f64> {
    parse_opt(cell)?.ok_or_else(|| Error::InvalidArgument("required cell is empty".into()))
}

/// Parses CSV produced by [`to_csv`].
pub fn from_csv(bytes: &[u8]) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers()?.clone();
    if headers.len() < 7 || (headers.len() - 7) % 4 != 0 {
        return Err(Error::InvalidArgument(format!(
            "unexpected metrics header with {} columns",
            headers.len()
        )));
    }
    let n = (headers.len() - 7) / 4;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let seed = match &row[2] {
            "mean" => SeedLabel::Mean(MeanTag::Mean),
            s => SeedLabel::Seed(
                s.parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad seed {s:?}")))?,
            ),
        };
        let clients = (0..n)
            .map(|i| {
                let c = 7 + 4 * i;
                Ok(ClientMetrics {
                    tau: parse_opt(&row[c])?,
                    beta: parse_opt(&row[c + 1])?,
                    delta: parse_opt(&row[c + 2])?,
                    a: parse_opt(&row[c + 3])?,
                })
            })
            .collect::<Result<_>>()?;
        out.push(MetricRecord {
            round: row[0]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad round {:?}", &row[0])))?,
            algo: row[1].to_string(),
            seed,
            loss: parse_req(&row[3])?,
            accuracy: parse_req(&row[4])?,
            tau_k: parse_opt(&row[5])?,
            eta_tau_l: parse_opt(&row[6])?,
            clients,
        });
    }
    Ok(out)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    from_csv(&std::fs::read(path.as_ref())?)
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v?;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Appends one `mean` row per (algo, round) averaging the per-seed rows.
/// Cells that are empty for any seed stay empty.
pub fn with_mean_rows(records: Vec<MetricRecord>) -> Vec<MetricRecord> {
    let mut keys: Vec<(String, u32)> = Vec::new();
    for r in &records {
        let key = (r.algo.clone(), r.round);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut means = Vec::with_capacity(keys.len());
    for (algo, round) in keys {
        let group: Vec<&MetricRecord> = records
            .iter()
            .filter(|r| r.algo == algo && r.round == round && matches!(r.seed, SeedLabel::Seed(_)))
            .collect();
        let n_clients = group[0].clients.len();
        means.push(MetricRecord {
            round,
            algo,
            seed: SeedLabel::Mean(MeanTag::Mean),
            loss: mean_opt(group.iter().map(|r| Some(r.loss))).unwrap_or(f64::NAN),
            accuracy: mean_opt(group.iter().map(|r| Some(r.accuracy))).unwrap_or(f64::NAN),
            tau_k: mean_opt(group.iter().map(|r| r.tau_k)),
            eta_tau_l: mean_opt(group.iter().map(|r| r.eta_tau_l)),
            clients: (0..n_clients)
                .map(|i| ClientMetrics {
                    tau: mean_opt(group.iter().map(|r| r.clients[i].tau)),
                    beta: mean_opt(group.iter().map(|r| r.clients[i].beta)),
                    delta: mean_opt(group.iter().map(|r| r.clients[i].delta)),
                    a: mean_opt(group.iter().map(|r| r.clients[i].a)),
                })
                .collect(),
        });
    }
    let mut out = records;
    out.extend(means);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sample;

    fn binary_set() -> Dataset {
        Dataset::new(
            vec![
                Sample::new(vec![2.0], 0),
                Sample::new(vec![1.0], 0),
                Sample::new(vec![-1.0], 1),
                Sample::new(vec![0.5], 1),
            ],
            2,
        )
        .unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let spec = ModelSpec::squared_svm(1);
        let ds = binary_set();
        // score = x: predicts +1 for x >= 0, wrong only on the last sample.
        let (_, acc) = evaluate(&ParamVector::new(vec![1.0, 0.0]), &spec, &ds).unwrap();
        assert_eq!(acc, 0.75);
        // Shifting the threshold to 0.75 separates the set.
        let (_, acc) = evaluate(&ParamVector::new(vec![1.0, -0.75]), &spec, &ds).unwrap();
        assert_eq!(acc, 1.0);
        // Zero weights predict +1 everywhere.
        let (loss, acc) = evaluate(&ParamVector::zeros(2), &spec, &ds).unwrap();
        assert_eq!((loss, acc), (1.0, 0.5));
        let empty = Dataset {
            samples: vec![],
            num_classes: 2,
            feature_dim: 1,
        };
        assert!(evaluate(&ParamVector::zeros(2), &spec, &empty).is_err());
    }

    fn record(round: u32, seed: u64, n: usize) -> MetricRecord {
        MetricRecord {
            round,
            algo: "fedveca".into(),
            seed: SeedLabel::Seed(seed),
            loss: 0.1 + round as f64 / 3.0,
            accuracy: 0.9,
            tau_k: (round > 0).then_some(12.4),
            eta_tau_l: (round > 0).then_some(1.0 / 7.0),
            clients: (0..n)
                .map(|i| ClientMetrics {
                    tau: Some(2.0 + i as f64),
                    beta: (round > 0).then_some(0.1 * i as f64),
                    delta: (round > 0).then_some(std::f64::consts::PI),
                    a: (round > 0).then_some(1e-7),
                })
                .collect(),
        }
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let one = to_csv(&[record(0, 1, 2)]).unwrap();
        let text = String::from_utf8(one).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("round,algo,seed,loss,accuracy,tau_k,eta_tau_L,tau_0,beta_0,delta_0,A_0,tau_1"));
        assert!(text.ends_with('\n') && !text.contains('\r'));

        let recs: Vec<_> = (0..4).map(|k| record(k, 9, 3)).collect();
        let bytes = to_csv(&recs).unwrap();
        assert_eq!(from_csv(&bytes).unwrap(), recs);
        assert!(to_csv(&[]).is_err());
    }

    #[test]
    fn mean_rows() {
        let mut a = record(1, 1, 1);
        let mut b = record(1, 2, 1);
        a.loss = 1.0;
        b.loss = 3.0;
        b.clients[0].beta = None;
        let all = with_mean_rows(vec![a, b]);
        assert_eq!(all.len(), 3);
        let m = &all[2];
        assert_eq!(m.seed, SeedLabel::Mean(MeanTag::Mean));
        assert_eq!(m.loss, 2.0);
        assert_eq!(m.clients[0].beta, None);
        let back = from_csv(&to_csv(&all).unwrap()).unwrap();
        assert_eq!(back, all);
    }

    #[test]
    fn json_lines() {
        let recs: Vec<_> = (0..3).map(|k| record(k, 5, 2)).collect();
        let bytes = to_json_lines(&recs).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 3);
        let back: MetricRecord = serde_json::from_str(text.lines().nth(2).unwrap()).unwrap();
        assert_eq!(back, recs[2]);
    }
}
