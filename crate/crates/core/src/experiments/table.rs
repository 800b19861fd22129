use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::ExperimentError;

pub const CSV_COLUMNS: [&str; 6] = [
    "experiment",
    "condition",
    "metric",
    "value",
    "ci_low",
    "ci_high",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub condition: String,
    pub metric: String,
    pub value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// Counts over equal-width bins starting at `origin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub name: String,
    pub condition: String,
    pub origin: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins cover `[origin, max]`; values below `origin` land in the first bin.
    pub fn from_values(
        name: &str,
        condition: &str,
        origin: f64,
        bin_width: f64,
        values: &[f64],
    ) -> Self {
        let bin = |v: f64| (((v - origin) / bin_width).floor().max(0.0)) as usize;
        let len = values.iter().map(|&v| bin(v) + 1).max().unwrap_or(0);
        let mut counts = vec![0u64; len];
        for &v in values {
            counts[bin(v)] += 1;
        }
        Self {
            name: name.to_string(),
            condition: condition.to_string(),
            origin,
            bin_width,
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Tidy results of one experiment run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub experiment: String,
    /// Metric name to a one-line description; every row's metric is listed.
    pub metrics: BTreeMap<String, String>,
    pub rows: Vec<ResultRow>,
    pub histograms: Vec<Histogram>,
    /// Plain-text side reports keyed by file stem suffix.
    pub reports: BTreeMap<String, String>,
}

impl ResultTable {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            ..Self::default()
        }
    }

    pub fn describe(&mut self, metric: &str, description: &str) {
        self.metrics
            .insert(metric.to_string(), description.to_string());
    }

    pub fn push(&mut self, condition: &str, metric: &str, value: f64) {
        self.push_ci(condition, metric, value, None);
    }

    /// A row with an optional `(low, high)` interval.
    pub fn push_ci(&mut self, condition: &str, metric: &str, value: f64, ci: Option<(f64, f64)>) {
        self.rows.push(ResultRow {
            experiment: self.experiment.clone(),
            condition: condition.to_string(),
            metric: metric.to_string(),
            value,
            ci_low: ci.map(|c| c.0),
            ci_high: ci.map(|c| c.1),
        });
    }

    pub fn value(&self, condition: &str, metric: &str) -> Option<f64> {
        self.row(condition, metric).map(|r| r.value)
    }

    pub fn row(&self, condition: &str, metric: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.condition == condition && r.metric == metric)
    }

    pub fn conditions(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.condition.as_str()) {
                seen.push(&r.condition);
            }
        }
        seen
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        if self.rows.is_empty() {
            return Err(ExperimentError::Table("no rows".into()));
        }
        for r in &self.rows {
            if !self.metrics.contains_key(&r.metric) {
                return Err(ExperimentError::Table(format!(
                    "metric {} is undocumented",
                    r.metric
                )));
            }
            if r.experiment != self.experiment {
                return Err(ExperimentError::Table(format!(
                    "row from {} in {} table",
                    r.experiment, self.experiment
                )));
            }
        }
        for (name, desc) in &self.metrics {
            if name.contains(':') || desc.contains('\n') {
                return Err(ExperimentError::Table(format!(
                    "metric {name} cannot be documented in a header line"
                )));
            }
        }
        Ok(())
    }

    /// Tidy CSV preceded by `# metric: description` lines.
    pub fn to_csv(&self) -> Result<String, ExperimentError> {
        let mut out = String::new();
        out.push_str(&format!("# experiment: {}\n", self.experiment));
        for (name, desc) in &self.metrics {
            out.push_str(&format!("# {name}: {desc}\n"));
        }
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(CSV_COLUMNS)?;
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            writer.write_record([
                r.experiment.clone(),
                r.condition.clone(),
                r.metric.clone(),
                r.value.to_string(),
                fmt(r.ci_low),
                fmt(r.ci_high),
            ])?;
        }
        let body = writer
            .into_inner()
            .map_err(|e| ExperimentError::Io(e.into_error()))?;
        out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(out)
    }

    /// Parses [`ResultTable::to_csv`] output; histograms and reports are not part of it.
    pub fn from_csv<R: Read>(mut source: R) -> Result<Self, ExperimentError> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        let mut table = ResultTable::default();
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            let Some(comment) = line.strip_prefix("# ") else {
                break;
            };
            body_start += line.len();
            let (name, desc) =
                comment
                    .trim_end_matches('\n')
                    .split_once(": ")
                    .ok_or_else(|| {
                        ExperimentError::Table(format!("bad header line `{}`", line.trim_end()))
                    })?;
            if name == "experiment" {
                table.experiment = desc.to_string();
            } else {
                table.describe(name, desc);
            }
        }
        let mut reader = csv::Reader::from_reader(&text.as_bytes()[body_start..]);
        if reader.headers()?.iter().ne(CSV_COLUMNS) {
            return Err(ExperimentError::Table("unexpected CSV columns".into()));
        }
        let parse = |s: &str| -> Result<Option<f64>, ExperimentError> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|_| ExperimentError::Table(format!("`{s}` is not a number")))
        };
        for record in reader.records() {
            let record = record?;
            table.rows.push(ResultRow {
                experiment: record[0].to_string(),
                condition: record[1].to_string(),
                metric: record[2].to_string(),
                value: parse(&record[3])?
                    .ok_or_else(|| ExperimentError::Table("missing value".into()))?,
                ci_low: parse(&record[4])?,
                ci_high: parse(&record[5])?,
            });
        }
        Ok(table)
    }

    /// Nested summary: condition, then metric, then value and interval.
    pub fn to_json(&self) -> Value {
        let mut conditions: Map<String, Value> = Map::new();
        for r in &self.rows {
            let entry = conditions
                .entry(r.condition.clone())
                .or_insert_with(|| Value::Object(Map::new()));
            entry.as_object_mut().expect("object").insert(
                r.metric.clone(),
                json!({ "value": r.value, "ci_low": r.ci_low, "ci_high": r.ci_high }),
            );
        }
        let histograms: Vec<Value> = self
            .histograms
            .iter()
            .map(|h| {
                json!({
                    "name": h.name,
                    "condition": h.condition,
                    "origin": h.origin,
                    "bin_width": h.bin_width,
                    "counts": h.counts,
                })
            })
            .collect();
        json!({
            "experiment": self.experiment,
            "metrics": self.metrics,
            "conditions": conditions,
            "histograms": histograms,
        })
    }

    fn histogram_csv(&self, name: &str) -> String {
        let mut out = String::from("condition,bin_low,bin_high,count\n");
        for h in self.histograms.iter().filter(|h| h.name == name) {
            for (i, c) in h.counts.iter().enumerate() {
                let low = h.origin + i as f64 * h.bin_width;
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    h.condition,
                    low,
                    low + h.bin_width,
                    c
                ));
            }
        }
        out
    }
}

/// JSON Schema (draft 2020-12) of [`ResultTable::to_json`] documents.
pub fn result_schema() -> Value {
    let number_or_null = json!({ "type": ["number", "null"] });
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "crowdship result summary",
        "type": "object",
        "required": ["experiment", "metrics", "conditions", "histograms"],
        "additionalProperties": false,
        "properties": {
            "experiment": { "type": "string", "minLength": 1 },
            "metrics": {
                "type": "object",
                "additionalProperties": { "type": "string" }
            },
            "conditions": {
                "type": "object",
                "minProperties": 1,
                "additionalProperties": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "object",
                        "required": ["value", "ci_low", "ci_high"],
                        "additionalProperties": false,
                        "properties": {
                            "value": { "type": "number" },
                            "ci_low": number_or_null,
                            "ci_high": number_or_null
                        }
                    }
                }
            },
            "histograms": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["name", "condition", "origin", "bin_width", "counts"],
                    "additionalProperties": false,
                    "properties": {
                        "name": { "type": "string" },
                        "condition": { "type": "string" },
                        "origin": { "type": "number" },
                        "bin_width": { "type": "number", "exclusiveMinimum": 0 },
                        "counts": {
                            "type": "array",
                            "items": { "type": "integer", "minimum": 0 }
                        }
                    }
                }
            }
        }
    })
}

/// Writes `<experiment>.csv`, `<experiment>.json`, `<experiment>.schema.json`,
/// one `<experiment>_<histogram>.csv` per histogram name and one
/// `<experiment>_<report>.txt` per report. Returns the paths in write order.
pub fn emit(table: &ResultTable, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    table.check()?;
    fs::create_dir_all(dir)?;
    let stem = &table.experiment;
    let mut written = Vec::new();
    let mut write = |name: String, contents: String| -> Result<(), ExperimentError> {
        let path = dir.join(name);
        fs::write(&path, contents)?;
        written.push(path);
        Ok(())
    };
    write(format!("{stem}.csv"), table.to_csv()?)?;
    write(
        format!("{stem}.json"),
        serde_json::to_string_pretty(&table.to_json())? + "\n",
    )?;
    write(
        format!("{stem}.schema.json"),
        serde_json::to_string_pretty(&result_schema())? + "\n",
    )?;
    let mut names: Vec<&str> = table.histograms.iter().map(|h| h.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    for name in names {
        write(format!("{stem}_{name}.csv"), table.histogram_csv(name))?;
    }
    for (name, text) in &table.reports {
        write(format!("{stem}_{name}.txt"), text.clone())?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ResultTable {
        let mut t = ResultTable::new("demo");
        t.describe("coverage", "fraction of problems with a path");
        t.describe("mean_hops", "mean hop count over feasible problems");
        t.push_ci("uniform/10", "coverage", 0.1 + 0.2, Some((0.05, 0.6)));
        t.push("uniform/10", "mean_hops", 2.0 / 3.0);
        t.push("rural/10", "coverage", 1e-300);
        t.histograms.push(Histogram::from_values(
            "hops",
            "uniform/10",
            0.0,
            1.0,
            &[1.0, 2.0, 2.5],
        ));
        t
    }

    #[test]
    fn histogram_bins_are_half_open() {
        let h = Histogram::from_values("h", "c", 0.0, 2.0, &[0.0, 1.9, 2.0, 5.0, -1.0]);
        assert_eq!(h.counts, [3, 1, 1]);
        assert_eq!(h.total(), 5);
    }

    #[test]
    fn csv_keeps_exact_values() {
        let t = sample();
        let back = ResultTable::from_csv(t.to_csv().unwrap().as_bytes()).unwrap();
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.metrics, t.metrics);
        assert_eq!(back.experiment, "demo");
    }

    #[test]
    fn undocumented_metrics_are_rejected() {
        let mut t = sample();
        t.push("x", "mystery", 1.0);
        assert!(matches!(t.check(), Err(ExperimentError::Table(_))));
        assert!(ResultTable::new("empty").check().is_err());
    }

    #[test]
    fn json_nests_by_condition() {
        let v = sample().to_json();
        assert_eq!(v["conditions"]["uniform/10"]["coverage"]["ci_high"], 0.6);
        assert!(v["conditions"]["uniform/10"]["mean_hops"]["ci_low"].is_null());
        assert_eq!(v["histograms"][0]["counts"], json!([0, 1, 2]));
    }
}
