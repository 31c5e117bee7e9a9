use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::svg::{Plot, Series};
use super::ExperimentRecord;
use crate::error::{Result, TomoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = TomoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(TomoError::invalid(format!("unknown report format '{other}'"))),
        }
    }
}

fn csv_error(e: csv::Error) -> TomoError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => TomoError::Io(io),
        other => TomoError::Parse(format!("{other:?}")),
    }
}

pub fn read_records_json(text: &str) -> Result<Vec<ExperimentRecord>> {
    serde_json::from_str(text).map_err(|e| TomoError::Parse(e.to_string()))
}

pub fn read_records_csv(text: &str) -> Result<Vec<ExperimentRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader.deserialize().map(|r| r.map_err(csv_error)).collect()
}

fn write_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in records {
        writer.serialize(r).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn label(r: &ExperimentRecord) -> String {
    if r.method == "nn" {
        format!("nn/{}", r.strategy)
    } else {
        r.method.clone()
    }
}

fn group_points(records: &[&ExperimentRecord], x: impl Fn(&ExperimentRecord) -> f64, y: impl Fn(&ExperimentRecord) -> f64) -> Vec<Series> {
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        groups.entry(label(r)).or_default().push((x(r), y(r)));
    }
    groups.into_iter().map(|(name, points)| Series::scatter(name, points)).collect()
}

/// Mean of `y` per distinct `x`, per label, as lines.
fn group_means(records: &[&ExperimentRecord], x: impl Fn(&ExperimentRecord) -> f64, y: impl Fn(&ExperimentRecord) -> f64) -> Vec<Series> {
    let mut groups: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for r in records {
        let key = x(r);
        let slot = groups.entry(label(r)).or_default().entry(key.to_bits()).or_insert((key, 0.0, 0));
        slot.1 += y(r);
        slot.2 += 1;
    }
    groups
        .into_iter()
        .map(|(name, pts)| {
            let mut points: Vec<(f64, f64)> = pts.into_values().map(|(x, s, n)| (x, s / n as f64)).collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series::line(name, points)
        })
        .collect()
}

fn svg_reports(records: &[ExperimentRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let ok: Vec<&ExperimentRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let mut written = Vec::new();
    let mut emit = |name: &str, plot: Plot| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, plot.render())?;
        written.push(path);
        Ok(())
    };

    emit(
        "fidelity_vs_time.svg",
        Plot::new("Fidelity vs optimization time", "wall seconds", "fidelity")
            .with_series(group_points(&ok, |r| r.wall_seconds, |r| r.final_fidelity)),
    )?;
    emit(
        "fidelity_vs_purity.svg",
        Plot::new("Fidelity vs state purity", "purity tr(rho^2)", "fidelity")
            .with_series(group_points(&ok, |r| r.purity, |r| r.final_fidelity)),
    )?;

    let mut qubit_counts: Vec<usize> = ok.iter().map(|r| r.qubits).collect();
    qubit_counts.sort_unstable();
    qubit_counts.dedup();
    if qubit_counts.len() > 1 {
        emit(
            "time_vs_qubits.svg",
            Plot::new("Optimization time vs qubits", "qubits", "mean wall seconds")
                .with_series(group_means(&ok, |r| r.qubits as f64, |r| r.wall_seconds)),
        )?;
    }

    let mut sample_counts: Vec<u64> = ok.iter().map(|r| r.samples).filter(|&s| s > 0).collect();
    sample_counts.sort_unstable();
    sample_counts.dedup();
    if sample_counts.len() > 1 {
        let sampled: Vec<&ExperimentRecord> = ok.iter().copied().filter(|r| r.samples > 0).collect();
        emit(
            "fidelity_vs_samples.svg",
            Plot::new("Fidelity vs sample size", "log10 samples", "mean fidelity")
                .with_series(group_means(&sampled, |r| (r.samples as f64).log10(), |r| r.final_fidelity)),
        )?;
    }

    let noisy: Vec<&ExperimentRecord> = ok.iter().copied().filter(|r| r.ideal_fidelity.is_some()).collect();
    if !noisy.is_empty() {
        let mut ideal: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for r in &noisy {
            ideal.entry(r.lambda.to_bits()).or_insert((r.lambda, r.ideal_fidelity.unwrap_or(0.0)));
        }
        let mut ideal_points: Vec<(f64, f64)> = ideal.into_values().collect();
        ideal_points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut series = group_means(&noisy, |r| r.lambda, |r| r.final_fidelity);
        series.push(Series::reference("ideal 1-(1-1/d)lambda", ideal_points));
        emit(
            "fidelity_vs_lambda.svg",
            Plot::new("Fidelity vs depolarizing strength", "lambda", "fidelity").with_series(series),
        )?;
    }
    Ok(written)
}

/// Write `records` in the requested formats under `dir`; returns the files written.
pub fn emit_report(records: &[ExperimentRecord], formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for format in formats {
        match format {
            ReportFormat::Csv => {
                let path = dir.join("records.csv");
                write_csv(records, &path)?;
                written.push(path);
            }
            ReportFormat::Json => {
                let path = dir.join("records.json");
                let text = serde_json::to_string_pretty(records).map_err(|e| TomoError::Parse(e.to_string()))?;
                fs::write(&path, text)?;
                written.push(path);
            }
            ReportFormat::Svg => {
                if records.is_empty() {
                    return Err(TomoError::invalid("svg report needs at least one record"));
                }
                written.extend(svg_reports(records, dir)?);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(lambda: f64, fidelity: f64) -> ExperimentRecord {
        ExperimentRecord {
            qubits: 2,
            state_kind: "product".into(),
            state_seed: 99,
            purity: 0.5,
            strategy: "chol_h".into(),
            method: "nn".into(),
            samples: 0,
            lambda,
            iterations: 12,
            wall_seconds: 0.25,
            final_fidelity: fidelity,
            converged: true,
            ideal_fidelity: Some(1.0 - 0.75 * lambda),
            error: None,
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&[record(0.0, 0.99)], &[ReportFormat::Csv], dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("records.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "qubits,state_kind,state_seed,purity,strategy,method,samples,lambda,iterations,wall_seconds,final_fidelity,converged,ideal_fidelity,error"
        );
        assert_eq!(read_records_csv(&text).unwrap(), vec![record(0.0, 0.99)]);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut failed = record(0.3, 0.0);
        failed.error = Some("numeric error: boom".into());
        failed.ideal_fidelity = None;
        let records = vec![record(0.1, 0.9), failed];
        emit_report(&records, &[ReportFormat::Json], dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("records.json")).unwrap();
        assert_eq!(read_records_json(&text).unwrap(), records);
    }

    #[test]
    fn depolarizing_svg_has_reference_line() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<_> = (0..=4).map(|i| record(i as f64 / 4.0, 1.0 - 0.7 * i as f64 / 4.0)).collect();
        let files = emit_report(&records, &[ReportFormat::Svg], dir.path()).unwrap();
        let lambda = files.iter().find(|p| p.ends_with("fidelity_vs_lambda.svg")).expect("lambda plot");
        let text = fs::read_to_string(lambda).unwrap();
        assert!(text.contains("ideal 1-(1-1/d)lambda"));
        assert!(text.contains("class=\"reference\""));
        assert!(text.contains(">lambda</text>"));
        assert!(!files.iter().any(|p| p.ends_with("time_vs_qubits.svg")));
    }

    #[test]
    fn svg_needs_records_and_writable_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(&[], &[ReportFormat::Svg], dir.path()), Err(TomoError::InvalidArgument(_))));
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        assert!(matches!(
            emit_report(&[record(0.0, 1.0)], &[ReportFormat::Csv], &file.join("sub")),
            Err(TomoError::Io(_))
        ));
    }
}
