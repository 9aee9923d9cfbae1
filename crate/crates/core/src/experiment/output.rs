use super::{ExperimentError, ExperimentResult, NSummary, TrialRecord};
use crate::diagnostics::SlopeFit;
use crate::scalar::Scalar;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

/// The three files `write_results` produces for a prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub raw: PathBuf,
    pub summary: PathBuf,
    pub meta: PathBuf,
}

impl OutputPaths {
    pub fn for_prefix(prefix: &str) -> Self {
        Self {
            raw: format!("{prefix}_raw.csv").into(),
            summary: format!("{prefix}_summary.csv").into(),
            meta: format!("{prefix}_meta.json").into(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io { path: path.to_path_buf(), source: std::io::Error::other(e) }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// `N,trial,seed,e_N,psi_min,tau_beta_exceeded`, one row per trial.
pub fn write_raw_csv<S: Scalar>(records: &[TrialRecord<S>], path: &Path) -> Result<(), ExperimentError> {
    write_csv(
        path,
        &["N", "trial", "seed", "e_N", "psi_min", "tau_beta_exceeded"],
        records.iter().map(|r| {
            vec![
                r.particles.to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                r.e_n.to_string(),
                r.diagnostics.psi_min.to_string(),
                r.diagnostics.tau_beta.is_none().to_string(),
            ]
        }),
    )
}

#[derive(Serialize)]
struct Meta<'a, S: Serialize> {
    config: &'a super::ExperimentConfig<S>,
    fit: Option<SlopeFit>,
    summary: &'a [NSummary<S>],
    seed_scheme: &'a str,
    versions: Versions<'a>,
}

#[derive(Serialize)]
struct Versions<'a> {
    #[serde(rename = "mpl-core")]
    core: &'a str,
}

/// Write `<prefix>_raw.csv`, `<prefix>_summary.csv` and `<prefix>_meta.json`.
///
/// Refuses an empty result before touching the file system.
pub fn write_results<S: Scalar + Serialize>(res: &ExperimentResult<S>, prefix: &str) -> Result<OutputPaths, ExperimentError> {
    if res.records.is_empty() {
        return Err(ExperimentError::Empty);
    }
    let paths = OutputPaths::for_prefix(prefix);
    write_raw_csv(&res.records, &paths.raw)?;
    write_csv(
        &paths.summary,
        &["N", "mean_eN", "stderr_eN", "trials"],
        res.summary
            .iter()
            .map(|s| vec![s.particles.to_string(), s.mean.to_string(), s.stderr.to_string(), s.trials.to_string()]),
    )?;
    let meta = Meta {
        config: &res.provenance.config,
        fit: res.fit,
        summary: &res.summary,
        seed_scheme: &res.provenance.seed_scheme,
        versions: Versions { core: &res.provenance.version },
    };
    let mut text = serde_json::to_string_pretty(&meta).map_err(|e| ExperimentError::Io {
        path: paths.meta.clone(),
        source: std::io::Error::other(e),
    })?;
    text.push('\n');
    fs::write(&paths.meta, text).map_err(io_err(&paths.meta))?;
    Ok(paths)
}

/// Parse a summary CSV written by [`write_results`].
pub fn read_summary_csv(path: &Path) -> Result<Vec<NSummary<f64>>, ExperimentError> {
    let parse = |line: usize, reason: String| ExperimentError::Parse { path: path.to_path_buf(), reason: format!("line {line}: {reason}") };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    if header.iter().collect::<Vec<_>>() != ["N", "mean_eN", "stderr_eN", "trials"] {
        return Err(parse(1, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| parse(line, e.to_string()))?;
        let field = |j: usize| row.get(j).ok_or_else(|| parse(line, format!("missing column {j}")));
        out.push(NSummary {
            particles: field(0)?.parse().map_err(|e| parse(line, format!("N: {e}")))?,
            mean: field(1)?.parse().map_err(|e| parse(line, format!("mean_eN: {e}")))?,
            stderr: field(2)?.parse().map_err(|e| parse(line, format!("stderr_eN: {e}")))?,
            trials: field(3)?.parse().map_err(|e| parse(line, format!("trials: {e}")))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{fit_slope, DiagnosticsReport};
    use crate::experiment::ExperimentConfig;

    fn record(particles: usize, trial: usize, e_n: f64) -> TrialRecord<f64> {
        TrialRecord {
            particles,
            trial,
            seed: 7,
            e_n,
            diagnostics: DiagnosticsReport { psi_min: 0.5, tau_beta: None, e_n, likelihood_mean: 1.0, slope: None },
        }
    }

    fn result(records: Vec<TrialRecord<f64>>) -> ExperimentResult<f64> {
        ExperimentResult::from_records(ExperimentConfig::default(), records)
    }

    fn data_rows(path: &Path) -> usize {
        fs::read_to_string(path).unwrap().lines().count() - 1
    }

    #[test]
    fn empty_result_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("run").to_string_lossy().into_owned();
        assert!(matches!(write_results(&result(vec![]), &prefix), Err(ExperimentError::Empty)));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn one_trial_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("one").to_string_lossy().into_owned();
        let paths = write_results(&result(vec![record(5, 0, 0.25)]), &prefix).unwrap();
        assert_eq!(data_rows(&paths.raw), 1);
        assert_eq!(data_rows(&paths.summary), 1);
        let raw = fs::read_to_string(&paths.raw).unwrap();
        assert!(raw.starts_with("N,trial,seed,e_N,psi_min,tau_beta_exceeded\n5,0,7,0.25,0.5,true\n"));
    }

    #[test]
    fn summary_round_trip_reproduces_fit() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("fit").to_string_lossy().into_owned();
        let recs = vec![record(5, 0, 0.31), record(5, 1, 0.17), record(15, 0, 0.07), record(15, 1, 0.05), record(45, 0, 0.013)];
        let res = result(recs);
        let paths = write_results(&res, &prefix).unwrap();

        let summary = read_summary_csv(&paths.summary).unwrap();
        let points: Vec<(f64, f64)> = summary.iter().map(|s| (s.particles as f64, s.mean)).collect();
        let refit = fit_slope(&points).unwrap();
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(&paths.meta).unwrap()).unwrap();
        let slope = meta["fit"]["slope"].as_f64().unwrap();
        assert!((refit.slope - slope).abs() <= 1e-12);
        assert!(meta["versions"]["mpl-core"].is_string());
        assert_eq!(meta["config"]["trials"], 20);
    }

    #[test]
    fn rewriting_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("again").to_string_lossy().into_owned();
        let res = result(vec![record(5, 0, 0.2), record(9, 0, 0.1)]);
        let paths = write_results(&res, &prefix).unwrap();
        let first: Vec<Vec<u8>> = [&paths.raw, &paths.summary, &paths.meta].iter().map(|p| fs::read(p).unwrap()).collect();
        write_results(&res, &prefix).unwrap();
        let second: Vec<Vec<u8>> = [&paths.raw, &paths.summary, &paths.meta].iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn io_failure_names_the_path() {
        let res = result(vec![record(5, 0, 0.2)]);
        let err = write_results(&res, "/nonexistent-dir/x/run").unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x/run_raw.csv"), "{err}");
    }

    #[test]
    fn summary_parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "N,mean_eN,stderr_eN,trials\n5,0.1,0.0,1\n7,oops,0,1\n").unwrap();
        let err = read_summary_csv(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
