//! `manifold-ssl` command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{parse_config, PipelineConfig, EFFECTIVE_CONFIG_FILE};
use crate::dataset::{derive_labels, load_clinical, load_feature_matrix, years_to_days};
use crate::error::{Error, Result};
use crate::evaluation::{run_experiment, ExperimentData, ExperimentReport, SUMMARY_FILE};
use crate::synth::{generate_synthetic, Preset};

pub const THREADS_ENV: &str = "MANIFOLD_SSL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "manifold-ssl", version, about = "Semi-supervised multi-modal survival classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the repeated cross-validation experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; overrides MANIFOLD_SSL_THREADS.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write a synthetic dataset and a matching config.
    Synth {
        /// two_moons, multimodal_manifold or null_noise
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the accuracy summary of a finished run.
    Inspect {
        /// Report directory or its summary.csv.
        #[arg(long)]
        report: PathBuf,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_config() {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Run { config, threads } => {
            let threads = match threads {
                Some(n) => Some(n),
                None => threads_from_env()?,
            };
            let config = parse_config(&config)?;
            let report = execute(&config, threads)?;
            writeln!(out, "wrote reports to {}", config.output_dir.display())
                .and_then(|_| write!(out, "{}", format_summary(&summary_rows_of(&report))))
                .map_err(|e| Error::io("<stdout>", e))
        }
        Command::Synth { preset, seed, out: dir } => {
            let preset: Preset = preset.parse()?;
            generate_synthetic(preset, seed, &dir)?;
            writeln!(out, "wrote {preset} dataset to {}", dir.display()).map_err(|e| Error::io("<stdout>", e))
        }
        Command::Inspect { report } => {
            let rows = read_summary(&report)?;
            write!(out, "{}", format_summary(&rows)).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// Loads the data named by `config`, runs the experiment and writes the
/// reports plus the effective config into the output directory.
pub fn execute(config: &PipelineConfig, threads: Option<usize>) -> Result<ExperimentReport> {
    let records = load_clinical(&config.clinical)?;
    let assignment = derive_labels(&records, years_to_days(config.survival_threshold_years))?;
    let modalities = config
        .modalities
        .iter()
        .map(|(name, path)| load_feature_matrix(path, name))
        .collect::<Result<Vec<_>>>()?;
    let data = ExperimentData::new(modalities, assignment)?;

    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let echo = dir.join(EFFECTIVE_CONFIG_FILE);
    std::fs::write(&echo, config.to_toml()?).map_err(|e| Error::io(&echo, e))?;

    let report = run_experiment(&config.experiment, &data, threads)?;
    report.write_all(dir)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryLine {
    pub modality: String,
    pub method: String,
    pub setting: String,
    pub mean: f64,
    pub std: f64,
    pub repetitions: usize,
}

fn summary_rows_of(report: &ExperimentReport) -> Vec<SummaryLine> {
    report
        .summary
        .iter()
        .map(|r| SummaryLine {
            modality: r.modality.clone(),
            method: r.method.to_string(),
            setting: r.method.setting().to_string(),
            mean: r.mean,
            std: r.std,
            repetitions: r.n,
        })
        .collect()
}

/// Reads `summary.csv` from a report directory or a direct path.
pub fn read_summary(path: &Path) -> Result<Vec<SummaryLine>> {
    let file = if path.is_dir() { path.join(SUMMARY_FILE) } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(Error::Config(format!("no summary report at {}", file.display())));
    }
    let mut reader = csv::Reader::from_path(&file).map_err(|e| Error::Config(format!("{}: {e}", file.display())))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| Error::Format {
            path: file.clone(),
            line,
            message: e.to_string(),
        })?;
        if record.len() != 6 {
            return Err(Error::Format {
                path: file.clone(),
                line,
                message: format!("expected 6 fields, found {}", record.len()),
            });
        }
        let num = |j: usize, expected: &'static str| -> Result<f64> {
            record[j].parse().map_err(|_| Error::Parse {
                path: file.clone(),
                line,
                value: record[j].to_string(),
                expected,
            })
        };
        rows.push(SummaryLine {
            modality: record[0].to_string(),
            method: record[1].to_string(),
            setting: record[2].to_string(),
            mean: num(3, "a number")?,
            std: num(4, "a number")?,
            repetitions: num(5, "a count")? as usize,
        });
    }
    Ok(rows)
}

/// Fixed-width mean ± std table, accuracies in percent.
pub fn format_summary(rows: &[SummaryLine]) -> String {
    let mw = rows.iter().map(|r| r.modality.len()).max().unwrap_or(0).max("modality".len());
    let tw = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max("method".len());
    let mut s = format!(
        "{:<mw$}  {:<tw$}  {:<15}  {:>16}  {:>4}\n",
        "modality", "method", "setting", "accuracy (%)", "reps"
    );
    for r in rows {
        let acc = format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.std);
        s.push_str(&format!(
            "{:<mw$}  {:<tw$}  {:<15}  {:>16}  {:>4}\n",
            r.modality, r.method, r.setting, acc, r.repetitions
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("manifold-ssl").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_args(&[]).0, 1);
        assert_eq!(run_args(&["frobnicate"]).0, 1);
        assert_eq!(run_args(&["run"]).0, 1);
        assert_eq!(run_args(&["--help"]).0, 0);
    }

    #[test]
    fn missing_config_names_path() {
        let (code, _, err) = run_args(&["run", "--config", "/no/such/run.toml"]);
        assert_eq!(code, 1);
        assert!(err.contains("/no/such/run.toml"), "{err}");
    }

    #[test]
    fn unknown_preset_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run_args(&["synth", "--preset", "spirals", "--out", out]).0, 1);
    }

    #[test]
    fn summary_table_has_one_line_per_row() {
        let rows = vec![
            SummaryLine {
                modality: "gene".into(),
                method: "svm".into(),
                setting: "supervised".into(),
                mean: 0.8,
                std: 0.05,
                repetitions: 10,
            },
            SummaryLine {
                modality: "gene".into(),
                method: "lapsvm".into(),
                setting: "semi-supervised".into(),
                mean: 0.85,
                std: 0.04,
                repetitions: 10,
            },
        ];
        let table = format_summary(&rows);
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("85.00 ± 4.00"));
    }
}
