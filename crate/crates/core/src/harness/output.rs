//! Plot-ready CSV files. Every file starts with a `run` column so that sweep
//! and ablation reports can share one set of files.

use std::fs::File;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::report::EvalReport;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

pub const DELTA_HIST_CSV: &str = "delta_hist.csv";
pub const GOLDEN_PROB_CSV: &str = "golden_prob.csv";
pub const COMMON_TOKENS_CSV: &str = "common_tokens.csv";
pub const JSD_BY_PROPERTY_CSV: &str = "jsd_by_property.csv";

fn run_label(report: &EvalReport) -> String {
    report.label.clone().unwrap_or_else(|| report.config.mode.as_str().to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), OutputError> {
    let file = File::create(path).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })?;
    let mut w = csv::Writer::from_writer(file);
    let err = |source| OutputError::Csv { path: path.to_path_buf(), source };
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}

/// Writes the four analysis CSVs into `dir`, returning their paths.
pub fn write_analysis_csvs(dir: &Path, reports: &[EvalReport]) -> Result<Vec<PathBuf>, OutputError> {
    std::fs::create_dir_all(dir).map_err(|source| OutputError::Io { path: dir.to_path_buf(), source })?;
    let mut hist = Vec::new();
    let mut golden = Vec::new();
    let mut common = Vec::new();
    let mut jsd = Vec::new();
    for r in reports {
        let run = run_label(r);
        for a in &r.aggregate {
            jsd.push(vec![run.clone(), a.property.to_string(), a.cases.to_string(), opt(a.jsd), opt(a.jsd_x100)]);
        }
        let Some(analysis) = &r.analysis else { continue };
        for b in &analysis.delta_histogram {
            hist.push(vec![
                run.clone(),
                b.lo.to_string(),
                b.hi.to_string(),
                b.count.to_string(),
                b.proportion.to_string(),
                b.oe_in_bin.to_string(),
            ]);
        }
        for g in &analysis.golden_prob {
            golden.push(vec![
                run.clone(),
                g.property.to_string(),
                g.mode.as_str().to_string(),
                g.cases.to_string(),
                g.golden_prob.to_string(),
                opt(g.outdated_prob),
            ]);
        }
        let stats = &analysis.common_tokens;
        for s in &stats.prob_shift {
            common.push(vec![
                run.clone(),
                s.class.as_str().to_string(),
                s.count.to_string(),
                stats.total_tokens.to_string(),
                stats.proportion_common.to_string(),
                s.edited_plain_prob.to_string(),
                s.disco_prob.to_string(),
            ]);
        }
    }
    let files = [
        (DELTA_HIST_CSV, vec!["run", "bin_lo", "bin_hi", "count", "proportion", "mean_oe"], hist),
        (GOLDEN_PROB_CSV, vec!["run", "property", "mode", "cases", "golden_prob", "outdated_prob"], golden),
        (
            COMMON_TOKENS_CSV,
            vec!["run", "class", "count", "total_tokens", "proportion_common", "edited_plain_prob", "disco_prob"],
            common,
        ),
        (JSD_BY_PROPERTY_CSV, vec!["run", "property", "cases", "jsd", "jsd_x100"], jsd),
    ];
    let mut written = Vec::new();
    for (name, header, rows) in files {
        let path = dir.join(name);
        write_csv(&path, &header, rows)?;
        written.push(path);
    }
    Ok(written)
}
