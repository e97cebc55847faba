use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::{build_network, embedding_stats, epoch_metrics, punish_counts, trait_trajectory, AnalysisError, LogView};

/// Formats like C's `%.9g`: nine significant digits, trailing zeros
/// dropped, scientific notation outside 1e-4..1e9.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig9).unwrap_or_default()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportSummary {
    pub files: Vec<PathBuf>,
}

struct Out<'a> {
    root: &'a Path,
    summary: ExportSummary,
}

impl Out<'_> {
    fn write(&mut self, rel: &Path, bytes: &[u8]) -> Result<(), AnalysisError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| AnalysisError::Io { path: dir.to_path_buf(), source })?;
        }
        std::fs::write(&path, bytes).map_err(|source| AnalysisError::Io { path: path.clone(), source })?;
        self.summary.files.push(path);
        Ok(())
    }

    fn json(&mut self, rel: &Path, value: &impl Serialize) -> Result<(), AnalysisError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

pub const PUNISH_COUNTS_HEADER: [&str; 4] = ["group", "run", "round", "punish_count"];
pub const EPOCH_METRICS_HEADER: [&str; 13] = [
    "run",
    "epoch",
    "mean_vengefulness",
    "mean_boldness",
    "cheat_count",
    "punish_count",
    "mean_payoff",
    "embedding_variance",
    "var_vengefulness",
    "var_boldness",
    "cheat_rate",
    "punish_rate",
    "sd_payoff",
];
pub const TRAIT_CELLS_HEADER: [&str; 5] = ["run", "epoch", "vengefulness", "boldness", "count"];

/// Writes every export for `logs` under `out`. Per-log files go in a
/// subdirectory named after the log.
pub fn write_exports(logs: &[LogView], out: &Path) -> Result<ExportSummary, AnalysisError> {
    let mut o = Out { root: out, summary: ExportSummary::default() };

    let rows = punish_counts(logs)
        .into_iter()
        .map(|r| vec![r.group, r.run, r.round.to_string(), r.punish_count.to_string()]);
    o.write(Path::new("punish_counts.csv"), &csv_bytes(&PUNISH_COUNTS_HEADER, rows)?)?;

    let mut metric_rows = Vec::new();
    let mut cell_rows = Vec::new();
    for log in logs {
        for m in epoch_metrics(log)? {
            metric_rows.push(vec![
                log.name.clone(),
                m.epoch.to_string(),
                opt(m.mean_vengefulness),
                opt(m.mean_boldness),
                m.cheat_count.to_string(),
                m.punish_count.to_string(),
                format_sig9(m.mean_payoff),
                opt(m.embedding_variance),
                opt(m.var_vengefulness),
                opt(m.var_boldness),
                format_sig9(m.cheat_rate),
                format_sig9(m.punish_rate),
                format_sig9(m.sd_payoff),
            ]);
        }
        if let Ok(points) = trait_trajectory(&log.epochs) {
            for p in points {
                for c in p.cells {
                    cell_rows.push(vec![
                        log.name.clone(),
                        p.epoch.to_string(),
                        c.vengefulness.to_string(),
                        c.boldness.to_string(),
                        c.count.to_string(),
                    ]);
                }
            }
        }
    }
    o.write(Path::new("epoch_metrics.csv"), &csv_bytes(&EPOCH_METRICS_HEADER, metric_rows)?)?;
    o.write(Path::new("trait_cells.csv"), &csv_bytes(&TRAIT_CELLS_HEADER, cell_rows)?)?;

    for log in logs {
        let dir = PathBuf::from(&log.name);
        for round in &log.rounds {
            let net = build_network(log, round.round)?;
            o.write(&dir.join(format!("network_{}.dot", round.round)), net.to_dot().as_bytes())?;
            o.json(&dir.join(format!("network_{}.json", round.round)), &net)?;
        }
        for e in &log.embeddings {
            let vectors: Vec<Vec<f64>> = e.vectors.iter().map(|v| v.values.clone()).collect();
            let stats = embedding_stats(&vectors)?;
            o.json(
                &dir.join(format!("embeddings_{}.json", e.epoch)),
                &json!({
                    "epoch": e.epoch,
                    "model": e.model,
                    "dim": stats.dim,
                    "centroid": stats.centroid,
                    "variance": stats.variance,
                    "vectors": e.vectors,
                }),
            )?;
        }
    }
    Ok(o.summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-50.0, "-50"),
            (2.0 / 7.0, "0.285714286"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.00001234, "1.234e-05"),
            (0.0001234, "0.0001234"),
            (9.9999999999, "10"),
            (49.95, "49.95"),
        ];
        for (x, want) in cases {
            assert_eq!(format_sig9(x), want, "{x}");
        }
    }
}
