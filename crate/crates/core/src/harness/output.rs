use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::runner::ResultEnvelope;
use super::svg::line_chart;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

/// Files written and files that could not be written.
#[derive(Debug, Default)]
pub struct EmitReport {
    pub written: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

impl EmitReport {
    pub fn ok(&self) -> bool {
        self.failed.is_empty()
    }

    fn write(&mut self, path: PathBuf, contents: &str) {
        match std::fs::write(&path, contents) {
            Ok(()) => self.written.push(path),
            Err(e) => self.failed.push((path, e.to_string())),
        }
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes one CSV (and optionally linear and log-scale SVGs) per metric
/// series plus `envelope.json`. Timing, when present, goes to `timing.json`
/// and exported runs to `runs/`.
pub fn emit_outputs(env: &ResultEnvelope, dir: impl AsRef<Path>, formats: &[OutputFormat]) -> EmitReport {
    let dir = dir.as_ref();
    let mut report = EmitReport::default();
    if let Err(e) = std::fs::create_dir_all(dir) {
        report.failed.push((dir.to_path_buf(), e.to_string()));
        return report;
    }
    if formats.contains(&OutputFormat::Json) {
        report.write(dir.join("envelope.json"), &env.to_json());
        if let Some(timing) = &env.timing {
            let text = serde_json::to_string_pretty(timing).expect("timing serializes") + "\n";
            report.write(dir.join("timing.json"), &text);
        }
    }
    for s in env.all_series() {
        let stem = file_stem(&s.name);
        if formats.contains(&OutputFormat::Csv) {
            report.write(dir.join(format!("{stem}.csv")), &s.to_csv());
        }
        if formats.contains(&OutputFormat::Svg) {
            report.write(dir.join(format!("{stem}.svg")), &line_chart(s, false));
            if s.is_tail_probability() {
                report.write(dir.join(format!("{stem}_log.svg")), &line_chart(s, true));
            }
        }
    }
    if formats.contains(&OutputFormat::Csv) && !env.run_sets.is_empty() {
        let runs_dir = dir.join("runs");
        if let Err(e) = std::fs::create_dir_all(&runs_dir) {
            report.failed.push((runs_dir, e.to_string()));
            return report;
        }
        let stride = env.config.record_stride;
        for (n, rs) in &env.run_sets {
            for rec in &rs.records {
                let csv: String = rec
                    .to_csv()
                    .lines()
                    .enumerate()
                    .filter(|(k, _)| *k == 0 || (k - 1) % stride == 0)
                    .map(|(_, l)| format!("{l}\n"))
                    .collect();
                let name = format!("n{n}_{}_run{}.csv", rs.algorithm, rec.run);
                report.write(runs_dir.join(name), &csv);
            }
        }
    }
    report
}
