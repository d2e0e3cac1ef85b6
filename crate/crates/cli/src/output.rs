use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use hetroute_core::sim::TrajectoryStats;
use serde::Serialize;
use serde_json::json;

/// Output directory for one run.
pub struct OutDir {
    pub path: PathBuf,
}

impl OutDir {
    pub fn create(path: PathBuf) -> anyhow::Result<Self> {
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(OutDir { path })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn csv(&self, name: &str) -> anyhow::Result<fs::File> {
        let p = self.file(name);
        fs::File::create(&p).with_context(|| format!("creating {}", p.display()))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        write_json(&self.file(name), value)
    }

    /// `manifest.json`: the resolved spec, the worker count and the version.
    pub fn manifest<T: Serialize>(&self, command: &str, spec: &T) -> anyhow::Result<()> {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        self.json(
            "manifest.json",
            &json!({
                "tool": "hetroute",
                "version": env!("CARGO_PKG_VERSION"),
                "command": command,
                "threads": rayon::current_num_threads(),
                "created_unix": created,
                "spec": spec,
            }),
        )
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// CSV rows `(policy_name, seed, epochs, avg_jobs, response_time,
/// ci_halfwidth)`.
pub fn write_runs_csv<W: std::io::Write>(results: &[(String, Vec<TrajectoryStats>)], writer: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["policy_name", "seed", "epochs", "avg_jobs", "response_time", "ci_halfwidth"])?;
    for (name, runs) in results {
        for r in runs {
            w.write_record([
                name.clone(),
                r.seed.to_string(),
                r.epochs.to_string(),
                format!("{:.10e}", r.avg_jobs),
                format!("{:.10e}", r.response_time),
                format!("{:.10e}", r.ci_halfwidth),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
