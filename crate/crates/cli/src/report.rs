use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use panelgap_core::{Error, PeriodIndex, Result};
use serde::Serialize;

/// Inputs shared by every data-driven command, after resolution.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub input: String,
    pub outcome: String,
    pub treated: String,
    pub t0: PeriodIndex,
    pub donors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread_vs: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth: Option<crate::args::Growth>,
    pub seed: u64,
}

/// Canonical report layout: everything needed to reproduce the result.
#[derive(Serialize)]
pub struct Report<'a, C: Serialize, S: Serialize, R: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a C,
    pub settings: &'a S,
    pub result: &'a R,
}

pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
    started: SystemTime,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), started: SystemTime::now() })
    }

    /// Writes through a buffered file handle.
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut out = BufWriter::new(file);
        f(&mut out)?;
        out.flush().map_err(io_err(&path))?;
        log::info!("wrote {}", path.display());
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_with(name, |w| w.write_all(text.as_bytes()).map_err(|source| Error::Io { path: name.into(), source }))
    }

    /// Timing and environment go to a sidecar so reports stay byte-stable.
    pub fn finish(mut self, command: &str, jobs: Option<usize>) -> Result<Vec<String>> {
        let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let finished = SystemTime::now();
        let meta = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix": secs(self.started),
            "finished_unix": secs(finished),
            "elapsed_secs": secs(finished) - secs(self.started),
            "jobs": jobs.unwrap_or_else(rayon::current_num_threads),
            "files": self.written.clone(),
        });
        let name = format!("{command}.meta.json");
        self.write_json(&name, &meta)?;
        Ok(self.written)
    }
}
