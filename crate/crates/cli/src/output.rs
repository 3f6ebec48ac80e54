//! Artifacts are buffered in memory and written only after the whole command
//! succeeded, so a failing run leaves nothing behind.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Serialize)]
struct Metadata<'a> {
    file: &'a str,
    command: &'a str,
    seed: u64,
    version: &'a str,
    columns: Vec<&'a str>,
    config: &'a ExperimentConfig,
}

pub struct Artifacts {
    command: String,
    seed: u64,
    config: ExperimentConfig,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(command: &str, seed: u64, config: &ExperimentConfig) -> Self {
        Artifacts { command: command.into(), seed, config: config.clone(), files: Vec::new() }
    }

    /// Adds `name.csv` from a writer callback, with its metadata sidecar and plot script.
    pub fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> io::Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        let file = format!("{name}.csv");
        let header = std::str::from_utf8(&buf).ok().and_then(|s| s.lines().next()).unwrap_or_default().to_string();
        let columns: Vec<&str> = header.split(',').collect();
        let meta = Metadata {
            file: &file,
            command: &self.command,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            columns: columns.clone(),
            config: &self.config,
        };
        let meta = toml::to_string(&meta).map_err(io::Error::other)?;
        if self.config.output.gnuplot && columns.len() >= 2 {
            let gp = gnuplot_script(&file, &columns);
            self.files.push((format!("{name}.gp"), gp.into_bytes()));
        }
        self.files.push((format!("{name}.meta.toml"), meta.into_bytes()));
        self.files.push((file, buf));
        Ok(())
    }

    /// Writes everything under `dir`; returns the written paths in insertion order.
    pub fn commit(self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::with_capacity(self.files.len());
        for (name, bytes) in self.files {
            let path = dir.join(&name);
            fs::write(&path, bytes)?;
            out.push(path);
        }
        Ok(out)
    }
}

fn gnuplot_script(file: &str, columns: &[&str]) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset key autotitle columnhead\n");
    s.push_str(&format!("set xlabel '{}'\n", columns[0]));
    let plots: Vec<String> = (2..=columns.len()).map(|i| format!("'{file}' using 1:{i} with lines")).collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

/// CSV with a header row and one record per row.
pub fn table(header: &[&str], rows: &[Vec<f64>], w: &mut Vec<u8>) -> io::Result<()> {
    use std::io::Write;
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Stable file-name fragment for a float (`0.005` → `0p005`).
pub fn tag(v: f64) -> String {
    v.to_string().replace('.', "p").replace('-', "m")
}
