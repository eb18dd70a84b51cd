//! Batch experiments on the simulated rig. Each command reads its inputs from
//! files written by earlier commands and writes CSV/JSON artefacts plus a
//! snapshot of the configuration it ran with.

pub mod config;
pub mod escape;
pub mod floquet;
pub mod oracle;
pub mod perturbation;
pub mod surface;
pub mod sweep;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cbclab::cbc::ContinuationRun;

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] cbclab::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// The command ran to completion but recorded failures.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Configuration plus the worker pool shared by all commands.
pub struct RunContext {
    pub config: ExperimentConfig,
    pool: rayon::ThreadPool,
}

impl RunContext {
    /// `jobs = 0` uses one worker per core.
    pub fn new(config: ExperimentConfig, jobs: usize) -> CliResult<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
        Ok(Self { config, pool })
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    pub fn out_dir(&self, command: &str) -> PathBuf {
        self.config.out_dir.join(command)
    }

    /// Creates the command's output directory and writes the config snapshot.
    pub fn prepare(&self, command: &str) -> CliResult<PathBuf> {
        let dir = self.out_dir(command);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        write_text(&dir.join("config.toml"), &self.config.to_toml())?;
        Ok(dir)
    }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes a file through `f`, mapping both i/o and library errors.
pub(crate) fn write_with<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> cbclab::Result<()>,
{
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| io_err(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Sweep outputs present on disk, with their sweep index.
pub fn load_sweeps(ctx: &RunContext) -> CliResult<Vec<(usize, ContinuationRun)>> {
    let dir = ctx.out_dir("sweep");
    let n = ctx.config.sweep.frequencies_hz().len();
    let mut runs = Vec::with_capacity(n);
    for idx in 0..n {
        let path = dir.join(sweep::json_name(idx));
        if !path.exists() {
            continue;
        }
        let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
        runs.push((idx, ContinuationRun::read_json(std::io::BufReader::new(file))?));
    }
    if runs.is_empty() {
        return Err(CliError::Failed(format!(
            "no sweep outputs in {}; run the sweep command first",
            dir.display()
        )));
    }
    Ok(runs)
}

/// Sweep whose frequency is nearest `hz`.
pub fn nearest_sweep(runs: &[(usize, ContinuationRun)], hz: f64) -> Option<&(usize, ContinuationRun)> {
    let dist = |r: &ContinuationRun| (r.omega - std::f64::consts::TAU * hz).abs();
    runs.iter().min_by(|a, b| dist(&a.1).total_cmp(&dist(&b.1)))
}
