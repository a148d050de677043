use std::fs;
use std::path::{Path, PathBuf};

use dyson_cascade::cascade::CascadeRealization;
use dyson_cascade::stats::{fractional_moment_curve, measure_density, singularity_diagnostic, SingularityConfig};
use dyson_cascade::{RngStream, TestReport};

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_PASS, EXIT_STATISTICAL};
use crate::realization_file;
use crate::render;
use crate::suites::run_suite;

pub const REALIZATION_FILE: &str = "realization.json";

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn prepare_out(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))
}

/// Runs `f` on a pool of `cfg.threads` workers (0: pool default).
pub fn with_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
    Ok(pool.install(f))
}

/// One line per level: inverse temperature, total mass, density range.
pub fn level_summary(r: &CascadeRealization) -> Vec<String> {
    r.levels()
        .iter()
        .map(|rec| {
            let cells = rec.u.len() as f64;
            let density = rec.density();
            let mass = density.iter().sum::<f64>() / cells;
            let min = density.iter().copied().fold(f64::INFINITY, f64::min);
            let max = density.iter().copied().fold(0.0, f64::max);
            format!("level {:>2}  wbar {:.6e}  total mass {:.12e}  density [{:.6e}, {:.6e}]", rec.level, rec.wbar, mass, min, max)
        })
        .collect()
}

/// Grows a realization to `cfg.level` (from `resume` if given), writes it
/// to `<out>/realization.json` and returns the per-level summary.
pub fn grow(cfg: &RunConfig, resume: Option<&Path>) -> Result<(PathBuf, Vec<String>), CliError> {
    let mut r = match resume {
        Some(path) => realization_file::load(path)?,
        None => CascadeRealization::init_root(cfg.params()?, RngStream::new(cfg.seed, 0))?,
    };
    with_pool(cfg, || r.grow_to(cfg.level))??;
    r.check_invariants()?;
    prepare_out(cfg)?;
    let path = cfg.out.join(REALIZATION_FILE);
    realization_file::save(&r, &path)?;
    write(&cfg.out.join("grow.cfg"), &cfg.to_text())?;
    Ok((path, level_summary(&r)))
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub reports: Vec<TestReport>,
    pub exit_code: i32,
}

/// Runs the selected suites. A suite that errors becomes a failed report;
/// invariant violations outrank statistical failures in the exit code.
pub fn verify(cfg: &RunConfig) -> Result<VerifyOutcome, CliError> {
    prepare_out(cfg)?;
    let mut reports = Vec::new();
    let mut exit_code = EXIT_PASS;
    for &suite in &cfg.suites {
        match with_pool(cfg, || run_suite(suite, cfg))? {
            Ok(rs) => {
                if rs.iter().any(|r| !r.passed) && exit_code == EXIT_PASS {
                    exit_code = EXIT_STATISTICAL;
                }
                reports.extend(rs.into_iter().map(|r| r.with("suite", suite)));
            }
            Err(e) => {
                exit_code = exit_code.max(e.exit_code());
                let rep = TestReport::new(suite.name(), f64::INFINITY, 0.0, 0, 0.0).with("suite", suite).with("error", &e);
                reports.push(TestReport { passed: false, ..rep });
            }
        }
    }
    write(&cfg.out.join("verify_report.json"), &render::reports_json(&reports))?;
    write(&cfg.out.join("verify_report.csv"), &render::reports_csv(&reports))?;
    write(&cfg.out.join("verify.cfg"), &cfg.to_text())?;
    Ok(VerifyOutcome { reports, exit_code })
}

/// Density table (and optionally a plot) of a stored realization at
/// `depth`, defaulting to its deepest level.
pub fn measure(cfg: &RunConfig, realization: &Path, depth: Option<u32>, svg: bool) -> Result<Vec<PathBuf>, CliError> {
    let r = realization_file::load(realization)?;
    let depth = depth.unwrap_or(r.depth());
    let m = measure_density(&r, depth)?;
    prepare_out(cfg)?;
    let csv = cfg.out.join(format!("measure_depth{depth}.csv"));
    write(&csv, &render::measure_csv(&m))?;
    let mut written = vec![csv];
    if svg {
        let path = cfg.out.join(format!("measure_depth{depth}.svg"));
        write(&path, &render::measure_svg(&m))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct StatsOutcome {
    pub decay: TestReport,
    pub singularity_label: String,
    pub written: Vec<PathBuf>,
}

/// Fractional-moment curve over `cfg.replicates` cascades to `cfg.level`,
/// and the singularity probe on one cascade grown to `singularity_depth`
/// (or on `realization` if given).
pub fn stats(cfg: &RunConfig, realization: Option<&Path>) -> Result<StatsOutcome, CliError> {
    let params = cfg.params()?;
    let stream = RngStream::new(cfg.seed, 0);
    let curve = with_pool(cfg, || fractional_moment_curve(&params, cfg.moment_s, cfg.level, cfg.replicates, stream.substream(1)))??;
    let decay = curve.decay_report();
    let deep = match realization {
        Some(path) => realization_file::load(path)?,
        None => {
            let mut r = CascadeRealization::init_root(params, stream.substream(2))?;
            with_pool(cfg, || r.grow_to(cfg.singularity_depth))??;
            r
        }
    };
    let singular = singularity_diagnostic(&deep, &SingularityConfig::default())?;

    prepare_out(cfg)?;
    let files = [
        ("fractional_moments.csv", render::moments_csv(&curve)),
        ("fractional_moments.json", json(&curve)),
        ("decay_report.json", render::reports_json(std::slice::from_ref(&decay))),
        ("singularity.csv", render::singularity_csv(&singular)),
        ("singularity.json", json(&singular)),
        ("stats.cfg", cfg.to_text()),
    ];
    let mut written = Vec::new();
    for (name, contents) in files {
        let path = cfg.out.join(name);
        write(&path, &contents)?;
        written.push(path);
    }
    Ok(StatsOutcome { decay, singularity_label: singular.label.to_string(), written })
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}
