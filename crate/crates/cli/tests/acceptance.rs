//! Acceptance suite: one PASS/FAIL line per criterion, at full sample sizes.
//! Runs as a plain binary (`harness = false`) so the lines are never captured.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dyson_cascade::cascade::CascadeRealization;
use dyson_cascade::graining::{verify_exponential_martingale, PairSplit};
use dyson_cascade::hier_graph::build_level_graph;
use dyson_cascade::stats::{fractional_moment_curve, measure_density};
use dyson_cascade::{HierParams, RngStream, TestReport};
use dyson_cascade_cli::suites::{
    coupling_suite, exp_martingale_suite, green_reconstruction, laplace_suite, level_params, martingale_suite, pair_round_trip,
    total_mass_suite, ward_suite, LaplaceRoute, GREEN_TOLERANCE,
};
use nalgebra::DVector;

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn params() -> HierParams {
    HierParams::new(1.0, 2.0, 0).unwrap()
}

fn seed(k: u64) -> RngStream {
    RngStream::new(20_240_611, k)
}

fn summarize(reports: &[TestReport]) -> (bool, String) {
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let worst = reports
        .iter()
        .map(|r| if r.threshold > 0.0 { r.statistic / r.threshold } else { 0.0 })
        .fold(0.0, f64::max);
    let mut s = format!("{}/{} checks, worst stat/threshold {worst:.3}", reports.len() - failed.len(), reports.len());
    if !failed.is_empty() {
        s += &format!("; failed: {}", failed.join(", "));
    }
    (failed.is_empty(), s)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn coarse_fine_round_trip() -> Outcome {
    let r = pair_round_trip(10_000, seed(1)).map_err(err)?;
    Ok((r.passed, format!("max relative error {:.2e} (< {:.0e})", r.statistic, r.threshold)))
}

fn green_reconstruction_check() -> Outcome {
    let rec = green_reconstruction(&params(), 1000, seed(2)).map_err(err)?;
    let ok = rec.max_deviation < GREEN_TOLERANCE && rec.off_pair_mismatches == 0;
    Ok((ok, format!("max |GH - I| {:.2e}, off-pair mismatches {}", rec.max_deviation, rec.off_pair_mismatches)))
}

fn laplace_oracle() -> Outcome {
    let mut reports = Vec::new();
    for n in 0..=2 {
        reports.extend(laplace_suite(&params(), n, LaplaceRoute::Mcmc, 1_000_000, 8, seed(3).substream(n as u64)).map_err(err)?);
    }
    Ok(summarize(&reports))
}

fn one_step_martingale() -> Outcome {
    let r = martingale_suite(&params(), 3, 20, 10_000, seed(4)).map_err(err)?;
    Ok(summarize(&[r]))
}

fn exponential_martingale() -> Outcome {
    let reports = exp_martingale_suite(&params(), 100_000, seed(5)).map_err(err)?;
    let zeros = reports
        .iter()
        .filter(|r| r.name.ends_with("lambda=0") || r.name.ends_with("lambda off pair"))
        .all(|r| r.statistic == 0.0);
    let (ok, s) = summarize(&reports);
    Ok((ok && zeros, format!("{s}; exact-zero cases exact: {zeros}")))
}

/// Not counted: λ that differs across the split pair breaks the identity.
fn asymmetric_exponential_martingale() -> Result<String, String> {
    let root = CascadeRealization::init_root(params(), seed(6)).map_err(err)?;
    let g = build_level_graph(&level_params(&params(), 1).map_err(err)?).map_err(err)?;
    let split = PairSplit::in_graph(&g, (0, 1)).map_err(err)?;
    let lam = DVector::from_row_slice(&[2.0, 0.0, 0.0]);
    let eta = DVector::from_row_slice(&[0.0, 0.0, 1.0]);
    let r = verify_exponential_martingale(&g, &split, &root.full_beta(0).map_err(err)?, &lam, &eta, 100_000, seed(6).substream(1))
        .map_err(err)?;
    Ok(format!(
        "lambda=(2,0,0): estimate {} vs closed form {}, |diff|/SE = {:.1}",
        r.metadata.get("estimate").map(String::as_str).unwrap_or("?"),
        r.metadata.get("closed_form").map(String::as_str).unwrap_or("?"),
        r.statistic / r.standard_error,
    ))
}

fn total_mass_law() -> Outcome {
    let r = total_mass_suite(&params(), 100_000, seed(7)).map_err(err)?;
    let parts: Vec<String> = r.metadata.iter().filter(|(k, _)| k.starts_with("total mass ")).map(|(k, v)| format!("{k}: {v}")).collect();
    Ok((r.passed, parts.join(", ")))
}

fn ward_identity() -> Outcome {
    let r = ward_suite(&params(), 3, 0.3, 100_000, seed(8)).map_err(err)?;
    Ok((r.passed, format!("|diff| {:.3e} vs 3 SE {:.3e}", r.statistic, r.threshold)))
}

fn conservation() -> Outcome {
    let mut r = CascadeRealization::init_root(params(), seed(9)).map_err(err)?;
    r.grow_to(20).map_err(err)?;
    let summary = r.check_invariants().map_err(err)?;
    // every cell against its two children, straight from the stored field
    let mut worst: f64 = 0.0;
    let mut coarse = measure_density(&r, 0).map_err(err)?;
    for n in 1..=20 {
        let fine = measure_density(&r, n).map_err(err)?;
        for k in 0..coarse.density.len() {
            let m = coarse.cell_mass(k);
            worst = worst.max(((fine.cell_mass(2 * k) + fine.cell_mass(2 * k + 1) - m) / m).abs());
        }
        coarse = fine;
    }
    let ok = worst <= 1e-10 && summary.max_cell_drift <= 1e-10;
    Ok((ok, format!("worst relative cell drift {worst:.2e} (invariant check {:.2e})", summary.max_cell_drift)))
}

fn coupling() -> Outcome {
    let mut reports = Vec::new();
    for n in 1..=3 {
        reports.extend(coupling_suite(&params(), n, 10_000, 8, seed(10).substream(n as u64)).map_err(err)?);
    }
    Ok(summarize(&reports))
}

fn fractional_decay() -> Outcome {
    let p = HierParams::new(0.1, 2.0, 0).unwrap();
    let curve = fractional_moment_curve(&p, 0.3, 8, 10_000, seed(11)).map_err(err)?;
    let r = curve.decay_report();
    let ends = (curve.points[0].mean, curve.points[8].mean);
    Ok((r.passed, format!("E[e^(0.3u)] {:.4} at n=0 -> {:.4} at n=8; worst step ratio {:.3}", ends.0, ends.1, r.statistic)))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x != "cfg"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let file = out.join("realization.json");
    let file_s = file.to_str().unwrap().to_string();
    let commands: Vec<Vec<&str>> = vec![
        vec!["grow", "--level", "10", "--seed", "3"],
        vec!["measure", "--realization", &file_s],
        vec!["stats", "--level", "5", "--replicates", "2000", "--singularity-depth", "12", "--seed", "3"],
        vec!["verify", "--replicates", "2000", "--seed", "3", "--realization", &file_s],
    ];
    let run_all = |threads: &str| -> Result<BTreeMap<String, Vec<u8>>, String> {
        if out.exists() {
            std::fs::remove_dir_all(&out).map_err(err)?;
        }
        for args in &commands {
            let status = Command::new(env!("CARGO_BIN_EXE_dyson-cascade"))
                .args(args)
                .args(["--threads", threads, "--out", out_s])
                .output()
                .map_err(err)?
                .status;
            if !status.success() {
                return Err(format!("{} exited with {status}", args[0]));
            }
        }
        Ok(snapshot(&out))
    };
    let first = run_all("1")?;
    let second = run_all("3")?;
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    let ok = differing.is_empty() && first.len() == second.len();
    Ok((ok, format!("{} output files compared across reruns, {} differ", first.len(), differing.len())))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("coarse/fine round trip, 1e4 pairs", Some(Duration::from_secs(1)), coarse_fine_round_trip),
        ("Green reconstruction, 1e3 replicates", Some(Duration::from_secs(30)), green_reconstruction_check),
        ("Laplace transform, levels 0-2, N=1e6", Some(Duration::from_secs(300)), laplace_oracle),
        ("one-step martingale, 20 parents x 1e4", None, one_step_martingale),
        ("exponential martingale, 5 settings, N=1e5", None, exponential_martingale),
        ("total-mass law, N=1e5", None, total_mass_law),
        ("Ward identity s=0.3, level 3, N=1e5", None, ward_identity),
        ("mass conservation to level 20", Some(Duration::from_secs(120)), conservation),
        ("MCMC vs cascade coupling, levels 1-3, N=1e4", None, coupling),
        ("fractional-moment decay, wbar=0.1, n=0..8", None, fractional_decay),
        ("determinism of CLI outputs", None, determinism),
    ];
    let mut failures = 0;
    for (k, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let over = budget.is_some_and(|b| elapsed > b);
        let (passed, detail) = match outcome {
            Ok((p, d)) => (p && !over, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget = budget.map(|b| format!(" / budget {:.0}s", b.as_secs_f64())).unwrap_or_default();
        println!("{} {:>2}. {name}: {detail} [{:.2}s{budget}]", if passed { "PASS" } else { "FAIL" }, k + 1, elapsed.as_secs_f64());
        if k == 4 {
            match asymmetric_exponential_martingale() {
                Ok(s) => println!("     note: identity needs lambda constant on the split pair; {s}"),
                Err(e) => println!("     note: asymmetric case errored: {e}"),
            }
        }
        failures += usize::from(!passed);
    }
    println!("{} of 11 criteria passed", 11 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
