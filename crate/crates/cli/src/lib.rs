// SPDX-License-Identifier: Apache-2.0

//! Scenario runner behind the `medscat` binary.

pub mod artifacts;
pub mod error;
pub mod experiments;
pub mod plot;
pub mod scenario;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use artifacts::{medium_array, ArtifactEntry, ArtifactIndex, ArtifactWriter, ExperimentRecord, Verdict};
use error::CliResult;
use experiments::Ctx;
use medscat::MatrixSymbol;
use scenario::{Experiment, Scenario};

pub const GENERATOR: &str = concat!("medscat ", env!("CARGO_PKG_VERSION"));

/// Runs every experiment of `scenario` into `out_dir` with at most `jobs` in flight,
/// then writes the index. Experiment failures are recorded, not returned.
pub fn run_scenario(
    scenario: &Scenario,
    out_dir: &Path,
    jobs: usize,
    seed_override: Option<u64>,
) -> CliResult<ArtifactIndex> {
    let seed = seed_override.unwrap_or(scenario.seed);
    let writer = ArtifactWriter::new(out_dir)?;
    writer.put(
        ArtifactEntry {
            path: "scenario.toml".into(),
            experiment: String::new(),
            kind: "scenario".into(),
            family: None,
            grid: None,
        },
        scenario.source.as_bytes(),
    )?;

    let n = scenario.experiments.len();
    let slots: Vec<Mutex<Option<ExperimentRecord>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let record = run_one(scenario, &scenario.experiments[i], &writer, seed);
                *slots[i].lock().expect("slot lock") = Some(record);
            });
        }
    });

    let mut warnings = vec![];
    let experiments: Vec<ExperimentRecord> =
        slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every experiment ran")).collect();
    for r in &experiments {
        if let Some(e) = &r.error {
            warnings.push(format!("{}: {e}", r.name));
        }
    }
    let index = ArtifactIndex {
        scenario: scenario.name.clone(),
        seed,
        generator: GENERATOR.into(),
        experiments,
        files: writer.into_entries(),
        warnings,
    };
    index.save(out_dir)?;
    Ok(index)
}

fn run_one(scenario: &Scenario, exp: &Experiment, writer: &ArtifactWriter, seed: u64) -> ExperimentRecord {
    let start = Instant::now();
    let mut ctx = Ctx::new(exp, writer, &scenario.name, seed, scenario.solver);
    log::info!("running {} ({})", exp.name, exp.params.kind());
    let outcome = write_media(exp, writer).and_then(|_| experiments::run(&mut ctx));
    let error = outcome.err().map(|e| e.to_string());
    let wall = start.elapsed().as_secs_f64();
    if let Err(e) = ctx.finish(wall, error.as_deref()) {
        log::warn!("{}: could not write report: {e}", exp.name);
    }
    let verdict = if error.is_some() { Verdict::Fail } else { ctx.verdict() };
    log::info!("{} finished: {} in {wall:.2}s", exp.name, verdict.as_str());
    ExperimentRecord {
        name: exp.name.clone(),
        kind: exp.params.kind().into(),
        verdict,
        wall_time_s: wall,
        grid: ctx.grid_desc.clone(),
        error,
        checks: ctx.checks,
    }
}

/// Writes the sampled `M` and `M₀` of an experiment under `media/`.
fn write_media(exp: &Experiment, writer: &ArtifactWriter) -> CliResult<()> {
    let symbol = MatrixSymbol::builtin(&exp.symbol, exp.grid.d)?;
    let grid = exp.grid.build(symbol.fiber())?;
    for (tag, source) in [("M", &exp.medium), ("M0", &exp.background)] {
        let m = source.build(&grid, &exp.symbol)?;
        let (bytes, header) = medium_array(&m);
        let path = format!("media/{}.{tag}.f64", exp.name);
        let entry = |path: String, kind: &str| ArtifactEntry {
            path,
            experiment: exp.name.clone(),
            kind: kind.into(),
            family: Some(tag.into()),
            grid: Some(artifacts::grid_label(&grid)),
        };
        writer.put(entry(path.clone(), "medium"), &bytes)?;
        writer.put(entry(format!("{path}.hdr"), "array-header"), header.as_bytes())?;
    }
    Ok(())
}

/// Names of the built-in symbols, media, experiment kinds, operator families and scenarios.
pub fn list_builtins() -> String {
    let mut out = String::new();
    let mut section = |title: &str, items: &[&str]| {
        out.push_str(title);
        out.push('\n');
        for i in items {
            out.push_str("  ");
            out.push_str(i);
            out.push('\n');
        }
    };
    section("symbols:", &medscat::symbols::BUILTIN_SYMBOLS);
    section("media:", &medscat::media::BUILTIN_MEDIA);
    section("experiment kinds:", &scenario::EXPERIMENT_KINDS);
    section("schatten operators:", &scenario::SCHATTEN_OPERATORS);
    let bundled: Vec<&str> = scenario::BUNDLED.iter().map(|(n, _)| *n).collect();
    section("bundled scenarios:", &bundled);
    out
}
