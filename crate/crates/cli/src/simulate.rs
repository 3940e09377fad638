use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nfdp_core::federation::{run_simulation, FederationError, SimulationTrace};

use crate::chart::render_svg;
use crate::config::ConfigDocument;
use crate::settings::SimulateSettings;
use crate::CliError;

pub const METRICS_HEADER: &str = "round,party,phase,test_accuracy,train_loss";
pub const SUMMARY_HEADER: &str = "party,n,k,scheme,epsilon_nat,epsilon_log10,delta,final_accuracy";

pub fn metrics_csv(trace: &SimulationTrace) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in trace.metrics_rows() {
        writeln!(s, "{},{},{},{:.6},{:.6}", r.round, r.party, r.phase.name(), r.test_accuracy, r.train_loss).unwrap();
    }
    s
}

fn number(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else {
        v.to_string()
    }
}

pub fn summary_csv(trace: &SimulationTrace) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for p in &trace.summary {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{:.6}",
            p.party,
            p.n,
            p.k,
            p.scheme.short_name(),
            number(p.budget.epsilon_nat()),
            number(p.budget.epsilon_log10()),
            number(p.budget.delta()),
            p.final_accuracy
        )
        .unwrap();
    }
    s
}

fn runtime(e: FederationError) -> CliError {
    match e {
        FederationError::Learner { .. } | FederationError::SelectionDrift { .. } | FederationError::Aggregate(_) => {
            CliError::Runtime(e.to_string())
        }
        _ => CliError::Usage(e.to_string()),
    }
}

pub fn load_settings(config: &Path, seed: Option<u64>) -> Result<SimulateSettings, CliError> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", config.display())))?;
    let doc = ConfigDocument::parse(&text)?;
    Ok(SimulateSettings::from_document(doc, seed)?)
}

/// Runs the configured federation and writes `metrics.csv`, `summary.csv`,
/// `effective_config` and, with `charts=true`, `accuracy.svg` into `out_dir`.
pub fn cmd_simulate(
    config: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    threads: Option<usize>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let settings = load_settings(config, seed)?.with_threads(threads);
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out_dir.display())))?;
    let trace = run_simulation(&settings.federation, &settings.task, &settings.plan).map_err(runtime)?;
    let metrics = metrics_csv(&trace);
    let write = |name: &str, body: &str| {
        std::fs::write(out_dir.join(name), body)
            .map_err(|e| CliError::Runtime(format!("cannot write {name}: {e}")))
    };
    write("metrics.csv", &metrics)?;
    write("summary.csv", &summary_csv(&trace))?;
    write("effective_config", &settings.effective_config())?;
    if settings.charts {
        write("accuracy.svg", &render_svg(&metrics)?)?;
    }
    writeln!(
        out,
        "parties = {}\nrounds = {}\nmean_final_accuracy = {:.6}\noutput = {}",
        settings.federation.parties,
        settings.federation.rounds,
        trace.mean_final_accuracy(),
        out_dir.display()
    )?;
    Ok(())
}
