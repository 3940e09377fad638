use std::io::Write;

use nfdp_core::learner::gradcheck::sweep;

use crate::config::ConfigDocument;
use crate::CliError;

/// Finite-difference sweep; fails when the worst relative error exceeds
/// `tolerance`.
pub fn cmd_gradcheck(args: &[String], seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let mut doc = ConfigDocument::from_args(args)?;
    let trials: usize = doc.parsed_or("trials", 100)?;
    let tolerance: f64 = doc.parsed_or("tolerance", 1e-6)?;
    if trials == 0 {
        return Err(doc.error("trials", "must be at least 1").into());
    }
    if !(tolerance >= 0.0) {
        return Err(doc.error("tolerance", "must be nonnegative").into());
    }
    doc.finish()?;
    let report = sweep(trials, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
    let w = &report.worst;
    writeln!(
        out,
        "trials = {}\nseed = {seed}\ntolerance = {tolerance:e}\nworst_relative_error = {:e}\nworst_trial = {}\nworst_loss = {:?}\nworst_coordinate = {}\nanalytic = {:e}\nnumeric = {:e}",
        report.trials, w.relative_error, report.worst_trial, report.worst_loss, w.index, w.analytic, w.numeric
    )?;
    if report.passes(tolerance) {
        writeln!(out, "result = pass")?;
        Ok(())
    } else {
        writeln!(out, "result = fail")?;
        Err(CliError::Verdict(format!(
            "relative error {:e} at coordinate {} of trial {} exceeds {tolerance:e}",
            w.relative_error, w.index, report.worst_trial
        )))
    }
}
