use std::io::Write;

use nfdp_core::accountant::budget_for;
use nfdp_core::{Budget, SamplingScheme};

use crate::config::{ConfigDocument, Span};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Base {
    Nat,
    Log10,
    Both,
    /// Base-10 logarithm of ε and δ themselves.
    LogValue,
}

pub const CSV_HEADER: &str = "n,k,scheme,epsilon_nat,epsilon_log10,delta";

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRow {
    pub parties: Option<u64>,
    pub n: u64,
    pub k: u64,
    pub scheme: SamplingScheme,
    pub budget: Budget,
}

fn schemes(doc: &mut ConfigDocument) -> Result<Vec<SamplingScheme>, CliError> {
    match doc.raw("scheme").as_deref() {
        None | Some("with") => Ok(vec![SamplingScheme::WithReplacement]),
        Some("without") => Ok(vec![SamplingScheme::WithoutReplacement]),
        Some("both") => Ok(vec![SamplingScheme::WithReplacement, SamplingScheme::WithoutReplacement]),
        Some(v) => Err(doc.error("scheme", format!("expected with|without|both, found `{v}`")).into()),
    }
}

/// Budgets for `n=… k=…` or `n_total=… parties=… k=…`; `k` and `parties`
/// accept inclusive ranges `a..b`.
pub fn budget_rows(args: &[String]) -> Result<(Vec<BudgetRow>, bool, String), CliError> {
    let mut doc = ConfigDocument::from_args(args)?;
    let base = match doc.raw("base").as_deref() {
        None | Some("both") => Base::Both,
        Some("nat") => Base::Nat,
        Some("log10") => Base::Log10,
        Some("logvalue") => Base::LogValue,
        Some(v) => return Err(doc.error("base", format!("expected nat|log10|both|logvalue, found `{v}`")).into()),
    };
    let schemes = schemes(&mut doc)?;
    let k: Span = doc.required("k")?;
    let n: Option<u64> = doc.parsed("n")?;
    let n_total: Option<u64> = doc.parsed("n_total")?;
    let parties: Option<Span> = doc.parsed("parties")?;
    let sizes: Vec<(Option<u64>, u64)> = match (n, n_total, parties) {
        (Some(n), None, None) => vec![(None, n)],
        (None, Some(total), Some(p)) => {
            if p.start == 0 {
                return Err(doc.error("parties", "must be at least 1").into());
            }
            if total < p.end {
                return Err(doc.error("n_total", format!("n_total = {total} is smaller than parties = {}", p.end)).into());
            }
            p.values().map(|m| (Some(m), total / m)).collect()
        }
        (None, None, None) => return Err(doc.error("n", "give n, or n_total together with parties").into()),
        _ => return Err(doc.error("n", "give either n or n_total with parties, not both").into()),
    };
    let sweep = k.is_range() || sizes.len() > 1 || schemes.len() > 1;
    doc.finish()?;

    let mut rows = Vec::new();
    for &(p, n) in &sizes {
        for kk in k.values() {
            for &scheme in &schemes {
                let budget = budget_for(scheme, n, kk).map_err(|e| CliError::Usage(e.to_string()))?;
                rows.push(BudgetRow {
                    parties: p,
                    n,
                    k: kk,
                    scheme,
                    budget,
                });
            }
        }
    }
    let text = if sweep { csv(&rows, base) } else { human(&rows[0], base) };
    Ok((rows, sweep, text))
}

fn csv(rows: &[BudgetRow], base: Base) -> String {
    let parties = rows.iter().any(|r| r.parties.is_some());
    let mut s = String::from(CSV_HEADER);
    if parties {
        s.push_str(",parties");
    }
    if base == Base::LogValue {
        s.push_str(",log10_epsilon,log10_delta");
    }
    s.push('\n');
    for r in rows {
        let b = &r.budget;
        s.push_str(&format!(
            "{},{},{},{},{},{}",
            r.n,
            r.k,
            r.scheme.short_name(),
            b.epsilon_nat(),
            b.epsilon_log10(),
            b.delta()
        ));
        if let Some(p) = r.parties {
            s.push_str(&format!(",{p}"));
        }
        if base == Base::LogValue {
            s.push_str(&format!(",{},{}", b.epsilon_nat().log10(), b.delta().log10()));
        }
        s.push('\n');
    }
    s
}

fn human(r: &BudgetRow, base: Base) -> String {
    let b = &r.budget;
    let mut s = format!("n = {}\nk = {}\nscheme = {}\n", r.n, r.k, r.scheme.short_name());
    if let Some(p) = r.parties {
        s.push_str(&format!("parties = {p}\n"));
    }
    match base {
        Base::Nat => s.push_str(&format!("epsilon_nat = {:.8}\n", b.epsilon_nat())),
        Base::Log10 => s.push_str(&format!("epsilon_log10 = {:.8}\n", b.epsilon_log10())),
        Base::Both => s.push_str(&format!(
            "epsilon_nat = {:.8}\nepsilon_log10 = {:.8}\n",
            b.epsilon_nat(),
            b.epsilon_log10()
        )),
        Base::LogValue => {
            s.push_str(&format!("log10_epsilon = {:.8}\nlog10_delta = {:.8}\n", b.epsilon_nat().log10(), b.delta().log10()));
            return s;
        }
    }
    s.push_str(&format!("delta = {:.8}\n", b.delta()));
    s
}

pub fn cmd_budget(args: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let (_, _, text) = budget_rows(args)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}
