use std::io::Write;

use nfdp_core::oracle::{verify_claim, verify_theorem, AuditVerdict, NeighborDirection, MAX_AUDIT_N};
use nfdp_core::{Budget, SamplingScheme};

use crate::config::ConfigDocument;
use crate::CliError;

pub const CSV_HEADER: &str = "n,k,scheme,arithmetic,claim_epsilon_nat,claim_delta,\
add_base_first,add_neighbor_first,remove_base_first,remove_neighbor_first,verdict";

#[derive(Debug, Clone)]
pub struct AuditRow {
    pub n: usize,
    pub k: usize,
    pub scheme: SamplingScheme,
    pub claim: Budget,
    pub verdict: AuditVerdict,
}

/// Sweeps `n_min..=n_max` and `k = 1..=n`; with replacement, datasets up
/// to `extra_k_n_max` also get `k` up to `extra_k`. `n=` and `k=` pin single
/// values; `epsilon=` and `delta=` replace the theorem's claim.
pub fn audit_rows(args: &[String]) -> Result<Vec<AuditRow>, CliError> {
    let mut doc = ConfigDocument::from_args(args)?;
    let n: Option<usize> = doc.parsed("n")?;
    let n_min: usize = doc.parsed_or("n_min", n.unwrap_or(2))?;
    let n_max: usize = doc.parsed_or("n_max", n.unwrap_or(6))?;
    let k_pin: Option<usize> = doc.parsed("k")?;
    let extra_k: usize = doc.parsed_or("extra_k", 6)?;
    let extra_k_n_max: usize = doc.parsed_or("extra_k_n_max", 4)?;
    let schemes = match doc.raw("scheme").as_deref() {
        None | Some("both") => vec![SamplingScheme::WithoutReplacement, SamplingScheme::WithReplacement],
        Some("with") => vec![SamplingScheme::WithReplacement],
        Some("without") => vec![SamplingScheme::WithoutReplacement],
        Some(v) => return Err(doc.error("scheme", format!("expected with|without|both, found `{v}`")).into()),
    };
    let epsilon: Option<f64> = doc.parsed("epsilon")?;
    let delta: Option<f64> = doc.parsed("delta")?;
    let injected = match (epsilon, delta) {
        (None, None) => None,
        (Some(e), Some(d)) => Some(Budget::new(e, d).map_err(|err| doc.error("epsilon", err.to_string()))?),
        _ => return Err(doc.error(if epsilon.is_some() { "delta" } else { "epsilon" }, "epsilon and delta go together").into()),
    };
    if n_max > MAX_AUDIT_N {
        return Err(doc.error("n_max", format!("n_max = {n_max} exceeds the audit cap {MAX_AUDIT_N}")).into());
    }
    if n_min == 0 || n_min > n_max {
        return Err(doc.error("n_min", format!("need 1 <= n_min <= n_max (got {n_min}..{n_max})")).into());
    }
    doc.finish()?;

    let mut rows = Vec::new();
    for nn in n_min..=n_max {
        for &scheme in &schemes {
            let k_top = if scheme == SamplingScheme::WithReplacement && nn <= extra_k_n_max {
                nn.max(extra_k)
            } else {
                nn
            };
            let ks: Vec<usize> = match k_pin {
                Some(k) => vec![k],
                None => (1..=k_top).collect(),
            };
            for k in ks {
                let claim = match injected {
                    Some(b) => b,
                    None => nfdp_core::accountant::budget_for(scheme, nn as u64, k as u64)
                        .map_err(|e| CliError::Usage(e.to_string()))?,
                };
                let verdict = match injected {
                    Some(b) => verify_claim(nn, k, scheme, &b),
                    None => verify_theorem(nn, k, scheme),
                }
                .map_err(|e| CliError::Usage(e.to_string()))?;
                rows.push(AuditRow {
                    n: nn,
                    k,
                    scheme,
                    claim,
                    verdict,
                });
            }
        }
    }
    Ok(rows)
}

pub fn render(rows: &[AuditRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let summary = r.verdict.summary();
        let cell = |dir: NeighborDirection, base_first: bool| {
            summary
                .iter()
                .find(|(d, b, _, _)| *d == dir && *b == base_first)
                .map_or(String::new(), |(_, _, tight, _)| tight.to_string())
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.k,
            r.scheme.short_name(),
            if r.verdict.is_exact() { "exact" } else { "float" },
            r.claim.epsilon_nat(),
            r.claim.delta(),
            cell(NeighborDirection::Add, true),
            cell(NeighborDirection::Add, false),
            cell(NeighborDirection::Remove, true),
            cell(NeighborDirection::Remove, false),
            if r.verdict.holds() { "holds" } else { "violated" }
        ));
    }
    s
}

/// Prints the verdict table; a violated row is a verdict failure.
pub fn cmd_audit(args: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let rows = audit_rows(args)?;
    out.write_all(render(&rows).as_bytes())?;
    let violated = rows.iter().filter(|r| !r.verdict.holds()).count();
    if violated > 0 {
        return Err(CliError::Verdict(format!("{violated} of {} audited rows violated their claim", rows.len())));
    }
    Ok(())
}
