//! Summary-table emission: the appendix-style layout (one column group per
//! deformation with eps at each confidence level and the scan wall time),
//! rendered as CSV and as aligned text with the best statistic per
//! deformation marked.

use std::collections::BTreeMap;

use gentest_core::deformations::DeformationKind;
use gentest_core::power::EpsilonScanResult;

/// Everything the table needs from one (statistic, deformation) cell.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub statistic: String,
    pub deformation: DeformationKind,
    pub status: CellStatus,
    pub wall_time_seconds: f64,
    pub results: Vec<EpsilonScanResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Done,
    Unsupported,
    Failed(String),
}

fn alpha_label(alpha: f64) -> String {
    let cl = 100.0 * (1.0 - alpha);
    if (cl - cl.round()).abs() < 1e-9 {
        format!("eps{}", cl.round() as u32)
    } else {
        format!("eps{cl:.1}")
    }
}

fn fmt_eps(r: &EpsilonScanResult) -> String {
    if r.eps_alpha.is_finite() {
        let lo = if r.eps_low.is_finite() {
            format!("-{:.2e}", r.eps_alpha - r.eps_low)
        } else {
            "-?".to_string()
        };
        let up = if r.eps_up.is_finite() {
            format!("+{:.2e}", r.eps_up - r.eps_alpha)
        } else {
            format!("+>{:.0}", r.cap)
        };
        format!("{:.5} {lo}/{up}", r.eps_alpha)
    } else {
        format!("> {}", r.cap)
    }
}

/// Order statistics as first seen; deformations as first seen.
fn axes(cells: &[CellSummary]) -> (Vec<String>, Vec<DeformationKind>) {
    let mut stats = Vec::new();
    let mut defs = Vec::new();
    for c in cells {
        if !stats.contains(&c.statistic) {
            stats.push(c.statistic.clone());
        }
        if !defs.contains(&c.deformation) {
            defs.push(c.deformation);
        }
    }
    (stats, defs)
}

/// The statistic with the smallest finite eps at the first alpha, per
/// deformation.
fn best_per_deformation(cells: &[CellSummary]) -> BTreeMap<&'static str, String> {
    let mut best: BTreeMap<&'static str, (String, f64)> = BTreeMap::new();
    for c in cells {
        if c.status != CellStatus::Done {
            continue;
        }
        if let Some(first) = c.results.first() {
            if first.eps_alpha.is_finite() {
                let entry = best
                    .entry(c.deformation.name())
                    .or_insert_with(|| (c.statistic.clone(), f64::INFINITY));
                if first.eps_alpha < entry.1 {
                    *entry = (c.statistic.clone(), first.eps_alpha);
                }
            }
        }
    }
    best.into_iter().map(|(k, (s, _))| (k, s)).collect()
}

pub fn render_csv(cells: &[CellSummary]) -> String {
    let best = best_per_deformation(cells);
    let mut out = String::from(
        "statistic,deformation,alpha,eps_alpha,eps_low,eps_up,wall_time_seconds,best,status\n",
    );
    let fmt = |v: f64| {
        if v.is_finite() {
            format!("{v}")
        } else {
            String::new()
        }
    };
    for c in cells {
        let is_best = best.get(c.deformation.name()) == Some(&c.statistic);
        match &c.status {
            CellStatus::Done => {
                for r in &c.results {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},done\n",
                        c.statistic,
                        c.deformation.name(),
                        r.alpha,
                        fmt(r.eps_alpha),
                        fmt(r.eps_low),
                        fmt(r.eps_up),
                        c.wall_time_seconds,
                        is_best,
                    ));
                }
            }
            CellStatus::Unsupported => {
                out.push_str(&format!(
                    "{},{},,,,,,false,unsupported\n",
                    c.statistic,
                    c.deformation.name()
                ));
            }
            CellStatus::Failed(reason) => {
                out.push_str(&format!(
                    "{},{},,,,,,false,failed: {}\n",
                    c.statistic,
                    c.deformation.name(),
                    reason.replace(',', ";").replace('\n', " ")
                ));
            }
        }
    }
    out
}

pub fn render_text(cells: &[CellSummary]) -> String {
    let (stats, defs) = axes(cells);
    let best = best_per_deformation(cells);
    let alphas: Vec<f64> = cells
        .iter()
        .find(|c| c.status == CellStatus::Done)
        .map(|c| c.results.iter().map(|r| r.alpha).collect())
        .unwrap_or_default();
    let mut out = String::new();
    let lookup: BTreeMap<(String, &'static str), &CellSummary> = cells
        .iter()
        .map(|c| ((c.statistic.clone(), c.deformation.name()), c))
        .collect();
    for def in &defs {
        out.push_str(&format!("== {} ==\n", def.name()));
        let mut header = format!("{:<14}", "statistic");
        for a in &alphas {
            header.push_str(&format!("{:<26}", alpha_label(*a)));
        }
        header.push_str("t(s)\n");
        out.push_str(&header);
        for s in &stats {
            let marker = if best.get(def.name()) == Some(s) {
                "*"
            } else {
                ""
            };
            let mut line = format!("{:<14}", format!("{s}{marker}"));
            match lookup.get(&(s.clone(), def.name())) {
                Some(c) if c.status == CellStatus::Done => {
                    for r in &c.results {
                        line.push_str(&format!("{:<26}", fmt_eps(r)));
                    }
                    line.push_str(&format!("{:.1}", c.wall_time_seconds));
                }
                Some(c) if matches!(c.status, CellStatus::Failed(_)) => {
                    line.push_str("failed");
                }
                Some(_) => {
                    for _ in &alphas {
                        line.push_str(&format!("{:<26}", "-"));
                    }
                    line.push('-');
                }
                None => line.push_str("(not run)"),
            }
            line.push('\n');
            out.push_str(&line);
        }
        out.push('\n');
    }
    out.push_str("* best (smallest eps at the first confidence level) per deformation\n");
    out.push_str("timings are wall-clock on this machine; only relative ordering is meaningful\n");
    out
}
