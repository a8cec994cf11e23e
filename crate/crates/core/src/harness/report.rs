//! Report arithmetic over per-example records and its JSON/markdown forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Add;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, PerExampleRecord, RunConfig};
use crate::pipeline::{Arm, MergeStrategy};
use crate::router::{oracle_branch, router_accuracy, Branch};
use crate::stats::{pearson, spearman};

/// An exact count over `n` examples; `value` is the percentage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Percent {
    pub count: u64,
    pub n: u64,
}

impl Percent {
    pub fn value(self) -> f64 {
        100.0 * self.count as f64 / self.n as f64
    }

    pub fn rounded(self) -> f64 {
        round2(self.value())
    }
}

impl Add for Percent {
    type Output = Percent;

    /// Panics when the denominators differ.
    fn add(self, rhs: Percent) -> Percent {
        assert_eq!(self.n, rhs.n, "percents over different example counts");
        Percent {
            count: self.count + rhs.count,
            n: self.n,
        }
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Records that count toward N: those whose gold query ran.
fn scored(records: &[PerExampleRecord]) -> Vec<&PerExampleRecord> {
    records.iter().filter(|r| r.dataset_error.is_none()).collect()
}

fn both_bits(records: &[PerExampleRecord]) -> Result<Vec<(bool, bool)>, HarnessError> {
    let rows = scored(records);
    if rows.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    rows.iter()
        .map(|r| match (r.baseline_correct, r.module_correct) {
            (Some(b), Some(m)) => Ok((b, m)),
            (None, _) => Err(HarnessError::MissingBit("baseline")),
            (_, None) => Err(HarnessError::MissingBit("module")),
        })
        .collect()
}

fn percent_of(bits: &[(bool, bool)], pred: impl Fn(bool, bool) -> bool) -> Percent {
    Percent {
        count: bits.iter().filter(|(b, m)| pred(*b, *m)).count() as u64,
        n: bits.len() as u64,
    }
}

/// Share of scored records whose `arm` bit is set.
pub fn compute_ex(records: &[PerExampleRecord], arm: Arm) -> Result<Percent, HarnessError> {
    let rows = scored(records);
    if rows.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    let mut count = 0;
    for r in &rows {
        match r.bit(arm) {
            Some(bit) => count += u64::from(bit),
            None => return Err(HarnessError::MissingBit(arm.label())),
        }
    }
    Ok(Percent {
        count,
        n: rows.len() as u64,
    })
}

/// (module correct and baseline wrong, baseline correct and module wrong).
pub fn disagreement(records: &[PerExampleRecord]) -> Result<(Percent, Percent), HarnessError> {
    let bits = both_bits(records)?;
    Ok((percent_of(&bits, |b, m| m && !b), percent_of(&bits, |b, m| b && !m)))
}

/// Accuracy of a router that always picks a correct arm when one exists.
pub fn oracle_ex(records: &[PerExampleRecord]) -> Result<Percent, HarnessError> {
    let bits = both_bits(records)?;
    Ok(percent_of(&bits, |b, m| b || m))
}

/// Expected EX of a router that is right on disagreement examples with
/// probability `a`.
pub fn router_sweep(records: &[PerExampleRecord], accuracies: &[f64]) -> Result<Vec<(f64, f64)>, HarnessError> {
    let bits = both_bits(records)?;
    let n = bits.len() as f64;
    let upper = percent_of(&bits, |b, m| b || m).count;
    let lower = percent_of(&bits, |b, m| b && m).count;
    let gap = (upper - lower) as f64;
    accuracies
        .iter()
        .map(|&a| {
            if !(0.0..=1.0).contains(&a) {
                return Err(HarnessError::Config(format!("router accuracy {a} outside [0,1]")));
            }
            Ok((a, 100.0 * (lower as f64 + a * gap) / n))
        })
        .collect()
}

/// Per-table-count EX gains of the module over the baseline.
pub fn complexity_groups(records: &[PerExampleRecord]) -> Result<Vec<(f64, f64)>, HarnessError> {
    let rows = scored(records);
    let bits = both_bits(records)?;
    let mut groups: BTreeMap<u32, (u64, u64, u64)> = BTreeMap::new();
    for (r, (b, m)) in rows.iter().zip(bits) {
        let g = groups.entry(r.table_count).or_default();
        g.0 += 1;
        g.1 += u64::from(b);
        g.2 += u64::from(m);
    }
    Ok(groups
        .into_iter()
        .map(|(t, (n, b, m))| {
            let n = n as f64;
            (t as f64, 100.0 * m as f64 / n - 100.0 * b as f64 / n)
        })
        .collect())
}

/// Pearson and Spearman correlation between table count and per-group gain.
pub fn complexity_correlation(records: &[PerExampleRecord]) -> Result<(f64, f64), HarnessError> {
    let groups = complexity_groups(records)?;
    if groups.len() < 2 {
        return Err(HarnessError::TooFewGroups(groups.len()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = groups.into_iter().unzip();
    Ok((pearson(&x, &y)?, spearman(&x, &y)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportLabel {
    pub reasoning_model: String,
    pub coding_model: String,
    pub merge_strategy: MergeStrategy,
    pub column_selection: bool,
}

impl ReportLabel {
    pub fn from_config(config: &RunConfig) -> Self {
        ReportLabel {
            reasoning_model: config.models.reasoning.model_id.clone(),
            coding_model: config.models.coding.model_id.clone(),
            merge_strategy: config.pipeline.merge_strategy,
            column_selection: config.pipeline.column_selection_enabled,
        }
    }
}

/// Router accuracies 0.0, 0.1, ..., 1.0.
pub fn default_sweep_points() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: ReportLabel,
    pub n: usize,
    /// Examples excluded because their gold query failed.
    pub dataset_errors: usize,
    /// Examples with at least one provider or execution failure.
    pub failed: usize,
    pub ex_baseline: Option<f64>,
    pub ex_module: Option<f64>,
    pub module_only: Option<f64>,
    pub baseline_only: Option<f64>,
    pub ex_oracle: Option<f64>,
    pub sweep: Vec<(f64, f64)>,
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub ex_routed: Option<f64>,
    /// Share of routed disagreement examples sent to the correct arm.
    pub router_accuracy: Option<f64>,
}

/// Computes every quantity the records support; quantities needing a
/// missing correctness bit are left empty.
pub fn build_report(
    records: &[PerExampleRecord],
    label: ReportLabel,
    sweep_points: &[f64],
) -> Result<EvalReport, HarnessError> {
    let rows = scored(records);
    if rows.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    let both = both_bits(records).is_ok();
    let split = disagreement(records).ok();
    let (pearson_r, spearman_rho) = match complexity_correlation(records) {
        Ok((p, s)) => (Some(p), Some(s)),
        Err(_) => (None, None),
    };
    let sweep = if both && !sweep_points.is_empty() {
        router_sweep(records, sweep_points)?
    } else {
        Vec::new()
    };

    let routed: Option<Vec<(bool, Branch)>> = rows
        .iter()
        .map(|r| {
            let d = r.route_taken.as_ref()?;
            let arm = match d.branch {
                Branch::Baseline => Arm::Baseline,
                Branch::DivideAndMerge => Arm::Module,
            };
            Some((r.bit(arm)?, d.branch))
        })
        .collect();
    let ex_routed = routed.as_ref().map(|v| {
        Percent {
            count: v.iter().filter(|(ok, _)| *ok).count() as u64,
            n: v.len() as u64,
        }
        .value()
    });
    let (decisions, oracle): (Vec<_>, Vec<_>) = rows
        .iter()
        .filter_map(|r| match (&r.route_taken, r.baseline_correct, r.module_correct) {
            (Some(d), Some(b), Some(m)) => Some((d.clone(), oracle_branch(b, m))),
            _ => None,
        })
        .unzip();

    Ok(EvalReport {
        label,
        n: rows.len(),
        dataset_errors: records.len() - rows.len(),
        failed: rows.iter().filter(|r| !r.errors.is_empty()).count(),
        ex_baseline: compute_ex(records, Arm::Baseline).ok().map(Percent::value),
        ex_module: compute_ex(records, Arm::Module).ok().map(Percent::value),
        module_only: split.map(|s| s.0.value()),
        baseline_only: split.map(|s| s.1.value()),
        ex_oracle: oracle_ex(records).ok().map(Percent::value),
        sweep,
        pearson_r,
        spearman_rho,
        ex_routed,
        router_accuracy: router_accuracy(&decisions, &oracle).ok(),
    })
}

impl EvalReport {
    /// Copy with percents rounded to 2 decimals.
    pub fn rounded(&self) -> EvalReport {
        let r = |x: Option<f64>| x.map(round2);
        EvalReport {
            ex_baseline: r(self.ex_baseline),
            ex_module: r(self.ex_module),
            module_only: r(self.module_only),
            baseline_only: r(self.baseline_only),
            ex_oracle: r(self.ex_oracle),
            ex_routed: r(self.ex_routed),
            sweep: self.sweep.iter().map(|&(a, ex)| (a, round2(ex))).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

/// Pretty JSON with sorted keys and 2-decimal percents.
pub fn emit_json(report: &EvalReport) -> String {
    let value = serde_json::to_value(report.rounded()).expect("report serializes");
    serde_json::to_string_pretty(&value).expect("value serializes") + "\n"
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

type GroupKey<'a> = (&'a str, &'a str, MergeStrategy);

/// Markdown tables over one or more reports. Reports sharing models and
/// merge strategy are paired into w/o CS and with CS columns.
pub fn emit_markdown(reports: &[EvalReport]) -> String {
    let mut order: Vec<GroupKey<'_>> = Vec::new();
    let mut by_cs: BTreeMap<(usize, bool), &EvalReport> = BTreeMap::new();
    for r in reports {
        let key = (
            r.label.reasoning_model.as_str(),
            r.label.coding_model.as_str(),
            r.label.merge_strategy,
        );
        let idx = order.iter().position(|k| *k == key).unwrap_or_else(|| {
            order.push(key);
            order.len() - 1
        });
        by_cs.insert((idx, r.label.column_selection), r);
    }
    let preferred = |i: usize| by_cs.get(&(i, true)).or_else(|| by_cs.get(&(i, false))).copied();

    let mut out = String::new();
    out.push_str("## Execution accuracy (%) by merge strategy\n\n");
    out.push_str("| Reasoning Agent | Coding Agent | Merging Strategy | w/o CS | with CS |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (i, (reasoning, coding, strategy)) in order.iter().enumerate() {
        let ex = |cs: bool| by_cs.get(&(i, cs)).and_then(|r| r.ex_module);
        let _ = writeln!(
            out,
            "| {reasoning} | {coding} | {} | {} | {} |",
            strategy.display_name(),
            cell(ex(false)),
            cell(ex(true))
        );
    }

    out.push_str("\n## Disagreement (%)\n\n");
    out.push_str("| Reasoning Agent | Coding Agent | Merging Strategy | Module Only | Baseline Only |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (i, (reasoning, coding, strategy)) in order.iter().enumerate() {
        let r = preferred(i).expect("group has a report");
        let _ = writeln!(
            out,
            "| {reasoning} | {coding} | {} | {} | {} |",
            strategy.display_name(),
            cell(r.module_only),
            cell(r.baseline_only)
        );
    }

    out.push_str("\n## Module, baseline and oracle routing (%)\n\n");
    out.push_str("| Method | Reasoning Agent | Coding Agent | Merging Strategy | EX |\n");
    out.push_str("|---|---|---|---|---|\n");
    let mut baseline_done: Vec<(&str, &str)> = Vec::new();
    for (i, (reasoning, coding, strategy)) in order.iter().enumerate() {
        let r = preferred(i).expect("group has a report");
        if !baseline_done.contains(&(*reasoning, *coding)) && r.ex_baseline.is_some() {
            baseline_done.push((*reasoning, *coding));
            let _ = writeln!(
                out,
                "| Baseline | {reasoning} | {coding} | - | {} |",
                cell(r.ex_baseline)
            );
        }
        let name = strategy.display_name();
        let _ = writeln!(
            out,
            "| Divide-and-merge | {reasoning} | {coding} | {name} | {} |",
            cell(r.ex_module)
        );
        if r.ex_oracle.is_some() {
            let _ = writeln!(
                out,
                "| Oracle routing | {reasoning} | {coding} | {name} | {} |",
                cell(r.ex_oracle)
            );
        }
        if r.ex_routed.is_some() {
            let _ = writeln!(
                out,
                "| Routed | {reasoning} | {coding} | {name} | {} |",
                cell(r.ex_routed)
            );
        }
    }

    let correlated: Vec<usize> = (0..order.len())
        .filter(|&i| preferred(i).is_some_and(|r| r.pearson_r.is_some()))
        .collect();
    if !correlated.is_empty() {
        out.push_str("\n## Table count vs. module gain\n\n");
        out.push_str("| Reasoning Agent | Coding Agent | Merging Strategy | Pearson | Spearman |\n");
        out.push_str("|---|---|---|---|---|\n");
        for i in correlated {
            let (reasoning, coding, strategy) = order[i];
            let r = preferred(i).unwrap();
            let _ = writeln!(
                out,
                "| {reasoning} | {coding} | {} | {} | {} |",
                strategy.display_name(),
                cell(r.pearson_r),
                cell(r.spearman_rho)
            );
        }
    }

    for r in reports.iter().filter(|r| !r.sweep.is_empty()) {
        let _ = writeln!(
            out,
            "\n## Router accuracy sweep ({} / {}, {}, {})\n",
            r.label.reasoning_model,
            r.label.coding_model,
            r.label.merge_strategy.display_name(),
            if r.label.column_selection { "with CS" } else { "w/o CS" }
        );
        out.push_str("| Router accuracy | EX |\n|---|---|\n");
        for (a, ex) in &r.sweep {
            let _ = writeln!(out, "| {a:.2} | {ex:.2} |");
        }
        if let Some(acc) = r.router_accuracy {
            let _ = writeln!(out, "\nRealized router accuracy: {acc:.4}");
        }
    }
    out
}

pub fn emit_report(report: &EvalReport, format: ReportFormat, path: &Path) -> Result<(), HarnessError> {
    let text = match format {
        ReportFormat::Json => emit_json(report),
        ReportFormat::Markdown => emit_markdown(std::slice::from_ref(report)),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Per-example differences between two runs over the same examples.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunComparison {
    pub common: usize,
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
    pub module_gained: Vec<String>,
    pub module_lost: Vec<String>,
    pub baseline_gained: Vec<String>,
    pub baseline_lost: Vec<String>,
    pub module_sql_changed: usize,
    pub baseline_sql_changed: usize,
}

pub fn compare_runs(a: &[PerExampleRecord], b: &[PerExampleRecord]) -> RunComparison {
    let index = |rs: &[PerExampleRecord]| -> BTreeMap<String, PerExampleRecord> {
        rs.iter().map(|r| (r.example_id.clone(), r.clone())).collect()
    };
    let (ia, ib) = (index(a), index(b));
    let mut out = RunComparison {
        only_in_a: ia.keys().filter(|k| !ib.contains_key(*k)).cloned().collect(),
        only_in_b: ib.keys().filter(|k| !ia.contains_key(*k)).cloned().collect(),
        ..Default::default()
    };
    for (id, ra) in &ia {
        let Some(rb) = ib.get(id) else { continue };
        out.common += 1;
        match (ra.module_correct, rb.module_correct) {
            (Some(false), Some(true)) => out.module_gained.push(id.clone()),
            (Some(true), Some(false)) => out.module_lost.push(id.clone()),
            _ => {}
        }
        match (ra.baseline_correct, rb.baseline_correct) {
            (Some(false), Some(true)) => out.baseline_gained.push(id.clone()),
            (Some(true), Some(false)) => out.baseline_lost.push(id.clone()),
            _ => {}
        }
        out.module_sql_changed += usize::from(ra.final_sql_module != rb.final_sql_module);
        out.baseline_sql_changed += usize::from(ra.final_sql_baseline != rb.final_sql_baseline);
    }
    out
}
