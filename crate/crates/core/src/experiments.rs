//! Simulation studies of the practical meta-regression and the summary-data
//! analysis workflow.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::asymptotics::marginal_variances;
use crate::error::{Error, Result};
use crate::format::{round6, sig6};
use crate::inference::{ols_fit, MetaFit};
use crate::model::{derive_endpoints, scenario_table, to_joint, EndpointPair, JointProbs, TrialParams};
use crate::par::{map_indexed, Execution};
use crate::regions::{chi2_quantile_2df, wald_region, WaldRegion};
use crate::sampling::{mix_words, simulate_joint, simulate_trial, EndpointEstimate, SeedSpec, Stream};
use rand::Rng;

/// Level of the slope test used for the rejection-rate column.
pub const DEFAULT_TEST_ALPHA: f64 = 0.05;
/// Miscoverage of the plotted confidence regions.
pub const DEFAULT_REGION_ALPHA: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DesignName {
    A,
    B,
    C,
    D,
}

impl DesignName {
    pub const ALL: [DesignName; 4] = [DesignName::A, DesignName::B, DesignName::C, DesignName::D];

    fn tag(self) -> u64 {
        match self {
            DesignName::A => 0xA,
            DesignName::B => 0xB,
            DesignName::C => 0xC,
            DesignName::D => 0xD,
        }
    }

    /// Whether the true slope is identifiable (the surrogate varies).
    pub fn slope_identifiable(self) -> bool {
        matches!(self, DesignName::C | DesignName::D)
    }
}

impl std::fmt::Display for DesignName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for DesignName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(DesignName::A),
            "B" => Ok(DesignName::B),
            "C" => Ok(DesignName::C),
            "D" => Ok(DesignName::D),
            other => Err(format!("unknown design `{other}` (expected A, B, C or D)")),
        }
    }
}

/// How each simulated trial picks its scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioRule {
    /// Index into the scenario registry.
    Fixed(usize),
    /// Uniform over the four registry scenarios, redrawn every repetition.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub name: DesignName,
    pub n_trials: usize,
    pub repetitions: usize,
    pub n: u64,
    pub m: u64,
    pub scenario_rule: ScenarioRule,
    pub alpha: f64,
}

impl SimulationDesign {
    /// Defaults: ten trials per repetition, 100 repetitions, 20,000 subjects
    /// per arm (100,000 for D).
    pub fn standard(name: DesignName) -> Self {
        let (size, rule) = match name {
            DesignName::A => (20_000, ScenarioRule::Fixed(0)),
            DesignName::B => (20_000, ScenarioRule::Fixed(1)),
            DesignName::C => (20_000, ScenarioRule::Uniform),
            DesignName::D => (100_000, ScenarioRule::Uniform),
        };
        Self {
            name,
            n_trials: 10,
            repetitions: 100,
            n: size,
            m: size,
            scenario_rule: rule,
            alpha: DEFAULT_TEST_ALPHA,
        }
    }

    pub fn with_repetitions(mut self, repetitions: usize) -> Self {
        self.repetitions = repetitions;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials < 3 {
            return Err(Error::InsufficientData { needed: 3, got: self.n_trials });
        }
        if self.repetitions == 0 {
            return Err(Error::Domain("at least one repetition required".into()));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::Domain("arm sizes must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("alpha {} outside (0,1)", self.alpha)));
        }
        if let ScenarioRule::Fixed(i) = self.scenario_rule {
            if i >= scenario_table().len() {
                return Err(Error::Domain(format!("no scenario with index {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepetitionResult {
    pub repetition: usize,
    /// `None` for a repetition excluded as non-identifiable.
    pub beta1_hat: Option<f64>,
    pub p_value: Option<f64>,
}

/// One simulated trial with its truth, as overlaid in scatter plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub repetition: usize,
    pub trial: usize,
    /// One-based scenario number.
    pub scenario: usize,
    pub truth: EndpointPair,
    pub s_hat: f64,
    pub m_hat: f64,
    pub resamples: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub design: SimulationDesign,
    pub master_seed: u64,
    pub mean_beta1: f64,
    pub rejection_rate: f64,
    pub mc_se_rejection: f64,
    pub used_repetitions: usize,
    pub excluded_repetitions: usize,
    pub total_resamples: u64,
    pub per_repetition: Vec<RepetitionResult>,
    pub scatter: Vec<ScatterPoint>,
}

struct Repetition {
    result: RepetitionResult,
    points: Vec<ScatterPoint>,
}

struct ScenarioSet {
    joints: Vec<(JointProbs, JointProbs)>,
    truths: Vec<EndpointPair>,
}

impl ScenarioSet {
    fn registry() -> Result<Self> {
        let table = scenario_table();
        let joints = table
            .iter()
            .map(|p| Ok((to_joint(&p.control)?, to_joint(&p.screen)?)))
            .collect::<Result<_>>()?;
        let truths = table.iter().map(derive_endpoints).collect::<Result<_>>()?;
        Ok(Self { joints, truths })
    }
}

fn run_repetition(design: &SimulationDesign, seed: u64, scenarios: &ScenarioSet, repetition: usize) -> Result<Repetition> {
    let rep = repetition as u64;
    let mut picker = SeedSpec::new(seed, 0, rep).rng(Stream::Scenario, 0);
    let mut points = Vec::with_capacity(design.n_trials);
    for trial in 0..design.n_trials {
        let idx = match design.scenario_rule {
            ScenarioRule::Fixed(i) => i,
            ScenarioRule::Uniform => picker.random_range(0..scenarios.joints.len()),
        };
        let (jc, js) = &scenarios.joints[idx];
        let sim = simulate_joint(jc, js, design.n, design.m, &SeedSpec::new(seed, trial as u64, rep))?;
        points.push(ScatterPoint {
            repetition,
            trial,
            scenario: idx + 1,
            truth: scenarios.truths[idx],
            s_hat: sim.estimate.s_hat,
            m_hat: sim.estimate.m_hat,
            resamples: sim.resamples,
        });
    }
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.s_hat, p.m_hat)).collect();
    let result = match ols_fit(&pairs, None) {
        Ok(fit) => RepetitionResult {
            repetition,
            beta1_hat: Some(fit.beta1_hat),
            p_value: Some(fit.p_value),
        },
        Err(Error::NonIdentifiable(_)) => RepetitionResult {
            repetition,
            beta1_hat: None,
            p_value: None,
        },
        Err(e) => return Err(e),
    };
    Ok(Repetition { result, points })
}

/// Runs every repetition of a design: simulate `n_trials` trials, regress
/// `M_hat` on `S_hat`, test the slope. Output depends only on the design and
/// `master_seed`, never on `exec`.
pub fn run_simulation(design: &SimulationDesign, master_seed: u64, exec: Execution) -> Result<SimulationSummary> {
    design.validate()?;
    let scenarios = ScenarioSet::registry()?;
    let seed = mix_words(&[master_seed, design.name.tag()]);
    let reps = map_indexed(exec, design.repetitions, |r| run_repetition(design, seed, &scenarios, r));

    let mut per_repetition = Vec::with_capacity(design.repetitions);
    let mut scatter = Vec::with_capacity(design.repetitions * design.n_trials);
    let (mut sum_beta, mut rejections, mut used) = (0.0, 0usize, 0usize);
    let mut total_resamples = 0u64;
    for rep in reps {
        let rep = rep?;
        if let (Some(b), Some(p)) = (rep.result.beta1_hat, rep.result.p_value) {
            sum_beta += b;
            used += 1;
            if p < design.alpha {
                rejections += 1;
            }
            total_resamples += rep.points.iter().map(|p| u64::from(p.resamples)).sum::<u64>();
            scatter.extend(rep.points);
        }
        per_repetition.push(rep.result);
    }
    if used == 0 {
        return Err(Error::NonIdentifiable("every repetition was non-identifiable".into()));
    }
    let rate = rejections as f64 / used as f64;
    Ok(SimulationSummary {
        design: design.clone(),
        master_seed,
        mean_beta1: sum_beta / used as f64,
        rejection_rate: rate,
        mc_se_rejection: (rate * (1.0 - rate) / used as f64).sqrt(),
        used_repetitions: used,
        excluded_repetitions: design.repetitions - used,
        total_resamples,
        per_repetition,
        scatter,
    })
}

impl SimulationSummary {
    pub fn to_json_value(&self) -> serde_json::Value {
        let d = &self.design;
        json!({
            "design": d.name.to_string(),
            "seed": self.master_seed,
            "N": d.repetitions,
            "n_T": d.n_trials,
            "n": d.n,
            "m": d.m,
            "alpha": d.alpha,
            "mean_beta1": round6(self.mean_beta1),
            "rejection_rate": round6(self.rejection_rate),
            "mc_se_rejection": round6(self.mc_se_rejection),
            "used_repetitions": self.used_repetitions,
            "excluded_repetitions": self.excluded_repetitions,
            "resamples": self.total_resamples,
            "per_repetition": self.per_repetition.iter().map(|r| json!({
                "repetition": r.repetition,
                "beta1_hat": r.beta1_hat.map(round6),
                "p_value": r.p_value.map(round6),
            })).collect::<Vec<_>>(),
        })
    }

    /// One-row CSV of the aggregate results.
    pub fn to_csv(&self) -> String {
        let d = &self.design;
        format!(
            "design,N,n_T,n,m,alpha,mean_beta1,rejection_rate,mc_se_rejection,excluded\n{},{},{},{},{},{},{},{},{},{}\n",
            d.name,
            d.repetitions,
            d.n_trials,
            d.n,
            d.m,
            sig6(d.alpha),
            sig6(self.mean_beta1),
            sig6(self.rejection_rate),
            sig6(self.mc_se_rejection),
            self.excluded_repetitions
        )
    }

    pub fn report(&self) -> String {
        let d = &self.design;
        let mut s = String::new();
        let _ = writeln!(s, "Simulation {} (seed {})", d.name, self.master_seed);
        let _ = writeln!(
            s,
            "  trials per repetition: {}, repetitions: {}, subjects per arm: n = {}, m = {}",
            d.n_trials, d.repetitions, d.n, d.m
        );
        let truth = if d.name.slope_identifiable() { "0" } else { "- (not identifiable)" };
        let _ = writeln!(s, "  true beta1:            {truth}");
        let _ = writeln!(s, "  E[beta1_hat]:          {}", sig6(self.mean_beta1));
        let _ = writeln!(
            s,
            "  rejection rate (a={}): {} (MC s.e. {})",
            sig6(d.alpha),
            sig6(self.rejection_rate),
            sig6(self.mc_se_rejection)
        );
        let _ = writeln!(s, "  excluded repetitions:  {}", self.excluded_repetitions);
        let _ = writeln!(s, "  degenerate redraws:    {}", self.total_resamples);
        s
    }
}

/// Writes the per-trial scatter:
/// `design,repetition,trial,S_true,M_true,S_hat,M_hat`.
pub fn scatter_export<W: Write>(summary: &SimulationSummary, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["design", "repetition", "trial", "S_true", "M_true", "S_hat", "M_hat"])?;
    let name = summary.design.name.to_string();
    for p in &summary.scatter {
        w.write_record([
            name.clone(),
            p.repetition.to_string(),
            p.trial.to_string(),
            sig6(p.truth.s),
            sig6(p.truth.m),
            sig6(p.s_hat),
            sig6(p.m_hat),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Row {
    pub design: DesignName,
    pub repetitions: usize,
    pub mean_beta1: f64,
    pub type1_error: f64,
    pub mc_se: f64,
}

impl Table2Row {
    /// `"-"` where the true slope is not identifiable, `"0"` otherwise.
    pub fn beta1_label(&self) -> &'static str {
        if self.design.slope_identifiable() {
            "0"
        } else {
            "-"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Report {
    pub seed: u64,
    pub runs: Vec<(usize, Vec<Table2Row>)>,
}

/// Repetition counts used for the reproduced table.
pub const TABLE2_REPETITIONS: [usize; 2] = [100, 1000];

/// Runs designs A-D at their default sizes with 100 and with 1,000
/// repetitions.
pub fn table2_report(seed: u64, exec: Execution) -> Result<Table2Report> {
    let mut runs = Vec::new();
    for reps in TABLE2_REPETITIONS {
        let rows = DesignName::ALL
            .iter()
            .map(|&name| {
                let summary = run_simulation(&SimulationDesign::standard(name).with_repetitions(reps), seed, exec)?;
                Ok(Table2Row {
                    design: name,
                    repetitions: reps,
                    mean_beta1: summary.mean_beta1,
                    type1_error: summary.rejection_rate,
                    mc_se: summary.mc_se_rejection,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        runs.push((reps, rows));
    }
    Ok(Table2Report { seed, runs })
}

impl Table2Report {
    pub fn rows(&self, repetitions: usize) -> Option<&[Table2Row]> {
        self.runs
            .iter()
            .find(|(r, _)| *r == repetitions)
            .map(|(_, rows)| rows.as_slice())
    }

    pub fn to_csv(rows: &[Table2Row]) -> String {
        let mut s = String::from("simulation,beta1,mean_beta1_hat,type1_error,mc_se,N\n");
        for r in rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.design,
                r.beta1_label(),
                sig6(r.mean_beta1),
                sig6(r.type1_error),
                sig6(r.mc_se),
                r.repetitions
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (reps, rows) in &self.runs {
            let _ = writeln!(s, "Simulation results (N = {reps}, seed {})", self.seed);
            let _ = writeln!(s, "{:<14} {:>6} {:>14} {:>14}", "", "beta1", "E[beta1_hat]", "Type I Error");
            for r in rows {
                let _ = writeln!(
                    s,
                    "{:<14} {:>6} {:>14.2} {:>14.2}",
                    format!("Simulation {}", r.design),
                    r.beta1_label(),
                    r.mean_beta1,
                    r.type1_error
                );
            }
            s.push('\n');
        }
        s
    }
}

/// Published marginal counts for one trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSummaryRecord {
    pub trial_id: String,
    pub n_control: u64,
    pub n_screen: u64,
    pub late_control: u64,
    pub late_screen: u64,
    pub deaths_control: u64,
    pub deaths_screen: u64,
}

pub const SUMMARY_HEADER: [&str; 7] = [
    "trial_id",
    "n_control",
    "n_screen",
    "late_control",
    "late_screen",
    "deaths_control",
    "deaths_screen",
];

impl TrialSummaryRecord {
    pub fn estimate(&self) -> Result<EndpointEstimate> {
        EndpointEstimate::from_marginals(
            self.n_control,
            self.n_screen,
            self.late_control,
            self.late_screen,
            self.deaths_control,
            self.deaths_screen,
        )
    }
}

/// Problems with a trial-summary CSV.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SchemaError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unexpected column `{0}`")]
    UnexpectedColumn(String),
    #[error("header must be exactly `{expected}`")]
    HeaderOrder { expected: String },
    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    BadValue { row: usize, column: String, value: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    FieldCount { row: usize, expected: usize, found: usize },
    #[error("malformed CSV: {0}")]
    Malformed(String),
}

/// Parses trial summaries; the header must match [`SUMMARY_HEADER`] exactly.
/// Rows are numbered from 1 (the first data row).
pub fn read_trial_summaries<R: Read>(input: R) -> std::result::Result<Vec<TrialSummaryRecord>, SchemaError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| SchemaError::Malformed(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    for col in SUMMARY_HEADER {
        if !header.iter().any(|h| h == col) {
            return Err(SchemaError::MissingColumn(col.into()));
        }
    }
    if let Some(extra) = header.iter().find(|h| !SUMMARY_HEADER.contains(&h.as_str())) {
        return Err(SchemaError::UnexpectedColumn(extra.clone()));
    }
    if header.len() != SUMMARY_HEADER.len() || header.iter().zip(SUMMARY_HEADER).any(|(h, e)| h != e) {
        return Err(SchemaError::HeaderOrder {
            expected: SUMMARY_HEADER.join(","),
        });
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| SchemaError::Malformed(e.to_string()))?;
        if row.len() != SUMMARY_HEADER.len() {
            return Err(SchemaError::FieldCount {
                row: row_no,
                expected: SUMMARY_HEADER.len(),
                found: row.len(),
            });
        }
        let count = |col: usize| -> std::result::Result<u64, SchemaError> {
            let raw = row[col].trim();
            raw.parse::<u64>().map_err(|_| SchemaError::BadValue {
                row: row_no,
                column: SUMMARY_HEADER[col].into(),
                value: raw.into(),
            })
        };
        records.push(TrialSummaryRecord {
            trial_id: row[0].trim().to_string(),
            n_control: count(1)?,
            n_screen: count(2)?,
            late_control: count(3)?,
            late_screen: count(4)?,
            deaths_control: count(5)?,
            deaths_screen: count(6)?,
        });
    }
    Ok(records)
}

pub fn write_trial_summaries<W: Write>(records: &[TrialSummaryRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Summary counts of `count` simulated trials of one scenario.
pub fn synthetic_records(params: &TrialParams, n: u64, m: u64, count: usize, seed: u64) -> Result<Vec<TrialSummaryRecord>> {
    (0..count)
        .map(|i| {
            let sim = simulate_trial(params, n, m, &SeedSpec::new(seed, i as u64, 0))?;
            let (c, s) = (sim.counts.control, sim.counts.screen);
            Ok(TrialSummaryRecord {
                trial_id: format!("trial{}", i + 1),
                n_control: c.n,
                n_screen: s.n,
                late_control: c.late(),
                late_screen: s.late(),
                deaths_control: c.deaths(),
                deaths_screen: s.deaths(),
            })
        })
        .collect()
}

/// Per-trial ingredients of the analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialAnalysis {
    pub trial_id: String,
    pub estimate: EndpointEstimate,
    /// Standardized plug-in variances.
    pub var_s: f64,
    pub var_m: f64,
    pub low_count: bool,
}

/// All regions assembled under one assumed correlation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoPanel {
    pub rho: f64,
    pub regions: Vec<(String, WaldRegion)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaAnalysis {
    pub trials: Vec<TrialAnalysis>,
    /// Records that could not be used, with the reason.
    pub rejected: Vec<(String, String)>,
    pub fit: MetaFit,
    pub alpha: f64,
    pub threshold: f64,
    pub panels: Vec<RhoPanel>,
}

/// Estimates each trial's endpoints and plug-in variances, regresses
/// `M_hat` on `S_hat`, and builds one confidence region per trial and
/// assumed correlation.
pub fn analyze_meta(records: &[TrialSummaryRecord], rho_values: &[f64], alpha: f64) -> Result<MetaAnalysis> {
    let threshold = chi2_quantile_2df(alpha)?;
    if let Some(bad) = rho_values.iter().find(|r| r.is_nan() || r.abs() >= 1.0) {
        return Err(Error::Domain(format!("rho {bad} must lie strictly inside (-1, 1)")));
    }
    let mut trials = Vec::new();
    let mut rejected = Vec::new();
    for rec in records {
        let analysed = rec.estimate().and_then(|est| {
            let (var_s, var_m) = marginal_variances(
                est.p_hat_late_control(),
                est.p_hat_late_screen(),
                est.p_hat_death_control(),
                est.p_hat_death_screen(),
                est.n,
                est.m,
            )?;
            Ok(TrialAnalysis {
                trial_id: rec.trial_id.clone(),
                low_count: est.min_count() < crate::regions::LOW_COUNT_THRESHOLD,
                estimate: est,
                var_s,
                var_m,
            })
        });
        match analysed {
            Ok(t) => trials.push(t),
            Err(e) => rejected.push((rec.trial_id.clone(), e.to_string())),
        }
    }
    if trials.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: trials.len() });
    }
    let pairs: Vec<(f64, f64)> = trials.iter().map(|t| (t.estimate.s_hat, t.estimate.m_hat)).collect();
    let fit = ols_fit(&pairs, None)?;
    let panels = rho_values
        .iter()
        .map(|&rho| {
            let regions = trials
                .iter()
                .map(|t| Ok((t.trial_id.clone(), wald_region(&t.estimate, t.var_s, t.var_m, rho, alpha)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(RhoPanel { rho, regions })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetaAnalysis {
        trials,
        rejected,
        fit,
        alpha,
        threshold,
        panels,
    })
}

impl MetaAnalysis {
    pub fn to_json_value(&self) -> serde_json::Value {
        json!({
            "fit": self.fit.to_json_value(),
            "alpha": self.alpha,
            "threshold": round6(self.threshold),
            "trials": self.trials.iter().map(|t| json!({
                "trial_id": t.trial_id,
                "S_hat": round6(t.estimate.s_hat),
                "M_hat": round6(t.estimate.m_hat),
                "varS": round6(t.var_s),
                "varM": round6(t.var_m),
                "n": t.estimate.n,
                "m": t.estimate.m,
                "lowCount": t.low_count,
            })).collect::<Vec<_>>(),
            "rejected": self.rejected.iter().map(|(id, why)| json!({"trial_id": id, "reason": why})).collect::<Vec<_>>(),
            "regions": self.panels.iter().map(|p| json!({
                "rho": p.rho,
                "trials": p.regions.iter().map(|(id, r)| json!({
                    "trial_id": id,
                    "containsOrigin": r.contains((0.0, 0.0)),
                    "area": round6(r.area()),
                    "lowCount": r.low_count,
                })).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small(name: DesignName, reps: usize) -> SimulationDesign {
        SimulationDesign::standard(name).with_repetitions(reps)
    }

    #[test]
    fn standard_defaults() {
        let a = SimulationDesign::standard(DesignName::A);
        assert_eq!((a.n_trials, a.repetitions, a.n, a.m), (10, 100, 20_000, 20_000));
        assert_eq!(SimulationDesign::standard(DesignName::D).n, 100_000);
        assert_eq!(SimulationDesign::standard(DesignName::B).scenario_rule, ScenarioRule::Fixed(1));
        assert_eq!("c".parse::<DesignName>().unwrap(), DesignName::C);
        assert!("E".parse::<DesignName>().is_err());
    }

    #[test]
    fn summary_bookkeeping() {
        let s = run_simulation(&small(DesignName::C, 20), 1, Execution::Sequential).unwrap();
        assert_eq!(s.per_repetition.len(), 20);
        assert_eq!(s.scatter.len(), 10 * s.used_repetitions);
        let rr = s.rejection_rate;
        assert!((0.0..=1.0).contains(&rr));
        assert!((s.mc_se_rejection - (rr * (1.0 - rr) / s.used_repetitions as f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn scatter_truth_points() {
        let a = run_simulation(&small(DesignName::A, 10), 2, Execution::Sequential).unwrap();
        let truths: BTreeSet<(u64, u64)> = a.scatter.iter().map(|p| (p.truth.s.to_bits(), p.truth.m.to_bits())).collect();
        assert_eq!(truths.len(), 1);
        assert!(a.scatter.iter().all(|p| p.truth.s == 0.0 && p.truth.m == 0.0));

        let c = run_simulation(&small(DesignName::C, 30), 2, Execution::Sequential).unwrap();
        let truths: BTreeSet<(u64, u64)> = c.scatter.iter().map(|p| (p.truth.s.to_bits(), p.truth.m.to_bits())).collect();
        assert_eq!(truths.len(), 4);

        let mut buf = Vec::new();
        scatter_export(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("design,repetition,trial,S_true,M_true,S_hat,M_hat\n"));
        assert_eq!(text.lines().count(), 1 + 300);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let d = small(DesignName::D, 16);
        let seq = run_simulation(&d, 77, Execution::Sequential).unwrap();
        let par = run_simulation(&d, 77, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq.to_json_value().to_string(), par.to_json_value().to_string());
    }

    #[test]
    fn designs_use_distinct_streams() {
        let a = run_simulation(&small(DesignName::A, 3), 5, Execution::Sequential).unwrap();
        let b = run_simulation(&small(DesignName::B, 3), 5, Execution::Sequential).unwrap();
        assert_ne!(a.scatter[0].s_hat, b.scatter[0].s_hat);
    }

    #[test]
    fn invalid_designs() {
        let mut d = small(DesignName::A, 5);
        d.n_trials = 2;
        assert!(run_simulation(&d, 1, Execution::Sequential).is_err());
        let mut d = small(DesignName::A, 5);
        d.scenario_rule = ScenarioRule::Fixed(9);
        assert!(run_simulation(&d, 1, Execution::Sequential).is_err());
    }

    #[test]
    fn table_labels() {
        let row = |design| Table2Row { design, repetitions: 100, mean_beta1: 0.5, type1_error: 0.1, mc_se: 0.03 };
        assert_eq!(row(DesignName::A).beta1_label(), "-");
        assert_eq!(row(DesignName::B).beta1_label(), "-");
        assert_eq!(row(DesignName::C).beta1_label(), "0");
        let csv = Table2Report::to_csv(&DesignName::ALL.map(row));
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(1).unwrap().starts_with("A,-,"));
    }

    const GOOD_CSV: &str = "trial_id,n_control,n_screen,late_control,late_screen,deaths_control,deaths_screen\n\
        t1,50000,50000,600,500,300,250\n\
        t2,40000,40000,500,300,250,200\n\
        t3,30000,30000,400,380,200,170\n\
        small,50000,50000,30,25,18,14\n";

    #[test]
    fn reads_summaries() {
        let recs = read_trial_summaries(GOOD_CSV.as_bytes()).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[3].deaths_screen, 14);
        let mut buf = Vec::new();
        write_trial_summaries(&recs, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), GOOD_CSV);
    }

    #[test]
    fn schema_errors_name_the_problem() {
        let missing = "trial_id,n_control,n_screen,late_control,late_screen,deaths_control\nt,1,1,1,1,1\n";
        assert_eq!(
            read_trial_summaries(missing.as_bytes()).unwrap_err(),
            SchemaError::MissingColumn("deaths_screen".into())
        );
        let bad = GOOD_CSV.replace("t2,40000", "t2,forty");
        assert_eq!(
            read_trial_summaries(bad.as_bytes()).unwrap_err(),
            SchemaError::BadValue { row: 2, column: "n_control".into(), value: "forty".into() }
        );
        let reordered = "n_control,trial_id,n_screen,late_control,late_screen,deaths_control,deaths_screen\n";
        assert!(matches!(read_trial_summaries(reordered.as_bytes()), Err(SchemaError::HeaderOrder { .. })));
        let extra = format!("{},extra\n", SUMMARY_HEADER.join(","));
        assert_eq!(read_trial_summaries(extra.as_bytes()).unwrap_err(), SchemaError::UnexpectedColumn("extra".into()));
    }

    #[test]
    fn analysis_bundle() {
        let recs = read_trial_summaries(GOOD_CSV.as_bytes()).unwrap();
        let a = analyze_meta(&recs, &crate::regions::DEFAULT_RHO_SWEEP, 0.10).unwrap();
        assert_eq!(a.trials.len(), 4);
        assert_eq!(a.panels.len(), 3);
        assert!(a.panels.iter().all(|p| p.regions.len() == 4));
        assert!(a.trials[3].low_count);
        assert!(!a.trials[0].low_count);
        assert!(a.fit.r_ci.is_some());
        assert!((a.threshold - 4.605170186).abs() < 1e-9);
        // the small trial's wide region covers the origin at every rho
        assert!(a.panels.iter().all(|p| p.regions[3].1.contains((0.0, 0.0))));
    }

    #[test]
    fn analysis_rejects_bad_records() {
        let mut recs = read_trial_summaries(GOOD_CSV.as_bytes()).unwrap();
        recs.push(TrialSummaryRecord {
            trial_id: "empty".into(),
            n_control: 100,
            n_screen: 100,
            late_control: 0,
            late_screen: 0,
            deaths_control: 0,
            deaths_screen: 0,
        });
        let a = analyze_meta(&recs, &[0.5], 0.1).unwrap();
        assert_eq!(a.rejected.len(), 1);
        assert!(a.rejected[0].1.contains("degenerate denominator"));
        recs.truncate(2);
        assert_eq!(
            analyze_meta(&recs, &[0.5], 0.1).unwrap_err(),
            Error::InsufficientData { needed: 3, got: 2 }
        );
    }
}
