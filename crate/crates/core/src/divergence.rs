//! Divergence between the compensatory baseline and the gate.
//!
//! A witness is a decision the scorer allows while the gate rejects it:
//! one constraint fails, every other constraint passes, and the features
//! read high. Feature `k` is paired with constraint `k` through a coupling
//! map; in coupled mode the failed constraint's feature reads 0, in
//! decoupled mode it stays at 1. With features bounded to [0,1] a witness
//! exists exactly when the remaining weight reaches the threshold:
//! coupled `Σ_{i≠k} w_i ≥ θ`, decoupled `Σ_i w_i ≥ θ`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::format_f64;
use crate::corpus::CorpusCase;
use crate::decision::{DecisionObject, Timestamp};
use crate::dsl::{ConstraintDef, ConstraintSet, OnFail, Schema};
use crate::gate::{evaluate, unknown_class_report, GateError, Outcome};
use crate::scoring::{score, ScoreReport, ScoringError, ScoringModel};
use crate::synth::{synthesize, Requirement, DEFAULT_BUDGET};

/// Default limit on the number of (θ, w, k) cells in one sweep.
pub const DEFAULT_CELL_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    #[default]
    Coupled,
    Decoupled,
}

impl Coupling {
    pub fn as_str(self) -> &'static str {
        match self {
            Coupling::Coupled => "coupled",
            Coupling::Decoupled => "decoupled",
        }
    }

    /// Feature value of the failed constraint's own feature.
    fn failed_feature_value(self) -> f64 {
        match self {
            Coupling::Coupled => 0.0,
            Coupling::Decoupled => 1.0,
        }
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Coupling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "coupled" => Ok(Coupling::Coupled),
            "decoupled" => Ok(Coupling::Decoupled),
            other => Err(format!("unknown coupling mode {other:?} (expected coupled or decoupled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivergenceError {
    #[error("UNFALSIFIABLE_CONSTRAINT: {0}")]
    Unfalsifiable(String),
    #[error("UNCONSTRUCTIBLE_WITNESS: no decision fails {0} while every other constraint passes")]
    Unconstructible(String),
    #[error("INVALID_SPEC: {0}")]
    InvalidSpec(String),
    #[error("GRID_TOO_LARGE: {cells} cells exceeds the cap of {cap}")]
    GridTooLarge { cells: u64, cap: u64 },
    #[error("{0}")]
    Gate(#[from] GateError),
    #[error("{0}")]
    Scoring(#[from] ScoringError),
    #[error("case {case}: {source}")]
    Case {
        case: String,
        #[source]
        source: Box<DivergenceError>,
    },
}

impl DivergenceError {
    pub fn code(&self) -> &'static str {
        match self {
            DivergenceError::Unfalsifiable(_) => "UNFALSIFIABLE_CONSTRAINT",
            DivergenceError::Unconstructible(_) => "UNCONSTRUCTIBLE_WITNESS",
            DivergenceError::InvalidSpec(_) => "INVALID_SPEC",
            DivergenceError::GridTooLarge { .. } => "GRID_TOO_LARGE",
            DivergenceError::Gate(GateError::ClassMismatch { .. }) => "CLASS_MISMATCH",
            DivergenceError::Gate(GateError::NotRejected) => "NOT_REJECTED",
            DivergenceError::Scoring(e) => e.code(),
            DivergenceError::Case { source, .. } => source.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessSpec {
    pub model: ScoringModel,
    pub failed_index: usize,
    pub coupling: Coupling,
    /// Constraint id paired with each feature, in feature order.
    pub coupling_map: Vec<String>,
}

/// A decision the baseline allows and the gate rejects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub decision: DecisionObject,
    pub gate_outcome: Outcome,
    pub baseline: ScoreReport,
}

impl DivergenceRecord {
    /// Checked constructor: `None` unless baseline allows and gate rejects.
    pub fn new(decision: DecisionObject, gate_outcome: Outcome, baseline: ScoreReport) -> Option<Self> {
        (baseline.allowed && !gate_outcome.kind.is_allow()).then_some(DivergenceRecord {
            decision,
            gate_outcome,
            baseline,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    Found(DivergenceRecord),
    /// The constructed decision scores below θ.
    Infeasible { decision: DecisionObject, score: f64 },
}

/// Remaining weight after the failed feature: coupled skips index `k`,
/// decoupled keeps every weight. Summed in feature order, like the scorer.
pub fn available_weight(weights: &[f64], k: usize, coupling: Coupling) -> f64 {
    let mut total = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if coupling == Coupling::Decoupled || i != k {
            total += w;
        }
    }
    total
}

pub fn feasible(weights: &[f64], theta: f64, k: usize, coupling: Coupling) -> bool {
    available_weight(weights, k, coupling) >= theta
}

fn template(set: &ConstraintSet, clock: &Timestamp) -> DecisionObject {
    DecisionObject {
        decision_class: set.decision_class().to_owned(),
        operation: "witness".into(),
        context: BTreeMap::new(),
        target: "witness".into(),
        scope: "witness".into(),
        timing: clock.clone(),
        features: BTreeMap::new(),
        metadata: BTreeMap::new(),
    }
}

/// Build a decision on which constraint `failed` fails, every other
/// constraint passes, and the features are exactly `features`.
pub fn construct_witness_decision(
    set: &ConstraintSet,
    failed: &str,
    features: &BTreeMap<String, f64>,
    clock: &Timestamp,
) -> Result<DecisionObject, DivergenceError> {
    let target = set
        .get(failed)
        .ok_or_else(|| DivergenceError::InvalidSpec(format!("no constraint {failed} in the set")))?;
    let mut base = template(set, clock);
    base.features = features.clone();

    if synthesize(&base, &[Requirement::fail(target)], clock, DEFAULT_BUDGET).is_none() {
        return Err(DivergenceError::Unfalsifiable(failed.to_owned()));
    }
    let reqs: Vec<Requirement<'_>> = set
        .constraints()
        .iter()
        .map(|c| Requirement {
            constraint: c,
            pass: c.id != failed,
        })
        .collect();
    let mut d = synthesize(&base, &reqs, clock, DEFAULT_BUDGET)
        .ok_or_else(|| DivergenceError::Unconstructible(failed.to_owned()))?;

    // Constraints may read features; pin them and re-check.
    d.features = features.clone();
    let report = evaluate(set, &d, clock)?;
    if report.outcome.failed_constraints != [failed] {
        return Err(DivergenceError::Unconstructible(failed.to_owned()));
    }
    Ok(d)
}

fn witness_features(spec: &WitnessSpec) -> BTreeMap<String, f64> {
    spec.model
        .feature_names()
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let x = if i == spec.failed_index {
                spec.coupling.failed_feature_value()
            } else {
                1.0
            };
            (name.clone(), x)
        })
        .collect()
}

fn check_spec(spec: &WitnessSpec, set: &ConstraintSet) -> Result<(), DivergenceError> {
    let m = spec.model.len();
    if spec.failed_index >= m {
        return Err(DivergenceError::InvalidSpec(format!(
            "failed index {} out of range for {m} features",
            spec.failed_index
        )));
    }
    if spec.coupling_map.len() != m {
        return Err(DivergenceError::InvalidSpec(format!(
            "coupling map has {} entries for {m} features",
            spec.coupling_map.len()
        )));
    }
    if let Some(id) = spec.coupling_map.iter().find(|id| set.get(id).is_none()) {
        return Err(DivergenceError::InvalidSpec(format!("coupling map names unknown constraint {id}")));
    }
    Ok(())
}

/// Construct the witness for `spec` and score it.
pub fn find_witness(spec: &WitnessSpec, set: &ConstraintSet, clock: &Timestamp) -> Result<Witness, DivergenceError> {
    check_spec(spec, set)?;
    let failed = &spec.coupling_map[spec.failed_index];
    let d = construct_witness_decision(set, failed, &witness_features(spec), clock)?;
    let gate = evaluate(set, &d, clock)?;
    let baseline = score(&spec.model, &d)?;
    if !baseline.allowed {
        return Ok(Witness::Infeasible {
            decision: d,
            score: baseline.score,
        });
    }
    Ok(Witness::Found(
        DivergenceRecord::new(d, gate.outcome, baseline).expect("witness fails a constraint and is allowed"),
    ))
}

/// A set of `n` independent constraints `c<i>` reading `context.cond_<i>`,
/// with features `x<i>` paired to them. Returns (set, feature names, coupling map).
pub fn synthetic_problem(n: usize) -> (ConstraintSet, Vec<String>, Vec<String>) {
    let schema = Schema::default();
    let mut defs = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("c{i}");
        let expr = format!("exists(context.cond_{i}) and context.cond_{i} == true");
        defs.push(ConstraintDef::new(&id, &format!("condition {i} holds"), OnFail::Escalate, &expr, &schema).expect("valid"));
        ids.push(id);
    }
    let set = ConstraintSet::new("synthetic", defs, schema, true).expect("valid");
    let names = (0..n).map(|i| format!("x{i}")).collect();
    (set, names, ids)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_features: usize,
    pub grid_step: f64,
    pub thetas: Vec<f64>,
    pub coupling: Coupling,
    /// Restrict to weight vectors with `Σ w_i ≤ 1`.
    pub simplex: bool,
    pub cell_cap: u64,
}

impl SweepConfig {
    pub fn new(n_features: usize, grid_step: f64, thetas: Vec<f64>, coupling: Coupling) -> Self {
        SweepConfig {
            n_features,
            grid_step,
            thetas,
            coupling,
            simplex: false,
            cell_cap: DEFAULT_CELL_CAP,
        }
    }

    /// Number of grid points per axis minus one (`1 / step`).
    pub fn divisions(&self) -> Result<u32, DivergenceError> {
        let s = self.grid_step;
        if !(s.is_finite() && s > 0.0 && s <= 1.0) {
            return Err(DivergenceError::InvalidSpec(format!("grid step {s} must be in (0, 1]")));
        }
        let n = (1.0 / s).round();
        if (n * s - 1.0).abs() > 1e-9 || n > u32::MAX as f64 {
            return Err(DivergenceError::InvalidSpec(format!("grid step {s} does not divide 1 evenly")));
        }
        Ok(n as u32)
    }

    /// Number of (θ, w, k) cells, or `None` on overflow.
    pub fn cell_count(&self) -> Result<Option<u64>, DivergenceError> {
        let n = u64::from(self.divisions()?);
        let m = self.n_features as u64;
        let vectors = if self.simplex {
            // Compositions of at most n into m parts: C(n + m, m).
            let mut c: u64 = 1;
            for i in 1..=m {
                c = match c.checked_mul(n + i) {
                    Some(v) => v / i,
                    None => return Ok(None),
                };
            }
            Some(c)
        } else {
            u32::try_from(m).ok().and_then(|m| (n + 1).checked_pow(m))
        };
        Ok(vectors
            .and_then(|v| v.checked_mul(m))
            .and_then(|v| v.checked_mul(self.thetas.len() as u64)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub theta: f64,
    pub weights: Vec<f64>,
    pub k: usize,
    pub coupling: Coupling,
    pub feasible_predicted: bool,
    pub witness_found: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaSummary {
    pub theta: f64,
    pub cells: u64,
    pub witness_cells: u64,
    pub witness_fraction: f64,
    pub weight_vectors: u64,
    /// Weight vectors where the predicate holds for some k.
    pub constructible_vectors: u64,
    pub vectors_with_witness: u64,
    pub predicate_mismatches: u64,
    /// Weight vectors with `θ ≤ max_k Σ_{i≠k} w_i` but no witness.
    pub nonequivalence_gaps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub n_features: usize,
    pub grid_step: f64,
    pub coupling: Coupling,
    pub simplex: bool,
    pub total_cells: u64,
    pub total_mismatches: u64,
    pub per_theta: Vec<ThetaSummary>,
}

impl SweepSummary {
    /// Predicate matched witness existence everywhere and every
    /// reachable threshold produced a divergence.
    pub fn all_match(&self) -> bool {
        self.total_mismatches == 0 && self.per_theta.iter().all(|t| t.nonequivalence_gaps == 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub summary: SweepSummary,
}

/// All weight vectors on the grid, as integer units of `1/divisions`, in
/// lexicographic order.
pub fn grid_units(n_features: usize, divisions: u32, simplex: bool) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; n_features];
    fn rec(i: usize, left: u32, simplex: bool, n: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        let hi = if simplex { left } else { n };
        for u in 0..=hi {
            cur[i] = u;
            rec(i + 1, left - u.min(left), simplex, n, cur, out);
        }
    }
    rec(0, divisions, simplex, divisions, &mut cur, &mut out);
    out
}

struct KCase {
    decision: DecisionObject,
    rejected: bool,
}

/// Sweep the weight grid: for each θ, weight vector and failed index, score
/// the witness decision and compare against the feasibility predicate.
pub fn sweep_weights(
    cfg: &SweepConfig,
    set: &ConstraintSet,
    feature_names: &[String],
    coupling_map: &[String],
    clock: &Timestamp,
) -> Result<SweepResult, DivergenceError> {
    let n = cfg.n_features;
    if n == 0 || feature_names.len() != n || coupling_map.len() != n {
        return Err(DivergenceError::InvalidSpec(format!(
            "{n} features need {n} feature names and {n} coupling entries"
        )));
    }
    if let Some(t) = cfg.thetas.iter().find(|t| !t.is_finite()) {
        return Err(DivergenceError::InvalidSpec(format!("theta {t} is not finite")));
    }
    let divisions = cfg.divisions()?;
    match cfg.cell_count()? {
        Some(c) if c <= cfg.cell_cap => {}
        other => {
            return Err(DivergenceError::GridTooLarge {
                cells: other.unwrap_or(u64::MAX),
                cap: cfg.cell_cap,
            })
        }
    }

    // The witness decision for index k does not depend on w or θ.
    let mut cases = Vec::with_capacity(n);
    for (k, id) in coupling_map.iter().enumerate() {
        let features = feature_names
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), if i == k { cfg.coupling.failed_feature_value() } else { 1.0 }))
            .collect();
        let decision = construct_witness_decision(set, id, &features, clock)?;
        let rejected = !evaluate(set, &decision, clock)?.outcome.kind.is_allow();
        cases.push(KCase { decision, rejected });
    }

    let vectors = grid_units(n, divisions, cfg.simplex);
    let denom = f64::from(divisions);
    let weights: Vec<Vec<f64>> = vectors
        .iter()
        .map(|u| u.iter().map(|&x| f64::from(x) / denom).collect())
        .collect();

    let mut cells = Vec::new();
    let mut per_theta = Vec::with_capacity(cfg.thetas.len());
    for &theta in &cfg.thetas {
        let rows: Vec<Vec<SweepCell>> = weights
            .par_iter()
            .map(|w| -> Result<Vec<SweepCell>, DivergenceError> {
                let model = ScoringModel::new(feature_names.to_vec(), w.clone(), theta, true)?;
                cases
                    .iter()
                    .enumerate()
                    .map(|(k, case)| {
                        let s = score(&model, &case.decision)?;
                        Ok(SweepCell {
                            theta,
                            weights: w.clone(),
                            k,
                            coupling: cfg.coupling,
                            feasible_predicted: feasible(w, theta, k, cfg.coupling),
                            witness_found: s.allowed && case.rejected,
                            score: s.score,
                        })
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;

        let mut summary = ThetaSummary {
            theta,
            cells: 0,
            witness_cells: 0,
            witness_fraction: 0.0,
            weight_vectors: rows.len() as u64,
            constructible_vectors: 0,
            vectors_with_witness: 0,
            predicate_mismatches: 0,
            nonequivalence_gaps: 0,
        };
        for (w, row) in weights.iter().zip(&rows) {
            let any_witness = row.iter().any(|c| c.witness_found);
            summary.cells += row.len() as u64;
            summary.witness_cells += row.iter().filter(|c| c.witness_found).count() as u64;
            summary.predicate_mismatches += row.iter().filter(|c| c.witness_found != c.feasible_predicted).count() as u64;
            summary.constructible_vectors += u64::from(row.iter().any(|c| c.feasible_predicted));
            summary.vectors_with_witness += u64::from(any_witness);
            let reachable = (0..n).any(|k| feasible(w, theta, k, Coupling::Coupled));
            summary.nonequivalence_gaps += u64::from(reachable && !any_witness);
        }
        if summary.cells > 0 {
            summary.witness_fraction = summary.witness_cells as f64 / summary.cells as f64;
        }
        per_theta.push(summary);
        cells.extend(rows.into_iter().flatten());
    }
    // Cells sorted by (θ, w, k); stable so equal θ keep grid order.
    cells.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    per_theta.sort_by(|a, b| a.theta.total_cmp(&b.theta));

    let summary = SweepSummary {
        n_features: n,
        grid_step: cfg.grid_step,
        coupling: cfg.coupling,
        simplex: cfg.simplex,
        total_cells: cells.len() as u64,
        total_mismatches: per_theta.iter().map(|t| t.predicate_mismatches).sum(),
        per_theta,
    };
    Ok(SweepResult { cells, summary })
}

/// Write sweep cells as CSV: theta, w0..w{n-1}, k, coupling,
/// feasible_predicted, witness_found, score.
pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], n_features: usize, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["theta".to_owned()];
    header.extend((0..n_features).map(|i| format!("w{i}")));
    header.extend(["k", "coupling", "feasible_predicted", "witness_found", "score"].map(String::from));
    w.write_record(&header)?;
    for c in cells {
        let mut row = vec![format_f64(c.theta)];
        row.extend(c.weights.iter().map(|x| format_f64(*x)));
        row.push(c.k.to_string());
        row.push(c.coupling.to_string());
        row.push(c.feasible_predicted.to_string());
        row.push(c.witness_found.to_string());
        row.push(format_f64(c.score));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseDivergence {
    pub case_id: String,
    pub record: DivergenceRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusComparison {
    pub records: Vec<CaseDivergence>,
    pub both_allow: usize,
    pub both_reject: usize,
    /// Gate allows, baseline rejects.
    pub baseline_only_rejects: usize,
}

/// Cases where the baseline allows and the gate rejects. Decisions whose
/// class has no constraint set are escalated, as the gateway does.
pub fn compare_on_corpus(
    cases: &[CorpusCase],
    sets: &BTreeMap<String, ConstraintSet>,
    model: &ScoringModel,
    clock_for: impl Fn(&CorpusCase) -> Timestamp,
) -> Result<CorpusComparison, DivergenceError> {
    let tag = |case: &CorpusCase, e: DivergenceError| DivergenceError::Case {
        case: case.id.clone(),
        source: Box::new(e),
    };
    let mut out = CorpusComparison::default();
    for case in cases {
        let clock = clock_for(case);
        let d = &case.decision;
        let gate = match sets.get(&d.decision_class) {
            Some(set) => evaluate(set, d, &clock).map_err(|e| tag(case, e.into()))?,
            None => unknown_class_report(d, &clock),
        };
        let baseline = score(model, d).map_err(|e| tag(case, e.into()))?;
        match (baseline.allowed, gate.outcome.kind.is_allow()) {
            (true, true) => out.both_allow += 1,
            (false, false) => out.both_reject += 1,
            (false, true) => out.baseline_only_rejects += 1,
            (true, false) => out.records.push(CaseDivergence {
                case_id: case.id.clone(),
                record: DivergenceRecord::new(d.clone(), gate.outcome, baseline).expect("checked"),
            }),
        }
    }
    Ok(out)
}
