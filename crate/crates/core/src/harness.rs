//! Evaluation metrics over decision outcomes and parameter sweeps.
//!
//! Every breakdown stores integer counts; ratios are derived from them on
//! demand so partitions sum exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{Backends, ManifestRecord};
use crate::decision::{decide_batch, Confidence, DecisionOutcome};
use crate::domain::{ClassId, ClassTaxonomy, ToTConfig};
use crate::error::{Error, Result};
use crate::symbolizer::SymbolModel;

fn ratio(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Clean-set partition by confidence tier and correctness.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanBreakdown {
    pub hcc: usize,
    pub hcic: usize,
    pub lcc: usize,
    pub lcic: usize,
    pub lcuc: usize,
}

impl CleanBreakdown {
    pub const FIELDS: [&'static str; 5] = ["hcc", "hcic", "lcc", "lcic", "lcuc"];

    pub fn counts(&self) -> [usize; 5] {
        [self.hcc, self.hcic, self.lcc, self.lcic, self.lcuc]
    }

    pub fn total(&self) -> usize {
        self.counts().iter().sum()
    }

    pub fn ratios(&self) -> [f64; 5] {
        self.counts().map(|c| ratio(c, self.total()))
    }

    /// Share of inputs answered with low confidence (LCC + LCIC + LCUC).
    pub fn low_ratio(&self) -> f64 {
        ratio(self.lcc + self.lcic + self.lcuc, self.total())
    }
}

/// Adversarial-set partition: detection failures, then low-confidence
/// outcomes split by final answer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversarialBreakdown {
    pub fr: usize,
    pub acc: usize,
    pub acic: usize,
    pub acuc: usize,
}

impl AdversarialBreakdown {
    pub const FIELDS: [&'static str; 4] = ["fr", "acc", "acic", "acuc"];

    pub fn counts(&self) -> [usize; 4] {
        [self.fr, self.acc, self.acic, self.acuc]
    }

    pub fn total(&self) -> usize {
        self.counts().iter().sum()
    }

    pub fn ratios(&self) -> [f64; 4] {
        self.counts().map(|c| ratio(c, self.total()))
    }

    /// Share of adversarial inputs flagged as low confidence.
    pub fn detection_ratio(&self) -> f64 {
        ratio(self.acc + self.acic + self.acuc, self.total())
    }
}

pub fn evaluate_clean(outcomes: &[(DecisionOutcome, ClassId)]) -> CleanBreakdown {
    let mut b = CleanBreakdown::default();
    for (o, label) in outcomes {
        match (o.confidence, o.final_answer) {
            (Confidence::High, Some(f)) if f == *label => b.hcc += 1,
            (Confidence::High, _) => b.hcic += 1,
            (Confidence::Low, Some(f)) if f == *label => b.lcc += 1,
            (Confidence::Low, Some(_)) => b.lcic += 1,
            (Confidence::Low, None) => b.lcuc += 1,
        }
    }
    b
}

pub fn evaluate_adversarial(outcomes: &[(DecisionOutcome, ClassId)]) -> AdversarialBreakdown {
    let mut b = AdversarialBreakdown::default();
    for (o, label) in outcomes {
        match (o.confidence, o.final_answer) {
            (Confidence::High, _) => b.fr += 1,
            (Confidence::Low, Some(f)) if f == *label => b.acc += 1,
            (Confidence::Low, Some(_)) => b.acic += 1,
            (Confidence::Low, None) => b.acuc += 1,
        }
    }
    b
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAccuracy {
    pub correct: usize,
    pub answered: usize,
}

impl FinalAccuracy {
    /// Correct over answered; an error when nothing was answered.
    pub fn ratio(&self) -> Result<f64> {
        if self.answered == 0 {
            Err(Error::NoAnswers)
        } else {
            Ok(self.correct as f64 / self.answered as f64)
        }
    }
}

/// Counts non-null final answers and the correct ones among them. With
/// `low_only`, high-confidence answers are left out.
pub fn final_answer_counts(outcomes: &[(DecisionOutcome, ClassId)], low_only: bool) -> FinalAccuracy {
    let mut acc = FinalAccuracy::default();
    for (o, label) in outcomes {
        if low_only && o.confidence == Confidence::High {
            continue;
        }
        if let Some(f) = o.final_answer {
            acc.answered += 1;
            acc.correct += usize::from(f == *label);
        }
    }
    acc
}

pub fn final_answer_accuracy(outcomes: &[(DecisionOutcome, ClassId)], low_only: bool) -> Result<f64> {
    final_answer_counts(outcomes, low_only).ratio()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Clean,
    Adversarial,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(EvalMode::Clean),
            "adversarial" => Ok(EvalMode::Adversarial),
            _ => Err(Error::InvalidConfig(format!(
                "unknown mode `{s}` (expected clean or adversarial)"
            ))),
        }
    }
}

/// Rejects records whose adversarial flag disagrees with `mode`.
pub fn check_mode(records: &[&ManifestRecord], mode: EvalMode) -> Result<()> {
    let want = mode == EvalMode::Adversarial;
    match records.iter().find(|r| r.adversarial != want) {
        Some(r) => Err(Error::Validation(format!(
            "mode mismatch: record {} is {}adversarial but the mode is {}",
            r.id,
            if r.adversarial { "" } else { "not " },
            if want { "adversarial" } else { "clean" }
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Breakdown {
    Clean(CleanBreakdown),
    Adversarial(AdversarialBreakdown),
}

impl Breakdown {
    pub fn evaluate(mode: EvalMode, outcomes: &[(DecisionOutcome, ClassId)]) -> Self {
        match mode {
            EvalMode::Clean => Breakdown::Clean(evaluate_clean(outcomes)),
            EvalMode::Adversarial => Breakdown::Adversarial(evaluate_adversarial(outcomes)),
        }
    }

    pub fn mode(&self) -> EvalMode {
        match self {
            Breakdown::Clean(_) => EvalMode::Clean,
            Breakdown::Adversarial(_) => EvalMode::Adversarial,
        }
    }

    pub fn fields(&self) -> &'static [&'static str] {
        match self {
            Breakdown::Clean(_) => &CleanBreakdown::FIELDS,
            Breakdown::Adversarial(_) => &AdversarialBreakdown::FIELDS,
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        match self {
            Breakdown::Clean(b) => b.counts().to_vec(),
            Breakdown::Adversarial(b) => b.counts().to_vec(),
        }
    }

    pub fn total(&self) -> usize {
        self.counts().iter().sum()
    }

    fn from_counts(mode: EvalMode, c: &[usize]) -> Self {
        match mode {
            EvalMode::Clean => Breakdown::Clean(CleanBreakdown {
                hcc: c[0],
                hcic: c[1],
                lcc: c[2],
                lcic: c[3],
                lcuc: c[4],
            }),
            EvalMode::Adversarial => Breakdown::Adversarial(AdversarialBreakdown {
                fr: c[0],
                acc: c[1],
                acic: c[2],
                acuc: c[3],
            }),
        }
    }

    /// Number of null finals in the breakdown.
    pub fn nulls(&self) -> usize {
        match self {
            Breakdown::Clean(b) => b.lcuc,
            Breakdown::Adversarial(b) => b.acuc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Sigma,
    TopN,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(SweepAxis::Sigma),
            "topn" | "top_n" => Ok(SweepAxis::TopN),
            _ => Err(Error::InvalidConfig(format!(
                "unknown axis `{s}` (expected sigma or topn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub breakdown: Breakdown,
    pub accuracy: FinalAccuracy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn mode(&self) -> Option<EvalMode> {
        self.points.first().map(|p| p.breakdown.mode())
    }

    fn validate(&self) -> Result<()> {
        if self.points.windows(2).any(|w| w[0].value >= w[1].value) {
            return Err(Error::Validation("sweep values must be strictly increasing".into()));
        }
        if let Some(mode) = self.mode() {
            if self.points.iter().any(|p| p.breakdown.mode() != mode) {
                return Err(Error::Validation("sweep points mix evaluation modes".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = ReportDoc {
            axis: self.axis,
            mode: self.mode().unwrap_or(EvalMode::Clean),
            points: self
                .points
                .iter()
                .map(|p| {
                    let fields = p.breakdown.fields();
                    let counts = p.breakdown.counts();
                    let total = p.breakdown.total();
                    PointDoc {
                        value: p.value,
                        total,
                        counts: fields
                            .iter()
                            .map(|f| f.to_string())
                            .zip(counts.iter().copied())
                            .collect(),
                        ratios: fields
                            .iter()
                            .map(|f| f.to_string())
                            .zip(counts.iter().map(|&c| ratio(c, total)))
                            .collect(),
                        final_correct: p.accuracy.correct,
                        final_answered: p.accuracy.answered,
                        final_accuracy: p.accuracy.ratio().ok(),
                    }
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, location: &str) -> Result<Self> {
        let doc: ReportDoc = serde_json::from_str(text).map_err(|e| Error::parse(location, e.to_string()))?;
        let fields: &[&str] = match doc.mode {
            EvalMode::Clean => &CleanBreakdown::FIELDS,
            EvalMode::Adversarial => &AdversarialBreakdown::FIELDS,
        };
        let points = doc
            .points
            .into_iter()
            .map(|p| {
                let counts = fields
                    .iter()
                    .map(|f| {
                        p.counts
                            .iter()
                            .find(|(k, _)| k == f)
                            .map(|(_, v)| *v)
                            .ok_or_else(|| Error::parse(location, format!("missing count `{f}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SweepPoint {
                    value: p.value,
                    breakdown: Breakdown::from_counts(doc.mode, &counts),
                    accuracy: FinalAccuracy {
                        correct: p.final_correct,
                        answered: p.final_answered,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let report = SweepReport { axis: doc.axis, points };
        report.validate()?;
        Ok(report)
    }

    /// Header `axis_value`, each breakdown field as count then ratio, then
    /// the final-answer counts and accuracy. Ratios carry six decimals; an
    /// undefined accuracy is left empty.
    pub fn to_csv(&self) -> String {
        let fields = self
            .points
            .first()
            .map_or(&CleanBreakdown::FIELDS[..], |p| p.breakdown.fields());
        let mut out = String::from("axis_value");
        for f in fields {
            write!(out, ",{f},{f}_ratio").unwrap();
        }
        out.push_str(",final_correct,final_answered,final_accuracy\n");
        for p in &self.points {
            write!(out, "{}", p.value).unwrap();
            let total = p.breakdown.total();
            for c in p.breakdown.counts() {
                write!(out, ",{c},{:.6}", ratio(c, total)).unwrap();
            }
            write!(out, ",{},{},", p.accuracy.correct, p.accuracy.answered).unwrap();
            if let Ok(r) = p.accuracy.ratio() {
                write!(out, "{r:.6}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, axis: SweepAxis, location: &str) -> Result<Self> {
        let bad = |line: usize, m: String| Error::parse(format!("{location}:{line}"), m);
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty report".into()))?;
        let columns: Vec<&str> = header.split(',').collect();
        let mode = match columns.get(1) {
            Some(&"hcc") => EvalMode::Clean,
            Some(&"fr") => EvalMode::Adversarial,
            _ => return Err(bad(1, "unrecognised header".into())),
        };
        let n = match mode {
            EvalMode::Clean => CleanBreakdown::FIELDS.len(),
            EvalMode::Adversarial => AdversarialBreakdown::FIELDS.len(),
        };
        if columns.len() != 1 + 2 * n + 3 {
            return Err(bad(
                1,
                format!("expected {} columns, found {}", 1 + 2 * n + 3, columns.len()),
            ));
        }
        let mut points = Vec::new();
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != columns.len() {
                return Err(bad(i + 1, format!("expected {} cells", columns.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(i + 1, format!("`{s}`: {e}")));
            let value = cells[0]
                .parse::<f64>()
                .map_err(|e| bad(i + 1, format!("`{}`: {e}", cells[0])))?;
            let counts = (0..n).map(|j| int(cells[1 + 2 * j])).collect::<Result<Vec<_>>>()?;
            points.push(SweepPoint {
                value,
                breakdown: Breakdown::from_counts(mode, &counts),
                accuracy: FinalAccuracy {
                    correct: int(cells[1 + 2 * n])?,
                    answered: int(cells[2 + 2 * n])?,
                },
            });
        }
        let report = SweepReport { axis, points };
        report.validate()?;
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `.csv` paths get CSV, everything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

pub fn write_report(report: &SweepReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv(),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path, format: ReportFormat, axis: SweepAxis) -> Result<SweepReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let location = path.display().to_string();
    match format {
        ReportFormat::Json => SweepReport::from_json(&text, &location),
        ReportFormat::Csv => SweepReport::from_csv(&text, axis, &location),
    }
}

#[derive(Serialize, Deserialize)]
struct ReportDoc {
    axis: SweepAxis,
    mode: EvalMode,
    points: Vec<PointDoc>,
}

#[derive(Serialize, Deserialize)]
struct PointDoc {
    value: f64,
    total: usize,
    counts: Vec<(String, usize)>,
    ratios: Vec<(String, f64)>,
    final_correct: usize,
    final_answered: usize,
    final_accuracy: Option<f64>,
}

/// Checks a list of sweep values: non-empty, finite, strictly increasing,
/// and whole numbers of at least 1 for the top-n axis.
pub fn validate_sweep_values(axis: SweepAxis, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("--values must not be empty".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidConfig("--values must be finite and non-negative".into()));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("--values must be strictly increasing".into()));
    }
    if axis == SweepAxis::TopN && values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
        return Err(Error::InvalidConfig(
            "top-n values must be whole numbers of at least 1".into(),
        ));
    }
    Ok(())
}

/// Inputs shared by every point of a sweep.
pub struct SweepInputs<'a> {
    pub records: &'a [&'a ManifestRecord],
    pub taxonomy: &'a ClassTaxonomy,
    pub model: Option<&'a SymbolModel>,
    pub backends: &'a Backends,
    pub mode: EvalMode,
    pub jobs: usize,
    pub low_only: bool,
}

/// Pairs outcomes with the records' fine labels.
pub fn labelled(records: &[&ManifestRecord], outcomes: Vec<DecisionOutcome>) -> Vec<(DecisionOutcome, ClassId)> {
    outcomes.into_iter().zip(records.iter().map(|r| r.label_fine)).collect()
}

/// Runs the decision rule once per axis value with everything else fixed.
pub fn sweep(inputs: &SweepInputs<'_>, base: &ToTConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepReport> {
    validate_sweep_values(axis, values)?;
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let mut config = base.clone();
        match axis {
            SweepAxis::Sigma => config.blur_sigma = value,
            SweepAxis::TopN => config.top_n = value as usize,
        }
        config.validate()?;
        let outcomes = decide_batch(
            inputs.records,
            inputs.taxonomy,
            inputs.model,
            inputs.backends,
            &config,
            inputs.jobs,
        )?;
        let pairs = labelled(inputs.records, outcomes);
        points.push(SweepPoint {
            value,
            breakdown: Breakdown::evaluate(inputs.mode, &pairs),
            accuracy: final_answer_counts(&pairs, inputs.low_only),
        });
    }
    Ok(SweepReport { axis, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{decide_bundle, PredictionBundle};
    use crate::domain::Prediction;
    use proptest::prelude::*;

    /// Builds an outcome with the given tier and final answer.
    fn outcome(high: bool, final_answer: Option<u32>) -> DecisionOutcome {
        let orig = final_answer.unwrap_or(99);
        let bundle = if high {
            PredictionBundle {
                p_orig: Prediction::new(ClassId(orig), 1.0),
                seconds_blur: vec![ClassId(orig)],
                seconds_noblur: vec![],
                p_third: vec![],
            }
        } else {
            PredictionBundle {
                p_orig: Prediction::new(ClassId(98), 1.0),
                seconds_blur: vec![],
                seconds_noblur: final_answer.map(ClassId).into_iter().collect(),
                p_third: final_answer.map(ClassId).into_iter().collect(),
            }
        };
        let o = decide_bundle(bundle);
        assert_eq!(o.confidence == Confidence::High, high);
        assert_eq!(o.final_answer, final_answer.map(ClassId));
        o
    }

    /// (high confidence, final answer, label)
    type Scripted = (bool, Option<u32>, u32);

    fn scripted(spec: &[Scripted]) -> Vec<(DecisionOutcome, ClassId)> {
        spec.iter().map(|&(h, f, l)| (outcome(h, f), ClassId(l))).collect()
    }

    #[test]
    fn clean_examples() {
        let all = scripted(&[(true, Some(1), 1), (true, Some(2), 2)]);
        assert_eq!(evaluate_clean(&all).ratios(), [1.0, 0.0, 0.0, 0.0, 0.0]);

        let mut spec = vec![(true, Some(1), 1); 4];
        spec.push((true, Some(1), 2));
        spec.extend([(false, Some(3), 3); 3]);
        spec.push((false, Some(3), 4));
        spec.push((false, None, 4));
        let b = evaluate_clean(&scripted(&spec));
        assert_eq!(b.counts(), [4, 1, 3, 1, 1]);
        assert_eq!(b.ratios(), [0.4, 0.1, 0.3, 0.1, 0.1]);
    }

    #[test]
    fn adversarial_examples() {
        let nulls = scripted(&[(false, None, 1), (false, None, 2)]);
        assert_eq!(evaluate_adversarial(&nulls).ratios(), [0.0, 0.0, 0.0, 1.0]);

        let mut spec = vec![(true, Some(5), 1); 2];
        spec.extend([(false, Some(1), 1); 5]);
        spec.extend([(false, Some(2), 1); 2]);
        spec.push((false, None, 1));
        let b = evaluate_adversarial(&scripted(&spec));
        assert_eq!(b.ratios(), [0.2, 0.5, 0.2, 0.1]);
        assert_eq!(b.detection_ratio(), 0.8);
    }

    #[test]
    fn final_accuracy_examples() {
        let all = scripted(&[(true, Some(1), 1), (false, Some(2), 2)]);
        assert_eq!(final_answer_accuracy(&all, false).unwrap(), 1.0);

        let mut spec = vec![(false, Some(1), 1); 3];
        spec.push((false, Some(1), 2));
        spec.extend([(false, None, 1); 6]);
        assert_eq!(final_answer_accuracy(&scripted(&spec), false).unwrap(), 0.75);

        let nulls = scripted(&[(false, None, 1)]);
        assert!(matches!(final_answer_accuracy(&nulls, false), Err(Error::NoAnswers)));

        let mixed = scripted(&[(true, Some(1), 1), (false, Some(2), 3)]);
        assert_eq!(final_answer_accuracy(&mixed, false).unwrap(), 0.5);
        assert_eq!(final_answer_accuracy(&mixed, true).unwrap(), 0.0);
    }

    fn sample_report(axis: SweepAxis, adversarial: bool) -> SweepReport {
        let breakdown = |i: usize| {
            if adversarial {
                Breakdown::Adversarial(AdversarialBreakdown {
                    fr: 3 - i,
                    acc: i,
                    acic: 1,
                    acuc: 2,
                })
            } else {
                Breakdown::Clean(CleanBreakdown {
                    hcc: 5,
                    hcic: i,
                    lcc: 2,
                    lcic: 1,
                    lcuc: 3 - i,
                })
            }
        };
        SweepReport {
            axis,
            points: (0..3)
                .map(|i| SweepPoint {
                    value: 0.5 * i as f64,
                    breakdown: breakdown(i),
                    accuracy: FinalAccuracy {
                        correct: i,
                        answered: 2,
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn csv_format_contract() {
        let mut report = sample_report(SweepAxis::Sigma, false);
        report.points.truncate(1);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "axis_value,hcc,hcc_ratio,hcic,hcic_ratio,lcc,lcc_ratio,lcic,lcic_ratio,lcuc,lcuc_ratio,final_correct,final_answered,final_accuracy"
        );
        assert_eq!(
            lines[1],
            "0,5,0.454545,0,0.000000,2,0.181818,1,0.090909,3,0.272727,0,2,0.000000"
        );
    }

    #[test]
    fn reports_round_trip() {
        for adversarial in [false, true] {
            let report = sample_report(SweepAxis::Sigma, adversarial);
            assert_eq!(SweepReport::from_json(&report.to_json(), "j").unwrap(), report);
            assert_eq!(
                SweepReport::from_csv(&report.to_csv(), SweepAxis::Sigma, "c").unwrap(),
                report
            );
        }
        let dir = tempfile::tempdir().unwrap();
        let report = sample_report(SweepAxis::TopN, true);
        for name in ["r.json", "r.csv"] {
            let path = dir.path().join(name);
            let format = ReportFormat::from_path(&path);
            write_report(&report, &path, format).unwrap();
            assert_eq!(read_report(&path, format, SweepAxis::TopN).unwrap(), report);
        }
    }

    #[test]
    fn sweep_value_checks() {
        assert!(validate_sweep_values(SweepAxis::Sigma, &[0.0, 0.5, 1.0]).is_ok());
        assert!(validate_sweep_values(SweepAxis::Sigma, &[1.0, 0.5]).is_err());
        assert!(validate_sweep_values(SweepAxis::Sigma, &[1.0, 1.0]).is_err());
        assert!(validate_sweep_values(SweepAxis::Sigma, &[]).is_err());
        assert!(validate_sweep_values(SweepAxis::TopN, &[1.0, 2.5]).is_err());
        assert!(validate_sweep_values(SweepAxis::TopN, &[0.0, 1.0]).is_err());
    }

    fn arb_outcomes() -> impl Strategy<Value = Vec<(bool, Option<u32>, u32)>> {
        prop::collection::vec((any::<bool>(), prop::option::of(0u32..4), 0u32..4), 1..60).prop_map(|v| {
            v.into_iter()
                .map(|(h, f, l)| (h, if h { Some(f.unwrap_or(0)) } else { f }, l))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn breakdowns_match_counting_oracle(spec in arb_outcomes()) {
            let pairs = scripted(&spec);
            let count = |pred: &dyn Fn(&Scripted) -> bool| spec.iter().filter(|s| pred(s)).count();
            let clean = evaluate_clean(&pairs);
            prop_assert_eq!(clean.hcc, count(&|s| s.0 && s.1 == Some(s.2)));
            prop_assert_eq!(clean.hcic, count(&|s| s.0 && s.1 != Some(s.2)));
            prop_assert_eq!(clean.lcc, count(&|s| !s.0 && s.1 == Some(s.2)));
            prop_assert_eq!(clean.lcic, count(&|s| !s.0 && s.1.is_some() && s.1 != Some(s.2)));
            prop_assert_eq!(clean.lcuc, count(&|s| !s.0 && s.1.is_none()));
            prop_assert_eq!(clean.total(), spec.len());

            let adv = evaluate_adversarial(&pairs);
            prop_assert_eq!(adv.fr, count(&|s| s.0));
            prop_assert_eq!(adv.acc, clean.lcc);
            prop_assert_eq!(adv.acic, clean.lcic);
            prop_assert_eq!(adv.acuc, clean.lcuc);
            prop_assert_eq!(adv.total(), spec.len());

            let answered = count(&|s| s.1.is_some());
            let correct = count(&|s| s.1 == Some(s.2));
            let acc = final_answer_counts(&pairs, false);
            prop_assert_eq!((acc.correct, acc.answered), (correct, answered));
        }

        #[test]
        fn accuracy_ignores_added_nulls(spec in arb_outcomes(), extra in 1usize..20) {
            let mut pairs = scripted(&spec);
            let before = final_answer_counts(&pairs, false);
            pairs.extend((0..extra).map(|_| (outcome(false, None), ClassId(0))));
            prop_assert_eq!(final_answer_counts(&pairs, false), before);
        }
    }
}
