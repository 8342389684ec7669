//! The two-stage decision rule.
//!
//! Stage 1 certifies the original prediction when a blurred ROI crop agrees
//! with it. Otherwise stage 2 scans the third predictions in rank order and
//! answers with the first one that is consistent with the original or any
//! second prediction, abstaining (`Null`) when none is.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{Backends, CropParams, ManifestRecord, View};
use crate::domain::{BBox, ClassId, ClassTaxonomy, Prediction, ToTConfig};
use crate::error::{Error, Result};
use crate::symbolizer::SymbolModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Low,
}

/// Which test produced the final answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// The original prediction appears among the blurred second predictions.
    SecondAgrees,
    /// A third-prediction candidate lies in the consistency set.
    ThirdConsistent,
    /// No third-prediction candidate lies in the consistency set.
    NoConsensus,
}

/// Everything the rule looks at for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub p_orig: Prediction,
    /// Top-1 class of each blurred crop, ROI-major then box-minor.
    pub seconds_blur: Vec<ClassId>,
    /// Top-1 class of each unblurred crop, same order.
    pub seconds_noblur: Vec<ClassId>,
    /// Ranked third predictions, best first.
    pub p_third: Vec<ClassId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionOutcome {
    pub confidence: Confidence,
    pub final_answer: Option<ClassId>,
    pub rule: Rule,
    /// 1-based rank of the accepted third prediction.
    pub matched_rank: Option<usize>,
    pub bundle: PredictionBundle,
}

pub fn stage1_confidence(p_orig: ClassId, seconds_blur: &[ClassId]) -> Confidence {
    if seconds_blur.contains(&p_orig) {
        Confidence::High
    } else {
        Confidence::Low
    }
}

/// The consistency set: the original class plus every second prediction.
pub fn consistency_set(p_orig: ClassId, seconds_blur: &[ClassId], seconds_noblur: &[ClassId]) -> BTreeSet<ClassId> {
    std::iter::once(p_orig)
        .chain(seconds_blur.iter().copied())
        .chain(seconds_noblur.iter().copied())
        .collect()
}

/// Index of the first third prediction contained in the consistency set.
pub fn stage2_match(
    p_orig: ClassId,
    seconds_blur: &[ClassId],
    seconds_noblur: &[ClassId],
    p_third: &[ClassId],
) -> Option<usize> {
    let r = consistency_set(p_orig, seconds_blur, seconds_noblur);
    p_third.iter().position(|c| r.contains(c))
}

pub fn stage2_final(
    p_orig: ClassId,
    seconds_blur: &[ClassId],
    seconds_noblur: &[ClassId],
    p_third: &[ClassId],
) -> Option<ClassId> {
    stage2_match(p_orig, seconds_blur, seconds_noblur, p_third).map(|i| p_third[i])
}

/// Applies both stages to an assembled bundle.
pub fn decide_bundle(bundle: PredictionBundle) -> DecisionOutcome {
    let orig = bundle.p_orig.class_id;
    match stage1_confidence(orig, &bundle.seconds_blur) {
        Confidence::High => DecisionOutcome {
            confidence: Confidence::High,
            final_answer: Some(orig),
            rule: Rule::SecondAgrees,
            matched_rank: None,
            bundle,
        },
        Confidence::Low => {
            let hit = stage2_match(orig, &bundle.seconds_blur, &bundle.seconds_noblur, &bundle.p_third);
            DecisionOutcome {
                confidence: Confidence::Low,
                final_answer: hit.map(|i| bundle.p_third[i]),
                rule: if hit.is_some() {
                    Rule::ThirdConsistent
                } else {
                    Rule::NoConsensus
                },
                matched_rank: hit.map(|i| i + 1),
                bundle,
            }
        }
    }
}

fn top1(record: &ManifestRecord, preds: Vec<Prediction>, taxonomy: &ClassTaxonomy, what: &str) -> Result<Prediction> {
    let first = preds
        .into_iter()
        .next()
        .ok_or_else(|| Error::backend(format!("record {}: empty ranking for {what}", record.id)))?;
    taxonomy.check(first.class_id)?;
    Ok(first)
}

fn third_predictions(
    record: &ManifestRecord,
    model: Option<&SymbolModel>,
    backends: &Backends,
    top_n: usize,
    needed: bool,
) -> Result<Vec<ClassId>> {
    if let Some(mut scripted) = backends.predictor.scripted_third(record) {
        scripted.truncate(top_n);
        return Ok(scripted);
    }
    let unavailable = || -> Result<Vec<ClassId>> {
        if needed {
            Err(Error::MissingFeature(record.id.clone()))
        } else {
            Ok(Vec::new())
        }
    };
    let Some(model) = model else {
        return unavailable();
    };
    let Some(fm) = backends.predictor.features(record)? else {
        return unavailable();
    };
    match model.third_predictions(&fm, top_n) {
        Err(Error::AllQuiescent) => {
            warn!(
                "record {}: every pooled feature row is quiescent; no third prediction",
                record.id
            );
            Ok(Vec::new())
        }
        other => other,
    }
}

/// Runs the full pipeline on one record: original prediction, segmentation
/// prompted with its superclass, blurred and unblurred crop predictions,
/// third predictions from features, then the rule.
///
/// Third predictions are computed for every record when features are
/// available so the trace is complete; they are only required for
/// low-confidence records.
pub fn decide(
    record: &ManifestRecord,
    taxonomy: &ClassTaxonomy,
    model: Option<&SymbolModel>,
    backends: &Backends,
    config: &ToTConfig,
) -> Result<DecisionOutcome> {
    let crop = CropParams {
        delta: config.delta,
        target: config.resize_target,
    };
    let p_orig = top1(
        record,
        backends.predictor.predict(record, &View::Full, &crop)?,
        taxonomy,
        "the original prediction",
    )?;
    let prompt = taxonomy.prompt_for(p_orig.class_id)?;
    let rois: Vec<BBox> = backends
        .segmenter
        .segment(record, prompt)?
        .into_iter()
        .map(|(b, _)| b.validate())
        .collect::<Result<_>>()?;

    let mut seconds_blur = Vec::with_capacity(rois.len() * 3);
    let mut seconds_noblur = Vec::with_capacity(rois.len() * 3);
    for (roi_index, &roi) in rois.iter().enumerate() {
        for box_index in 0..3 {
            for (sigma, out) in [
                (Some(config.blur_sigma), &mut seconds_blur),
                (None, &mut seconds_noblur),
            ] {
                let view = View::Crop {
                    roi_index,
                    roi,
                    box_index,
                    sigma,
                };
                let preds = backends.predictor.predict(record, &view, &crop)?;
                out.push(top1(record, preds, taxonomy, "a second prediction")?.class_id);
            }
        }
    }

    let needed = stage1_confidence(p_orig.class_id, &seconds_blur) == Confidence::Low;
    let p_third = third_predictions(record, model, backends, config.top_n, needed)?;
    for &c in &p_third {
        taxonomy.check(c)?;
    }
    let outcome = decide_bundle(PredictionBundle {
        p_orig,
        seconds_blur,
        seconds_noblur,
        p_third,
    });
    debug!(
        "record {}: {:?} final={:?} via {:?}",
        record.id, outcome.confidence, outcome.final_answer, outcome.rule
    );
    Ok(outcome)
}

/// Runs [`decide`] over `records` on `jobs` worker threads. Results are in
/// input order; on failure the error of the earliest failing record is
/// returned.
pub fn decide_batch(
    records: &[&ManifestRecord],
    taxonomy: &ClassTaxonomy,
    model: Option<&SymbolModel>,
    backends: &Backends,
    config: &ToTConfig,
    jobs: usize,
) -> Result<Vec<DecisionOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {jobs} workers: {e}")))?;
    let results: Vec<Result<DecisionOutcome>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                decide(r, taxonomy, model, backends, config).map_err(|e| Error::Record {
                    id: r.id.clone(),
                    source: Box::new(e),
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

/// One line of a decisions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub id: String,
    pub confidence: Confidence,
    #[serde(rename = "final")]
    pub final_answer: Option<ClassId>,
    pub p_orig: ClassId,
    pub seconds_blur: Vec<ClassId>,
    pub seconds_noblur: Vec<ClassId>,
    pub p_third: Vec<ClassId>,
    pub sigma: f64,
    pub top_n: usize,
    pub rule: Rule,
}

impl DecisionRecord {
    pub fn new(id: &str, outcome: &DecisionOutcome, config: &ToTConfig) -> Self {
        Self {
            id: id.to_string(),
            confidence: outcome.confidence,
            final_answer: outcome.final_answer,
            p_orig: outcome.bundle.p_orig.class_id,
            seconds_blur: outcome.bundle.seconds_blur.clone(),
            seconds_noblur: outcome.bundle.seconds_noblur.clone(),
            p_third: outcome.bundle.p_third.clone(),
            sigma: config.blur_sigma,
            top_n: config.top_n,
            rule: outcome.rule,
        }
    }

    /// Rebuilds the outcome (scores are not stored, so they read back as 0).
    pub fn outcome(&self) -> DecisionOutcome {
        let matched_rank = match self.rule {
            Rule::ThirdConsistent => self
                .final_answer
                .and_then(|f| self.p_third.iter().position(|&c| c == f))
                .map(|i| i + 1),
            _ => None,
        };
        DecisionOutcome {
            confidence: self.confidence,
            final_answer: self.final_answer,
            rule: self.rule,
            matched_rank,
            bundle: PredictionBundle {
                p_orig: Prediction::new(self.p_orig, 0.0),
                seconds_blur: self.seconds_blur.clone(),
                seconds_noblur: self.seconds_noblur.clone(),
                p_third: self.p_third.clone(),
            },
        }
    }
}

pub fn write_decisions(records: &[DecisionRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("decision records serialize");
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))
        })
        .collect()
}
