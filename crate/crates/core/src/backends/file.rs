//! Replay of predictions and ROIs stored in the manifest.

use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;

use crate::domain::{sigma_key, BBox, ClassTaxonomy, Prediction};
use crate::error::{Error, Result};
use crate::symbolizer::FeatureMap;

use super::manifest::{ManifestRecord, Ranked};
use super::tensor::read_feature_tensor;
use super::{CropParams, Predictor, Segmenter, View};

#[derive(Debug, Default, Clone, Copy)]
pub struct FilePredictor;

fn missing(record: &ManifestRecord, what: String) -> Error {
    Error::MissingPrecomputed {
        record: record.id.clone(),
        what,
    }
}

impl Predictor for FilePredictor {
    fn predict(&self, record: &ManifestRecord, view: &View, _crop: &CropParams) -> Result<Vec<Prediction>> {
        let preds = record
            .preds
            .as_ref()
            .ok_or_else(|| missing(record, "predictions".into()))?;
        let ranked: &Ranked = match *view {
            View::Full => preds
                .orig
                .as_ref()
                .ok_or_else(|| missing(record, "original prediction".into()))?,
            View::Crop {
                roi_index,
                box_index,
                sigma,
                ..
            } => {
                let slot = roi_index * 3 + box_index;
                let (list, label) = match sigma {
                    Some(s) => {
                        let key = sigma_key(s);
                        let list = preds
                            .second_blur
                            .get(&key)
                            .ok_or_else(|| missing(record, format!("blurred second predictions for sigma={key}")))?;
                        (list, format!("blurred second prediction for sigma={key}"))
                    }
                    None => (
                        preds
                            .second_noblur
                            .as_ref()
                            .ok_or_else(|| missing(record, "unblurred second predictions".into()))?,
                        "unblurred second prediction".to_string(),
                    ),
                };
                list.get(slot)
                    .ok_or_else(|| missing(record, format!("{label} for ROI {roi_index} box {box_index}")))?
            }
        };
        Ok(ranked.predictions())
    }

    fn features(&self, record: &ManifestRecord) -> Result<Option<FeatureMap>> {
        record.features().map(|p| read_feature_tensor(&p)).transpose()
    }
}

/// Returns each record's stored ROIs regardless of the prompt. Prompts that
/// disagree with the record's stored superclass are counted.
#[derive(Debug)]
pub struct FileSegmenter {
    taxonomy: ClassTaxonomy,
    prompt_mismatches: AtomicUsize,
}

impl FileSegmenter {
    pub fn new(taxonomy: ClassTaxonomy) -> Self {
        Self {
            taxonomy,
            prompt_mismatches: AtomicUsize::new(0),
        }
    }

    pub fn prompt_mismatches(&self) -> usize {
        self.prompt_mismatches.load(Ordering::Relaxed)
    }
}

impl Segmenter for FileSegmenter {
    fn segment(&self, record: &ManifestRecord, prompt: &str) -> Result<Vec<(BBox, f64)>> {
        let stored = self.taxonomy.super_name(record.label_super);
        if stored != Some(prompt) {
            self.prompt_mismatches.fetch_add(1, Ordering::Relaxed);
            warn!(
                "record {}: prompt `{prompt}` differs from stored superclass `{}`; replaying stored ROIs",
                record.id,
                stored.unwrap_or("?")
            );
        }
        Ok(record.rois.iter().map(|&b| (b, 1.0)).collect())
    }
}
