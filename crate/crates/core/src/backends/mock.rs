//! Scripted in-process backend for tests and what-if scenarios.
//!
//! A scenario is JSON:
//!
//! ```json
//! {
//!   "default": { "rois": [[0, 0, 32, 32]], "noblur": [4] },
//!   "records": {
//!     "img7": {
//!       "orig": [2, 4],
//!       "blur": { "0.0": [2], ">=1.5": [4] },
//!       "third": [4, 2]
//!     }
//!   }
//! }
//! ```
//!
//! Per record, a field falls back to `default` when absent. `blur` is keyed by
//! σ: an exact key (`"1.5"`) wins, then the largest `">=x"` threshold not above
//! σ, then `"*"`. Crop answers are either one ranked list for every crop or a
//! list of ranked lists indexed ROI-major, box-minor.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{sigma_key, BBox, ClassId, ClassTaxonomy, Prediction};
use crate::error::{Error, Result};
use crate::symbolizer::FeatureMap;

use super::manifest::{ManifestRecord, Ranked};
use super::{CropParams, Predictor, Segmenter, View};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CropScript {
    PerCrop(Vec<Ranked>),
    All(Ranked),
}

impl CropScript {
    fn get(&self, slot: usize) -> Option<&Ranked> {
        match self {
            CropScript::All(r) => Some(r),
            CropScript::PerCrop(list) => list.get(slot),
        }
    }

    fn rankings(&self) -> Vec<&Ranked> {
        match self {
            CropScript::All(r) => vec![r],
            CropScript::PerCrop(list) => list.iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orig: Option<Ranked>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rois: Option<Vec<BBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur: Option<BTreeMap<String, CropScript>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noblur: Option<CropScript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub third: Option<Vec<ClassId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<InlineTensor>,
    /// Makes every query for this record fail with a backend error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScenario {
    #[serde(default)]
    pub default: RecordScript,
    #[serde(default)]
    pub records: BTreeMap<String, RecordScript>,
}

enum SigmaKey {
    Exact(f64),
    AtLeast(f64),
    Any,
}

fn parse_sigma_key(key: &str) -> Option<SigmaKey> {
    if key == "*" {
        Some(SigmaKey::Any)
    } else if let Some(rest) = key.strip_prefix(">=") {
        rest.trim().parse().ok().map(SigmaKey::AtLeast)
    } else {
        key.parse().ok().map(SigmaKey::Exact)
    }
}

fn lookup_sigma(table: &BTreeMap<String, CropScript>, sigma: f64) -> Option<&CropScript> {
    if let Some(hit) = table.get(&sigma_key(sigma)) {
        return Some(hit);
    }
    let mut best: Option<(f64, &CropScript)> = None;
    let mut any = None;
    for (key, script) in table {
        match parse_sigma_key(key) {
            Some(SigmaKey::Exact(s)) if s == sigma => return Some(script),
            Some(SigmaKey::AtLeast(t)) if t <= sigma && best.is_none_or(|(b, _)| t > b) => {
                best = Some((t, script));
            }
            Some(SigmaKey::Any) => any = Some(script),
            _ => {}
        }
    }
    best.map(|(_, s)| s).or(any)
}

impl MockScenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }

    pub fn script(&self, id: &str) -> Option<&RecordScript> {
        self.records.get(id)
    }

    fn field<'a, T>(&'a self, id: &str, pick: impl Fn(&'a RecordScript) -> Option<&'a T>) -> Option<&'a T> {
        self.records.get(id).and_then(&pick).or_else(|| pick(&self.default))
    }

    fn check_failure(&self, record: &ManifestRecord) -> Result<()> {
        match self.field(&record.id, |s| s.fail.as_ref()) {
            Some(message) => Err(Error::Backend {
                message: format!("record {}: {message}", record.id),
                raw: None,
            }),
            None => Ok(()),
        }
    }

    /// Every scripted class id must exist in the taxonomy.
    pub fn validate(&self, taxonomy: &ClassTaxonomy) -> Result<()> {
        for (name, script) in
            std::iter::once(("default", &self.default)).chain(self.records.iter().map(|(k, v)| (k.as_str(), v)))
        {
            let mut ids: Vec<ClassId> = Vec::new();
            ids.extend(script.orig.iter().flat_map(|r| r.classes().iter().copied()));
            for crop in script.blur.iter().flat_map(|m| m.values()).chain(script.noblur.iter()) {
                ids.extend(crop.rankings().into_iter().flat_map(|r| r.classes().iter().copied()));
            }
            ids.extend(script.third.iter().flatten().copied());
            for id in ids {
                taxonomy
                    .check(id)
                    .map_err(|e| Error::Validation(format!("mock scenario entry `{name}`: {e}")))?;
            }
            if let Some(keys) = &script.blur {
                for key in keys.keys() {
                    if parse_sigma_key(key).is_none() {
                        return Err(Error::Validation(format!(
                            "mock scenario entry `{name}`: bad sigma key `{key}`"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl Predictor for MockScenario {
    fn predict(&self, record: &ManifestRecord, view: &View, _crop: &CropParams) -> Result<Vec<Prediction>> {
        self.check_failure(record)?;
        let missing = |what: String| Error::MissingPrecomputed {
            record: record.id.clone(),
            what: format!("mock {what}"),
        };
        let ranked = match *view {
            View::Full => self
                .field(&record.id, |s| s.orig.as_ref())
                .ok_or_else(|| missing("original prediction".into()))?,
            View::Crop {
                roi_index,
                box_index,
                sigma,
                ..
            } => {
                let slot = roi_index * 3 + box_index;
                let script = match sigma {
                    Some(s) => {
                        let records_hit = self
                            .records
                            .get(&record.id)
                            .and_then(|r| r.blur.as_ref())
                            .and_then(|t| lookup_sigma(t, s));
                        records_hit
                            .or_else(|| self.default.blur.as_ref().and_then(|t| lookup_sigma(t, s)))
                            .ok_or_else(|| missing(format!("blurred second prediction for sigma={}", sigma_key(s))))?
                    }
                    None => self
                        .field(&record.id, |s| s.noblur.as_ref())
                        .ok_or_else(|| missing("unblurred second prediction".into()))?,
                };
                script
                    .get(slot)
                    .ok_or_else(|| missing(format!("second prediction for ROI {roi_index} box {box_index}")))?
            }
        };
        Ok(ranked.predictions())
    }

    fn features(&self, record: &ManifestRecord) -> Result<Option<FeatureMap>> {
        self.check_failure(record)?;
        self.field(&record.id, |s| s.features.as_ref())
            .map(|t| FeatureMap::new(t.channels, t.height, t.width, t.values.clone()))
            .transpose()
    }

    fn scripted_third(&self, record: &ManifestRecord) -> Option<Vec<ClassId>> {
        self.field(&record.id, |s| s.third.as_ref()).cloned()
    }
}

impl Segmenter for MockScenario {
    fn segment(&self, record: &ManifestRecord, _prompt: &str) -> Result<Vec<(BBox, f64)>> {
        self.check_failure(record)?;
        Ok(self
            .field(&record.id, |s| s.rois.as_ref())
            .map(|rois| rois.iter().map(|&b| (b, 1.0)).collect())
            .unwrap_or_default())
    }
}
