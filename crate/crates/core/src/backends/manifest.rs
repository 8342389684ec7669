//! JSON Lines manifest of evaluation and training inputs.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{BBox, ClassId, ClassTaxonomy, Prediction, SuperId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A ranked class list, written either as a bare id array or with scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ranked {
    Classes(Vec<ClassId>),
    Scored { classes: Vec<ClassId>, scores: Vec<f64> },
}

impl Ranked {
    pub fn classes(&self) -> &[ClassId] {
        match self {
            Ranked::Classes(c) => c,
            Ranked::Scored { classes, .. } => classes,
        }
    }

    /// Predictions in rank order; bare lists get score 0.
    pub fn predictions(&self) -> Vec<Prediction> {
        match self {
            Ranked::Classes(c) => c.iter().map(|&id| Prediction::new(id, 0.0)).collect(),
            Ranked::Scored { classes, scores } => classes
                .iter()
                .zip(scores)
                .map(|(&id, &s)| Prediction::new(id, s))
                .collect(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.classes().is_empty() {
            return Err("ranked list is empty".into());
        }
        if let Ranked::Scored { classes, scores } = self {
            if classes.len() != scores.len() {
                return Err(format!("{} classes but {} scores", classes.len(), scores.len()));
            }
            if scores.windows(2).any(|w| w[0] < w[1]) {
                return Err("scores must be sorted in descending order".into());
            }
        }
        Ok(())
    }
}

/// Predictions computed offline by the extraction stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Precomputed {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orig: Option<Ranked>,
    /// Per σ key (`"1.5"`), one ranked list per crop, ROI-major then box.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub second_blur: BTreeMap<String, Vec<Ranked>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_noblur: Option<Vec<Ranked>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub label_fine: ClassId,
    pub label_super: SuperId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<String>,
    #[serde(default)]
    pub rois: Vec<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preds: Option<Precomputed>,
    #[serde(default)]
    pub adversarial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<String>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ManifestRecord {
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn image(&self) -> Option<PathBuf> {
        self.image_path.as_deref().map(|p| self.resolve(p))
    }

    pub fn features(&self) -> Option<PathBuf> {
        self.feature_path.as_deref().map(|p| self.resolve(p))
    }

    pub fn validate(&self) -> Result<()> {
        let schema = |message: String| Error::Schema {
            record: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(schema("id must not be empty".into()));
        }
        // Fitting reads only feature maps, so a train record may omit preds.
        let replayable = self.feature_path.is_some() && (self.preds.is_some() || self.split == Split::Train);
        if self.image_path.is_none() && !replayable {
            return Err(schema("needs image_path, or feature_path together with preds".into()));
        }
        for roi in &self.rois {
            roi.validate().map_err(|e| schema(e.to_string()))?;
        }
        if let Some(preds) = &self.preds {
            let lists = preds
                .orig
                .iter()
                .chain(preds.second_blur.values().flatten())
                .chain(preds.second_noblur.iter().flatten());
            for ranked in lists {
                ranked.validate().map_err(schema)?;
            }
            for key in preds.second_blur.keys() {
                #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
                if key.parse::<f64>().map_or(true, |s| !(s >= 0.0)) {
                    return Err(schema(format!("second_blur key `{key}` is not a nonnegative sigma")));
                }
            }
        }
        Ok(())
    }

    /// Checks labels and every stored class id against a taxonomy.
    pub fn validate_labels(&self, taxonomy: &ClassTaxonomy) -> Result<()> {
        let schema = |message: String| Error::Schema {
            record: self.id.clone(),
            message,
        };
        let sup = taxonomy
            .superclass_of(self.label_fine)
            .map_err(|e| schema(e.to_string()))?;
        if sup != self.label_super {
            return Err(schema(format!(
                "label_super {} does not match the taxonomy superclass {} of fine class {}",
                self.label_super.0, sup.0, self.label_fine.0
            )));
        }
        if let Some(preds) = &self.preds {
            let ids = preds
                .orig
                .iter()
                .chain(preds.second_blur.values().flatten())
                .chain(preds.second_noblur.iter().flatten())
                .flat_map(|r| r.classes().iter().copied());
            for id in ids {
                taxonomy.check(id).map_err(|e| schema(e.to_string()))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    /// Free-form metadata from a leading `{"meta": ...}` line.
    pub meta: Option<serde_json::Value>,
    pub records: Vec<ManifestRecord>,
}

#[derive(Deserialize, Serialize)]
struct MetaLine {
    meta: serde_json::Value,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path, location: &str) -> Result<Self> {
        let mut manifest = Manifest::default();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let at = format!("{location}:{}", lineno + 1);
            let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::parse(&at, e.to_string()))?;
            if value.get("meta").is_some() && value.get("id").is_none() {
                if manifest.meta.is_some() || !manifest.records.is_empty() {
                    return Err(Error::parse(&at, "metadata must be the first line"));
                }
                let meta: MetaLine = serde_json::from_value(value).map_err(|e| Error::parse(&at, e.to_string()))?;
                manifest.meta = Some(meta.meta);
                continue;
            }
            let id_hint = value
                .get("id")
                .and_then(|v| v.as_str())
                .unwrap_or("<unknown>")
                .to_string();
            let mut record: ManifestRecord = serde_json::from_value(value).map_err(|e| Error::Schema {
                record: id_hint,
                message: format!("{at}: {e}"),
            })?;
            record.base_dir = base_dir.to_path_buf();
            record.validate()?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::Schema {
                    record: record.id,
                    message: format!("{at}: duplicate id"),
                });
            }
            manifest.records.push(record);
        }
        Ok(manifest)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(meta) = &self.meta {
            out.push_str(&serde_json::to_string(&MetaLine { meta: meta.clone() }).expect("serializable"));
            out.push('\n');
        }
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn validate_labels(&self, taxonomy: &ClassTaxonomy) -> Result<()> {
        self.records.iter().try_for_each(|r| r.validate_labels(taxonomy))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::parse(&text, &base, &path.display().to_string())
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(manifest.to_jsonl().as_bytes())
        .map_err(|e| Error::io(path, e))
}
