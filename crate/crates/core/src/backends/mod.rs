//! Sources of predictions, feature maps and ROIs.
//!
//! The engine never runs a model itself. Everything learned arrives through
//! a [`Predictor`] and a [`Segmenter`], which are backed by precomputed
//! manifest fields ([`file`]), scripted scenarios ([`mock`]) or an external
//! process speaking newline-delimited JSON ([`exec`]).

pub mod exec;
pub mod file;
pub mod manifest;
pub mod mock;
pub mod tensor;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use crate::domain::{BBox, ClassId, ClassTaxonomy, Prediction};
use crate::error::{Error, Result};
use crate::symbolizer::FeatureMap;

pub use manifest::{load_manifest, write_manifest, Manifest, ManifestRecord, Precomputed, Ranked, Split};
pub use tensor::{read_feature_tensor, write_feature_tensor};

/// Which view of a record a prediction is requested for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum View {
    /// The whole input image.
    Full,
    /// Expanded box `box_index` (0..3) of ROI `roi_index`, optionally blurred.
    Crop {
        roi_index: usize,
        roi: BBox,
        box_index: usize,
        sigma: Option<f64>,
    },
}

/// Crop-level parameters an image-handling backend needs to build a view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropParams {
    pub delta: u32,
    pub target: (u32, u32),
}

pub trait Predictor: Send + Sync {
    /// Ranked predictions, best first.
    fn predict(&self, record: &ManifestRecord, view: &View, crop: &CropParams) -> Result<Vec<Prediction>>;

    /// Full-image hidden features, or `None` when this backend cannot supply them.
    fn features(&self, record: &ManifestRecord) -> Result<Option<FeatureMap>>;

    /// Third predictions supplied directly instead of derived from features.
    fn scripted_third(&self, _record: &ManifestRecord) -> Option<Vec<ClassId>> {
        None
    }
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, record: &ManifestRecord, prompt: &str) -> Result<Vec<(BBox, f64)>>;
}

#[derive(Clone)]
pub struct Backends {
    pub predictor: Arc<dyn Predictor>,
    pub segmenter: Arc<dyn Segmenter>,
}

impl Backends {
    pub fn new(predictor: Arc<dyn Predictor>, segmenter: Arc<dyn Segmenter>) -> Self {
        Self { predictor, segmenter }
    }
}

/// Parsed `--backend` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    File,
    Mock(PathBuf),
    Exec(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "file" {
            Ok(BackendSpec::File)
        } else if let Some(path) = s.strip_prefix("mock:") {
            if path.is_empty() {
                return Err(Error::InvalidConfig("mock backend needs a scenario path".into()));
            }
            Ok(BackendSpec::Mock(PathBuf::from(path)))
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            if cmd.trim().is_empty() {
                return Err(Error::InvalidConfig("exec backend needs a command line".into()));
            }
            Ok(BackendSpec::Exec(cmd.to_string()))
        } else {
            Err(Error::InvalidConfig(format!(
                "unknown backend `{s}` (expected file, mock:<scenario.json> or exec:<command>)"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OpenOptions {
    pub connections: usize,
    pub timeout: Duration,
}

impl Default for OpenOptions {
    fn default() -> Self {
        Self {
            connections: 1,
            timeout: exec::DEFAULT_TIMEOUT,
        }
    }
}

pub fn open(spec: &BackendSpec, taxonomy: &ClassTaxonomy, options: OpenOptions) -> Result<Backends> {
    match spec {
        BackendSpec::File => Ok(Backends::new(
            Arc::new(file::FilePredictor),
            Arc::new(file::FileSegmenter::new(taxonomy.clone())),
        )),
        BackendSpec::Mock(path) => {
            let scenario = Arc::new(mock::MockScenario::load(path)?);
            scenario.validate(taxonomy)?;
            Ok(Backends::new(scenario.clone(), scenario))
        }
        BackendSpec::Exec(cmd) => {
            let backend = Arc::new(exec::ExecBackend::spawn(cmd, options.connections, options.timeout)?);
            Ok(Backends::new(backend.clone(), backend))
        }
    }
}
