use std::io::Write;
use std::path::Path;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ClassId, ClassTaxonomy, ReducerKind, ToTConfig};
use crate::error::{Error, Result};

use super::inference::{build_correlation_map, class_probabilities, top_predictions, CorrelationMap, SymbolVector};
use super::kmeans::fit_clusters;
use super::matrix::{nearest_centroid, Matrix};
use super::pool::{coarse_pool, FeatureArray, FeatureMap};
use super::reducer::{fit_reducer, EmbeddingReducer, IdentityReducer, PcaReducer};
use super::table::{build_feature_table, fit_standardization, is_quiescent, remove_quiescent, Standardization};

pub const MODEL_MAGIC: &[u8; 4] = b"TOTM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub examples: usize,
    pub rows_total: usize,
    pub rows_kept: usize,
    pub rows_removed: usize,
    pub objective: f64,
    pub iterations: usize,
}

/// Everything needed to turn a feature map into ranked third predictions.
#[derive(Debug, Clone)]
pub struct SymbolModel {
    pub config: ToTConfig,
    pub column_means: Vec<f64>,
    pub standardization: Standardization,
    pub reducer: Box<dyn EmbeddingReducer>,
    pub centroids: Matrix,
    pub cm: CorrelationMap,
    pub taxonomy: ClassTaxonomy,
    pub summary: FitSummary,
}

/// Pools feature maps in parallel, keeping input order.
pub fn pool_all(maps: &[(FeatureMap, ClassId)]) -> Result<Vec<(FeatureArray, ClassId)>> {
    maps.par_iter()
        .map(|(fm, label)| Ok((coarse_pool(fm)?, *label)))
        .collect()
}

pub fn fit(training: &[(FeatureArray, ClassId)], taxonomy: &ClassTaxonomy, config: &ToTConfig) -> Result<SymbolModel> {
    config.validate()?;
    let mut present = vec![false; taxonomy.num_classes()];
    for (_, label) in training {
        taxonomy.check(*label)?;
        present[label.index()] = true;
    }
    let missing = present.iter().filter(|p| !**p).count();
    if missing > 0 {
        warn!("{missing} classes have no training examples");
    }

    let table = build_feature_table(training)?;
    let (kept, column_means) = remove_quiescent(&table)?;
    debug!("{} of {} rows survive quiescence filtering", kept.len(), table.len());
    let standardization = fit_standardization(&kept.rows, config.per_column_standardize)?;
    let standardized = standardization.apply(&kept.rows);
    let reducer = fit_reducer(&standardized, config.reducer, config.reducer_dim, config.seed)?;
    let reduced = reducer.transform(&standardized)?;
    let clusters = fit_clusters(&reduced, config.k, config.seed)?;

    let mut per_example: Vec<(SymbolVector, ClassId)> = training
        .iter()
        .map(|(_, label)| (SymbolVector(Vec::new()), *label))
        .collect();
    for (origin, &cluster) in kept.origins.iter().zip(&clusters.assignments) {
        per_example[origin.example].0 .0.push(cluster as u32);
    }
    let cm = build_correlation_map(&per_example, config.k, taxonomy.num_classes())?;

    Ok(SymbolModel {
        config: config.clone(),
        column_means,
        standardization,
        reducer,
        centroids: clusters.centroids,
        cm,
        taxonomy: taxonomy.clone(),
        summary: FitSummary {
            examples: training.len(),
            rows_total: table.len(),
            rows_kept: kept.len(),
            rows_removed: table.len() - kept.len(),
            objective: clusters.objective,
            iterations: clusters.iterations,
        },
    })
}

impl SymbolModel {
    pub fn feature_width(&self) -> usize {
        self.column_means.len()
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// Quiescence filter, standardization, reduction and nearest-centroid
    /// lookup with the fitted parameters.
    pub fn assign_symbols(&self, input: &FeatureArray) -> Result<SymbolVector> {
        if input.width() != self.feature_width() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_width(),
                found: input.width(),
            });
        }
        let keep: Vec<usize> = (0..input.len())
            .filter(|&i| !is_quiescent(input.rows().row(i), &self.column_means))
            .collect();
        if keep.is_empty() {
            return Err(Error::AllQuiescent);
        }
        let rows = self.standardization.apply(&input.rows().select_rows(&keep));
        let reduced = self.reducer.transform(&rows)?;
        Ok(SymbolVector(
            reduced
                .iter_rows()
                .map(|r| nearest_centroid(r, &self.centroids).0 as u32)
                .collect(),
        ))
    }

    pub fn probabilities(&self, input: &FeatureArray) -> Result<Vec<f64>> {
        class_probabilities(&self.assign_symbols(input)?, &self.cm)
    }

    /// Ranked third predictions for a full-image feature map.
    pub fn third_predictions(&self, fm: &FeatureMap, top_n: usize) -> Result<Vec<ClassId>> {
        let p = self.probabilities(&coarse_pool(fm)?)?;
        Ok(top_predictions(&p, top_n))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    config: ToTConfig,
    taxonomy: String,
    dims: ModelDims,
    summary: FitSummary,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct ModelDims {
    features: usize,
    reduced: usize,
    k: usize,
    classes: usize,
    standardization: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

fn expected_arrays(kind: ReducerKind, dims: &ModelDims) -> Vec<ArrayEntry> {
    let entry = |name: &str, len: usize| ArrayEntry {
        name: name.to_string(),
        len,
    };
    let mut arrays = vec![
        entry("column_means", dims.features),
        entry("mu", dims.standardization),
        entry("sigma_std", dims.standardization),
    ];
    if kind == ReducerKind::Pca {
        arrays.push(entry("reducer_mean", dims.features));
        arrays.push(entry("reducer_components", dims.reduced * dims.features));
    }
    arrays.push(entry("centroids", dims.k * dims.reduced));
    arrays
}

impl SymbolModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dims = ModelDims {
            features: self.feature_width(),
            reduced: self.reducer.output_dim(),
            k: self.k(),
            classes: self.taxonomy.num_classes(),
            standardization: self.standardization.mu.len(),
        };
        let mut payload: Vec<(&str, &[f64])> = vec![
            ("column_means", &self.column_means),
            ("mu", &self.standardization.mu),
            ("sigma_std", &self.standardization.sigma),
        ];
        payload.extend(self.reducer.arrays());
        payload.push(("centroids", self.centroids.as_slice()));
        let header = ModelHeader {
            config: self.config.clone(),
            taxonomy: self.taxonomy.to_text(),
            dims,
            summary: self.summary.clone(),
            arrays: payload
                .iter()
                .map(|(name, data)| ArrayEntry {
                    name: name.to_string(),
                    len: data.len(),
                })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header).map_err(|e| Error::Validation(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for (_, data) in &payload {
            for v in *data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for c in self.cm.counts() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], location: &str) -> Result<Self> {
        let mut cursor = Cursor {
            bytes,
            pos: 0,
            location,
        };
        if cursor.take(4)? != MODEL_MAGIC {
            return Err(Error::parse(location, "missing TOTM magic"));
        }
        let version = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                expected: MODEL_VERSION,
                found: version,
            });
        }
        let header_len = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
        let header: ModelHeader = serde_json::from_slice(cursor.take(header_len)?)
            .map_err(|e| Error::parse(location, format!("bad model header: {e}")))?;
        header.config.validate()?;
        let taxonomy = ClassTaxonomy::parse(&header.taxonomy, location)?;
        let dims = header.dims;
        if dims.classes != taxonomy.num_classes() {
            return Err(Error::Validation(format!(
                "header declares {} classes but the taxonomy has {}",
                dims.classes,
                taxonomy.num_classes()
            )));
        }
        if dims.k != header.config.k {
            return Err(Error::Validation(format!(
                "header k = {} disagrees with config k = {}",
                dims.k, header.config.k
            )));
        }
        if dims.standardization != 1 && dims.standardization != dims.features {
            return Err(Error::Validation(
                "standardization length must be 1 or the feature width".into(),
            ));
        }
        if header.config.reducer == ReducerKind::Identity && dims.reduced != dims.features {
            return Err(Error::Validation("identity reducer must keep the feature width".into()));
        }
        let expected = expected_arrays(header.config.reducer, &dims);
        if header.arrays != expected {
            return Err(Error::Validation(format!(
                "array manifest {:?} does not match the declared dimensions (expected {:?})",
                header.arrays, expected
            )));
        }

        let mut arrays = Vec::with_capacity(expected.len());
        for entry in &expected {
            let raw = cursor.take(entry.len * 8)?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(pos));
            }
            arrays.push(values);
        }
        let cm_raw = cursor.take(dims.k * dims.classes * 4)?;
        let counts = cm_raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if cursor.pos != bytes.len() {
            return Err(Error::parse(
                location,
                format!("{} trailing bytes after the correlation map", bytes.len() - cursor.pos),
            ));
        }

        let mut arrays = arrays.into_iter();
        let column_means = arrays.next().unwrap();
        let mu = arrays.next().unwrap();
        let sigma = arrays.next().unwrap();
        if sigma.iter().any(|s| *s <= 0.0) {
            return Err(Error::Validation("sigma_std must be positive".into()));
        }
        let reducer: Box<dyn EmbeddingReducer> = match header.config.reducer {
            ReducerKind::Pca => {
                let mean = arrays.next().unwrap();
                let components = Matrix::from_vec(dims.reduced, dims.features, arrays.next().unwrap())?;
                Box::new(PcaReducer::from_parts(mean, components)?)
            }
            ReducerKind::Identity => Box::new(IdentityReducer::new(dims.features)),
        };
        let centroids = Matrix::from_vec(dims.k, dims.reduced, arrays.next().unwrap())?;
        Ok(SymbolModel {
            config: header.config,
            column_means,
            standardization: Standardization { mu, sigma },
            reducer,
            centroids,
            cm: CorrelationMap::from_counts(dims.k, dims.classes, counts)?,
            taxonomy,
            summary: header.summary,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    location: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::parse(
                    self.location,
                    format!("truncated: needed {len} bytes at offset {}", self.pos),
                )
            })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
}

pub fn save_model(model: &SymbolModel, path: &Path) -> Result<()> {
    let bytes = model.to_bytes()?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SymbolModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    SymbolModel::from_bytes(&bytes, &path.display().to_string())
}
