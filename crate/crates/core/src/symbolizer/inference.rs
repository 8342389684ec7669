//! From symbols to class rankings: correlation counts, per-symbol softmax,
//! averaging and ranking.

use serde::{Deserialize, Serialize};

use crate::domain::ClassId;
use crate::error::{Error, Result};

/// Cluster indices of one input's pooled rows, in cell order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymbolVector(pub Vec<u32>);

impl SymbolVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `k x cn` co-occurrence counts of symbols and training labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrelationMap {
    k: usize,
    classes: usize,
    counts: Vec<u32>,
}

impl CorrelationMap {
    pub fn zeros(k: usize, classes: usize) -> Self {
        Self {
            k,
            classes,
            counts: vec![0; k * classes],
        }
    }

    pub fn from_counts(k: usize, classes: usize, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != k * classes {
            return Err(Error::DimensionMismatch {
                expected: k * classes,
                found: counts.len(),
            });
        }
        Ok(Self { k, classes, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, symbol: usize, class: usize) -> u32 {
        self.counts[symbol * self.classes + class]
    }

    pub fn row(&self, symbol: usize) -> &[u32] {
        &self.counts[symbol * self.classes..(symbol + 1) * self.classes]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn column_sum(&self, class: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, class) as u64).sum()
    }

    pub fn record(&mut self, symbol: u32, label: ClassId) -> Result<()> {
        let (i, j) = (symbol as usize, label.index());
        if i >= self.k {
            return Err(Error::Validation(format!(
                "symbol {symbol} is not below k = {}",
                self.k
            )));
        }
        if j >= self.classes {
            return Err(Error::UnknownClass(label.0));
        }
        self.counts[i * self.classes + j] += 1;
        Ok(())
    }
}

pub fn build_correlation_map(
    assignments: &[(SymbolVector, ClassId)],
    k: usize,
    classes: usize,
) -> Result<CorrelationMap> {
    let mut cm = CorrelationMap::zeros(k, classes);
    for (symbols, label) in assignments {
        for &s in &symbols.0 {
            cm.record(s, *label)?;
        }
    }
    Ok(cm)
}

/// Softmax of one correlation row, shifted by its maximum so large counts
/// cannot overflow.
pub fn softmax_row(counts: &[u32]) -> Vec<f64> {
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    let exps: Vec<f64> = counts.iter().map(|&c| (c as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean of the per-symbol softmax rows, divided by the number of symbols
/// actually present.
pub fn class_probabilities(symbols: &SymbolVector, cm: &CorrelationMap) -> Result<Vec<f64>> {
    if symbols.is_empty() {
        return Err(Error::EmptySymbols);
    }
    let mut p = vec![0.0f64; cm.num_classes()];
    for &s in &symbols.0 {
        if s as usize >= cm.k() {
            return Err(Error::Validation(format!("symbol {s} is not below k = {}", cm.k())));
        }
        for (acc, v) in p.iter_mut().zip(softmax_row(cm.row(s as usize))) {
            *acc += v;
        }
    }
    let count = symbols.len() as f64;
    for v in &mut p {
        *v /= count;
    }
    Ok(p)
}

/// First `min(n, cn)` classes by descending probability; ties go to the
/// lower class id.
pub fn top_predictions(p: &[f64], n: usize) -> Vec<ClassId> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order.into_iter().take(n).map(|i| ClassId(i as u32)).collect()
}
