//! Third predictions from hidden features: pooling, table assembly,
//! quiescence filtering, standardization, reduction, clustering and the
//! symbol/class correlation map.

pub mod inference;
pub mod kmeans;
pub mod matrix;
pub mod model;
pub mod pool;
pub mod reducer;
pub mod table;

pub use inference::{
    build_correlation_map, class_probabilities, softmax_row, top_predictions, CorrelationMap, SymbolVector,
};
pub use kmeans::{fit_clusters, KMeansFit};
pub use matrix::Matrix;
pub use model::{fit, load_model, pool_all, save_model, FitSummary, SymbolModel};
pub use pool::{coarse_pool, FeatureArray, FeatureMap};
pub use reducer::{fit_pca, fit_reducer, EmbeddingReducer, IdentityReducer, PcaReducer};
pub use table::{build_feature_table, remove_quiescent, standardize, FeatureTable, RowOrigin, Standardization};
