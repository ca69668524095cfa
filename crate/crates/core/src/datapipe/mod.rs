//! CSV ingestion, preprocessing and the train/test partition.

pub mod dataset;
pub mod preprocess;
pub mod schema;
pub mod split;
pub mod table;

pub use dataset::Dataset;
pub use preprocess::{
    apply_preprocessor, fit_preprocessor, ColumnEncoder, ColumnScale, Imputation, PreprocessPolicy, Preprocessor,
    UnseenCategory,
};
pub use schema::{ColumnKind, ColumnSchema, Schema};
pub use split::{split_dataset, split_indices, SplitIndices};
pub use table::{load_table, Cell, RawTable, Row};
