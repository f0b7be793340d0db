//! CSV ingestion through windowed, normalized training samples.

mod encode;
mod pipeline;
mod quarter;
mod records;
mod series;
mod window;

pub use encode::{normalize_category, CategoricalEncoder, Vocabulary};
pub use pipeline::{PipelineConfig, Prepared, Preprocessor};
pub use quarter::Quarter;
pub use records::{clean, parse_csv, parse_csv_reader, write_csv, DropReport, RawRow, SalesRecord, COLUMNS, SENTINEL};
pub use series::{
    normalize, split_quarter, time_align, ChannelStats, GapMode, NormStats, QuarterPoint, QuarterlySeries,
    NUMERIC_CHANNELS, VOLUME,
};
pub use window::{latest_windows, window_count, windowize, Sample, WindowedDataset};
