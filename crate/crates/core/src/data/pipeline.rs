use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::encode::CategoricalEncoder;
use super::quarter::Quarter;
use super::records::{clean, DropReport, RawRow, SalesRecord};
use super::series::{split_quarter, time_align, GapMode, NormStats, QuarterlySeries, NUMERIC_CHANNELS};
use super::window::{windowize, WindowedDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub window_len: usize,
    pub horizon: usize,
    /// Fraction of distinct calendar quarters used for training.
    pub split: f64,
    pub use_region: bool,
    pub gap_mode: GapMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_len: 8,
            horizon: 1,
            split: 0.8,
            use_region: true,
            gap_mode: GapMode::Strict,
        }
    }
}

/// Everything fitted on the training period that inference must replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub config: PipelineConfig,
    pub encoder: CategoricalEncoder,
    pub stats: NormStats,
    pub train_end: Quarter,
    pub channel_names: Vec<String>,
}

/// Output of one pass through the pipeline.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub pre: Preprocessor,
    pub report: DropReport,
    /// Normalized series, one per drug.
    pub series: Vec<QuarterlySeries>,
    pub all: WindowedDataset,
    pub train: WindowedDataset,
    pub test: WindowedDataset,
}

impl Preprocessor {
    /// Fit vocabularies and statistics on the training quarters of `rows`.
    pub fn fit(rows: &[RawRow], config: PipelineConfig) -> Result<Prepared> {
        let (records, report) = clean(rows)?;
        let train_end = split_quarter(records.iter().map(|r| r.date), config.split)?;
        let train_records: Vec<&SalesRecord> = records.iter().filter(|r| r.date <= train_end).collect();
        let encoder = CategoricalEncoder::fit(train_records.iter().copied(), config.use_region);
        let raw_series = time_align(&records, &encoder, config.gap_mode)?;
        let stats = NormStats::fit(&raw_series, train_end)?;
        let mut channel_names: Vec<String> = NUMERIC_CHANNELS.iter().map(|s| s.to_string()).collect();
        channel_names.extend(encoder.channel_names());
        let pre = Preprocessor {
            config,
            encoder,
            stats,
            train_end,
            channel_names,
        };
        pre.finish(raw_series, report)
    }

    /// Replay fitted preprocessing on new rows.
    pub fn transform(&self, rows: &[RawRow]) -> Result<Prepared> {
        let (records, report) = clean(rows)?;
        let raw_series = time_align(&records, &self.encoder, self.config.gap_mode)?;
        self.clone().finish(raw_series, report)
    }

    fn finish(self, raw_series: Vec<QuarterlySeries>, report: DropReport) -> Result<Prepared> {
        let series = self.stats.apply(&raw_series);
        let all = windowize(&series, self.config.window_len, self.config.horizon)?;
        let (train, test) = all.split_at(self.train_end);
        Ok(Prepared {
            pre: self,
            report,
            series,
            all,
            train,
            test,
        })
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    /// `model.bin` -> `model.bin.prep.json`
    pub fn sidecar_path(model_path: &Path) -> PathBuf {
        let mut s = model_path.as_os_str().to_owned();
        s.push(".prep.json");
        PathBuf::from(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
