//! Flat `key = value` settings files.
//!
//! Blank lines and `#` comments are ignored; unknown keys are an error.
//! Later lines override earlier ones.

use crate::data::{GapMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::eval::BenchmarkConfig;
use crate::models::{ModelKind, ModelSpec};
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOverrides {
    pub kind: ModelKind,
    pub conv: Vec<(usize, usize)>,
    pub lstm_layers: usize,
    pub hidden: usize,
    pub dropout_rate: f64,
}

impl Default for ModelOverrides {
    fn default() -> Self {
        Self {
            kind: ModelKind::CnnLstm,
            conv: ModelSpec::DEFAULT_CONV.to_vec(),
            lstm_layers: ModelSpec::DEFAULT_LAYERS,
            hidden: ModelSpec::DEFAULT_HIDDEN,
            dropout_rate: ModelSpec::DEFAULT_DROPOUT,
        }
    }
}

impl ModelOverrides {
    pub fn spec(&self, input_channels: usize, window_len: usize) -> ModelSpec {
        ModelSpec {
            kind: self.kind,
            input_channels,
            window_len,
            conv: self.conv.clone(),
            lstm_layers: self.lstm_layers,
            hidden: self.hidden,
            dropout_rate: self.dropout_rate,
            output_dim: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub model: ModelOverrides,
    pub synth: SynthConfig,
    /// Run seeds for `benchmark`.
    pub seeds: Vec<u64>,
    pub benchmark: BenchmarkConfig,
}

impl Default for Settings {
    fn default() -> Self {
        let benchmark = BenchmarkConfig::suite_default();
        Self {
            train: TrainConfig::default(),
            pipeline: PipelineConfig::default(),
            model: ModelOverrides::default(),
            synth: SynthConfig::default(),
            seeds: benchmark.seeds.clone(),
            benchmark,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|s| parse(key, s.trim())).collect()
}

impl Settings {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        s.apply_text(text)?;
        Ok(s)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let p = &mut self.pipeline;
        let m = &mut self.model;
        let s = &mut self.synth;
        match key {
            "epochs" => t.epochs = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "learning_rate" => t.learning_rate = parse(key, v)?,
            "adam_beta1" => t.adam_beta1 = parse(key, v)?,
            "adam_beta2" => t.adam_beta2 = parse(key, v)?,
            "adam_eps" => t.adam_eps = parse(key, v)?,
            "seed" => {
                t.seed = parse(key, v)?;
                s.seed = t.seed;
            }
            "shuffle" => t.shuffle = Some(parse_bool(key, v)?),
            "gradient_clip_norm" => {
                t.gradient_clip_norm = if v.eq_ignore_ascii_case("none") { None } else { Some(parse(key, v)?) }
            }
            "window_len" => p.window_len = parse(key, v)?,
            "horizon" => p.horizon = parse(key, v)?,
            "split" => p.split = parse(key, v)?,
            "use_region" => p.use_region = parse_bool(key, v)?,
            "gap_mode" => {
                p.gap_mode = match v.to_ascii_lowercase().as_str() {
                    "strict" => GapMode::Strict,
                    "interpolate" => GapMode::Interpolate,
                    _ => return Err(Error::Config(format!("gap_mode must be strict or interpolate, got '{v}'"))),
                }
            }
            "kind" => m.kind = v.parse()?,
            "conv" => {
                m.conv = v
                    .split(',')
                    .map(|pair| {
                        let (k, f) = pair
                            .trim()
                            .split_once(':')
                            .ok_or_else(|| Error::Config(format!("conv entries are kernel:filters, got '{pair}'")))?;
                        Ok((parse(key, k.trim())?, parse(key, f.trim())?))
                    })
                    .collect::<Result<_>>()?
            }
            "lstm_layers" => m.lstm_layers = parse(key, v)?,
            "hidden" => m.hidden = parse(key, v)?,
            "dropout_rate" => m.dropout_rate = parse(key, v)?,
            "n_drugs" => s.n_drugs = parse(key, v)?,
            "n_quarters" => s.n_quarters = parse(key, v)?,
            "start" => s.start = v.parse()?,
            "base_volume" => s.base_volume = parse(key, v)?,
            "trend_slope" => s.trend_slope = parse(key, v)?,
            "seasonal_amplitude" => s.seasonal_amplitude = parse(key, v)?,
            "seasonal_period" => s.seasonal_period = parse(key, v)?,
            "noise_std" => s.noise_std = parse(key, v)?,
            "price_elasticity" => s.price_elasticity = parse(key, v)?,
            "base_price" => s.base_price = parse(key, v)?,
            "price_volatility" => s.price_volatility = parse(key, v)?,
            "drug_spread" => s.drug_spread = parse(key, v)?,
            "n_forms" => s.n_forms = parse(key, v)?,
            "n_companies" => s.n_companies = parse(key, v)?,
            "n_regions" => s.n_regions = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "benchmark_epochs" => self.benchmark.train.epochs = parse(key, v)?,
            "benchmark_batch_size" => self.benchmark.train.batch_size = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }
}
