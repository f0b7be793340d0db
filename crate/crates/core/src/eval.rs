//! Metrics, forecast curves and the four-model benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::data::{latest_windows, PipelineConfig, Prepared, Preprocessor, Quarter, RawRow, Sample, WindowedDataset};
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind, ModelSpec};
use crate::rng::RngStream;
use crate::trainer::{predict_dataset, train, TrainConfig};

/// Root of a mean squared error, the only way any report derives its RMSE.
pub fn rmse(mse: f64) -> f64 {
    mse.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPair {
    pub drug: String,
    pub quarter: Quarter,
    pub actual: f64,
    pub predicted: f64,
}

/// Errors in original volume units; `normalized_mse` is the same error in z-score units.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mse: f64,
    pub rmse: f64,
    pub normalized_mse: f64,
    pub n: usize,
    pub pairs: Vec<PredictionPair>,
}

impl MetricsReport {
    pub fn from_pairs(pairs: Vec<PredictionPair>, volume_std: f64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset("no samples to evaluate".into()));
        }
        let n = pairs.len();
        let mse = pairs.iter().map(|p| (p.predicted - p.actual).powi(2)).sum::<f64>() / n as f64;
        Ok(Self {
            mse,
            rmse: rmse(mse),
            normalized_mse: mse / (volume_std * volume_std),
            n,
            pairs,
        })
    }

    pub fn render(&self) -> String {
        format!(
            "n               {}\nmse             {}\nrmse            {}\nnormalized_mse  {}\n",
            self.n, self.mse, self.rmse, self.normalized_mse
        )
    }

    /// `drug,quarter,actual,predicted` for every pair, full precision.
    pub fn write_pairs_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "drug,quarter,actual,predicted")?;
        for p in &self.pairs {
            writeln!(w, "{},{},{},{}", p.drug, p.quarter, p.actual, p.predicted)?;
        }
        Ok(())
    }

    /// One `(quarter, actual, predicted)` row per quarter, in order. With
    /// `drug == None` and several drugs, volumes are summed per quarter.
    pub fn curve(&self, drug: Option<&str>) -> Result<Vec<(Quarter, f64, f64)>> {
        let mut by_quarter: BTreeMap<Quarter, (f64, f64)> = BTreeMap::new();
        for p in self.pairs.iter().filter(|p| drug.is_none_or(|d| p.drug == d)) {
            let e = by_quarter.entry(p.quarter).or_default();
            e.0 += p.actual;
            e.1 += p.predicted;
        }
        if by_quarter.is_empty() {
            return Err(Error::EmptyDataset(format!("no predictions for drug '{}'", drug.unwrap_or("*"))));
        }
        Ok(by_quarter.into_iter().map(|(q, (a, p))| (q, a, p)).collect())
    }
}

/// Infer-mode forecasts for every sample of `ds`, denormalized with the
/// training statistics. Stateful kinds start each drug from zero state.
pub fn evaluate(model: &mut Model, ds: &WindowedDataset, pre: &Preprocessor) -> Result<MetricsReport> {
    score(model, ds, pre, |_| true)
}

/// Forecasts for the samples whose target lies after the training period.
/// `ds` holds the whole history: stateful kinds run through every earlier
/// window of a drug before its first scored one.
pub fn evaluate_test(model: &mut Model, ds: &WindowedDataset, pre: &Preprocessor) -> Result<MetricsReport> {
    let end = pre.train_end;
    score(model, ds, pre, |s| s.target > end)
}

fn score(model: &mut Model, ds: &WindowedDataset, pre: &Preprocessor, keep: impl Fn(&Sample) -> bool) -> Result<MetricsReport> {
    let pred = predict_dataset(model, ds)?;
    let stats = &pre.stats;
    let pairs = ds
        .samples
        .iter()
        .zip(pred)
        .filter(|(s, _)| keep(s))
        .map(|(s, p)| PredictionPair {
            drug: ds.drugs[s.drug].clone(),
            quarter: s.target,
            actual: stats.inverse_volume(s.y),
            predicted: stats.inverse_volume(p),
        })
        .collect();
    MetricsReport::from_pairs(pairs, stats.volume_std())
}

/// Next-quarter forecast per drug from its latest window, in volume units.
/// Stateful kinds first run through the drug's full window history.
pub fn forecast_next(model: &mut Model, prepared: &Prepared) -> Result<Vec<(String, Quarter, f64)>> {
    let cfg = &prepared.pre.config;
    let mut out = Vec::new();
    for (drug, quarter, x) in latest_windows(&prepared.series, cfg.window_len, cfg.horizon) {
        model.reset_states();
        if model.is_stateful() {
            if let Some(d) = prepared.all.drug_index(&drug) {
                let history = prepared.all.filter_drug(d);
                for i in 0..history.len() {
                    model.predict(&history.batch(&[i])?.0)?;
                }
            }
        }
        let shape = x.shape().to_vec();
        let z = model.predict(&x.into_shape(&[1, shape[0], shape[1]])?)?.data()[0];
        out.push((drug, quarter, prepared.pre.stats.inverse_volume(z)));
    }
    model.reset_states();
    Ok(out)
}

pub fn write_curve(report: &MetricsReport, drug: Option<&str>, mut w: impl Write) -> Result<()> {
    let rows = report.curve(drug)?;
    let io = |e| Error::io("<curve>", e);
    writeln!(w, "quarter,actual,predicted").map_err(io)?;
    for (q, a, p) in rows {
        writeln!(w, "{q},{a},{p}").map_err(io)?;
    }
    Ok(())
}

pub fn export_curve(report: &MetricsReport, drug: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_curve(report, drug, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parse a curve file back into rows.
pub fn read_curve(text: &str) -> Result<Vec<(Quarter, f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Schema(format!("bad curve row {:?}", rec)))
        };
        out.push((rec.get(0).unwrap_or("").parse()?, num(1)?, num(2)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub seeds: Vec<u64>,
    pub kinds: Vec<ModelKind>,
}

impl BenchmarkConfig {
    /// Settings used for the model comparison on the synthetic suite.
    pub fn suite_default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 100,
                batch_size: 6,
                ..TrainConfig::default()
            },
            pipeline: PipelineConfig::default(),
            seeds: (1..=5).collect(),
            kinds: ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub dataset: String,
    pub seed: u64,
    pub kind: ModelKind,
    /// `None` when training diverged.
    pub mse: Option<f64>,
    pub normalized_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KindSummary {
    pub kind: ModelKind,
    pub median_mse: f64,
    /// `sqrt(median_mse)`
    pub rmse: f64,
    pub median_normalized_mse: f64,
    pub runs: usize,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub rows: Vec<KindSummary>,
    pub runs: Vec<RunResult>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Train and test one kind on one prepared dataset.
pub fn run_once(
    kind: ModelKind,
    prepared: &Prepared,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let spec = ModelSpec::new(kind, prepared.pre.channels()).with_window(prepared.pre.config.window_len);
    let mut model = Model::build(spec, &mut RngStream::new(seed))?;
    let cfg = TrainConfig { seed, ..train_cfg.clone() };
    train(&mut model, &prepared.train, None, &cfg)?;
    evaluate_test(&mut model, &prepared.all, &prepared.pre)
}

pub fn benchmark(datasets: &[(String, Vec<RawRow>)], cfg: &BenchmarkConfig) -> Result<BenchmarkTable> {
    if datasets.is_empty() || cfg.seeds.is_empty() || cfg.kinds.is_empty() {
        return Err(Error::Benchmark("need at least one dataset, seed and model kind".into()));
    }
    let mut runs = Vec::new();
    for (name, rows) in datasets {
        let prepared = Preprocessor::fit(rows, cfg.pipeline.clone())?;
        for &seed in &cfg.seeds {
            for &kind in &cfg.kinds {
                let (mse, normalized_mse) = match run_once(kind, &prepared, &cfg.train, seed) {
                    Ok(r) => (Some(r.mse), Some(r.normalized_mse)),
                    Err(Error::Diverged { epoch, loss }) => {
                        log::warn!("{name} seed {seed} {kind}: diverged at epoch {epoch} (loss {loss}); excluded");
                        (None, None)
                    }
                    Err(e) => return Err(e),
                };
                log::info!("{name} seed {seed} {kind}: mse {mse:?}");
                runs.push(RunResult {
                    dataset: name.clone(),
                    seed,
                    kind,
                    mse,
                    normalized_mse,
                });
            }
        }
    }
    let mut rows = Vec::new();
    for &kind in &cfg.kinds {
        let of_kind: Vec<&RunResult> = runs.iter().filter(|r| r.kind == kind).collect();
        let mut mses: Vec<f64> = of_kind.iter().filter_map(|r| r.mse).collect();
        let mut norm: Vec<f64> = of_kind.iter().filter_map(|r| r.normalized_mse).collect();
        if mses.is_empty() {
            return Err(Error::Benchmark(format!("every {kind} run diverged")));
        }
        let median_mse = median(&mut mses);
        rows.push(KindSummary {
            kind,
            median_mse,
            rmse: rmse(median_mse),
            median_normalized_mse: median(&mut norm),
            runs: of_kind.len(),
            diverged: of_kind.len() - mses.len(),
        });
    }
    Ok(BenchmarkTable { rows, runs })
}

impl BenchmarkTable {
    pub fn row(&self, kind: ModelKind) -> Option<&KindSummary> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    /// Plain-text table: one line per model with MSE and RMSE.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>14} {:>12} {:>14} {:>6}", "Model", "MSE", "RMSE", "MSE (z-units)", "runs");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>14.3} {:>12.3} {:>14.5} {:>6}",
                r.kind.label(),
                r.median_mse,
                r.rmse,
                r.median_normalized_mse,
                r.runs - r.diverged
            );
        }
        s
    }

    pub fn write_summary_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "model,median_mse,rmse,median_normalized_mse,runs,diverged")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.kind, r.median_mse, r.rmse, r.median_normalized_mse, r.runs, r.diverged
            )?;
        }
        Ok(())
    }

    pub fn write_runs_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "dataset,seed,model,mse,normalized_mse")?;
        for r in &self.runs {
            let f = |v: Option<f64>| v.map_or("diverged".to_string(), |x| x.to_string());
            writeln!(w, "{},{},{},{},{}", r.dataset, r.seed, r.kind, f(r.mse), f(r.normalized_mse))?;
        }
        Ok(())
    }
}
