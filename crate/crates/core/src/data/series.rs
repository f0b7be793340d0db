use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::encode::{normalize_category, CategoricalEncoder};
use super::quarter::Quarter;
use super::records::SalesRecord;

/// Numeric channels in input order; the target is the `sales_volume` channel.
pub const NUMERIC_CHANNELS: [&str; 4] = ["price", "effectiveness", "user_evaluate", "sales_volume"];
pub const VOLUME: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct QuarterPoint {
    pub quarter: Quarter,
    pub numeric: [f64; 4],
    pub onehot: Vec<f64>,
}

impl QuarterPoint {
    pub fn volume(&self) -> f64 {
        self.numeric[VOLUME]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuarterlySeries {
    pub drug: String,
    pub points: Vec<QuarterPoint>,
}

impl QuarterlySeries {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GapMode {
    /// An interior missing quarter is an error.
    #[default]
    Strict,
    /// Numeric channels are linearly interpolated; categoricals repeat the previous quarter.
    Interpolate,
}

fn aggregate(quarter: Quarter, recs: &[&SalesRecord], encoder: &CategoricalEncoder) -> QuarterPoint {
    let volume: f64 = recs.iter().map(|r| r.sales_volume).sum();
    let weighted = |f: fn(&SalesRecord) -> f64| {
        if volume > 0.0 {
            recs.iter().map(|r| f(r) * r.sales_volume).sum::<f64>() / volume
        } else {
            recs.iter().map(|r| f(r)).sum::<f64>() / recs.len() as f64
        }
    };
    let mut top = recs[0];
    for r in &recs[1..] {
        if r.sales_volume > top.sales_volume {
            top = r;
        }
    }
    QuarterPoint {
        quarter,
        numeric: [
            weighted(|r| r.price),
            weighted(|r| r.effectiveness),
            weighted(|r| r.user_evaluate),
            volume,
        ],
        onehot: encoder.encode(top),
    }
}

/// Bucket records into one sorted quarterly series per drug (drugs in name order).
pub fn time_align(records: &[SalesRecord], encoder: &CategoricalEncoder, gaps: GapMode) -> Result<Vec<QuarterlySeries>> {
    let mut by_drug: BTreeMap<String, (String, BTreeMap<Quarter, Vec<&SalesRecord>>)> = BTreeMap::new();
    for r in records {
        let entry = by_drug
            .entry(normalize_category(&r.drugname))
            .or_insert_with(|| (r.drugname.trim().to_string(), BTreeMap::new()));
        entry.1.entry(r.date).or_default().push(r);
    }
    let mut out = Vec::with_capacity(by_drug.len());
    for (_, (drug, quarters)) in by_drug {
        let mut points: Vec<QuarterPoint> = Vec::with_capacity(quarters.len());
        for (q, recs) in &quarters {
            let point = aggregate(*q, recs, encoder);
            if let Some(prev) = points.last().cloned() {
                let gap = q.ordinal() - prev.quarter.ordinal();
                if gap > 1 {
                    match gaps {
                        GapMode::Strict => {
                            return Err(Error::Gap {
                                drug,
                                quarter: prev.quarter.next().to_string(),
                            })
                        }
                        GapMode::Interpolate => {
                            for k in 1..gap {
                                let t = k as f64 / gap as f64;
                                let mut numeric = [0.0; 4];
                                for (c, v) in numeric.iter_mut().enumerate() {
                                    *v = prev.numeric[c] + t * (point.numeric[c] - prev.numeric[c]);
                                }
                                points.push(QuarterPoint {
                                    quarter: prev.quarter.offset(k),
                                    numeric,
                                    onehot: prev.onehot.clone(),
                                });
                            }
                        }
                    }
                }
            }
            points.push(point);
        }
        out.push(QuarterlySeries { drug, points });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// z-score statistics of the numeric channels, fitted on training quarters only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: [ChannelStats; 4],
}

impl NormStats {
    /// Pooled over every drug's points with `quarter <= train_end`; population std.
    pub fn fit(series: &[QuarterlySeries], train_end: Quarter) -> Result<NormStats> {
        let train: Vec<&QuarterPoint> = series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| p.quarter <= train_end)
            .collect();
        if train.is_empty() {
            return Err(Error::EmptyDataset(format!("no quarters at or before {train_end} to fit normalization")));
        }
        let n = train.len() as f64;
        let mut channels = [ChannelStats { mean: 0.0, std: 1.0 }; 4];
        for (c, stats) in channels.iter_mut().enumerate() {
            let mean = train.iter().map(|p| p.numeric[c]).sum::<f64>() / n;
            let var = train.iter().map(|p| (p.numeric[c] - mean).powi(2)).sum::<f64>() / n;
            let mut std = var.sqrt();
            if std == 0.0 {
                log::warn!("channel {} is constant over the training quarters; using std 1", NUMERIC_CHANNELS[c]);
                std = 1.0;
            }
            *stats = ChannelStats { mean, std };
        }
        Ok(NormStats { channels })
    }

    pub fn apply(&self, series: &[QuarterlySeries]) -> Vec<QuarterlySeries> {
        series
            .iter()
            .map(|s| QuarterlySeries {
                drug: s.drug.clone(),
                points: s
                    .points
                    .iter()
                    .map(|p| {
                        let mut p = p.clone();
                        for (v, st) in p.numeric.iter_mut().zip(&self.channels) {
                            *v = (*v - st.mean) / st.std;
                        }
                        p
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn inverse(&self, channel: usize, z: f64) -> f64 {
        let st = self.channels[channel];
        z * st.std + st.mean
    }

    pub fn inverse_volume(&self, z: f64) -> f64 {
        self.inverse(VOLUME, z)
    }

    pub fn volume_std(&self) -> f64 {
        self.channels[VOLUME].std
    }
}

/// Fit statistics on `quarter <= train_end` and return the normalized copy.
pub fn normalize(series: &[QuarterlySeries], train_end: Quarter) -> Result<(Vec<QuarterlySeries>, NormStats)> {
    let stats = NormStats::fit(series, train_end)?;
    Ok((stats.apply(series), stats))
}

/// Last training quarter: the first `round(fraction * n)` distinct calendar quarters train.
pub fn split_quarter(quarters: impl IntoIterator<Item = Quarter>, fraction: f64) -> Result<Quarter> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} not in (0, 1]")));
    }
    let mut all: Vec<Quarter> = quarters.into_iter().collect();
    all.sort_unstable();
    all.dedup();
    if all.is_empty() {
        return Err(Error::EmptyDataset("no quarters to split".into()));
    }
    let n_train = ((fraction * all.len() as f64).round() as usize).clamp(1, all.len());
    Ok(all[n_train - 1])
}
