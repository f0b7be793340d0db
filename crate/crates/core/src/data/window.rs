use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::quarter::Quarter;
use super::series::{QuarterlySeries, VOLUME};

/// One supervised example: `window_len` consecutive quarters in, the
/// volume `horizon` quarters after the last input quarter out.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[channels, window_len]`
    pub x: Tensor,
    pub y: f64,
    pub first_input: Quarter,
    pub target: Quarter,
    /// Index into [`WindowedDataset::drugs`].
    pub drug: usize,
}

/// Samples ordered by `(target quarter, drug)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub samples: Vec<Sample>,
    pub channels: usize,
    pub window_len: usize,
    pub horizon: usize,
    pub drugs: Vec<String>,
}

pub fn window_count(len: usize, window_len: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(window_len + horizon)
}

pub fn windowize(series: &[QuarterlySeries], window_len: usize, horizon: usize) -> Result<WindowedDataset> {
    if window_len == 0 || horizon == 0 {
        return Err(Error::Config("window_len and horizon must be positive".into()));
    }
    let channels = series
        .first()
        .map(|s| 4 + s.points.first().map_or(0, |p| p.onehot.len()))
        .ok_or_else(|| Error::EmptyDataset("no series to windowize".into()))?;
    let min = window_len + horizon;
    let mut samples = Vec::new();
    for (d, s) in series.iter().enumerate() {
        if s.len() < min {
            return Err(Error::InsufficientData { len: s.len(), min });
        }
        for i in 0..window_count(s.len(), window_len, horizon) {
            let mut x = Tensor::zeros(&[channels, window_len]);
            let data = x.data_mut();
            for t in 0..window_len {
                let p = &s.points[i + t];
                let values = p.numeric.iter().chain(&p.onehot);
                for (c, &v) in values.enumerate() {
                    data[c * window_len + t] = v;
                }
            }
            let target = &s.points[i + window_len + horizon - 1];
            samples.push(Sample {
                x,
                y: target.numeric[VOLUME],
                first_input: s.points[i].quarter,
                target: target.quarter,
                drug: d,
            });
        }
    }
    samples.sort_by_key(|s| (s.target, s.drug));
    Ok(WindowedDataset {
        samples,
        channels,
        window_len,
        horizon,
        drugs: series.iter().map(|s| s.drug.clone()).collect(),
    })
}

/// The final `window_len` quarters of each series as model input, paired with
/// the quarter `horizon` steps after the window. Series that are too short are skipped.
pub fn latest_windows(series: &[QuarterlySeries], window_len: usize, horizon: usize) -> Vec<(String, Quarter, Tensor)> {
    series
        .iter()
        .filter(|s| s.len() >= window_len && window_len > 0)
        .map(|s| {
            let start = s.len() - window_len;
            let pts = &s.points[start..];
            let channels = 4 + pts[0].onehot.len();
            let mut x = Tensor::zeros(&[channels, window_len]);
            let data = x.data_mut();
            for (t, p) in pts.iter().enumerate() {
                for (c, &v) in p.numeric.iter().chain(&p.onehot).enumerate() {
                    data[c * window_len + t] = v;
                }
            }
            (s.drug.clone(), pts[window_len - 1].quarter.offset(horizon as i64), x)
        })
        .collect()
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Self {
        Self {
            samples,
            channels: self.channels,
            window_len: self.window_len,
            horizon: self.horizon,
            drugs: self.drugs.clone(),
        }
    }

    /// `(samples with target <= train_end, the rest)`.
    pub fn split_at(&self, train_end: Quarter) -> (Self, Self) {
        let (train, test): (Vec<Sample>, Vec<Sample>) = self.samples.iter().cloned().partition(|s| s.target <= train_end);
        (self.with_samples(train), self.with_samples(test))
    }

    pub fn filter_drug(&self, drug: usize) -> Self {
        self.with_samples(self.samples.iter().filter(|s| s.drug == drug).cloned().collect())
    }

    pub fn truncate(&self, n: usize) -> Self {
        self.with_samples(self.samples.iter().take(n).cloned().collect())
    }

    pub fn drug_index(&self, name: &str) -> Option<usize> {
        self.drugs.iter().position(|d| d == name)
    }

    /// Stack the given samples into `x: [B, C, W]`, `y: [B, 1]`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let per = self.channels * self.window_len;
        let mut x = Vec::with_capacity(indices.len() * per);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::Dimension(format!("sample {i} out of {}", self.len())))?;
            x.extend_from_slice(s.x.data());
            y.push(s.y);
        }
        Ok((
            Tensor::new(vec![indices.len(), self.channels, self.window_len], x)?,
            Tensor::new(vec![indices.len(), 1], y)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::series::QuarterPoint;
    use proptest::prelude::*;

    fn series(len: usize, name: &str) -> QuarterlySeries {
        QuarterlySeries {
            drug: name.into(),
            points: (0..len)
                .map(|i| QuarterPoint {
                    quarter: Quarter { year: 2015, q: 1 }.offset(i as i64),
                    numeric: [i as f64, 0.5, -0.5, 100.0 + i as f64],
                    onehot: vec![1.0, 0.0],
                })
                .collect(),
        }
    }

    #[test]
    fn counts() {
        assert_eq!(windowize(&[series(40, "a")], 8, 1).unwrap().len(), 32);
        assert_eq!(windowize(&[series(9, "a")], 8, 1).unwrap().len(), 1);
        match windowize(&[series(8, "a")], 8, 1) {
            Err(Error::InsufficientData { len: 8, min: 9 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn layout_and_target() {
        let ds = windowize(&[series(10, "a")], 8, 1).unwrap();
        let s = &ds.samples[1];
        assert_eq!(s.x.shape(), &[6, 8]);
        assert_eq!(s.x.get(&[0, 0]).unwrap(), 1.0);
        assert_eq!(s.x.get(&[3, 7]).unwrap(), 108.0);
        assert_eq!(s.x.get(&[4, 3]).unwrap(), 1.0);
        assert_eq!(s.y, 109.0);
        assert_eq!(s.target, Quarter { year: 2017, q: 2 });
    }

    #[test]
    fn multi_drug_ordering() {
        let ds = windowize(&[series(12, "a"), series(12, "b")], 8, 1).unwrap();
        let keys: Vec<_> = ds.samples.iter().map(|s| (s.target, s.drug)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(ds.samples[0].drug, 0);
        assert_eq!(ds.samples[1].drug, 1);
        let (x, y) = ds.batch(&[0, 1]).unwrap();
        assert_eq!(x.shape(), &[2, 6, 8]);
        assert_eq!(y.data(), &[108.0, 108.0]);
    }

    #[test]
    fn latest_window_is_the_tail() {
        let w = latest_windows(&[series(10, "a"), series(3, "short")], 8, 1);
        assert_eq!(w.len(), 1);
        let (drug, q, x) = &w[0];
        assert_eq!(drug, "a");
        assert_eq!(*q, Quarter { year: 2017, q: 3 });
        assert_eq!(x.get(&[3, 7]).unwrap(), 109.0);
    }

    #[test]
    fn split_by_target_quarter() {
        let ds = windowize(&[series(12, "a")], 8, 1).unwrap();
        let (train, test) = ds.split_at(Quarter { year: 2017, q: 2 });
        assert_eq!(train.len(), 2);
        assert_eq!(test.len(), 2);
        assert!(test.samples.iter().all(|s| s.target > Quarter { year: 2017, q: 2 }));
    }

    /// Every start index whose window and target fit, by enumeration.
    fn brute_force(len: usize, w: usize, h: usize) -> usize {
        (0..len).filter(|&i| i + w - 1 + h < len).count()
    }

    proptest! {
        #[test]
        fn count_matches_enumeration(len in 1usize..70, w in 1usize..14, h in 1usize..4) {
            prop_assert_eq!(window_count(len, w, h), brute_force(len, w, h));
            if len >= w + h {
                let ds = windowize(&[series(len, "a")], w, h).unwrap();
                prop_assert_eq!(ds.len(), brute_force(len, w, h));
                for s in &ds.samples {
                    let last_input = s.first_input.offset(w as i64 - 1);
                    prop_assert!(last_input < s.target);
                    prop_assert_eq!(last_input.offset(h as i64), s.target);
                }
            }
        }
    }
}
