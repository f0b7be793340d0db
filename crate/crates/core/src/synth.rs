//! Seeded synthetic quarterly sales in the ingestion schema.
//!
//! For drug `d` and quarter index `q` (0-based):
//!
//! ```text
//! volume = max(0, base_d + slope_d*q + amp_d*sin(2*pi*q/period)
//!                 + elasticity*(price_dq - mean_q price_dq) + noise)
//! ```
//!
//! Prices follow a multiplicative random walk. Per-drug base, slope and
//! amplitude are the config values scaled by `1 + spread*u`, `u ~ U(-1, 1)`.

use std::f64::consts::TAU;
use std::io::Write;

use crate::data::{write_csv, Quarter, SalesRecord};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const FORMS: [&str; 5] = ["Tablet", "Capsule", "Vial", "Injection", "Ampoule"];
pub const COMPANIES: [&str; 6] = ["Nilepharm", "Delta Labs", "Memphis Bio", "Sinai Chem", "Pharos", "Alex Med"];
pub const REGIONS: [&str; 4] = ["Cairo", "Giza", "Alexandria", "Delta"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_drugs: usize,
    pub n_quarters: usize,
    pub start: Quarter,
    pub base_volume: f64,
    pub trend_slope: f64,
    pub seasonal_amplitude: f64,
    pub seasonal_period: usize,
    pub noise_std: f64,
    pub price_elasticity: f64,
    pub base_price: f64,
    /// Standard deviation of the log-price step.
    pub price_volatility: f64,
    /// Relative per-drug spread of base, slope and amplitude.
    pub drug_spread: f64,
    pub n_forms: usize,
    pub n_companies: usize,
    pub n_regions: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_drugs: 1,
            n_quarters: 40,
            start: Quarter { year: 2015, q: 1 },
            base_volume: 1000.0,
            trend_slope: 10.0,
            seasonal_amplitude: 100.0,
            seasonal_period: 4,
            noise_std: 20.0,
            price_elasticity: -2.0,
            base_price: 250.0,
            price_volatility: 0.02,
            drug_spread: 0.3,
            n_forms: 3,
            n_companies: 3,
            n_regions: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.n_drugs == 0 || self.n_quarters == 0 || self.seasonal_period == 0 {
            return fail("n_drugs, n_quarters and seasonal_period must be positive");
        }
        if !(self.noise_std >= 0.0) || !(self.price_volatility >= 0.0) || !(self.drug_spread >= 0.0) {
            return fail("noise_std, price_volatility and drug_spread must be >= 0");
        }
        if !(self.price_elasticity <= 0.0) {
            return fail("price_elasticity must be <= 0");
        }
        if !(self.base_price > 0.0) {
            return fail("base_price must be positive");
        }
        if !(1..=FORMS.len()).contains(&self.n_forms)
            || !(1..=COMPANIES.len()).contains(&self.n_companies)
            || !(1..=REGIONS.len()).contains(&self.n_regions)
        {
            return fail("vocabulary sizes out of range");
        }
        Ok(())
    }
}

/// The latent parameters behind one generated drug.
#[derive(Debug, Clone, PartialEq)]
pub struct DrugParams {
    pub name: String,
    pub base: f64,
    pub slope: f64,
    pub amplitude: f64,
    pub prices: Vec<f64>,
    pub mean_price: f64,
    pub noise: Vec<f64>,
}

impl DrugParams {
    /// The generating formula at quarter index `q`.
    pub fn volume(&self, q: usize, cfg: &SynthConfig) -> f64 {
        let season = self.amplitude * (TAU * q as f64 / cfg.seasonal_period as f64).sin();
        let price = cfg.price_elasticity * (self.prices[q] - self.mean_price);
        (self.base + self.slope * q as f64 + season + price + self.noise[q]).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub config: SynthConfig,
    pub records: Vec<SalesRecord>,
    pub drugs: Vec<DrugParams>,
}

impl SynthData {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_csv(&self.records, w)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let mut records = Vec::with_capacity(cfg.n_drugs * cfg.n_quarters);
    let mut drugs = Vec::with_capacity(cfg.n_drugs);
    for d in 0..cfg.n_drugs {
        let mut rng = root.fork(d as u64);
        let jitter = |rng: &mut RngStream| 1.0 + cfg.drug_spread * rng.uniform_range(-1.0, 1.0);
        let base = cfg.base_volume * jitter(&mut rng);
        let slope = cfg.trend_slope * jitter(&mut rng);
        let amplitude = cfg.seasonal_amplitude * jitter(&mut rng);
        let mut price = cfg.base_price * jitter(&mut rng);
        let effectiveness = rng.uniform_range(60.0, 95.0);
        let rating = rng.uniform_range(2.5, 5.0);

        let mut prices = Vec::with_capacity(cfg.n_quarters);
        for _ in 0..cfg.n_quarters {
            prices.push(price);
            price *= (cfg.price_volatility * rng.normal()).exp();
        }
        let mean_price = prices.iter().sum::<f64>() / prices.len() as f64;
        let noise: Vec<f64> = (0..cfg.n_quarters).map(|_| cfg.noise_std * rng.normal()).collect();
        let params = DrugParams {
            name: format!("Drug{:02}", d + 1),
            base,
            slope,
            amplitude,
            prices,
            mean_price,
            noise,
        };
        for q in 0..cfg.n_quarters {
            records.push(SalesRecord {
                drugname: params.name.clone(),
                price: params.prices[q],
                date: cfg.start.offset(q as i64),
                form: FORMS[d % cfg.n_forms].to_string(),
                company: COMPANIES[d % cfg.n_companies].to_string(),
                region: REGIONS[d % cfg.n_regions].to_string(),
                sales_volume: params.volume(q, cfg),
                effectiveness: effectiveness + 0.5 * rng.normal(),
                user_evaluate: rating + 0.05 * rng.normal(),
            });
        }
        drugs.push(params);
    }
    Ok(SynthData {
        config: cfg.clone(),
        records,
        drugs,
    })
}

/// The five fixed benchmark configurations: low and medium noise crossed with
/// weak and strong seasonality, plus one with a stronger price coupling.
pub fn benchmark_configs(seed: u64) -> Vec<(String, SynthConfig)> {
    let base = SynthConfig {
        n_drugs: 6,
        n_quarters: 40,
        trend_slope: 3.0,
        ..SynthConfig::default()
    };
    let variants = [
        ("low_noise_weak_season", 10.0, 40.0, -2.0),
        ("low_noise_strong_season", 10.0, 200.0, -2.0),
        ("mid_noise_weak_season", 40.0, 40.0, -2.0),
        ("mid_noise_strong_season", 40.0, 200.0, -2.0),
        ("price_driven", 20.0, 100.0, -8.0),
    ];
    variants
        .iter()
        .enumerate()
        .map(|(i, &(name, noise_std, seasonal_amplitude, price_elasticity))| {
            (
                name.to_string(),
                SynthConfig {
                    noise_std,
                    seasonal_amplitude,
                    price_elasticity,
                    seed: RngStream::new(seed).fork(i as u64).next_u64(),
                    ..base.clone()
                },
            )
        })
        .collect()
}

pub fn generate_benchmark_suite(seed: u64) -> Result<Vec<(String, SynthData)>> {
    benchmark_configs(seed)
        .into_iter()
        .map(|(name, cfg)| Ok((name, generate(&cfg)?)))
        .collect()
}
