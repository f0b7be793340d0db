//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Settings;
use crate::data::{parse_csv, Preprocessor, Prepared};
use crate::error::{Error, Result};
use crate::eval::{benchmark, evaluate_test, export_curve, forecast_next, BenchmarkConfig};
use crate::models::{Model, ModelKind};
use crate::rng::RngStream;
use crate::synth::{generate, generate_benchmark_suite};
use crate::trainer::{load_model, save_model, train};

#[derive(Debug, Parser)]
#[command(name = "quartercast", version, about = "Quarterly drug sales forecasting with a CNN-LSTM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic sales CSV.
    Synth(Flags),
    /// Fit a model on a sales CSV.
    Train(Flags),
    /// Score a trained model on the quarters after its training period.
    Evaluate(Flags),
    /// Forecast the next quarter for every drug.
    Predict(Flags),
    /// Compare all four model kinds on the synthetic suite.
    Benchmark(Flags),
    /// Write quarter,actual,predicted rows for the test period.
    ExportCurve(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// Input sales CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// key = value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Input window in quarters.
    #[arg(long)]
    window: Option<usize>,
    /// Fraction of quarters used for training.
    #[arg(long)]
    split: Option<f64>,
    /// cnn_lstm, cnn, lstm or rnn.
    #[arg(long)]
    kind: Option<ModelKind>,
    /// Restrict export-curve to one drug.
    #[arg(long)]
    drug: Option<String>,
}

enum Failure {
    Usage(String),
    Module(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Module(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

impl Flags {
    fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            s.apply_text(&text)?;
        }
        if let Some(seed) = self.seed {
            s.train.seed = seed;
            s.synth.seed = seed;
        }
        if let Some(w) = self.window {
            s.pipeline.window_len = w;
        }
        if let Some(split) = self.split {
            s.pipeline.split = split;
        }
        if let Some(kind) = self.kind {
            s.model.kind = kind;
        }
        Ok(s)
    }

    fn need<'a>(&'a self, v: &'a Option<PathBuf>, flag: &str) -> std::result::Result<&'a Path, Failure> {
        v.as_deref().ok_or_else(|| Failure::Usage(format!("this subcommand requires --{flag}")))
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn history_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

fn load_with_data(f: &Flags) -> std::result::Result<(Model, Prepared), Failure> {
    let model_path = f.need(&f.model, "model")?;
    let data = f.need(&f.data, "data")?;
    let model = load_model(model_path)?;
    let pre = Preprocessor::load(&Preprocessor::sidecar_path(model_path))?;
    let prepared = pre.transform(&parse_csv(data)?)?;
    Ok((model, prepared))
}

fn cmd_synth(f: &Flags) -> Outcome {
    let s = f.settings()?;
    let data = generate(&s.synth)?;
    write_output(f.out.as_deref(), &data.to_csv_string())?;
    Ok(())
}

fn cmd_train(f: &Flags) -> Outcome {
    let data = f.need(&f.data, "data")?;
    let out = f.out.as_deref().or(f.model.as_deref());
    let out = out.ok_or_else(|| Failure::Usage("train requires --out (or --model)".into()))?;
    let s = f.settings()?;
    let rows = parse_csv(data)?;
    let prepared = Preprocessor::fit(&rows, s.pipeline.clone())?;
    if !prepared.report.is_empty() {
        eprint!("{}", prepared.report);
    }
    let spec = s.model.spec(prepared.pre.channels(), s.pipeline.window_len);
    let mut model = Model::build(spec, &mut RngStream::new(s.train.seed))?;
    let val = (!prepared.test.is_empty()).then_some(&prepared.test);
    let history = train(&mut model, &prepared.train, val, &s.train)?;
    save_model(&model, out)?;
    prepared.pre.save(&Preprocessor::sidecar_path(out))?;
    let hist_path = history_path(out);
    let mut buf = Vec::new();
    history.write_csv(&mut buf).map_err(|e| Error::io(&hist_path, e))?;
    std::fs::write(&hist_path, buf).map_err(|e| Error::io(&hist_path, e))?;
    println!(
        "trained {} on {} samples for {} epochs; final train_mse {}",
        model.kind(),
        prepared.train.len(),
        history.len(),
        history.final_train_mse().map_or("n/a".into(), |v| format!("{v:.6}"))
    );
    Ok(())
}

fn cmd_evaluate(f: &Flags) -> Outcome {
    let (mut model, prepared) = load_with_data(f)?;
    let report = evaluate_test(&mut model, &prepared.all, &prepared.pre)?;
    let text = report.render();
    print!("{text}");
    if let Some(out) = &f.out {
        write_output(Some(out), &text)?;
    }
    Ok(())
}

fn cmd_predict(f: &Flags) -> Outcome {
    let (mut model, prepared) = load_with_data(f)?;
    let mut text = String::from("drug,quarter,predicted\n");
    for (drug, q, v) in forecast_next(&mut model, &prepared)? {
        text += &format!("{drug},{q},{v}\n");
    }
    write_output(f.out.as_deref(), &text)?;
    Ok(())
}

fn cmd_export_curve(f: &Flags) -> Outcome {
    let out = f.need(&f.out, "out")?;
    let (mut model, prepared) = load_with_data(f)?;
    let report = evaluate_test(&mut model, &prepared.all, &prepared.pre)?;
    export_curve(&report, f.drug.as_deref(), out)?;
    Ok(())
}

fn cmd_benchmark(f: &Flags) -> Outcome {
    let s = f.settings()?;
    let suite_seed = f.seed.unwrap_or(1);
    let datasets: Vec<(String, Vec<crate::data::RawRow>)> = match &f.data {
        Some(path) => vec![(path.display().to_string(), parse_csv(path)?)],
        None => generate_benchmark_suite(suite_seed)?
            .into_iter()
            .map(|(name, d)| Ok((name, crate::data::parse_csv_reader(d.to_csv_string().as_bytes())?)))
            .collect::<Result<_>>()?,
    };
    let cfg = BenchmarkConfig {
        train: s.benchmark.train.clone(),
        pipeline: s.pipeline.clone(),
        seeds: s.seeds.clone(),
        kinds: match f.kind {
            Some(k) => vec![k],
            None => ModelKind::ALL.to_vec(),
        },
    };
    let table = benchmark(&datasets, &cfg)?;
    let text = table.render_text();
    print!("{text}");
    if let Some(dir) = &f.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: Vec<u8>| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        write("benchmark.txt", text.into_bytes())?;
        let mut summary = Vec::new();
        table.write_summary_csv(&mut summary).map_err(|e| Error::io(dir, e))?;
        write("benchmark_summary.csv", summary)?;
        let mut runs = Vec::new();
        table.write_runs_csv(&mut runs).map_err(|e| Error::io(dir, e))?;
        write("benchmark_runs.csv", runs)?;
    }
    Ok(())
}

/// Run the CLI and return the process exit code: 0 success, 1 on a module
/// error, 2 on a usage error.
pub fn run(argv: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Synth(f) => cmd_synth(f),
        Command::Train(f) => cmd_train(f),
        Command::Evaluate(f) => cmd_evaluate(f),
        Command::Predict(f) => cmd_predict(f),
        Command::Benchmark(f) => cmd_benchmark(f),
        Command::ExportCurve(f) => cmd_export_curve(f),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Module(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}
