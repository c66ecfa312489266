//! `chr`: fit, apply and benchmark conformal histogram regression from the
//! command line.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chr_core::calibration::{ChrPredictor, ChrSettings};
use chr_core::cvplus::CvPlusPredictor;
use chr_core::data::{ingest_csv, read_feature_columns, split_indices, Dataset};
use chr_core::experiment::{run_experiment, DataSource, ExperimentConfig, Method};
use chr_core::metrics::{marginal_coverage, mean_width};
use chr_core::models::Support;
use chr_core::persist::{Artifact, Predictor};
use chr_core::selftest::{run_all, SelftestConfig};
use chr_core::synthetic::{generate_synthetic, SkewedLaw, SyntheticConfig};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataSpec, RunArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "chr", version, about = "Conformal histogram regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit and calibrate a predictor, then save it.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        /// Artifact directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit intervals for the rows of a CSV file with a saved predictor.
    Predict {
        /// Artifact directory written by `fit`.
        #[arg(long)]
        artifact: PathBuf,
        /// CSV file holding the predictor's feature columns.
        #[arg(long)]
        data: PathBuf,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Expected bin count; a saved predictor with another count is
        /// rejected.
        #[arg(long)]
        bins: Option<usize>,
        /// Config file whose `bins` key is checked like `--bins`.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Repeated train/calibrate/test runs comparing methods.
    Benchmark {
        #[command(flatten)]
        run: RunArgs,
        /// Per-repetition CSV output.
        #[arg(long, default_value = "benchmark.csv")]
        csv: PathBuf,
        /// Full JSON report.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the randomized differential and invariant suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset to CSV.
    Simulate {
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Target conditional skewness; the flip probability is solved for.
        #[arg(long, conflicts_with = "flip")]
        skew: Option<f64>,
        /// Probability of negating a response.
        #[arg(long)]
        flip: Option<f64>,
        #[arg(long, default_value_t = 1)]
        noise_features: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Fit { run, out } => fit(&RunConfig::resolve(&run, &[Method::Chr])?, &out)?,
        Command::Predict {
            artifact,
            data,
            out,
            bins,
            config,
        } => {
            let bins = match (bins, config) {
                (Some(b), _) => Some(b),
                (None, Some(path)) => config::FileConfig::load(&path)?.bins,
                (None, None) => None,
            };
            predict(&artifact, &data, out.as_deref(), bins)?;
        }
        Command::Benchmark { run, csv, json } => {
            benchmark(&RunConfig::resolve(&run, &[Method::Chr])?, &csv, json.as_deref())?;
        }
        Command::Selftest { seed } => return Ok(selftest(seed)),
        Command::Simulate {
            n,
            skew,
            flip,
            noise_features,
            seed,
            out,
        } => {
            let mut law = SkewedLaw::default();
            if let Some(s) = skew {
                law.flip_prob = SkewedLaw::flip_prob_for_skewness(s);
            }
            if let Some(p) = flip {
                law.flip_prob = p;
            }
            let seed = match seed {
                Some(s) => s,
                None => RunConfig::resolve(&RunArgs::default(), &[Method::Chr])?.seed,
            };
            let data = generate_synthetic(&SyntheticConfig {
                n_samples: n,
                law,
                noise_features,
                seed,
            })?;
            data.write_csv(&out)?;
            eprintln!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Train, calibration and test parts for `fit`.
fn load_parts(cfg: &RunConfig) -> Result<(Dataset, Dataset, Option<Dataset>)> {
    match &cfg.data {
        DataSpec::Synthetic { law, noise_features } => {
            let all = generate_synthetic(&SyntheticConfig {
                n_samples: cfg.n_train + cfg.n_cal + cfg.n_test,
                law: *law,
                noise_features: *noise_features,
                seed: cfg.seed,
            })?;
            let idx: Vec<usize> = (0..all.len()).collect();
            let (train, rest) = idx.split_at(cfg.n_train);
            let (cal, test) = rest.split_at(cfg.n_cal);
            let test = (!test.is_empty()).then(|| all.select(test));
            Ok((all.select(train), all.select(cal), test))
        }
        DataSpec::Csv { path, target } => {
            let data = ingest_csv(path, target).with_context(|| format!("reading {}", path.display()))?;
            let groups = split_indices(data.len(), &cfg.split, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
            let test = (!groups[2].is_empty()).then(|| data.select(&groups[2]));
            Ok((data.select(&groups[0]), data.select(&groups[1]), test))
        }
    }
}

fn settings(cfg: &RunConfig) -> ChrSettings {
    ChrSettings {
        alpha: cfg.alpha,
        bins: cfg.bins,
        levels: cfg.levels,
        start: cfg.start,
        randomize: cfg.randomize,
        seed: cfg.seed,
    }
}

fn fit(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (train, cal, test) = load_parts(cfg)?;
    let spec = cfg.model_spec();
    let predictor = match cfg.methods.as_slice() {
        [Method::Chr] => {
            let support = Support::from_responses(&train.responses)?;
            let model = spec.fit(&train.features, &train.responses, support)?;
            if !model.converged() {
                eprintln!("warning: linear quantile fit did not converge; using the best iterate");
            }
            Predictor::Split(ChrPredictor::calibrate(model, &cal.features, &cal.responses, &settings(cfg))?)
        }
        [Method::ChrCvplus] => {
            let mut pooled = train.clone();
            pooled.features = chr_core::data::Features::new(
                [train.features.values(), cal.features.values()].concat(),
                train.features.cols(),
            )?;
            pooled.responses.extend_from_slice(&cal.responses);
            Predictor::CvPlus(CvPlusPredictor::fit(&spec, &pooled.features, &pooled.responses, cfg.folds, &settings(cfg))?)
        }
        other => bail!("fit saves one chr or chr-cvplus predictor, got methods {other:?}"),
    };
    let artifact = Artifact {
        predictor,
        feature_names: train.feature_names.clone(),
        target_name: train.target_name.clone(),
        run: serde_json::to_value(cfg)?,
    };
    artifact.save(out)?;
    if let Predictor::Split(p) = &artifact.predictor {
        println!("calibrated level {} of {}", p.calibration.t_hat, p.sequence.levels);
    }
    if let Some(test) = test {
        let intervals = artifact.predictor.predict_all(&test.features);
        println!(
            "held-out coverage {:.4}, mean width {:.4} over {} rows",
            marginal_coverage(&intervals, &test.responses),
            mean_width(&intervals),
            test.len()
        );
    }
    println!("saved predictor to {}", out.display());
    Ok(())
}

fn predict(artifact_dir: &Path, data: &Path, out: Option<&Path>, bins: Option<usize>) -> Result<()> {
    let artifact = Artifact::load(artifact_dir).with_context(|| format!("loading {}", artifact_dir.display()))?;
    if let Some(bins) = bins {
        artifact.check_bins(bins)?;
    }
    let (features, responses) = read_feature_columns(data, &artifact.feature_names, &artifact.target_name)
        .with_context(|| format!("reading {}", data.display()))?;
    let intervals = artifact.predictor.predict_all(&features);

    let mut sink: Box<dyn Write> = match out {
        Some(path) => Box::new(std::io::BufWriter::new(std::fs::File::create(path)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    match &responses {
        Some(_) => writeln!(sink, "lower,upper,{},covered", artifact.target_name)?,
        None => writeln!(sink, "lower,upper")?,
    }
    for (i, (lo, hi)) in intervals.iter().enumerate() {
        match &responses {
            Some(y) => writeln!(sink, "{lo},{hi},{},{}", y[i], u8::from(*lo <= y[i] && y[i] <= *hi))?,
            None => writeln!(sink, "{lo},{hi}")?,
        }
    }
    sink.flush()?;
    if let Some(y) = &responses {
        eprintln!("coverage {:.4} over {} rows", marginal_coverage(&intervals, y), y.len());
    }
    Ok(())
}

fn benchmark(cfg: &RunConfig, csv: &Path, json: Option<&Path>) -> Result<()> {
    let source = match &cfg.data {
        DataSpec::Synthetic { law, noise_features } => DataSource::Synthetic {
            law: *law,
            noise_features: *noise_features,
        },
        DataSpec::Csv { path, target } => {
            DataSource::Table(ingest_csv(path, target).with_context(|| format!("reading {}", path.display()))?)
        }
    };
    let exp = ExperimentConfig {
        methods: cfg.methods.clone(),
        model: cfg.model_spec(),
        alpha: cfg.alpha,
        repetitions: cfg.reps,
        n_train: cfg.n_train,
        n_cal: cfg.n_cal,
        n_test: cfg.n_test,
        split: cfg.split,
        bins: cfg.bins,
        levels: cfg.levels,
        randomize: cfg.randomize,
        folds: cfg.folds,
        seed: cfg.seed,
        wsc_directions: cfg.wsc_directions,
        wsc_delta: cfg.wsc_delta,
    };
    let mut report = run_experiment(&exp, &source)?;
    if let DataSpec::Csv { path, .. } = &cfg.data {
        report.source = format!("{} from {}", report.source, path.display());
    }
    report.write_csv(csv)?;
    if let Some(path) = json {
        report.write_json(path)?;
    }
    println!("{:<12} {:>9} {:>9} {:>9} {:>9}", "method", "coverage", "se", "width", "se");
    for s in &report.summary {
        println!(
            "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            s.method.name(),
            s.coverage.mean,
            s.coverage.se,
            s.width.mean,
            s.width.se
        );
    }
    eprintln!("wrote {} rows to {}", report.records.len(), csv.display());
    Ok(())
}

fn selftest(seed: u64) -> ExitCode {
    let reports = run_all(&SelftestConfig {
        seed,
        ..SelftestConfig::default()
    });
    let mut ok = true;
    for r in &reports {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {} ({} of {} cases failed, {:.2?})", r.name, r.failures, r.cases, r.elapsed);
        if let Some(msg) = &r.first_failure {
            println!("     first failure: {msg}");
        }
        ok &= r.passed();
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
