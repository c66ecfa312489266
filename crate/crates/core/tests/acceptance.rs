//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chr_core::data::ingest_csv;
use chr_core::experiment::{run_experiment, DataSource, ExperimentConfig, ExperimentReport, Method};
use chr_core::models::ModelSpec;
use chr_core::selftest::{density_suite, kernel_suite, nesting_suite, trim_mean_suite, SuiteReport};
use chr_core::synthetic::SkewedLaw;

const SEED: u64 = 20_240_601;

type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

struct Outcome {
    passed: bool,
    detail: String,
}

fn suite(report: SuiteReport, limit: Option<Duration>) -> Outcome {
    let in_time = limit.is_none_or(|l| report.elapsed < l);
    let mut detail = format!(
        "{}: {} of {} cases failed in {:.2?}",
        report.name, report.failures, report.cases, report.elapsed
    );
    if let Some(msg) = &report.first_failure {
        detail.push_str(&format!("; first failure {msg}"));
    }
    Outcome {
        passed: report.passed() && in_time,
        detail,
    }
}

fn synthetic(flip_prob: f64) -> DataSource {
    DataSource::Synthetic {
        law: SkewedLaw::with_flip_prob(flip_prob),
        noise_features: 0,
    }
}

fn base(methods: Vec<Method>, model: ModelSpec) -> ExperimentConfig {
    ExperimentConfig {
        methods,
        model,
        alpha: 0.1,
        repetitions: 100,
        n_train: 1000,
        n_cal: 1000,
        n_test: 1000,
        bins: 100,
        wsc_directions: 0,
        seed: SEED,
        ..ExperimentConfig::default()
    }
}

fn run(cfg: &ExperimentConfig, source: &DataSource) -> (ExperimentReport, Duration) {
    let start = Instant::now();
    let report = run_experiment(cfg, source).expect("experiment runs");
    (report, start.elapsed())
}

fn width(report: &ExperimentReport, method: Method) -> f64 {
    report.summary_for(method).expect("method was run").width.mean
}

fn coverage_criterion() -> Outcome {
    let cfg = ExperimentConfig {
        n_test: 2000,
        ..base(vec![Method::Chr], ModelSpec::knn())
    };
    let (report, elapsed) = run(&cfg, &synthetic(0.0));
    let c = &report.summary[0].coverage;
    Outcome {
        passed: (0.89..=0.91).contains(&c.mean) && elapsed < Duration::from_secs(600),
        detail: format!("k-NN, 100 reps: mean coverage {:.4} (se {:.4}) in {elapsed:.1?}", c.mean, c.se),
    }
}

fn skewness_criterion() -> Outcome {
    let cfg = base(vec![Method::Chr, Method::Cqr], ModelSpec::oracle(SkewedLaw::with_flip_prob(0.0)));
    let (report, elapsed) = run(&cfg, &synthetic(0.0));
    let (chr, cqr) = (width(&report, Method::Chr), width(&report, Method::Cqr));
    Outcome {
        passed: chr <= 0.8 * cqr && elapsed < Duration::from_secs(300),
        detail: format!(
            "oracle model, maximal skew: CHR width {chr:.4}, CQR width {cqr:.4}, ratio {:.3} in {elapsed:.1?}",
            chr / cqr
        ),
    }
}

fn symmetry_criterion() -> Outcome {
    let cfg = base(vec![Method::Chr, Method::Cqr], ModelSpec::oracle(SkewedLaw::with_flip_prob(0.5)));
    let (report, _) = run(&cfg, &synthetic(0.5));
    let (chr, cqr) = (width(&report, Method::Chr), width(&report, Method::Cqr));
    let gap = (chr - cqr).abs() / cqr;
    Outcome {
        passed: gap <= 0.1,
        detail: format!("oracle model, symmetric law: CHR width {chr:.4}, CQR width {cqr:.4}, relative gap {gap:.3}"),
    }
}

/// Bins grow with the calibration size so that discretization error
/// vanishes with `n`. Calibration sets are nested across sizes and share
/// training and test samples.
fn convergence_criterion() -> Outcome {
    let mut gaps = Vec::new();
    let mut parts = Vec::new();
    for n_cal in [500, 2000, 5000] {
        let cfg = ExperimentConfig {
            n_cal,
            bins: n_cal / 5,
            ..base(vec![Method::Chr], ModelSpec::oracle(SkewedLaw::with_flip_prob(0.0)))
        };
        let (report, elapsed) = run(&cfg, &synthetic(0.0));
        let s = &report.summary[0];
        let oracle = s.oracle_width.as_ref().expect("synthetic data has an oracle").mean;
        let gap = s.width.mean - oracle;
        parts.push(format!(
            "n={n_cal}: width {:.4} vs oracle {oracle:.4}, gap {gap:.4} ({:.2}%) in {elapsed:.1?}",
            s.width.mean,
            100.0 * gap / oracle
        ));
        gaps.push((gap, oracle));
    }
    let positive = gaps.iter().all(|&(g, _)| g > 0.0);
    let decreasing = gaps.windows(2).all(|w| w[1].0 < w[0].0);
    let (last, oracle) = gaps[gaps.len() - 1];
    Outcome {
        passed: positive && decreasing && last <= 0.05 * oracle,
        detail: parts.join("; "),
    }
}

fn cvplus_criterion() -> Outcome {
    // CV+ scores the pooled training and calibration samples
    let cfg = ExperimentConfig {
        n_train: 500,
        n_cal: 500,
        folds: 10,
        ..base(vec![Method::ChrCvplus], ModelSpec::knn())
    };
    let (report, elapsed) = run(&cfg, &synthetic(0.0));
    let c = &report.summary[0].coverage;
    Outcome {
        passed: c.mean >= 0.80,
        detail: format!(
            "K=10 on 1000 pooled samples, 100 reps: mean coverage {:.4} (se {:.4}) in {elapsed:.1?}",
            c.mean, c.se
        ),
    }
}

fn csv_criterion() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/sample.csv");
    let data = ingest_csv(&path, "y").expect("bundled sample parses");
    let rows = data.len();
    let cfg = ExperimentConfig {
        repetitions: 20,
        split: [0.4, 0.4, 0.2],
        bins: 50,
        ..base(vec![Method::Chr], ModelSpec::knn())
    };
    let (report, _) = run(&cfg, &DataSource::Table(data));
    let c = &report.summary[0].coverage;
    Outcome {
        passed: rows == 500 && (0.85..=0.95).contains(&c.mean),
        detail: format!("{rows}-row sample, 20 random splits: mean coverage {:.4} (se {:.4})", c.mean, c.se),
    }
}

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("shortest-mass kernel", Box::new(|| suite(kernel_suite(1000, SEED), Some(Duration::from_secs(10))))),
        ("nesting", Box::new(|| suite(nesting_suite(10_000, SEED), Some(Duration::from_secs(60))))),
        ("marginal coverage", Box::new(coverage_criterion)),
        ("randomized trim mean", Box::new(|| suite(trim_mean_suite(100_000, SEED), None))),
        ("skewness advantage", Box::new(skewness_criterion)),
        ("symmetry equivalence", Box::new(symmetry_criterion)),
        ("oracle convergence", Box::new(convergence_criterion)),
        ("CV+ coverage", Box::new(cvplus_criterion)),
        ("distribution invariants", Box::new(|| suite(density_suite(10_000, SEED), None))),
        ("CSV smoke run", Box::new(csv_criterion)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = check();
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {:>2} {name}: {}", i + 1, outcome.detail);
        failed += usize::from(!outcome.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
