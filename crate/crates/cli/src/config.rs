//! Run configuration: a flat TOML file, overridden field by field by flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use chr_core::experiment::Method;
use chr_core::models::{ModelKind, ModelSpec};
use chr_core::synthetic::SkewedLaw;
use clap::Args;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "CHR_SEED";

/// A single value or a list, so that `method = "chr"` and
/// `method = ["chr", "cqr"]` both parse.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<String> {
        match self {
            Self::One(s) => vec![s],
            Self::Many(v) => v,
        }
    }
}

/// Every key of the config file. All keys are optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<String>,
    pub target: Option<String>,
    pub method: Option<OneOrMany>,
    pub model: Option<String>,
    pub knn_k: Option<usize>,
    pub alpha: Option<f64>,
    pub bins: Option<usize>,
    pub levels: Option<usize>,
    pub start: Option<usize>,
    pub randomize: Option<bool>,
    pub seed: Option<u64>,
    pub split: Option<Vec<f64>>,
    pub folds: Option<usize>,
    pub reps: Option<usize>,
    pub n_train: Option<usize>,
    pub n_cal: Option<usize>,
    pub n_test: Option<usize>,
    pub wsc_directions: Option<usize>,
    pub wsc_delta: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Flags shared by the commands that fit or evaluate models.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat TOML file with any of the options below; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `synthetic[:skew=S|flip=P][,noise=K]` or a CSV path.
    #[arg(long)]
    pub data: Option<String>,
    /// Target column of CSV data.
    #[arg(long)]
    pub target: Option<String>,
    /// Interval method; repeat for several.
    #[arg(long = "method")]
    pub methods: Vec<String>,
    /// Base model: knn, linear or oracle (synthetic data only).
    #[arg(long)]
    pub model: Option<String>,
    /// Neighbour count of the k-NN model.
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Level resolution T; defaults to the calibration size.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Starting level; defaults to round((1 - alpha) T).
    #[arg(long)]
    pub start: Option<usize>,
    /// Disable the randomized trim.
    #[arg(long)]
    pub no_randomize: bool,
    /// Seed; falls back to the config file, then to $CHR_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train,calibration,test fractions for CSV data.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
    /// Folds for chr-cvplus.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_cal: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Worst-slab directions; 0 skips the metric.
    #[arg(long)]
    pub wsc_directions: Option<usize>,
    #[arg(long)]
    pub wsc_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSpec {
    Synthetic { law: SkewedLaw, noise_features: usize },
    Csv { path: PathBuf, target: String },
}

impl DataSpec {
    pub fn parse(text: &str, target: &str) -> Result<Self> {
        let Some(rest) = text.strip_prefix("synthetic") else {
            return Ok(Self::Csv {
                path: PathBuf::from(text),
                target: target.to_owned(),
            });
        };
        let mut law = SkewedLaw::default();
        let mut noise_features = 0;
        let options = match rest {
            "" => "",
            _ => rest.strip_prefix(':').with_context(|| format!("malformed data source `{text}`"))?,
        };
        for option in options.split(',').filter(|s| !s.is_empty()) {
            let (key, value) = option
                .split_once('=')
                .with_context(|| format!("expected key=value in `{option}`"))?;
            match key {
                "skew" => law.flip_prob = SkewedLaw::flip_prob_for_skewness(value.parse()?),
                "flip" => law.flip_prob = value.parse()?,
                "noise" => noise_features = value.parse()?,
                _ => bail!("unknown synthetic option `{key}`"),
            }
        }
        law.validate()?;
        Ok(Self::Synthetic { law, noise_features })
    }

    pub fn law(&self) -> Option<SkewedLaw> {
        match self {
            Self::Synthetic { law, .. } => Some(*law),
            Self::Csv { .. } => None,
        }
    }
}

/// Fully resolved settings; stored with every artifact and report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSpec,
    pub methods: Vec<Method>,
    pub model: ModelKind,
    pub knn_k: Option<usize>,
    pub alpha: f64,
    pub bins: usize,
    pub levels: Option<usize>,
    pub start: Option<usize>,
    pub randomize: bool,
    pub seed: u64,
    pub split: [f64; 3],
    pub folds: usize,
    pub reps: usize,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub wsc_directions: usize,
    pub wsc_delta: f64,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not a seed"))?)),
        Err(_) => Ok(None),
    }
}

impl RunConfig {
    /// Flags over file over defaults. `default_methods` applies when
    /// neither names a method.
    pub fn resolve(args: &RunArgs, default_methods: &[Method]) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let target = args.target.clone().or(file.target).unwrap_or_else(|| "y".into());
        let data = args.data.clone().or(file.data).unwrap_or_else(|| "synthetic".into());
        let method_names = if args.methods.is_empty() {
            file.method.map(OneOrMany::into_vec).unwrap_or_default()
        } else {
            args.methods.clone()
        };
        let methods = if method_names.is_empty() {
            default_methods.to_vec()
        } else {
            method_names.iter().map(|m| Method::from_str(m)).collect::<Result<Vec<_>, _>>()?
        };
        let model = args.model.clone().or(file.model).unwrap_or_else(|| "knn".into());
        let split = args.split.clone().or(file.split).unwrap_or_else(|| vec![0.4, 0.4, 0.2]);
        ensure!(split.len() == 3, "split needs three fractions, got {}", split.len());
        let seed = match args.seed.or(file.seed) {
            Some(seed) => seed,
            None => env_seed()?.unwrap_or(0),
        };
        let cfg = Self {
            data: DataSpec::parse(&data, &target)?,
            methods,
            model: model.parse()?,
            knn_k: args.knn_k.or(file.knn_k),
            alpha: args.alpha.or(file.alpha).unwrap_or(0.1),
            bins: args.bins.or(file.bins).unwrap_or(100),
            levels: args.levels.or(file.levels),
            start: args.start.or(file.start),
            randomize: !args.no_randomize && file.randomize.unwrap_or(true),
            seed,
            split: [split[0], split[1], split[2]],
            folds: args.folds.or(file.folds).unwrap_or(10),
            reps: args.reps.or(file.reps).unwrap_or(10),
            n_train: args.n_train.or(file.n_train).unwrap_or(1000),
            n_cal: args.n_cal.or(file.n_cal).unwrap_or(1000),
            n_test: args.n_test.or(file.n_test).unwrap_or(1000),
            wsc_directions: args.wsc_directions.or(file.wsc_directions).unwrap_or(1000),
            wsc_delta: args.wsc_delta.or(file.wsc_delta).unwrap_or(0.1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha > 0.0 && self.alpha < 1.0, "alpha must lie in (0, 1), got {}", self.alpha);
        ensure!(self.bins >= 1, "bins must be at least 1");
        ensure!(
            self.split.iter().all(|&f| f >= 0.0) && (self.split.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
            "split fractions must be non-negative and sum to 1, got {:?}",
            self.split
        );
        if let (Some(levels), Some(start)) = (self.levels, self.start) {
            ensure!(start <= levels, "start level {start} exceeds {levels} levels");
        }
        if self.model == ModelKind::Oracle {
            ensure!(self.data.law().is_some(), "the oracle model needs synthetic data");
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = match self.model {
            ModelKind::Knn => ModelSpec::knn(),
            ModelKind::Linear => ModelSpec::linear(),
            ModelKind::Oracle => ModelSpec::oracle(self.data.law().expect("validated")),
        };
        spec.knn_k = self.knn_k;
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn synthetic_sources() {
        let DataSpec::Synthetic { law, noise_features } = DataSpec::parse("synthetic:skew=0,noise=2", "y").unwrap() else {
            panic!("expected synthetic");
        };
        assert_eq!(law.flip_prob, 0.5);
        assert_eq!(noise_features, 2);
        let DataSpec::Synthetic { law, .. } = DataSpec::parse("synthetic:skew=3", "y").unwrap() else {
            panic!("expected synthetic");
        };
        assert_eq!(law.flip_prob, 0.0);
        assert!(DataSpec::parse("synthetic:flip=2", "y").is_err());
        assert!(DataSpec::parse("synthetic:colour=1", "y").is_err());
        assert!(matches!(DataSpec::parse("data/x.csv", "t").unwrap(), DataSpec::Csv { .. }));
    }

    #[test]
    fn flags_override_file() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "alpha = 0.2\nbins = 50\nmethod = [\"chr\", \"cqr\"]\nseed = 4\nsplit = [0.5, 0.3, 0.2]").unwrap();
        let args = RunArgs {
            config: Some(file.path().to_path_buf()),
            bins: Some(70),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&args, &[Method::Chr]).unwrap();
        assert_eq!((cfg.alpha, cfg.bins, cfg.seed), (0.2, 70, 4));
        assert_eq!(cfg.methods, vec![Method::Chr, Method::Cqr]);
        assert_eq!(cfg.split, [0.5, 0.3, 0.2]);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let bad = |args: RunArgs| RunConfig::resolve(&args, &[Method::Chr]).is_err();
        assert!(bad(RunArgs { alpha: Some(1.5), ..Default::default() }));
        assert!(bad(RunArgs { bins: Some(0), ..Default::default() }));
        assert!(bad(RunArgs { split: Some(vec![0.5, 0.5, 0.5]), ..Default::default() }));
        assert!(bad(RunArgs { methods: vec!["bart".into()], ..Default::default() }));
        assert!(bad(RunArgs {
            model: Some("oracle".into()),
            data: Some("file.csv".into()),
            ..Default::default()
        }));
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "colour = 3").unwrap();
        assert!(bad(RunArgs {
            config: Some(file.path().to_path_buf()),
            ..Default::default()
        }));
    }
}
