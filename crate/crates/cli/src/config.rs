//! Flat `section.key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Unset keys keep the defaults of the `rotated-gaussians-5`
//! benchmark.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use drive_core::adaptation::{AdaptationConfig, PretrainConfig, Variant};
use drive_core::data::{Family, ShiftSpec};

use crate::CliError;

/// Where the three data splits come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generated per seed from this spec (its `seed` field is ignored).
    Synthetic(ShiftSpec),
    Csv {
        source: PathBuf,
        target: PathBuf,
        broad: PathBuf,
        num_classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub pretrain: PretrainConfig,
    pub adapt: AdaptationConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic(ShiftSpec::rotated_gaussians(0)),
            pretrain: PretrainConfig::default(),
            adapt: AdaptationConfig::default(),
            seeds: vec![0],
            out: PathBuf::from("drive-out"),
        }
    }
}

fn field_error(line: usize, key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: `{key}`: {msg}"))
}

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| field_error(line, key, format!("cannot parse `{raw}`: {e}")))
}

fn parse_list<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|p| parse_value(line, key, p.trim())).collect()
}

fn parse_auto<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    if raw == "auto" {
        Ok(None)
    } else {
        parse_value(line, key, raw).map(Some)
    }
}

fn join<T: std::fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

#[derive(Default)]
struct CsvPaths {
    source: Option<PathBuf>,
    target: Option<PathBuf>,
    broad: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut spec = ShiftSpec::rotated_gaussians(0);
        let mut csv = CsvPaths::default();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw_line.split_once('#').map_or(raw_line, |(before, _)| before).trim();
            if trimmed.is_empty() {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {line}: expected `key = value`, got `{trimmed}`")))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(line, key, value, &mut spec, &mut csv)?;
        }
        cfg.data = match (csv.source, csv.target, csv.broad) {
            (None, None, None) => DataSource::Synthetic(spec),
            (Some(source), Some(target), Some(broad)) => DataSource::Csv {
                source,
                target,
                broad,
                num_classes: spec.num_classes,
            },
            _ => {
                return Err(CliError::Config(
                    "data.source_csv, data.target_csv and data.broad_csv must be set together".into(),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, v: &str, spec: &mut ShiftSpec, csv: &mut CsvPaths) -> Result<(), CliError> {
        let a = &mut self.adapt;
        let p = &mut self.pretrain;
        match key {
            "data.family" => spec.family = parse_value::<Family>(line, key, v)?,
            "data.classes" => spec.num_classes = parse_value(line, key, v)?,
            "data.dim" => spec.dim = parse_value(line, key, v)?,
            "data.rotation_deg" => spec.rotation_deg = parse_value(line, key, v)?,
            "data.translation" => spec.translation = parse_list(line, key, v)?,
            "data.noise_ratio" => spec.noise_ratio = parse_value(line, key, v)?,
            "data.per_class" => spec.per_class = parse_value(line, key, v)?,
            "data.source_csv" => csv.source = Some(PathBuf::from(v)),
            "data.target_csv" => csv.target = Some(PathBuf::from(v)),
            "data.broad_csv" => csv.broad = Some(PathBuf::from(v)),
            "model.source_hidden" => p.source_hidden = parse_list(line, key, v)?,
            "model.prior_hidden" => p.prior_hidden = parse_list(line, key, v)?,
            "model.prior_features" => p.prior_feature_dim = parse_value(line, key, v)?,
            "model.prior_temperature" => p.prior_temperature = parse_value(line, key, v)?,
            "pretrain.source_epochs" => p.source.epochs = parse_value(line, key, v)?,
            "pretrain.prior_epochs" => p.prior.epochs = parse_value(line, key, v)?,
            "pretrain.lr" => {
                let lr = parse_value(line, key, v)?;
                p.source.lr = lr;
                p.prior.lr = lr;
            }
            "pretrain.batch_size" => {
                let b = parse_value(line, key, v)?;
                p.source.batch_size = b;
                p.prior.batch_size = b;
            }
            "adapt.lambda" => a.lambda = parse_value(line, key, v)?,
            "adapt.beta" => a.beta = parse_value(line, key, v)?,
            "adapt.xi1" => a.xi1 = parse_value(line, key, v)?,
            "adapt.xi2" => a.xi2 = parse_value(line, key, v)?,
            "adapt.alpha_balance" => a.alpha_balance = parse_value(line, key, v)?,
            "adapt.tau" => a.tau = parse_value(line, key, v)?,
            "adapt.top_n" => a.top_n = parse_auto(line, key, v)?,
            "adapt.pgd_steps" => a.pgd_steps = parse_value(line, key, v)?,
            "adapt.radius" => a.radius = parse_auto(line, key, v)?,
            "adapt.eta0" => a.eta0 = parse_value(line, key, v)?,
            "adapt.eta_min" => a.eta_clip.0 = parse_value(line, key, v)?,
            "adapt.eta_max" => a.eta_clip.1 = parse_value(line, key, v)?,
            "adapt.epochs" => a.epochs = parse_value(line, key, v)?,
            "adapt.batch_size" => a.batch_size = parse_value(line, key, v)?,
            "adapt.lr_context" => a.lr_context = parse_value(line, key, v)?,
            "adapt.lr_target" => a.lr_target = parse_value(line, key, v)?,
            "variant.entropy_off" => a.variant.entropy_off = parse_value(line, key, v)?,
            "variant.perturb_off" => a.variant.perturb_off = parse_value(line, key, v)?,
            "variant.dynamic_eta_off" => a.variant.dynamic_eta_off = parse_value(line, key, v)?,
            "run.seeds" => self.seeds = parse_list(line, key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            _ => return Err(field_error(line, key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("`run.seeds`: at least one seed is required".into()));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| CliError::Config(format!("data: {e}")))?;
        }
        self.adapt
            .validate()
            .map_err(|e| CliError::Config(format!("adapt: {e}")))?;
        let classes = match &self.data {
            DataSource::Synthetic(s) => s.num_classes,
            DataSource::Csv { num_classes, .. } => *num_classes,
        };
        if let Some(n) = self.adapt.top_n {
            if n >= classes {
                return Err(CliError::Config(format!(
                    "`adapt.top_n`: {n} must be smaller than the class count {classes}"
                )));
            }
        }
        let p = &self.pretrain;
        if p.source.batch_size == 0 || p.prior_feature_dim == 0 || !(p.prior_temperature > 0.0) {
            return Err(CliError::Config(
                "pretrain: batch size, prior feature width and temperature must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.adapt.variant = variant;
        c
    }

    /// Every key with its effective value, one per line, in a fixed order.
    /// Parsing the output yields an equal config.
    pub fn to_flat_string(&self) -> String {
        let mut s = String::new();
        let a = &self.adapt;
        let p = &self.pretrain;
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.data {
            DataSource::Synthetic(spec) => {
                put("data.family", spec.family.to_string());
                put("data.classes", spec.num_classes.to_string());
                put("data.dim", spec.dim.to_string());
                put("data.rotation_deg", format!("{:?}", spec.rotation_deg));
                put("data.translation", join(&spec.translation));
                put("data.noise_ratio", format!("{:?}", spec.noise_ratio));
                put("data.per_class", spec.per_class.to_string());
            }
            DataSource::Csv {
                source,
                target,
                broad,
                num_classes,
            } => {
                put("data.classes", num_classes.to_string());
                put("data.source_csv", source.display().to_string());
                put("data.target_csv", target.display().to_string());
                put("data.broad_csv", broad.display().to_string());
            }
        }
        put("model.source_hidden", join(&p.source_hidden));
        put("model.prior_hidden", join(&p.prior_hidden));
        put("model.prior_features", p.prior_feature_dim.to_string());
        put("model.prior_temperature", format!("{:?}", p.prior_temperature));
        put("pretrain.source_epochs", p.source.epochs.to_string());
        put("pretrain.prior_epochs", p.prior.epochs.to_string());
        put("pretrain.lr", format!("{:?}", p.source.lr));
        put("pretrain.batch_size", p.source.batch_size.to_string());
        put("adapt.lambda", format!("{:?}", a.lambda));
        put("adapt.beta", format!("{:?}", a.beta));
        put("adapt.xi1", format!("{:?}", a.xi1));
        put("adapt.xi2", format!("{:?}", a.xi2));
        put("adapt.alpha_balance", format!("{:?}", a.alpha_balance));
        put("adapt.tau", format!("{:?}", a.tau));
        put("adapt.top_n", a.top_n.map_or("auto".into(), |n| n.to_string()));
        put("adapt.pgd_steps", a.pgd_steps.to_string());
        put("adapt.radius", a.radius.map_or("auto".into(), |r| format!("{r:?}")));
        put("adapt.eta0", format!("{:?}", a.eta0));
        put("adapt.eta_min", format!("{:?}", a.eta_clip.0));
        put("adapt.eta_max", format!("{:?}", a.eta_clip.1));
        put("adapt.epochs", a.epochs.to_string());
        put("adapt.batch_size", a.batch_size.to_string());
        put("adapt.lr_context", format!("{:?}", a.lr_context));
        put("adapt.lr_target", format!("{:?}", a.lr_target));
        put("variant.entropy_off", a.variant.entropy_off.to_string());
        put("variant.perturb_off", a.variant.perturb_off.to_string());
        put("variant.dynamic_eta_off", a.variant.dynamic_eta_off.to_string());
        put("run.seeds", join(&self.seeds));
        put("run.out", self.out.display().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("# nothing\n\n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn values_are_applied() {
        let cfg = ExperimentConfig::parse(
            "adapt.lambda = 0.25\nrun.seeds = 3, 4\nadapt.radius = 0.7\nvariant.perturb_off = true\ndata.translation = 1,2\n",
        )
        .unwrap();
        assert_eq!(cfg.adapt.lambda, 0.25);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.adapt.radius, Some(0.7));
        assert!(cfg.adapt.variant.perturb_off);
        match cfg.data {
            DataSource::Synthetic(s) => assert_eq!(s.translation, vec![1.0, 2.0]),
            _ => panic!(),
        }
    }

    #[test]
    fn errors_name_line_and_key() {
        let err = ExperimentConfig::parse("adapt.tau = 1\nadapt.lambda = abc\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("adapt.lambda"), "{msg}");

        let err = ExperimentConfig::parse("adapt.bogus = 1").unwrap_err();
        assert!(err.to_string().contains("unknown key"));

        let err = ExperimentConfig::parse("run.seeds =").unwrap_err();
        assert!(err.to_string().contains("run.seeds"));

        let err = ExperimentConfig::parse("no equals sign").unwrap_err();
        assert!(err.to_string().contains("line 1"));

        assert!(ExperimentConfig::parse("data.source_csv = a.csv").is_err());
        assert!(ExperimentConfig::parse("adapt.batch_size = 1").is_err());
    }

    #[test]
    fn flat_string_round_trips() {
        let cfg = ExperimentConfig::parse("adapt.tau = 0.1234567890123\nadapt.top_n = auto  # trailing\nrun.seeds = 1,9").unwrap();
        let back = ExperimentConfig::parse(&cfg.to_flat_string()).unwrap();
        assert_eq!(back, cfg);

        let csv = ExperimentConfig::parse(
            "data.classes = 3\ndata.source_csv = s.csv\ndata.target_csv = t.csv\ndata.broad_csv = b.csv",
        )
        .unwrap();
        assert_eq!(ExperimentConfig::parse(&csv.to_flat_string()).unwrap(), csv);
    }
}
