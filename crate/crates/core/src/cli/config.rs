//! Line-based `key = value` experiment configuration.

use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::inference::{log_grid, LaplaceConfig, LaplaceScope, Optimizer, TrainConfig, VbConfig};
use crate::likelihoods::{Likelihood, LikelihoodSpec, OodWeight, DEFAULT_LABEL_SMOOTHING};
use crate::models::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Map,
    Vb,
    La,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Method::Map),
            "vb" => Ok(Method::Vb),
            "la" => Ok(Method::La),
            other => Err(Error::config(format!(
                "unknown method '{other}' (map|vb|la)"
            ))),
        }
    }
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Map => "map",
            Method::Vb => "vb",
            Method::La => "la",
        }
    }
}

/// Everything `train` needs; defaults match the toy experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: String,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub method: Method,
    pub likelihood: String,
    /// Dirichlet precision; `None` means the class count.
    pub gamma: Option<f64>,
    pub label_smoothing: f64,
    pub ood: String,
    pub ood_n: Option<usize>,
    pub ood_low: Option<f64>,
    pub ood_high: Option<f64>,
    pub ood_weight: OodWeight,
    pub seed: u64,
    pub val_size: Option<usize>,
    pub train: TrainConfig,
    pub laplace: LaplaceConfig,
    pub vb: VbConfig,
    /// Adam step size for the variational phase; the other optimiser settings are shared.
    pub vb_lr: f64,
    pub trace: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: "toy:0".to_string(),
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            method: Method::Map,
            likelihood: "cat".to_string(),
            gamma: None,
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            ood: "none".to_string(),
            ood_n: None,
            ood_low: None,
            ood_high: None,
            ood_weight: OodWeight::Default,
            seed: 0,
            val_size: None,
            train: TrainConfig {
                epochs: 200,
                batch_size: 32,
                lr: 1e-2,
                ..TrainConfig::default()
            },
            laplace: LaplaceConfig::default(),
            vb: VbConfig::default(),
            vb_lr: 1e-3,
            trace: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("'{value}' is not a valid value for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!(
            "'{value}' is not a boolean for '{key}'"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected 'key = value'", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {}", i + 1, e.message())))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        ExperimentConfig::parse(&text)
    }

    /// Sets one key, type-checking the value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = value.to_string(),
            "hidden" => self.hidden = parse_list(key, value)?,
            "activation" => self.activation = value.parse()?,
            "method" => self.method = value.parse()?,
            "likelihood" => {
                Likelihood::parse(value, 1.0)?;
                self.likelihood = value.to_string();
            }
            "gamma" => self.gamma = Some(parse(key, value)?),
            "label_smoothing" => self.label_smoothing = parse(key, value)?,
            "ood" => self.ood = value.to_string(),
            "ood_n" => self.ood_n = Some(parse(key, value)?),
            "ood_low" => self.ood_low = Some(parse(key, value)?),
            "ood_high" => self.ood_high = Some(parse(key, value)?),
            "ood_weight" => {
                self.ood_weight = match value {
                    "default" => OodWeight::Default,
                    "tempered" => OodWeight::Tempered,
                    v => OodWeight::Fixed(parse(key, v)?),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "val_size" => self.val_size = Some(parse(key, value)?),
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "optimizer" => {
                self.train.optimizer = match value {
                    "adam" => Optimizer::adam(),
                    "sgd" => Optimizer::SgdMomentum { momentum: 0.9 },
                    other => {
                        return Err(Error::config(format!(
                            "unknown optimizer '{other}' (adam|sgd)"
                        )))
                    }
                }
            }
            "momentum" => match &mut self.train.optimizer {
                Optimizer::SgdMomentum { momentum } => *momentum = parse(key, value)?,
                Optimizer::Adam { .. } => {
                    return Err(Error::config("'momentum' needs optimizer = sgd set first"))
                }
            },
            "beta1" | "beta2" | "adam_eps" => match &mut self.train.optimizer {
                Optimizer::Adam { beta1, beta2, eps } => {
                    let slot = match key {
                        "beta1" => beta1,
                        "beta2" => beta2,
                        _ => eps,
                    };
                    *slot = parse(key, value)?;
                }
                Optimizer::SgdMomentum { .. } => {
                    return Err(Error::config(format!(
                        "'{key}' only applies to optimizer = adam"
                    )))
                }
            },
            "lr" => self.train.lr = parse(key, value)?,
            "weight_decay" => self.train.weight_decay = parse(key, value)?,
            "cosine_decay" => self.train.cosine_decay = parse_bool(key, value)?,
            "la_grid" => self.laplace.prior_grid = parse_grid(value)?,
            "la_include_ood" => self.laplace.include_ood_in_fisher = parse_bool(key, value)?,
            "la_samples" => self.laplace.predict_samples = parse(key, value)?,
            "la_scope" => self.laplace.scope = value.parse::<LaplaceScope>()?,
            "vb_lr" => self.vb_lr = parse(key, value)?,
            "vb_tau" => self.vb.tau = parse(key, value)?,
            "vb_prior_precision" => self.vb.prior_precision = parse(key, value)?,
            "vb_elbo_samples" => self.vb.elbo_samples = parse(key, value)?,
            "vb_samples" => self.vb.predict_samples = parse(key, value)?,
            "vb_init_log_std" => self.vb.init_log_std = parse(key, value)?,
            "vb_freeze_log_std" => self.vb.freeze_log_std = parse_bool(key, value)?,
            "trace" => self.trace = Some(PathBuf::from(value)),
            other => return Err(Error::config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// The likelihood for a data set with `c` classes.
    pub fn likelihood_spec(&self, c: usize) -> Result<LikelihoodSpec> {
        let gamma = self.gamma.unwrap_or(c as f64);
        let mut spec = LikelihoodSpec::new(Likelihood::parse(&self.likelihood, gamma)?)
            .with_ood_weight(self.ood_weight);
        spec.label_smoothing = self.label_smoothing;
        spec.validate()?;
        Ok(spec)
    }
}

/// `LOW:HIGH:N` (log-spaced) or a comma-separated list.
fn parse_grid(value: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = value.split(':').collect();
    if let [lo, hi, n] = parts.as_slice() {
        let lo: f64 = parse("la_grid", lo)?;
        let hi: f64 = parse("la_grid", hi)?;
        let n: usize = parse("la_grid", n)?;
        if !(0.0 < lo && lo <= hi) || n == 0 {
            return Err(Error::config("la_grid needs 0 < LOW ≤ HIGH and N ≥ 1"));
        }
        return Ok(log_grid(lo, hi, n));
    }
    parse_list("la_grid", value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = ExperimentConfig::parse(
            "# toy run\ndata = toy:3\nhidden = 16, 8\nmethod = la   # laplace\nlikelihood = oe\nla_grid = 1e-2:1e2:5\nepochs=7\n",
        )
        .unwrap();
        assert_eq!(cfg.data, "toy:3");
        assert_eq!(cfg.hidden, vec![16, 8]);
        assert_eq!(cfg.method, Method::La);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.laplace.prior_grid.len(), 5);
        assert_eq!(cfg.likelihood_spec(4).unwrap().likelihood, Likelihood::Oe);
        assert_eq!(cfg.vb_lr, 1e-3);
        assert_eq!(ExperimentConfig::parse("vb_lr = 5e-3\n").unwrap().vb_lr, 5e-3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ExperimentConfig::parse("epochs = 3\n\nbogus = 1\n").unwrap_err();
        assert!(
            matches!(&e, Error::Config(m) if m.starts_with("line 3:") && m.contains("bogus")),
            "{e}"
        );
        let e = ExperimentConfig::parse("lr = fast\n").unwrap_err();
        assert!(e.to_string().contains("line 1"));
        let e = ExperimentConfig::parse("no equals sign\n").unwrap_err();
        assert!(e.to_string().contains("line 1"));
        assert!(ExperimentConfig::parse("method = mcmc\n").is_err());
        assert!(ExperimentConfig::parse("momentum = 0.5\n").is_err());
        assert!(ExperimentConfig::parse("optimizer = sgd\nmomentum = 0.5\n").is_ok());
    }

    #[test]
    fn gamma_defaults_to_class_count() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("likelihood", "sl").unwrap();
        assert_eq!(
            cfg.likelihood_spec(10).unwrap().likelihood,
            Likelihood::SoftLabel { gamma: 10.0 }
        );
    }
}
