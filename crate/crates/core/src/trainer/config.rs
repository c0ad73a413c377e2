use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::sha256_hex;
use crate::diffmath::AdamConfig;
use crate::encoder::Propagation;
use crate::objectives::{ContrastiveConfig, SslScope};
use crate::viewgen::HardConcrete;
use crate::{Error, Result};

/// Which pair of contrastive views the main model is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Generated view versus denoised view.
    #[default]
    Full,
    /// Two random edge-drop subgraphs; no generators.
    EdgeDrop,
    /// Two independent generated views.
    GenGen,
    /// Generators trained without their ranking terms.
    NoTask,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::EdgeDrop,
        Variant::GenGen,
        Variant::NoTask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::EdgeDrop => "edge_drop",
            Variant::GenGen => "gen_gen",
            Variant::NoTask => "no_task",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (full, edge_drop, gen_gen, no_task)"
                ))
            })
    }
}

/// Where the generators' ranking batches come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GenBatch {
    /// The batch of the preceding upper step.
    #[default]
    Reuse,
    /// A fresh batch from the same sampler.
    Resample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layers: usize,
    pub dim: usize,
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub variant: Variant,
    pub edge_drop_ratio: f64,
    pub lc_weight: f64,
    pub neg_ratio: usize,
    pub eval_every: usize,
    pub propagation: Propagation,
    pub ssl_scope: SslScope,
    pub gen_batch: GenBatch,
    pub hc_beta: f64,
    pub hc_gamma: f64,
    pub hc_zeta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hc = HardConcrete::default();
        TrainConfig {
            layers: 2,
            dim: 32,
            tau: 0.2,
            lambda1: 0.1,
            lambda2: 1e-5,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 2048,
            max_epochs: 100,
            patience: 10,
            seed: 2023,
            variant: Variant::Full,
            edge_drop_ratio: 0.1,
            lc_weight: 1e-2,
            neg_ratio: 1,
            eval_every: 1,
            propagation: Propagation::Residual,
            ssl_scope: SslScope::Batch,
            gen_batch: GenBatch::Reuse,
            hc_beta: hc.beta,
            hc_gamma: hc.gamma,
            hc_zeta: hc.zeta,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_enum<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit enums serialise as strings"),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 23] = [
        "layers",
        "dim",
        "tau",
        "lambda1",
        "lambda2",
        "lr",
        "beta1",
        "beta2",
        "batch_size",
        "max_epochs",
        "patience",
        "seed",
        "variant",
        "edge_drop_ratio",
        "lc_weight",
        "neg_ratio",
        "eval_every",
        "propagation",
        "ssl_scope",
        "gen_batch",
        "hc_beta",
        "hc_gamma",
        "hc_zeta",
    ];

    /// Sets one field from its textual value. Keys are the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "layers" => self.layers = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "lambda1" => self.lambda1 = parse(key, v)?,
            "lambda2" => self.lambda2 = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "variant" => self.variant = v.parse()?,
            "edge_drop_ratio" => self.edge_drop_ratio = parse(key, v)?,
            "lc_weight" => self.lc_weight = parse(key, v)?,
            "neg_ratio" => self.neg_ratio = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "propagation" => self.propagation = parse_enum(key, v)?,
            "ssl_scope" => self.ssl_scope = parse_enum(key, v)?,
            "gen_batch" => self.gen_batch = parse_enum(key, v)?,
            "hc_beta" => self.hc_beta = parse(key, v)?,
            "hc_gamma" => self.hc_gamma = parse(key, v)?,
            "hc_zeta" => self.hc_zeta = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "layers" => self.layers.to_string(),
            "dim" => self.dim.to_string(),
            "tau" => self.tau.to_string(),
            "lambda1" => self.lambda1.to_string(),
            "lambda2" => self.lambda2.to_string(),
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            "variant" => self.variant.to_string(),
            "edge_drop_ratio" => self.edge_drop_ratio.to_string(),
            "lc_weight" => self.lc_weight.to_string(),
            "neg_ratio" => self.neg_ratio.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "propagation" => enum_name(&self.propagation),
            "ssl_scope" => enum_name(&self.ssl_scope),
            "gen_batch" => enum_name(&self.gen_batch),
            "hc_beta" => self.hc_beta.to_string(),
            "hc_gamma" => self.hc_gamma.to_string(),
            "hc_zeta" => self.hc_zeta.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// quotes around values are stripped.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('[') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let v = v.trim().trim_matches('"');
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Every field as `key = value`, in declaration order.
    pub fn to_kv_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap()))
            .collect()
    }

    /// Hex SHA-256 of [`to_kv_text`](Self::to_kv_text).
    pub fn hash(&self) -> String {
        sha256_hex(&[self.to_kv_text().as_bytes()])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.edge_drop_ratio) {
            return bad("edge_drop_ratio must lie in [0, 1]");
        }
        for (k, v) in [
            ("lr", self.lr),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lc_weight", self.lc_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be a non-negative number")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        self.contrastive().validate()?;
        self.hard_concrete().validate()?;
        Ok(())
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            tau: self.tau,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            scope: self.ssl_scope,
        }
    }

    pub fn hard_concrete(&self) -> HardConcrete {
        HardConcrete {
            beta: self.hc_beta,
            gamma: self.hc_gamma,
            zeta: self.hc_zeta,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    /// Whether the contrastive term, and with it any view generator, is used.
    pub fn uses_ssl(&self) -> bool {
        self.lambda1 > 0.0
    }
}
