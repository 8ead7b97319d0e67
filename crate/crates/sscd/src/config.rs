//! Layered run configuration.
//!
//! Precedence is fixed: built-in defaults, then a TOML file, then CLI flags.
//! Unknown keys in the file are hard errors — a typo must never silently fall
//! back to a default. The resolved configuration is echoed into the metrics
//! stream so every run is reproducible from its own log.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use serde_json::json;

use crate::decode::{DecodeMode, DecodingConfig};
use crate::disruptor::DisruptorParams;
use crate::error::{Error, Result};
use crate::graph::SpanPolicy;
use crate::surrogate::Vocab;
use crate::train::TrainConfig;

/// Raw TOML shape: every field optional, grouped by concern.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub dims: DimsSection,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSection {
    pub t: Option<usize>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub d_hidden: Option<usize>,
    pub d_lm: Option<usize>,
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub temperature: Option<f64>,
    pub span_policy: Option<String>,
    pub normalize_affinity: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub grad_accum: Option<usize>,
    pub lr: Option<f64>,
    pub warmup_ratio: Option<f64>,
    pub weight_decay: Option<f64>,
    pub seed: Option<u64>,
    pub lt_on_raw: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub max_tokens: Option<usize>,
    pub sample_seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub rho: Option<f64>,
    pub prompt_len: Option<usize>,
    pub answer_len: Option<usize>,
    pub count: Option<usize>,
}

/// Parses a TOML config file. Syntax errors and unknown keys both surface as
/// configuration errors.
pub fn load_file(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path)?;
    parse_file(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses TOML config text.
pub fn parse_file(text: &str) -> Result<FileConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Fully resolved settings for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub t: usize,
    pub n: usize,
    pub d: usize,
    /// Disruptor hidden width; `None` means derive from `d`.
    pub d_hidden: Option<usize>,
    pub d_lm: usize,
    pub vocab_size: usize,
    pub train: TrainConfig<f64>,
    pub decode: DecodingConfig<f64>,
    pub rho: f64,
    pub prompt_len: usize,
    pub answer_len: usize,
    /// Number of records for synthetic generation.
    pub count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t: 8,
            n: 4,
            d: 16,
            d_hidden: None,
            d_lm: 32,
            vocab_size: 64,
            train: TrainConfig::default(),
            decode: DecodingConfig::default(),
            rho: 0.9,
            prompt_len: 4,
            answer_len: 3,
            count: 50,
        }
    }
}

impl RunConfig {
    /// The disruptor hidden width this run will actually use.
    pub fn hidden_dim(&self) -> usize {
        self.d_hidden.unwrap_or_else(|| DisruptorParams::<f64>::default_hidden(self.d))
    }

    /// Overlays the file layer onto the current values.
    pub fn apply_file(&mut self, fc: &FileConfig) -> Result<()> {
        let d = &fc.dims;
        set(&mut self.t, d.t);
        set(&mut self.n, d.n);
        set(&mut self.d, d.d);
        if d.d_hidden.is_some() {
            self.d_hidden = d.d_hidden;
        }
        set(&mut self.d_lm, d.d_lm);
        set(&mut self.vocab_size, d.vocab_size);

        let g = &fc.graph;
        set(&mut self.train.temperature, g.temperature);
        if let Some(sp) = &g.span_policy {
            self.train.span_policy = SpanPolicy::from_str(sp)?;
        }
        set(&mut self.train.normalize_affinity, g.normalize_affinity);

        let t = &fc.train;
        set(&mut self.train.lambda, t.lambda);
        set(&mut self.train.epochs, t.epochs);
        set(&mut self.train.batch_size, t.batch_size);
        set(&mut self.train.grad_accum, t.grad_accum);
        set(&mut self.train.lr, t.lr);
        set(&mut self.train.warmup_ratio, t.warmup_ratio);
        set(&mut self.train.weight_decay, t.weight_decay);
        set(&mut self.train.seed, t.seed);
        set(&mut self.train.lt_on_raw, t.lt_on_raw);

        let dc = &fc.decode;
        set(&mut self.decode.alpha, dc.alpha);
        set(&mut self.decode.beta, dc.beta);
        set(&mut self.decode.max_tokens, dc.max_tokens);
        if let Some(seed) = dc.sample_seed {
            self.decode.mode = DecodeMode::Sample { seed };
        }

        let s = &fc.synth;
        set(&mut self.rho, s.rho);
        set(&mut self.prompt_len, s.prompt_len);
        set(&mut self.answer_len, s.answer_len);
        set(&mut self.count, s.count);
        Ok(())
    }

    /// Validates every resolved setting up front, before any computation.
    pub fn validate(&self) -> Result<()> {
        if self.t < 1 || self.n < 1 || self.d < 2 {
            return Err(Error::Config(format!(
                "dims must satisfy t >= 1, n >= 1, d >= 2; got t={} n={} d={}",
                self.t, self.n, self.d
            )));
        }
        if self.hidden_dim() < 2 || self.d_lm < 2 {
            return Err(Error::Config(format!(
                "hidden widths must be at least 2; got d_hidden={} d_lm={}",
                self.hidden_dim(),
                self.d_lm
            )));
        }
        Vocab::new(self.vocab_size).map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        self.decode.validate()?;
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.answer_len < 1 {
            return Err(Error::Config("answer_len must be at least 1".into()));
        }
        if self.count < 1 {
            return Err(Error::Config("count must be at least 1".into()));
        }
        Ok(())
    }

    /// The resolved configuration as one metrics record with stable keys.
    pub fn echo_json(&self) -> serde_json::Value {
        let sample_seed = match self.decode.mode {
            DecodeMode::Sample { seed } => Some(seed),
            DecodeMode::Greedy => None,
        };
        json!({
            "record": "config",
            "t": self.t,
            "n": self.n,
            "d": self.d,
            "d_hidden": self.hidden_dim(),
            "d_lm": self.d_lm,
            "vocab_size": self.vocab_size,
            "temperature": self.train.temperature,
            "span_policy": self.train.span_policy.to_string(),
            "normalize_affinity": self.train.normalize_affinity,
            "lambda": self.train.lambda,
            "epochs": self.train.epochs,
            "batch_size": self.train.batch_size,
            "grad_accum": self.train.grad_accum,
            "lr": self.train.lr,
            "warmup_ratio": self.train.warmup_ratio,
            "weight_decay": self.train.weight_decay,
            "seed": self.train.seed,
            "lt_on_raw": self.train.lt_on_raw,
            "alpha": self.decode.alpha,
            "beta": self.decode.beta,
            "max_tokens": self.decode.max_tokens,
            "sample_seed": sample_seed,
            "rho": self.rho,
            "prompt_len": self.prompt_len,
            "answer_len": self.answer_len,
            "count": self.count,
        })
    }
}

fn set<V: Copy>(slot: &mut V, value: Option<V>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn file_layer_overrides_defaults_only_where_present() {
        let fc = parse_file(
            r#"
            [dims]
            d = 8
            [train]
            epochs = 7
            lr = 0.002
            [graph]
            span_policy = "literal"
            [decode]
            sample_seed = 5
            "#,
        )
        .unwrap();
        let mut rc = RunConfig::default();
        rc.apply_file(&fc).unwrap();
        assert_eq!(rc.d, 8);
        assert_eq!(rc.t, 8);
        assert_eq!(rc.train.epochs, 7);
        assert_eq!(rc.train.lr, 0.002);
        assert_eq!(rc.train.batch_size, 2);
        assert_eq!(rc.train.span_policy, SpanPolicy::Literal);
        assert_eq!(rc.decode.mode, DecodeMode::Sample { seed: 5 });
        assert_eq!(rc.hidden_dim(), 4);
        rc.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_file("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = parse_file("[optimizer]\nlr = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn syntax_errors_are_config_errors() {
        assert!(matches!(parse_file("not toml ==="), Err(Error::Config(_))));
    }

    #[test]
    fn bad_resolved_values_fail_validation() {
        let mut rc = RunConfig::default();
        rc.train.epochs = 0;
        assert!(matches!(rc.validate(), Err(Error::Config(_))));

        let mut rc = RunConfig::default();
        rc.rho = 1.0;
        assert!(rc.validate().is_err());

        let mut rc = RunConfig::default();
        rc.vocab_size = 3;
        assert!(rc.validate().is_err());

        let mut rc = RunConfig::default();
        rc.decode.beta = 1.5;
        assert!(rc.validate().is_err());
    }

    #[test]
    fn bad_span_policy_string_is_a_config_error() {
        let fc = parse_file("[graph]\nspan_policy = \"zigzag\"\n").unwrap();
        let mut rc = RunConfig::default();
        assert!(matches!(rc.apply_file(&fc), Err(Error::Config(_))));
    }

    #[test]
    fn echo_contains_resolved_hidden_width() {
        let rc = RunConfig::default();
        let echo = rc.echo_json();
        assert_eq!(echo["record"], "config");
        assert_eq!(echo["d_hidden"], 8);
        assert_eq!(echo["span_policy"], "retrace");
    }
}
