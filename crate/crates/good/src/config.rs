//! Flat key=value run configuration: one documented key per line, unknown
//! keys rejected, all defaults materialized on write.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::SuiteMember;
use crate::objective::{NegSampleStrategy, Variant};
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;

/// Everything a run needs: generator settings, training settings, suite
/// selection, and the shared seed.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub suite: Vec<SuiteMember>,
    pub seeds: Vec<u64>,
    /// Companion coefficients file for variant=good_lc_plus training.
    pub coefficients_path: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            suite: SuiteMember::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            coefficients_path: None,
        }
    }
}

/// "48,32-24-16" -> [[48,32],[24],[16]]: steps joined by '-', widths by ','.
pub fn parse_schedule(s: &str) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for step in s.split('-') {
        let widths: Vec<usize> = step
            .split(',')
            .map(|w| {
                w.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad schedule width '{w}'")))
            })
            .collect::<Result<_>>()?;
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::Config(format!("bad schedule step '{step}'")));
        }
        out.push(widths);
    }
    Ok(out)
}

pub fn schedule_to_string(schedule: &[Vec<usize>]) -> String {
    schedule
        .iter()
        .map(|step| {
            step.iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("-")
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{tok}' in key '{key}'")))
        })
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.train.seed = cfg.synth.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad {what} '{value}' for key '{key}'"));
        match key {
            "num_nodes" => self.synth.num_nodes = value.parse().map_err(|_| bad("integer"))?,
            "latent_dim" => self.synth.latent_dim = value.parse().map_err(|_| bad("integer"))?,
            "num_known_contexts" => {
                self.synth.num_known_contexts = value.parse().map_err(|_| bad("integer"))?
            }
            "num_target_contexts" => {
                self.synth.num_target_contexts = value.parse().map_err(|_| bad("integer"))?
            }
            "num_steps" => self.synth.num_steps = value.parse().map_err(|_| bad("integer"))?,
            "target_mixture" => self.synth.target_mixture = parse_list(key, value)?,
            "edge_density" => self.synth.edge_density = value.parse().map_err(|_| bad("number"))?,
            "temporal_drift" => {
                self.synth.temporal_drift = value.parse().map_err(|_| bad("number"))?
            }
            "noise" => self.synth.noise = value.parse().map_err(|_| bad("number"))?,
            "seed" => self.synth.seed = value.parse().map_err(|_| bad("integer"))?,
            "variant" => self.train.variant = value.parse::<Variant>()?,
            "aggregator" => self.train.aggregator = value.parse()?,
            "learning_rate" => {
                self.train.learning_rate = value.parse().map_err(|_| bad("number"))?
            }
            "weight_decay" => self.train.weight_decay = value.parse().map_err(|_| bad("number"))?,
            "epochs" => self.train.epochs = value.parse().map_err(|_| bad("integer"))?,
            "patience" => self.train.patience = value.parse().map_err(|_| bad("integer"))?,
            "dropout_rate" => self.train.dropout_rate = value.parse().map_err(|_| bad("number"))?,
            "schedule" => {
                self.train.schedule = parse_schedule(value)?;
                self.train.window = self.train.schedule.len();
            }
            "head_hidden" => self.train.head_hidden = value.parse().map_err(|_| bad("integer"))?,
            "negative_strategy" => {
                self.train.strategy = if value == "default" {
                    None
                } else {
                    Some(value.parse::<NegSampleStrategy>()?)
                }
            }
            "ablate_coefficients" => {
                self.train.ablate_coefficients = value.parse().map_err(|_| bad("boolean"))?
            }
            "suite" => {
                self.suite = value
                    .split(',')
                    .map(|tok| tok.trim().parse())
                    .collect::<Result<_>>()?
            }
            "seeds" => self.seeds = parse_list(key, value)?,
            "coefficients_path" => {
                self.coefficients_path = if value.is_empty() {
                    None
                } else {
                    Some(value.to_string())
                }
            }
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.suite.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("suite and seeds must be non-empty".into()));
        }
        Ok(())
    }

    /// The effective config with every default materialized; parses back to
    /// an identical config.
    pub fn to_text(&self) -> String {
        let strategy = match &self.train.strategy {
            None => "default".to_string(),
            Some(NegSampleStrategy::MultinomialByWeight) => "multinomial".into(),
            Some(NegSampleStrategy::UniformGroundTruthNeg) => "gt_uniform".into(),
            Some(NegSampleStrategy::UniformNonEdge) => "non_edge".into(),
            Some(NegSampleStrategy::Mixture { multinomial, gt_uniform, non_edge }) => {
                format!("mixture:{multinomial},{gt_uniform},{non_edge}")
            }
        };
        let mixture = self
            .synth
            .target_mixture
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let suite = self
            .suite
            .iter()
            .map(|m| m.name())
            .collect::<Vec<_>>()
            .join(",");
        let seeds = self
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "# generator\n\
             num_nodes = {}\n\
             latent_dim = {}\n\
             num_known_contexts = {}\n\
             num_target_contexts = {}\n\
             num_steps = {}\n\
             target_mixture = {}\n\
             edge_density = {}\n\
             temporal_drift = {}\n\
             noise = {}\n\
             seed = {}\n\
             # trainer\n\
             variant = {}\n\
             aggregator = {}\n\
             learning_rate = {}\n\
             weight_decay = {}\n\
             epochs = {}\n\
             patience = {}\n\
             dropout_rate = {}\n\
             schedule = {}\n\
             head_hidden = {}\n\
             negative_strategy = {}\n\
             ablate_coefficients = {}\n\
             coefficients_path = {}\n\
             # experiment\n\
             suite = {}\n\
             seeds = {}\n",
            self.synth.num_nodes,
            self.synth.latent_dim,
            self.synth.num_known_contexts,
            self.synth.num_target_contexts,
            self.synth.num_steps,
            mixture,
            self.synth.edge_density,
            self.synth.temporal_drift,
            self.synth.noise,
            self.synth.seed,
            self.train.variant.name(),
            self.train.aggregator,
            self.train.learning_rate,
            self.train.weight_decay,
            self.train.epochs,
            self.train.patience,
            self.train.dropout_rate,
            schedule_to_string(&self.train.schedule),
            self.train.head_hidden,
            strategy,
            self.train.ablate_coefficients,
            self.coefficients_path.as_deref().unwrap_or(""),
            suite,
            seeds,
        )
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        RunConfig::parse(&text).map_err(|e| Error::Config(format!("{display}: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(&display, e))
    }
}
