//! Flat `key = value` configuration shared by every subcommand.
//!
//! One setting per line, `#` starts a comment. Generator keys carry a
//! `world.` prefix and evaluation keys an `eval.` prefix; everything else is
//! top level. Dashes and underscores in keys are interchangeable. Flags given
//! on the command line are applied after the file, so they win.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use multisage_core::ann::IndexConfig;
use multisage_core::eval::EvalConfig;
use multisage_core::representation::ProfileParams;
use multisage_core::retrieval::RetrievalConfig;
use multisage_core::synth::WorldConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub embeddings: Option<PathBuf>,
    pub actions: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub interests: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub profile: ProfileParams,
    pub retrieval: RetrievalConfig,
    pub index: IndexConfig,
    pub world: WorldConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
    pub seed: u64,
    /// `e` values for the diversity suite.
    pub sweep: Vec<usize>,
    /// The diversity suite only scores users with at least this many interests.
    pub sweep_min_interests: usize,
    /// Clusters for the k-means baseline.
    pub kmeans_k: usize,
    world_seed: Option<u64>,
    eval_start: Option<NaiveDate>,
    eval_days: Option<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            profile: ProfileParams::default(),
            retrieval: RetrievalConfig::default(),
            index: IndexConfig::default(),
            world: WorldConfig::default(),
            eval: EvalConfig::default(),
            paths: Paths::default(),
            seed: WorldConfig::default().seed,
            sweep: vec![1, 2, 3, 4],
            sweep_min_interests: 3,
            kmeans_k: 5,
            world_seed: None,
            eval_start: None,
            eval_days: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| CliError::invalid(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Config::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::invalid("config", format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), CliError> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::invalid("set", format!("expected key=value, got {pair:?}")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.replace('-', "_");
        let k = key.as_str();
        let path = || Some(PathBuf::from(value));
        match k {
            "alpha" => self.profile.alpha = parse(k, value)?,
            "lambda" => self.profile.lambda = parse(k, value)?,
            "window_days" => self.profile.window_days = parse(k, value)?,
            "point_cap" => self.profile.point_cap = parse(k, value)?,
            "e" => self.retrieval.sampled_medoids = parse(k, value)?,
            "budget" => self.retrieval.budget = parse(k, value)?,
            "seed" => self.seed = parse(k, value)?,
            "max_neighbors" | "m" => self.index.max_neighbors = parse(k, value)?,
            "build_beam" => self.index.build_beam = parse(k, value)?,
            "query_beam" => self.index.query_beam = parse(k, value)?,
            "dedup_threshold" => self.index.dedup_threshold = parse(k, value)?,
            "quality_floor" => self.index.quality_floor = parse(k, value)?,
            "embeddings" => self.paths.embeddings = path(),
            "actions" => self.paths.actions = path(),
            "labels" => self.paths.labels = path(),
            "interests" => self.paths.interests = path(),
            "store" => self.paths.store = path(),
            "index" => self.paths.index = path(),
            "out_dir" => self.paths.out_dir = path(),

            "eval.start" => self.eval_start = Some(parse(k, value)?),
            "eval.days" => self.eval_days = Some(parse(k, value)?),
            "eval.split_day" => self.eval.split_day = parse(k, value)?,
            "eval.threshold" => self.eval.threshold = parse(k, value)?,
            "eval.impressions_per_action" => self.eval.impressions_per_action = parse(k, value)?,
            "eval.cache_capacity" => self.eval.cache_capacity = parse(k, value)?,
            "eval.sweep" => self.sweep = parse_list(k, value)?,
            "eval.sweep_min_interests" => self.sweep_min_interests = parse(k, value)?,
            "eval.kmeans_k" => self.kmeans_k = parse(k, value)?,

            "world.seed" => self.world_seed = Some(parse(k, value)?),
            "world.n_topics" => self.world.n_topics = parse(k, value)?,
            "world.subtopics_per_topic" => self.world.subtopics_per_topic = parse(k, value)?,
            "world.pins_per_topic" => self.world.pins_per_topic = parse(k, value)?,
            "world.background_pins" => self.world.background_pins = parse(k, value)?,
            "world.dimension" => self.world.dimension = parse(k, value)?,
            "world.latent_dimension" => self.world.latent_dimension = parse(k, value)?,
            "world.sigma" => self.world.sigma = parse(k, value)?,
            "world.subtopic_spread" => self.world.subtopic_spread = parse(k, value)?,
            "world.n_users" => self.world.n_users = parse(k, value)?,
            "world.min_interests" => self.world.min_interests = parse(k, value)?,
            "world.max_interests" => self.world.max_interests = parse(k, value)?,
            "world.min_actions_per_day" => self.world.min_actions_per_day = parse(k, value)?,
            "world.max_actions_per_day" => self.world.max_actions_per_day = parse(k, value)?,
            "world.days" => self.world.days = parse(k, value)?,
            "world.daily_interests" => self.world.daily_interests = parse(k, value)?,
            "world.switch_prob" => self.world.switch_prob = parse(k, value)?,
            "world.interest_skew" => self.world.interest_skew = parse(k, value)?,
            "world.explore_prob" => self.world.explore_prob = parse(k, value)?,
            "world.impressions_per_action" => self.world.impressions_per_action = parse(k, value)?,
            "world.targeted_impressions" => self.world.targeted_impressions = parse(k, value)?,
            "world.legacy_impressions" => self.world.legacy_impressions = parse(k, value)?,
            "world.legacy_pool" => self.world.legacy_pool = parse(k, value)?,
            "world.satiation" => self.world.satiation = parse(k, value)?,
            "world.start" => self.world.start = parse(k, value)?,
            _ => return Err(CliError::invalid("config", format!("unknown key `{k}`"))),
        }
        Ok(())
    }

    /// Resolves derived settings and checks every bound.
    pub fn finish(mut self) -> Result<Self, CliError> {
        self.world.seed = self.world_seed.unwrap_or(self.seed);
        self.eval.start = self.eval_start.unwrap_or(self.world.start);
        self.eval.days = self.eval_days.unwrap_or(self.world.days);
        self.eval.budget = self.retrieval.budget;
        self.eval.seed = self.seed;

        self.profile.validate()?;
        self.retrieval.validate()?;
        self.index.validate()?;
        self.world.validate()?;
        self.eval.validate()?;
        if self.sweep.is_empty() || self.sweep.contains(&0) {
            return Err(CliError::invalid("eval.sweep", "needs one or more positive e values"));
        }
        if self.sweep.iter().any(|&e| e > self.retrieval.budget) {
            return Err(CliError::invalid("eval.sweep", "every e must be at most the budget"));
        }
        if self.kmeans_k == 0 {
            return Err(CliError::invalid("eval.kmeans_k", "must be positive"));
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_overrides() {
        let mut cfg = Config::default();
        cfg.apply_text("# comment\nalpha = 0.5\nworld.n-users=12  # trailing\n\nembeddings = data/x.bin\n")
            .unwrap();
        cfg.apply_override("lambda=0.02").unwrap();
        let cfg = cfg.finish().unwrap();
        assert_eq!(cfg.profile.alpha, 0.5);
        assert_eq!(cfg.profile.lambda, 0.02);
        assert_eq!(cfg.world.n_users, 12);
        assert_eq!(cfg.paths.embeddings.as_deref(), Some(Path::new("data/x.bin")));
        assert_eq!(cfg.world.seed, cfg.seed);
        assert_eq!(cfg.eval.days, cfg.world.days);
    }

    #[test]
    fn bounds_name_the_field() {
        for (key, value, field) in [
            ("alpha", "-1", "alpha"),
            ("lambda", "-0.1", "lambda"),
            ("e", "0", "e"),
            ("budget", "2", "budget"),
        ] {
            let mut cfg = Config::default();
            cfg.set(key, value).unwrap();
            let err = cfg.finish().unwrap_err().to_string();
            assert!(err.contains(&format!("`{field}`")), "{err}");
        }
    }

    #[test]
    fn rejects_garbage() {
        let mut cfg = Config::default();
        assert!(cfg.set("nope", "1").unwrap_err().to_string().contains("nope"));
        assert!(cfg.set("alpha", "x").unwrap_err().to_string().contains("`alpha`"));
        assert!(cfg.apply_text("alpha 1").is_err());
        assert!(cfg.apply_override("alpha").is_err());
    }

    #[test]
    fn world_seed_overrides_seed() {
        let mut cfg = Config::default();
        cfg.apply_text("seed = 3\nworld.seed = 9").unwrap();
        let cfg = cfg.finish().unwrap();
        assert_eq!((cfg.seed, cfg.world.seed, cfg.eval.seed), (3, 9, 3));
    }
}
