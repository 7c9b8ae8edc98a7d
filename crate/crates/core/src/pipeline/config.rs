//! Experiment configuration (JSON).

use super::{PipelineError, Result};
use crate::dataset::QueryForm;
use crate::info_metrics::{PriorMode, DEFAULT_PRIOR_FLOOR};
use crate::prob_model::{RemoteConfig, SyntheticParams, DEFAULT_SEPARATOR};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Synthetic(SyntheticParams),
    Remote(RemoteConfig),
    Replay(ReplaySpec),
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::Synthetic(SyntheticParams::default())
    }
}

/// Which recorded provider a replay stands in for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySpec {
    pub source_provider_id: String,
    pub model_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Synthetic,
    Remote,
    Replay,
}

impl FromStr for ProviderKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "synthetic" => Ok(ProviderKind::Synthetic),
            "remote" => Ok(ProviderKind::Remote),
            "replay" => Ok(ProviderKind::Replay),
            other => Err(format!("unknown provider `{other}` (synthetic, remote, replay)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInput {
    pub spec: PathBuf,
    pub entities: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub provider: ProviderSpec,
    /// Distribution cache file. Required for the replay provider.
    pub cache: Option<PathBuf>,
    pub relations: Vec<RelationInput>,
    /// Surface forms to drop from the fake entities (JSON list or one per line).
    pub exclude: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub per_entity: usize,
    /// Optional check: must equal `per_entity × |entities|` for every relation.
    pub n_contexts: Option<usize>,
    pub forms: Vec<QueryForm>,
    pub separator: String,
    pub prior_mode: PriorMode,
    pub prior_floor: f64,
    pub permutations: usize,
    pub alpha: f64,
    /// Master seed for per-test permutation streams.
    pub test_seed: u64,
    pub max_in_flight: usize,
    pub generate_answers: bool,
    pub max_new_tokens: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            provider: ProviderSpec::default(),
            cache: None,
            relations: Vec::new(),
            exclude: None,
            seeds: vec![0],
            per_entity: 6,
            n_contexts: None,
            forms: QueryForm::ALL.to_vec(),
            separator: DEFAULT_SEPARATOR.into(),
            prior_mode: PriorMode::Marginal,
            prior_floor: DEFAULT_PRIOR_FLOOR,
            permutations: 10_000,
            alpha: 0.05,
            test_seed: 0,
            max_in_flight: 8,
            generate_answers: false,
            max_new_tokens: 10,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub provider: Option<ProviderKind>,
    pub endpoint: Option<String>,
    pub prior: Option<PriorMode>,
    pub out: Option<PathBuf>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for r in &mut self.relations {
            resolve(base, &mut r.spec);
            resolve(base, &mut r.entities);
        }
        for p in [&mut self.cache, &mut self.exclude].into_iter().flatten() {
            resolve(base, p);
        }
        resolve(base, &mut self.out_dir);
    }

    pub fn apply(&mut self, o: &ConfigOverrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
        }
        if let Some(kind) = o.provider {
            self.provider = match (kind, &self.provider) {
                (ProviderKind::Synthetic, ProviderSpec::Synthetic(_))
                | (ProviderKind::Remote, ProviderSpec::Remote(_))
                | (ProviderKind::Replay, ProviderSpec::Replay(_)) => self.provider.clone(),
                (ProviderKind::Synthetic, _) => ProviderSpec::Synthetic(SyntheticParams::default()),
                (ProviderKind::Remote, _) => ProviderSpec::Remote(RemoteConfig::default()),
                (ProviderKind::Replay, ProviderSpec::Synthetic(p)) => {
                    ProviderSpec::Replay(ReplaySpec { source_provider_id: "synthetic".into(), model_id: p.model_id.clone() })
                }
                (ProviderKind::Replay, ProviderSpec::Remote(r)) => {
                    if r.model_id.is_empty() {
                        return Err(PipelineError::Config("replaying a remote run needs provider.model_id in the config".into()));
                    }
                    ProviderSpec::Replay(ReplaySpec { source_provider_id: "remote".into(), model_id: r.model_id.clone() })
                }
            };
        }
        if let Some(ep) = &o.endpoint {
            match &mut self.provider {
                ProviderSpec::Remote(r) => r.endpoint = ep.clone(),
                _ if o.provider.is_none() => {
                    self.provider = ProviderSpec::Remote(RemoteConfig { endpoint: ep.clone(), ..RemoteConfig::default() })
                }
                _ => log::warn!("--endpoint ignored for a non-remote provider"),
            }
        }
        if let Some(p) = o.prior {
            self.prior_mode = p;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.permutations == 0 {
            return bad("permutations must be at least 1");
        }
        if self.relations.is_empty() {
            return bad("no relations configured");
        }
        if self.forms.is_empty() {
            return bad("forms must be non-empty");
        }
        if !(self.prior_floor > 0.0 && self.prior_floor.is_finite()) {
            return bad("prior_floor must be a positive number");
        }
        if !(1..=64).contains(&self.max_new_tokens) {
            return bad("max_new_tokens must lie in 1..=64");
        }
        if matches!(self.provider, ProviderSpec::Replay(_)) && self.cache.is_none() {
            return bad("the replay provider needs a cache file");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"relations": [{"spec": "r.json", "entities": "e.json"}], "provider": {"kind": "synthetic", "beta_real": 5.0}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.permutations, 10_000);
        match &cfg.provider {
            ProviderSpec::Synthetic(p) => {
                assert_eq!(p.beta_real, 5.0);
                assert_eq!(p.beta_fake, 0.0);
            }
            other => panic!("{other:?}"),
        }
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_json(r#"{"nonsense": 1}"#).is_err());
        let mut cfg = ExperimentConfig {
            relations: vec![RelationInput { spec: "a".into(), entities: "b".into() }],
            ..Default::default()
        };
        cfg.alpha = 1.0;
        assert!(cfg.validate().is_err());
        cfg.alpha = 0.05;
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&ConfigOverrides { seed: Some(7), provider: Some(ProviderKind::Replay), ..Default::default() }).unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(
            cfg.provider,
            ProviderSpec::Replay(ReplaySpec { source_provider_id: "synthetic".into(), model_id: "synthetic-v1".into() })
        );
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&ConfigOverrides { endpoint: Some("http://h:1".into()), ..Default::default() }).unwrap();
        assert!(matches!(&cfg.provider, ProviderSpec::Remote(r) if r.endpoint == "http://h:1"));
        let mut cfg = ExperimentConfig { provider: ProviderSpec::Remote(RemoteConfig::default()), ..Default::default() };
        assert!(cfg.apply(&ConfigOverrides { provider: Some(ProviderKind::Replay), ..Default::default() }).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.json");
        std::fs::write(&p, r#"{"relations": [{"spec": "r.json", "entities": "/abs/e.json"}], "cache": "c.bin"}"#).unwrap();
        let cfg = ExperimentConfig::load(&p).unwrap();
        assert_eq!(cfg.relations[0].spec, dir.path().join("r.json"));
        assert_eq!(cfg.relations[0].entities, PathBuf::from("/abs/e.json"));
        assert_eq!(cfg.cache.as_deref(), Some(dir.path().join("c.bin").as_path()));
        assert_eq!(cfg.out_dir, dir.path().join("out"));
    }
}
