use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use synuse::promptgen::{ProviderConfig, ProviderMode, Style};
use synuse::ranking::Metric;
use synuse::usability::DistanceMetric;

/// Everything a run needs. Loaded from TOML; command-line flags win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub score: ScoreConfig,
    pub rank: RankConfig,
    pub bandit: BanditConfig,
    pub learner: LearnerConfig,
    pub prompts: PromptsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            score: ScoreConfig::default(),
            rank: RankConfig::default(),
            bandit: BanditConfig::default(),
            learner: LearnerConfig::default(),
            prompts: PromptsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path`, resolving relative paths inside it against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                fix(p);
            }
        };
        fix(&mut self.out_dir);
        let d = &mut self.data;
        for p in [
            &mut d.real_mid,
            &mut d.syn_mid,
            &mut d.real_high,
            &mut d.syn_high,
            &mut d.real_images,
            &mut d.syn_images,
            &mut d.probabilities,
        ] {
            fix_opt(p);
        }
        fix_opt(&mut self.rank.metrics_file);
        fix_opt(&mut self.bandit.arms_file);
        fix_opt(&mut self.prompts.pool);
        fix_opt(&mut self.prompts.templates);
        fix_opt(&mut self.prompts.provider.fixture_dir);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub real_mid: Option<PathBuf>,
    pub syn_mid: Option<PathBuf>,
    pub real_high: Option<PathBuf>,
    pub syn_high: Option<PathBuf>,
    /// Directories holding `<image_id>.png` or `<image_id>.ppm`.
    pub real_images: Option<PathBuf>,
    pub syn_images: Option<PathBuf>,
    /// JSON map of synthetic image id to class probabilities.
    pub probabilities: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub metrics: Vec<Metric>,
    pub k: usize,
    pub photorealism_weight: f64,
    pub diversity_weight: f64,
    pub eps_kl: f64,
    pub phi_cap: f64,
    pub distance: DistanceMetric,
    /// Clusters for the set entropy; defaults to the class count.
    pub entropy_k: Option<usize>,
    pub alpha: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Dps, Metric::Fcs],
            k: 10,
            photorealism_weight: 0.5,
            diversity_weight: 0.5,
            eps_kl: synuse::usability::EPS_KL,
            phi_cap: synuse::usability::PHI_CAP,
            distance: DistanceMetric::Euclidean,
            entropy_k: None,
            alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub m: Option<usize>,
    pub arms: Vec<Metric>,
    pub metrics_file: Option<PathBuf>,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            m: None,
            arms: vec![Metric::Dps, Metric::Fcs],
            metrics_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub total_epochs: u64,
    pub patience: u32,
    pub reset_on_switch: bool,
    pub round_robin_warmup: bool,
    pub arms_file: Option<PathBuf>,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            total_epochs: 100,
            patience: 3,
            reset_on_switch: true,
            round_robin_warmup: false,
            arms_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Surrogate,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    /// Surrogate per-arm quality; every arm gets 0.5 when absent.
    pub qualities: Option<Vec<f64>>,
    pub base: f64,
    pub cap: f64,
    pub rate: f64,
    pub noise: f64,
    /// External learner program followed by its arguments.
    pub command: Vec<String>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        let s = synuse::trainer::SurrogateParams::default();
        Self {
            kind: LearnerKind::Surrogate,
            qualities: None,
            base: s.base,
            cap: s.cap,
            rate: s.rate,
            noise: s.noise,
            command: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsConfig {
    pub domain_context: String,
    pub kinds: Vec<String>,
    pub n: usize,
    pub style: Style,
    /// Attribute pool JSON; extraction is skipped when set.
    pub pool: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub generate_images: bool,
    pub parallelism: usize,
    pub provider: ProviderSection,
}

impl Default for PromptsConfig {
    fn default() -> Self {
        Self {
            domain_context: "single-car road accidents photographed at street level".into(),
            kinds: ["weather", "accident", "color", "model"]
                .map(String::from)
                .to_vec(),
            n: 10,
            style: Style::Photorealistic,
            pool: None,
            templates: None,
            generate_images: true,
            parallelism: synuse::promptgen::DEFAULT_PARALLELISM,
            provider: ProviderSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub mode: ProviderMode,
    pub endpoint: String,
    pub auth_env: Option<String>,
    pub timeout_secs: f64,
    pub fixture_dir: Option<PathBuf>,
    pub attempts: u32,
    pub backoff_ms: u64,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Fixture,
            endpoint: "http://127.0.0.1:8080".into(),
            auth_env: None,
            timeout_secs: 60.0,
            fixture_dir: None,
            attempts: 3,
            backoff_ms: 200,
        }
    }
}

impl From<&ProviderSection> for ProviderConfig {
    fn from(p: &ProviderSection) -> Self {
        ProviderConfig {
            endpoint: p.endpoint.clone(),
            auth_env: p.auth_env.clone(),
            timeout_secs: p.timeout_secs,
            mode: p.mode,
            fixture_dir: p.fixture_dir.clone(),
            attempts: p.attempts,
            backoff_ms: p.backoff_ms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn parses_sections() {
        let c: RunConfig = toml::from_str(
            r#"
            seed = 7
            [score]
            metrics = ["DPS", "FCS", "FID"]
            distance = "cosine"
            [rank]
            m = 20
            arms = ["DPS", "FCS", "MEAN_DPS_FCS"]
            [learner]
            kind = "external"
            command = ["python3", "train.py"]
            [prompts.provider]
            mode = "live"
            endpoint = "http://localhost:9000"
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.score.metrics.len(), 3);
        assert_eq!(c.score.distance, DistanceMetric::Cosine);
        assert_eq!(c.rank.m, Some(20));
        assert_eq!(c.rank.arms[2], Metric::MeanDpsFcs);
        assert_eq!(c.learner.kind, LearnerKind::External);
        assert_eq!(c.prompts.provider.mode, ProviderMode::Live);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[rank]\narms = [\"LPIPS\"]").is_err());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let mut c: RunConfig = toml::from_str("[data]\nreal_mid = \"r.emb\"").unwrap();
        c.rebase(Path::new("/cfg"));
        assert_eq!(c.data.real_mid.unwrap(), Path::new("/cfg/r.emb"));
        assert_eq!(c.out_dir, Path::new("/cfg/out"));
    }
}
