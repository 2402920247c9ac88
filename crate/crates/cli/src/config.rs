//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use robust_rlhf::contamination::AttackStrategy;
use robust_rlhf::mdp::{self, FeatureKind, LinearMdp, MdpDocument, MdpGenerator, Policy};
use robust_rlhf::oracle::OracleKind;
use robust_rlhf::pipeline::{FirstOrderSettings, PipelineKind, ZeroOrderSettings};
use robust_rlhf::preference::DiagnosticsConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

fn default_output() -> PathBuf {
    PathBuf::from("results.csv")
}

fn default_delta() -> f64 {
    0.1
}

fn default_attack() -> AttackStrategy {
    AttackStrategy::FlipMargin
}

fn default_behavior() -> BehaviorSpec {
    BehaviorSpec::Uniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSpec,
    /// Number of preference pairs per dataset.
    pub n: usize,
    pub epsilon_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub pipeline: PipelineKind,
    #[serde(default = "default_attack")]
    pub attack: AttackStrategy,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub behavior: Behavior,
    #[serde(default = "default_oracle")]
    pub oracle: OracleKind,
    #[serde(default)]
    pub zero_order: ZeroOrderSettings,
    #[serde(default)]
    pub first_order: FirstOrderSettings,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

fn default_oracle() -> OracleKind {
    OracleKind::Exact
}

/// Either `file = "<path>"` or the generator fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSpec {
    pub file: Option<PathBuf>,
    pub states: Option<usize>,
    pub actions: Option<usize>,
    pub dim: Option<usize>,
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub features: FeatureChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureChoice {
    #[default]
    Simplex,
    Tabular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Behavior {
    #[serde(default = "default_behavior")]
    pub mu0: BehaviorSpec,
    #[serde(default = "default_behavior")]
    pub mu1: BehaviorSpec,
}

impl Default for Behavior {
    fn default() -> Self {
        Self { mu0: BehaviorSpec::Uniform, mu1: BehaviorSpec::Uniform }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BehaviorSpec {
    Uniform,
    /// Greedy for the true reward.
    Optimal,
    EpsilonGreedy { explore: f64 },
    /// Per-state action distributions drawn uniformly from the simplex.
    Random { seed: u64 },
}

impl BehaviorSpec {
    pub fn build(&self, m: &LinearMdp) -> Policy {
        match *self {
            BehaviorSpec::Uniform => Policy::uniform(m.horizon(), m.num_states(), m.num_actions()),
            BehaviorSpec::Optimal => mdp::optimal_value(m, &m.theta_star_flat()).1,
            BehaviorSpec::EpsilonGreedy { explore } => mdp::policies::epsilon_greedy(m, explore),
            BehaviorSpec::Random { seed } => mdp::policies::random_tabular(m, seed),
        }
    }

    fn check(&self, field: &str) -> Result<()> {
        if let BehaviorSpec::EpsilonGreedy { explore } = *self {
            if !(0.0..=1.0).contains(&explore) {
                return Err(CliError::field(field, format!("explore must lie in [0,1], got {explore}")));
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Parses and validates; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        if let Some(f) = cfg.mdp.file.as_mut() {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Read { path: path.to_owned(), source: e })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon_grid.is_empty() {
            return Err(CliError::field("epsilon_grid", "must not be empty"));
        }
        if let Some(e) = self.epsilon_grid.iter().find(|e| !(0.0..0.5).contains(*e)) {
            return Err(CliError::field("epsilon_grid", format!("every value must lie in [0, 0.5), got {e}")));
        }
        if self.seeds.is_empty() {
            return Err(CliError::field("seeds", "must not be empty"));
        }
        if self.n < 4 {
            return Err(CliError::field("n", format!("need at least 4 pairs, got {}", self.n)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CliError::field("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        self.behavior.mu0.check("behavior.mu0")?;
        self.behavior.mu1.check("behavior.mu1")?;
        self.mdp.check()
    }
}

impl MdpSpec {
    fn generator_fields(&self) -> [(&'static str, Option<usize>); 4] {
        [("states", self.states), ("actions", self.actions), ("dim", self.dim), ("horizon", self.horizon)]
    }

    fn check(&self) -> Result<()> {
        let fields = self.generator_fields();
        if self.file.is_some() {
            if let Some((name, _)) = fields.iter().find(|(_, v)| v.is_some()) {
                return Err(CliError::field(&format!("mdp.{name}"), "cannot be combined with mdp.file"));
            }
            return Ok(());
        }
        for (name, v) in fields {
            match v {
                None if name == "dim" && self.features == FeatureChoice::Tabular => {}
                None => return Err(CliError::field(&format!("mdp.{name}"), "required unless mdp.file is given")),
                Some(0) => return Err(CliError::field(&format!("mdp.{name}"), "must be positive")),
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<LinearMdp> {
        if let Some(path) = &self.file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Read { path: path.clone(), source: e })?;
            let doc: MdpDocument = serde_json::from_str(&text)?;
            return Ok(LinearMdp::try_from(doc)?);
        }
        let (s, a, h) = (self.states.unwrap_or(0), self.actions.unwrap_or(0), self.horizon.unwrap_or(0));
        let generator = match self.features {
            FeatureChoice::Tabular => {
                if let Some(d) = self.dim.filter(|&d| d != s * a) {
                    return Err(CliError::field("mdp.dim", format!("tabular features need dim = states * actions = {}, got {d}", s * a)));
                }
                MdpGenerator::tabular(s, a, h)
            }
            FeatureChoice::Simplex => {
                let mut g = MdpGenerator::new(s, a, self.dim.unwrap_or(0), h);
                g.features = FeatureKind::Simplex { concentration: 0.5 };
                g
            }
        };
        Ok(generator.generate(self.seed)?)
    }
}
