//! Model flags shared by `simulate` and `estimate`.

use std::path::PathBuf;

use anyhow::Context as _;
use clap::ValueEnum;
use fdrift_core::gauss::PairGenerator;
use fdrift_core::sde::solve_euler;
use fdrift_core::{HurstIndex, ModelConfig, ModelKind, SamplePath, SeedPolicy, TimeGrid};

use crate::Usage;

#[derive(Debug, Clone, clap::Args)]
pub struct ModelArgs {
    /// Model family with unit coefficients: linear, mixed_linear, ou or additive.
    #[arg(long)]
    pub model: Option<String>,

    /// TOML file with a full model description; flags given here override it.
    #[arg(long, value_name = "FILE")]
    pub model_config: Option<PathBuf>,

    /// Constant coefficient override, e.g. `--coef a=4 --coef b=1`.
    #[arg(long, value_name = "NAME=VALUE")]
    pub coef: Vec<String>,

    /// True drift parameter.
    #[arg(long)]
    pub theta: Option<f64>,

    /// Hurst index.
    #[arg(long = "H", value_name = "H")]
    pub hurst: Option<f64>,

    /// Initial value.
    #[arg(long)]
    pub x0: Option<f64>,
}

impl ModelArgs {
    /// Flag > model file > built-in default (`linear`, θ = 1, H = 0.7, x0 = 1).
    pub fn resolve(&self) -> anyhow::Result<ModelConfig> {
        let mut cfg = match &self.model_config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str::<ModelConfig>(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?
            }
            None => ModelConfig {
                kind: ModelKind::preset("linear")?,
                theta: 1.0,
                x0: 1.0,
                hurst: HurstIndex::new(0.7)?,
            },
        };
        if let Some(name) = &self.model {
            cfg.kind = ModelKind::preset(name)?;
        }
        if !self.coef.is_empty() {
            cfg.kind = override_coefficients(&cfg.kind, &self.coef)?;
        }
        if let Some(theta) = self.theta {
            cfg.theta = theta;
        }
        if let Some(x0) = self.x0 {
            cfg.x0 = x0;
        }
        if let Some(h) = self.hurst {
            cfg.hurst = HurstIndex::new(h)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn override_coefficients(kind: &ModelKind, pairs: &[String]) -> anyhow::Result<ModelKind> {
    let mut value = serde_json::to_value(kind)?;
    let fields = value.as_object_mut().expect("model kinds serialize to objects");
    for pair in pairs {
        let (name, v) = pair
            .split_once('=')
            .ok_or_else(|| Usage(format!("--coef expects NAME=VALUE, got `{pair}`")))?;
        let v: f64 = v.trim().parse().map_err(|_| Usage(format!("--coef {name}: `{v}` is not a number")))?;
        let name = name.trim();
        if name == "kind" || !fields.contains_key(name) {
            let known: Vec<&String> = fields.keys().filter(|k| *k != "kind").collect();
            return Err(Usage(format!("model `{}` has no coefficient `{name}` (has {known:?})", kind.name())).into());
        }
        fields.insert(name.into(), serde_json::json!({ "kind": "constant", "value": v }));
    }
    Ok(serde_json::from_value(value)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    Euler,
    Exact,
}

#[derive(Debug, Clone, clap::Args)]
pub struct SimulationArgs {
    /// Horizon.
    #[arg(long = "T", value_name = "T")]
    pub horizon: Option<f64>,

    /// Number of grid steps.
    #[arg(long = "n", value_name = "N")]
    pub steps: Option<usize>,

    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Replicate index under the master seed.
    #[arg(long, default_value_t = 0)]
    pub index: u64,

    #[arg(long, value_enum, default_value_t = Scheme::Euler)]
    pub scheme: Scheme,

    /// Drive the model with zero noise.
    #[arg(long)]
    pub zero_noise: bool,
}

pub struct Simulated {
    pub x: SamplePath,
    pub w: SamplePath,
    pub bh: SamplePath,
}

impl SimulationArgs {
    pub fn grid(&self) -> anyhow::Result<TimeGrid> {
        match (self.horizon, self.steps) {
            (Some(t), Some(n)) => Ok(TimeGrid::new(t, n)?),
            _ => Err(Usage("simulation needs both --T and --n".into()).into()),
        }
    }

    pub fn simulate(&self, cfg: &ModelConfig) -> anyhow::Result<Simulated> {
        let grid = self.grid()?;
        let (w, bh) = if self.zero_noise {
            (SamplePath::zeros(grid), SamplePath::zeros(grid))
        } else {
            PairGenerator::new(grid, cfg.hurst)?.sample(SeedPolicy::new(self.seed), self.index)
        };
        let x = match self.scheme {
            Scheme::Euler => solve_euler(&cfg.instance()?, grid, &w, &bh)?,
            Scheme::Exact => cfg.exact_solution(grid, &w, &bh)?,
        };
        Ok(Simulated { x, w, bh })
    }
}
