//! Flat `key = value` experiment configuration.
//!
//! A config file holds one `key = value` pair per line; `#` starts a comment.
//! Command-line `--set key=value` overrides are applied afterwards, in order.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use qtrace_nac::format::{parse_mdp, parse_policy};
use qtrace_nac::instances::cyclic_five;
use qtrace_nac::{
    Distribution, NacParams, Policy, QTraceParams, SampleMode, TabularMdp, TruncationLevels,
};

/// Name of the built-in 5-state cyclic instance.
pub const BUILTIN_CYCLIC: &str = "cyclic5";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Solve,
    Qtrace,
    Nac,
    ExactNpg,
    Sweep,
    ReuseDemo,
    Bounds,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Qtrace => "qtrace",
            Mode::Nac => "nac",
            Mode::ExactNpg => "exact-npg",
            Mode::Sweep => "sweep",
            Mode::ReuseDemo => "reuse-demo",
            Mode::Bounds => "bounds",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a policy comes from: the uniform policy or a `PI` line file.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Uniform,
    File(PathBuf),
}

impl PolicySpec {
    fn parse(value: &str) -> Self {
        if value == "uniform" {
            PolicySpec::Uniform
        } else {
            PolicySpec::File(PathBuf::from(value))
        }
    }

    pub fn load(&self, num_states: usize, num_actions: usize) -> Result<Policy> {
        match self {
            PolicySpec::Uniform => Ok(Policy::uniform(num_states, num_actions)),
            PolicySpec::File(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading policy file {}", path.display()))?;
                parse_policy(&text, num_states, num_actions)
                    .with_context(|| format!("parsing policy file {}", path.display()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `cyclic5` or a path to an MDP file.
    pub mdp: String,
    pub pi_b: PolicySpec,
    /// Initial policy of the actor, and the fixed target for `qtrace`.
    pub pi0: PolicySpec,
    pub outer_iters: usize,
    pub critic_iters: usize,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub rho_bar: f64,
    pub c_bar: f64,
    pub seed: u64,
    pub num_seeds: usize,
    pub warm_start: bool,
    pub s0: usize,
    pub out: PathBuf,
    pub svg: bool,
    /// `(rho_bar, c_bar)` settings for `sweep`.
    pub sweep: Vec<(f64, f64)>,
    /// Target accuracy for the sample-complexity estimate in `bounds`.
    pub epsilon: f64,
    /// Iterations for `exact-npg`; defaults to `outer_iters`.
    pub npg_iters: Option<usize>,
    /// Recording interval for `qtrace` error curves.
    pub record_every: usize,
}

impl Default for ExperimentConfig {
    /// The 5-state cyclic experiment: `n=6, T=100, K=1000, alpha=0.05,
    /// beta=0.1, rho_bar=3, c_bar=1`, uniform initial and behavior policies.
    fn default() -> Self {
        Self {
            mdp: BUILTIN_CYCLIC.into(),
            pi_b: PolicySpec::Uniform,
            pi0: PolicySpec::Uniform,
            outer_iters: 100,
            critic_iters: 1000,
            n: 6,
            alpha: 0.05,
            beta: 0.1,
            rho_bar: 3.0,
            c_bar: 1.0,
            seed: 1,
            num_seeds: 4,
            warm_start: true,
            s0: 0,
            out: PathBuf::from("out"),
            svg: false,
            sweep: vec![(3.0, 1.0), (2.5, 1.0), (3.0, 1.5)],
            epsilon: 0.1,
            npg_iters: None,
            record_every: 100,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("invalid value `{value}` for `{key}`"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("invalid boolean `{value}` for `{key}`"),
    }
}

fn parse_sweep(value: &str) -> Result<Vec<(f64, f64)>> {
    value
        .split(',')
        .map(|pair| {
            let (r, c) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| anyhow!("sweep entries look like `rho:c`, got `{pair}`"))?;
            Ok((parse_num("sweep", r.trim())?, parse_num("sweep", c.trim())?))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mdp" => self.mdp = value.to_string(),
            "pi_b" => self.pi_b = PolicySpec::parse(value),
            "pi0" => self.pi0 = PolicySpec::parse(value),
            "T" | "outer_iters" => self.outer_iters = parse_num(key, value)?,
            "K" | "critic_iters" => self.critic_iters = parse_num(key, value)?,
            "n" => self.n = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "rho_bar" => self.rho_bar = parse_num(key, value)?,
            "c_bar" => self.c_bar = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "seeds" | "num_seeds" => self.num_seeds = parse_num(key, value)?,
            "warm_start" => self.warm_start = parse_bool(key, value)?,
            "s0" => self.s0 = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "svg" => self.svg = parse_bool(key, value)?,
            "sweep" => self.sweep = parse_sweep(value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "npg_iters" => self.npg_iters = Some(parse_num(key, value)?),
            "record_every" => self.record_every = parse_num(key, value)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("override must look like key=value, got `{assignment}`"))?;
        self.set(key.trim(), value.trim())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            config
                .apply_override(line)
                .with_context(|| format!("config line {}", i + 1))?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_text(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_seeds == 0 {
            bail!("num_seeds must be at least 1");
        }
        if self.record_every == 0 {
            bail!("record_every must be at least 1");
        }
        if self.mdp != BUILTIN_CYCLIC && !Path::new(&self.mdp).is_file() {
            bail!("MDP file `{}` does not exist", self.mdp);
        }
        for spec in [&self.pi_b, &self.pi0] {
            if let PolicySpec::File(path) = spec {
                if !path.is_file() {
                    bail!("policy file `{}` does not exist", path.display());
                }
            }
        }
        if self.sweep.is_empty() {
            bail!("sweep needs at least one (rho_bar, c_bar) setting");
        }
        Ok(())
    }

    pub fn load_mdp(&self) -> Result<TabularMdp> {
        if self.mdp == BUILTIN_CYCLIC {
            return Ok(cyclic_five().0);
        }
        let text = std::fs::read_to_string(&self.mdp)
            .with_context(|| format!("reading MDP file {}", self.mdp))?;
        parse_mdp(&text).with_context(|| format!("parsing MDP file {}", self.mdp))
    }

    pub fn levels(&self) -> Result<TruncationLevels> {
        Ok(TruncationLevels::new(self.rho_bar, self.c_bar)?)
    }

    pub fn critic_params(&self, levels: TruncationLevels) -> Result<QTraceParams> {
        Ok(QTraceParams::new(
            self.n,
            self.critic_iters,
            self.alpha,
            levels,
        )?)
    }

    /// Actor-critic parameters for seed index `stream`.
    pub fn nac_params(
        &self,
        mdp: &TabularMdp,
        levels: TruncationLevels,
        stream: u64,
        sampling: SampleMode,
    ) -> Result<NacParams> {
        let mut params = NacParams::new(
            self.outer_iters,
            self.critic_params(levels)?,
            self.beta,
            self.seed,
            mdp.num_states(),
        )?;
        params.stream = stream;
        params.warm_start = self.warm_start;
        params.s0 = self.s0;
        params.mu = Distribution::uniform(mdp.num_states());
        params.sampling = sampling;
        params.pi0 = Some(self.pi0.load(mdp.num_states(), mdp.num_actions())?);
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_text_and_overrides() {
        let text = "# cold start\nT = 20\nK=500\nwarm_start = false\nsweep = 3:1, 2:1.5\n";
        let mut config = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(config.outer_iters, 20);
        assert_eq!(config.critic_iters, 500);
        assert!(!config.warm_start);
        assert_eq!(config.sweep, vec![(3.0, 1.0), (2.0, 1.5)]);
        assert_eq!(config.n, 6);

        config.apply_override("alpha=0.01").unwrap();
        assert_eq!(config.alpha, 0.01);
        assert!(config.apply_override("alpha").is_err());
        assert!(config.apply_override("nope=1").is_err());
        assert!(ExperimentConfig::from_text("T = x\n").is_err());
    }

    #[test]
    fn validation_catches_missing_files_and_zero_seeds() {
        let mut config = ExperimentConfig::default();
        assert!(config.validate().is_ok());
        config.num_seeds = 0;
        assert!(config.validate().is_err());
        config.num_seeds = 1;
        config.mdp = "/nonexistent/mdp.txt".into();
        assert!(config.validate().is_err());
        config.mdp = BUILTIN_CYCLIC.into();
        config.pi_b = PolicySpec::parse("/nonexistent/pi.txt");
        assert!(config.validate().is_err());
    }

    #[test]
    fn truncation_below_one_is_rejected() {
        let config = ExperimentConfig {
            rho_bar: 0.9,
            c_bar: 0.9,
            ..ExperimentConfig::default()
        };
        assert!(config.levels().is_err());
    }
}
