//! Experiment configuration files.
//!
//! Configs are TOML with a mandatory `version = 1` key. A run is described
//! either by an explicit market and timeline or by a `[generator]` section;
//! see the README for the full grammar. Every key left out is filled with
//! its default and reported by [`ExperimentConfig::echo`].

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::engine::{Baseline, RestartPeriod, SimulationConfig};
use crate::environment::{ChangeEvent, MeanRewardTimeline, NoiseFamily};
use crate::error::{Error, Result};
use crate::generate::{generate_instance, GeneratorSpec};
use crate::market::MarketInstance;
use crate::seeded_rng;
use crate::sweep::{SweepGrid, SweepParameter};

pub const CONFIG_VERSION: i64 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: Option<i64>,
    mode: Option<String>,
    horizon: Option<usize>,
    restart_period: Option<toml::Value>,
    seeds: Option<Vec<u64>>,
    baseline: Option<String>,
    noise: Option<String>,
    output_dir: Option<String>,
    certify_stability: Option<bool>,
    market: Option<RawMarket>,
    timeline: Option<RawTimeline>,
    generator: Option<RawGenerator>,
    oracle: Option<RawOracle>,
    sweep: Option<RawSweep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarket {
    players: Option<usize>,
    arms: Option<usize>,
    utilities: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTimeline {
    mu_bar: Option<f64>,
    initial_means: Option<Vec<Vec<f64>>>,
    events: Option<Vec<RawEvent>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    time: usize,
    player: usize,
    arm: usize,
    mean: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenerator {
    changes: Option<usize>,
    min_gap: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    instances: Option<usize>,
    max_size: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: String,
    values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Rcb,
    Meta,
    OracleCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Rcb => "rcb",
            Mode::Meta => "meta",
            Mode::OracleCheck => "oracle-check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rcb" => Some(Mode::Rcb),
            "meta" => Some(Mode::Meta),
            "oracle-check" => Some(Mode::OracleCheck),
            _ => None,
        }
    }
}

/// Where a run's market and timeline come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSpec {
    Explicit {
        market: MarketInstance,
        timeline: MeanRewardTimeline,
    },
    /// Drawn by [`generate_instance`]. With `seed` set every run shares one
    /// instance; otherwise each run seed draws its own.
    Generated {
        spec: GeneratorSpec,
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleSpec {
    pub instances: usize,
    pub max_size: usize,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            instances: 200,
            max_size: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub version: i64,
    pub mode: Mode,
    pub horizon: usize,
    pub restart_period: RestartPeriod,
    pub seeds: Vec<u64>,
    pub baseline: Baseline,
    pub noise: NoiseFamily,
    pub output_dir: PathBuf,
    pub certify_stability: bool,
    pub instance: Option<InstanceSpec>,
    pub oracle: OracleSpec,
    pub sweep: Option<SweepGrid>,
    /// Keys that were filled with defaults.
    pub defaulted: Vec<&'static str>,
}

/// Line (1-based) of the first occurrence of `key` as a TOML key or table
/// header.
fn locate(src: &str, key: &str) -> Option<usize> {
    src.lines()
        .position(|line| {
            let l = line.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
                || l.trim_end() == format!("[{key}]")
                || l.starts_with(&format!("[[{key}]]"))
        })
        .map(|i| i + 1)
}

fn config_err(src: &str, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line: locate(src, key),
        message: message.into(),
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let src = std::fs::read_to_string(path)?;
    parse_config_str(&src)
}

pub fn parse_config_str(src: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| Error::Config {
        line: e
            .span()
            .map(|s| src[..s.start.min(src.len())].matches('\n').count() + 1),
        message: e.message().to_string(),
    })?;
    let mut defaulted = Vec::new();

    let version = raw
        .version
        .ok_or_else(|| config_err(src, "version", "missing required key `version`"))?;
    if version != CONFIG_VERSION {
        return Err(config_err(
            src,
            "version",
            format!("unsupported config version {version} (expected {CONFIG_VERSION})"),
        ));
    }

    let mode = match raw.mode.as_deref() {
        None => {
            defaulted.push("mode");
            Mode::Rcb
        }
        Some(s) => Mode::parse(s).ok_or_else(|| {
            config_err(
                src,
                "mode",
                format!("unknown mode `{s}` (rcb, meta, oracle-check)"),
            )
        })?,
    };

    let noise = match raw.noise.as_deref() {
        None => {
            defaulted.push("noise");
            NoiseFamily::Gaussian
        }
        Some(s) => NoiseFamily::parse(s).ok_or_else(|| {
            config_err(
                src,
                "noise",
                format!("unknown noise `{s}` (gaussian, none, uniform)"),
            )
        })?,
    };

    let baseline = match raw.baseline.as_deref() {
        None => {
            defaulted.push("baseline");
            Baseline::Pessimal
        }
        Some(s) => Baseline::parse(s).ok_or_else(|| {
            config_err(
                src,
                "baseline",
                format!("unknown baseline `{s}` (pessimal, optimal)"),
            )
        })?,
    };

    let restart_period = match &raw.restart_period {
        None => {
            defaulted.push("restart_period");
            RestartPeriod::Auto
        }
        Some(toml::Value::String(s)) if s == "auto" => RestartPeriod::Auto,
        Some(toml::Value::Integer(h)) if *h >= 1 => RestartPeriod::Fixed(*h as usize),
        Some(other) => {
            return Err(config_err(
                src,
                "restart_period",
                format!("restart_period must be \"auto\" or a positive integer, got {other}"),
            ))
        }
    };

    let seeds = match raw.seeds.clone() {
        None => {
            defaulted.push("seeds");
            vec![0]
        }
        Some(s) if s.is_empty() => {
            return Err(config_err(src, "seeds", "seed list is empty"));
        }
        Some(s) => s,
    };

    let output_dir = match raw.output_dir.clone() {
        None => {
            defaulted.push("output_dir");
            PathBuf::from("out")
        }
        Some(d) => PathBuf::from(d),
    };

    let certify_stability = raw.certify_stability.unwrap_or_else(|| {
        defaulted.push("certify_stability");
        false
    });

    let oracle = {
        let o = raw.oracle.as_ref();
        let instances = o.and_then(|o| o.instances).unwrap_or_else(|| {
            defaulted.push("oracle.instances");
            OracleSpec::default().instances
        });
        let max_size = o.and_then(|o| o.max_size).unwrap_or_else(|| {
            defaulted.push("oracle.max_size");
            OracleSpec::default().max_size
        });
        let seed = o.and_then(|o| o.seed).unwrap_or_else(|| {
            defaulted.push("oracle.seed");
            0
        });
        if !(2..=crate::market::ENUMERATION_LIMIT).contains(&max_size) {
            return Err(config_err(
                src,
                "max_size",
                format!(
                    "oracle.max_size must lie in 2..={}",
                    crate::market::ENUMERATION_LIMIT
                ),
            ));
        }
        OracleSpec {
            instances,
            max_size,
            seed,
        }
    };

    let needs_instance = mode != Mode::OracleCheck;
    let horizon = match raw.horizon {
        Some(0) => return Err(config_err(src, "horizon", "horizon must be at least 1")),
        Some(h) => h,
        None if needs_instance => {
            return Err(config_err(src, "horizon", "missing required key `horizon`"))
        }
        None => 0,
    };
    if mode == Mode::Meta && horizon < 2 {
        return Err(config_err(
            src,
            "horizon",
            "meta mode needs a horizon of at least 2",
        ));
    }

    let instance = if needs_instance || raw.market.is_some() {
        Some(resolve_instance(src, &raw, horizon, &mut defaulted)?)
    } else {
        None
    };

    let sweep = match raw.sweep {
        None => None,
        Some(s) => {
            let parameter = SweepParameter::parse(&s.parameter).ok_or_else(|| {
                config_err(
                    src,
                    "parameter",
                    format!(
                        "unknown sweep parameter `{}` (horizon, changes, restart_period)",
                        s.parameter
                    ),
                )
            })?;
            if s.values.is_empty() {
                return Err(config_err(src, "values", "sweep needs at least one value"));
            }
            Some(SweepGrid {
                parameter,
                values: s.values,
            })
        }
    };

    Ok(ExperimentConfig {
        version,
        mode,
        horizon,
        restart_period,
        seeds,
        baseline,
        noise,
        output_dir,
        certify_stability,
        instance,
        oracle,
        sweep,
        defaulted,
    })
}

fn resolve_instance(
    src: &str,
    raw: &RawConfig,
    horizon: usize,
    defaulted: &mut Vec<&'static str>,
) -> Result<InstanceSpec> {
    let market = raw
        .market
        .as_ref()
        .ok_or_else(|| config_err(src, "market", "missing [market] section"))?;
    let timeline = raw.timeline.as_ref();
    let mu_bar = timeline.and_then(|t| t.mu_bar).unwrap_or_else(|| {
        defaulted.push("timeline.mu_bar");
        1.0
    });
    let explicit_means = timeline.and_then(|t| t.initial_means.as_ref());

    let (n, k) = match (market.players, market.arms) {
        (Some(n), Some(k)) => (n, k),
        _ => {
            return Err(config_err(
                src,
                "market",
                "[market] needs both `players` and `arms`",
            ))
        }
    };
    if k < n {
        return Err(config_err(src, "arms", "market requires K ≥ N"));
    }

    match (&raw.generator, explicit_means) {
        (Some(_), Some(_)) => Err(config_err(
            src,
            "generator",
            "[generator] cannot be combined with timeline.initial_means",
        )),
        (Some(_), None) if market.utilities.is_some() => Err(config_err(
            src,
            "utilities",
            "[generator] draws arm utilities itself; remove market.utilities",
        )),
        (Some(g), None) => {
            if timeline.and_then(|t| t.events.as_ref()).is_some() {
                return Err(config_err(
                    src,
                    "events",
                    "[generator] cannot be combined with explicit timeline events",
                ));
            }
            let min_gap = g.min_gap.unwrap_or_else(|| {
                defaulted.push("generator.min_gap");
                0.2
            });
            let changes = g.changes.unwrap_or_else(|| {
                defaulted.push("generator.changes");
                0
            });
            let spec = GeneratorSpec {
                n_players: n,
                n_arms: k,
                horizon,
                mu_bar,
                min_gap,
                changes,
            };
            spec.check()
                .map_err(|e| config_err(src, "generator", e.to_string()))?;
            Ok(InstanceSpec::Generated { spec, seed: g.seed })
        }
        (None, Some(means)) => {
            let utilities = market.utilities.clone().ok_or_else(|| {
                config_err(src, "market", "explicit instances need market.utilities")
            })?;
            let market = MarketInstance::new(n, k, utilities)
                .map_err(|e| config_err(src, "utilities", e.to_string()))?;
            if means.len() != n || means.iter().any(|row| row.len() != k) {
                return Err(config_err(
                    src,
                    "initial_means",
                    format!("timeline.initial_means must be {n} rows of {k} means"),
                ));
            }
            let events = timeline
                .and_then(|t| t.events.as_ref())
                .map(|evs| {
                    evs.iter()
                        .map(|e| ChangeEvent {
                            time: e.time,
                            player: e.player,
                            arm: e.arm,
                            new_mean: e.mean,
                        })
                        .collect()
                })
                .unwrap_or_default();
            let timeline = MeanRewardTimeline::new(horizon, means.clone(), events, mu_bar)
                .map_err(|e| match e {
                    Error::Assumption { .. } => e,
                    other => config_err(src, "timeline", other.to_string()),
                })?;
            Ok(InstanceSpec::Explicit { market, timeline })
        }
        (None, None) => Err(config_err(
            src,
            "timeline",
            "give either timeline.initial_means or a [generator] section",
        )),
    }
}

impl ExperimentConfig {
    pub fn simulation_config(&self, seed: u64) -> SimulationConfig {
        SimulationConfig {
            horizon: self.horizon,
            restart_period: self.restart_period,
            seed,
            noise: self.noise,
            baseline: self.baseline,
            certify_stability: self.certify_stability,
        }
    }

    /// Market and timeline for the run with seed `seed`.
    pub fn instance_for(&self, seed: u64) -> Result<(MarketInstance, MeanRewardTimeline)> {
        match &self.instance {
            None => Err(Error::input("this config describes no market instance")),
            Some(InstanceSpec::Explicit { market, timeline }) => {
                Ok((market.clone(), timeline.clone()))
            }
            Some(InstanceSpec::Generated { spec, seed: fixed }) => {
                generate_instance(spec, &mut seeded_rng(fixed.unwrap_or(seed), 1))
            }
        }
    }

    /// The resolved configuration as newline-terminated `key = value` lines;
    /// defaulted keys are marked.
    pub fn echo(&self) -> String {
        let mut lines: Vec<(String, String)> = vec![
            ("version".into(), self.version.to_string()),
            ("mode".into(), self.mode.name().into()),
            ("horizon".into(), self.horizon.to_string()),
            (
                "restart_period".into(),
                match self.restart_period {
                    RestartPeriod::Auto => "auto".into(),
                    RestartPeriod::Fixed(h) => h.to_string(),
                },
            ),
            ("seeds".into(), format!("{:?}", self.seeds)),
            ("baseline".into(), self.baseline.name().into()),
            ("noise".into(), self.noise.name().into()),
            ("output_dir".into(), self.output_dir.display().to_string()),
            (
                "certify_stability".into(),
                self.certify_stability.to_string(),
            ),
        ];
        match &self.instance {
            Some(InstanceSpec::Explicit { market, timeline }) => {
                lines.push(("market.players".into(), market.n_players().to_string()));
                lines.push(("market.arms".into(), market.n_arms().to_string()));
                lines.push((
                    "market.utilities".into(),
                    format!("{:?}", market.arm_utilities()),
                ));
                lines.push(("timeline.mu_bar".into(), timeline.mu_bar().to_string()));
                lines.push((
                    "timeline.initial_means".into(),
                    format!("{:?}", timeline.initial_means()),
                ));
                let events: Vec<String> = timeline
                    .events()
                    .iter()
                    .map(|e| format!("({}, {}, {}, {})", e.time, e.player, e.arm, e.new_mean))
                    .collect();
                lines.push(("timeline.events".into(), format!("[{}]", events.join(", "))));
            }
            Some(InstanceSpec::Generated { spec, seed }) => {
                lines.push(("market.players".into(), spec.n_players.to_string()));
                lines.push(("market.arms".into(), spec.n_arms.to_string()));
                lines.push(("timeline.mu_bar".into(), spec.mu_bar.to_string()));
                lines.push(("generator.changes".into(), spec.changes.to_string()));
                lines.push(("generator.min_gap".into(), spec.min_gap.to_string()));
                lines.push((
                    "generator.seed".into(),
                    seed.map_or_else(|| "per-run".into(), |s| s.to_string()),
                ));
            }
            None => {}
        }
        lines.push(("oracle.instances".into(), self.oracle.instances.to_string()));
        lines.push(("oracle.max_size".into(), self.oracle.max_size.to_string()));
        lines.push(("oracle.seed".into(), self.oracle.seed.to_string()));
        if let Some(sweep) = &self.sweep {
            lines.push(("sweep.parameter".into(), sweep.parameter.name().into()));
            lines.push(("sweep.values".into(), format!("{:?}", sweep.values)));
        }
        lines
            .into_iter()
            .map(|(k, v)| {
                if self.defaulted.iter().any(|d| *d == k) {
                    format!("{k} = {v}  (default)\n")
                } else {
                    format!("{k} = {v}\n")
                }
            })
            .collect()
    }
}
