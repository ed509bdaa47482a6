//! Seed sweeps over a one-dimensional grid of horizons, change counts or
//! restart periods. Cells run in parallel; results are aggregated in grid
//! order so output does not depend on scheduling.

use rayon::prelude::*;

use crate::config::{ExperimentConfig, InstanceSpec, Mode};
use crate::engine::{run_rcb, RestartPeriod, SimulationTrace};
use crate::error::{Error, Result};
use crate::meta::run_rcb_meta;
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Horizon,
    Changes,
    RestartPeriod,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Horizon => "horizon",
            SweepParameter::Changes => "changes",
            SweepParameter::RestartPeriod => "restart_period",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "horizon" => Some(SweepParameter::Horizon),
            "changes" => Some(SweepParameter::Changes),
            "restart_period" => Some(SweepParameter::RestartPeriod),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepGrid {
    pub parameter: SweepParameter,
    pub values: Vec<usize>,
}

impl SweepGrid {
    /// Parses `name=v1,v2,...`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| Error::input(format!("grid `{s}` is not of the form name=v1,v2")))?;
        let parameter = SweepParameter::parse(name.trim())
            .ok_or_else(|| Error::input(format!("unknown sweep parameter `{name}`")))?;
        let values = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::input(format!("bad grid value `{v}`")))
            })
            .collect::<Result<Vec<usize>>>()?;
        if values.is_empty() {
            return Err(Error::input("empty grid"));
        }
        Ok(Self { parameter, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub grid_value: usize,
    /// Restart period used at this grid point (rcb mode).
    pub restart_period: Option<usize>,
    pub mean_regret: f64,
    pub std_regret: f64,
    pub seeds: usize,
}

/// Copy of `config` with the grid parameter set to `value`.
pub fn config_at(
    config: &ExperimentConfig,
    parameter: SweepParameter,
    value: usize,
) -> Result<ExperimentConfig> {
    let mut c = config.clone();
    match parameter {
        SweepParameter::Horizon => {
            c.horizon = value;
            match &mut c.instance {
                Some(InstanceSpec::Generated { spec, .. }) => spec.horizon = value,
                _ => {
                    return Err(Error::input(
                        "sweeping the horizon needs a [generator] instance",
                    ))
                }
            }
        }
        SweepParameter::Changes => match &mut c.instance {
            Some(InstanceSpec::Generated { spec, .. }) => spec.changes = value,
            _ => {
                return Err(Error::input(
                    "sweeping the change count needs a [generator] instance",
                ))
            }
        },
        SweepParameter::RestartPeriod => {
            if c.mode == Mode::Meta {
                return Err(Error::input("meta mode chooses its own restart periods"));
            }
            if value == 0 {
                return Err(Error::input("restart period must be at least 1"));
            }
            c.restart_period = RestartPeriod::Fixed(value);
        }
    }
    if let Some(InstanceSpec::Generated { spec, .. }) = &c.instance {
        spec.check()?;
    }
    Ok(c)
}

/// One simulation: the instance and trace for `seed` under `config`.
pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<SimulationTrace> {
    let (market, timeline) = config.instance_for(seed)?;
    let sim = config.simulation_config(seed);
    let mut rng = seeded_rng(seed, 0);
    match config.mode {
        Mode::Rcb => run_rcb(&sim, &market, &timeline, &mut rng),
        Mode::Meta => run_rcb_meta(&sim, &market, &timeline, &mut rng),
        Mode::OracleCheck => Err(Error::input("oracle-check mode runs no simulation")),
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// For each grid point, the mean and sample standard deviation over seeds of
/// the largest per-player final regret.
pub fn run_sweep(config: &ExperimentConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let configs = grid
        .values
        .iter()
        .map(|&v| config_at(config, grid.parameter, v))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|p| config.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(p, seed)| {
            let trace = run_single(&configs[p], seed)?;
            Ok((
                p,
                trace.max_player_regret(config.baseline),
                trace.restart_period,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(grid
        .values
        .iter()
        .enumerate()
        .map(|(p, &grid_value)| {
            let regrets: Vec<f64> = results.iter().filter(|r| r.0 == p).map(|r| r.1).collect();
            let (mean_regret, std_regret) = mean_std(&regrets);
            SweepRow {
                grid_value,
                restart_period: results.iter().find(|r| r.0 == p).and_then(|r| r.2),
                mean_regret,
                std_regret,
                seeds: regrets.len(),
            }
        })
        .collect())
}
