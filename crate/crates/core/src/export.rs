//! CSV output. Every file starts with `#`-prefixed lines carrying the
//! resolved configuration and seed, followed by a header row and data.
//! Floats use Rust's shortest round-trip formatting, so identical runs
//! produce byte-identical files.

use std::io::Write;

use crate::config::ExperimentConfig;
use crate::engine::{Baseline, SimulationTrace};
use crate::environment::MeanRewardTimeline;
use crate::error::Result;
use crate::market::MarketInstance;
use crate::sweep::SweepRow;

/// Trace columns, one row per `(t, player)`.
pub const TRACE_COLUMNS: [&str; 10] = [
    "t",
    "block_index",
    "restart_flag",
    "player",
    "matched_arm",
    "sampled_reward",
    "true_mean",
    "benchmark_arm",
    "regret_increment",
    "cumulative_regret",
];

/// Extra trace columns appended in meta mode.
pub const META_TRACE_COLUMNS: [&str; 2] = ["epoch_index", "chosen_H"];

pub const SWEEP_COLUMNS: [&str; 5] = [
    "grid_value",
    "restart_period",
    "mean_regret",
    "std_regret",
    "seeds",
];

/// Resolved config plus everything specific to one run: the seed, the
/// restart period actually used and the materialized instance.
pub fn run_preamble(
    config: &ExperimentConfig,
    seed: u64,
    market: &MarketInstance,
    timeline: &MeanRewardTimeline,
    trace: &SimulationTrace,
) -> String {
    let mut out = config.echo();
    out.push_str(&format!("run.seed = {seed}\n"));
    if let Some(h) = trace.restart_period {
        out.push_str(&format!("run.restart_period = {h}\n"));
    }
    if let Some(e) = &trace.ensemble {
        out.push_str(&format!(
            "run.ensemble = {:?} (epoch length {}, {} epochs)\n",
            e.periods, e.epoch_length, e.epoch_count
        ));
    }
    out.push_str(&format!(
        "instance.utilities = {:?}\n",
        market.arm_utilities()
    ));
    out.push_str(&format!(
        "instance.initial_means = {:?}\n",
        timeline.initial_means()
    ));
    let events: Vec<String> = timeline
        .events()
        .iter()
        .map(|e| format!("({}, {}, {}, {})", e.time, e.player, e.arm, e.new_mean))
        .collect();
    out.push_str(&format!("instance.events = [{}]\n", events.join(", ")));
    out
}

fn write_preamble<W: Write>(w: &mut W, preamble: &str) -> Result<()> {
    for line in preamble.lines() {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

pub fn write_trace_csv<W: Write>(
    trace: &SimulationTrace,
    baseline: Baseline,
    preamble: &str,
    mut w: W,
) -> Result<()> {
    write_preamble(&mut w, preamble)?;
    let meta = trace.ensemble.is_some();
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = TRACE_COLUMNS.to_vec();
    if meta {
        header.extend(META_TRACE_COLUMNS);
    }
    out.write_record(&header)?;

    let mut cumulative = vec![0.0; trace.n_players];
    for r in &trace.rounds {
        for (i, p) in r.players.iter().enumerate() {
            let inc = p.regret(baseline);
            cumulative[i] += inc;
            let mut row = vec![
                r.t.to_string(),
                r.block_index.to_string(),
                u8::from(r.restart).to_string(),
                i.to_string(),
                p.arm.to_string(),
                p.reward.to_string(),
                p.mean.to_string(),
                p.benchmark_arm(baseline).to_string(),
                inc.to_string(),
                cumulative[i].to_string(),
            ];
            if meta {
                let tag = r.epoch.expect("meta rounds carry an epoch tag");
                row.push(tag.index.to_string());
                row.push(tag.chosen_period.to_string());
            }
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-epoch meta decisions: `epoch, chosen_H, normalized_reward`, then one
/// probability column `p_h<period>` per ensemble member.
pub fn write_epochs_csv<W: Write>(trace: &SimulationTrace, preamble: &str, mut w: W) -> Result<()> {
    write_preamble(&mut w, preamble)?;
    let mut out = csv::Writer::from_writer(w);
    let periods = trace
        .ensemble
        .as_ref()
        .map(|e| e.periods.clone())
        .unwrap_or_default();
    let mut header = vec![
        "epoch".to_string(),
        "chosen_H".to_string(),
        "normalized_reward".to_string(),
    ];
    header.extend(periods.iter().map(|h| format!("p_h{h}")));
    out.write_record(&header)?;
    for e in &trace.epochs {
        let mut row = vec![
            e.epoch.to_string(),
            e.chosen_period.to_string(),
            e.normalized_reward.to_string(),
        ];
        row.extend(e.probabilities.iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], preamble: &str, mut w: W) -> Result<()> {
    write_preamble(&mut w, preamble)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.grid_value.to_string(),
            r.restart_period.map(|h| h.to_string()).unwrap_or_default(),
            r.mean_regret.to_string(),
            r.std_regret.to_string(),
            r.seeds.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{simulate, RestartPeriod, SimulationConfig};
    use crate::environment::MeanRewardTimeline;
    use crate::market::MarketInstance;
    use crate::meta::simulate_meta;

    fn instance() -> (MarketInstance, MeanRewardTimeline) {
        (
            MarketInstance::new(2, 2, vec![vec![2.0, 1.0], vec![2.0, 1.0]]).unwrap(),
            MeanRewardTimeline::stationary(30, vec![vec![0.9, 0.2], vec![0.7, 0.4]], 1.0).unwrap(),
        )
    }

    fn read(bytes: &[u8]) -> (Vec<String>, Vec<csv::StringRecord>) {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(bytes);
        let header = r.headers().unwrap().iter().map(String::from).collect();
        (header, r.records().map(|x| x.unwrap()).collect())
    }

    #[test]
    fn trace_layout() {
        let (m, tl) = instance();
        let config = SimulationConfig::new(30).with_restart_period(RestartPeriod::Fixed(10));
        let trace = simulate(&config, &m, &tl).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, Baseline::Pessimal, "seed = 0\nmode = rcb", &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed = 0\n# mode = rcb\nt,block_index,"));
        let (header, rows) = read(&buf);
        assert_eq!(header, TRACE_COLUMNS);
        assert_eq!(rows.len(), 60);
        assert_eq!(&rows[0][2], "1");
        assert_eq!(&rows[2][2], "0");
        assert_eq!(&rows[40][1], "3");
        let last_p0 = &rows[58];
        let total: f64 = trace.final_regret(Baseline::Pessimal)[0];
        assert_eq!(last_p0[9].parse::<f64>().unwrap(), total);
    }

    #[test]
    fn meta_trace_and_epochs() {
        let (m, tl) = instance();
        let trace = simulate_meta(&SimulationConfig::new(30), &m, &tl).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, Baseline::Pessimal, "", &mut buf).unwrap();
        let (header, rows) = read(&buf);
        assert_eq!(header.len(), 12);
        assert_eq!(&header[10..], META_TRACE_COLUMNS);
        assert_eq!(&rows[0][10], "1");

        let mut buf = Vec::new();
        write_epochs_csv(&trace, "", &mut buf).unwrap();
        let (header, rows) = read(&buf);
        assert_eq!(
            header,
            [
                "epoch",
                "chosen_H",
                "normalized_reward",
                "p_h1",
                "p_h2",
                "p_h4",
                "p_h8"
            ]
        );
        assert_eq!(rows.len(), trace.epochs.len());
    }

    #[test]
    fn sweep_layout() {
        let rows = vec![SweepRow {
            grid_value: 5000,
            restart_period: None,
            mean_regret: 1.5,
            std_regret: 0.25,
            seeds: 4,
        }];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, "x = 1", &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# x = 1\ngrid_value,restart_period,mean_regret,std_regret,seeds\n5000,,1.5,0.25,4\n"
        );
    }
}
