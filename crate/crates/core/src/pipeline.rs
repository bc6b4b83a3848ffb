//! End-to-end evaluation of a schedule: per-configuration link statistics
//! (analytic or simulated) and the resulting key-rate report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ChannelGrid;
use crate::network::{induced_topology, Schedule, UserAllocation, UserPair, DEFAULT_GUARD_BAND};
use crate::qkd::{network_skr, QkdParams, SkrReport, YieldModel};
use crate::sfwm::{correlation_graph, PumpConfig};
use crate::stats::{
    derive_seed, pair_stats_analytic, simulate_pair_counts, Arm, DetectorModel, JsiMode, LinkStats, SourceModel,
    TagSimulation, DEFAULT_OFFSET_PS,
};

/// Source, detectors and links of a deployed network. Every user sees the
/// same arm (fiber plus insertion loss).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSetup {
    pub grid: ChannelGrid,
    pub source: SourceModel,
    pub arm: Arm,
    pub window_ps: i64,
    pub offset_ps: i64,
    pub guard_band: i32,
}

impl NetworkSetup {
    pub fn new(source: SourceModel, detector: DetectorModel, loss_db: f64, window_ps: i64) -> Self {
        NetworkSetup {
            grid: ChannelGrid::default(),
            source,
            arm: Arm::new(detector, loss_db),
            window_ps,
            offset_ps: DEFAULT_OFFSET_PS,
            guard_band: DEFAULT_GUARD_BAND,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.source.validate()?;
        self.arm.detector.validate()?;
        if self.window_ps <= 0 {
            return Err(Error::InvalidModel(format!("window {} ps is not positive", self.window_ps)));
        }
        if !(self.arm.loss_db.is_finite() && self.arm.loss_db >= 0.0) {
            return Err(Error::InvalidModel(format!("loss {} dB is negative", self.arm.loss_db)));
        }
        Ok(())
    }
}

/// Expected statistics of every link active under `config`.
pub fn config_link_stats(
    alloc: &UserAllocation,
    config: &PumpConfig,
    setup: &NetworkSetup,
    integration_s: f64,
) -> Result<BTreeMap<UserPair, LinkStats>> {
    let topo = induced_topology(alloc, config, &setup.grid, setup.guard_band)?;
    let graph = correlation_graph(config, &setup.grid, false);
    Ok(topo
        .edges()
        .iter()
        .map(|&p| {
            let s = pair_stats_analytic(
                &graph,
                alloc.channel(p.0),
                alloc.channel(p.1),
                &setup.source,
                &setup.arm,
                &setup.arm,
                setup.window_ps as f64,
                integration_s,
            );
            (p, s)
        })
        .collect())
}

/// Simulated statistics of every link active under `config`. Each link is
/// simulated with a seed derived from `seed`, `config_index` and the user
/// indices, so results do not depend on thread scheduling.
pub fn config_link_stats_mc(
    alloc: &UserAllocation,
    config: &PumpConfig,
    setup: &NetworkSetup,
    duration_s: f64,
    seed: u64,
    config_index: usize,
) -> Result<BTreeMap<UserPair, LinkStats>> {
    let topo = induced_topology(alloc, config, &setup.grid, setup.guard_band)?;
    let graph = correlation_graph(config, &setup.grid, false);
    let pairs: Vec<UserPair> = topo.edges().iter().copied().collect();
    pairs
        .par_iter()
        .map(|&p| {
            let sim = TagSimulation::for_pair(
                &graph,
                alloc.channel(p.0),
                alloc.channel(p.1),
                &setup.source,
                &setup.arm,
                &setup.arm,
                duration_s,
            );
            let link_seed = derive_seed(seed, &[config_index as u64, p.0 as u64, p.1 as u64]);
            let counts = simulate_pair_counts(&sim, setup.window_ps, setup.offset_ps, link_seed)?;
            Ok((p, counts.to_link_stats(duration_s)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEvaluation {
    pub mode: JsiMode,
    /// Link statistics per schedule entry, keyed by user-index pair.
    pub per_config: Vec<Vec<(UserPair, LinkStats)>>,
    pub report: SkrReport,
}

impl NetworkEvaluation {
    pub fn stats_maps(&self) -> Vec<BTreeMap<UserPair, LinkStats>> {
        self.per_config.iter().map(|v| v.iter().copied().collect()).collect()
    }
}

/// Link statistics and key rates for a schedule. Monte Carlo mode simulates
/// each entry for its scheduled duration and needs a seed.
pub fn evaluate_schedule(
    schedule: &Schedule,
    alloc: &UserAllocation,
    setup: &NetworkSetup,
    params: &QkdParams,
    model: &dyn YieldModel,
    mode: JsiMode,
    seed: Option<u64>,
) -> Result<NetworkEvaluation> {
    setup.validate()?;
    let per_config: Vec<BTreeMap<UserPair, LinkStats>> = match mode {
        JsiMode::Analytic => schedule
            .entries()
            .iter()
            .map(|e| config_link_stats(alloc, &e.config, setup, e.duration_s))
            .collect::<Result<_>>()?,
        JsiMode::MonteCarlo => {
            let seed = seed.ok_or_else(|| Error::InvalidModel("Monte Carlo evaluation needs a seed".into()))?;
            schedule
                .entries()
                .iter()
                .enumerate()
                .map(|(k, e)| config_link_stats_mc(alloc, &e.config, setup, e.duration_s, seed, k))
                .collect::<Result<_>>()?
        }
    };
    let report = network_skr(schedule, alloc, &per_config, params, model)?;
    Ok(NetworkEvaluation {
        mode,
        per_config: per_config.into_iter().map(|m| m.into_iter().collect()).collect(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Channel;

    fn setup() -> NetworkSetup {
        NetworkSetup::new(
            SourceModel {
                brightness: 1e5,
                residual_pump_noise: 1e3,
                noise_decay: 0.3,
                broadband_noise: 1e4,
            },
            DetectorModel {
                efficiency: 0.7,
                dark_rate: 100.0,
                jitter_sigma_ps: 20.0,
                dead_time_ns: 20.0,
            },
            8.0,
            200,
        )
    }

    fn ring() -> (UserAllocation, Schedule) {
        let alloc = UserAllocation::numbered(&[Channel(34), Channel(38), Channel(42), Channel(46)]).unwrap();
        let cfg = PumpConfig::at_reference("ring", &[Channel(36), Channel(44)]).unwrap();
        (alloc, Schedule::equal(vec![cfg], 2.0).unwrap())
    }

    #[test]
    fn analytic_covers_active_links_only() {
        let (alloc, schedule) = ring();
        let m = config_link_stats(&alloc, &schedule.entries()[0].config, &setup(), 1.0).unwrap();
        let keys: Vec<UserPair> = m.keys().copied().collect();
        assert_eq!(keys, vec![UserPair(0, 1), UserPair(0, 3), UserPair(1, 2), UserPair(2, 3)]);
        // 38 + 42 is the non-degenerate line, four times brighter.
        let deg = m[&UserPair(0, 1)].coincidence_rate;
        let non = m[&UserPair(0, 3)].coincidence_rate;
        assert!((non / deg - 4.0).abs() < 0.05, "{}", non / deg);
    }

    #[test]
    fn monte_carlo_is_seeded() {
        let (alloc, schedule) = ring();
        let s = setup();
        let p = QkdParams::default();
        let m = p.linear_penalty();
        let a = evaluate_schedule(&schedule, &alloc, &s, &p, &m, JsiMode::MonteCarlo, Some(3)).unwrap();
        let b = evaluate_schedule(&schedule, &alloc, &s, &p, &m, JsiMode::MonteCarlo, Some(3)).unwrap();
        assert_eq!(a, b);
        assert!(evaluate_schedule(&schedule, &alloc, &s, &p, &m, JsiMode::MonteCarlo, None).is_err());
    }
}
