//! Model defaults and the calibration that produces them.
//!
//! Detector parameters, losses and the noise decay are fixed inputs. The
//! calibration then chooses the source brightness, broadband noise and pump
//! leakage so that
//!
//! - a single-pump JSI measurement shows the target CAR on a far channel
//!   pair and a lower target CAR next to the pump, and
//! - the ten-user fully connected network reaches the target mean overall
//!   key rate.
//!
//! For a given brightness the two CAR targets fix the noise terms by
//! bisection on the analytic model; the brightness itself is then found by
//! a log-scale scan and bisection on the network mean key rate. The result
//! is written to `data/defaults.json` and embedded in the library.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Channel, ChannelGrid};
use crate::network::{Topology, UserAllocation};
use crate::pipeline::{evaluate_schedule, NetworkSetup};
use crate::planner::{plan_schedule, PlanProblem};
use crate::network::Schedule;
use crate::qkd::QkdParams;
use crate::sfwm::{correlation_graph, PumpConfig};
use crate::stats::{pair_stats_analytic, Arm, DetectorModel, JsiMode, MeasurementSetup, SourceModel, DEFAULT_OFFSET_PS};

const EMBEDDED: &str = include_str!("../data/defaults.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    /// CAR of the pair `pump ± far_distance` in the JSI measurement.
    pub far_car: f64,
    pub far_distance: i32,
    /// CAR of the pair `pump ± near_distance`.
    pub near_car: f64,
    pub near_distance: i32,
    /// Mean overall key rate of the fully connected network (bps).
    pub mean_skr_bps: f64,
    pub network_users: usize,
    /// Singles above this rate saturate a detector; reported, not enforced.
    pub saturation_singles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedParameters {
    pub detector: DetectorModel,
    pub noise_decay: f64,
    pub jsi_pump: Channel,
    pub jsi_loss_db: f64,
    pub jsi_integration_s: f64,
    pub window_ps: i64,
    /// Network filter bandwidth over JSI filter bandwidth.
    pub bandwidth_factor: f64,
    pub fiber_km: f64,
    pub fiber_db_per_km: f64,
    /// Everything between source and detector besides the fiber.
    pub insertion_loss_db: f64,
    pub slice_s: f64,
    pub qkd: QkdParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInputs {
    pub targets: CalibrationTargets,
    pub fixed: FixedParameters,
}

impl Default for CalibrationInputs {
    fn default() -> Self {
        CalibrationInputs {
            targets: CalibrationTargets {
                far_car: 1000.0,
                far_distance: 10,
                near_car: 100.0,
                near_distance: 1,
                mean_skr_bps: 122.2,
                network_users: 10,
                saturation_singles: 2e6,
            },
            fixed: FixedParameters {
                detector: DetectorModel {
                    efficiency: 0.7,
                    dark_rate: 100.0,
                    jitter_sigma_ps: 20.0,
                    dead_time_ns: 20.0,
                },
                noise_decay: 0.3,
                jsi_pump: Channel(40),
                jsi_loss_db: 6.0,
                jsi_integration_s: 20.0,
                window_ps: 200,
                bandwidth_factor: 4.0,
                fiber_km: 6.2,
                fiber_db_per_km: 0.21,
                insertion_loss_db: 7.0,
                slice_s: 600.0,
                qkd: QkdParams::default(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Achieved {
    pub far_car: f64,
    pub near_car: f64,
    pub mean_skr_bps: f64,
    pub min_skr_bps: f64,
    pub positive_links: usize,
    pub configs: usize,
    pub max_jsi_singles: f64,
    pub max_network_singles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsiDefaults {
    pub setup: MeasurementSetup,
    pub integration_s: f64,
    pub pump: Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDefaults {
    pub setup: NetworkSetup,
    pub slice_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Defaults {
    pub jsi: JsiDefaults,
    pub network: NetworkDefaults,
    pub qkd: QkdParams,
    pub inputs: CalibrationInputs,
    pub achieved: Achieved,
}

impl Defaults {
    /// Defaults shipped with the library.
    pub fn embedded() -> Defaults {
        serde_json::from_str(EMBEDDED).expect("embedded defaults are valid")
    }

    pub fn from_json(s: &str) -> Result<Defaults> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("defaults serialize") + "\n"
    }
}

impl FixedParameters {
    fn jsi_setup(&self, source: SourceModel) -> MeasurementSetup {
        MeasurementSetup {
            grid: ChannelGrid::default(),
            source,
            arm: Arm::new(self.detector, self.jsi_loss_db),
            window_ps: self.window_ps,
            offset_ps: DEFAULT_OFFSET_PS,
        }
    }

    fn network_setup(&self, source: SourceModel) -> NetworkSetup {
        NetworkSetup::new(
            source.scaled_bandwidth(self.bandwidth_factor),
            self.detector,
            self.fiber_km * self.fiber_db_per_km + self.insertion_loss_db,
            self.window_ps,
        )
    }
}

/// CAR of the pair symmetric about the JSI pump at `distance`.
pub fn jsi_car_at(setup: &MeasurementSetup, pump: Channel, distance: i32) -> f64 {
    let config = PumpConfig::at_reference("jsi", &[pump]).expect("one pump");
    let graph = correlation_graph(&config, &setup.grid, false);
    pair_stats_analytic(
        &graph,
        Channel(pump.0 - distance),
        Channel(pump.0 + distance),
        &setup.source,
        &setup.arm,
        &setup.arm,
        setup.window_ps as f64,
        1.0,
    )
    .car
}

/// Smallest `x ≥ 0` with `car(x) <= target`, for `car` decreasing in `x`.
/// `None` if even `x = 0` is below the target.
fn solve_decreasing(target: f64, car: impl Fn(f64) -> f64) -> Option<f64> {
    if car(0.0) < target {
        return None;
    }
    let mut hi = 1.0;
    while car(hi) > target {
        hi *= 2.0;
        if hi > 1e15 {
            return Some(hi);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if car(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Noise terms meeting both CAR targets at brightness `b`.
fn source_for_brightness(inputs: &CalibrationInputs, b: f64) -> Option<SourceModel> {
    let t = &inputs.targets;
    let f = &inputs.fixed;
    let mut src = SourceModel {
        brightness: b,
        residual_pump_noise: 0.0,
        noise_decay: f.noise_decay,
        broadband_noise: 0.0,
    };
    // The far pair barely sees the leakage and the near pair is dominated
    // by it, so a few alternating solves converge.
    for _ in 0..6 {
        src.broadband_noise = solve_decreasing(t.far_car, |x| {
            let s = SourceModel { broadband_noise: x, ..src };
            jsi_car_at(&f.jsi_setup(s), f.jsi_pump, t.far_distance)
        })?;
        src.residual_pump_noise = solve_decreasing(t.near_car, |x| {
            let s = SourceModel { residual_pump_noise: x, ..src };
            jsi_car_at(&f.jsi_setup(s), f.jsi_pump, t.near_distance)
        })?;
    }
    Some(src)
}

fn network_plan(inputs: &CalibrationInputs) -> Result<(Schedule, UserAllocation)> {
    let users: Vec<String> = (1..=inputs.targets.network_users).map(|i| format!("U{i}")).collect();
    let mut problem = PlanProblem::new(Topology::complete(users), None, ChannelGrid::default());
    problem.slice_s = inputs.fixed.slice_s;
    let plan = plan_schedule(&problem).map_err(|e| Error::InvalidProblem(e.to_string()))?;
    Ok((plan.schedule, plan.alloc))
}

struct NetworkOutcome {
    mean: f64,
    min: f64,
    positive: usize,
    max_singles: f64,
}

fn evaluate(inputs: &CalibrationInputs, plan: &(Schedule, UserAllocation), src: SourceModel) -> Result<NetworkOutcome> {
    let setup = inputs.fixed.network_setup(src);
    let qkd = &inputs.fixed.qkd;
    let eval = evaluate_schedule(&plan.0, &plan.1, &setup, qkd, &qkd.linear_penalty(), JsiMode::Analytic, None)?;
    let max_singles = eval
        .per_config
        .iter()
        .flatten()
        .map(|(_, s)| s.singles_a.max(s.singles_b))
        .fold(0.0, f64::max);
    Ok(NetworkOutcome {
        mean: eval.report.summary.mean_overall_skr,
        min: eval.report.summary.min_overall_skr,
        positive: eval.report.summary.positive_links,
        max_singles,
    })
}

/// Run the calibration.
pub fn calibrate(inputs: &CalibrationInputs) -> Result<Defaults> {
    let t = &inputs.targets;
    let f = &inputs.fixed;
    if !(t.far_car > t.near_car && t.near_car > 0.0 && t.far_distance > t.near_distance && t.near_distance >= 1) {
        return Err(Error::InvalidModel("CAR targets must satisfy far > near > 0 at far > near distance".into()));
    }
    f.qkd.validate()?;
    f.detector.validate()?;
    let plan = network_plan(inputs)?;

    let mean_at = |b: f64| -> Result<Option<f64>> {
        match source_for_brightness(inputs, b) {
            Some(src) => Ok(Some(evaluate(inputs, &plan, src)?.mean)),
            None => Ok(None),
        }
    };

    // Scan upward in brightness for the first point at or above the target.
    let steps = 80;
    let (lo_exp, hi_exp) = (1.0f64, 8.0f64);
    let mut prev = lo_exp;
    let mut bracket = None;
    for k in 0..=steps {
        let e = lo_exp + (hi_exp - lo_exp) * k as f64 / steps as f64;
        match mean_at(10f64.powf(e))? {
            Some(m) if m >= t.mean_skr_bps => {
                bracket = Some((prev, e));
                break;
            }
            Some(_) => prev = e,
            None => break,
        }
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Err(Error::InvalidModel(format!(
            "no brightness reaches a mean key rate of {} bps under the CAR targets",
            t.mean_skr_bps
        )));
    };
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        match mean_at(10f64.powf(mid))? {
            Some(m) if m < t.mean_skr_bps => lo = mid,
            _ => hi = mid,
        }
    }
    let brightness = 10f64.powf(hi);
    let source = source_for_brightness(inputs, brightness).expect("bracket is feasible");
    let outcome = evaluate(inputs, &plan, source)?;

    let jsi = f.jsi_setup(source);
    let config = PumpConfig::at_reference("jsi", &[f.jsi_pump]).expect("one pump");
    let graph = correlation_graph(&config, &jsi.grid, false);
    let max_jsi_singles = (1..=t.far_distance)
        .flat_map(|d| [Channel(f.jsi_pump.0 - d), Channel(f.jsi_pump.0 + d)])
        .map(|c| crate::stats::channel_singles_rate(c, &graph, &source, &jsi.arm.detector, jsi.arm.loss_db))
        .fold(0.0, f64::max);

    Ok(Defaults {
        jsi: JsiDefaults {
            setup: jsi,
            integration_s: f.jsi_integration_s,
            pump: f.jsi_pump,
        },
        network: NetworkDefaults {
            setup: f.network_setup(source),
            slice_s: f.slice_s,
        },
        qkd: f.qkd.clone(),
        inputs: inputs.clone(),
        achieved: Achieved {
            far_car: jsi_car_at(&jsi, f.jsi_pump, t.far_distance),
            near_car: jsi_car_at(&jsi, f.jsi_pump, t.near_distance),
            mean_skr_bps: outcome.mean,
            min_skr_bps: outcome.min,
            positive_links: outcome.positive,
            configs: plan.0.len(),
            max_jsi_singles,
            max_network_singles: outcome.max_singles,
        },
    })
}
