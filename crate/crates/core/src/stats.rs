//! Photon counting statistics: an analytic rate model, a seeded time-tag
//! simulator and the coincidence counter that turns tags back into rates.
//!
//! Rates are in counts per second, times in picoseconds unless a name says
//! otherwise. The analytic and Monte Carlo paths share no code beyond the
//! model structs, so one can serve as an oracle for the other.

use std::f64::consts::SQRT_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use libm::erf;

use crate::error::{Error, Result};
use crate::grid::{Channel, ChannelGrid};
use crate::sfwm::{correlation_graph, forbidden_channels, CorrelationGraph, ForbiddenSet, PumpConfig};

pub const PS_PER_S: f64 = 1e12;

/// Offset used by the accidental estimator.
pub const DEFAULT_OFFSET_PS: i64 = 10_000;

/// Source brightness and the noise reaching a detector next to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    /// Pairs per second per unit relative strength.
    pub brightness: f64,
    /// Detected singles from pump leakage one channel away from a pump.
    pub residual_pump_noise: f64,
    /// Per-channel decay of the leakage; `residual * decay^(d-1)` at distance d.
    pub noise_decay: f64,
    /// Flat noise floor at the source, attenuated like signal photons.
    pub broadband_noise: f64,
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.brightness, self.residual_pump_noise, self.broadband_noise];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidModel("source rates must be finite and non-negative".into()));
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return Err(Error::InvalidModel(format!(
                "noise_decay {} outside (0, 1]",
                self.noise_decay
            )));
        }
        Ok(())
    }

    /// Same source seen through a filter `factor` times wider.
    pub fn scaled_bandwidth(&self, factor: f64) -> SourceModel {
        SourceModel {
            brightness: self.brightness * factor,
            broadband_noise: self.broadband_noise * factor,
            ..*self
        }
    }

    fn residual_at(&self, pumps: &PumpConfig, c: Channel) -> f64 {
        pumps
            .channels()
            .map(|p| p.distance(c))
            .filter(|&d| d >= 1)
            .map(|d| self.residual_pump_noise * self.noise_decay.powi(d - 1))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_rate: f64,
    /// Gaussian timing jitter (standard deviation).
    pub jitter_sigma_ps: f64,
    /// Non-paralyzable dead time.
    pub dead_time_ns: f64,
}

impl DetectorModel {
    /// Unit efficiency, no noise, no jitter, no dead time.
    pub fn ideal() -> Self {
        DetectorModel {
            efficiency: 1.0,
            dark_rate: 0.0,
            jitter_sigma_ps: 0.0,
            dead_time_ns: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::InvalidModel(format!("efficiency {} outside [0, 1]", self.efficiency)));
        }
        let rest = [self.dark_rate, self.jitter_sigma_ps, self.dead_time_ns];
        if rest.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidModel("detector parameters must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Fraction of incident events a detector with this dead time keeps at
    /// true input rate `rate`.
    pub fn live_fraction(&self, rate: f64) -> f64 {
        1.0 / (1.0 + rate * self.dead_time_ns * 1e-9)
    }
}

/// Power transmission of a `loss_db` attenuation.
pub fn transmission(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Probability that the arrival-time difference of a true pair lands inside
/// a coincidence window of total width `window_ps`.
pub fn jitter_capture(det_a: &DetectorModel, det_b: &DetectorModel, window_ps: f64) -> f64 {
    let sigma = det_a.jitter_sigma_ps.hypot(det_b.jitter_sigma_ps);
    if sigma == 0.0 {
        return 1.0;
    }
    erf(window_ps / 2.0 / (SQRT_2 * sigma))
}

/// Singles rate at channel `c` before dead-time losses: pair photons from
/// every incident edge, pump leakage, the attenuated noise floor and dark
/// counts.
pub fn channel_singles_rate(
    c: Channel,
    graph: &CorrelationGraph,
    src: &SourceModel,
    det: &DetectorModel,
    loss_db: f64,
) -> f64 {
    let t = transmission(loss_db) * det.efficiency;
    let pairs = src.brightness * graph.incident_strength(c) * t;
    pairs + src.residual_at(&graph.pumps, c) + src.broadband_noise * t + det.dark_rate
}

/// Rates measured on one detector pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    /// Accidental-subtracted coincidence rate.
    pub coincidence_rate: f64,
    pub singles_a: f64,
    pub singles_b: f64,
    pub accidental_rate: f64,
    /// `coincidence_rate / accidental_rate`; infinite when there are no
    /// accidentals (serialized as `"inf"`).
    #[serde(serialize_with = "ser_car", deserialize_with = "de_car")]
    pub car: f64,
    pub integration_time: f64,
}

pub(crate) fn ser_car<S: Serializer>(car: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if car.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*car)
    }
}

pub(crate) fn de_car<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid CAR {s:?}"))),
    }
}

pub fn car(coincidence_rate: f64, accidental_rate: f64) -> f64 {
    if accidental_rate > 0.0 {
        coincidence_rate / accidental_rate
    } else if coincidence_rate > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

impl LinkStats {
    /// Closed-form statistics from explicit rates. `eta_*` are the full
    /// per-arm detection probabilities, singles are detected rates.
    pub fn from_rates(
        pair_rate: f64,
        eta_a: f64,
        eta_b: f64,
        singles_a: f64,
        singles_b: f64,
        window_ps: f64,
        integration_time: f64,
    ) -> Self {
        let coincidence_rate = pair_rate * eta_a * eta_b;
        let accidental_rate = singles_a * singles_b * window_ps / PS_PER_S;
        LinkStats {
            coincidence_rate,
            singles_a,
            singles_b,
            accidental_rate,
            car: car(coincidence_rate, accidental_rate),
            integration_time,
        }
    }

    /// Expected coincidence and accidental counts over the integration time.
    pub fn expected_counts(&self) -> (f64, f64) {
        (
            self.coincidence_rate * self.integration_time,
            self.accidental_rate * self.integration_time,
        )
    }
}

/// Detector arm: model plus the loss between source and detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub detector: DetectorModel,
    pub loss_db: f64,
}

impl Arm {
    pub fn new(detector: DetectorModel, loss_db: f64) -> Self {
        Arm { detector, loss_db }
    }

    /// Transmission times detector efficiency.
    pub fn eta(&self) -> f64 {
        transmission(self.loss_db) * self.detector.efficiency
    }
}

/// Analytic statistics for the channel pair `(a, b)` under `graph`. Pairs
/// are counted only if `(a, b)` is an edge; singles include every other
/// process feeding either channel. Detector jitter and dead time enter as
/// the capture fraction and the live fractions of both arms.
pub fn pair_stats_analytic(
    graph: &CorrelationGraph,
    a: Channel,
    b: Channel,
    src: &SourceModel,
    arm_a: &Arm,
    arm_b: &Arm,
    window_ps: f64,
    integration_time: f64,
) -> LinkStats {
    let strength = graph.edge(a, b).map_or(0.0, |e| e.strength);
    let raw_a = channel_singles_rate(a, graph, src, &arm_a.detector, arm_a.loss_db);
    let raw_b = channel_singles_rate(b, graph, src, &arm_b.detector, arm_b.loss_db);
    let live_a = arm_a.detector.live_fraction(raw_a);
    let live_b = arm_b.detector.live_fraction(raw_b);
    let capture = jitter_capture(&arm_a.detector, &arm_b.detector, window_ps);
    let pair_rate = src.brightness * strength * capture;
    LinkStats::from_rates(
        pair_rate,
        arm_a.eta() * live_a,
        arm_b.eta() * live_b,
        raw_a * live_a,
        raw_b * live_b,
        window_ps,
        integration_time,
    )
}

/// Inputs of one two-detector simulation, already reduced to rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagSimulation {
    /// Pair rate at the source.
    pub pair_rate: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    /// Detected uncorrelated events per second on each detector.
    pub noise_a: f64,
    pub noise_b: f64,
    pub jitter_a_ps: f64,
    pub jitter_b_ps: f64,
    pub dead_time_a_ps: i64,
    pub dead_time_b_ps: i64,
    pub duration_s: f64,
}

impl TagSimulation {
    /// Simulation of channel pair `(a, b)` under `graph`. Photons of pairs
    /// whose partner is in another channel count as noise.
    pub fn for_pair(
        graph: &CorrelationGraph,
        a: Channel,
        b: Channel,
        src: &SourceModel,
        arm_a: &Arm,
        arm_b: &Arm,
        duration_s: f64,
    ) -> Self {
        let pair_rate = src.brightness * graph.edge(a, b).map_or(0.0, |e| e.strength);
        let raw_a = channel_singles_rate(a, graph, src, &arm_a.detector, arm_a.loss_db);
        let raw_b = channel_singles_rate(b, graph, src, &arm_b.detector, arm_b.loss_db);
        TagSimulation {
            pair_rate,
            eta_a: arm_a.eta(),
            eta_b: arm_b.eta(),
            noise_a: (raw_a - pair_rate * arm_a.eta()).max(0.0),
            noise_b: (raw_b - pair_rate * arm_b.eta()).max(0.0),
            jitter_a_ps: arm_a.detector.jitter_sigma_ps,
            jitter_b_ps: arm_b.detector.jitter_sigma_ps,
            dead_time_a_ps: (arm_a.detector.dead_time_ns * 1e3).round() as i64,
            dead_time_b_ps: (arm_b.detector.dead_time_ns * 1e3).round() as i64,
            duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagStreams {
    pub a: Vec<i64>,
    pub b: Vec<i64>,
}

impl TagStreams {
    /// Newline-delimited timestamps, one stream per string.
    pub fn to_text(&self) -> (String, String) {
        let fmt = |v: &[i64]| v.iter().map(|t| format!("{t}\n")).collect::<String>();
        (fmt(&self.a), fmt(&self.b))
    }
}

fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, duration_ps: f64, out: &mut Vec<i64>) {
    if rate <= 0.0 {
        return;
    }
    let gap = Exp::new(rate / PS_PER_S).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t >= duration_ps {
            break;
        }
        out.push(t as i64);
    }
}

fn apply_dead_time(tags: &mut Vec<i64>, dead_ps: i64) {
    if dead_ps <= 0 {
        return;
    }
    let mut last: Option<i64> = None;
    tags.retain(|&t| match last {
        Some(l) if t - l < dead_ps => false,
        _ => {
            last = Some(t);
            true
        }
    });
}

/// Draw detector time tags. Pair events form a Poisson process; by Poisson
/// thinning the pairs detected in both arms, in one arm only, and the noise
/// are independent Poisson processes, so they are drawn separately. True
/// pairs get independent Gaussian jitter per arm. Streams are sorted and
/// then thinned by the dead time. Identical inputs and seed give identical
/// streams.
pub fn simulate_timetags(sim: &TagSimulation, seed: u64) -> Result<TagStreams> {
    if !(sim.duration_s > 0.0) {
        return Err(Error::InvalidModel("simulation duration must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration_ps = sim.duration_s * PS_PER_S;

    let mut both = Vec::new();
    poisson_times(&mut rng, sim.pair_rate * sim.eta_a * sim.eta_b, duration_ps, &mut both);

    let jitter = |rng: &mut ChaCha8Rng, sigma: f64| -> i64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("finite sigma").sample(rng).round() as i64
        } else {
            0
        }
    };
    let mut a = Vec::with_capacity(both.len());
    let mut b = Vec::with_capacity(both.len());
    for &t in &both {
        a.push(t + jitter(&mut rng, sim.jitter_a_ps));
        b.push(t + jitter(&mut rng, sim.jitter_b_ps));
    }
    let only_a = sim.pair_rate * sim.eta_a * (1.0 - sim.eta_b) + sim.noise_a;
    let only_b = sim.pair_rate * (1.0 - sim.eta_a) * sim.eta_b + sim.noise_b;
    poisson_times(&mut rng, only_a, duration_ps, &mut a);
    poisson_times(&mut rng, only_b, duration_ps, &mut b);

    a.sort_unstable();
    b.sort_unstable();
    apply_dead_time(&mut a, sim.dead_time_a_ps);
    apply_dead_time(&mut b, sim.dead_time_b_ps);
    Ok(TagStreams { a, b })
}

fn is_sorted(v: &[i64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

/// Count pairs with `|t_a - t_b - offset| <= window/2`, matching each tag at
/// most once, greedily in time order.
pub fn coincidence_count(tags_a: &[i64], tags_b: &[i64], window_ps: i64, offset_ps: i64) -> Result<u64> {
    if !is_sorted(tags_a) {
        return Err(Error::UnsortedStream("a"));
    }
    if !is_sorted(tags_b) {
        return Err(Error::UnsortedStream("b"));
    }
    let mut count = 0;
    let mut j = 0;
    for &ta in tags_a {
        // 2|ta - tb - offset| <= window keeps odd windows exact.
        let center = ta - offset_ps;
        while j < tags_b.len() && 2 * (center - tags_b[j]) > window_ps {
            j += 1;
        }
        if j < tags_b.len() && 2 * (tags_b[j] - center) <= window_ps {
            count += 1;
            j += 1;
        }
    }
    Ok(count)
}

/// Raw counts from one simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceCounts {
    pub singles_a: u64,
    pub singles_b: u64,
    /// Zero-offset window, true plus accidental coincidences.
    pub raw: u64,
    /// Offset window, accidentals only.
    pub accidental: u64,
}

impl CoincidenceCounts {
    pub fn from_tags(tags: &TagStreams, window_ps: i64, offset_ps: i64) -> Result<Self> {
        Ok(CoincidenceCounts {
            singles_a: tags.a.len() as u64,
            singles_b: tags.b.len() as u64,
            raw: coincidence_count(&tags.a, &tags.b, window_ps, 0)?,
            accidental: coincidence_count(&tags.a, &tags.b, window_ps, offset_ps)?,
        })
    }

    /// Accidental-subtracted coincidences, clamped at zero.
    pub fn net(&self) -> u64 {
        self.raw.saturating_sub(self.accidental)
    }

    pub fn to_link_stats(&self, duration_s: f64) -> LinkStats {
        let cc = (self.raw as f64 - self.accidental as f64) / duration_s;
        let ac = self.accidental as f64 / duration_s;
        LinkStats {
            coincidence_rate: cc.max(0.0),
            singles_a: self.singles_a as f64 / duration_s,
            singles_b: self.singles_b as f64 / duration_s,
            accidental_rate: ac,
            car: car(cc.max(0.0), ac),
            integration_time: duration_s,
        }
    }
}

/// Simulate and count one channel pair.
pub fn simulate_pair_counts(sim: &TagSimulation, window_ps: i64, offset_ps: i64, seed: u64) -> Result<CoincidenceCounts> {
    let tags = simulate_timetags(sim, seed)?;
    CoincidenceCounts::from_tags(&tags, window_ps, offset_ps)
}

/// Mix a base seed with task coordinates (splitmix64 finalizer), giving each
/// parallel task its own stream independent of scheduling order.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsiMode {
    Analytic,
    MonteCarlo,
}

impl std::str::FromStr for JsiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(JsiMode::Analytic),
            "montecarlo" | "monte_carlo" | "mc" => Ok(JsiMode::MonteCarlo),
            _ => Err(Error::Parse(format!("unknown mode {s:?} (analytic|montecarlo)"))),
        }
    }
}

/// Everything a JSI measurement needs besides the pumps and channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetup {
    pub grid: ChannelGrid,
    pub source: SourceModel,
    pub arm: Arm,
    pub window_ps: i64,
    pub offset_ps: i64,
}

/// Coincidence counts per channel pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsiMatrix {
    pub channels: Vec<Channel>,
    /// Accidental-subtracted coincidence counts; symmetric, zero diagonal.
    pub counts: Vec<Vec<u64>>,
    /// Accidental counts in the offset window.
    pub accidentals: Vec<Vec<u64>>,
    pub window: i64,
    pub integration: f64,
    /// Channels whose rows and columns were not measured.
    pub excluded: Vec<Channel>,
}

impl JsiMatrix {
    pub fn count(&self, a: Channel, b: Channel) -> Option<u64> {
        let i = self.channels.iter().position(|&c| c == a)?;
        let j = self.channels.iter().position(|&c| c == b)?;
        Some(self.counts[i][j])
    }

    /// Cells with a non-zero count, as `(row, column)` channel pairs.
    pub fn support(&self) -> Vec<(Channel, Channel)> {
        let mut out = Vec::new();
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > 0 {
                    out.push((self.channels[i], self.channels[j]));
                }
            }
        }
        out
    }

    /// Sum of counts over the cells with `row + column == sum`, upper
    /// triangle only.
    pub fn line_total(&self, sum: i32) -> u64 {
        self.line_cells(sum).map(|(i, j)| self.counts[i][j]).sum()
    }

    pub fn line_accidentals(&self, sum: i32) -> u64 {
        self.line_cells(sum).map(|(i, j)| self.accidentals[i][j]).sum()
    }

    fn line_cells(&self, sum: i32) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.channels.len();
        (0..n).flat_map(move |i| {
            ((i + 1)..n)
                .filter(move |&j| self.channels[i].index() + self.channels[j].index() == sum)
                .map(move |j| (i, j))
        })
    }

    /// CSV with a header row and column of channel labels.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("channel");
        for c in &self.channels {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for (c, row) in self.channels.iter().zip(&self.counts) {
            s.push_str(&c.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Measure the joint spectral intensity over `channels`. Forbidden channels
/// may be listed; their rows and columns stay zero. The analytic mode
/// reports rounded expected counts; the Monte Carlo mode simulates every
/// channel pair with its own seed derived from `seed`.
pub fn measure_jsi(
    pumps: &PumpConfig,
    channels: &[Channel],
    setup: &MeasurementSetup,
    mode: JsiMode,
    integration_s: f64,
    seed: u64,
) -> Result<JsiMatrix> {
    for &c in channels {
        setup.grid.check(c)?;
    }
    setup.source.validate()?;
    setup.arm.detector.validate()?;
    if !(integration_s > 0.0) {
        return Err(Error::InvalidModel("integration time must be positive".into()));
    }
    let graph = correlation_graph(pumps, &setup.grid, false);
    let forbidden: ForbiddenSet = forbidden_channels(pumps, &setup.grid);

    let n = channels.len();
    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|&(i, j)| {
            channels[i] != channels[j] && !forbidden.contains(channels[i]) && !forbidden.contains(channels[j])
        })
        .collect();

    let measured: Vec<Result<(u64, u64)>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (channels[i], channels[j]);
            match mode {
                JsiMode::Analytic => {
                    let s = pair_stats_analytic(
                        &graph,
                        a,
                        b,
                        &setup.source,
                        &setup.arm,
                        &setup.arm,
                        setup.window_ps as f64,
                        integration_s,
                    );
                    let (cc, ac) = s.expected_counts();
                    Ok((cc.round() as u64, ac.round() as u64))
                }
                JsiMode::MonteCarlo => {
                    let sim = TagSimulation::for_pair(&graph, a, b, &setup.source, &setup.arm, &setup.arm, integration_s);
                    let cell_seed = derive_seed(seed, &[a.index() as u64, b.index() as u64]);
                    let c = simulate_pair_counts(&sim, setup.window_ps, setup.offset_ps, cell_seed)?;
                    Ok((c.net(), c.accidental))
                }
            }
        })
        .collect();

    let mut counts = vec![vec![0u64; n]; n];
    let mut accidentals = vec![vec![0u64; n]; n];
    for (&(i, j), r) in cells.iter().zip(measured) {
        let (cc, ac) = r?;
        counts[i][j] = cc;
        counts[j][i] = cc;
        accidentals[i][j] = ac;
        accidentals[j][i] = ac;
    }
    let excluded = channels.iter().copied().filter(|&c| forbidden.contains(c)).collect();
    Ok(JsiMatrix {
        channels: channels.to_vec(),
        counts,
        accidentals,
        window: setup.window_ps,
        integration: integration_s,
        excluded,
    })
}

/// A sorted homogeneous Poisson event stream.
pub fn poisson_stream(rate: f64, duration_s: f64, seed: u64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vec::new();
    poisson_times(&mut rng, rate, duration_s * PS_PER_S, &mut v);
    v
}
