//! Spontaneous four-wave mixing under a set of CW pumps.
//!
//! Each pump drives a degenerate process and each unordered pump pair drives
//! a non-degenerate one. A process with index sum `S` correlates every channel
//! pair `(s, i)` with `s + i = S`, which shows up as one anti-diagonal line in
//! the joint spectral intensity. Bright classical light appears at the pumps,
//! at the stimulated-FWM products `2a - b` and at the Bragg-scattering
//! products `a + b - c`; those channels are unusable for users.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Channel, ChannelGrid};

/// Pump power at which a degenerate process has relative strength 1.
pub const REFERENCE_POWER_MW: f64 = 2.0;

/// Largest pump count accepted unless a caller asks for more.
pub const DEFAULT_MAX_PUMPS: usize = 3;

/// Pair-generation gain of a non-degenerate process relative to a degenerate
/// one at equal pump powers.
pub const NON_DEGENERATE_GAIN: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pump {
    pub channel: Channel,
    pub power_mw: f64,
}

impl Pump {
    pub fn new(channel: Channel, power_mw: f64) -> Self {
        Pump { channel, power_mw }
    }

    /// A pump at the reference power.
    pub fn reference(channel: Channel) -> Self {
        Pump::new(channel, REFERENCE_POWER_MW)
    }
}

#[derive(Deserialize)]
struct RawPumpConfig {
    #[serde(default)]
    label: String,
    pumps: Vec<Pump>,
}

/// A set of pump lasers, the unit of reconfiguration. Pumps are kept sorted
/// by channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPumpConfig")]
pub struct PumpConfig {
    pub label: String,
    pumps: Vec<Pump>,
}

impl TryFrom<RawPumpConfig> for PumpConfig {
    type Error = Error;

    fn try_from(raw: RawPumpConfig) -> Result<Self> {
        // The pump-count ceiling is enforced where a limit is configured.
        PumpConfig::with_max(raw.label, raw.pumps, usize::MAX)
    }
}

impl PumpConfig {
    pub fn new(label: impl Into<String>, pumps: Vec<Pump>) -> Result<Self> {
        Self::with_max(label, pumps, DEFAULT_MAX_PUMPS)
    }

    pub fn with_max(label: impl Into<String>, mut pumps: Vec<Pump>, max_pumps: usize) -> Result<Self> {
        if pumps.is_empty() {
            return Err(Error::InvalidPumps("at least one pump is required".into()));
        }
        if pumps.len() > max_pumps {
            return Err(Error::InvalidPumps(format!(
                "{} pumps exceed the configured maximum of {max_pumps}",
                pumps.len()
            )));
        }
        if let Some(p) = pumps.iter().find(|p| !(p.power_mw.is_finite() && p.power_mw > 0.0)) {
            return Err(Error::InvalidPumps(format!(
                "pump at {} has non-positive power {}",
                p.channel, p.power_mw
            )));
        }
        pumps.sort_by_key(|p| p.channel);
        if let Some(w) = pumps.windows(2).find(|w| w[0].channel == w[1].channel) {
            return Err(Error::InvalidPumps(format!("duplicate pump channel {}", w[0].channel)));
        }
        Ok(PumpConfig {
            label: label.into(),
            pumps,
        })
    }

    /// All pumps at the reference power.
    pub fn at_reference(label: impl Into<String>, channels: &[Channel]) -> Result<Self> {
        Self::with_max(
            label,
            channels.iter().copied().map(Pump::reference).collect(),
            usize::MAX,
        )
    }

    pub fn pumps(&self) -> &[Pump] {
        &self.pumps
    }

    pub fn channels(&self) -> impl Iterator<Item = Channel> + '_ {
        self.pumps.iter().map(|p| p.channel)
    }

    pub fn len(&self) -> usize {
        self.pumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pumps.is_empty()
    }

    fn power_of(&self, c: Channel) -> f64 {
        self.pumps
            .iter()
            .find(|p| p.channel == c)
            .map_or(0.0, |p| p.power_mw)
    }

    /// Distance to the closest pump.
    pub fn nearest_pump_distance(&self, c: Channel) -> i32 {
        self.channels().map(|p| p.distance(c)).min().unwrap_or(i32::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Degenerate,
    NonDegenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SfwmProcess {
    pub pump_a: Channel,
    pub pump_b: Channel,
    pub kind: ProcessKind,
    pub sum: i32,
}

impl SfwmProcess {
    pub fn new(a: Channel, b: Channel) -> Self {
        let (pump_a, pump_b) = if a <= b { (a, b) } else { (b, a) };
        let kind = if pump_a == pump_b {
            ProcessKind::Degenerate
        } else {
            ProcessKind::NonDegenerate
        };
        SfwmProcess {
            pump_a,
            pump_b,
            kind,
            sum: pump_a.index() + pump_b.index(),
        }
    }

    /// Pair rate relative to a degenerate process pumped at the reference
    /// power: `(P/P0)^2` for degenerate and `4 Pa Pb / P0^2` otherwise.
    pub fn relative_strength(&self, pumps: &PumpConfig) -> f64 {
        let pa = pumps.power_of(self.pump_a) / REFERENCE_POWER_MW;
        let pb = pumps.power_of(self.pump_b) / REFERENCE_POWER_MW;
        match self.kind {
            ProcessKind::Degenerate => pa * pa,
            ProcessKind::NonDegenerate => NON_DEGENERATE_GAIN * pa * pb,
        }
    }
}

/// One degenerate process per pump, then one non-degenerate process per
/// unordered pump pair.
pub fn enumerate_processes(pumps: &PumpConfig) -> Vec<SfwmProcess> {
    let ch: Vec<Channel> = pumps.channels().collect();
    let mut out: Vec<SfwmProcess> = ch.iter().map(|&p| SfwmProcess::new(p, p)).collect();
    for (i, &a) in ch.iter().enumerate() {
        for &b in &ch[i + 1..] {
            out.push(SfwmProcess::new(a, b));
        }
    }
    out
}

/// Deduplicated, sorted index sums. Each is one anti-diagonal JSI line.
pub fn distinct_sums(pumps: &PumpConfig) -> Vec<i32> {
    enumerate_processes(pumps)
        .into_iter()
        .map(|p| p.sum)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub process: SfwmProcess,
    pub relative_strength: f64,
}

/// A correlated channel pair with `signal < idler`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEdge {
    pub signal: Channel,
    pub idler: Channel,
    /// Sum of the contribution strengths; contributions add incoherently.
    pub strength: f64,
    #[serde(rename = "processes")]
    pub contributions: Vec<Contribution>,
}

impl CorrelationEdge {
    pub fn touches(&self, c: Channel) -> bool {
        self.signal == c || self.idler == c
    }

    pub fn partner(&self, c: Channel) -> Option<Channel> {
        if self.signal == c {
            Some(self.idler)
        } else if self.idler == c {
            Some(self.signal)
        } else {
            None
        }
    }

    pub fn sum(&self) -> i32 {
        self.signal.index() + self.idler.index()
    }

    /// Strength carried by processes of one kind.
    pub fn strength_of(&self, kind: ProcessKind) -> f64 {
        self.contributions
            .iter()
            .filter(|c| c.process.kind == kind)
            .map(|c| c.relative_strength)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGraph {
    pub pumps: PumpConfig,
    pub grid: ChannelGrid,
    /// Sorted by `(signal, idler)`.
    pub edges: Vec<CorrelationEdge>,
}

impl CorrelationGraph {
    pub fn edge(&self, a: Channel, b: Channel) -> Option<&CorrelationEdge> {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.edges
            .binary_search_by(|e| (e.signal, e.idler).cmp(&key))
            .ok()
            .map(|i| &self.edges[i])
    }

    pub fn incident(&self, c: Channel) -> impl Iterator<Item = &CorrelationEdge> {
        self.edges.iter().filter(move |e| e.touches(c))
    }

    /// Total relative strength of all pairs with one photon in `c`.
    pub fn incident_strength(&self, c: Channel) -> f64 {
        self.incident(c).map(|e| e.strength).sum()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Build the channel-pair correlation graph. With `exclude_forbidden`, edges
/// touching a bright channel are dropped.
pub fn correlation_graph(pumps: &PumpConfig, grid: &ChannelGrid, exclude_forbidden: bool) -> CorrelationGraph {
    let mut edges: BTreeMap<(Channel, Channel), Vec<Contribution>> = BTreeMap::new();
    for process in enumerate_processes(pumps) {
        let relative_strength = process.relative_strength(pumps);
        // s < i and s + i = sum; self-loops (s == i) are never emitted.
        for s in grid.min_index..=grid.max_index {
            let i = process.sum - s;
            if i <= s {
                break;
            }
            if i > grid.max_index {
                continue;
            }
            edges.entry((Channel(s), Channel(i))).or_default().push(Contribution {
                process,
                relative_strength,
            });
        }
    }

    let forbidden = exclude_forbidden.then(|| forbidden_channels(pumps, grid));
    let edges = edges
        .into_iter()
        .filter(|((s, i), _)| {
            forbidden
                .as_ref()
                .is_none_or(|f| !f.contains(*s) && !f.contains(*i))
        })
        .map(|((signal, idler), contributions)| CorrelationEdge {
            signal,
            idler,
            strength: contributions.iter().map(|c| c.relative_strength).sum(),
            contributions,
        })
        .collect();

    CorrelationGraph {
        pumps: pumps.clone(),
        grid: *grid,
        edges,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForbiddenReason {
    Pump,
    StimulatedFwm,
    BraggScattering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ForbiddenEntry {
    channel: Channel,
    reasons: Vec<ForbiddenReason>,
}

/// Channels carrying bright classical light, each with every rule that
/// produces it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<ForbiddenEntry>", into = "Vec<ForbiddenEntry>")]
pub struct ForbiddenSet {
    reasons: BTreeMap<Channel, BTreeSet<ForbiddenReason>>,
}

impl From<Vec<ForbiddenEntry>> for ForbiddenSet {
    fn from(v: Vec<ForbiddenEntry>) -> Self {
        let mut set = ForbiddenSet::default();
        for e in v {
            for r in e.reasons {
                set.insert(e.channel, r);
            }
        }
        set
    }
}

impl From<ForbiddenSet> for Vec<ForbiddenEntry> {
    fn from(s: ForbiddenSet) -> Self {
        s.reasons
            .into_iter()
            .map(|(channel, r)| ForbiddenEntry {
                channel,
                reasons: r.into_iter().collect(),
            })
            .collect()
    }
}

impl ForbiddenSet {
    fn insert(&mut self, c: Channel, reason: ForbiddenReason) {
        self.reasons.entry(c).or_default().insert(reason);
    }

    pub fn contains(&self, c: Channel) -> bool {
        self.reasons.contains_key(&c)
    }

    pub fn channels(&self) -> impl Iterator<Item = Channel> + '_ {
        self.reasons.keys().copied()
    }

    pub fn reasons(&self, c: Channel) -> impl Iterator<Item = ForbiddenReason> + '_ {
        self.reasons.get(&c).into_iter().flatten().copied()
    }

    pub fn len(&self) -> usize {
        self.reasons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reasons.is_empty()
    }
}

/// First-order bright channels, clipped to the grid.
pub fn forbidden_channels(pumps: &PumpConfig, grid: &ChannelGrid) -> ForbiddenSet {
    forbidden_channels_to_depth(pumps, grid, 1)
}

/// Bright channels including cascaded mixing: at depth `n` the stimulated
/// and Bragg rules are applied again with every bright line of depth `n - 1`
/// acting as a field. Depth 0 returns only the pumps.
pub fn forbidden_channels_to_depth(pumps: &PumpConfig, grid: &ChannelGrid, depth: usize) -> ForbiddenSet {
    let mut bright: BTreeMap<i32, BTreeSet<ForbiddenReason>> = BTreeMap::new();
    for p in pumps.channels() {
        bright.entry(p.index()).or_default().insert(ForbiddenReason::Pump);
    }
    for _ in 0..depth {
        let fields: Vec<i32> = bright.keys().copied().collect();
        let mut new = Vec::new();
        for &a in &fields {
            for &b in &fields {
                if a != b {
                    new.push((2 * a - b, ForbiddenReason::StimulatedFwm));
                }
            }
        }
        for (i, &a) in fields.iter().enumerate() {
            for &b in &fields[i + 1..] {
                for &c in &fields {
                    if c != a && c != b {
                        new.push((a + b - c, ForbiddenReason::BraggScattering));
                    }
                }
            }
        }
        let before = bright.values().map(BTreeSet::len).sum::<usize>();
        for (ch, reason) in new {
            bright.entry(ch).or_default().insert(reason);
        }
        if bright.values().map(BTreeSet::len).sum::<usize>() == before {
            break;
        }
    }

    let mut set = ForbiddenSet::default();
    for (ch, reasons) in bright {
        let c = Channel(ch);
        if grid.contains(c) {
            for r in reasons {
                set.insert(c, r);
            }
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(ch: &[i32]) -> PumpConfig {
        let ch: Vec<Channel> = ch.iter().copied().map(Channel).collect();
        PumpConfig::at_reference("t", &ch).unwrap()
    }

    fn grid(lo: i32, hi: i32) -> ChannelGrid {
        ChannelGrid::new(lo, hi).unwrap()
    }

    #[test]
    fn pump_config_validation() {
        assert!(PumpConfig::new("x", vec![]).is_err());
        assert!(PumpConfig::new("x", vec![Pump::new(Channel(40), 0.0)]).is_err());
        assert!(PumpConfig::new("x", vec![Pump::reference(Channel(40)), Pump::reference(Channel(40))]).is_err());
        let four: Vec<Pump> = (0..4).map(|i| Pump::reference(Channel(30 + 2 * i))).collect();
        assert!(PumpConfig::new("x", four.clone()).is_err());
        assert!(PumpConfig::with_max("x", four, 4).is_ok());
        let c = PumpConfig::new("x", vec![Pump::reference(Channel(42)), Pump::reference(Channel(38))]).unwrap();
        assert_eq!(c.channels().collect::<Vec<_>>(), vec![Channel(38), Channel(42)]);
    }

    #[test]
    fn pump_config_json_is_validated() {
        let ok: PumpConfig =
            serde_json::from_str(r#"{"label":"a","pumps":[{"channel":"C41","power_mw":2.0},{"channel":39,"power_mw":2.0}]}"#)
                .unwrap();
        assert_eq!(ok.pumps()[0].channel, Channel(39));
        let dup = r#"{"label":"a","pumps":[{"channel":"C41","power_mw":2.0},{"channel":41,"power_mw":2.0}]}"#;
        assert!(serde_json::from_str::<PumpConfig>(dup).is_err());
    }

    #[test]
    fn process_examples() {
        let p = enumerate_processes(&cfg(&[40]));
        assert_eq!(p, vec![SfwmProcess::new(Channel(40), Channel(40))]);
        assert_eq!(p[0].sum, 80);
        assert_eq!(p[0].kind, ProcessKind::Degenerate);

        let p = enumerate_processes(&cfg(&[39, 41]));
        let sums: Vec<(ProcessKind, i32)> = p.iter().map(|p| (p.kind, p.sum)).collect();
        assert_eq!(
            sums,
            vec![
                (ProcessKind::Degenerate, 78),
                (ProcessKind::Degenerate, 82),
                (ProcessKind::NonDegenerate, 80)
            ]
        );

        let p = enumerate_processes(&cfg(&[38, 40, 42]));
        let mut sums: Vec<i32> = p.iter().map(|p| p.sum).collect();
        sums.sort();
        assert_eq!(sums, vec![76, 78, 80, 80, 82, 84]);
    }

    #[test]
    fn distinct_sum_examples() {
        assert_eq!(distinct_sums(&cfg(&[38, 40, 42])), vec![76, 78, 80, 82, 84]);
        assert_eq!(distinct_sums(&cfg(&[38, 40, 43])), vec![76, 78, 80, 81, 83, 86]);
        assert_eq!(distinct_sums(&cfg(&[40])), vec![80]);
    }

    fn chans(s: &ForbiddenSet) -> Vec<i32> {
        s.channels().map(Channel::index).collect()
    }

    #[test]
    fn forbidden_examples() {
        let g = grid(1, 72);
        assert_eq!(chans(&forbidden_channels(&cfg(&[40]), &g)), vec![40]);
        assert_eq!(chans(&forbidden_channels(&cfg(&[39, 41]), &g)), vec![37, 39, 41, 43]);
        let f = forbidden_channels(&cfg(&[38, 40, 42]), &g);
        assert_eq!(chans(&f), vec![34, 36, 38, 40, 42, 44, 46]);
        // 38 + 42 - 40 lands on the middle pump.
        let r: Vec<_> = f.reasons(Channel(40)).collect();
        assert!(r.contains(&ForbiddenReason::Pump));
        assert!(r.contains(&ForbiddenReason::BraggScattering));
        assert_eq!(f.reasons(Channel(34)).collect::<Vec<_>>(), vec![ForbiddenReason::StimulatedFwm]);
    }

    #[test]
    fn forbidden_products_are_clipped() {
        let f = forbidden_channels(&cfg(&[2, 5]), &grid(1, 10));
        assert_eq!(chans(&f), vec![2, 5, 8]);
    }

    #[test]
    fn forbidden_depth_zero_and_two() {
        let g = grid(1, 72);
        let p = cfg(&[39, 41]);
        assert_eq!(chans(&forbidden_channels_to_depth(&p, &g, 0)), vec![39, 41]);
        // Cascading the bright lines of an equispaced pair fills the odd
        // channels symmetrically around it.
        let d2 = forbidden_channels_to_depth(&p, &g, 2);
        assert!(chans(&d2).contains(&35) && chans(&d2).contains(&45));
        assert!(chans(&d2).iter().all(|c| c % 2 == 1));
    }

    #[test]
    fn forbidden_json_roundtrip() {
        let f = forbidden_channels(&cfg(&[38, 40, 43]), &grid(1, 72));
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"stimulated_fwm\""));
        let back: ForbiddenSet = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn single_pump_graph() {
        let g = correlation_graph(&cfg(&[40]), &grid(30, 50), false);
        assert_eq!(g.len(), 10);
        assert_eq!(g.edges.first().map(|e| (e.signal, e.idler)), Some((Channel(30), Channel(50))));
        assert!(g.edge(Channel(39), Channel(41)).is_some());
        assert!(g.edge(Channel(40), Channel(40)).is_none());
        assert!(g.edges.iter().all(|e| e.strength == 1.0));
    }

    #[test]
    fn dual_pump_non_degenerate_edge() {
        let g = correlation_graph(&cfg(&[39, 41]), &grid(35, 45), true);
        let e = g.edge(Channel(38), Channel(42)).unwrap();
        assert_eq!(e.contributions.len(), 1);
        assert_eq!(e.contributions[0].process.kind, ProcessKind::NonDegenerate);
        assert_eq!(e.strength, 4.0);
        // Edges on the bright channels are gone.
        assert!(g.edges.iter().all(|e| ![37, 39, 41, 43].contains(&e.signal.index())
            && ![37, 39, 41, 43].contains(&e.idler.index())));
    }

    #[test]
    fn shared_edge_adds_contributions() {
        for exclude in [false, true] {
            let g = correlation_graph(&cfg(&[38, 40, 42]), &grid(30, 50), exclude);
            let e = g.edge(Channel(39), Channel(41)).unwrap();
            assert_eq!(e.contributions.len(), 2);
            assert_eq!(e.strength, 5.0);
            assert_eq!(e.strength_of(ProcessKind::Degenerate), 1.0);
            assert_eq!(e.strength_of(ProcessKind::NonDegenerate), 4.0);
        }
    }

    #[test]
    fn strength_follows_power() {
        let p = PumpConfig::new("p", vec![Pump::new(Channel(39), 4.0), Pump::new(Channel(41), 1.0)]).unwrap();
        let g = correlation_graph(&p, &grid(20, 60), false);
        assert_eq!(g.edge(Channel(35), Channel(43)).unwrap().strength, 4.0); // (4/2)^2
        assert_eq!(g.edge(Channel(35), Channel(47)).unwrap().strength, 0.25); // (1/2)^2
        assert_eq!(g.edge(Channel(35), Channel(45)).unwrap().strength, 4.0); // 4 * 2 * 0.5
    }

    #[test]
    fn graph_json_shape() {
        let g = correlation_graph(&cfg(&[38, 40, 42]), &grid(36, 44), true);
        let v = serde_json::to_value(&g).unwrap();
        let e = &v["edges"][0];
        assert!(e["signal"].is_string() && e["strength"].is_number() && e["processes"].is_array());
        let back: CorrelationGraph = serde_json::from_value(v).unwrap();
        assert_eq!(back, g);
    }

    /// Forbidden set by scanning every integer combination.
    fn brute_force_forbidden(p: &[i32], lo: i32, hi: i32) -> Vec<i32> {
        let mut out = BTreeSet::new();
        for &a in p {
            out.insert(a);
            for &b in p {
                if a != b {
                    out.insert(2 * a - b);
                }
                for &c in p {
                    if a != b && c != a && c != b {
                        out.insert(a + b - c);
                    }
                }
            }
        }
        out.into_iter().filter(|c| (lo..=hi).contains(c)).collect()
    }

    fn pump_set() -> impl Strategy<Value = Vec<i32>> {
        proptest::collection::btree_set(10i32..60, 1..=3).prop_map(|s| s.into_iter().collect())
    }

    proptest! {
        #[test]
        fn energy_conservation(p in pump_set(), exclude in any::<bool>()) {
            let g = correlation_graph(&cfg(&p), &grid(1, 72), exclude);
            for e in &g.edges {
                prop_assert!(e.signal < e.idler);
                prop_assert!(!e.contributions.is_empty());
                for c in &e.contributions {
                    prop_assert_eq!(e.signal.index() + e.idler.index(), c.process.sum);
                }
            }
        }

        #[test]
        fn forbidden_matches_brute_force(p in pump_set()) {
            let f = forbidden_channels(&cfg(&p), &grid(1, 72));
            prop_assert_eq!(chans(&f), brute_force_forbidden(&p, 1, 72));
            for &a in &p {
                prop_assert!(f.reasons(Channel(a)).any(|r| r == ForbiddenReason::Pump));
            }
        }

        #[test]
        fn single_pump_reflection_symmetry(p in 20i32..52) {
            let g = correlation_graph(&cfg(&[p]), &grid(1, 72), false);
            for e in &g.edges {
                let (s, i) = (2 * p - e.idler.index(), 2 * p - e.signal.index());
                prop_assert!(g.edge(Channel(s), Channel(i)).is_some());
            }
        }

        #[test]
        fn adding_a_pump_keeps_edges(p in pump_set(), extra in 10i32..60) {
            prop_assume!(p.len() < 3 && !p.contains(&extra));
            let mut more = p.clone();
            more.push(extra);
            let g = grid(1, 72);
            let before = correlation_graph(&cfg(&p), &g, false);
            let after = correlation_graph(&cfg(&more), &g, false);
            for e in &before.edges {
                prop_assert!(after.edge(e.signal, e.idler).is_some());
            }
            let before = correlation_graph(&cfg(&p), &g, true);
            let after = correlation_graph(&cfg(&more), &g, true);
            let newly = forbidden_channels(&cfg(&more), &g);
            for e in &before.edges {
                prop_assert!(after.edge(e.signal, e.idler).is_some()
                    || newly.contains(e.signal) || newly.contains(e.idler));
            }
        }
    }
}
