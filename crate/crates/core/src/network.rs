//! Users, the topology a pump configuration induces on them, and the
//! time-shared network obtained by cycling configurations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Channel, ChannelGrid};
use crate::sfwm::{correlation_graph, forbidden_channels, PumpConfig};

/// Minimum vacant channels between a pump and any user.
pub const DEFAULT_GUARD_BAND: i32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Assignment {
    user: String,
    channel: Channel,
}

/// Injective user to channel map; every user receives exactly one channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Assignment>", into = "Vec<Assignment>")]
pub struct UserAllocation {
    users: Vec<String>,
    channels: Vec<Channel>,
}

impl TryFrom<Vec<Assignment>> for UserAllocation {
    type Error = Error;

    fn try_from(v: Vec<Assignment>) -> Result<Self> {
        UserAllocation::new(v.into_iter().map(|a| (a.user, a.channel)))
    }
}

impl From<UserAllocation> for Vec<Assignment> {
    fn from(a: UserAllocation) -> Self {
        a.users
            .into_iter()
            .zip(a.channels)
            .map(|(user, channel)| Assignment { user, channel })
            .collect()
    }
}

impl UserAllocation {
    pub fn new<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Channel)>) -> Result<Self> {
        let (users, channels): (Vec<String>, Vec<Channel>) = pairs.into_iter().map(|(u, c)| (u.into(), c)).unzip();
        let mut seen_users = BTreeSet::new();
        if let Some(u) = users.iter().find(|u| !seen_users.insert(u.as_str())) {
            return Err(Error::InvalidAllocation(format!("user {u:?} listed twice")));
        }
        let mut seen = BTreeSet::new();
        if let Some(c) = channels.iter().find(|c| !seen.insert(**c)) {
            return Err(Error::InvalidAllocation(format!("channel {c} assigned to two users")));
        }
        Ok(UserAllocation { users, channels })
    }

    /// Users named `U1..UN` on the given channels.
    pub fn numbered(channels: &[Channel]) -> Result<Self> {
        Self::new(channels.iter().enumerate().map(|(i, &c)| (format!("U{}", i + 1), c)))
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, user: usize) -> Channel {
        self.channels[user]
    }

    pub fn channel_of(&self, name: &str) -> Option<Channel> {
        self.index_of(name).map(|i| self.channels[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.users.iter().position(|u| u == name)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn check_grid(&self, grid: &ChannelGrid) -> Result<()> {
        self.channels.iter().try_for_each(|&c| grid.check(c))
    }
}

/// Unordered user pair stored as `(low, high)` indices into the user list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserPair(pub usize, pub usize);

impl UserPair {
    /// Panics on a self-loop.
    pub fn new(a: usize, b: usize) -> Self {
        assert_ne!(a, b, "a user cannot pair with itself");
        if a < b {
            UserPair(a, b)
        } else {
            UserPair(b, a)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    users: Vec<String>,
    edges: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct Topology {
    users: Vec<String>,
    edges: BTreeSet<UserPair>,
}

impl TryFrom<TopologyRepr> for Topology {
    type Error = Error;

    fn try_from(r: TopologyRepr) -> Result<Self> {
        let mut t = Topology::empty(r.users);
        for (a, b) in &r.edges {
            t.add_named(a, b)?;
        }
        Ok(t)
    }
}

impl From<Topology> for TopologyRepr {
    fn from(t: Topology) -> Self {
        TopologyRepr {
            edges: t.edge_names().map(|(a, b)| (a.to_owned(), b.to_owned())).collect(),
            users: t.users,
        }
    }
}

impl Topology {
    pub fn empty(users: Vec<String>) -> Self {
        Topology {
            users,
            edges: BTreeSet::new(),
        }
    }

    pub fn complete(users: Vec<String>) -> Self {
        let n = users.len();
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| UserPair(i, j))).collect();
        Topology { users, edges }
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn edges(&self) -> &BTreeSet<UserPair> {
        &self.edges
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<()> {
        if a == b {
            return Err(Error::InvalidAllocation(format!("self-loop on user {}", self.name(a))));
        }
        if a.max(b) >= self.users.len() {
            return Err(Error::InvalidAllocation(format!("user index {} out of range", a.max(b))));
        }
        self.edges.insert(UserPair::new(a, b));
        Ok(())
    }

    pub fn add_named(&mut self, a: &str, b: &str) -> Result<()> {
        let find = |n: &str| {
            self.users
                .iter()
                .position(|u| u == n)
                .ok_or_else(|| Error::InvalidAllocation(format!("unknown user {n:?}")))
        };
        let (i, j) = (find(a)?, find(b)?);
        self.add_edge(i, j)
    }

    pub fn contains(&self, pair: UserPair) -> bool {
        self.edges.contains(&pair)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.users[i]
    }

    pub fn edge_names(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges.iter().map(|p| (self.users[p.0].as_str(), self.users[p.1].as_str()))
    }

    pub fn pair_label(&self, p: UserPair) -> String {
        format!("{}-{}", self.users[p.0], self.users[p.1])
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|p| p.0 == i || p.1 == i).count()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn is_subset_of(&self, other: &Topology) -> bool {
        self.edges.is_subset(&other.edges)
    }

    /// Undirected DOT graph; nodes are labelled with their channel when an
    /// allocation is supplied.
    pub fn to_dot(&self, name: &str, alloc: Option<&UserAllocation>) -> String {
        let mut s = format!("graph \"{name}\" {{\n");
        for (i, u) in self.users.iter().enumerate() {
            match alloc {
                Some(a) => {
                    let _ = writeln!(s, "  \"{u}\" [label=\"{u}\\n{}\"];", a.channel(i));
                }
                None => {
                    let _ = writeln!(s, "  \"{u}\";");
                }
            }
        }
        for (a, b) in self.edge_names() {
            let _ = writeln!(s, "  \"{a}\" -- \"{b}\";");
        }
        s.push_str("}\n");
        s
    }
}

/// Whether `c` can serve a user under `pumps`: not bright and more than
/// `guard_band` channels from every pump.
pub fn channel_usable(c: Channel, pumps: &PumpConfig, forbidden: &crate::sfwm::ForbiddenSet, guard_band: i32) -> bool {
    !forbidden.contains(c) && pumps.nearest_pump_distance(c) > guard_band
}

/// Temporary topology under one pump configuration. A user on a bright
/// channel or inside the guard band of a pump is isolated.
pub fn induced_topology(
    alloc: &UserAllocation,
    pumps: &PumpConfig,
    grid: &ChannelGrid,
    guard_band: i32,
) -> Result<Topology> {
    alloc.check_grid(grid)?;
    let graph = correlation_graph(pumps, grid, true);
    let forbidden = forbidden_channels(pumps, grid);
    let usable: Vec<bool> = alloc
        .channels()
        .iter()
        .map(|&c| channel_usable(c, pumps, &forbidden, guard_band))
        .collect();
    let mut topo = Topology::empty(alloc.users().to_vec());
    let n = alloc.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if usable[i] && usable[j] && graph.edge(alloc.channel(i), alloc.channel(j)).is_some() {
                topo.edges.insert(UserPair(i, j));
            }
        }
    }
    Ok(topo)
}

/// Union of topologies over the same user set. Users are matched by name,
/// the result uses the first topology's ordering.
pub fn accumulate(topologies: &[Topology]) -> Result<Topology> {
    let Some(first) = topologies.first() else {
        return Ok(Topology::empty(Vec::new()));
    };
    let reference: BTreeSet<&str> = first.users.iter().map(String::as_str).collect();
    let index: HashMap<&str, usize> = first.users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let mut out = first.clone();
    for t in &topologies[1..] {
        let users: BTreeSet<&str> = t.users.iter().map(String::as_str).collect();
        if users != reference || users.len() != t.users.len() {
            return Err(Error::MismatchedUsers);
        }
        for (a, b) in t.edge_names() {
            out.edges.insert(UserPair::new(index[a], index[b]));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub config: PumpConfig,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ScheduleEntry>", into = "Vec<ScheduleEntry>")]
pub struct Schedule {
    entries: Vec<ScheduleEntry>,
}

impl TryFrom<Vec<ScheduleEntry>> for Schedule {
    type Error = Error;

    fn try_from(entries: Vec<ScheduleEntry>) -> Result<Self> {
        Schedule::new(entries)
    }
}

impl From<Schedule> for Vec<ScheduleEntry> {
    fn from(s: Schedule) -> Self {
        s.entries
    }
}

impl Schedule {
    pub fn new(entries: Vec<ScheduleEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidSchedule("a schedule needs at least one entry".into()));
        }
        if let Some(e) = entries.iter().find(|e| !(e.duration_s.is_finite() && e.duration_s > 0.0)) {
            return Err(Error::InvalidSchedule(format!(
                "configuration {:?} has non-positive duration {}",
                e.config.label, e.duration_s
            )));
        }
        Ok(Schedule { entries })
    }

    /// Equal time slices of `slice_s` each.
    pub fn equal(configs: Vec<PumpConfig>, slice_s: f64) -> Result<Self> {
        Self::new(
            configs
                .into_iter()
                .map(|config| ScheduleEntry { config, duration_s: slice_s })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.entries.iter().map(|e| e.duration_s).sum()
    }

    /// Fraction of the cycle spent in each entry.
    pub fn duty_factors(&self) -> Vec<f64> {
        let total = self.total_duration();
        self.entries.iter().map(|e| e.duration_s / total).collect()
    }
}

/// Overall rate per user pair: total events over total time. Links absent
/// from an entry's map count as rate 0 in that entry.
pub fn timeshare_rates(
    schedule: &Schedule,
    per_config: &[BTreeMap<UserPair, f64>],
) -> Result<BTreeMap<UserPair, f64>> {
    if per_config.len() != schedule.len() {
        return Err(Error::InvalidSchedule(format!(
            "{} rate tables for {} schedule entries",
            per_config.len(),
            schedule.len()
        )));
    }
    let total = schedule.total_duration();
    let mut out: BTreeMap<UserPair, f64> = BTreeMap::new();
    for (entry, rates) in schedule.entries().iter().zip(per_config) {
        for (&pair, &rate) in rates {
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(Error::NegativeRate {
                    link: format!("{}-{}", pair.0, pair.1),
                    rate,
                });
            }
            *out.entry(pair).or_default() += rate * entry.duration_s;
        }
    }
    for v in out.values_mut() {
        *v /= total;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfwm::distinct_sums;
    use proptest::prelude::*;

    fn cfg(ch: &[i32]) -> PumpConfig {
        let ch: Vec<Channel> = ch.iter().copied().map(Channel).collect();
        PumpConfig::at_reference("t", &ch).unwrap()
    }

    fn alloc(ch: &[i32]) -> UserAllocation {
        UserAllocation::new(
            ch.iter()
                .enumerate()
                .map(|(i, &c)| (((b'A' + i as u8) as char).to_string(), Channel(c))),
        )
        .unwrap()
    }

    fn names(t: &Topology) -> Vec<(String, String)> {
        t.edge_names().map(|(a, b)| (a.to_owned(), b.to_owned())).collect()
    }

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn allocation_must_be_injective() {
        assert!(UserAllocation::new([("A", Channel(3)), ("B", Channel(3))]).is_err());
        assert!(UserAllocation::new([("A", Channel(3)), ("A", Channel(4))]).is_err());
        let a: UserAllocation = serde_json::from_str(r#"[{"user":"A","channel":"C34"},{"user":"B","channel":38}]"#).unwrap();
        assert_eq!(a.channel_of("B"), Some(Channel(38)));
        assert!(serde_json::from_str::<UserAllocation>(r#"[{"user":"A","channel":1},{"user":"B","channel":1}]"#).is_err());
    }

    #[test]
    fn ring_from_two_pumps() {
        let t = induced_topology(&alloc(&[34, 38, 42, 46]), &cfg(&[36, 44]), &ChannelGrid::default(), 1).unwrap();
        assert_eq!(names(&t), pairs(&[("A", "B"), ("A", "D"), ("B", "C"), ("C", "D")]));
    }

    #[test]
    fn single_pump_neighbours_without_guard() {
        let a = alloc(&[39, 41]);
        let t = induced_topology(&a, &cfg(&[40]), &ChannelGrid::default(), 0).unwrap();
        assert_eq!(t.len(), 1);
        // The default guard band isolates both users.
        let t = induced_topology(&a, &cfg(&[40]), &ChannelGrid::default(), DEFAULT_GUARD_BAND).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn stimulated_channel_isolates_user() {
        // C37 = 2*39 - 41 carries bright light; C45 would otherwise pair with it.
        let a = alloc(&[37, 45, 35, 47]);
        let t = induced_topology(&a, &cfg(&[39, 41]), &ChannelGrid::default(), 1).unwrap();
        assert_eq!(t.degree(0), 0);
        assert_eq!(names(&t), pairs(&[("B", "C"), ("C", "D")]));
    }

    #[test]
    fn user_on_pump_is_isolated_even_without_guard() {
        let t = induced_topology(&alloc(&[40, 30, 50]), &cfg(&[40]), &ChannelGrid::default(), 0).unwrap();
        assert_eq!(names(&t), pairs(&[("B", "C")]));
    }

    #[test]
    fn out_of_grid_user_rejected() {
        assert!(induced_topology(&alloc(&[0, 5]), &cfg(&[3]), &ChannelGrid::default(), 1).is_err());
    }

    #[test]
    fn accumulate_examples() {
        let users: Vec<String> = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();
        let mut m1 = Topology::empty(users.clone());
        m1.add_named("A", "B").unwrap();
        m1.add_named("C", "D").unwrap();
        let mut m2 = Topology::empty(users.clone());
        m2.add_named("A", "C").unwrap();
        m2.add_named("B", "D").unwrap();
        assert_eq!(accumulate(&[m1.clone(), m1.clone()]).unwrap(), m1);
        assert_eq!(accumulate(&[m1.clone(), m2.clone()]).unwrap().len(), 4);

        // Same user set in another order is fine; a different set is not.
        let mut shuffled = Topology::empty(vec!["D".into(), "C".into(), "B".into(), "A".into()]);
        shuffled.add_named("A", "D").unwrap();
        assert!(accumulate(&[m1.clone(), shuffled]).unwrap().contains(UserPair(0, 3)));
        let other = Topology::empty(vec!["A".into(), "B".into(), "C".into()]);
        assert!(matches!(accumulate(&[m1, other]), Err(Error::MismatchedUsers)));
    }

    #[test]
    fn topology_json_and_dot() {
        let t = induced_topology(&alloc(&[34, 38, 42, 46]), &cfg(&[36, 44]), &ChannelGrid::default(), 1).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains(r#"["A","B"]"#));
        let back: Topology = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        let dot = t.to_dot("cfg1", Some(&alloc(&[34, 38, 42, 46])));
        assert!(dot.starts_with("graph \"cfg1\" {"));
        assert!(dot.contains("\"A\" -- \"B\";"));
        assert!(dot.contains("A\\nC34"));
        assert!(serde_json::from_str::<Topology>(r#"{"users":["A"],"edges":[["A","A"]]}"#).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(vec![]).is_err());
        assert!(Schedule::equal(vec![cfg(&[40])], 0.0).is_err());
        assert!(Schedule::equal(vec![cfg(&[40])], 1.0).is_ok());
    }

    fn rates(v: &[(UserPair, f64)]) -> BTreeMap<UserPair, f64> {
        v.iter().copied().collect()
    }

    #[test]
    fn timeshare_examples() {
        let p = UserPair(0, 1);
        let two = Schedule::equal(vec![cfg(&[40]), cfg(&[41])], 5.0).unwrap();
        let out = timeshare_rates(&two, &[rates(&[(p, 8.0)]), rates(&[])]).unwrap();
        assert_eq!(out[&p], 4.0);
        let out = timeshare_rates(&two, &[rates(&[(p, 8.0)]), rates(&[(p, 8.0)])]).unwrap();
        assert_eq!(out[&p], 8.0);
        let uneven = Schedule::new(vec![
            ScheduleEntry { config: cfg(&[40]), duration_s: 1.0 },
            ScheduleEntry { config: cfg(&[41]), duration_s: 3.0 },
        ])
        .unwrap();
        let out = timeshare_rates(&uneven, &[rates(&[(p, 8.0)]), rates(&[(p, 0.0)])]).unwrap();
        assert_eq!(out[&p], 2.0);
        assert!(matches!(
            timeshare_rates(&two, &[rates(&[(p, -1.0)]), rates(&[])]),
            Err(Error::NegativeRate { .. })
        ));
        assert!(timeshare_rates(&two, &[rates(&[])]).is_err());
    }

    fn small_topology(n: usize) -> impl Strategy<Value = Topology> {
        proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
            let users: Vec<String> = (0..n).map(|i| format!("U{i}")).collect();
            let mut t = Topology::empty(users);
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if bits[k] {
                        t.add_edge(i, j).unwrap();
                    }
                    k += 1;
                }
            }
            t
        })
    }

    proptest! {
        #[test]
        fn degree_bounded_by_line_count(
            users in proptest::collection::btree_set(1i32..=72, 2..10),
            pumps in proptest::collection::btree_set(1i32..=72, 1..=3),
        ) {
            let users: Vec<i32> = users.into_iter().collect();
            let pumps: Vec<i32> = pumps.into_iter().collect();
            let p = cfg(&pumps);
            let a = alloc(&users);
            let t = induced_topology(&a, &p, &ChannelGrid::default(), 1).unwrap();
            let f = forbidden_channels(&p, &ChannelGrid::default());
            let lines = distinct_sums(&p).len();
            for i in 0..a.len() {
                prop_assert!(t.degree(i) <= lines);
            }
            for (x, y) in t.edge_names() {
                prop_assert!(!f.contains(a.channel_of(x).unwrap()));
                prop_assert!(!f.contains(a.channel_of(y).unwrap()));
            }
        }

        #[test]
        fn accumulate_laws(a in small_topology(5), b in small_topology(5), c in small_topology(5)) {
            let ab = accumulate(&[a.clone(), b.clone()]).unwrap();
            prop_assert_eq!(&ab, &accumulate(&[b.clone(), a.clone()]).unwrap());
            let left = accumulate(&[ab, c.clone()]).unwrap();
            let right = accumulate(&[a.clone(), accumulate(&[b, c]).unwrap()]).unwrap();
            prop_assert_eq!(left, right);
            prop_assert_eq!(accumulate(&[a.clone(), a.clone()]).unwrap(), a);
        }

        #[test]
        fn timeshare_scale_invariant(d1 in 0.1f64..100.0, d2 in 0.1f64..100.0, k in 0.01f64..100.0, r in 0.0f64..1e4) {
            let p = UserPair(0, 1);
            let mk = |a: f64, b: f64| Schedule::new(vec![
                ScheduleEntry { config: cfg(&[40]), duration_s: a },
                ScheduleEntry { config: cfg(&[41]), duration_s: b },
            ]).unwrap();
            let tables = [rates(&[(p, r)]), rates(&[])];
            let base = timeshare_rates(&mk(d1, d2), &tables).unwrap()[&p];
            let scaled = timeshare_rates(&mk(d1 * k, d2 * k), &tables).unwrap()[&p];
            prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
            prop_assert!((base - r * d1 / (d1 + d2)).abs() <= 1e-9 * r.max(1.0));
        }
    }
}
