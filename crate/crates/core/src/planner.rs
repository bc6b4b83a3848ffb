//! Pump-configuration scheduling.
//!
//! A plan is a short list of pump configurations whose induced topologies
//! together cover a target topology. Each candidate configuration covers the
//! target edges whose channel sum it can produce, so planning is a set-cover
//! problem over target edges: a greedy pass gives an upper bound and a small
//! branch-and-bound tries to beat it. [`verify_plan`] rechecks a plan from
//! scratch through [`induced_topology`] and shares no code with the search.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Channel, ChannelGrid};
use crate::network::{accumulate, induced_topology, Schedule, Topology, UserAllocation, UserPair, DEFAULT_GUARD_BAND};
use crate::sfwm::{forbidden_channels, ForbiddenReason, Pump, PumpConfig, DEFAULT_MAX_PUMPS, REFERENCE_POWER_MW};

pub const DEFAULT_CANDIDATE_CAP: usize = 50_000;
pub const DEFAULT_MAX_CONFIGS: usize = 16;
/// Ten minutes per configuration.
pub const DEFAULT_SLICE_S: f64 = 600.0;

/// Limits of the exact search that follows the greedy pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactSearch {
    /// Only attempt when the greedy plan has at most this many configs.
    pub greedy_threshold: usize,
    /// Only attempt when the reduced candidate pool is at most this large.
    pub pool_limit: usize,
    /// Give up after visiting this many search nodes.
    pub node_limit: u64,
}

impl Default for ExactSearch {
    fn default() -> Self {
        ExactSearch {
            greedy_threshold: 6,
            pool_limit: 5_000,
            node_limit: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanProblem {
    pub target: Topology,
    /// `None` lets the planner place users on an even-spacing template.
    pub alloc: Option<UserAllocation>,
    pub grid: ChannelGrid,
    pub max_pumps_per_config: usize,
    pub max_configs: usize,
    pub guard_band: i32,
    pub candidate_cap: usize,
    pub pump_power_mw: f64,
    pub slice_s: f64,
    /// Fixed spacing for the free-allocation template.
    pub spacing: Option<i32>,
    pub exact: ExactSearch,
}

impl PlanProblem {
    pub fn new(target: Topology, alloc: Option<UserAllocation>, grid: ChannelGrid) -> Self {
        PlanProblem {
            target,
            alloc,
            grid,
            max_pumps_per_config: DEFAULT_MAX_PUMPS,
            max_configs: DEFAULT_MAX_CONFIGS,
            guard_band: DEFAULT_GUARD_BAND,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            pump_power_mw: REFERENCE_POWER_MW,
            slice_s: DEFAULT_SLICE_S,
            spacing: None,
            exact: ExactSearch::default(),
        }
    }

    /// Fully connected target over `n` users named `U1..Un`.
    pub fn complete(n: usize, alloc: Option<UserAllocation>, grid: ChannelGrid) -> Self {
        let users = match &alloc {
            Some(a) => a.users().to_vec(),
            None => (1..=n).map(|i| format!("U{i}")).collect(),
        };
        Self::new(Topology::complete(users), alloc, grid)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |m: String| Err(Error::InvalidProblem(m));
        if self.max_pumps_per_config == 0 || self.max_configs == 0 || self.candidate_cap == 0 {
            return bad("pump, configuration and candidate limits must be positive".into());
        }
        if self.guard_band < 0 {
            return bad(format!("guard band {} is negative", self.guard_band));
        }
        if !(self.pump_power_mw > 0.0 && self.slice_s > 0.0) {
            return bad("pump power and slice duration must be positive".into());
        }
        if let Some(a) = &self.alloc {
            let mut au: Vec<&String> = a.users().iter().collect();
            let mut tu: Vec<&String> = self.target.users().iter().collect();
            au.sort();
            tu.sort();
            if au != tu {
                return bad("allocation users differ from target users".into());
            }
            a.check_grid(&self.grid)?;
        }
        if let Some(s) = self.spacing {
            if s < 1 {
                return bad(format!("template spacing {s} must be positive"));
            }
        }
        Ok(())
    }
}

/// Users in a problem file: bare names (free allocation) or fixed
/// `{user, channel}` assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UsersSpec {
    Names(Vec<String>),
    Assigned(UserAllocation),
}

/// `"complete"` or an explicit edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Keyword(String),
    Edges(Vec<(String, String)>),
}

/// On-disk form of a [`PlanProblem`]; omitted limits take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub users: UsersSpec,
    pub target: TargetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<ChannelGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_pumps_per_config: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_configs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_band: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_power_mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactSearch>,
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<PlanProblem> {
        let (names, alloc) = match self.users {
            UsersSpec::Names(n) => (n, None),
            UsersSpec::Assigned(a) => (a.users().to_vec(), Some(a)),
        };
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::InvalidProblem("duplicate user name".into()));
        }
        let target = match self.target {
            TargetSpec::Keyword(k) if k == "complete" => Topology::complete(names),
            TargetSpec::Keyword(k) => {
                return Err(Error::InvalidProblem(format!("unknown target {k:?} (use \"complete\" or an edge list)")))
            }
            TargetSpec::Edges(edges) => {
                let mut t = Topology::empty(names);
                for (a, b) in &edges {
                    t.add_named(a, b)?;
                }
                t
            }
        };
        let mut p = PlanProblem::new(target, alloc, self.grid.unwrap_or_default());
        if let Some(v) = self.max_pumps_per_config {
            p.max_pumps_per_config = v;
        }
        if let Some(v) = self.max_configs {
            p.max_configs = v;
        }
        if let Some(v) = self.guard_band {
            p.guard_band = v;
        }
        if let Some(v) = self.candidate_cap {
            p.candidate_cap = v;
        }
        if let Some(v) = self.pump_power_mw {
            p.pump_power_mw = v;
        }
        if let Some(v) = self.slice_s {
            p.slice_s = v;
        }
        p.spacing = self.spacing;
        if let Some(v) = self.exact {
            p.exact = v;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn from_problem(p: &PlanProblem) -> Self {
        ProblemFile {
            users: match &p.alloc {
                Some(a) => UsersSpec::Assigned(a.clone()),
                None => UsersSpec::Names(p.target.users().to_vec()),
            },
            target: TargetSpec::Edges(p.target.edge_names().map(|(a, b)| (a.to_owned(), b.to_owned())).collect()),
            grid: Some(p.grid),
            max_pumps_per_config: Some(p.max_pumps_per_config),
            max_configs: Some(p.max_configs),
            guard_band: Some(p.guard_band),
            candidate_cap: Some(p.candidate_cap),
            pump_power_mw: Some(p.pump_power_mw),
            slice_s: Some(p.slice_s),
            spacing: p.spacing,
            exact: Some(p.exact),
        }
    }
}

/// A plan stored together with the problem it solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub problem: ProblemFile,
    pub plan: Plan,
}

/// Users evenly spread over the grid, centred, `spacing` channels apart.
/// Without an explicit spacing the widest even spacing whose midpoints clear
/// the guard band is used: a pump halfway between two users then reaches
/// their channel sum on its own, and every bright product of such pumps
/// falls between user channels. Falls back to the widest spacing that fits.
pub fn even_allocation(
    users: &[String],
    grid: &ChannelGrid,
    spacing: Option<i32>,
    guard_band: i32,
) -> Result<UserAllocation> {
    let n = users.len() as i32;
    if n == 0 {
        return UserAllocation::new(Vec::<(String, Channel)>::new());
    }
    let span = grid.max_index - grid.min_index;
    let spacing = match spacing {
        Some(s) => s,
        None if n == 1 => 1,
        None => {
            let widest = span / (n - 1);
            (1..=widest)
                .rev()
                .find(|s| s % 2 == 0 && s / 2 > guard_band)
                .unwrap_or(widest)
        }
    };
    let width = spacing * (n - 1);
    if spacing < 1 || width > span {
        return Err(Error::InvalidProblem(format!(
            "{n} users with spacing {spacing} do not fit in C{}..=C{}",
            grid.min_index, grid.max_index
        )));
    }
    let start = grid.min_index + (span - width) / 2;
    UserAllocation::new(users.iter().enumerate().map(|(i, u)| (u.clone(), Channel(start + spacing * i as i32))))
}

/// Candidate pump sets: pumps more than `guard_band` channels from every
/// user, sizes `1..=max_pumps`, size-major then lexicographic, stopping at
/// `cap`. The flag reports whether the cap cut the enumeration short.
pub fn candidate_configs(
    alloc: &UserAllocation,
    grid: &ChannelGrid,
    max_pumps: usize,
    guard_band: i32,
    cap: usize,
) -> (Vec<Vec<Channel>>, bool) {
    let allowed: Vec<Channel> = grid
        .channels()
        .filter(|c| alloc.channels().iter().all(|u| u.distance(*c) > guard_band))
        .collect();
    let mut out = Vec::new();
    for size in 1..=max_pumps.min(allowed.len()) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            if out.len() == cap {
                return (out, true);
            }
            out.push(idx.iter().map(|&i| allowed[i]).collect());
            // Advance to the next combination in lexicographic order.
            let mut k = size;
            while k > 0 && idx[k - 1] == allowed.len() - size + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for m in k..size {
                idx[m] = idx[m - 1] + 1;
            }
        }
    }
    (out, false)
}

fn make_config(label: String, channels: &[Channel], power_mw: f64) -> PumpConfig {
    PumpConfig::with_max(label, channels.iter().map(|&c| Pump::new(c, power_mw)).collect(), usize::MAX)
        .expect("candidate channels are distinct")
}

/// First-order bright channels of a pump set, unclipped.
fn bright_channels(pumps: &[Channel]) -> Vec<i32> {
    let p: Vec<i32> = pumps.iter().map(|c| c.index()).collect();
    let mut out = p.clone();
    for &a in &p {
        for &b in &p {
            if a != b {
                out.push(2 * a - b);
            }
        }
    }
    for i in 0..p.len() {
        for j in (i + 1)..p.len() {
            for (k, &c) in p.iter().enumerate() {
                if k != i && k != j {
                    out.push(p[i] + p[j] - c);
                }
            }
        }
    }
    out
}

fn pair_sums(pumps: &[Channel]) -> Vec<i32> {
    let mut s = Vec::new();
    for (i, a) in pumps.iter().enumerate() {
        for b in &pumps[i..] {
            s.push(a.index() + b.index());
        }
    }
    s
}

struct Candidate {
    channels: Vec<Channel>,
    cover: FixedBitSet,
}

/// Whether candidate `a` is preferred over `b` at equal gain.
fn tie_order(a: &[Channel], b: &[Channel]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

/// Target edges as user-index pairs plus their channel sums.
struct Universe {
    edges: Vec<UserPair>,
    sums: Vec<i32>,
}

impl Universe {
    fn new(target: &Topology, alloc: &UserAllocation) -> Self {
        let edges: Vec<UserPair> = target
            .edge_names()
            .map(|(a, b)| UserPair::new(alloc.index_of(a).unwrap(), alloc.index_of(b).unwrap()))
            .collect();
        let sums = edges
            .iter()
            .map(|p| alloc.channel(p.0).index() + alloc.channel(p.1).index())
            .collect();
        Universe { edges, sums }
    }

    fn len(&self) -> usize {
        self.edges.len()
    }

    /// Edges covered by `pumps`, or `None` when a bright product lands on a
    /// user channel. Guard bands already hold for every candidate, so with no
    /// collision every user is usable and an edge is covered iff its channel
    /// sum is one of the process sums.
    fn cover(&self, pumps: &[Channel], alloc: &UserAllocation) -> Option<FixedBitSet> {
        let bright = bright_channels(pumps);
        if alloc.channels().iter().any(|u| bright.contains(&u.index())) {
            return None;
        }
        let sums = pair_sums(pumps);
        let mut bits = FixedBitSet::with_capacity(self.len());
        for (k, s) in self.sums.iter().enumerate() {
            if sums.contains(s) {
                bits.insert(k);
            }
        }
        Some(bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactOutcome {
    /// Greedy count proven minimal.
    Proven,
    /// Exact search found a smaller plan.
    Improved,
    /// Exact search not attempted (greedy too long or pool too large).
    Skipped,
    /// Node budget exhausted; greedy plan kept.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub candidates: usize,
    pub truncated: bool,
    /// Candidates surviving collision filtering and dominance pruning.
    pub reduced_pool: usize,
    pub greedy_configs: usize,
    pub exact: ExactOutcome,
    pub nodes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCoverage {
    pub users: (String, String),
    pub channels: (Channel, Channel),
    pub configs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub schedule: Schedule,
    pub alloc: UserAllocation,
    pub coverage_report: Vec<EdgeCoverage>,
    pub search: SearchSummary,
}

impl Plan {
    pub fn configs(&self) -> impl Iterator<Item = &PumpConfig> {
        self.schedule.entries().iter().map(|e| &e.config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StuckReason {
    /// Every grid channel is inside some user's guard band.
    GuardConflict,
    /// No allowed pump or pump pair has the edge's channel sum.
    SumUnreachable,
    /// Pump sets with the right sum exist but all put bright light on a user.
    ForbiddenCollision,
    /// Coverable edge left over because the configuration budget ran out.
    ConfigLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StuckEdge {
    pub users: (String, String),
    pub channels: (Channel, Channel),
    pub sum: i32,
    pub reason: StuckReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityReport {
    pub alloc: UserAllocation,
    pub stuck: Vec<StuckEdge>,
    pub candidates: usize,
    pub truncated: bool,
    /// Configurations a complete cover would need, when one exists.
    pub configs_needed: Option<usize>,
    pub max_configs: usize,
}

impl std::fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "target not coverable ({} candidate pump sets", self.candidates)?;
        if self.truncated {
            write!(f, ", enumeration truncated")?;
        }
        writeln!(f, ")")?;
        if let Some(n) = self.configs_needed {
            writeln!(f, "a full cover needs {n} configurations, limit is {}", self.max_configs)?;
        }
        for s in &self.stuck {
            writeln!(
                f,
                "  {}-{} ({}+{} = {}): {:?}",
                s.users.0, s.users.1, s.channels.0, s.channels.1, s.sum, s.reason
            )?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum PlanError {
    Invalid(Error),
    Infeasible(Box<InfeasibilityReport>),
}

impl std::fmt::Display for PlanError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlanError::Invalid(e) => write!(f, "{e}"),
            PlanError::Infeasible(r) => write!(f, "{r}"),
        }
    }
}

impl std::error::Error for PlanError {}

impl From<Error> for PlanError {
    fn from(e: Error) -> Self {
        PlanError::Invalid(e)
    }
}

/// Plan a schedule for `problem`. With a free allocation the even-spacing
/// template is used.
pub fn plan_schedule(problem: &PlanProblem) -> std::result::Result<Plan, PlanError> {
    problem.validate()?;
    let alloc = match &problem.alloc {
        Some(a) => a.clone(),
        None => even_allocation(problem.target.users(), &problem.grid, problem.spacing, problem.guard_band)?,
    };
    plan_for_allocation(problem, &alloc)
}

fn plan_for_allocation(problem: &PlanProblem, alloc: &UserAllocation) -> std::result::Result<Plan, PlanError> {
    let universe = Universe::new(&problem.target, alloc);
    let (raw, truncated) = candidate_configs(
        alloc,
        &problem.grid,
        problem.max_pumps_per_config,
        problem.guard_band,
        problem.candidate_cap,
    );
    let n_candidates = raw.len();
    let covers: Vec<Option<FixedBitSet>> = raw.par_iter().map(|c| universe.cover(c, alloc)).collect();
    let candidates: Vec<Candidate> = raw
        .into_iter()
        .zip(covers)
        .filter_map(|(channels, cover)| cover.map(|cover| Candidate { channels, cover }))
        .filter(|c| !c.cover.is_clear())
        .collect();

    let greedy = greedy_cover(&candidates, universe.len());
    let mut covered = FixedBitSet::with_capacity(universe.len());
    for &i in &greedy {
        covered.union_with(&candidates[i].cover);
    }
    if covered.count_ones(..) < universe.len() {
        return Err(PlanError::Infeasible(Box::new(infeasibility(
            problem, alloc, &universe, &covered, n_candidates, truncated, None,
        ))));
    }

    let pool = reduce_pool(&candidates);
    let mut chosen = greedy.clone();
    let mut outcome = ExactOutcome::Skipped;
    let mut nodes = 0;
    if greedy.len() <= problem.exact.greedy_threshold && pool.len() <= problem.exact.pool_limit {
        let mut bnb = BranchAndBound::new(&candidates, &pool, universe.len(), problem.exact.node_limit);
        let better = bnb.search(greedy.len());
        nodes = bnb.nodes;
        outcome = match (better, bnb.aborted) {
            (Some(sol), _) => {
                chosen = sol;
                ExactOutcome::Improved
            }
            (None, true) => ExactOutcome::Aborted,
            (None, false) => ExactOutcome::Proven,
        };
    }

    if chosen.len() > problem.max_configs {
        let mut partial = FixedBitSet::with_capacity(universe.len());
        for &i in chosen.iter().take(problem.max_configs) {
            partial.union_with(&candidates[i].cover);
        }
        return Err(PlanError::Infeasible(Box::new(infeasibility(
            problem,
            alloc,
            &universe,
            &partial,
            n_candidates,
            truncated,
            Some(chosen.len()),
        ))));
    }

    let configs: Vec<PumpConfig> = chosen
        .iter()
        .enumerate()
        .map(|(k, &i)| make_config(format!("cfg{}", k + 1), &candidates[i].channels, problem.pump_power_mw))
        .collect();
    let coverage_report = universe
        .edges
        .iter()
        .enumerate()
        .map(|(e, p)| EdgeCoverage {
            users: (alloc.users()[p.0].clone(), alloc.users()[p.1].clone()),
            channels: (alloc.channel(p.0), alloc.channel(p.1)),
            configs: chosen
                .iter()
                .zip(&configs)
                .filter(|(&i, _)| candidates[i].cover.contains(e))
                .map(|(_, c)| c.label.clone())
                .collect(),
        })
        .collect();

    Ok(Plan {
        schedule: Schedule::equal(configs, problem.slice_s)?,
        alloc: alloc.clone(),
        coverage_report,
        search: SearchSummary {
            candidates: n_candidates,
            truncated,
            reduced_pool: pool.len(),
            greedy_configs: greedy.len(),
            exact: outcome,
            nodes,
        },
    })
}

/// Repeatedly take the candidate covering the most uncovered edges; ties go
/// to fewer pumps, then the lexicographically smallest channel list.
fn greedy_cover(candidates: &[Candidate], universe: usize) -> Vec<usize> {
    let mut uncovered = FixedBitSet::with_capacity(universe);
    uncovered.insert_range(..);
    let mut chosen = Vec::new();
    while !uncovered.is_clear() {
        let best = candidates
            .par_iter()
            .enumerate()
            .map(|(i, c)| (c.cover.intersection_count(&uncovered), i))
            .filter(|&(gain, _)| gain > 0)
            .reduce_with(|a, b| {
                let ord = a.0.cmp(&b.0).then_with(|| tie_order(&candidates[b.1].channels, &candidates[a.1].channels));
                if ord == Ordering::Less {
                    b
                } else {
                    a
                }
            });
        let Some((_, i)) = best else { break };
        uncovered.difference_with(&candidates[i].cover);
        chosen.push(i);
    }
    chosen
}

/// Drop duplicate and dominated cover sets, keeping the preferred candidate
/// of each duplicate group. Optimal cover size is unchanged.
fn reduce_pool(candidates: &[Candidate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .cover
            .count_ones(..)
            .cmp(&candidates[a].cover.count_ones(..))
            .then_with(|| tie_order(&candidates[a].channels, &candidates[b].channels))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let c = &candidates[i].cover;
        if !kept.iter().any(|&k| c.is_subset(&candidates[k].cover)) {
            kept.push(i);
        }
    }
    kept
}

struct BranchAndBound<'a> {
    candidates: &'a [Candidate],
    pool: &'a [usize],
    /// Pool members covering each edge.
    by_edge: Vec<Vec<usize>>,
    node_limit: u64,
    nodes: u64,
    aborted: bool,
    best: usize,
    solution: Option<Vec<usize>>,
}

impl<'a> BranchAndBound<'a> {
    fn new(candidates: &'a [Candidate], pool: &'a [usize], universe: usize, node_limit: u64) -> Self {
        let by_edge = (0..universe)
            .map(|e| pool.iter().copied().filter(|&i| candidates[i].cover.contains(e)).collect())
            .collect();
        BranchAndBound {
            candidates,
            pool,
            by_edge,
            node_limit,
            nodes: 0,
            aborted: false,
            best: usize::MAX,
            solution: None,
        }
    }

    /// Look for a cover with fewer than `upper` sets.
    fn search(&mut self, upper: usize) -> Option<Vec<usize>> {
        self.best = upper;
        let mut uncovered = FixedBitSet::with_capacity(self.by_edge.len());
        uncovered.insert_range(..);
        let mut chosen = Vec::new();
        self.dfs(&uncovered, &mut chosen);
        self.solution.take()
    }

    fn dfs(&mut self, uncovered: &FixedBitSet, chosen: &mut Vec<usize>) {
        if self.aborted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.node_limit {
            self.aborted = true;
            return;
        }
        let remaining = uncovered.count_ones(..);
        if remaining == 0 {
            if chosen.len() < self.best {
                self.best = chosen.len();
                self.solution = Some(chosen.clone());
            }
            return;
        }
        let max_gain = self
            .pool
            .iter()
            .map(|&i| self.candidates[i].cover.intersection_count(uncovered))
            .max()
            .unwrap_or(0);
        if max_gain == 0 || chosen.len() + remaining.div_ceil(max_gain) >= self.best {
            return;
        }
        // Branch on the uncovered edge with the fewest covering sets.
        let edge = uncovered
            .ones()
            .min_by_key(|&e| (self.by_edge[e].len(), e))
            .expect("non-empty");
        let mut branches: Vec<(usize, usize)> = self.by_edge[edge]
            .iter()
            .map(|&i| (self.candidates[i].cover.intersection_count(uncovered), i))
            .collect();
        branches.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then_with(|| tie_order(&self.candidates[a.1].channels, &self.candidates[b.1].channels))
        });
        for (_, i) in branches {
            let mut next = uncovered.clone();
            next.difference_with(&self.candidates[i].cover);
            chosen.push(i);
            self.dfs(&next, chosen);
            chosen.pop();
            if self.aborted {
                return;
            }
        }
    }
}

fn infeasibility(
    problem: &PlanProblem,
    alloc: &UserAllocation,
    universe: &Universe,
    covered: &FixedBitSet,
    candidates: usize,
    truncated: bool,
    configs_needed: Option<usize>,
) -> InfeasibilityReport {
    let allowed: Vec<Channel> = problem
        .grid
        .channels()
        .filter(|c| alloc.channels().iter().all(|u| u.distance(*c) > problem.guard_band))
        .collect();
    let allowed_set: BTreeSet<i32> = allowed.iter().map(|c| c.index()).collect();
    let stuck = (0..universe.len())
        .filter(|&e| !covered.contains(e))
        .map(|e| {
            let p = universe.edges[e];
            let sum = universe.sums[e];
            let reason = if configs_needed.is_some() {
                StuckReason::ConfigLimit
            } else if allowed.is_empty() {
                StuckReason::GuardConflict
            } else if !allowed
                .iter()
                .any(|a| allowed_set.contains(&(sum - a.index())) && a.index() * 2 <= sum)
            {
                StuckReason::SumUnreachable
            } else {
                StuckReason::ForbiddenCollision
            };
            StuckEdge {
                users: (alloc.users()[p.0].clone(), alloc.users()[p.1].clone()),
                channels: (alloc.channel(p.0), alloc.channel(p.1)),
                sum,
                reason,
            }
        })
        .collect();
    InfeasibilityReport {
        alloc: alloc.clone(),
        stuck,
        candidates,
        truncated,
        configs_needed,
        max_configs: problem.max_configs,
    }
}

/// Joint search over user placements and pump sets: every placement of the
/// users on the grid is planned and the plan with the fewest configurations
/// wins (ties: lexicographically smallest channel list). Limited to at most
/// six users and `max_allocations` placements.
pub fn plan_schedule_exhaustive_alloc(
    problem: &PlanProblem,
    max_allocations: usize,
) -> std::result::Result<Plan, PlanError> {
    problem.validate()?;
    let users = problem.target.users().to_vec();
    let n = users.len();
    if n > 6 {
        return Err(Error::InvalidProblem(format!("exhaustive allocation supports at most 6 users, got {n}")).into());
    }
    let channels: Vec<Channel> = problem.grid.channels().collect();
    let total = binomial(channels.len(), n);
    if total > max_allocations as u128 {
        return Err(Error::InvalidProblem(format!(
            "{total} placements exceed the limit of {max_allocations}"
        ))
        .into());
    }
    let mut placements = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        placements.push(idx.iter().map(|&i| channels[i]).collect::<Vec<_>>());
        let mut k = n;
        while k > 0 && idx[k - 1] == channels.len() - n + k - 1 {
            k -= 1;
        }
        if k == 0 || n == 0 {
            break;
        }
        idx[k - 1] += 1;
        for m in k..n {
            idx[m] = idx[m - 1] + 1;
        }
    }
    let results: Vec<(usize, Option<Plan>)> = placements
        .par_iter()
        .enumerate()
        .map(|(k, chans)| {
            let alloc = UserAllocation::new(users.iter().cloned().zip(chans.iter().copied())).expect("distinct channels");
            (k, plan_for_allocation(problem, &alloc).ok())
        })
        .collect();
    let best = results
        .into_iter()
        .filter_map(|(k, p)| p.map(|p| (k, p)))
        .min_by_key(|(k, p)| (p.schedule.len(), *k));
    match best {
        Some((_, plan)) => Ok(plan),
        None => {
            let alloc = even_allocation(&users, &problem.grid, problem.spacing, problem.guard_band)?;
            plan_for_allocation(problem, &alloc)
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardViolation {
    pub config: String,
    pub pump: Channel,
    pub user: String,
    pub distance: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForbiddenCollision {
    pub config: String,
    pub user: String,
    pub channel: Channel,
    pub reasons: Vec<ForbiddenReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub users: usize,
    pub channels_used: usize,
    pub configs: usize,
    pub covered_edges: usize,
    pub target_edges: usize,
    pub missing_edges: Vec<(String, String)>,
    pub guard_violations: Vec<GuardViolation>,
    pub forbidden_collisions: Vec<ForbiddenCollision>,
    pub problems: Vec<String>,
    /// Temporary topology of each configuration, by label.
    pub topologies: BTreeMap<String, Topology>,
}

/// Check a plan against a problem from scratch: induced topologies,
/// coverage, guard bands, bright-channel collisions, limits, and that the
/// network uses exactly one channel per user.
pub fn verify_plan(problem: &PlanProblem, plan: &Plan) -> VerifyReport {
    let alloc = &plan.alloc;
    let mut problems = Vec::new();
    let mut guard_violations = Vec::new();
    let mut forbidden_collisions = Vec::new();
    let mut topologies = BTreeMap::new();

    let mut target_users: Vec<&String> = problem.target.users().iter().collect();
    let mut plan_users: Vec<&String> = alloc.users().iter().collect();
    target_users.sort();
    plan_users.sort();
    if target_users != plan_users {
        problems.push("plan users differ from target users".into());
    }
    if let Some(fixed) = &problem.alloc {
        if fixed != alloc {
            problems.push("plan allocation differs from the fixed allocation".into());
        }
    }
    if let Err(e) = alloc.check_grid(&problem.grid) {
        problems.push(e.to_string());
    }
    if plan.schedule.len() > problem.max_configs {
        problems.push(format!(
            "{} configurations exceed the limit of {}",
            plan.schedule.len(),
            problem.max_configs
        ));
    }
    let channels_used = alloc.channels().iter().collect::<BTreeSet<_>>().len();
    if channels_used != alloc.len() {
        problems.push(format!("{channels_used} channels serve {} users", alloc.len()));
    }

    let mut induced = Vec::new();
    for config in plan.configs() {
        if config.len() > problem.max_pumps_per_config {
            problems.push(format!("{} uses {} pumps", config.label, config.len()));
        }
        for p in config.channels() {
            if !problem.grid.contains(p) {
                problems.push(format!("{} pump {p} is off the grid", config.label));
            }
            for (u, &c) in alloc.users().iter().zip(alloc.channels()) {
                let d = p.distance(c);
                if d <= problem.guard_band {
                    guard_violations.push(GuardViolation {
                        config: config.label.clone(),
                        pump: p,
                        user: u.clone(),
                        distance: d,
                    });
                }
            }
        }
        let forbidden = forbidden_channels(config, &problem.grid);
        for (u, &c) in alloc.users().iter().zip(alloc.channels()) {
            if forbidden.contains(c) {
                forbidden_collisions.push(ForbiddenCollision {
                    config: config.label.clone(),
                    user: u.clone(),
                    channel: c,
                    reasons: forbidden.reasons(c).collect(),
                });
            }
        }
        match induced_topology(alloc, config, &problem.grid, problem.guard_band) {
            Ok(t) => {
                topologies.insert(config.label.clone(), t.clone());
                induced.push(t);
            }
            Err(e) => problems.push(format!("{}: {e}", config.label)),
        }
    }

    let union = accumulate(&induced).unwrap_or_else(|_| Topology::empty(alloc.users().to_vec()));
    let covered: BTreeSet<(String, String)> = union.edge_names().map(|(a, b)| ordered(a, b)).collect();
    let missing_edges: Vec<(String, String)> = problem
        .target
        .edge_names()
        .map(|(a, b)| ordered(a, b))
        .filter(|e| !covered.contains(e))
        .collect();
    let target_edges = problem.target.len();

    VerifyReport {
        passed: missing_edges.is_empty()
            && guard_violations.is_empty()
            && forbidden_collisions.is_empty()
            && problems.is_empty(),
        users: alloc.len(),
        channels_used,
        configs: plan.schedule.len(),
        covered_edges: target_edges - missing_edges.len(),
        target_edges,
        missing_edges,
        guard_violations,
        forbidden_collisions,
        problems,
        topologies,
    }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ScheduleEntry;

    fn alloc(ch: &[i32]) -> UserAllocation {
        UserAllocation::numbered(&ch.iter().copied().map(Channel).collect::<Vec<_>>()).unwrap()
    }

    fn ring_problem() -> PlanProblem {
        let a = alloc(&[34, 38, 42, 46]);
        let mut target = Topology::empty(a.users().to_vec());
        for (x, y) in [(0, 1), (1, 2), (2, 3), (0, 3)] {
            target.add_edge(x, y).unwrap();
        }
        PlanProblem::new(target, Some(a), ChannelGrid::default())
    }

    #[test]
    fn candidates_on_tight_grid_are_empty() {
        let (c, truncated) = candidate_configs(&alloc(&[39, 41]), &ChannelGrid::new(38, 42).unwrap(), 1, 1, 100);
        assert!(c.is_empty() && !truncated);
    }

    #[test]
    fn candidates_respect_guard() {
        let (c, _) = candidate_configs(&alloc(&[36, 44]), &ChannelGrid::new(35, 45).unwrap(), 1, 1, 100);
        let got: Vec<i32> = c.iter().map(|v| v[0].index()).collect();
        assert_eq!(got, vec![38, 39, 40, 41, 42]);
    }

    #[test]
    fn candidates_without_users_and_cap() {
        let empty = UserAllocation::new(Vec::<(String, Channel)>::new()).unwrap();
        let g = ChannelGrid::new(1, 6).unwrap();
        let (c, t) = candidate_configs(&empty, &g, 3, 1, 1000);
        assert_eq!(c.len(), 6 + 15 + 20);
        assert!(!t);
        assert_eq!(c[6], vec![Channel(1), Channel(2)]);
        assert_eq!(c[7], vec![Channel(1), Channel(3)]);
        let (c, t) = candidate_configs(&empty, &g, 3, 1, 10);
        assert_eq!(c.len(), 10);
        assert!(t);
    }

    #[test]
    fn ring_needs_one_config() {
        let p = ring_problem();
        let plan = plan_schedule(&p).unwrap();
        assert_eq!(plan.schedule.len(), 1);
        let report = verify_plan(&p, &plan);
        assert!(report.passed, "{report:?}");
        // {C36, C44} is one of the single-config covers.
        let a = alloc(&[34, 38, 42, 46]);
        let t = induced_topology(&a, &PumpConfig::at_reference("x", &[Channel(36), Channel(44)]).unwrap(), &p.grid, 1).unwrap();
        assert!(p.target.is_subset_of(&t));
    }

    #[test]
    fn plan_is_deterministic() {
        let p = PlanProblem::complete(6, None, ChannelGrid::default());
        let a = plan_schedule(&p).unwrap();
        let b = plan_schedule(&p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_when_no_pump_fits() {
        let a = alloc(&[39, 41]);
        let p = PlanProblem::new(Topology::complete(a.users().to_vec()), Some(a), ChannelGrid::new(38, 42).unwrap());
        match plan_schedule(&p) {
            Err(PlanError::Infeasible(r)) => {
                assert_eq!(r.stuck.len(), 1);
                assert_eq!(r.stuck[0].reason, StuckReason::GuardConflict);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn unreachable_sum_reported() {
        // Users at the grid edges: the sum 1 + 20 = 21 needs pumps (a, 21 - a)
        // with both more than one channel from each user, but the only
        // allowed channels are C4..C17; 4 + 17 = 21 works. Shrink the grid
        // so it does not.
        let a = alloc(&[1, 3]);
        let p = PlanProblem::new(Topology::complete(a.users().to_vec()), Some(a), ChannelGrid::new(1, 6).unwrap());
        match plan_schedule(&p) {
            Err(PlanError::Infeasible(r)) => assert_eq!(r.stuck[0].reason, StuckReason::SumUnreachable),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn config_limit_reported() {
        let mut p = PlanProblem::complete(10, None, ChannelGrid::default());
        p.max_configs = 1;
        match plan_schedule(&p) {
            Err(PlanError::Infeasible(r)) => {
                assert!(r.configs_needed.unwrap() >= 2);
                assert!(r.stuck.iter().all(|s| s.reason == StuckReason::ConfigLimit));
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn verify_flags_guard_and_coverage() {
        let p = ring_problem();
        let mut plan = plan_schedule(&p).unwrap();
        // Replace the schedule with a pump next to U1 (C34).
        let bad = PumpConfig::at_reference("bad", &[Channel(35)]).unwrap();
        plan.schedule = Schedule::new(vec![ScheduleEntry { config: bad, duration_s: 1.0 }]).unwrap();
        let r = verify_plan(&p, &plan);
        assert!(!r.passed);
        assert_eq!(r.guard_violations.len(), 1);
        assert_eq!(r.guard_violations[0].user, "U1");
        assert!(!r.missing_edges.is_empty());
    }

    #[test]
    fn verify_names_missing_edge() {
        let p = PlanProblem::complete(10, None, ChannelGrid::default());
        let mut plan = plan_schedule(&p).unwrap();
        let first = plan.schedule.entries()[1..].to_vec();
        plan.schedule = Schedule::new(first).unwrap();
        let r = verify_plan(&p, &plan);
        assert!(!r.passed);
        assert!(!r.missing_edges.is_empty());
    }

    #[test]
    fn even_template() {
        let users: Vec<String> = (1..=10).map(|i| format!("U{i}")).collect();
        let a = even_allocation(&users, &ChannelGrid::default(), None, 1).unwrap();
        let ch: Vec<i32> = a.channels().iter().map(|c| c.index()).collect();
        assert_eq!(ch, vec![9, 15, 21, 27, 33, 39, 45, 51, 57, 63]);
        // Spacing 7 fits but is odd.
        let odd = even_allocation(&users[..4], &ChannelGrid::new(1, 22).unwrap(), None, 1).unwrap();
        let ch: Vec<i32> = odd.channels().iter().map(|c| c.index()).collect();
        assert_eq!(ch, vec![2, 8, 14, 20]);
        // Spacing 2 would put midpoints inside the guard band; fall back.
        let tight = even_allocation(&users[..4], &ChannelGrid::new(1, 8).unwrap(), None, 1).unwrap();
        let ch: Vec<i32> = tight.channels().iter().map(|c| c.index()).collect();
        assert_eq!(ch, vec![1, 3, 5, 7]);
        assert!(even_allocation(&users, &ChannelGrid::new(1, 10).unwrap(), Some(2), 1).is_err());
    }

    #[test]
    fn exhaustive_allocation_small() {
        let mut p = PlanProblem::complete(3, None, ChannelGrid::new(1, 12).unwrap());
        p.max_configs = 4;
        let plan = plan_schedule_exhaustive_alloc(&p, 10_000).unwrap();
        assert!(verify_plan(&p, &plan).passed);
        let greedy = plan_schedule(&p).map(|pl| pl.schedule.len()).unwrap_or(usize::MAX);
        assert!(plan.schedule.len() <= greedy);
        let mut big = PlanProblem::complete(7, None, ChannelGrid::default());
        big.max_configs = 4;
        assert!(plan_schedule_exhaustive_alloc(&big, 10_000).is_err());
    }

    #[test]
    fn problem_file_forms() {
        let names: ProblemFile = serde_json::from_str(r#"{"users": ["A", "B", "C"], "target": "complete"}"#).unwrap();
        let p = names.into_problem().unwrap();
        assert!(p.alloc.is_none());
        assert_eq!(p.target.len(), 3);
        assert_eq!(p.max_pumps_per_config, 3);

        let fixed: ProblemFile = serde_json::from_str(
            r#"{"users": [{"user": "A", "channel": "C34"}, {"user": "B", "channel": 38}],
                "target": [["A", "B"]], "grid": {"min_index": 30, "max_index": 50}, "guard_band": 2}"#,
        )
        .unwrap();
        let p = fixed.into_problem().unwrap();
        assert_eq!(p.alloc.as_ref().unwrap().channel_of("B"), Some(Channel(38)));
        assert_eq!(p.guard_band, 2);
        assert_eq!(p.grid.min_index, 30);

        let back = ProblemFile::from_problem(&p);
        let json = serde_json::to_string(&back).unwrap();
        let again: ProblemFile = serde_json::from_str(&json).unwrap();
        assert_eq!(again.into_problem().unwrap(), p);

        let bad: ProblemFile = serde_json::from_str(r#"{"users": ["A"], "target": "ring"}"#).unwrap();
        assert!(bad.into_problem().is_err());
        assert!(serde_json::from_str::<ProblemFile>(r#"{"users": ["A"], "target": "complete", "typo": 1}"#).is_err());
    }
}
