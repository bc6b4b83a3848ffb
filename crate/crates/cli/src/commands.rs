use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use pumpnet::calibrate::{calibrate, CalibrationInputs};
use pumpnet::grid::parse_channel_list;
use pumpnet::network::{accumulate, induced_topology, Schedule, ScheduleEntry};
use pumpnet::pipeline::evaluate_schedule;
use pumpnet::planner::{
    plan_schedule, plan_schedule_exhaustive_alloc, verify_plan, InfeasibilityReport, PlanDocument, PlanError,
    PlanProblem, ProblemFile, VerifyReport,
};
use pumpnet::qkd::{LinearPenalty, QuditEntropy, SkrReport, YieldModel};
use pumpnet::sfwm::{
    correlation_graph, distinct_sums, enumerate_processes, forbidden_channels, ForbiddenSet, ProcessKind, Pump,
};
use pumpnet::stats::{measure_jsi, simulate_timetags, JsiMatrix, JsiMode, LinkStats, TagSimulation};
use pumpnet::{Channel, PumpConfig};
use serde::Serialize;

use crate::config::{read_json, RunConfig, RunContext};
use crate::{Cli, Command, Mode, Output, YieldCurve};

pub enum Failure {
    /// Bad input: exit code 1.
    Input(anyhow::Error),
    /// Infeasible problem or failed verification: exit code 2.
    Domain(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<pumpnet::Error> for Failure {
    fn from(e: pumpnet::Error) -> Self {
        Failure::Input(e.into())
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Files to write, checked for overwrites before anything is written.
struct Outputs {
    dir: PathBuf,
    force: bool,
    files: Vec<(PathBuf, String)>,
}

impl Outputs {
    fn new(dir: PathBuf, force: bool) -> Self {
        Outputs {
            dir,
            force,
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, contents: String) {
        self.files.push((self.dir.join(name), contents));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let text = serde_json::to_string_pretty(value).expect("output serializes") + "\n";
        self.add(name, text);
    }

    fn write(self) -> Result<Vec<PathBuf>> {
        if !self.force {
            if let Some((p, _)) = self.files.iter().find(|(p, _)| p.exists()) {
                return Err(anyhow!("{} exists; pass --force to overwrite", p.display()));
            }
        }
        fs::create_dir_all(&self.dir).with_context(|| format!("cannot create {}", self.dir.display()))?;
        let mut written = Vec::new();
        for (p, text) in self.files {
            fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))?;
            written.push(p);
        }
        Ok(written)
    }
}

fn need_seed(mode: Mode, seed: Option<u64>) -> Result<Option<u64>> {
    match (mode, seed) {
        (Mode::Montecarlo, None) => Err(anyhow!("--seed is required in Monte Carlo mode")),
        (_, s) => Ok(s),
    }
}

fn jsi_mode(mode: Mode) -> JsiMode {
    match mode {
        Mode::Analytic => JsiMode::Analytic,
        Mode::Montecarlo => JsiMode::MonteCarlo,
    }
}

pub fn run(cli: Cli) -> CmdResult {
    if let Command::Calibrate { inputs, name, output } = &cli.command {
        // Calibration produces the defaults, so it must not need them.
        let run = match cli.config.as_deref() {
            Some(p) => read_json(p)?,
            None => Default::default(),
        };
        return cmd_calibrate(&run, inputs.as_deref(), name, output);
    }
    let ctx = RunContext::load(cli.config.as_deref(), cli.defaults.as_deref())?;
    match cli.command {
        Command::Plan {
            problem,
            output,
            exhaustive_alloc,
            max_allocations,
        } => cmd_plan(&ctx, &problem, &output, exhaustive_alloc.then_some(max_allocations)),
        Command::Jsi {
            pumps,
            powers,
            channels,
            mode,
            seed,
            integration,
            dump_tags,
            output,
        } => cmd_jsi(
            &ctx,
            JsiArgs {
                pumps,
                powers,
                channels,
                mode,
                seed: ctx.seed(seed),
                integration,
                dump_tags,
            },
            &output,
        ),
        Command::Network {
            plan,
            mode,
            seed,
            duration,
            yield_curve,
            output,
        } => cmd_network(&ctx, &plan, mode, ctx.seed(seed), duration, yield_curve, &output),
        Command::Verify { plan, problem, output } => cmd_verify(&ctx, &plan, problem.as_deref(), &output),
        Command::Calibrate { .. } => unreachable!("handled above"),
    }
}

fn file_stem_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn cmd_plan(ctx: &RunContext, path: &Path, output: &Output, exhaustive: Option<usize>) -> CmdResult {
    let file: ProblemFile = read_json(path)?;
    let problem = file
        .clone()
        .into_problem()
        .with_context(|| format!("{}: invalid problem", path.display()))?;
    let result = match exhaustive {
        Some(limit) => plan_schedule_exhaustive_alloc(&problem, limit),
        None => plan_schedule(&problem),
    };
    let plan = match result {
        Ok(p) => p,
        Err(PlanError::Invalid(e)) => return Err(Failure::Input(e.into())),
        Err(PlanError::Infeasible(report)) => return Err(Failure::Domain(infeasible_text(&report))),
    };

    let mut out = Outputs::new(ctx.out_dir(output.out.as_deref()), output.force);
    let mut topologies = Vec::new();
    for entry in plan.schedule.entries() {
        let t = induced_topology(&plan.alloc, &entry.config, &problem.grid, problem.guard_band)?;
        out.add(
            &format!("{}.dot", file_stem_safe(&entry.config.label)),
            t.to_dot(&entry.config.label, Some(&plan.alloc)),
        );
        topologies.push(t);
    }
    out.add("accumulated.dot", accumulate(&topologies)?.to_dot("accumulated", Some(&plan.alloc)));
    let doc = PlanDocument {
        problem: ProblemFile::from_problem(&problem),
        plan,
    };
    out.json("plan.json", &doc);
    let written = out.write()?;

    let plan = &doc.plan;
    println!(
        "{} configurations cover {} target edges with {} user channels",
        plan.schedule.len(),
        problem.target.len(),
        plan.alloc.len()
    );
    for (entry, t) in plan.schedule.entries().iter().zip(&topologies) {
        let pumps: Vec<String> = entry.config.channels().map(|c| c.to_string()).collect();
        println!("  {}: pumps {} -> {} links", entry.config.label, pumps.join(","), t.len());
    }
    println!(
        "search: {} candidates{}, greedy {}, exact {:?}",
        plan.search.candidates,
        if plan.search.truncated { " (truncated)" } else { "" },
        plan.search.greedy_configs,
        plan.search.exact
    );
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn infeasible_text(r: &InfeasibilityReport) -> String {
    let mut s = String::from("infeasible: ");
    s.push_str(&r.to_string());
    s
}

struct JsiArgs {
    pumps: String,
    powers: Option<String>,
    channels: Option<String>,
    mode: Mode,
    seed: Option<u64>,
    integration: Option<f64>,
    dump_tags: Option<String>,
}

#[derive(Serialize)]
struct LineInfo {
    sum: i32,
    kinds: Vec<ProcessKind>,
    /// Pair strengths of the processes on this line, summed.
    strength: f64,
    total_counts: u64,
    total_accidentals: u64,
}

#[derive(Serialize)]
struct JsiSidecar<'a> {
    pumps: &'a PumpConfig,
    mode: JsiMode,
    seed: Option<u64>,
    window_ps: i64,
    integration_s: f64,
    distinct_sums: Vec<i32>,
    lines: Vec<LineInfo>,
    forbidden: &'a ForbiddenSet,
    matrix: &'a JsiMatrix,
}

fn cmd_jsi(ctx: &RunContext, args: JsiArgs, output: &Output) -> CmdResult {
    let seed = need_seed(args.mode, args.seed)?;
    let setup = ctx.jsi_setup();
    let pump_channels = parse_channel_list(&args.pumps).context("--pumps")?;
    let powers: Vec<f64> = match &args.powers {
        Some(p) => p
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| anyhow!("--powers: {x:?}: {e}")))
            .collect::<Result<_>>()?,
        None => vec![pumpnet::sfwm::REFERENCE_POWER_MW; pump_channels.len()],
    };
    if powers.len() != pump_channels.len() {
        return Err(Failure::Input(anyhow!(
            "--powers has {} values for {} pumps",
            powers.len(),
            pump_channels.len()
        )));
    }
    let pumps = PumpConfig::new(
        "jsi",
        pump_channels.iter().zip(&powers).map(|(&c, &p)| Pump::new(c, p)).collect(),
    )?;
    for c in pumps.channels() {
        setup.grid.check(c)?;
    }
    let channels: Vec<Channel> = match &args.channels {
        Some(list) => parse_channel_list(list).context("--channels")?,
        None => {
            let lo = pumps.channels().map(|c| c.index()).min().unwrap() - 10;
            let hi = pumps.channels().map(|c| c.index()).max().unwrap() + 10;
            (lo.max(setup.grid.min_index)..=hi.min(setup.grid.max_index)).map(Channel).collect()
        }
    };
    let integration = args.integration.unwrap_or(ctx.defaults.jsi.integration_s);
    let mode = jsi_mode(args.mode);
    let matrix = measure_jsi(&pumps, &channels, &setup, mode, integration, seed.unwrap_or(0))?;
    let forbidden = forbidden_channels(&pumps, &setup.grid);
    let processes = enumerate_processes(&pumps);
    let lines = distinct_sums(&pumps)
        .into_iter()
        .map(|sum| {
            let on_line: Vec<_> = processes.iter().filter(|p| p.sum == sum).collect();
            LineInfo {
                sum,
                kinds: on_line.iter().map(|p| p.kind).collect(),
                strength: on_line.iter().map(|p| p.relative_strength(&pumps)).sum(),
                total_counts: matrix.line_total(sum),
                total_accidentals: matrix.line_accidentals(sum),
            }
        })
        .collect::<Vec<_>>();

    let mut out = Outputs::new(ctx.out_dir(output.out.as_deref()), output.force);
    out.add("jsi.csv", matrix.to_csv());
    out.json(
        "jsi.json",
        &JsiSidecar {
            pumps: &pumps,
            mode,
            seed,
            window_ps: setup.window_ps,
            integration_s: integration,
            distinct_sums: distinct_sums(&pumps),
            lines,
            forbidden: &forbidden,
            matrix: &matrix,
        },
    );
    if let Some(pair) = &args.dump_tags {
        let seed = seed.ok_or_else(|| anyhow!("--dump-tags needs --seed"))?;
        let pair = parse_channel_list(pair).context("--dump-tags")?;
        let [a, b] = pair[..] else {
            return Err(Failure::Input(anyhow!("--dump-tags takes exactly two channels")));
        };
        let graph = correlation_graph(&pumps, &setup.grid, false);
        let sim = TagSimulation::for_pair(&graph, a, b, &setup.source, &setup.arm, &setup.arm, integration);
        let tags = simulate_timetags(&sim, seed)?;
        let (ta, tb) = tags.to_text();
        out.add(&format!("tags_{a}.txt"), ta);
        out.add(&format!("tags_{b}.txt"), tb);
    }
    let written = out.write()?;

    let sums: Vec<String> = distinct_sums(&pumps).iter().map(|s| s.to_string()).collect();
    println!(
        "{} coincidence lines at index sums {}; {} channels excluded",
        sums.len(),
        sums.join(","),
        matrix.excluded.len()
    );
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn load_plan(path: &Path) -> Result<(PlanDocument, PlanProblem)> {
    let doc: PlanDocument = read_json(path)?;
    let problem = doc
        .problem
        .clone()
        .into_problem()
        .with_context(|| format!("{}: invalid problem", path.display()))?;
    Ok((doc, problem))
}

fn verify_text(r: &VerifyReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "verification {}: {}/{} target edges, {} configurations, {} user channels",
        if r.passed { "passed" } else { "FAILED" },
        r.covered_edges,
        r.target_edges,
        r.configs,
        r.channels_used
    );
    for (a, b) in &r.missing_edges {
        let _ = writeln!(s, "  missing edge {a}-{b}");
    }
    for g in &r.guard_violations {
        let _ = writeln!(
            s,
            "  {}: pump {} is {} channel(s) from {}",
            g.config, g.pump, g.distance, g.user
        );
    }
    for f in &r.forbidden_collisions {
        let _ = writeln!(s, "  {}: user {} sits on bright channel {}", f.config, f.user, f.channel);
    }
    for p in &r.problems {
        let _ = writeln!(s, "  {p}");
    }
    s
}

#[derive(Serialize)]
struct LinkRecord {
    users: (String, String),
    channels: (Channel, Channel),
    stats: LinkStats,
}

#[derive(Serialize)]
struct ConfigRecord {
    label: String,
    pumps: Vec<Channel>,
    duration_s: f64,
    links: Vec<LinkRecord>,
}

#[derive(Serialize)]
struct NetworkReport {
    mode: JsiMode,
    seed: Option<u64>,
    yield_curve: &'static str,
    configs: Vec<ConfigRecord>,
    skr: SkrReport,
}

fn cmd_network(
    ctx: &RunContext,
    path: &Path,
    mode: Mode,
    seed: Option<u64>,
    duration: Option<f64>,
    curve: YieldCurve,
    output: &Output,
) -> CmdResult {
    let seed = need_seed(mode, seed)?;
    let (doc, problem) = load_plan(path)?;
    let report = verify_plan(&problem, &doc.plan);
    if !report.passed {
        return Err(Failure::Domain(verify_text(&report)));
    }
    let plan = doc.plan;
    let schedule = match duration {
        Some(d) => Schedule::new(
            plan.schedule
                .entries()
                .iter()
                .map(|e| ScheduleEntry {
                    config: e.config.clone(),
                    duration_s: d,
                })
                .collect(),
        )?,
        None => plan.schedule.clone(),
    };
    let mut setup = ctx.network_setup();
    setup.grid = problem.grid;
    setup.guard_band = problem.guard_band;
    let params = ctx.qkd();
    let linear: LinearPenalty = params.linear_penalty();
    let (model, curve_name): (&dyn YieldModel, &'static str) = match curve {
        YieldCurve::Linear => (&linear, "linear"),
        YieldCurve::Qudit => (&QuditEntropy, "qudit"),
    };
    let eval = evaluate_schedule(&schedule, &plan.alloc, &setup, &params, model, jsi_mode(mode), seed)?;

    let users = plan.alloc.users();
    let configs = schedule
        .entries()
        .iter()
        .zip(&eval.per_config)
        .map(|(e, links)| ConfigRecord {
            label: e.config.label.clone(),
            pumps: e.config.channels().collect(),
            duration_s: e.duration_s,
            links: links
                .iter()
                .map(|(p, s)| LinkRecord {
                    users: (users[p.0].clone(), users[p.1].clone()),
                    channels: (plan.alloc.channel(p.0), plan.alloc.channel(p.1)),
                    stats: *s,
                })
                .collect(),
        })
        .collect();
    let mut out = Outputs::new(ctx.out_dir(output.out.as_deref()), output.force);
    out.add("skr_matrix.csv", eval.report.to_csv());
    out.json(
        "skr_report.json",
        &NetworkReport {
            mode: eval.mode,
            seed,
            yield_curve: curve_name,
            configs,
            skr: eval.report.clone(),
        },
    );
    let written = out.write()?;

    let s = &eval.report.summary;
    println!(
        "{} links: mean overall SKR {:.2} bps, min {:.2} bps, {} positive",
        s.links, s.mean_overall_skr, s.min_overall_skr, s.positive_links
    );
    if !s.unserved.is_empty() {
        println!("{} links are not served by any configuration", s.unserved.len());
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_verify(ctx: &RunContext, path: &Path, problem: Option<&Path>, output: &Output) -> CmdResult {
    let (doc, stored) = load_plan(path)?;
    let problem = match problem {
        Some(p) => {
            let file: ProblemFile = read_json(p)?;
            file.into_problem()
                .with_context(|| format!("{}: invalid problem", p.display()))?
        }
        None => stored,
    };
    let report = verify_plan(&problem, &doc.plan);
    let mut out = Outputs::new(ctx.out_dir(output.out.as_deref()), output.force);
    out.json("verify.json", &report);
    let written = out.write()?;
    let text = verify_text(&report);
    if !report.passed {
        return Err(Failure::Domain(text));
    }
    print!("{text}");
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_calibrate(run: &RunConfig, inputs: Option<&Path>, name: &str, output: &Output) -> CmdResult {
    let inputs: CalibrationInputs = match inputs {
        Some(p) => read_json(p)?,
        None => CalibrationInputs::default(),
    };
    let defaults = calibrate(&inputs)?;
    let dir = output
        .out
        .clone()
        .or_else(|| run.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut out = Outputs::new(dir, output.force);
    out.add(name, defaults.to_json());
    let written = out.write()?;
    let a = &defaults.achieved;
    let src = &defaults.jsi.setup.source;
    println!(
        "brightness {:.6e} pairs/s, broadband noise {:.6e}/s, pump leakage {:.6e}/s",
        src.brightness, src.broadband_noise, src.residual_pump_noise
    );
    println!(
        "JSI CAR far {:.1}, near {:.1}; network mean SKR {:.2} bps (min {:.2}, {} positive links, {} configurations)",
        a.far_car, a.near_car, a.mean_skr_bps, a.min_skr_bps, a.positive_links, a.configs
    );
    println!(
        "peak singles: JSI {:.3e}/s, network {:.3e}/s (saturation guard {:.1e}/s)",
        a.max_jsi_singles, a.max_network_singles, inputs.targets.saturation_singles
    );
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
