//! Command-line driver: trains grids of readout experts into loss matrices,
//! scores loss matrices under switching strategies, runs synthetic regret
//! experiments, and ranks representations across datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use preqmdl::expfam::{run_regret_experiment, RegretExperiment};
use preqmdl::files::{read_feature_file, read_loss_matrix, read_score_table, write_loss_matrix};
use preqmdl::ranking::{summarize_ranks, Orientation, DEFAULT_CONFIDENCE, DEFAULT_Q_VALUE};
use preqmdl::readout::{Hyperparameters, ReadoutArchitecture};
use preqmdl::report::{
    save_json, write_posterior_trace, write_regret_curve, RankReport, Report, StrategySection,
};
use preqmdl::switching::{forward_codelength, SwitchingStrategy};
use preqmdl::trainer::{run_stage1_full, ExpertSpec, TrainerConfig};

#[derive(Parser)]
#[command(
    name = "preqmdl",
    version,
    about = "Prequential description-length scoring of feature representations"
)]
struct Cli {
    /// Seed for all randomized work; equal seeds give bit-identical outputs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a grid of readout experts prequentially and store their
    /// per-step losses.
    Stage1(Stage1Args),
    /// Score a stored loss matrix under a switching strategy.
    Stage2(Stage2Args),
    /// Run a synthetic regret experiment described by a JSON file.
    SynthRegret(SynthRegretArgs),
    /// Rank representations across datasets from a score table.
    Rank(RankArgs),
}

#[derive(Args)]
struct Stage1Args {
    /// Binary feature file (see the README for the layout).
    #[arg(long)]
    features: PathBuf,
    /// Expert grid, a cross product over clauses like "h=0,1;lr=1e-3,1e-2".
    /// Keys: h (hidden layers), lr, w (hidden width, default: feature
    /// dimension), wd (weight decay), ls (label smoothing).
    #[arg(long)]
    grid: String,
    /// Output loss-matrix file.
    #[arg(long)]
    out: PathBuf,
    /// Training examples per update step.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Replay streams drawn from when filling a batch.
    #[arg(long, default_value_t = 30)]
    replay_streams: usize,
    /// Make each replay stream walk forward from its restart point instead
    /// of jumping uniformly on every draw.
    #[arg(long)]
    sequential_replay: bool,
}

#[derive(Args)]
struct Stage2Args {
    /// Binary loss-matrix file produced by stage1.
    #[arg(long)]
    losses: PathBuf,
    /// Switching strategy: fixed-share-dec:m=INT | fixed-share-const:alpha=F
    /// | bayes | elementwise | switch:kappa=F.
    #[arg(long)]
    strategy: String,
    /// Also score the Bayesian mixture, elementwise mixture, and switch
    /// distribution next to the requested strategy.
    #[arg(long)]
    sweep: bool,
    /// Write the primary strategy's full posterior trace as TSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Report path; the JSON goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthRegretArgs {
    /// JSON experiment file (source, horizon, strategy, experts, trials).
    spec: PathBuf,
    /// Report path; the JSON goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the regret curve as TSV.
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

#[derive(Args)]
struct RankArgs {
    /// Delimited score table: header row with representation names, then
    /// one row per dataset.
    #[arg(long)]
    scores: PathBuf,
    /// Whether lower or higher scores are better.
    #[arg(long, value_enum, default_value_t = OrientationArg::Lower)]
    orientation: OrientationArg,
    /// Studentized-range quantile used in the critical difference.
    #[arg(long, default_value_t = DEFAULT_Q_VALUE)]
    q_gamma: f64,
    /// Confidence level the quantile corresponds to (echoed in the report).
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
    confidence: f64,
    /// Report path; the JSON goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum OrientationArg {
    Lower,
    Higher,
}

impl From<OrientationArg> for Orientation {
    fn from(value: OrientationArg) -> Self {
        match value {
            OrientationArg::Lower => Orientation::Lower,
            OrientationArg::Higher => Orientation::Higher,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stage1(args) => stage1(cli.seed, args),
        Command::Stage2(args) => stage2(cli.seed, args),
        Command::SynthRegret(args) => synth_regret(cli.seed, args),
        Command::Rank(args) => rank(args),
    }
}

fn stage1(seed: Option<u64>, args: Stage1Args) -> Result<()> {
    let seq = read_feature_file(&args.features)
        .with_context(|| format!("cannot read feature file {}", args.features.display()))?;
    let mut violations = seq.validate();
    if !violations.is_empty() {
        violations.truncate(3);
        bail!("invalid feature file {}: {}", args.features.display(), violations.join("; "));
    }
    let experts = parse_grid(&args.grid, seq.dim(), seq.n_classes())?;
    let config = TrainerConfig {
        batch_size: args.batch_size,
        n_streams: args.replay_streams,
        seed: seed.unwrap_or(0),
        sequential_replay: args.sequential_replay,
    };
    let output = run_stage1_full(&seq, &experts, &config)?;
    for &k in &output.diverged_experts {
        eprintln!(
            "warning: expert {} ({}) diverged; its losses are ln(C) from that point on",
            k,
            output.losses.expert_names()[k]
        );
    }
    write_loss_matrix(&args.out, &output.losses)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    println!(
        "wrote {} ({} steps x {} experts)",
        args.out.display(),
        output.losses.n_steps(),
        output.losses.n_experts()
    );
    Ok(())
}

fn stage2(seed: Option<u64>, args: Stage2Args) -> Result<()> {
    let matrix = read_loss_matrix(&args.losses)
        .with_context(|| format!("cannot read loss matrix {}", args.losses.display()))?;
    let k = matrix.n_experts();
    let mut strategies = vec![SwitchingStrategy::parse(&args.strategy, k)?];
    if args.sweep {
        for text in ["bayes", "elementwise", "switch:kappa=0.5"] {
            let extra = SwitchingStrategy::parse(text, k)?;
            if strategies.iter().all(|s| s.descriptor() != extra.descriptor()) {
                strategies.push(extra);
            }
        }
    }
    let mut sections = Vec::new();
    let mut primary = None;
    for strategy in &strategies {
        let result = forward_codelength(&matrix, strategy)?;
        sections.push(StrategySection::from_result(&result, matrix.expert_names()));
        if primary.is_none() {
            primary = Some(result);
        }
    }
    if let Some(trace_out) = &args.trace_out {
        let result = primary.as_ref().expect("at least one strategy ran");
        write_posterior_trace(trace_out, &result.trace, matrix.expert_names())
            .with_context(|| format!("cannot write {}", trace_out.display()))?;
    }
    let report = Report {
        n_examples: matrix.n_steps() as u64,
        expert_names: matrix.expert_names().to_vec(),
        strategies: sections,
        regret_curves: vec![],
        config: serde_json::json!({
            "losses": args.losses.display().to_string(),
            "strategy": args.strategy,
            "sweep": args.sweep,
        }),
        seed,
        diverged_experts: vec![],
    };
    emit(&report, args.out.as_deref(), || {
        for section in &report.strategies {
            println!(
                "{}: {:.6} nats total, {:.6} per example, most frequent argmax {}",
                section.strategy,
                section.total_nats,
                section.per_example_nats,
                section.posterior.most_frequent_argmax_name
            );
        }
    })
}

fn synth_regret(seed: Option<u64>, args: SynthRegretArgs) -> Result<()> {
    let text = fs::read_to_string(&args.spec)
        .with_context(|| format!("cannot read experiment file {}", args.spec.display()))?;
    let mut experiment: RegretExperiment = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse experiment file {}", args.spec.display()))?;
    if let Some(seed) = seed {
        experiment.seed = seed;
    }
    experiment.validate()?;
    let curve = run_regret_experiment(&experiment)?;
    if let Some(curve_out) = &args.curve_out {
        write_regret_curve(curve_out, &curve)
            .with_context(|| format!("cannot write {}", curve_out.display()))?;
    }
    let report = Report {
        n_examples: experiment.horizon,
        expert_names: experiment.experts.iter().map(|e| e.describe()).collect(),
        strategies: vec![],
        regret_curves: vec![curve],
        config: serde_json::to_value(&experiment)?,
        seed: Some(experiment.seed),
        diverged_experts: vec![],
    };
    emit(&report, args.out.as_deref(), || {
        let curve = &report.regret_curves[0];
        let note = if curve.constant_regret { " (constant regret, deterministic source)" } else { "" };
        println!(
            "final-decade slope {:.4} +/- {:.4} in ln N{note}",
            curve.slope, curve.slope_std_error
        );
    })
}

fn rank(args: RankArgs) -> Result<()> {
    let table = read_score_table(&args.scores, args.orientation.into())
        .with_context(|| format!("cannot read score table {}", args.scores.display()))?;
    let summary = summarize_ranks(&table, args.q_gamma, args.confidence)?;
    let report = RankReport::new(&table, &summary);
    emit(&report, args.out.as_deref(), || {
        for (position, &rep) in report.order.iter().enumerate() {
            println!(
                "{}. {}: average rank {:.3}",
                position + 1,
                report.representation_names[rep],
                report.average_ranks[rep]
            );
        }
        println!(
            "critical difference {:.4} (q = {}, confidence {})",
            report.critical_difference, report.q_value, report.confidence
        );
    })
}

/// Saves the report and prints the summary, or prints the JSON itself when
/// no output path was given.
fn emit<T: Serialize>(value: &T, out: Option<&Path>, summary: impl FnOnce()) -> Result<()> {
    match out {
        Some(path) => {
            save_json(path, value).with_context(|| format!("cannot write {}", path.display()))?;
            summary();
            println!("wrote {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

/// Expands a grid string into one expert per combination. Linear experts
/// ignore the width axis, so extra widths do not duplicate them.
fn parse_grid(text: &str, input_dim: usize, n_classes: u32) -> Result<Vec<ExpertSpec>> {
    let defaults = Hyperparameters::default();
    let mut hs: Option<Vec<usize>> = None;
    let mut lrs: Option<Vec<f64>> = None;
    let mut ws: Option<Vec<usize>> = None;
    let mut wds = vec![defaults.weight_decay];
    let mut lss = vec![defaults.label_smoothing];
    for clause in text.split(';') {
        let clause = clause.trim();
        if clause.is_empty() {
            continue;
        }
        let Some((key, values)) = clause.split_once('=') else {
            bail!("grid clause {clause:?} is not key=v1,v2,...");
        };
        match key.trim() {
            "h" => hs = Some(parse_usize_list(values, "h")?),
            "lr" => lrs = Some(parse_f64_list(values, "lr")?),
            "w" => ws = Some(parse_usize_list(values, "w")?),
            "wd" => wds = parse_f64_list(values, "wd")?,
            "ls" => lss = parse_f64_list(values, "ls")?,
            other => bail!("unknown grid key {other:?} (known: h, lr, w, wd, ls)"),
        }
    }
    let hs = hs.context("grid needs h=... (hidden layer counts)")?;
    let lrs = lrs.context("grid needs lr=... (learning rates)")?;
    let ws = ws.unwrap_or_else(|| vec![input_dim]);
    for &lr in &lrs {
        if !(lr.is_finite() && lr > 0.0) {
            bail!("learning rate {lr} must be positive");
        }
    }
    for &wd in &wds {
        if !(wd.is_finite() && wd >= 0.0) {
            bail!("weight decay {wd} must be >= 0");
        }
    }
    for &ls in &lss {
        if !(ls.is_finite() && (0.0..0.5).contains(&ls)) {
            bail!("label smoothing {ls} must be in [0, 0.5)");
        }
    }
    let multi_width = ws.len() > 1;
    let mut experts = Vec::new();
    for &h in &hs {
        let widths: &[usize] = if h == 0 { &ws[..1] } else { &ws };
        for &w in widths {
            for &lr in &lrs {
                for &wd in &wds {
                    for &ls in &lss {
                        let arch = ReadoutArchitecture::new(h, w, input_dim, n_classes as usize)?;
                        let hyper = Hyperparameters {
                            learning_rate: lr,
                            weight_decay: wd,
                            label_smoothing: ls,
                            ..defaults.clone()
                        };
                        let mut name = arch.short_name();
                        if h > 0 && multi_width {
                            name.push_str(&format!("-w{w}"));
                        }
                        name.push_str(&format!(":lr={lr}"));
                        if wds.len() > 1 || wd != defaults.weight_decay {
                            name.push_str(&format!(",wd={wd}"));
                        }
                        if lss.len() > 1 || ls != defaults.label_smoothing {
                            name.push_str(&format!(",ls={ls}"));
                        }
                        experts.push(ExpertSpec::named(name, arch, hyper));
                    }
                }
            }
        }
    }
    Ok(experts)
}

fn parse_usize_list(values: &str, key: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for cell in values.split(',') {
        let value: usize = cell
            .trim()
            .parse()
            .with_context(|| format!("grid key {key}: cannot parse {cell:?} as an integer"))?;
        if !out.contains(&value) {
            out.push(value);
        }
    }
    if out.is_empty() {
        bail!("grid key {key} has no values");
    }
    Ok(out)
}

fn parse_f64_list(values: &str, key: &str) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = Vec::new();
    for cell in values.split(',') {
        let value: f64 = cell
            .trim()
            .parse()
            .with_context(|| format!("grid key {key}: cannot parse {cell:?} as a number"))?;
        if !out.contains(&value) {
            out.push(value);
        }
    }
    if out.is_empty() {
        bail!("grid key {key} has no values");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cross_product_names_every_expert() {
        let experts = parse_grid("h=0,1;lr=0.001,0.01", 8, 4).unwrap();
        let names: Vec<&str> = experts.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(
            names,
            vec!["linear:lr=0.001", "linear:lr=0.01", "mlp1:lr=0.001", "mlp1:lr=0.01"]
        );
    }

    #[test]
    fn linear_experts_collapse_the_width_axis() {
        let experts = parse_grid("h=0,2; w=16,32; lr=0.01", 8, 3).unwrap();
        let names: Vec<&str> = experts.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, vec!["linear:lr=0.01", "mlp2-w16:lr=0.01", "mlp2-w32:lr=0.01"]);
    }

    #[test]
    fn non_default_smoothing_and_decay_show_up_in_names() {
        let experts = parse_grid("h=1;lr=0.01;wd=0.001;ls=0", 4, 2).unwrap();
        assert_eq!(experts[0].name, "mlp1:lr=0.01,wd=0.001,ls=0");
    }

    #[test]
    fn malformed_grids_are_rejected() {
        assert!(parse_grid("lr=0.01", 4, 2).is_err());
        assert!(parse_grid("h=1", 4, 2).is_err());
        assert!(parse_grid("h=1;lr=0", 4, 2).is_err());
        assert!(parse_grid("h=1;lr=0.01;ls=0.5", 4, 2).is_err());
        assert!(parse_grid("h=1;lr=0.01;volume=11", 4, 2).is_err());
        assert!(parse_grid("h=eight;lr=0.01", 4, 2).is_err());
    }

    #[test]
    fn duplicate_grid_values_are_dropped() {
        let experts = parse_grid("h=1,1;lr=0.01,0.01", 4, 2).unwrap();
        assert_eq!(experts.len(), 1);
    }
}
