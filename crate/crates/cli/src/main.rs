use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use cegal::cex::{enumerate_counterexample, enumerate_with_threshold, CexError};
use cegal::envs::{
    build_mountain_car, generate_demonstrations, make_expert, EnvError, GridWorldSpec, MountainCarSpec, Sampling,
};
use cegal::io;
use cegal::learn::{apprenticeship_learning, run_cegal, AlConfig, CegalConfig};
use cegal::margin::{MarginOptions, DEFAULT_MAX_ITERS, DEFAULT_TOLERANCE};
use cegal::mdp::{estimate_expert_features, expected_features, induce_dtmc, FeatureExpectation, FeatureMap, Mdp, Policy};
use cegal::pctl::{parse_pctl, verify, StateFormula};
use cegal::synth::{synthesize_min_reach_policy, SynthError};

#[derive(Parser)]
#[command(name = "cegal", version, about = "Safety-aware apprenticeship learning on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-world models
    Gridworld {
        #[command(subcommand)]
        action: GridworldCmd,
    },
    /// Discretized mountain car
    Mountaincar {
        #[command(subcommand)]
        action: MountaincarCmd,
    },
    /// Sample demonstrations from a policy
    Demo(DemoArgs),
    /// Synthesize a maximally safe policy
    Safe(SafeArgs),
    /// Plain max-margin apprenticeship learning
    Al(AlArgs),
    /// Model-check a policy against a formula
    Check(CheckArgs),
    /// Print the most probable violating paths
    Cex(CexArgs),
    /// Counterexample-guided apprenticeship learning
    Cegal(Box<CegalArgs>),
    /// Write ω·f(s) as CSV and as a grayscale image
    ExportRewardmap(RewardMapArgs),
}

#[derive(Subcommand)]
enum GridworldCmd {
    Gen(GridGenArgs),
}

#[derive(Subcommand)]
enum MountaincarCmd {
    Gen(MountainGenArgs),
}

#[derive(Args)]
struct GridGenArgs {
    #[arg(long, default_value_t = 8)]
    size: usize,
    /// Random layout from this seed instead of the fixed preset
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Model file, written with features
    #[arg(long)]
    out: PathBuf,
    /// Optimal policy under the ground-truth reward
    #[arg(long)]
    expert_out: Option<PathBuf>,
    /// Ground-truth reward as a width×height CSV
    #[arg(long)]
    reward_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Uniform,
    Center,
}

#[derive(Args)]
struct MountainGenArgs {
    #[arg(long, default_value_t = 40)]
    bins: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SamplingArg::Uniform)]
    sampling: SamplingArg,
    /// Simulator steps per MDP step
    #[arg(long, default_value_t = MountainCarSpec::default().frame_skip)]
    frame_skip: usize,
    #[arg(long)]
    out: PathBuf,
    /// Optimal policy for reaching the goal
    #[arg(long)]
    expert_out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    /// Transitions per demonstration
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Discard demonstrations that visit an `unsafe` state
    #[arg(long)]
    filter_safe: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FormulaArgs {
    /// Full PCTL formula; overrides --pstar/--horizon/--label
    #[arg(long)]
    formula: Option<String>,
    #[arg(long)]
    pstar: Option<f64>,
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long, default_value = "unsafe")]
    label: String,
}

impl FormulaArgs {
    fn resolve(&self, pstar: Option<f64>, horizon: Option<u32>) -> Result<StateFormula> {
        if let Some(text) = &self.formula {
            return parse_pctl(text).map_err(|e| anyhow!("formula: {e}"));
        }
        let pstar = self.pstar.or(pstar).unwrap_or(0.2);
        let horizon = self.horizon.or(horizon).unwrap_or(64);
        Ok(StateFormula::bounded_reach(pstar, &self.label, horizon))
    }
}

#[derive(Args)]
struct SafeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    formula: FormulaArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExpertArgs {
    /// Demonstration file (one state sequence per line)
    #[arg(long, conflicts_with = "expert_policy")]
    demos: Option<PathBuf>,
    /// Exact feature expectations of this policy
    #[arg(long)]
    expert_policy: Option<PathBuf>,
    /// States summed per demonstration; defaults to where γ^t drops below 1e-12
    #[arg(long)]
    mu_horizon: Option<usize>,
}

impl ExpertArgs {
    fn mu_expert(&self, mdp: &Mdp, features: &FeatureMap) -> Result<(FeatureExpectation, String)> {
        match (&self.demos, &self.expert_policy) {
            (Some(path), _) => {
                let demos = io::parse_trajectories(&read(path)?).with_context(|| path.display().to_string())?;
                let horizon = self.mu_horizon.unwrap_or_else(|| discount_horizon(mdp.gamma()));
                let mu = estimate_expert_features(&demos, features, mdp.gamma(), horizon)?;
                Ok((mu, format!("demos:{}", path.display())))
            }
            (None, Some(path)) => {
                let policy = load_policy(path)?;
                let mu = expected_features(mdp, &policy, features)?;
                Ok((mu, format!("expert-policy:{}", path.display())))
            }
            (None, None) => bail!("one of --demos or --expert-policy is required"),
        }
    }
}

#[derive(Args)]
struct AlArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    expert: ExpertArgs,
    /// Starting policy; defaults to action 0 everywhere
    #[arg(long)]
    initial: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    formula: String,
}

#[derive(Args)]
struct CexArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    formula: String,
    #[arg(long, default_value_t = cegal::cex::DEFAULT_MAX_PATHS)]
    max_paths: usize,
    /// Enumerate until this smaller mass instead of the formula's bound
    #[arg(long)]
    cex_pstar: Option<f64>,
}

/// Every field can also be set in the `--config` file under the same
/// name with `-` replaced by `_`.
#[derive(Args)]
struct CegalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    expert: ExpertArgs,
    #[command(flatten)]
    formula: FormulaArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Echoed into the transcript; the loop itself is deterministic
    #[arg(long)]
    seed: Option<u64>,
    /// Initial value of k
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    opt_tol: Option<f64>,
    #[arg(long)]
    opt_iters: Option<usize>,
    #[arg(long)]
    max_paths: Option<usize>,
    #[arg(long)]
    cex_pstar: Option<f64>,
    /// Use this policy as π0 instead of synthesizing one
    #[arg(long)]
    naive_safe: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    weights_out: Option<PathBuf>,
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    pstar: Option<f64>,
    horizon: Option<u32>,
    epsilon: Option<f64>,
    sigma: Option<f64>,
    alpha: Option<f64>,
    max_iters: Option<usize>,
    seed: Option<u64>,
    k: Option<f64>,
    opt_tol: Option<f64>,
    opt_iters: Option<usize>,
    max_paths: Option<usize>,
    cex_pstar: Option<f64>,
}

#[derive(Args)]
struct RewardMapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Grid width; defaults to the square root of the state count
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    pgm: Option<PathBuf>,
}

/// A failed `check`; exits with status 2 without an error message.
#[derive(Debug)]
struct Unsat;

impl std::fmt::Display for Unsat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("property violated")
    }
}

impl std::error::Error for Unsat {}

/// 3 for infeasible synthesis or demonstration filtering, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(SynthError::InfeasibleStationary { .. }) = cause.downcast_ref() {
            return 3;
        }
        if let Some(EnvError::FilterExhausted { .. }) = cause.downcast_ref() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Unsat>() => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gridworld {
            action: GridworldCmd::Gen(args),
        } => gridworld_gen(args),
        Command::Mountaincar {
            action: MountaincarCmd::Gen(args),
        } => mountaincar_gen(args),
        Command::Demo(args) => demo(args),
        Command::Safe(args) => safe(args),
        Command::Al(args) => al(args),
        Command::Check(args) => check(args),
        Command::Cex(args) => cex(args),
        Command::Cegal(args) => cegal_cmd(*args),
        Command::ExportRewardmap(args) => export_rewardmap(args),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|()| w.flush()).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<(Mdp, Option<FeatureMap>)> {
    io::parse_mdp(&read(path)?).with_context(|| path.display().to_string())
}

fn load_model_with_features(path: &Path) -> Result<(Mdp, FeatureMap)> {
    match load_model(path)? {
        (mdp, Some(features)) => Ok((mdp, features)),
        (_, None) => bail!("{} has no FEAT lines", path.display()),
    }
}

fn load_policy(path: &Path) -> Result<Policy> {
    io::parse_policy(&read(path)?).with_context(|| path.display().to_string())
}

/// Smallest `t` with `γ^t < 1e-12`.
fn discount_horizon(gamma: f64) -> usize {
    if gamma <= 0.0 {
        1
    } else {
        ((1e-12f64).ln() / gamma.ln()).ceil() as usize
    }
}

fn gridworld_gen(args: GridGenArgs) -> Result<()> {
    let mut spec = match args.seed {
        Some(seed) => GridWorldSpec::random(args.size, seed),
        None => GridWorldSpec::preset(args.size),
    };
    if let Some(noise) = args.noise {
        spec.noise = noise;
    }
    if let Some(gamma) = args.gamma {
        spec.gamma = gamma;
    }
    let (mdp, features) = spec.build()?;
    write_file(&args.out, |w| io::write_mdp(w, &mdp, Some(&features)))?;
    if let Some(path) = &args.expert_out {
        let (expert, _) = make_expert(&mdp, &features, &spec.reward)?;
        write_file(path, |w| io::write_policy(w, &expert))?;
    }
    if let Some(path) = &args.reward_out {
        write_file(path, |w| io::write_reward_map_csv(w, &spec.reward, spec.width))?;
    }
    println!(
        "states={} actions={} unsafe={} features={}",
        mdp.n_states(),
        mdp.n_actions(),
        spec.unsafe_cells.len(),
        features.dim()
    );
    Ok(())
}

fn mountaincar_gen(args: MountainGenArgs) -> Result<()> {
    let spec = MountainCarSpec {
        n_pos: args.bins,
        n_vel: args.bins,
        sampling: match args.sampling {
            SamplingArg::Uniform => Sampling::Uniform,
            SamplingArg::Center => Sampling::CellCenter,
        },
        frame_skip: args.frame_skip,
        ..MountainCarSpec::default()
    };
    let (mdp, features) = build_mountain_car(&spec, args.samples, args.seed)?;
    write_file(&args.out, |w| io::write_mdp(w, &mdp, Some(&features)))?;
    if let Some(path) = &args.expert_out {
        let (expert, _) = make_expert(&mdp, &features, &spec.goal_reward())?;
        write_file(path, |w| io::write_policy(w, &expert))?;
    }
    println!(
        "states={} actions={} transitions={} features={}",
        mdp.n_states(),
        mdp.n_actions(),
        mdp.nnz(),
        features.dim()
    );
    Ok(())
}

fn demo(args: DemoArgs) -> Result<()> {
    let (mdp, _) = load_model(&args.model)?;
    let policy = load_policy(&args.policy)?;
    let demos = generate_demonstrations(&mdp, &policy, args.count, args.horizon, args.seed, args.filter_safe)?;
    write_file(&args.out, |w| io::write_trajectories(w, &demos))?;
    println!("demonstrations={} horizon={} seed={}", demos.len(), args.horizon, args.seed);
    Ok(())
}

fn safe(args: SafeArgs) -> Result<()> {
    let (mdp, _) = load_model(&args.model)?;
    let formula = args.formula.resolve(None, None)?;
    let safe = synthesize_min_reach_policy(&mdp, &formula)?;
    write_file(&args.out, |w| io::write_policy(w, &safe.policy))?;
    println!("probability={} lower_bound={}", safe.probability, safe.lower_bound);
    Ok(())
}

fn al(args: AlArgs) -> Result<()> {
    let (mdp, features) = load_model_with_features(&args.model)?;
    let (mu_expert, _) = args.expert.mu_expert(&mdp, &features)?;
    let initial = match &args.initial {
        Some(path) => load_policy(path)?,
        None => Policy::constant(mdp.n_states(), 0),
    };
    let config = AlConfig {
        epsilon: args.epsilon,
        max_iters: args.max_iters,
        ..AlConfig::default()
    };
    let result = apprenticeship_learning(&mdp, &features, &mu_expert, &initial, &config)?;
    write_file(&args.out, |w| io::write_policy(w, &result.best.policy))?;
    if let Some(path) = &args.weights_out {
        write_file(path, |w| io::write_weights(w, &result.best.weights))?;
    }
    println!(
        "iterations={} delta={} mu_dist={}",
        result.iterations,
        result.delta,
        result.best.mu.distance(&mu_expert)
    );
    Ok(())
}

fn check(args: CheckArgs) -> Result<()> {
    let (mdp, _) = load_model(&args.model)?;
    let policy = load_policy(&args.policy)?;
    let formula = parse_pctl(&args.formula).map_err(|e| anyhow!("formula: {e}"))?;
    let verdict = verify(&induce_dtmc(&mdp, &policy)?, &formula)?;
    let label = if verdict.satisfied { "SAT" } else { "UNSAT" };
    println!("probability={} verdict={label}", verdict.probability);
    if verdict.satisfied {
        Ok(())
    } else {
        Err(Unsat.into())
    }
}

fn cex(args: CexArgs) -> Result<()> {
    let (mdp, _) = load_model(&args.model)?;
    let policy = load_policy(&args.policy)?;
    let formula = parse_pctl(&args.formula).map_err(|e| anyhow!("formula: {e}"))?;
    let dtmc = induce_dtmc(&mdp, &policy)?;
    let result = match args.cex_pstar {
        Some(target) => enumerate_with_threshold(&dtmc, &formula, args.max_paths, target),
        None => enumerate_counterexample(&dtmc, &formula, args.max_paths),
    };
    let cex = match result {
        Ok(cex) => cex,
        Err(CexError::BudgetExhausted { partial }) => {
            eprintln!("warning: path budget exhausted, set is partial");
            partial
        }
        Err(e) => return Err(e.into()),
    };
    let mut out = std::io::stdout().lock();
    for path in &cex.paths {
        write!(out, "{}", path.probability.unwrap_or(0.0))?;
        for s in &path.states {
            write!(out, " {s}")?;
        }
        writeln!(out)?;
    }
    writeln!(out, "TOTAL {}", cex.total_probability)?;
    Ok(())
}

fn cegal_cmd(args: CegalArgs) -> Result<()> {
    let file: FileConfig = match &args.config {
        Some(path) => toml::from_str(&read(path)?).with_context(|| path.display().to_string())?,
        None => FileConfig::default(),
    };
    let defaults = CegalConfig::default();
    let config = CegalConfig {
        epsilon: args.epsilon.or(file.epsilon).unwrap_or(defaults.epsilon),
        sigma: args.sigma.or(file.sigma).unwrap_or(defaults.sigma),
        alpha: args.alpha.or(file.alpha).unwrap_or(defaults.alpha),
        max_iters: args.max_iters.or(file.max_iters).unwrap_or(defaults.max_iters),
        max_paths: args.max_paths.or(file.max_paths).unwrap_or(defaults.max_paths),
        cex_threshold: args.cex_pstar.or(file.cex_pstar),
        initial_k: args.k.or(file.k).unwrap_or(defaults.initial_k),
        margin: MarginOptions {
            tolerance: args.opt_tol.or(file.opt_tol).unwrap_or(DEFAULT_TOLERANCE),
            max_iters: args.opt_iters.or(file.opt_iters).unwrap_or(DEFAULT_MAX_ITERS),
        },
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let formula = args.formula.resolve(file.pstar, file.horizon)?;

    let (mdp, features) = load_model_with_features(&args.model)?;
    let (mu_expert, mu_source) = args.expert.mu_expert(&mdp, &features)?;
    let (pi0, pi0_source) = match &args.naive_safe {
        Some(path) => (load_policy(path)?, format!("naive-safe:{}", path.display())),
        None => (synthesize_min_reach_policy(&mdp, &formula)?.policy, "synthesized".to_string()),
    };
    let result = run_cegal(&mdp, &features, &mu_expert, &formula, &pi0, &config)?;

    write_file(&args.out, |w| io::write_policy(w, &result.policy))?;
    if let Some(path) = &args.weights_out {
        write_file(path, |w| io::write_weights(w, &result.weights))?;
    }
    if let Some(path) = &args.transcript {
        let cex_pstar = config.cex_threshold.map_or("none".to_string(), |p| p.to_string());
        let header: Vec<(String, String)> = [
            ("formula", formula.to_string()),
            ("epsilon", config.epsilon.to_string()),
            ("sigma", config.sigma.to_string()),
            ("alpha", config.alpha.to_string()),
            ("max_iters", config.max_iters.to_string()),
            ("k", config.initial_k.to_string()),
            ("opt_tol", config.margin.tolerance.to_string()),
            ("opt_iters", config.margin.max_iters.to_string()),
            ("max_paths", config.max_paths.to_string()),
            ("cex_pstar", cex_pstar),
            ("seed", seed.to_string()),
            ("mu_source", mu_source),
            ("pi0", pi0_source),
            ("termination", result.termination.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        write_file(path, |w| io::write_transcript(w, &header, &result.transcript))?;
    }
    println!(
        "termination={} probability={} mu_dist={} iterations={}",
        result.termination,
        result.verdict.probability,
        result.distance(&mu_expert),
        result.transcript.len()
    );
    Ok(())
}

fn export_rewardmap(args: RewardMapArgs) -> Result<()> {
    let (mdp, features) = load_model_with_features(&args.model)?;
    let weights = io::parse_weights(&read(&args.weights)?).with_context(|| args.weights.display().to_string())?;
    if weights.as_slice().len() != features.dim() {
        bail!("{} weights for {} features", weights.as_slice().len(), features.dim());
    }
    let n = mdp.n_states();
    let width = match args.width {
        Some(w) => w,
        None => {
            let w = (n as f64).sqrt().round() as usize;
            if w * w != n {
                bail!("{n} states is not a square grid, pass --width");
            }
            w
        }
    };
    if width == 0 || n % width != 0 {
        bail!("width {width} does not divide {n} states");
    }
    let values = features.reward(&weights);
    write_file(&args.csv, |w| io::write_reward_map_csv(w, &values, width))?;
    if let Some(path) = &args.pgm {
        write_file(path, |w| io::write_pgm(w, &values, width, n / width))?;
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("width={width} height={} min={lo} max={hi}", n / width);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discount_horizon_reaches_tolerance() {
        let h = discount_horizon(0.99);
        assert!(0.99f64.powi(h as i32) < 1e-12);
        assert!(0.99f64.powi(h as i32 - 1) >= 1e-12);
        assert_eq!(discount_horizon(0.0), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
