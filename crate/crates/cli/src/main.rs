use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use gvi_core::agent::{train, TrainConfig};
use gvi_core::bound::{audit_bound, read_error_csv, write_bound_csv};
use gvi_core::envs::EnvSpec;
use gvi_core::experiments::{run_preset, PresetName, PresetOptions};
use gvi_core::gvi::{agvi_iterates, gvi_solve, write_q_csv, SolveOptions};
use gvi_core::{fmt_f64, GviError, GviParams, Mdp, QTable, Result, SoftmaxTemp};

#[derive(Parser)]
#[command(
    name = "gvi",
    version,
    about = "Generalized value iteration laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run exact GVI on a known environment or an MDP JSON file.
    Solve(SolveArgs),
    /// Train the model-free agent and write its curves.
    Train(TrainArgs),
    /// Evaluate the performance bound along an AGVI run driven by given errors.
    Bound(BoundArgs),
    /// Reproduce one of the figure presets.
    Preset(PresetArgs),
}

#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SolveArgs {
    /// JSON file whose keys mirror these flags; flags win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// `chainwalk`, `longchain`, `toy`, or a path to an MDP JSON file.
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Inverse temperature, or `inf`.
    #[arg(long)]
    beta: Option<SoftmaxTemp>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<SoftmaxTemp>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    eval_steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BoundArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<SoftmaxTemp>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Errors in `k,state,action,value` layout.
    #[arg(long)]
    errors: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Audit every `stride`-th iterate.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PresetArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// toy_fig1, decay_fig2, gap_fig3, diverge_fig4, perf_fig5, gapcurve_fig6q, er_fig6 or heatmap_fig7.
    #[arg()]
    #[serde(skip)]
    name: String,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Episode count or iteration horizon, replacing the preset default.
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    svg: bool,
}

const DEFAULT_GAMMA: f64 = 0.99;

macro_rules! merge_fields {
    ($flags:expr, $file:expr; $($field:ident),*) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field; } )*
    };
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| GviError::InvalidInput(format!("missing --{flag}")))
}

/// A `.json` path loads an explicit MDP whose own discount applies unless `gamma` is given.
fn load_mdp(key: &str, gamma: Option<f64>) -> Result<Mdp> {
    if Path::new(key).extension().is_some_and(|e| e == "json") {
        let mdp = Mdp::from_json_str(&fs::read_to_string(key)?)?;
        return match gamma {
            Some(g) => mdp.with_gamma(g),
            None => Ok(mdp),
        };
    }
    key.parse::<EnvSpec>()?
        .exact_model(gamma.unwrap_or(DEFAULT_GAMMA))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn solve(mut a: SolveArgs) -> Result<()> {
    let file: SolveArgs = load_config(a.config.as_deref())?;
    merge_fields!(a, file; env, alpha, beta, gamma, iters, tol, out, trace);
    let mdp = load_mdp(&required(a.env, "env")?, a.gamma)?;
    let params = GviParams::new(a.alpha.unwrap_or(0.0), a.beta.unwrap_or(SoftmaxTemp::MAX))?;
    let opts = SolveOptions {
        max_iters: a.iters.unwrap_or(100_000),
        tol: a.tol.unwrap_or(1e-10),
        snapshot_stride: None,
    };
    let (q, trace) = gvi_solve(
        &mdp,
        params,
        &QTable::zeros(mdp.n_states(), mdp.n_actions()),
        &opts,
    )?;
    let out = required(a.out, "out")?;
    let mut w = create(&out)?;
    write_q_csv(&q, &mut w)?;
    w.flush()?;
    if let Some(path) = a.trace {
        let mut w = create(&path)?;
        writeln!(w, "iteration,residual")?;
        for (i, r) in trace.residuals.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, fmt_f64(*r))?;
        }
        w.flush()?;
    }
    eprintln!(
        "{} iterations, {}",
        trace.iterations,
        if trace.converged {
            "converged"
        } else {
            "iteration limit reached"
        }
    );
    Ok(())
}

fn train_cmd(mut a: TrainArgs) -> Result<()> {
    let file: TrainArgs = load_config(a.config.as_deref())?;
    merge_fields!(a, file; env, alpha, beta, gamma, episodes, steps, epsilon, seed, eval_episodes, eval_steps, out);
    let env: EnvSpec = required(a.env, "env")?.parse()?;
    let params = GviParams::new(a.alpha.unwrap_or(0.0), a.beta.unwrap_or(SoftmaxTemp::MAX))?;
    let mut cfg = TrainConfig::new(params, a.episodes.unwrap_or(100), a.seed.unwrap_or(0));
    cfg.gamma = a.gamma.unwrap_or(cfg.gamma);
    cfg.steps_per_episode = a.steps.unwrap_or(env.default_episode_len());
    cfg.epsilon = a.epsilon.unwrap_or(cfg.epsilon);
    cfg.eval_episodes = a.eval_episodes.unwrap_or(cfg.eval_episodes);
    cfg.eval_steps = a.eval_steps.unwrap_or(cfg.eval_steps);
    let out = required(a.out, "out")?;
    let result = train(&env, &cfg)?;

    fs::create_dir_all(&out)?;
    let mut w = create(&out.join("curve.csv"))?;
    writeln!(w, "episode,metric")?;
    for p in &result.eval_curve {
        writeln!(w, "{},{}", p.episode, fmt_f64(p.value))?;
    }
    w.flush()?;
    let mut w = create(&out.join("q.csv"))?;
    write_q_csv(&result.final_q, &mut w)?;
    w.flush()?;
    if let Some(curve) = &result.left_ratio_curve {
        let mut w = create(&out.join("left_ratio.csv"))?;
        writeln!(w, "episode,left_ratio")?;
        for (i, v) in curve.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, fmt_f64(*v))?;
        }
        w.flush()?;
    }
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "env": env, "train": cfg }))? + "\n",
    )?;
    if result.diverged {
        eprintln!("warning: Q-values became non-finite");
    }
    Ok(())
}

fn bound_cmd(mut a: BoundArgs) -> Result<()> {
    let file: BoundArgs = load_config(a.config.as_deref())?;
    merge_fields!(a, file; env, alpha, beta, gamma, errors, k, stride, out);
    let mdp = load_mdp(&required(a.env, "env")?, a.gamma)?;
    let params = GviParams::new(a.alpha.unwrap_or(0.0), a.beta.unwrap_or(SoftmaxTemp::MAX))?;
    let k = required(a.k, "k")?;
    let text = fs::read_to_string(required(a.errors, "errors")?)?;
    let mut errors = read_error_csv(&text, mdp.n_states(), mdp.n_actions())?;
    if errors.len() < k + 1 {
        return Err(GviError::InvalidInput(format!(
            "error history covers {} steps, --k {} needs {}",
            errors.len(),
            k,
            k + 1
        )));
    }
    errors.truncate(k + 1);
    let iterates = agvi_iterates(
        &mdp,
        params,
        &QTable::zeros(mdp.n_states(), mdp.n_actions()),
        &errors,
    )?;
    let reports = audit_bound(
        &mdp,
        params,
        &iterates,
        &errors,
        None,
        a.stride.unwrap_or(1),
        k,
    )?;
    let mut w = create(&required(a.out, "out")?)?;
    write_bound_csv(&reports, &mut w)?;
    w.flush()?;
    let violations = reports.iter().filter(|r| r.holds() == Some(false)).count();
    eprintln!(
        "{} audited iterations, {} bound violations",
        reports.len(),
        violations
    );
    Ok(())
}

fn preset_cmd(mut a: PresetArgs) -> Result<()> {
    let file: PresetArgs = load_config(a.config.as_deref())?;
    merge_fields!(a, file; runs, seed, length, out);
    a.svg |= file.svg;
    let name: PresetName = a.name.parse()?;
    let opts = PresetOptions {
        runs: a.runs,
        seed: a.seed.unwrap_or(0),
        svg: a.svg,
        length: a.length,
    };
    let manifest = run_preset(name, &opts, &required(a.out, "out")?)?;
    eprintln!("{}: wrote {} files", manifest.preset, manifest.files.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(a) => solve(a),
        Command::Train(a) => train_cmd(a),
        Command::Bound(a) => bound_cmd(a),
        Command::Preset(a) => preset_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
