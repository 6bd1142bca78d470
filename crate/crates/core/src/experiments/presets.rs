//! Figure-reproduction presets: compute functions plus the file-writing runner.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::agent::{evaluate, evaluate_policy, train, TrainConfig};
use crate::bound::decay_coefficient;
use crate::envs::{chain_walk, long_chain_walk, toy_chain, EnvSpec, RIGHT};
use crate::error::{invalid_input, GviError, Result};
use crate::experiments::metrics::{action_gap_curve, error_ratio, Stat};
use crate::experiments::svg::{emit_svg, Axes, Plot, Series};
use crate::fmt_f64;
use crate::gvi::{
    divergent_form_from, gvi_solve, gvi_step, theorem1_limit, GviParams, SolveOptions,
};
use crate::mdp::{QTable, SoftmaxTemp};
use crate::operators::optimal_q;
use crate::rng::SimRng;

pub const GAMMA: f64 = 0.99;
pub const FIXED_BETA: f64 = 10.0;
pub const GRID_ALPHAS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const GRID_BETAS: [f64; 7] = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, f64::INFINITY];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PresetName {
    ToyFig1,
    DecayFig2,
    GapFig3,
    DivergeFig4,
    PerfFig5,
    GapcurveFig6q,
    ErFig6,
    HeatmapFig7,
}

impl PresetName {
    pub const ALL: [PresetName; 8] = [
        PresetName::ToyFig1,
        PresetName::DecayFig2,
        PresetName::GapFig3,
        PresetName::DivergeFig4,
        PresetName::PerfFig5,
        PresetName::GapcurveFig6q,
        PresetName::ErFig6,
        PresetName::HeatmapFig7,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::ToyFig1 => "toy_fig1",
            PresetName::DecayFig2 => "decay_fig2",
            PresetName::GapFig3 => "gap_fig3",
            PresetName::DivergeFig4 => "diverge_fig4",
            PresetName::PerfFig5 => "perf_fig5",
            PresetName::GapcurveFig6q => "gapcurve_fig6q",
            PresetName::ErFig6 => "er_fig6",
            PresetName::HeatmapFig7 => "heatmap_fig7",
        }
    }

    /// Seeds per grid cell when `--runs` is not given; 0 for deterministic presets.
    pub fn default_runs(self) -> usize {
        match self {
            PresetName::ToyFig1 => 1000,
            PresetName::PerfFig5
            | PresetName::GapcurveFig6q
            | PresetName::ErFig6
            | PresetName::HeatmapFig7 => 20,
            _ => 0,
        }
    }

    /// Episodes (training presets) or iterations/horizon (exact presets).
    pub fn default_length(self) -> usize {
        match self {
            PresetName::ToyFig1 => 1000,
            PresetName::DecayFig2 => 500,
            PresetName::GapFig3 | PresetName::DivergeFig4 => 100_000,
            PresetName::PerfFig5 | PresetName::GapcurveFig6q => 2500,
            PresetName::ErFig6 | PresetName::HeatmapFig7 => 5000,
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = GviError;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| invalid_input(format!("unknown preset {s:?}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PresetOptions {
    pub runs: Option<usize>,
    pub seed: u64,
    pub svg: bool,
    /// Overrides the preset's episode count or iteration horizon.
    pub length: Option<usize>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Manifest {
    pub preset: String,
    pub base_seed: u64,
    pub runs: usize,
    pub length: usize,
    pub protocol: serde_json::Value,
    pub files: Vec<String>,
}

fn params(alpha: f64, beta: f64) -> GviParams {
    GviParams::new(alpha, SoftmaxTemp::new(beta).expect("preset beta")).expect("preset params")
}

fn label(p: GviParams) -> String {
    format!("alpha{}_beta{}", fmt_f64(p.alpha), p.beta)
}

fn seeds(base: u64, runs: usize) -> impl Iterator<Item = u64> + Clone {
    (0..runs as u64).map(move |i| base.wrapping_add(i))
}

/// Builds LF-terminated CSV text with a fixed header.
struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    fn new(header: &[&str]) -> Self {
        Csv {
            text: header.join(",") + "\n",
            width: header.len(),
        }
    }

    fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.width);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }
}

fn num(x: f64) -> String {
    fmt_f64(x)
}

fn beta_key(b: SoftmaxTemp) -> String {
    b.to_string()
}

/// Tracks written files so a failed run can remove what it produced.
struct Outputs {
    root: PathBuf,
    files: Vec<String>,
    created_dirs: Vec<PathBuf>,
    svg: bool,
}

impl Outputs {
    fn new(root: &Path, svg: bool) -> Result<Self> {
        let mut out = Outputs {
            root: root.to_path_buf(),
            files: Vec::new(),
            created_dirs: Vec::new(),
            svg,
        };
        out.ensure_dir(root)?;
        Ok(out)
    }

    fn ensure_dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        for d in missing.into_iter().rev() {
            fs::create_dir(&d)?;
            self.created_dirs.push(d);
        }
        Ok(())
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        self.files.push(rel.to_string());
        fs::write(&path, contents)?;
        Ok(())
    }

    fn csv(&mut self, rel: &str, csv: Csv) -> Result<()> {
        self.write(rel, &csv.text)
    }

    fn plot(&mut self, rel: &str, plot: Plot) -> Result<()> {
        if !self.svg {
            return Ok(());
        }
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        self.files.push(rel.to_string());
        emit_svg(&plot, &path)
    }

    fn cleanup(&self) {
        for f in &self.files {
            let _ = fs::remove_file(self.root.join(f));
        }
        for d in self.created_dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn axes(title: &str, x: &str, y: &str) -> Axes {
    Axes {
        title: title.into(),
        x_label: x.into(),
        y_label: y.into(),
    }
}

// ---------------------------------------------------------------- decay

pub const DECAY_ALPHAS: [f64; 4] = [0.0, 0.9, 0.99, 1.0];

pub fn decay_curves(alphas: &[f64], gamma: f64, horizon: usize) -> Vec<(f64, Vec<f64>)> {
    alphas
        .iter()
        .map(|&a| {
            (
                a,
                (0..=horizon)
                    .map(|k| decay_coefficient(a, gamma, k))
                    .collect(),
            )
        })
        .collect()
}

fn run_decay(out: &mut Outputs, horizon: usize) -> Result<serde_json::Value> {
    let curves = decay_curves(&DECAY_ALPHAS, GAMMA, horizon);
    let mut csv = Csv::new(&["alpha", "k", "d_k"]);
    for (a, c) in &curves {
        for (k, d) in c.iter().enumerate() {
            csv.row(&[num(*a), k.to_string(), num(*d)]);
        }
    }
    out.csv("decay.csv", csv)?;
    let series = curves
        .iter()
        .map(|(a, c)| Series {
            name: format!("alpha={a}"),
            points: c.iter().enumerate().map(|(k, &d)| (k as f64, d)).collect(),
        })
        .collect();
    out.plot(
        "decay.svg",
        Plot::Lines {
            axes: axes("Error decay coefficient", "k", "D_k"),
            series,
        },
    )?;
    Ok(json!({ "gamma": GAMMA, "alphas": DECAY_ALPHAS, "horizon": horizon }))
}

// ---------------------------------------------------------------- exact ChainWalk

pub const GAP_ALPHAS: [f64; 3] = [0.0, 0.4, 0.8];

#[derive(Clone, Debug)]
pub struct ExactGap {
    pub params: GviParams,
    pub numeric: QTable,
    pub limit: QTable,
}

/// Exact GVI on ChainWalk for `iters` steps from zero, next to the predicted limit.
pub fn exact_gaps(alphas: &[f64], beta: f64, iters: usize) -> Result<Vec<ExactGap>> {
    let mdp = chain_walk().exact_model(GAMMA)?;
    let opts = SolveOptions {
        max_iters: iters,
        tol: 0.0,
        snapshot_stride: None,
    };
    alphas
        .par_iter()
        .map(|&a| {
            let p = params(a, beta);
            let (numeric, _) = gvi_solve(
                &mdp,
                p,
                &QTable::zeros(mdp.n_states(), mdp.n_actions()),
                &opts,
            )?;
            Ok(ExactGap {
                params: p,
                numeric,
                limit: theorem1_limit(&mdp, p)?,
            })
        })
        .collect()
}

fn run_gap(out: &mut Outputs, iters: usize) -> Result<serde_json::Value> {
    let gaps = exact_gaps(&GAP_ALPHAS, FIXED_BETA, iters)?;
    let mut csv = Csv::new(&[
        "alpha",
        "state",
        "gap_numeric",
        "gap_limit",
        "scaled_gap_numeric",
    ]);
    let mut series = Vec::new();
    for g in &gaps {
        let n = action_gap_curve(&g.numeric)?;
        let l = action_gap_curve(&g.limit)?;
        for s in 0..n.len() {
            csv.row(&[
                num(g.params.alpha),
                s.to_string(),
                num(n[s]),
                num(l[s]),
                num((1.0 - g.params.alpha) * n[s]),
            ]);
        }
        series.push(Series {
            name: format!("alpha={} numeric", g.params.alpha),
            points: n.iter().enumerate().map(|(s, &v)| (s as f64, v)).collect(),
        });
        series.push(Series {
            name: format!("alpha={} limit", g.params.alpha),
            points: l.iter().enumerate().map(|(s, &v)| (s as f64, v)).collect(),
        });
    }
    out.csv("gaps.csv", csv)?;
    out.plot(
        "gaps.svg",
        Plot::Lines {
            axes: axes("Action gap Q(s,L) - Q(s,R)", "state", "gap"),
            series,
        },
    )?;
    Ok(
        json!({ "env": "chainwalk", "gamma": GAMMA, "beta": FIXED_BETA, "alphas": GAP_ALPHAS, "iterations": iters }),
    )
}

#[derive(Clone, Debug)]
pub struct DivergenceCheckpoint {
    pub k: usize,
    pub numeric: QTable,
    pub predicted: QTable,
}

/// Checkpoints `10, 100, …` up to `iters` (and `iters` itself).
pub fn checkpoints(iters: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = std::iter::successors(Some(10usize), |k| k.checked_mul(10))
        .take_while(|&k| k <= iters)
        .collect();
    if ks.last() != Some(&iters) && iters > 0 {
        ks.push(iters);
    }
    ks
}

/// α = 1 iterates on ChainWalk against the predicted divergent form.
pub fn divergence_run(beta: f64, ks: &[usize]) -> Result<Vec<DivergenceCheckpoint>> {
    let mdp = chain_walk().exact_model(GAMMA)?;
    let p = params(1.0, beta);
    let q_star = optimal_q(&mdp)?;
    let q0 = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut q = q0.clone();
    let mut out = Vec::new();
    let last = ks.iter().copied().max().unwrap_or(0);
    for k in 1..=last {
        q = gvi_step(&mdp, &q, p, None)?;
        if ks.contains(&k) {
            out.push(DivergenceCheckpoint {
                k,
                numeric: q.clone(),
                predicted: divergent_form_from(&q_star, p.beta, &q0, k),
            });
        }
    }
    Ok(out)
}

fn run_diverge(out: &mut Outputs, iters: usize) -> Result<serde_json::Value> {
    let ks = checkpoints(iters);
    let cps = divergence_run(FIXED_BETA, &ks)?;
    let comparison = exact_gaps(&[0.8], FIXED_BETA, iters)?;
    let mut csv = Csv::new(&["alpha", "k", "state", "action", "numeric", "predicted"]);
    for cp in &cps {
        for s in 0..cp.numeric.n_states() {
            for a in 0..cp.numeric.n_actions() {
                csv.row(&[
                    "1.0".into(),
                    cp.k.to_string(),
                    s.to_string(),
                    a.to_string(),
                    num(cp.numeric.get(s, a)),
                    num(cp.predicted.get(s, a)),
                ]);
            }
        }
    }
    for g in &comparison {
        for s in 0..g.numeric.n_states() {
            for a in 0..g.numeric.n_actions() {
                csv.row(&[
                    num(g.params.alpha),
                    iters.to_string(),
                    s.to_string(),
                    a.to_string(),
                    num(g.numeric.get(s, a)),
                    num(g.limit.get(s, a)),
                ]);
            }
        }
    }
    out.csv("q_values.csv", csv)?;
    if let Some(cp) = cps.last() {
        let series = (0..2)
            .flat_map(|a| {
                let name = if a == RIGHT { "R" } else { "L" };
                [
                    Series {
                        name: format!("Q(s,{name}) numeric"),
                        points: (0..cp.numeric.n_states())
                            .map(|s| (s as f64, cp.numeric.get(s, a)))
                            .collect(),
                    },
                    Series {
                        name: format!("Q(s,{name}) predicted"),
                        points: (0..cp.numeric.n_states())
                            .map(|s| (s as f64, cp.predicted.get(s, a)))
                            .collect(),
                    },
                ]
            })
            .collect();
        out.plot(
            "q_values.svg",
            Plot::Lines {
                axes: axes(
                    &format!("alpha = 1 after {} iterations", cp.k),
                    "state",
                    "Q",
                ),
                series,
            },
        )?;
    }
    Ok(
        json!({ "env": "chainwalk", "gamma": GAMMA, "beta": FIXED_BETA, "alpha": 1.0, "comparison_alpha": 0.8, "checkpoints": ks }),
    )
}

// ---------------------------------------------------------------- ChainWalk training

fn chain_config(p: GviParams, episodes: usize, seed: u64) -> TrainConfig {
    TrainConfig::new(p, episodes, seed)
}

pub fn perf_grid() -> Vec<GviParams> {
    let mut g = vec![params(0.0, f64::INFINITY)];
    g.extend([0.0, 0.4, 0.8, 1.0].map(|a| params(a, FIXED_BETA)));
    g
}

/// Per-run evaluation curves for one parameter setting.
pub fn perf_runs(
    p: GviParams,
    episodes: usize,
    base_seed: u64,
    runs: usize,
) -> Result<Vec<Vec<f64>>> {
    let env = chain_walk();
    seeds(base_seed, runs)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|seed| {
            Ok(train(&env, &chain_config(p, episodes, seed))?
                .eval_curve
                .iter()
                .map(|e| e.value)
                .collect())
        })
        .collect()
}

fn aggregate_curve_csv(runs: &[Vec<f64>]) -> Result<(Csv, Vec<[f64; 3]>)> {
    let n = runs.first().map_or(0, Vec::len);
    let mut csv = Csv::new(&["episode", "median", "p05", "p95"]);
    let mut out = Vec::with_capacity(n);
    let mut col = Vec::with_capacity(runs.len());
    for e in 0..n {
        col.clear();
        col.extend(runs.iter().map(|r| r[e]));
        let row = [
            Stat::Median.of(&col)?,
            Stat::P05.of(&col)?,
            Stat::P95.of(&col)?,
        ];
        csv.row(&[(e + 1).to_string(), num(row[0]), num(row[1]), num(row[2])]);
        out.push(row);
    }
    Ok((csv, out))
}

/// Greedy-optimal and uniform-random scores under the evaluation protocol.
pub fn reference_scores(env: &EnvSpec, seed: u64) -> Result<(f64, f64)> {
    let mdp = env.exact_model(GAMMA)?;
    let q_star = optimal_q(&mdp)?;
    let mut rng = SimRng::new(seed);
    let optimal = evaluate(env, &q_star, 100, 100, &mut rng)?;
    let mut act_rng = rng.split();
    let na = env.n_actions();
    let random = evaluate_policy(env, |_| act_rng.index(na), 100, 100, None, &mut rng)?;
    Ok((optimal, random))
}

fn run_perf(
    out: &mut Outputs,
    episodes: usize,
    base_seed: u64,
    runs: usize,
) -> Result<serde_json::Value> {
    let grid = perf_grid();
    let mut series = Vec::new();
    for &p in &grid {
        let curves = perf_runs(p, episodes, base_seed, runs)?;
        let name = if p == params(0.0, f64::INFINITY) {
            "avi".to_string()
        } else {
            label(p)
        };
        for (i, c) in curves.iter().enumerate() {
            let mut csv = Csv::new(&["episode", "metric"]);
            for (e, v) in c.iter().enumerate() {
                csv.row(&[(e + 1).to_string(), num(*v)]);
            }
            out.csv(&format!("perf/{name}/run_{i:03}.csv"), csv)?;
        }
        let (csv, agg) = aggregate_curve_csv(&curves)?;
        out.csv(&format!("perf/{name}_aggregate.csv"), csv)?;
        series.push(Series {
            name,
            points: agg
                .iter()
                .enumerate()
                .map(|(e, r)| ((e + 1) as f64, r[0]))
                .collect(),
        });
    }
    let (optimal, random) = reference_scores(&chain_walk(), base_seed)?;
    let mut csv = Csv::new(&["policy", "score"]);
    csv.row(&["optimal".into(), num(optimal)]);
    csv.row(&["random".into(), num(random)]);
    out.csv("perf/reference.csv", csv)?;
    out.plot(
        "perf.svg",
        Plot::Lines {
            axes: axes(
                "Median evaluation reward",
                "episode",
                "mean episodic reward",
            ),
            series,
        },
    )?;
    let cfg = chain_config(grid[0], episodes, base_seed);
    Ok(json!({
        "env": "chainwalk", "gamma": cfg.gamma, "episodes": episodes, "steps_per_episode": cfg.steps_per_episode,
        "epsilon": cfg.epsilon, "eval_episodes": cfg.eval_episodes, "eval_steps": cfg.eval_steps,
        "grid": grid.iter().copied().map(label).collect::<Vec<_>>(),
    }))
}

pub const GAPCURVE_ALPHAS: [f64; 2] = [0.8, 1.0];
pub const GAPCURVE_EPISODES: [usize; 5] = [10, 100, 500, 1000, 2500];

/// Per-run action-gap curves at the requested episodes (each run is `episodes × states`).
pub fn gapcurve_runs(
    p: GviParams,
    at: &[usize],
    base_seed: u64,
    runs: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let env = chain_walk();
    let last = at.iter().copied().max().unwrap_or(0);
    seeds(base_seed, runs)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|seed| {
            let mut cfg = chain_config(p, last, seed);
            cfg.eval_interval = 0;
            cfg.snapshot_stride = 1;
            let r = train(&env, &cfg)?;
            at.iter()
                .map(|&k| action_gap_curve(&r.q_snapshots[k].1))
                .collect()
        })
        .collect()
}

fn run_gapcurve(
    out: &mut Outputs,
    episodes: usize,
    base_seed: u64,
    runs: usize,
) -> Result<serde_json::Value> {
    let mut at: Vec<usize> = GAPCURVE_EPISODES
        .iter()
        .copied()
        .filter(|&k| k < episodes)
        .collect();
    at.push(episodes);
    let mut series = Vec::new();
    for a in GAPCURVE_ALPHAS {
        let p = params(a, FIXED_BETA);
        let name = label(p);
        let data = gapcurve_runs(p, &at, base_seed, runs)?;
        for (i, run) in data.iter().enumerate() {
            let mut csv = Csv::new(&["episode", "state", "gap"]);
            for (k, gaps) in at.iter().zip(run) {
                for (s, g) in gaps.iter().enumerate() {
                    csv.row(&[k.to_string(), s.to_string(), num(*g)]);
                }
            }
            out.csv(&format!("gapcurve/{name}/run_{i:03}.csv"), csv)?;
        }
        let mut csv = Csv::new(&["episode", "state", "median", "p05", "p95"]);
        for (j, k) in at.iter().enumerate() {
            let n_states = data[0][j].len();
            let mut med = Vec::new();
            for s in 0..n_states {
                let col: Vec<f64> = data.iter().map(|r| r[j][s]).collect();
                let m = Stat::Median.of(&col)?;
                csv.row(&[
                    k.to_string(),
                    s.to_string(),
                    num(m),
                    num(Stat::P05.of(&col)?),
                    num(Stat::P95.of(&col)?),
                ]);
                med.push((s as f64, m));
            }
            series.push(Series {
                name: format!("alpha={a} episode {k}"),
                points: med,
            });
        }
        out.csv(&format!("gapcurve/{name}_aggregate.csv"), csv)?;
    }
    out.plot(
        "gapcurve.svg",
        Plot::Lines {
            axes: axes(
                "Median action gap during training",
                "state",
                "Q(s,L) - Q(s,R)",
            ),
            series,
        },
    )?;
    Ok(
        json!({ "env": "chainwalk", "gamma": GAMMA, "beta": FIXED_BETA, "alphas": GAPCURVE_ALPHAS, "episodes": at }),
    )
}

// ---------------------------------------------------------------- LongChainWalk grid

pub fn long_grid() -> Vec<GviParams> {
    GRID_ALPHAS
        .iter()
        .flat_map(|&a| GRID_BETAS.iter().map(move |&b| params(a, b)))
        .collect()
}

fn long_config(p: GviParams, episodes: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(p, episodes, seed);
    cfg.epsilon = 0.3;
    cfg.eval_interval = 0;
    cfg
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellRuns {
    pub params: GviParams,
    /// One value per seed, in seed order.
    pub values: Vec<f64>,
}

/// Error ratio after `episodes` model-free updates versus the same number of exact GVI steps.
pub fn er_grid(
    grid: &[GviParams],
    episodes: usize,
    base_seed: u64,
    runs: usize,
) -> Result<Vec<CellRuns>> {
    let env = long_chain_walk();
    let mdp = env.exact_model(GAMMA)?;
    let opts = SolveOptions {
        max_iters: episodes,
        tol: 0.0,
        snapshot_stride: None,
    };
    let zeros = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let truths: Vec<QTable> = grid
        .par_iter()
        .map(|&p| Ok(gvi_solve(&mdp, p, &zeros, &opts)?.0))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|c| seeds(base_seed, runs).map(move |s| (c, s)))
        .collect();
    let values: Vec<f64> = jobs
        .into_par_iter()
        .map(|(c, seed)| {
            error_ratio(
                &train(&env, &long_config(grid[c], episodes, seed))?.final_q,
                &truths[c],
            )
        })
        .collect::<Result<_>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(c, &p)| CellRuns {
            params: p,
            values: values[c * runs..(c + 1) * runs].to_vec(),
        })
        .collect())
}

/// Final greedy evaluation after `episodes` of training.
pub fn heatmap_grid(
    grid: &[GviParams],
    episodes: usize,
    base_seed: u64,
    runs: usize,
) -> Result<Vec<CellRuns>> {
    let env = long_chain_walk();
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|c| seeds(base_seed, runs).map(move |s| (c, s)))
        .collect();
    let values: Vec<f64> = jobs
        .into_par_iter()
        .map(|(c, seed)| {
            let mut cfg = long_config(grid[c], episodes, seed);
            cfg.eval_interval = episodes;
            let r = train(&env, &cfg)?;
            Ok(r.eval_curve.last().map_or(f64::NAN, |e| e.value))
        })
        .collect::<Result<_>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(c, &p)| CellRuns {
            params: p,
            values: values[c * runs..(c + 1) * runs].to_vec(),
        })
        .collect())
}

fn write_cells(
    out: &mut Outputs,
    dir: &str,
    metric: &str,
    cells: &[CellRuns],
    base_seed: u64,
) -> Result<()> {
    let mut runs_csv = Csv::new(&["alpha", "beta", "seed", metric]);
    let mut agg = Csv::new(&["alpha", "beta", "mean", "median", "p05", "p95"]);
    for c in cells {
        for (seed, v) in seeds(base_seed, c.values.len()).zip(&c.values) {
            runs_csv.row(&[
                num(c.params.alpha),
                beta_key(c.params.beta),
                seed.to_string(),
                num(*v),
            ]);
        }
        let stats = [Stat::Mean, Stat::Median, Stat::P05, Stat::P95].map(|s| s.of(&c.values));
        let mut row = vec![num(c.params.alpha), beta_key(c.params.beta)];
        for s in stats {
            row.push(num(s?));
        }
        agg.row(&row);
    }
    out.csv(&format!("{dir}/runs.csv"), runs_csv)?;
    out.csv(&format!("{dir}/aggregate.csv"), agg)?;
    let values = GRID_ALPHAS
        .iter()
        .map(|&a| {
            GRID_BETAS
                .iter()
                .map(|&b| {
                    cells
                        .iter()
                        .find(|c| c.params == params(a, b))
                        .map_or(Ok(f64::NAN), |c| Stat::Mean.of(&c.values))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    out.plot(
        &format!("{dir}/heatmap.svg"),
        Plot::Heatmap {
            axes: axes(&format!("mean {metric}"), "beta", "alpha"),
            row_labels: GRID_ALPHAS.iter().map(|a| a.to_string()).collect(),
            col_labels: GRID_BETAS
                .iter()
                .map(|&b| SoftmaxTemp::new(b).unwrap().to_string())
                .collect(),
            values,
        },
    )
}

fn long_protocol(episodes: usize) -> serde_json::Value {
    let cfg = long_config(params(0.0, 1.0), episodes, 0);
    json!({
        "env": "longchain", "gamma": cfg.gamma, "episodes": episodes, "steps_per_episode": cfg.steps_per_episode,
        "epsilon": cfg.epsilon, "alphas": GRID_ALPHAS,
        "betas": GRID_BETAS.iter().map(|&b| SoftmaxTemp::new(b).unwrap().to_string()).collect::<Vec<_>>(),
    })
}

// ---------------------------------------------------------------- ToyChain

pub fn toy_algorithms() -> Vec<(&'static str, GviParams)> {
    vec![
        ("AVI", params(0.0, f64::INFINITY)),
        ("AAL", params(0.8, f64::INFINITY)),
        ("ADPP", params(1.0, FIXED_BETA)),
        ("softmax-AVI", params(0.0, FIXED_BETA)),
        ("AGVI", params(0.8, FIXED_BETA)),
    ]
}

/// Left-ratio curves of every run (`runs × updates`).
pub fn toy_runs(
    p: GviParams,
    updates: usize,
    base_seed: u64,
    runs: usize,
) -> Result<Vec<Vec<f64>>> {
    let env = toy_chain();
    seeds(base_seed, runs)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|seed| {
            let mut cfg = TrainConfig::new(p, updates, seed);
            cfg.steps_per_episode = env.default_episode_len();
            cfg.epsilon = 0.1;
            cfg.eval_interval = 0;
            Ok(train(&env, &cfg)?.left_ratio_curve.unwrap_or_default())
        })
        .collect()
}

fn run_toy(
    out: &mut Outputs,
    updates: usize,
    base_seed: u64,
    runs: usize,
) -> Result<serde_json::Value> {
    let mut summary = Csv::new(&[
        "algorithm",
        "alpha",
        "beta",
        "peak_mean",
        "peak_median",
        "final_mean",
        "final_median",
    ]);
    let mut series = Vec::new();
    for (name, p) in toy_algorithms() {
        let curves = toy_runs(p, updates, base_seed, runs)?;
        let mut csv = Csv::new(&["update", "mean", "median", "p05", "p95"]);
        let mut means = Vec::with_capacity(updates);
        let mut medians = Vec::with_capacity(updates);
        let mut col = Vec::with_capacity(runs);
        for u in 0..updates {
            col.clear();
            col.extend(curves.iter().map(|c| c[u]));
            let (mean, med) = (Stat::Mean.of(&col)?, Stat::Median.of(&col)?);
            csv.row(&[
                (u + 1).to_string(),
                num(mean),
                num(med),
                num(Stat::P05.of(&col)?),
                num(Stat::P95.of(&col)?),
            ]);
            means.push(mean);
            medians.push(med);
        }
        out.csv(&format!("toy/{name}.csv"), csv)?;
        let peak = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        summary.row(&[
            name.to_string(),
            num(p.alpha),
            beta_key(p.beta),
            num(peak(&means)),
            num(peak(&medians)),
            num(*means.last().unwrap_or(&f64::NAN)),
            num(*medians.last().unwrap_or(&f64::NAN)),
        ]);
        series.push(Series {
            name: name.to_string(),
            points: means
                .iter()
                .enumerate()
                .map(|(u, &m)| ((u + 1) as f64, m))
                .collect(),
        });
    }
    out.csv("toy/summary.csv", summary)?;
    out.plot(
        "toy.svg",
        Plot::Lines {
            axes: axes(
                "Share of greedy left actions at C",
                "update",
                "mean left ratio",
            ),
            series,
        },
    )?;
    Ok(json!({
        "env": "toy", "gamma": GAMMA, "updates": updates, "steps_per_episode": toy_chain().default_episode_len(), "epsilon": 0.1,
        "algorithms": toy_algorithms().iter().map(|(n, p)| json!({"name": n, "alpha": p.alpha, "beta": p.beta})).collect::<Vec<_>>(),
    }))
}

// ---------------------------------------------------------------- runner

/// Runs a preset into `out_dir`, writing CSVs, optional SVGs and `manifest.json`.
/// On failure every file written so far is removed.
pub fn run_preset(name: PresetName, opts: &PresetOptions, out_dir: &Path) -> Result<Manifest> {
    let runs = opts.runs.unwrap_or_else(|| name.default_runs());
    let length = opts.length.unwrap_or_else(|| name.default_length());
    if name.default_runs() > 0 && runs == 0 {
        return Err(invalid_input(format!("{name} needs at least one run")));
    }
    if length == 0 {
        return Err(invalid_input("preset length must be positive"));
    }
    let mut out = Outputs::new(out_dir, opts.svg)?;
    let seed = opts.seed;
    let result = (|| -> Result<Manifest> {
        let protocol = match name {
            PresetName::DecayFig2 => run_decay(&mut out, length)?,
            PresetName::GapFig3 => run_gap(&mut out, length)?,
            PresetName::DivergeFig4 => run_diverge(&mut out, length)?,
            PresetName::PerfFig5 => run_perf(&mut out, length, seed, runs)?,
            PresetName::GapcurveFig6q => run_gapcurve(&mut out, length, seed, runs)?,
            PresetName::ErFig6 => {
                let cells = er_grid(&long_grid(), length, seed, runs)?;
                write_cells(&mut out, "er", "er", &cells, seed)?;
                long_protocol(length)
            }
            PresetName::HeatmapFig7 => {
                let cells = heatmap_grid(&long_grid(), length, seed, runs)?;
                write_cells(&mut out, "heatmap", "final_eval", &cells, seed)?;
                let (optimal, random) = reference_scores(&long_chain_walk(), seed)?;
                let mut csv = Csv::new(&["policy", "score"]);
                csv.row(&["optimal".into(), num(optimal)]);
                csv.row(&["random".into(), num(random)]);
                out.csv("heatmap/reference.csv", csv)?;
                long_protocol(length)
            }
            PresetName::ToyFig1 => run_toy(&mut out, length, seed, runs)?,
        };
        let mut manifest = Manifest {
            preset: name.to_string(),
            base_seed: seed,
            runs,
            length,
            protocol,
            files: out.files.clone(),
        };
        manifest.files.push("manifest.json".into());
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        out.write("manifest.json", &text)?;
        Ok(manifest)
    })();
    if result.is_err() {
        out.cleanup();
    }
    result
}
