//! Command-line entry points: dataset generation, training, evaluation,
//! ground truth, rendering, chain analysis, and the experiment sweep.
//!
//! Every command is reproducible: identical flags and seeds produce
//! byte-identical output files. Defaults follow the reference setup
//! (400x300 maps, γ=0.99, reward +30 in radius-10 zones, 360 actions of
//! step 20, 100 trajectories of ≤2000 steps, Adam 1e-3 with minibatch
//! 32, 40000 embedding + 40000 value steps, 1000 rollouts per
//! ground-truth cell).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::chain::{
    analytic_td_solution, characteristic_roots, dirichlet_norm_sq, mixed_loss,
    mixed_loss_gradient, mu_norm_sq, stationary_distribution, td_fixed_point_numeric, ChainModel,
    ProjectionSpec,
};
use crate::envsim::{builtin_map, dataset_hash, generate_dataset, MapId, MapLayout, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::eval::{
    default_leakage_region, error_grid, ground_truth, leakage_score, msve, render_grid,
    value_grid_from_fn, EvalReport, ValueGrid, Weighting,
};
use crate::learners::{
    build_model, train_value_stage, EmbeddingMode, ExperimentConfig, Method,
};
use crate::net::{AdamHyper, TwoStageModel};

#[derive(Debug, Parser)]
#[command(
    name = "tdlab",
    version,
    about = "Offline policy-evaluation lab: labyrinth experiments and exact chain analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a random-policy trajectory dataset.
    GenData(GenDataArgs),
    /// Train a value model (optionally on a learned/frozen embedding).
    Train(TrainArgs),
    /// Evaluate a trained model against a ground-truth grid.
    Eval(EvalArgs),
    /// Monte-Carlo ground-truth value grid for a map.
    GroundTruth(GroundTruthArgs),
    /// Render a value grid as a PGM heatmap (+ range sidecar + CSV).
    Render(RenderArgs),
    /// Closed-form and numeric analysis of the 1-D chain TD fixed point.
    ChainAnalyze(ChainAnalyzeArgs),
    /// Run the (method x embedding x max-len x seed) grid and aggregate MSVE.
    Sweep(SweepArgs),
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    match s {
        "mc" => Ok(Method::Mc),
        "td" => Ok(Method::Td),
        other => Err(format!("unknown method `{other}` (expected mc or td)")),
    }
}

fn parse_embedding(s: &str) -> std::result::Result<EmbeddingMode, String> {
    match s {
        "none" => Ok(EmbeddingMode::None),
        "oracle" => Ok(EmbeddingMode::Oracle),
        "timeprox" => Ok(EmbeddingMode::Timeprox),
        "sf" => Ok(EmbeddingMode::Sf),
        other => Err(format!(
            "unknown embedding `{other}` (expected none, oracle, timeprox or sf)"
        )),
    }
}

/// `map1|map2|map3`, or a path to a map layout JSON file.
fn resolve_layout(map: &str) -> Result<MapLayout> {
    match map.parse::<MapId>() {
        Ok(id) => Ok(builtin_map(id)),
        Err(_) if Path::new(map).exists() => MapLayout::load(Path::new(map)),
        Err(e) => Err(e),
    }
}

fn builtin_layout_for(map_id: &str) -> Result<MapLayout> {
    Ok(builtin_map(map_id.parse::<MapId>()?))
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Map id (map1|map2|map3) or path to a map layout JSON file.
    #[arg(long)]
    pub map: String,
    /// Number of training trajectories.
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Trajectory max length.
    #[arg(long, default_value_t = 2000)]
    pub max_len: usize,
    /// Environment discount factor.
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset file (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// mc or td.
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// none, oracle, timeprox or sf.
    #[arg(long, value_parser = parse_embedding, default_value = "none")]
    pub embedding: EmbeddingMode,
    /// Oracle separation degree in [0, 1] (oracle embedding only).
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Input dataset file from gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Value training steps.
    #[arg(long, default_value_t = 40000)]
    pub steps: usize,
    /// Embedding training steps (timeprox/sf only).
    #[arg(long, default_value_t = 40000)]
    pub embed_steps: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Adam beta1.
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    /// Adam beta2.
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    /// Adam epsilon.
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Output directory (model.json, loss.csv, config.json).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Ground-truth grid CSV.
    #[arg(long)]
    pub truth: PathBuf,
    /// Dataset file (for visitation-weighted MSVE).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (report.csv, pred_grid.csv, error_grid.csv).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GroundTruthArgs {
    /// Map id (map1|map2|map3) or path to a map layout JSON file.
    #[arg(long)]
    pub map: String,
    /// Rollouts per grid cell.
    #[arg(long, default_value_t = 1000)]
    pub rollouts: usize,
    /// Grid cell size in map units.
    #[arg(long, default_value_t = 10.0)]
    pub cell_size: f64,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output grid CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Input grid CSV.
    #[arg(long)]
    pub grid: PathBuf,
    /// Output base path (writes <out>.pgm, <out>.range.txt, <out>.csv).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ChainAnalyzeArgs {
    /// Forward transition probability, in (0, 0.5).
    #[arg(long, default_value_t = 0.25)]
    pub p: f64,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    /// Constrained value at state 0.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Truncation length.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Convergence tolerance for the numeric fixed point.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Output directory (chain.csv, report.txt).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Map id (map1|map2|map3).
    #[arg(long)]
    pub map: String,
    /// Comma-separated methods (mc,td).
    #[arg(long, default_value = "mc,td")]
    pub methods: String,
    /// Comma-separated embeddings (none,oracle,timeprox,sf).
    #[arg(long, default_value = "none,timeprox,sf")]
    pub embeddings: String,
    /// Comma-separated trajectory length caps.
    #[arg(long, default_value = "250,500,1000,2000")]
    pub max_lens: String,
    /// Number of seeds (0..n-1).
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    /// Value training steps per run.
    #[arg(long, default_value_t = 40000)]
    pub steps: usize,
    /// Embedding training steps per run.
    #[arg(long, default_value_t = 40000)]
    pub embed_steps: usize,
    /// Rollouts per ground-truth cell.
    #[arg(long, default_value_t = 1000)]
    pub gt_rollouts: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData(a) => cmd_gen_data(&a),
        Cmd::Train(a) => cmd_train(&a),
        Cmd::Eval(a) => cmd_eval(&a),
        Cmd::GroundTruth(a) => cmd_ground_truth(&a),
        Cmd::Render(a) => cmd_render(&a),
        Cmd::ChainAnalyze(a) => cmd_chain_analyze(&a),
        Cmd::Sweep(a) => cmd_sweep(&a),
    }
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let layout = resolve_layout(&a.map)?;
    let ds = generate_dataset(&layout, a.episodes, a.max_len, a.gamma, a.seed)?;
    ds.save(&a.out)?;
    let terminated = ds.episodes.iter().filter(|e| e.terminated).count();
    println!(
        "wrote {}: {} episodes on {}, {} transitions, terminal fraction {:.3}",
        a.out.display(),
        ds.n_episodes,
        ds.map_id,
        ds.n_transitions(),
        terminated as f64 / ds.n_episodes as f64
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSnapshot<'a> {
    map_id: &'a str,
    method: &'a str,
    embedding: &'a str,
    oracle_alpha: f64,
    seed: u64,
    value_steps: usize,
    embed_steps: usize,
    minibatch: usize,
    adam: AdamHyper,
    gamma: f64,
    data: String,
    dataset_hash: String,
}

fn write_loss_csv(path: &Path, header: &str, curve: &[f64]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# {header}");
    out.push_str("step,loss\n");
    for (i, l) in curve.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let ds = TrajectoryDataset::load(&a.data)?;
    let layout = builtin_layout_for(&ds.map_id)?;
    if a.embedding == EmbeddingMode::Oracle && ds.map_id != "map1" {
        return Err(Error::InvalidParameter(format!(
            "the oracle embedding requires map1 data, dataset is for {}",
            ds.map_id
        )));
    }
    let mut cfg = ExperimentConfig {
        gamma: ds.gamma,
        value_steps: a.steps,
        embed_steps: a.embed_steps,
        minibatch: a.batch,
        adam: AdamHyper {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        },
        oracle_alpha: a.alpha,
        ..ExperimentConfig::default()
    };
    cfg.n_episodes = ds.n_episodes;

    std::fs::create_dir_all(&a.out)?;
    let hash = dataset_hash(&ds);
    let snapshot = TrainSnapshot {
        map_id: &ds.map_id,
        method: a.method.tag(),
        embedding: a.embedding.tag(),
        oracle_alpha: a.alpha,
        seed: a.seed,
        value_steps: a.steps,
        embed_steps: a.embed_steps,
        minibatch: a.batch,
        adam: cfg.adam,
        gamma: ds.gamma,
        data: a.data.display().to_string(),
        dataset_hash: format!("{hash:016x}"),
    };
    std::fs::write(
        a.out.join("config.json"),
        serde_json::to_string_pretty(&snapshot)?,
    )?;

    let (mut model, embed_loss) = build_model(&layout, &ds, a.embedding, a.seed, &cfg)?;
    if let Some(curve) = &embed_loss {
        write_loss_csv(
            &a.out.join("embed_loss.csv"),
            &format!(
                "stage=embedding mode={} seed={} dataset_hash={hash:016x}",
                a.embedding.tag(),
                a.seed
            ),
            curve,
        )?;
    }
    let result = train_value_stage(&ds, &mut model, a.method, a.seed, &cfg)?;
    write_loss_csv(
        &a.out.join("loss.csv"),
        &format!(
            "stage=value method={} embedding={} seed={} dataset_hash={hash:016x}",
            a.method.tag(),
            a.embedding.tag(),
            a.seed
        ),
        &result.loss_curve,
    )?;
    model.save(&a.out.join("model.json"))?;
    println!(
        "trained {} ({} embedding) on {}: final loss {:.6}, model at {}",
        a.method.tag(),
        a.embedding.tag(),
        ds.map_id,
        result.loss_curve.last().copied().unwrap_or(f64::NAN),
        a.out.join("model.json").display()
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = TwoStageModel::load(&a.model)?;
    let truth = ValueGrid::load_csv(&a.truth)?;
    let ds = TrajectoryDataset::load(&a.data)?;
    if model.map_id != truth.map_id || model.map_id != ds.map_id {
        return Err(Error::GridMismatch(format!(
            "map ids disagree: model={}, truth={}, data={}",
            model.map_id, truth.map_id, ds.map_id
        )));
    }
    let layout = builtin_layout_for(&model.map_id)?;
    let pred = value_grid_from_fn(&layout, truth.cell_size, |p| model.predict(p))?;
    let err = error_grid(&pred, &truth)?;
    let region = default_leakage_region(&model.map_id)?;
    let report = EvalReport {
        map_id: model.map_id.clone(),
        method: String::new(),
        embedding: model.kind.tag().to_string(),
        seed: 0,
        dataset_hash: dataset_hash(&ds),
        msve_uniform: msve(&pred, &truth, Weighting::Uniform)?,
        msve_mu: msve(&pred, &truth, Weighting::Visitation(&ds))?,
        leakage_score: leakage_score(&err, region)?,
        leakage_region: region,
    };
    std::fs::create_dir_all(&a.out)?;
    report.save_csv(&a.out.join("report.csv"))?;
    pred.save_csv(&a.out.join("pred_grid.csv"))?;
    err.save_csv(&a.out.join("error_grid.csv"))?;
    println!(
        "msve_uniform={:.6} msve_mu={:.6} leakage={:.6}",
        report.msve_uniform, report.msve_mu, report.leakage_score
    );
    Ok(())
}

pub fn cmd_ground_truth(a: &GroundTruthArgs) -> Result<()> {
    let layout = resolve_layout(&a.map)?;
    let grid = ground_truth(
        &layout, a.gamma, a.cell_size, a.rollouts, a.max_len, a.seed,
    )?;
    grid.save_csv(&a.out)?;
    let free = grid.free_cells().count();
    println!(
        "wrote {}: {}x{} grid, {} free cells, {} rollouts/cell",
        a.out.display(),
        grid.n_cols,
        grid.n_rows,
        free,
        a.rollouts
    );
    Ok(())
}

pub fn cmd_render(a: &RenderArgs) -> Result<()> {
    let grid = ValueGrid::load_csv(&a.grid)?;
    render_grid(&grid, &a.out)?;
    println!(
        "wrote {}.pgm, {}.range.txt, {}.csv",
        a.out.display(),
        a.out.display(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_chain_analyze(a: &ChainAnalyzeArgs) -> Result<()> {
    let model = ChainModel::new(a.p, a.gamma, a.alpha, a.n)?;
    std::fs::create_dir_all(&a.out)?;
    let mu = stationary_distribution(&model);
    let roots = characteristic_roots(&model);
    let analytic = analytic_td_solution(&model);
    let numeric = td_fixed_point_numeric(&model, a.tol, 10_000_000)?;

    let mut csv = String::from("s,mu,v_analytic,v_numeric\n");
    for s in 0..model.n_states {
        let _ = writeln!(
            csv,
            "{s},{},{},{}",
            mu.probs[s], analytic[s], numeric.values[s]
        );
    }
    std::fs::write(a.out.join("chain.csv"), csv)?;

    let spec = ProjectionSpec::for_model(&model);
    let v_star = vec![0.0; model.n_states];
    let fixed_point_report = crate::chain::tsitsiklis_check(&model, &analytic, &v_star, &spec);
    let mut sharp = vec![0.0; model.n_states];
    sharp[0] = model.alpha;
    let counterexample = crate::chain::tsitsiklis_check(&model, &sharp, &v_star, &spec);
    let grad = mixed_loss_gradient(&model, &analytic);
    let grad_max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let max_dev = analytic
        .iter()
        .zip(&numeric.values)
        .zip(&mu.probs)
        .filter(|(_, &m)| m > 1e-12)
        .map(|((a, b), _)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut report = String::new();
    let _ = writeln!(report, "p = {}", model.p);
    let _ = writeln!(report, "gamma = {}", model.gamma);
    let _ = writeln!(report, "alpha = {}", model.alpha);
    let _ = writeln!(report, "n_states = {}", model.n_states);
    let _ = writeln!(report, "r1 = {}", roots.r1);
    let _ = writeln!(report, "r2 = {}", roots.r2);
    let _ = writeln!(report, "r1*r2 = {}", roots.r1 * roots.r2);
    let _ = writeln!(report, "q/p = {}", model.q() / model.p);
    let _ = writeln!(report, "stationary_tail_mass = {:e}", mu.tail_mass);
    let _ = writeln!(report, "fixed_point_sweeps = {}", numeric.sweeps);
    let _ = writeln!(report, "max_analytic_numeric_dev = {:e}", max_dev);
    let _ = writeln!(
        report,
        "dirichlet_norm_sq_at_solution = {}",
        dirichlet_norm_sq(&model, &analytic)
    );
    let _ = writeln!(
        report,
        "mu_norm_sq_at_solution = {}",
        mu_norm_sq(&model, &analytic)
    );
    let _ = writeln!(
        report,
        "mixed_loss_at_solution = {}",
        mixed_loss(&model, &analytic)
    );
    let _ = writeln!(report, "mixed_loss_grad_max = {:e}", grad_max);
    let _ = writeln!(report, "err_mu = {}", fixed_point_report.err_mu);
    let _ = writeln!(
        report,
        "projection_err_mu = {}",
        fixed_point_report.projection_err_mu
    );
    let _ = writeln!(report, "bound_loose_rhs = {}", fixed_point_report.loose_rhs);
    let _ = writeln!(report, "bound_sharp_rhs = {}", fixed_point_report.sharp_rhs);
    let _ = writeln!(report, "bound_loose_holds = {}", fixed_point_report.loose_holds);
    let _ = writeln!(report, "bound_sharp_holds = {}", fixed_point_report.sharp_holds);
    let _ = writeln!(
        report,
        "no_leakage_counterexample_ratio = {}",
        counterexample.ratio
    );
    std::fs::write(a.out.join("report.txt"), &report)?;
    println!(
        "r1={:.6} r2={:.6} max_dev={:.3e} bounds: loose={} sharp={} (report at {})",
        roots.r1,
        roots.r2,
        max_dev,
        fixed_point_report.loose_holds,
        fixed_point_report.sharp_holds,
        a.out.join("report.txt").display()
    );
    Ok(())
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|part| {
            part.trim().parse::<T>().map_err(|e| Error::Parse {
                what: what.to_string(),
                detail: format!("`{part}`: {e}"),
            })
        })
        .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let map_id: MapId = a.map.parse()?;
    let methods: Vec<Method> = a
        .methods
        .split(',')
        .map(|m| parse_method(m.trim()).map_err(|e| Error::InvalidParameter(e)))
        .collect::<Result<_>>()?;
    let embeddings: Vec<EmbeddingMode> = a
        .embeddings
        .split(',')
        .map(|m| parse_embedding(m.trim()).map_err(|e| Error::InvalidParameter(e)))
        .collect::<Result<_>>()?;
    let max_lens: Vec<usize> = parse_list("max_lens", &a.max_lens)?;
    if embeddings.contains(&EmbeddingMode::Oracle) && map_id != MapId::Map1 {
        return Err(Error::InvalidParameter(
            "the oracle embedding requires map1".into(),
        ));
    }
    std::fs::create_dir_all(&a.out)?;

    let base = ExperimentConfig {
        n_episodes: a.episodes,
        gamma: a.gamma,
        value_steps: a.steps,
        embed_steps: a.embed_steps,
        gt_rollouts: a.gt_rollouts,
        ..ExperimentConfig::default()
    };
    // One ground truth per map, shared by every run.
    let layout = builtin_map(map_id);
    let truth = ground_truth(
        &layout,
        base.gamma,
        base.cell_size,
        base.gt_rollouts,
        base.max_len,
        base.gt_seed,
    )?;
    truth.save_csv(&a.out.join("ground_truth.csv"))?;

    let mut summary = String::from(
        "method,embedding,max_len,seeds,median_msve,q1_msve,q3_msve,median_leakage\n",
    );
    for &max_len in &max_lens {
        for &method in &methods {
            for &mode in &embeddings {
                let mut msves = Vec::new();
                let mut leakages = Vec::new();
                for seed in 0..a.seeds {
                    let cfg = ExperimentConfig {
                        max_len,
                        ..base.clone()
                    };
                    let outcome = crate::learners::leakage_experiment(
                        map_id,
                        method,
                        mode,
                        seed,
                        &cfg,
                        Some(&truth),
                    )?;
                    let run_dir = a.out.join(format!(
                        "runs/{}_{}_len{}_seed{}",
                        method.tag(),
                        mode.tag(),
                        max_len,
                        seed
                    ));
                    std::fs::create_dir_all(&run_dir)?;
                    outcome.report.save_csv(&run_dir.join("report.csv"))?;
                    outcome.model.save(&run_dir.join("model.json"))?;
                    msves.push(outcome.report.msve_uniform);
                    leakages.push(outcome.report.leakage_score);
                    println!(
                        "{} {} len={} seed={}: msve={:.4} leakage={:.4}",
                        method.tag(),
                        mode.tag(),
                        max_len,
                        seed,
                        outcome.report.msve_uniform,
                        outcome.report.leakage_score
                    );
                }
                msves.sort_by(|x, y| x.partial_cmp(y).unwrap());
                leakages.sort_by(|x, y| x.partial_cmp(y).unwrap());
                let _ = writeln!(
                    summary,
                    "{},{},{},{},{},{},{},{}",
                    method.tag(),
                    mode.tag(),
                    max_len,
                    a.seeds,
                    quantile(&msves, 0.5),
                    quantile(&msves, 0.25),
                    quantile(&msves, 0.75),
                    quantile(&leakages, 0.5)
                );
            }
        }
    }
    std::fs::write(a.out.join("summary.csv"), summary)?;
    println!("sweep summary at {}", a.out.join("summary.csv").display());
    Ok(())
}
