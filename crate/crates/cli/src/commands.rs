use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use stylebc::dataset::{load_dataset, save_dataset};
use stylebc::evaluation::{
    control_report, density, evaluate, generate, with_union_support, EvalReport, MetricRegistry,
    StyleSource,
};
use stylebc::experts::{generate_dataset_with, DatasetRecipe};
use stylebc::maze::{load_maze, EnvConfig, MazeEnv, MazeSpec};
use stylebc::neural::{load_checkpoint, save_checkpoint, ArchConfig, Checkpoint};
use stylebc::similarity::{dissimilarity_matrix_with, DissimilarityMatrix};
use stylebc::training::{train, Algorithm};
use stylebc::{BehaviorHistogram, Dataset, Exec, Trajectory};

use crate::config::RunConfig;
use crate::{
    Cli, Command, ConfigArg, ControlArgs, DensityArgs, DissimArgs, EvalArgs, GenDataArgs,
    RolloutOpts, ServeArgs, TrainArgs, UsageError, ValidateMazeArgs,
};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const NU_FILE: &str = "nu.bin";
pub const NU_CSV: &str = "nu.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

pub fn dispatch(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::GenData(a) => gen_data(a, exec),
        Command::Dissim(a) => dissim(a, exec),
        Command::Train(a) => train_cmd(a, exec),
        Command::Eval(a) => eval_cmd(a, exec),
        Command::Control(a) => control_cmd(a, exec),
        Command::Density(a) => density_cmd(a, exec),
        Command::ValidateMaze(a) => validate_maze(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

/// A bundled maze by name, otherwise an ASCII maze file.
pub fn resolve_maze(name_or_path: &str) -> Result<MazeSpec> {
    if let Some(m) = MazeSpec::builtin(name_or_path) {
        return Ok(m);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        bail!(UsageError(format!(
            "unknown maze {name_or_path:?}: not a bundled maze and no such file"
        )));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name_or_path.to_owned());
    Ok(load_maze(&name, &text)?)
}

pub fn resolve_recipe(name_or_path: &str) -> Result<DatasetRecipe> {
    if let Some(r) = DatasetRecipe::builtin(name_or_path) {
        return Ok(r);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        // `one_side.json` names the bundled recipe too.
        if let Some(r) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(DatasetRecipe::builtin)
        {
            return Ok(r);
        }
        bail!(UsageError(format!("unknown recipe {name_or_path:?}")));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing recipe {}", path.display()))
}

fn preset(name: &str) -> EnvConfig {
    EnvConfig::preset(name).expect("preset names are checked by the parser")
}

fn base_config(c: &ConfigArg) -> Result<RunConfig> {
    match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| UsageError(format!("{e:#}")).into()),
        None => Ok(RunConfig::default()),
    }
}

fn checked(cfg: RunConfig) -> Result<RunConfig> {
    let v = cfg.violations();
    if v.is_empty() {
        return Ok(cfg);
    }
    let list: Vec<String> = v.iter().map(|m| format!("  - {m}")).collect();
    bail!(UsageError(format!("invalid configuration:\n{}", list.join("\n"))))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_ds(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn load_nu(path: &Path) -> Result<DissimilarityMatrix> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    DissimilarityMatrix::read_from(std::io::BufReader::new(f))
        .with_context(|| format!("reading {}", path.display()))
}

fn nu_for(ds: &Dataset, path: Option<&PathBuf>, exec: Exec) -> Result<DissimilarityMatrix> {
    let nu = match path {
        Some(p) => load_nu(p)?,
        None => dissimilarity_matrix_with(ds, exec)?,
    };
    if nu.len() != ds.len() {
        bail!("dissimilarity matrix has {} rows, dataset has {}", nu.len(), ds.len());
    }
    Ok(nu)
}

fn load_model(path: &Path, ds: &Dataset) -> Result<Checkpoint> {
    let ck = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if ck.codebook.rows() != ds.len() {
        bail!(
            "checkpoint codebook has {} rows but the dataset has {} trajectories",
            ck.codebook.rows(),
            ds.len()
        );
    }
    Ok(ck)
}

fn gen_data(a: GenDataArgs, exec: Exec) -> Result<()> {
    let cfg = checked(base_config(&a.config)?)?;
    let mut recipe = resolve_recipe(&a.recipe)?;
    if let Some(seed) = a.seed {
        recipe.seed = seed;
    }
    // Flag, then an explicit config file, then the recipe's own maze.
    let maze_name = match (&a.maze, &a.config.config) {
        (Some(m), _) => m.clone(),
        (None, Some(_)) => cfg.maze.clone(),
        (None, None) => recipe.maze_name.clone(),
    };
    let maze = resolve_maze(&maze_name)?;
    let ds = generate_dataset_with(&maze, &recipe, exec)?;
    out_dir(&a.out)?;
    let path = a.out.join(DATASET_FILE);
    save_dataset(&ds, &path)?;
    let hist = ds.histogram()?;
    println!(
        "wrote {} trajectories ({} behaviors) to {}",
        ds.len(),
        hist.bins.len(),
        path.display()
    );
    Ok(())
}

fn dissim(a: DissimArgs, exec: Exec) -> Result<()> {
    let ds = load_ds(&a.dataset)?;
    let nu = dissimilarity_matrix_with(&ds, exec)?;
    out_dir(&a.out)?;
    let bin = a.out.join(NU_FILE);
    nu.write_to(BufWriter::new(fs::File::create(&bin)?))?;
    nu.write_csv(BufWriter::new(fs::File::create(a.out.join(NU_CSV))?))?;
    println!("wrote {n}x{n} dissimilarity matrix to {}", bin.display(), n = nu.len());
    Ok(())
}

fn train_cmd(a: TrainArgs, exec: Exec) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    if let Some(v) = a.algo {
        cfg.train.algorithm = v;
    }
    if let Some(v) = a.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = a.beta {
        cfg.train.beta = v;
    }
    if let Some(v) = a.relabel_p {
        cfg.train.relabel_prob = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.log_every {
        cfg.train.log_every = v;
    }
    if let Some(v) = a.maze {
        cfg.maze = v;
    }
    let cfg = checked(cfg)?;
    let maze = resolve_maze(&cfg.maze)?;
    let ds = load_ds(&a.dataset)?;
    let nu = match cfg.train.algorithm {
        Algorithm::Wzbc => Some(nu_for(&ds, a.nu.as_ref(), exec)?),
        _ => None,
    };
    let arch = cfg.arch.clone().unwrap_or_else(|| ArchConfig::for_maze(&maze));
    let (ck, mut report) = train(&ds, nu.as_ref(), arch, &cfg.train)?;
    out_dir(&a.out)?;
    save_checkpoint(&a.out.join(CHECKPOINT_FILE), &ck)?;
    report.checkpoint = Some(CHECKPOINT_FILE.into());
    write_json(&a.out.join("report.json"), &report)?;
    fs::write(a.out.join("loss.csv"), report.loss_csv())?;
    println!(
        "{} trained for {} steps in {:.1}s, final loss {:.4}",
        cfg.train.algorithm,
        cfg.train.steps,
        report.wall_clock_secs,
        report.final_loss().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn apply_rollout_opts(cfg: &mut RunConfig, r: &RolloutOpts) {
    if let Some(env) = &r.env {
        cfg.eval.env = preset(env);
    }
    if r.sample {
        cfg.eval.greedy = false;
    }
    if let Some(n) = r.rollouts {
        cfg.eval.n_rollouts = n as usize;
    }
}

#[derive(Serialize)]
struct SeedMetrics {
    seed: u64,
    l1: f64,
    success_rate: f64,
}

#[derive(Serialize)]
struct Metrics<'a> {
    algorithm: Option<&'a serde_json::Value>,
    env: &'a EnvConfig,
    n_rollouts: usize,
    greedy: bool,
    l1: f64,
    l1_std: f64,
    success_rate: f64,
    success_rate_std: f64,
    per_seed: Vec<SeedMetrics>,
}

#[derive(Serialize)]
struct SeedHistogram {
    seed: u64,
    generated: BehaviorHistogram,
}

#[derive(Serialize)]
struct Histograms {
    reference: BehaviorHistogram,
    per_seed: Vec<SeedHistogram>,
}

fn histograms(report: &EvalReport) -> Histograms {
    let mut all = vec![&report.reference];
    all.extend(report.per_seed.iter().map(|s| &s.histogram));
    let mut padded = with_union_support(&all).into_iter();
    let reference = padded.next().expect("reference is first");
    Histograms {
        reference,
        per_seed: report
            .per_seed
            .iter()
            .zip(padded)
            .map(|(s, generated)| SeedHistogram {
                seed: s.seed,
                generated,
            })
            .collect(),
    }
}

/// Generated trajectories as a dataset, so the density estimator applies.
fn as_dataset(trajs: Vec<Trajectory>, maze: &MazeSpec) -> Result<Dataset> {
    let trajectories = trajs
        .into_iter()
        .enumerate()
        .map(|(i, mut t)| {
            t.id = i;
            t
        })
        .collect();
    Ok(Dataset::new(
        trajectories,
        stylebc::DatasetMeta {
            maze_name: maze.name.clone(),
            generator: "rollout".into(),
            ground_truth_k: None,
            seed: 0,
        },
    )?)
}

fn eval_cmd(a: EvalArgs, exec: Exec) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    apply_rollout_opts(&mut cfg, &a.rollout);
    if let Some(s) = &a.seeds {
        cfg.eval.seeds = s.clone();
    }
    if let Some(r) = a.resolution {
        cfg.density.resolution = r;
    }
    if let Some(m) = a.maze {
        cfg.maze = m;
    }
    let cfg = checked(cfg)?;
    let maze = resolve_maze(&cfg.maze)?;
    let ds = load_ds(&a.dataset)?;
    let ck = load_model(&a.checkpoint, &ds)?;
    let env = MazeEnv::new(maze.clone(), cfg.eval.env.clone())?;
    let report = evaluate(&ck.policy, &ck.codebook, &ds, &env, &cfg.eval, exec)?;

    out_dir(&a.out)?;
    let metrics = Metrics {
        algorithm: ck.meta.get("algorithm"),
        env: &cfg.eval.env,
        n_rollouts: cfg.eval.n_rollouts,
        greedy: cfg.eval.greedy,
        l1: report.l1_mean,
        l1_std: report.l1_std,
        success_rate: report.success_mean,
        success_rate_std: report.success_std,
        per_seed: report
            .per_seed
            .iter()
            .map(|s| SeedMetrics {
                seed: s.seed,
                l1: s.l1,
                success_rate: s.success_rate,
            })
            .collect(),
    };
    write_json(&a.out.join("metrics.json"), &metrics)?;
    write_json(&a.out.join("histograms.json"), &histograms(&report))?;

    // Visitation density of the first seed's rollouts.
    let g = generate(
        &ck.policy,
        &ck.codebook,
        &env,
        &StyleSource::uniform(ck.codebook.rows()),
        cfg.eval.n_rollouts,
        cfg.eval.greedy,
        cfg.eval.seeds[0],
        exec,
    )?;
    let gen_ds = as_dataset(g.trajectories, &maze)?;
    let grid = density(
        &gen_ds,
        &DissimilarityMatrix::indicator(gen_ds.len()),
        0.0,
        0,
        cfg.density.resolution,
        (maze.width as f64, maze.height as f64),
    )?;
    fs::write(a.out.join("density.csv"), grid.to_csv())?;

    println!(
        "l1 {:.3} ± {:.3}, success {:.3} ± {:.3} over {} seeds",
        report.l1_mean,
        report.l1_std,
        report.success_mean,
        report.success_std,
        report.per_seed.len()
    );
    Ok(())
}

fn control_cmd(a: ControlArgs, exec: Exec) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    apply_rollout_opts(&mut cfg, &a.rollout);
    if let Some(v) = a.metric {
        cfg.control.metric = v;
    }
    if let Some(v) = a.min {
        cfg.control.min = v;
    }
    if let Some(v) = a.max {
        cfg.control.max = v;
    }
    if let Some(v) = a.seed {
        cfg.control.seed = v;
    }
    if let Some(m) = a.maze {
        cfg.maze = m;
    }
    let cfg = checked(cfg)?;
    let maze = resolve_maze(&cfg.maze)?;
    let ds = load_ds(&a.dataset)?;
    let ck = load_model(&a.checkpoint, &ds)?;
    let env = MazeEnv::new(maze, cfg.eval.env.clone())?;
    let report = control_report(
        &ck.policy,
        &ck.codebook,
        &ds,
        &cfg.control.property(),
        &MetricRegistry::default(),
        &env,
        cfg.eval.n_rollouts,
        cfg.eval.greedy,
        cfg.control.seed,
        exec,
    )?;
    out_dir(&a.out)?;
    write_json(&a.out.join("control.json"), &report)?;
    println!(
        "{} rows selected; free l1 {:.3}, controlled l1 {:.3}",
        report.selected_rows.len(),
        report.free_l1,
        report.controlled_l1
    );
    Ok(())
}

fn density_cmd(a: DensityArgs, exec: Exec) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    if let Some(v) = a.beta {
        cfg.density.beta = v;
    }
    if let Some(v) = a.reference {
        cfg.density.reference = v;
    }
    if let Some(v) = a.resolution {
        cfg.density.resolution = v;
    }
    if let Some(m) = a.maze {
        cfg.maze = m;
    }
    let cfg = checked(cfg)?;
    let maze = resolve_maze(&cfg.maze)?;
    let ds = load_ds(&a.dataset)?;
    if cfg.density.reference >= ds.len() {
        bail!(UsageError(format!(
            "--ref {} out of range for {} trajectories",
            cfg.density.reference,
            ds.len()
        )));
    }
    let nu = nu_for(&ds, a.nu.as_ref(), exec)?;
    let grid = density(
        &ds,
        &nu,
        cfg.density.beta,
        cfg.density.reference,
        cfg.density.resolution,
        (maze.width as f64, maze.height as f64),
    )?;
    out_dir(&a.out)?;
    fs::write(a.out.join("density.csv"), grid.to_csv())?;
    write_json(&a.out.join("density.json"), &grid)?;
    println!("{} cells, total mass {:.6}", grid.cells.len(), grid.total());
    Ok(())
}

fn validate_maze(a: ValidateMazeArgs) -> Result<()> {
    let maze = resolve_maze(&a.maze)?;
    print!("{maze}");
    println!(
        "ok: {}x{}, {} doors, goal at {:?}, start at {:?}",
        maze.width,
        maze.height,
        maze.doors.keys().filter(|&&d| d != 0).count(),
        maze.goal,
        maze.default_start
    );
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    if let Some(m) = a.maze {
        cfg.maze = m;
    }
    if let Some(h) = a.host {
        cfg.serve.host = h;
    }
    if let Some(p) = a.port {
        cfg.serve.port = p;
    }
    if let Some(e) = &a.env {
        cfg.serve.env = preset(e);
    }
    let cfg = checked(cfg)?;
    let maze = resolve_maze(&cfg.maze)?;
    let dataset = a.dataset.as_deref().map(load_ds).transpose()?;
    let model = match (&a.checkpoint, &dataset) {
        (Some(p), Some(ds)) => Some(load_model(p, ds)?),
        (Some(p), None) => Some(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?),
        (None, _) => None,
    };
    let state = crate::server::AppState::new(
        maze,
        cfg.serve.env.clone(),
        model,
        dataset,
        a.record,
    )?;
    let app = crate::server::router(state, a.static_dir.as_deref());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr = format!("{}:{}", cfg.serve.host, cfg.serve.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}
