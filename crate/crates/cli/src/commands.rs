use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gta_core::bench::{
    emit_report, failure_recovery, model_hash, run_suite_with_traces, BenchError, Modality, PriorSource, ReportFormat,
    ShiftCategory, SuiteConfig,
};
use gta_core::datagen::{
    build_dataset, dataset_stats, record_expert, write_samples_jsonl, write_stats_csv, DatagenError, RecipeConfig,
    TrajectoryRecord,
};
use gta_core::demos::{collect_demos, DemoConfig, MemoryExpert, PolicyError, PolicyRecipe};
use gta_core::flow::{load_model, save_model, train, write_loss_csv, FlowError, FlowSample};
use gta_core::guide::{GuidanceEvent, GuidanceSource, SpatialPrior};
use gta_core::reasoner::{Ablation, OracleReasoner};
use gta_core::runtime::{run_episode, ActionSource, ClockMode, FlowPolicy, RuntimeConfig, RuntimeError, ScriptedGuidance};
use gta_core::sim::{mix_seed, PerturbationConfig, ScenarioRegistry};
use gta_gateway::{Gateway, GatewayConfig};
use thiserror::Error;

use crate::{BenchArgs, Clock, CollectArgs, DatagenArgs, EpisodeArgs, PolicyArgs, Recipe, ServeArgs, TrainArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {source}")]
    Line {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

type Result<T> = std::result::Result<T, CliError>;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::File {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| CliError::Toml {
        path: path.to_path_buf(),
        source,
    })
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CliError::Line {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads the action source and a hash identifying it in reports.
fn policy(args: &PolicyArgs) -> Result<(Arc<dyn ActionSource>, String)> {
    match &args.model {
        Some(path) => {
            let model = load_model(path)?;
            let hash = model_hash(&model);
            Ok((Arc::new(FlowPolicy::new(model)), hash))
        }
        None => Ok((Arc::new(MemoryExpert { k: RuntimeConfig::default().chunk_length }), "expert".into())),
    }
}

fn from_name<T: serde::de::DeserializeOwned>(what: &str, name: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| CliError::Usage(format!("unknown {what} `{name}`")))
}

/// `full`, or dropped fields joined with `+`, e.g. `-task+-robot`.
pub fn parse_ablation(s: &str) -> Result<Ablation> {
    let mut a = Ablation::NONE;
    if s == "full" {
        return Ok(a);
    }
    for part in s.split('+') {
        match part {
            "-task" => a.task = true,
            "-vision" => a.vision = true,
            "-robot" => a.robot = true,
            _ => return Err(CliError::Usage(format!("unknown ablation `{part}` in `{s}`"))),
        }
    }
    Ok(a)
}

/// `x,y@tick` in normalized image coordinates.
pub fn parse_click(s: &str) -> Result<GuidanceEvent> {
    let bad = || CliError::Usage(format!("click `{s}` is not x,y@tick"));
    let (xy, tick) = s.split_once('@').ok_or_else(bad)?;
    let (x, y) = xy.split_once(',').ok_or_else(bad)?;
    let x: f64 = x.trim().parse().map_err(|_| bad())?;
    let y: f64 = y.trim().parse().map_err(|_| bad())?;
    let tick: u64 = tick.trim().parse().map_err(|_| bad())?;
    Ok(GuidanceEvent::mid_episode(SpatialPrior::point(x, y), GuidanceSource::User, tick))
}

pub fn datagen(a: DatagenArgs) -> Result<()> {
    let registry = ScenarioRegistry::with_builtins();
    if a.shards == 0 {
        return Err(CliError::Usage("--shards must be at least 1".into()));
    }
    let mut recipe: RecipeConfig = match &a.recipe {
        Some(p) => read_toml(p)?,
        None => RecipeConfig::default(),
    };
    if let Some(p) = a.enable_probability {
        recipe.enable_probability = p;
    }
    recipe.validate()?;
    let trajectories: Vec<TrajectoryRecord> = match &a.input {
        Some(p) => read_jsonl(p)?,
        None => {
            if a.scenarios.is_empty() {
                return Err(CliError::Usage("--scenarios is empty".into()));
            }
            let recorded = (0..a.trajectories)
                .map(|i| {
                    let scenario = &a.scenarios[i % a.scenarios.len()];
                    record_expert(&registry, scenario, mix_seed(a.seed, i as u64), a.max_ticks)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            write_jsonl(&a.out.join("trajectories.jsonl"), &recorded)?;
            recorded
        }
    };
    let dataset = build_dataset(&registry, &trajectories, &recipe, a.seed, a.chunk_length)?;
    let per_shard = dataset.samples.len().div_ceil(a.shards).max(1);
    for shard in 0..a.shards {
        let lo = (shard * per_shard).min(dataset.samples.len());
        let hi = ((shard + 1) * per_shard).min(dataset.samples.len());
        let mut w = create(&a.out.join(format!("samples-{shard:03}.jsonl")))?;
        write_samples_jsonl(&dataset.samples[lo..hi], &mut w)?;
        w.flush()?;
    }
    let stats = dataset_stats(&dataset.samples, &recipe);
    let mut w = create(&a.out.join("stats.csv"))?;
    write_stats_csv(&stats, &mut w)?;
    w.flush()?;
    if !dataset.skipped.is_empty() {
        write_jsonl(&a.out.join("skipped.jsonl"), &dataset.skipped)?;
    }
    println!(
        "{} samples from {} trajectories ({} skipped) in {}",
        dataset.samples.len(),
        trajectories.len(),
        dataset.skipped.len(),
        a.out.display()
    );
    Ok(())
}

pub fn collect(a: CollectArgs) -> Result<()> {
    let config = DemoConfig {
        scenarios: a.scenarios,
        episodes: a.episodes,
        seed: a.seed,
        prior_probability: a.prior_probability,
        ..DemoConfig::default()
    };
    if config.scenarios.is_empty() {
        return Err(CliError::Usage("--scenarios is empty".into()));
    }
    let samples = collect_demos(&ScenarioRegistry::with_builtins(), &config)?;
    write_jsonl(&a.out, &samples)?;
    println!("{} samples from {} episodes in {}", samples.len(), config.episodes, a.out.display());
    Ok(())
}

pub fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut recipe = match a.recipe {
        Recipe::SingleTarget => PolicyRecipe::single_target(),
        Recipe::MultiScenario => PolicyRecipe::multi_scenario(),
    };
    if let Some(s) = a.steps {
        recipe.train.steps = s;
    }
    if let Some(s) = a.seed {
        recipe.train.seed = s;
    }
    let samples: Vec<FlowSample> = match &a.demos {
        Some(p) => read_jsonl(p)?,
        None => collect_demos(&ScenarioRegistry::with_builtins(), &recipe.demos).map_err(PolicyError::from)?,
    };
    let out = train(&samples, recipe.demos.runtime.chunk_length, &recipe.train)?;
    save_model(&out.model, &a.out)?;
    if let Some(p) = &a.loss {
        let mut w = create(p)?;
        write_loss_csv(&out.curve, &mut w)?;
        w.flush()?;
    }
    let last = out.curve.last().map(|p| p.loss).unwrap_or(f64::NAN);
    println!(
        "trained on {} samples, final loss {last:.4}, model {} ({})",
        samples.len(),
        a.out.display(),
        model_hash(&out.model)
    );
    Ok(())
}


/// Every shift × modality × ablation cell; trace guidance only where it
/// is evaluated.
pub fn bench_cells(a: &BenchArgs) -> Result<Vec<SuiteConfig>> {
    let shifts: Vec<ShiftCategory> = if a.suite.iter().any(|s| s == "all") {
        ShiftCategory::ALL.to_vec()
    } else {
        a.suite.iter().map(|s| from_name("suite", s)).collect::<Result<_>>()?
    };
    let modalities: Vec<Modality> = a.modality.iter().map(|m| from_name("modality", m)).collect::<Result<_>>()?;
    let ablations: Vec<Ablation> = a.ablation.iter().map(|s| parse_ablation(s)).collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for &shift in &shifts {
        for &modality in &modalities {
            if modality == Modality::Trace && shift != ShiftCategory::Obstacle {
                continue;
            }
            for &ablation in &ablations {
                let mut cell = SuiteConfig::new(shift, a.episodes)
                    .with_modality(modality)
                    .with_ablation(ablation);
                cell.first_seed = a.first_seed;
                cells.push(cell);
            }
        }
    }
    if cells.is_empty() {
        return Err(CliError::Usage("no cells selected (trace guidance needs the obstacle suite)".into()));
    }
    Ok(cells)
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let cells = bench_cells(&a)?;
    let (policy, hash) = policy(&a.policy)?;
    let registry = ScenarioRegistry::with_builtins();
    let (report, traces) = run_suite_with_traces(&registry, policy.clone(), &cells, &hash)?;
    emit_report(&report, &a.out, &[ReportFormat::Csv, ReportFormat::Markdown])?;
    let trace_dir = a.out.join("traces");
    for (cell, cell_traces) in report.cells.iter().zip(&traces) {
        let name = cell.suite.label().replace(['/', ','], "_");
        let mut w = create(&trace_dir.join(format!("{name}.jsonl")))?;
        for t in cell_traces {
            w.write_all(t.to_jsonl().as_bytes())?;
        }
        w.flush()?;
    }
    if let Some(n) = a.recovery {
        let rows = failure_recovery(&registry, policy, &report, n, PriorSource::Oracle)?;
        write_jsonl(&a.out.join("recovery.jsonl"), &rows)?;
        for r in &rows {
            println!("recovery {}: {}/{}", r.cell, r.recovered, r.rerun);
        }
    }
    for c in &report.cells {
        println!(
            "{:<40} {:>5.1}% success, {:>5.1}% grounding ({} episodes)",
            c.suite.label(),
            c.success_rate() * 100.0,
            c.grounding_rate() * 100.0,
            c.episodes
        );
    }
    println!("reports and traces in {}", a.out.display());
    Ok(())
}

pub fn episode(a: EpisodeArgs) -> Result<()> {
    let config: RuntimeConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => gta_core::bench::eval_runtime(),
    };
    if config.clock_mode == ClockMode::Wall {
        return Err(CliError::Usage("`gta episode` runs simulated-clock episodes; use `gta serve` for wall-clock".into()));
    }
    let clicks = a.click.iter().map(|c| parse_click(c)).collect::<Result<Vec<_>>>()?;
    let (policy, _) = policy(&a.policy)?;
    let trace = run_episode(
        &ScenarioRegistry::with_builtins(),
        &a.scenario,
        &PerturbationConfig::none(),
        Arc::new(OracleReasoner),
        policy,
        &config,
        &mut ScriptedGuidance(clicks),
        a.seed,
    )?;
    let jsonl = trace.to_jsonl();
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(jsonl.as_bytes())?;
            w.flush()?;
            eprintln!(
                "{} seed {}: success {}, {} fast ticks, trace {}",
                a.scenario,
                a.seed,
                trace.success,
                trace.fast_ticks(),
                p.display()
            );
        }
        None => std::io::stdout().write_all(jsonl.as_bytes())?,
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    if a.capacity == 0 || a.stream_buffer == 0 {
        return Err(CliError::Usage("--capacity and --stream-buffer must be at least 1".into()));
    }
    let (policy, hash) = policy(&a.policy)?;
    let config = GatewayConfig {
        capacity: a.capacity,
        clock_mode: match a.clock {
            Clock::Simulated => ClockMode::Simulated,
            Clock::Wall => ClockMode::Wall,
        },
        stream_buffer: a.stream_buffer,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind).await?;
        tracing::info!(addr = %listener.local_addr()?, policy = %hash, "gateway listening");
        eprintln!("listening on {}", listener.local_addr()?);
        gta_gateway::serve(listener, Arc::new(Gateway::new(policy, config))).await
    })?;
    Ok(())
}
