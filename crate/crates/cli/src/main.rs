use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hydramix::data::{generate, make_split, Dataset, DatasetSpec, Split};
use hydramix::model::{Model, ModelConfig};
use hydramix::train::{
    evaluate, sweep, Hyperparams, JsonlWriter, StrategyRegistry, SweepGrid, Trainer, DEFAULT_BUDGETS,
};
use hydramix::HydraError;

#[derive(Parser)]
#[command(name = "hydramix", version, about = "Semi-supervised cell patch classification with centroid regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Generate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Labelled budget, or `full`.
        #[arg(long)]
        budget: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train every (mode, budget, seed) combination.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',', default_value = "partial,hydramix,hydramix_nosce")]
        modes: Vec<String>,
        /// Number of seeds, counted up from the configured seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Everything needed to repeat a run. Written back with all defaults
/// filled in.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: ModelConfig,
    hyper: Hyperparams,
    dataset: DatasetSpec,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    /// Labelled budget; absent means the whole training split.
    budget: Option<usize>,
    budgets: Option<Vec<usize>>,
    modes: Option<Vec<String>>,
    seeds: Option<Vec<u64>>,
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, HydraError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| HydraError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| HydraError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HydraError> {
    let text = serde_json::to_string_pretty(value).expect("serialisable");
    fs::write(path, text + "\n").map_err(|e| HydraError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn make_dir(path: &Path) -> Result<(), HydraError> {
    fs::create_dir_all(path).map_err(|e| HydraError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn parse_budget(text: &str, n_train: usize) -> Result<usize, HydraError> {
    if text == "full" {
        return Ok(n_train);
    }
    text.parse()
        .map_err(|_| HydraError::Config(format!("budget: `{text}` is neither a count nor `full`")))
}

fn load_data(dir: &Path, model: &ModelConfig) -> Result<Dataset, HydraError> {
    let data = Dataset::load(dir)?;
    if data.num_classes() != model.num_classes {
        return Err(HydraError::Config(format!(
            "model.num_classes is {} but the dataset has {} classes",
            model.num_classes,
            data.num_classes()
        )));
    }
    Ok(data)
}

fn cmd_generate(spec: Option<PathBuf>, out: PathBuf) -> Result<(), HydraError> {
    let spec: DatasetSpec = read_json(spec.as_deref())?;
    spec.validate()?;
    let summary = generate(&spec, &out)?;
    for (split, counts) in &summary.counts {
        for (class, n) in counts {
            println!("{split:?} {class}: {n}");
        }
    }
    println!("checksum {}", summary.checksum);
    Ok(())
}

fn cmd_train(
    common: Common,
    budget: Option<String>,
    mode: Option<String>,
    seed: Option<u64>,
) -> Result<(), HydraError> {
    let mut cfg: RunConfig = read_json(common.config.as_deref())?;
    if let Some(m) = mode {
        cfg.hyper.mode = m;
    }
    if let Some(s) = seed {
        cfg.hyper.seed = s;
    }
    cfg.model.validate()?;
    cfg.hyper.validate()?;
    let registry = StrategyRegistry::default();
    registry.get(&cfg.hyper.mode)?;
    let data = load_data(&common.data, &cfg.model)?;
    let n_train = data.indices(Split::Train).count();
    let budget = match budget {
        Some(b) => parse_budget(&b, n_train)?,
        None => cfg.budget.unwrap_or(n_train),
    };
    cfg.budget = Some(budget);
    cfg.data_dir = Some(common.data.clone());
    cfg.out_dir = Some(common.out.clone());

    make_dir(&common.out)?;
    write_json(&common.out.join("config_resolved.json"), &cfg)?;
    let plan = make_split(&data, budget, cfg.hyper.seed)?;
    let model = Model::build(&cfg.model, cfg.hyper.seed)?;
    let trainer = Trainer::new(model, &data, &plan, &cfg.hyper, &registry)?;
    let mut metrics = JsonlWriter::create(&common.out.join("metrics.jsonl"))?;
    let outcome = trainer.run(&mut metrics)?;
    outcome.model.save(&common.out.join("ckpt_final.hmxw"))?;
    outcome.best.save(&common.out.join("ckpt_best.hmxw"))?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "mode {} budget {budget} seed {}: accuracy {:.4}, centroid error {:.4} (best epoch {})",
        cfg.hyper.mode, cfg.hyper.seed, last.test_accuracy, last.mean_centroid_error, outcome.best_epoch
    );
    Ok(())
}

/// Returns the number of failed cells.
fn cmd_sweep(
    common: Common,
    budgets: Option<Vec<String>>,
    modes: Vec<String>,
    seeds: u64,
) -> Result<usize, HydraError> {
    let mut cfg: RunConfig = read_json(common.config.as_deref())?;
    cfg.model.validate()?;
    cfg.hyper.validate()?;
    let registry = StrategyRegistry::default();
    for m in &modes {
        registry.get(m)?;
    }
    let data = load_data(&common.data, &cfg.model)?;
    let n_train = data.indices(Split::Train).count();
    let budgets = match budgets {
        Some(list) => list.iter().map(|b| parse_budget(b, n_train)).collect::<Result<Vec<_>, _>>()?,
        None => cfg.budgets.clone().unwrap_or_else(|| DEFAULT_BUDGETS.to_vec()),
    };
    let grid = SweepGrid {
        modes,
        budgets,
        seeds: (0..seeds).map(|i| cfg.hyper.seed + i).collect(),
    };
    cfg.budgets = Some(grid.budgets.clone());
    cfg.modes = Some(grid.modes.clone());
    cfg.seeds = Some(grid.seeds.clone());
    cfg.data_dir = Some(common.data.clone());
    cfg.out_dir = Some(common.out.clone());

    let cells = common.out.join("cells");
    make_dir(&cells)?;
    write_json(&common.out.join("config_resolved.json"), &cfg)?;
    let threads = std::env::var("HMX_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);
    let report = sweep(&data, &cfg.model, &cfg.hyper, &grid, threads, Some(&cells))?;
    report.write_csv(&common.out.join("sweep.csv"))?;
    report.write_summary(&common.out.join("sweep_summary.json"))?;
    let table = report.render_table();
    fs::write(common.out.join("sweep_table.txt"), &table).map_err(|e| HydraError::Io {
        path: common.out.join("sweep_table.txt"),
        msg: e.to_string(),
    })?;
    print!("{table}");
    for r in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("cell {} budget {} seed {} failed: {}", r.mode, r.budget, r.seed, r.error.as_deref().unwrap_or(""));
    }
    Ok(report.failed())
}

fn cmd_eval(ckpt: PathBuf, data: PathBuf) -> Result<(), HydraError> {
    let model = Model::<f32>::load(&ckpt)?;
    let data = load_data(&data, model.config())?;
    let eval = evaluate(&model, &data.test_set(), data.background_class())?;
    println!("{}", serde_json::to_string(&eval).expect("serialisable"));
    Ok(())
}

fn exit_code(e: &HydraError) -> u8 {
    match e {
        HydraError::Config(_) | HydraError::Argument(_) | HydraError::Tensor(_) => 2,
        HydraError::Io { .. } | HydraError::Parse { .. } => 3,
        HydraError::Numerical { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { spec, out } => cmd_generate(spec, out),
        Command::Train { common, budget, mode, seed } => cmd_train(common, budget, mode, seed),
        Command::Sweep { common, budgets, modes, seeds } => match cmd_sweep(common, budgets, modes, seeds) {
            Ok(0) => Ok(()),
            Ok(n) => {
                eprintln!("{n} sweep cells failed");
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
        Command::Eval { ckpt, data } => cmd_eval(ckpt, data),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
