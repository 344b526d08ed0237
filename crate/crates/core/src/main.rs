use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mffn::harness::ablate::{run_grid, to_csv, GRIDS};
use mffn::harness::dataset::{load_dataset, split_train_val};
use mffn::harness::{checkpoint, predict, synth, train_dirs, Overrides, TrainConfig};
use mffn::metrics::{evaluate_dir, write_report};
use mffn::model::{count_parameters, parameter_breakdown, Model};
use mffn::params::ParamStore;
use mffn::Result;

#[derive(Parser)]
#[command(name = "mffn", version, about = "Multi-view camouflaged object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tiny", value_parser = ["tiny", "full"])]
    profile: String,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Flat TOML file with training keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Comma-separated view tags, e.g. `original,diagonal,close:1.5`.
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<String>>,
    #[arg(long)]
    one_stage: bool,
    #[arg(long)]
    no_cfu: bool,
    /// Pretrained backbone weights (safetensors).
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on `<train>/Images` + `<train>/GT`.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Write prediction maps for every image in a directory.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a prediction directory against ground-truth masks.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train and score every cell of an ablation grid.
    Ablate {
        #[arg(long, value_parser = GRIDS)]
        grid: String,
        #[arg(long)]
        train: PathBuf,
        /// Held-out test set; defaults to a split of the training pool.
        #[arg(long)]
        test: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Print the trainable parameter count with a per-block breakdown.
    Params {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a seeded synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, flags: &TrainFlags) -> Result<TrainConfig> {
    let o = Overrides {
        profile: Some(common.profile.clone()),
        seed: Some(common.seed),
        epochs: flags.epochs,
        batch_size: flags.batch_size,
        lr: flags.lr,
        max_iterations: flags.max_iterations,
        views: flags.views.clone(),
        camv_stage2: flags.one_stage.then_some(false),
        cfu_enabled: flags.no_cfu.then_some(false),
        weights: flags.weights.clone(),
        ..Default::default()
    };
    TrainConfig::resolve(&common.profile, common.config.as_deref(), &o)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { train, val, common, flags } => {
            let cfg = resolve(&common, &flags)?;
            let run = train_dirs(&cfg, &train, val.as_deref(), &common.out_dir)?;
            let o = &run.outcome;
            println!("iterations {}", o.iterations);
            if let Some(l) = o.epoch_losses.last() {
                println!("final epoch loss {l:.6}");
            }
            if let Some(b) = o.best_epoch {
                println!("best epoch {b}");
            }
            println!("checkpoint {}", o.checkpoint.display());
        }
        Command::Predict { checkpoint: ck, input, common } => {
            let (_, model, _) = checkpoint::load(&ck)?;
            let outs = predict::predict_dir(&model, &input, &common.out_dir)?;
            println!("wrote {} maps to {}", outs.len(), common.out_dir.display());
        }
        Command::Evaluate { pred, gt, common } => {
            let gt_dir = if gt.join("GT").is_dir() { gt.join("GT") } else { gt };
            let report = evaluate_dir(&pred, &gt_dir)?;
            write_report(&report, &common.out_dir)?;
            for (name, v) in mffn::metrics::MetricReport::SCALAR_NAMES.iter().zip(report.scalars()) {
                println!("{name} {v:.6}");
            }
        }
        Command::Ablate { grid, train, test, common, flags } => {
            let cfg = resolve(&common, &flags)?;
            let pool = load_dataset(&train, cfg.model.image_size)?;
            let (train_set, test_set) = match test {
                Some(t) => (pool, load_dataset(&t, cfg.model.image_size)?),
                None => split_train_val(&pool, cfg.val_fraction.max(0.1), cfg.seed),
            };
            let rows = run_grid(&grid, &cfg, &train_set, &[], &test_set, &common.out_dir)?;
            let csv = to_csv(&grid, &rows);
            std::fs::create_dir_all(&common.out_dir)?;
            std::fs::write(common.out_dir.join(format!("{grid}.csv")), &csv)?;
            print!("{csv}");
        }
        Command::Params { common } => {
            let cfg = resolve(&common, &TrainFlags::default())?;
            let mut ps = ParamStore::shape_only(candle_core::DType::F32);
            Model::new(&mut ps, &cfg.model)?;
            for (block, n) in parameter_breakdown(&ps) {
                println!("{:<20} {n:>12}", block.trim_end_matches('.'));
            }
            let total = count_parameters(&cfg.model)?;
            println!("{:<20} {total:>12}", "total");
            println!("{:.3}M", total as f64 / 1e6);
        }
        Command::Synth { count, size, common } => {
            synth::generate(&common.out_dir, count, size, size, common.seed)?;
            println!("wrote {count} scenes to {}", common.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
