use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pixelnet::bench::{
    account_memory, host_descriptor, measure_throughput, pipeline_grad_check, run_ablation, Ablation, MemoryConfig, GRAD_CHECK_EPS,
};
use pixelnet::config::Config;
use pixelnet::data::{Dataset, Split};
use pixelnet::infer::evaluate;
use pixelnet::model::{Model, PipelineMode};
use pixelnet::tensor::{Scalar, ScalarMode};
use pixelnet::train::{Checkpoint, Trainer};
use pixelnet::{Error, Result};

/// Gradient checks fail above this relative error.
const GRAD_CHECK_TOLERANCE: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "pixelnet", version, about = "Pixel-level prediction from sampled hypercolumns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file in `key = value` form.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train and held-out splits.
    GenData(Common),
    /// Train a model and write checkpoints and the loss log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset root holding `train/` and `heldout/` (default `<out>/data`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from `<out>/checkpoint`.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the held-out split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory (default `<out>/checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Memory and throughput of every training pipeline.
    Bench(Common),
    /// Finite-difference check of the full training pipeline.
    GradCheck(Common),
    /// Run an ablation over its grid and `bench.seeds` seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// sampling_fraction | diversity | bias_rho | mlp_width | multiscale
        name: String,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    config.apply_overrides(&common.set)?;
    Ok(config)
}

fn prepare(common: &Common, subcommand: &str) -> Result<Config> {
    let config = load_config(common)?;
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join(format!("config.{subcommand}.txt")), config.render())?;
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn load_split(root: &Path, split: Split, out: &Path) -> Result<Dataset> {
    let dir = root.join(split.name());
    if !dir.join("manifest.txt").exists() {
        return Err(Error::Config(format!(
            "no {} data at {}; run `pixelnet gen-data --out {}` first or pass --data",
            split.name(),
            dir.display(),
            out.display()
        )));
    }
    Dataset::load(&dir)
}

fn check_task(config: &Config, data: &Dataset) -> Result<()> {
    if data.task != config.task_kind() {
        return Err(Error::Config(format!(
            "dataset holds {} data but task.kind is {}",
            data.task.name(),
            config.task_kind().name()
        )));
    }
    Ok(())
}

fn gen_data(common: &Common) -> Result<()> {
    let config = prepare(common, "gen-data")?;
    for split in [Split::Train, Split::Heldout] {
        let ds = config.dataset(split)?;
        let dir = common.out.join("data").join(split.name());
        ds.save(&dir)?;
        println!("{}: {} images {}x{} -> {}", split.name(), ds.len(), ds.height, ds.width, dir.display());
    }
    Ok(())
}

fn train_typed<T: Scalar>(config: &Config, common: &Common, train: &Dataset, heldout: &Dataset, resume: bool) -> Result<()> {
    let ckpt = common.out.join("checkpoint");
    let mut trainer = if resume {
        Trainer::<T>::resume(config.train_config()?, config.model_spec()?, &ckpt)?
    } else {
        Trainer::<T>::new(config.train_config()?, config.model_spec()?)?
    };
    let start = trainer.state.iteration;
    trainer.run(train, Some(heldout), Some(&ckpt))?;
    trainer.checkpoint().save(&ckpt)?;
    let mut log = create(&common.out.join("train_log.csv"))?;
    trainer.log.write_csv(&mut log)?;
    log.flush()?;
    let last = trainer.log.rows.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "trained iterations {start}..{} final_loss={last:.6} checkpoint={}",
        trainer.state.iteration,
        ckpt.display()
    );
    Ok(())
}

fn train(common: &Common, data: Option<&Path>, resume: bool) -> Result<()> {
    let config = prepare(common, "train")?;
    let root = data.map_or_else(|| common.out.join("data"), Path::to_path_buf);
    let train = load_split(&root, Split::Train, &common.out)?;
    let heldout = load_split(&root, Split::Heldout, &common.out)?;
    check_task(&config, &train)?;
    check_task(&config, &heldout)?;
    match config.train.scalar {
        ScalarMode::Standard => train_typed::<f32>(&config, common, &train, &heldout, resume),
        ScalarMode::Verification => train_typed::<f64>(&config, common, &train, &heldout, resume),
    }
}

fn eval_typed<T: Scalar>(config: &Config, ckpt: &Path, heldout: &Dataset) -> Result<Vec<(&'static str, f64)>> {
    let stored = Checkpoint::<T>::load(ckpt)?;
    let mut model = Model::with_params(config.model_spec()?, stored.params)?;
    Ok(evaluate(&mut model, heldout, &config.task.scales, config.bench.budget)?.columns())
}

fn eval(common: &Common, data: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let config = prepare(common, "eval")?;
    let root = data.map_or_else(|| common.out.join("data"), Path::to_path_buf);
    let heldout = load_split(&root, Split::Heldout, &common.out)?;
    check_task(&config, &heldout)?;
    let ckpt = checkpoint.map_or_else(|| common.out.join("checkpoint"), Path::to_path_buf);
    let columns = match config.train.scalar {
        ScalarMode::Standard => eval_typed::<f32>(&config, &ckpt, &heldout)?,
        ScalarMode::Verification => eval_typed::<f64>(&config, &ckpt, &heldout)?,
    };
    let scales = config.get("task.scales").unwrap_or_default();
    let mut out = create(&common.out.join("eval.csv"))?;
    let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
    writeln!(out, "checkpoint,task,scales,{}", names.join(","))?;
    let values: Vec<String> = columns.iter().map(|c| c.1.to_string()).collect();
    writeln!(out, "{},{},\"{scales}\",{}", ckpt.display(), config.task_kind().name(), values.join(","))?;
    out.flush()?;
    for (k, v) in &columns {
        println!("{k}={v:.6}");
    }
    Ok(())
}

fn bench(common: &Common) -> Result<()> {
    let config = prepare(common, "bench")?;
    let mem_cfg = MemoryConfig::from_config(&config)?;
    let mut mem = create(&common.out.join("memory.csv"))?;
    writeln!(mem, "mode,scalar_mode,peak_scalars,peak_bytes,hypercolumn_stage,hypercolumn_buffer,breakdown")?;
    for mode in PipelineMode::ALL {
        let r = account_memory(mode, &mem_cfg, config.train.scalar)?;
        let breakdown: Vec<String> = r.breakdown.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        writeln!(
            mem,
            "{},{},{},{},{},{},{}",
            mode.name(),
            match r.scalar_mode {
                ScalarMode::Standard => "standard",
                ScalarMode::Verification => "verification",
            },
            r.peak_scalars,
            r.bytes_at_mode,
            r.hypercolumn_stage,
            r.hypercolumn_buffer,
            breakdown.join(";")
        )?;
        println!("memory {} peak_scalars={} hypercolumn_stage={}", mode.name(), r.peak_scalars, r.hypercolumn_stage);
    }
    mem.flush()?;
    let mut tp = create(&common.out.join("throughput.csv"))?;
    writeln!(tp, "mode,status,updates_per_second,warmup,timed,host,note")?;
    for mode in PipelineMode::ALL {
        match measure_throughput(mode, &config, config.bench.iterations) {
            Ok(r) => {
                writeln!(tp, "{},ok,{},{},{},{},", mode.name(), r.updates_per_second, r.warmup, r.timed, r.host)?;
                println!("throughput {} updates_per_second={:.3}", mode.name(), r.updates_per_second);
            }
            Err(e @ Error::Resource { .. }) => {
                writeln!(tp, "{},infeasible,,,,{},\"{}\"", mode.name(), host_descriptor(), e.to_string().replace('"', "'"))?;
                println!("throughput {} infeasible: {e}", mode.name());
            }
            Err(e) => return Err(e),
        }
    }
    tp.flush()?;
    Ok(())
}

fn grad_check(common: &Common) -> Result<bool> {
    let config = prepare(common, "grad-check")?;
    let data = config.dataset(Split::Train)?;
    let images = config.sample.images.min(2);
    let check = pipeline_grad_check(&config.model_spec()?, &data, images, 16, 8, config.train.seed)?;
    let r = &check.report;
    let line = format!(
        "max_rel_err={:e} worst_param={} checked={} refined={} skipped={} eps={GRAD_CHECK_EPS:e}",
        r.max_rel_err, check.worst_param, r.checked, r.refined, r.skipped
    );
    fs::write(common.out.join("grad_check.txt"), format!("{line}\n"))?;
    println!("{line}");
    Ok(r.max_rel_err <= GRAD_CHECK_TOLERANCE)
}

fn ablate(common: &Common, name: &str) -> Result<()> {
    let ablation = Ablation::parse(name)?;
    let config = prepare(common, "ablate")?;
    let base = ablation.prepare(&config)?;
    let seeds: Vec<u64> = (0..config.bench.seeds as u64).map(|i| config.train.seed + i).collect();
    let report = run_ablation(ablation, &base, &ablation.grid(&base), &seeds, Some(&common.out))?;
    for s in &report.summary {
        println!(
            "{} median_score={:.6} median_tail_loss={:.6} ok_runs={}",
            s.grid, s.median_score, s.median_tail_loss, s.ok_runs
        );
    }
    Ok(())
}

fn report(e: &Error) -> ExitCode {
    let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    eprintln!("error: kind={} msg=\"{msg}\"", e.kind());
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GenData(c) => gen_data(c),
        Command::Train { common, data, resume } => train(common, data.as_deref(), *resume),
        Command::Eval { common, data, checkpoint } => eval(common, data.as_deref(), checkpoint.as_deref()),
        Command::Bench(c) => bench(c),
        Command::GradCheck(c) => match grad_check(c) {
            Ok(true) => Ok(()),
            Ok(false) => Err(Error::Numeric(format!("gradient check above tolerance {GRAD_CHECK_TOLERANCE:e}"))),
            Err(e) => Err(e),
        },
        Command::Ablate { common, name } => ablate(common, name),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
