use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use symflow::harness::{self, EvalOptions, ExperimentConfig, Model, ModelKind, Suite};
use symflow::kosc::dataset::{generate_dataset, read_f32_file, Dataset, DatasetConfig};
use symflow::kosc::{TaskVariant, DEFAULT_N_SAMPLES};
use symflow::nn::Checkpoint;

#[derive(Parser)]
#[command(
    name = "symflow",
    version,
    about = "Synthesizer inversion under permutation symmetry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a k-osc dataset directory.
    GenData {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        variant: TaskVariant,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_N_SAMPLES)]
        n_samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt, train_log.csv and config.toml.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a checkpoint on a dataset and write the per-item CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        limit: Option<usize>,
        /// Also report MSS, wMFCC, SOT and RMS-cosine.
        #[arg(long)]
        extended: bool,
        #[arg(long)]
        guidance: Option<f64>,
        #[arg(long)]
        sampler_steps: Option<usize>,
    },
    /// Estimate parameters for one signal and print them as JSON.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Raw little-endian f32 samples, or a dataset directory.
        #[arg(long)]
        audio_in: PathBuf,
        /// Record to use when `--audio-in` is a dataset directory.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a self-check suite.
    Check {
        /// oracles, grad, equivariance, fixture, metrics, determinism or all.
        #[arg(long)]
        suite: String,
    },
    /// Export the Param2Tok matrices of a checkpoint as CSV.
    ExportP2t {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Flags that override the config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    task: Option<TaskVariant>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sampler_steps: Option<usize>,
    #[arg(long)]
    guidance: Option<f64>,
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    log_every: Option<u64>,
    #[arg(long)]
    val_every: Option<u64>,
    #[arg(long)]
    val_items: Option<usize>,
}

impl Overrides {
    fn apply(self, c: &mut ExperimentConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(
            model,
            k,
            task,
            steps,
            batch_size,
            lr,
            grad_clip,
            seed,
            sampler_steps,
            guidance,
            log_every,
            val_every,
            val_items
        );
        if self.train_data.is_some() {
            c.train_data = self.train_data;
        }
        if self.test_data.is_some() {
            c.test_data = self.test_data;
        }
    }
}

fn load_model(path: &Path) -> Result<Model> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Model::from_checkpoint(&ckpt)?.0)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData {
            k,
            variant,
            count,
            seed,
            n_samples,
            out,
        } => {
            let meta = generate_dataset(
                &DatasetConfig {
                    k,
                    variant,
                    count,
                    seed,
                    n_samples,
                },
                &out,
            )?;
            eprintln!(
                "wrote {} {} records (k={}) to {}",
                meta.count,
                meta.variant,
                meta.k,
                out.display()
            );
        }
        Command::Train { config, out, overrides } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
                None => ExperimentConfig::default(),
            };
            overrides.apply(&mut cfg);
            cfg.validate()?;
            let train_data = match (&cfg.train_data, cfg.model) {
                (Some(p), _) => Some(Dataset::open(p).with_context(|| format!("opening {}", p.display()))?),
                (None, ModelKind::Random) => None,
                (None, _) => bail!("train_data is required"),
            };
            let test_data = cfg.test_data.as_deref().map(Dataset::open).transpose()?;
            let model = Model::build(&cfg)?;
            eprintln!("{}: {} parameters", cfg.model, model.num_parameters());
            let outcome = match &train_data {
                Some(d) => harness::train(&cfg, d, test_data.as_ref())?,
                None => harness::TrainOutcome {
                    checkpoint: model.to_checkpoint(0, None, None)?,
                    model,
                    log: Default::default(),
                },
            };
            fs::create_dir_all(&out)?;
            outcome.checkpoint.save(&out.join("model.ckpt"))?;
            fs::write(out.join("train_log.csv"), outcome.log.to_csv())?;
            fs::write(out.join("config.toml"), cfg.to_toml())?;
            if let Some(l) = outcome.log.last("train", "loss") {
                eprintln!("final training loss {l:.6}");
            }
        }
        Command::Eval {
            ckpt,
            data,
            out_csv,
            seed,
            limit,
            extended,
            guidance,
            sampler_steps,
        } => {
            let mut model = load_model(&ckpt)?;
            if let Some(g) = guidance {
                model.cfg.guidance = g;
            }
            if let Some(s) = sampler_steps {
                model.cfg.sampler_steps = s;
            }
            model.cfg.validate()?;
            let data = Dataset::open(&data)?;
            let report = harness::evaluate(
                &model,
                &data,
                &EvalOptions {
                    seed,
                    limit,
                    extended,
                    ..Default::default()
                },
            )?;
            report.write_csv(&out_csv)?;
            for ((name, m), ci) in report.metrics.iter().zip(report.means()).zip(report.cis()) {
                println!("{name}: {m:.6} ± {ci:.6}");
            }
        }
        Command::Sample {
            ckpt,
            audio_in,
            index,
            seed,
        } => {
            let model = load_model(&ckpt)?;
            let audio: Vec<f64> = if audio_in.is_dir() {
                let d = Dataset::open(&audio_in)?;
                if index >= d.len() {
                    bail!("index {index} out of range for {} records", d.len());
                }
                d.audio(index)
            } else {
                read_f32_file(&audio_in)?.into_iter().map(f64::from).collect()
            };
            let est = model.infer(&[&audio], &[seed])?;
            println!("{}", serde_json::to_string(&est[0])?);
        }
        Command::Check { suite } => {
            let suites: Vec<Suite> = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse()?]
            };
            let mut ok = true;
            for s in suites {
                for outcome in s.run() {
                    println!("{outcome}");
                    ok &= outcome.passed;
                }
            }
            return Ok(ok);
        }
        Command::ExportP2t { ckpt, out_dir } => {
            let ck = Checkpoint::load(&ckpt)?;
            harness::export_p2t(&ck, &out_dir)?;
            eprintln!("wrote Param2Tok matrices to {}", out_dir.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
