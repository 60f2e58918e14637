mod commands;
mod run;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use transducer::decoder::{FusionMode, LabelScalePolicy};
use transducer::dist_sim::{heterogeneous_workers, SyncPolicy};
use transducer::ilm::IlmVariant;
use transducer::Execution;

use commands::*;
use run::{Layered, RunDir};

#[derive(Parser)]
#[command(name = "transducer", version, about = "Monotonic transducer training, fused decoding and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for the resolved config and all outputs.
    #[arg(long)]
    out: PathBuf,
    /// Skip when `--out` already holds a completed run with the same config.
    #[arg(long)]
    resume: bool,
    /// Disable data parallelism (results are identical either way).
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn layered(&self) -> Result<Layered> {
        Layered::from_file(self.config.as_deref())
    }
}

#[derive(Args)]
struct FusionArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Table LM JSON or RNN LM checkpoint.
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Line-delimited JSON utterances.
    #[arg(long)]
    data: Option<PathBuf>,
    /// none | sf | sf_ilm | sf_ilm_eos
    #[arg(long)]
    mode: Option<FusionMode>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// fixed_1 | one_minus_beta
    #[arg(long)]
    lambda_policy: Option<LabelScalePolicy>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    beta_eos: Option<f64>,
    #[arg(long)]
    lambda_eos: Option<f64>,
    /// zero | avg
    #[arg(long)]
    ilm: Option<IlmVariant>,
    #[arg(long)]
    max_labels: Option<usize>,
    #[arg(long)]
    nbest: Option<usize>,
}

impl FusionArgs {
    fn apply(&self, l: &mut Layered) -> Result<()> {
        l.set_opt(&["model"], self.model.as_ref())?;
        l.set_opt(&["lm"], self.lm.as_ref())?;
        l.set_opt(&["data"], self.data.as_ref())?;
        l.set_opt(&["fusion", "mode"], self.mode)?;
        l.set_opt(&["fusion", "beam_size"], self.beam)?;
        l.set_opt(&["fusion", "lambda"], self.lambda)?;
        l.set_opt(&["fusion", "lambda_policy"], self.lambda_policy)?;
        l.set_opt(&["fusion", "beta"], self.beta)?;
        l.set_opt(&["fusion", "gamma"], self.gamma)?;
        l.set_opt(&["fusion", "delta"], self.delta)?;
        l.set_opt(&["fusion", "beta_eos"], self.beta_eos)?;
        l.set_opt(&["fusion", "lambda_eos"], self.lambda_eos)?;
        l.set_opt(&["fusion", "ilm_variant"], self.ilm)?;
        l.set_opt(&["fusion", "max_labels"], self.max_labels)?;
        l.set_opt(&["fusion", "nbest"], self.nbest)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic transduction task.
    MakeSynthetic {
        #[command(flatten)]
        common: Common,
        /// Number of labels (even).
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        dev: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        lm_text: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a transducer with the full-sum loss.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Symbol file fixing the label count (one symbol per line).
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Peak learning rate.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode a dataset to `hyps.tsv`.
    Decode {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        fusion: FusionArgs,
        /// Also write `nbest.json`.
        #[arg(long)]
        nbest_json: bool,
    },
    /// Decode and score, or score an existing `hyps.tsv`.
    EvalWer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        fusion: FusionArgs,
        #[arg(long)]
        hyps: Option<PathBuf>,
    },
    /// Grid search of the LM and ILM scales.
    TuneScales {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        fusion: FusionArgs,
        /// Comma-separated LM scales.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        /// Comma-separated ILM scales.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
    },
    /// Internal LM perplexity.
    IlmPpl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long)]
        variant: Option<IlmVariant>,
    },
    /// Train an LSTM language model on a text corpus.
    LmTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long)]
        dev_text: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate asynchronous data-parallel training with parameter averaging.
    DistSim {
        #[command(flatten)]
        common: Common,
        /// Replace the worker list with this many seed-shuffled workers.
        #[arg(long)]
        workers: Option<usize>,
        /// Duration factor of the last worker when `--workers` is given.
        #[arg(long, default_value_t = 1.0)]
        slow_factor: f64,
        #[arg(long, conflicts_with = "sync_seconds")]
        sync_steps: Option<u64>,
        #[arg(long)]
        sync_seconds: Option<f64>,
        #[arg(long)]
        total_time: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn open<C: serde::Serialize>(common: &Common, name: &str, cfg: &C, seed: u64) -> Result<Option<RunDir>> {
    let dir = RunDir::open(&common.out, name, cfg, seed, common.resume)?;
    if dir.is_none() {
        println!("{} is up to date", common.out.display());
    }
    Ok(dir)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::MakeSynthetic { common, vocab, feature_dim, train, dev, test, lm_text, seed } => {
            let mut l = common.layered()?;
            l.set_opt(&["synthetic", "num_labels"], vocab)?;
            l.set_opt(&["synthetic", "feature_dim"], feature_dim)?;
            l.set_opt(&["synthetic", "seed"], seed)?;
            l.set_opt(&["train"], train)?;
            l.set_opt(&["dev"], dev)?;
            l.set_opt(&["test"], test)?;
            l.set_opt(&["lm_text"], lm_text)?;
            let cfg: MakeSyntheticConfig = l.resolve()?;
            if let Some(dir) = open(&common, "make-synthetic", &cfg, cfg.synthetic.seed)? {
                make_synthetic_cmd(&cfg, dir)?;
            }
        }
        Command::Train { common, train, dev, vocab, epochs, lr, seed } => {
            let mut l = common.layered()?;
            l.set_opt(&["train"], train)?;
            l.set_opt(&["dev"], dev)?;
            l.set_opt(&["training", "epochs"], epochs)?;
            l.set_opt(&["training", "peak_lr"], lr)?;
            l.set_opt(&["training", "seed"], seed)?;
            // data paths are needed before the network dims can be resolved
            let paths: TrainCmdConfig = l.clone().resolve()?;
            let train_path = paths.train.as_deref().context("missing `train` (set it in the config or by flag)")?;
            let data = train_data(train_path, paths.dev.as_deref())?;
            if !l.contains(&["network", "input_dim"]) || !l.contains(&["network", "num_labels"]) {
                let (input_dim, labels) = infer_dims(&data.0, &data.1, vocab.as_deref())?;
                if !l.contains(&["network", "input_dim"]) {
                    l.set(&["network", "input_dim"], input_dim)?;
                }
                if !l.contains(&["network", "num_labels"]) {
                    l.set(&["network", "num_labels"], labels)?;
                }
            }
            let cfg: TrainCmdConfig = l.resolve()?;
            if let Some(dir) = open(&common, "train", &cfg, cfg.training.seed)? {
                train_cmd(&cfg, data, common.exec(), dir)?;
            }
        }
        Command::Decode { common, fusion, nbest_json } => {
            let mut l = common.layered()?;
            fusion.apply(&mut l)?;
            if nbest_json {
                l.set(&["nbest_json"], true)?;
            }
            let cfg: DecodeConfig = l.resolve()?;
            if let Some(dir) = open(&common, "decode", &cfg, 0)? {
                decode_cmd(&cfg, common.exec(), dir)?;
            }
        }
        Command::EvalWer { common, fusion, hyps } => {
            let mut l = common.layered()?;
            fusion.apply(&mut l)?;
            l.set_opt(&["hyps"], hyps)?;
            let cfg: EvalConfig = l.resolve()?;
            if let Some(dir) = open(&common, "eval-wer", &cfg, 0)? {
                eval_wer_cmd(&cfg, common.exec(), dir)?;
            }
        }
        Command::TuneScales { common, fusion, betas, gammas } => {
            let mut l = common.layered()?;
            fusion.apply(&mut l)?;
            l.set_opt(&["betas"], betas)?;
            l.set_opt(&["gammas"], gammas)?;
            let cfg: TuneConfig = l.resolve()?;
            if let Some(dir) = open(&common, "tune-scales", &cfg, 0)? {
                tune_cmd(&cfg, common.exec(), dir)?;
            }
        }
        Command::IlmPpl { common, model, data, text, variant } => {
            let mut l = common.layered()?;
            l.set_opt(&["model"], model)?;
            l.set_opt(&["data"], data)?;
            l.set_opt(&["text"], text)?;
            l.set_opt(&["variant"], variant)?;
            let cfg: IlmPplConfig = l.resolve()?;
            if let Some(dir) = open(&common, "ilm-ppl", &cfg, 0)? {
                ilm_ppl_cmd(&cfg, common.exec(), dir)?;
            }
        }
        Command::LmTrain { common, text, dev_text, vocab, epochs, lr, seed } => {
            let mut l = common.layered()?;
            l.set_opt(&["text"], text)?;
            l.set_opt(&["dev_text"], dev_text)?;
            l.set_opt(&["lm", "epochs"], epochs)?;
            l.set_opt(&["lm", "learning_rate"], lr)?;
            l.set_opt(&["lm", "seed"], seed)?;
            let paths: LmTrainCmdConfig = l.clone().resolve()?;
            let text_path = paths.text.as_deref().context("missing `text` (set it in the config or by flag)")?;
            let corpus = read_text(text_path)?;
            if !l.contains(&["lm", "model", "num_labels"]) {
                l.set(&["lm", "model", "num_labels"], text_labels(&corpus, vocab.as_deref())?)?;
            }
            let cfg: LmTrainCmdConfig = l.resolve()?;
            if let Some(dir) = open(&common, "lm-train", &cfg, cfg.lm.seed)? {
                lm_train_cmd(&cfg, &corpus, common.exec(), dir)?;
            }
        }
        Command::DistSim { common, workers, slow_factor, sync_steps, sync_seconds, total_time, seed } => {
            let mut l = common.layered()?;
            let seed = match seed {
                Some(s) => s,
                None => l.clone().resolve::<DistSimConfig>()?.objective.seed,
            };
            if let Some(n) = workers {
                anyhow::ensure!(n > 0, "--workers must be positive");
                let slow: Vec<usize> = if slow_factor != 1.0 { vec![n - 1] } else { Vec::new() };
                l.set(&["sim", "workers"], heterogeneous_workers(n, 1.0, &slow, slow_factor, seed))?;
            }
            if let Some(n) = sync_steps {
                l.set(&["sim", "sync"], SyncPolicy::EveryNSteps(n))?;
            }
            if let Some(t) = sync_seconds {
                l.set(&["sim", "sync"], SyncPolicy::EveryTSeconds(t))?;
            }
            l.set_opt(&["sim", "total_time"], total_time)?;
            l.set(&["objective", "seed"], seed)?;
            let cfg: DistSimConfig = l.resolve()?;
            if let Some(dir) = open(&common, "dist-sim", &cfg, seed)? {
                dist_sim_cmd(&cfg, dir)?;
            }
        }
    }
    Ok(())
}
