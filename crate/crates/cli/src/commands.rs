use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use transducer::data::{check_dataset, check_labels, format_corpus, read_corpus, read_dataset, write_dataset, Utterance};
use transducer::decoder::{decode_batch, DecodeResult, FusionConfig};
use transducer::dist_sim::{simulate, Objective, Quadratic, SimConfig};
use transducer::eval::{tune_fusion_scales, wer, WerReport};
use transducer::ilm::{ilm_perplexity, IlmVariant};
use transducer::lm::{perplexity, train_rnn_lm, AnyLm, LmTrainConfig};
use transducer::network::{NetworkConfig, TransducerParams};
use transducer::synthetic::{make_synthetic, SplitSizes, SyntheticConfig};
use transducer::tensor::Checkpoint;
use transducer::training::{train, TrainConfig};
use transducer::vocab::LabelVocab;
use transducer::Execution;

use crate::run::RunDir;

pub fn load_model(path: &Path) -> Result<TransducerParams> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading model {}", path.display()))?;
    TransducerParams::from_checkpoint(&ckpt).with_context(|| format!("loading model {}", path.display()))
}

fn load_lm(path: Option<&Path>) -> Result<Option<AnyLm>> {
    path.map(|p| AnyLm::load(p).with_context(|| format!("loading LM {}", p.display())))
        .transpose()
}

fn load_data(path: &Path, model: &TransducerParams) -> Result<Vec<Utterance>> {
    let data = read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
    check_dataset(&data, model.config.input_dim, model.num_labels())
        .with_context(|| format!("dataset {} does not fit the model", path.display()))?;
    Ok(data)
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .with_context(|| format!("missing `{key}` (set it in the config or by flag)"))
}

fn render(labels: &[usize]) -> String {
    labels.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// Label count from a vocabulary file, else one past the largest id seen.
fn infer_num_labels<'a>(vocab: Option<&Path>, seqs: impl IntoIterator<Item = &'a Vec<usize>>) -> Result<usize> {
    if let Some(v) = vocab {
        return Ok(LabelVocab::from_file(v)
            .with_context(|| format!("reading vocabulary {}", v.display()))?
            .num_labels());
    }
    let max = seqs.into_iter().flatten().max().copied();
    max.map(|m| m + 1).context("cannot infer the label count from empty transcripts; pass --vocab")
}

// ---------------------------------------------------------------- make-synthetic

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MakeSyntheticConfig {
    pub synthetic: SyntheticConfig,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub lm_text: usize,
    /// EOS probability of the exported test-prior LM.
    pub prior_lm_eos: f64,
}

impl Default for MakeSyntheticConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticConfig::default(),
            train: 2000,
            dev: 200,
            test: 200,
            lm_text: 3000,
            prior_lm_eos: 0.2,
        }
    }
}

pub fn make_synthetic_cmd(cfg: &MakeSyntheticConfig, dir: RunDir) -> Result<()> {
    let sizes = SplitSizes {
        train: cfg.train,
        dev: cfg.dev,
        test: cfg.test,
        lm_text: cfg.lm_text,
    };
    let data = make_synthetic(cfg.synthetic.clone(), sizes)?;
    write_dataset(dir.file("train.jsonl"), &data.train)?;
    write_dataset(dir.file("dev.jsonl"), &data.dev)?;
    write_dataset(dir.file("test.jsonl"), &data.test)?;
    dir.write("lm_text.txt", format_corpus(&data.lm_text))?;
    dir.write("vocab.txt", LabelVocab::synthetic(cfg.synthetic.num_labels)?.to_file_contents())?;
    let prior = data.task.test_prior.to_table_lm(cfg.prior_lm_eos)?;
    dir.write_json("test_prior_lm.json", &prior)?;
    dir.finish()
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCmdConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub network: NetworkConfig,
    pub training: TrainConfig,
}

/// Reads the data sets named in the partially built config, so missing
/// network dimensions can be filled in from them.
pub fn train_data(train_path: &Path, dev_path: Option<&Path>) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    let tr = read_dataset(train_path).with_context(|| format!("reading dataset {}", train_path.display()))?;
    let dev = match dev_path {
        Some(p) => read_dataset(p).with_context(|| format!("reading dataset {}", p.display()))?,
        None => Vec::new(),
    };
    Ok((tr, dev))
}

pub fn infer_dims(tr: &[Utterance], dev: &[Utterance], vocab: Option<&Path>) -> Result<(usize, usize)> {
    let input_dim = tr
        .iter()
        .flat_map(|u| u.features.first())
        .map(Vec::len)
        .next()
        .context("training set has no frames")?;
    let labels = infer_num_labels(vocab, tr.iter().chain(dev).map(|u| &u.transcript))?;
    Ok((input_dim, labels))
}

pub fn train_cmd(cfg: &TrainCmdConfig, data: (Vec<Utterance>, Vec<Utterance>), exec: Execution, dir: RunDir) -> Result<()> {
    let (tr, dev) = data;
    let params = TransducerParams::init(&cfg.network, cfg.training.seed)?;
    std::fs::create_dir_all(dir.file("checkpoints"))?;
    let mut metrics = String::new();
    let out = train(params, &tr, &dev, &cfg.training, exec, |rec, p| {
        metrics.push_str(&serde_json::to_string(rec)?);
        metrics.push('\n');
        p.to_checkpoint().save(dir.file(&format!("checkpoints/epoch-{:03}.json", rec.epoch)))
    })?;
    out.best.to_checkpoint().save(dir.file("model.json"))?;
    out.last.to_checkpoint().save(dir.file("last.json"))?;
    dir.write("metrics.jsonl", metrics)?;
    let mut lr = String::from("step\tlr\n");
    for (i, v) in out.lr_trace.iter().enumerate() {
        writeln!(lr, "{}\t{v}", i + 1)?;
    }
    dir.write("lr_trace.tsv", lr)?;
    let last = out.log.last();
    dir.write_json(
        "summary.json",
        &json!({
            "best_epoch": out.best_epoch,
            "steps": last.map(|r| r.step),
            "final_train_loss": last.map(|r| r.train_loss),
            "final_dev_loss": last.and_then(|r| r.dev_loss),
        }),
    )?;
    dir.finish()
}

// ---------------------------------------------------------------- decode / eval-wer / tune-scales

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub model: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub fusion: FusionConfig,
    /// Also write every utterance's n-best list to `nbest.json`.
    pub nbest_json: bool,
}

fn hyps_tsv(ids: impl IntoIterator<Item = (String, Vec<usize>, f64)>) -> String {
    let mut out = String::from("id\thyp\tscore\n");
    for (id, labels, score) in ids {
        out.push_str(&format!("{id}\t{}\t{score}\n", render(&labels)));
    }
    out
}

struct Decoded {
    data: Vec<Utterance>,
    results: Vec<DecodeResult>,
}

fn decode_set(
    model: &Option<PathBuf>,
    lm: &Option<PathBuf>,
    data: &Option<PathBuf>,
    fusion: &FusionConfig,
    exec: Execution,
) -> Result<Decoded> {
    fusion.validate()?;
    let model = load_model(required(model, "model")?)?;
    let lm = load_lm(lm.as_deref())?;
    let data = load_data(required(data, "data")?, &model)?;
    let feats: Vec<Vec<Vec<f64>>> = data.iter().map(|u| u.features.clone()).collect();
    let results = decode_batch(&model, lm.as_ref(), fusion, &feats, exec)?;
    Ok(Decoded { data, results })
}

impl Decoded {
    fn tsv(&self) -> String {
        hyps_tsv(self.data.iter().zip(&self.results).map(|(u, r)| (u.id.clone(), r.labels.clone(), r.score)))
    }
}

pub fn decode_cmd(cfg: &DecodeConfig, exec: Execution, dir: RunDir) -> Result<()> {
    let d = decode_set(&cfg.model, &cfg.lm, &cfg.data, &cfg.fusion, exec)?;
    dir.write("hyps.tsv", d.tsv())?;
    if cfg.nbest_json {
        let nbest: Vec<_> = d
            .data
            .iter()
            .zip(&d.results)
            .map(|(u, r)| {
                let list: Vec<_> = r
                    .nbest
                    .iter()
                    .map(|h| json!({"labels": h.labels, "score": h.score}))
                    .collect();
                json!({"id": u.id, "nbest": list})
            })
            .collect();
        dir.write_json("nbest.json", &nbest)?;
    }
    dir.finish()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub model: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub fusion: FusionConfig,
    /// Score an existing `hyps.tsv` instead of decoding.
    pub hyps: Option<PathBuf>,
}

fn read_hyps(path: &Path, data: &[Utterance]) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut by_id = std::collections::HashMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let mut cols = line.split('\t');
        let (Some(id), Some(hyp)) = (cols.next(), cols.next()) else {
            bail!("{}:{}: expected id<TAB>hyp", path.display(), n + 1);
        };
        let labels = hyp
            .split_whitespace()
            .map(|t| t.parse::<usize>().with_context(|| format!("{}:{}: bad label {t:?}", path.display(), n + 1)))
            .collect::<Result<Vec<_>>>()?;
        by_id.insert(id.to_string(), labels);
    }
    data.iter()
        .map(|u| by_id.remove(&u.id).with_context(|| format!("no hypothesis for utterance {}", u.id)))
        .collect()
}

fn report_json(r: &WerReport) -> serde_json::Value {
    json!({
        "wer_percent": r.wer,
        "sub_percent": r.sub_percent,
        "del_percent": r.del_percent,
        "ins_percent": r.ins_percent,
        "len_ratio": r.len_ratio,
        "counts": r.counts,
    })
}

pub fn eval_wer_cmd(cfg: &EvalConfig, exec: Execution, dir: RunDir) -> Result<()> {
    let report = if let Some(h) = &cfg.hyps {
        let data_path = required(&cfg.data, "data")?;
        let data = read_dataset(data_path).with_context(|| format!("reading dataset {}", data_path.display()))?;
        let hyps = read_hyps(h, &data)?;
        let refs: Vec<Vec<usize>> = data.iter().map(|u| u.transcript.clone()).collect();
        wer(&refs, &hyps)?
    } else {
        let d = decode_set(&cfg.model, &cfg.lm, &cfg.data, &cfg.fusion, exec)?;
        dir.write("hyps.tsv", d.tsv())?;
        let refs: Vec<Vec<usize>> = d.data.iter().map(|u| u.transcript.clone()).collect();
        let hyps: Vec<Vec<usize>> = d.results.into_iter().map(|r| r.labels).collect();
        wer(&refs, &hyps)?
    };
    dir.write_json("wer.json", &report_json(&report))?;
    println!(
        "WER {:.2}% (sub {:.1}% del {:.1}% ins {:.1}%)",
        report.wer, report.sub_percent, report.del_percent, report.ins_percent
    );
    dir.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub model: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub fusion: FusionConfig,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            model: None,
            lm: None,
            data: None,
            fusion: FusionConfig::default(),
            betas: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            gammas: vec![0.0, 0.1, 0.2, 0.3, 0.4],
        }
    }
}

pub fn tune_cmd(cfg: &TuneConfig, exec: Execution, dir: RunDir) -> Result<()> {
    ensure!(!cfg.betas.is_empty() && !cfg.gammas.is_empty(), "betas and gammas must be non-empty");
    cfg.fusion.validate()?;
    let model = load_model(required(&cfg.model, "model")?)?;
    let lm = load_lm(cfg.lm.as_deref())?;
    let data = load_data(required(&cfg.data, "data")?, &model)?;
    let res = tune_fusion_scales(&model, lm.as_ref(), &cfg.fusion, &data, &cfg.betas, &cfg.gammas, exec)?;
    dir.write("grid.tsv", res.heatmap_tsv())?;
    let best = res.best_cell();
    dir.write_json(
        "best.json",
        &json!({"beta": best.beta, "gamma": best.gamma, "report": report_json(&best.report)}),
    )?;
    println!("best beta={} gamma={} WER {:.2}%", best.beta, best.gamma, best.report.wer);
    dir.finish()
}

// ---------------------------------------------------------------- ilm-ppl

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IlmPplConfig {
    pub model: Option<PathBuf>,
    /// Dataset with audio; needed for the `avg` variant.
    pub data: Option<PathBuf>,
    /// Text-only corpus.
    pub text: Option<PathBuf>,
    pub variant: IlmVariant,
}

impl Default for IlmPplConfig {
    fn default() -> Self {
        Self {
            model: None,
            data: None,
            text: None,
            variant: IlmVariant::Zero,
        }
    }
}

pub fn ilm_ppl_cmd(cfg: &IlmPplConfig, exec: Execution, dir: RunDir) -> Result<()> {
    let model = load_model(required(&cfg.model, "model")?)?;
    let res = match (&cfg.data, &cfg.text) {
        (Some(d), None) => {
            let data = load_data(d, &model)?;
            let sents: Vec<Vec<usize>> = data.iter().map(|u| u.transcript.clone()).collect();
            let feats: Vec<Vec<Vec<f64>>> = data.iter().map(|u| u.features.clone()).collect();
            ilm_perplexity(&model, cfg.variant, &sents, Some(&feats), exec)?
        }
        (None, Some(t)) => {
            let sents = read_corpus(t).with_context(|| format!("reading corpus {}", t.display()))?;
            check_labels(&sents, model.num_labels())?;
            ilm_perplexity(&model, cfg.variant, &sents, None, exec)
                .with_context(|| format!("{} ILM on a text-only corpus", cfg.variant))?
        }
        _ => bail!("set exactly one of `data` and `text`"),
    };
    dir.write_json(
        "ilm_ppl.json",
        &json!({"variant": cfg.variant, "ppl": res.ppl, "tokens": res.tokens}),
    )?;
    println!("{} ILM perplexity {:.4} over {} tokens", cfg.variant, res.ppl, res.tokens);
    dir.finish()
}

// ---------------------------------------------------------------- lm-train

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmTrainCmdConfig {
    pub text: Option<PathBuf>,
    pub dev_text: Option<PathBuf>,
    pub lm: LmTrainConfig,
}

pub fn read_text(path: &Path) -> Result<Vec<Vec<usize>>> {
    read_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

pub fn lm_train_cmd(cfg: &LmTrainCmdConfig, text: &[Vec<usize>], exec: Execution, dir: RunDir) -> Result<()> {
    check_labels(text, cfg.lm.model.num_labels)?;
    let (lm, history) = train_rnn_lm(text, &cfg.lm, exec)?;
    lm.to_checkpoint().save(dir.file("lm.json"))?;
    let mut tsv = String::from("epoch\ttrain_nll\n");
    for (i, v) in history.iter().enumerate() {
        writeln!(tsv, "{}\t{v}", i + 1)?;
    }
    dir.write("history.tsv", tsv)?;
    let dev_ppl = match &cfg.dev_text {
        Some(p) => {
            let dev = read_text(p)?;
            check_labels(&dev, cfg.lm.model.num_labels)?;
            Some(perplexity(&lm, &dev, true, exec)?)
        }
        None => None,
    };
    dir.write_json(
        "summary.json",
        &json!({"train_ppl": history.last().map(|n| n.exp()), "dev_ppl": dev_ppl}),
    )?;
    dir.finish()
}

pub fn text_labels(text: &[Vec<usize>], vocab: Option<&Path>) -> Result<usize> {
    infer_num_labels(vocab, text)
}

// ---------------------------------------------------------------- dist-sim

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticConfig {
    pub dim: usize,
    pub samples: usize,
    pub seed: u64,
    /// Every coordinate of the initial parameters.
    pub init: f64,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            samples: 256,
            seed: 1,
            init: 2.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistSimConfig {
    pub sim: SimConfig,
    pub objective: QuadraticConfig,
}

pub fn dist_sim_cmd(cfg: &DistSimConfig, dir: RunDir) -> Result<()> {
    let q = &cfg.objective;
    ensure!(q.dim > 0 && q.samples > 0, "objective dim and samples must be positive");
    let obj = Quadratic::random(q.dim, q.samples, q.seed);
    let init = vec![q.init; q.dim];
    let res = simulate(&cfg.sim, &obj, &init)?;
    dir.write("trace.tsv", res.trace_tsv())?;
    dir.write_json(
        "summary.json",
        &json!({
            "steps_per_worker": res.steps_per_worker,
            "total_steps": res.total_steps(),
            "syncs": res.syncs,
            "bytes_read": res.bytes_read,
            "end_time": res.end_time,
            "initial_objective": obj.value(&init),
            "final_objective": obj.value(&res.final_params),
        }),
    )?;
    println!("{} steps, {} syncs", res.total_steps(), res.syncs);
    dir.finish()
}
