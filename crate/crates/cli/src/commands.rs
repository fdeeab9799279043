use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use wsc_core::depmask::{build_word_mask, MaskMatrix};
use wsc_core::encoder::{expected_shapes, Model};
use wsc_core::evaluator::{evaluate, size_curve, Corpus, CurveRow, Report};
use wsc_core::schema::{candidate_inputs, find_overlaps, generate_candidates, load_schemas, ModelBundle, ParseIndex};
use wsc_core::seeds;
use wsc_core::synth;
use wsc_core::tokenizer::{encode_pair, word_tokenize, Vocab};
use wsc_core::trainer::{
    corpus_digest, decode_checkpoint, fine_tune, load_checkpoint, make_training_examples, save_checkpoint,
    CheckpointMeta, EpochLog,
};

use crate::config::{require, RunConfig};
use crate::error::{CliError, Result};

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes to stdout; a closed pipe downstream is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

#[derive(Serialize)]
struct Resolved<'a> {
    config: &'a RunConfig,
    config_digest: String,
}

impl<'a> Resolved<'a> {
    fn new(config: &'a RunConfig) -> Self {
        Resolved {
            config,
            config_digest: config.digest(),
        }
    }
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocab> {
    Ok(Vocab::load(require("vocab", cfg.vocab.as_ref())?)?)
}

/// Fails with the first tensor or setting where `model` disagrees with the
/// architecture `cfg` describes.
pub fn check_compatible(model: &Model, cfg: &RunConfig, vocab_size: usize) -> Result<()> {
    let plan = cfg.mask_plan()?;
    let want = cfg.encoder_config(vocab_size);
    let expected = expected_shapes(&want, plan.kind());
    let tensors = model.params.tensors();
    for (name, shape) in &expected {
        match tensors.get(name) {
            None => return Err(CliError::Mismatch(format!("checkpoint lacks tensor {name}"))),
            Some(t) if t.dims() != shape.as_slice() => {
                return Err(CliError::Mismatch(format!(
                    "tensor {name} has shape {:?}, config expects {shape:?}",
                    t.dims()
                )))
            }
            Some(_) => {}
        }
    }
    if let Some(name) = tensors.keys().find(|n| !expected.contains_key(*n)) {
        return Err(CliError::Mismatch(format!("unexpected tensor {name}")));
    }
    let have = &model.config;
    let settings = [
        ("num_heads", have.num_heads != want.num_heads),
        ("scale_mode", have.scale_mode != want.scale_mode),
        ("mask_mode", have.mask_mode != want.mask_mode),
        ("layer_norm_eps", have.layer_norm_eps != want.layer_norm_eps),
    ];
    if let Some((key, _)) = settings.iter().find(|(_, differs)| *differs) {
        return Err(CliError::Mismatch(format!("{key} differs")));
    }
    if model.plan != plan {
        return Err(CliError::Mismatch(format!("checkpoint plan {}, config plan {plan}", model.plan)));
    }
    Ok(())
}

fn initial_model(cfg: &RunConfig, vocab: &Vocab) -> Result<Model> {
    match &cfg.init_checkpoint {
        Some(path) => {
            let (model, _) = load_checkpoint(require("init_checkpoint", Some(path))?)?;
            check_compatible(&model, cfg, vocab.len())?;
            Ok(model)
        }
        None => {
            let mut rng = seeds::rng(cfg.seed, seeds::INIT);
            Ok(Model::init(cfg.encoder_config(vocab.len()), cfg.mask_plan()?, &mut rng)?)
        }
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    epoch: &'a EpochLog,
}

/// Fine-tunes on the training corpus; writes the checkpoint, the JSON-lines
/// log and the resolved config.
pub fn train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let vocab = load_vocab(cfg)?;
    let corpus = load_schemas(require("corpus", cfg.corpus.as_ref())?)?;
    let parses = ParseIndex::load(require("parses", cfg.parses.as_ref())?)?;
    let init = initial_model(cfg, &vocab)?;
    let examples = make_training_examples(&corpus, &vocab, &parses, cfg.max_seq_len)?;
    log::info!("training on {} examples from {} schemas", examples.len(), corpus.len());
    let (model, epochs) = fine_tune(&init, &examples, &cfg.hyperparams())?;

    let meta = CheckpointMeta {
        step: epochs.last().map_or(0, |e| e.step),
        seed: cfg.seed,
        corpus_digest: corpus_digest(&corpus)?,
    };
    let ckpt = cfg.checkpoint_path();
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    save_checkpoint(&model, &meta, &ckpt)?;

    let digest = cfg.digest();
    let mut log_text = String::new();
    for e in &epochs {
        log_text.push_str(&serde_json::to_string(&LogLine {
            config_digest: &digest,
            epoch: e,
        })?);
        log_text.push('\n');
    }
    write_file(&cfg.out_dir.join("train_log.jsonl"), log_text)?;
    let resolved = Resolved::new(cfg);
    write_json(&cfg.out_dir.join("resolved_config.json"), &resolved)?;
    emit(&(serde_json::to_string_pretty(&resolved)? + "\n"))?;
    if let Some(last) = epochs.last() {
        log::info!(
            "wrote {} after {} steps, final loss {:.4}, train accuracy {:.3}",
            ckpt.display(),
            last.step,
            last.loss,
            last.train_accuracy
        );
    }
    Ok(())
}

fn load_eval_corpus(cfg: &RunConfig) -> Result<(Vec<wsc_core::schema::Schema>, ParseIndex)> {
    let (corpus, parses) = cfg.eval_paths();
    let key = if cfg.eval_corpus.is_some() { ("eval_corpus", "eval_parses") } else { ("corpus", "parses") };
    let schemas = load_schemas(require(key.0, corpus)?)?;
    let parses = ParseIndex::load(require(key.1, parses)?)?;
    Ok((schemas, parses))
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a RunConfig,
    report: &'a Report,
}

/// Evaluates the checkpoint; writes `report.json` and `report.txt`.
pub fn eval(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let vocab = load_vocab(cfg)?;
    let (schemas, parses) = load_eval_corpus(cfg)?;
    let ckpt = cfg.checkpoint_path();
    let path = require("checkpoint", Some(&ckpt))?;
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (model, _) = decode_checkpoint(&bytes)?;
    check_compatible(&model, cfg, vocab.len())?;

    let mut report = evaluate(ModelBundle { model: &model, vocab: &vocab }, &schemas, &parses)?;
    report.config_digest = Some(cfg.digest());
    report.checkpoint_digest = Some(hex::encode(Sha256::digest(&bytes)));
    write_json(&cfg.out_dir.join("report.json"), &ReportFile { config: cfg, report: &report })?;
    let text = report.to_table();
    write_file(&cfg.out_dir.join("report.txt"), &text)?;
    emit(&text)?;
    Ok(())
}

/// 0/1 grid with row labels and column indices.
pub fn render_grid(labels: &[String], mask: &MaskMatrix) -> String {
    let n = mask.rows();
    let cw = n.saturating_sub(1).to_string().len();
    let iw = cw;
    let lw = labels.iter().map(|l| l.chars().count()).max().unwrap_or(0);
    let mut out = format!("{:w$}", "", w = iw + lw + 2);
    let cols: Vec<String> = (0..n).map(|j| format!("{j:>cw$}")).collect();
    out.push_str(&cols.join(" "));
    out.push('\n');
    for (i, label) in labels.iter().enumerate() {
        let bits: Vec<String> = mask.row(i).iter().map(|b| format!("{b:>cw$}")).collect();
        out.push_str(&format!("{i:>iw$} {label:<lw$} {}\n", bits.join(" ")));
    }
    out
}

/// Prints the word- and token-level masks of each candidate sentence.
pub fn mask(cfg: &RunConfig, id: &str) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let schemas = load_schemas(require("corpus", cfg.corpus.as_ref())?)?;
    let parses = ParseIndex::load(require("parses", cfg.parses.as_ref())?)?;
    let schema = schemas
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| CliError::UnknownSchema(id.to_string()))?;
    let mut out = String::new();
    for sentence in &generate_candidates(schema).0 {
        let parse = parses.get(id, sentence.candidate)?;
        let (enc, tokens) = candidate_inputs(id, sentence, parse, &vocab, cfg.max_seq_len)?;
        let words = build_word_mask(parse);
        out.push_str(&format!(
            "candidate {}: {} | {}\n\nwords ({n}x{n})\n",
            sentence.candidate,
            sentence.seg_a.join(" "),
            sentence.seg_b.join(" "),
            n = words.rows()
        ));
        out.push_str(&render_grid(&parse.words, &words));
        out.push_str(&format!("\ntokens ({n}x{n})\n", n = tokens.rows()));
        out.push_str(&render_grid(&enc.pieces, &tokens));
        out.push('\n');
    }
    emit(&out)?;
    Ok(())
}

#[derive(Serialize)]
struct CurveFile<'a> {
    config: &'a RunConfig,
    config_digest: String,
    rows: &'a [CurveRow],
}

/// Data-size curve; writes `curve.tsv` and `curve.json`.
pub fn curve(cfg: &RunConfig, fractions: &[f64]) -> Result<()> {
    cfg.validate()?;
    let vocab = load_vocab(cfg)?;
    let train_schemas = load_schemas(require("corpus", cfg.corpus.as_ref())?)?;
    let train_parses = ParseIndex::load(require("parses", cfg.parses.as_ref())?)?;
    let (eval_schemas, eval_parses) = load_eval_corpus(cfg)?;
    let init = initial_model(cfg, &vocab)?;
    let rows = size_curve(
        &init,
        &vocab,
        Corpus {
            schemas: &train_schemas,
            parses: &train_parses,
        },
        Corpus {
            schemas: &eval_schemas,
            parses: &eval_parses,
        },
        fractions,
        &cfg.hyperparams(),
    )?;

    let digest = cfg.digest();
    let mut tsv = String::from("fraction\ttrain_size");
    if let Some(first) = rows.first() {
        for (h, _) in first.report.metrics() {
            tsv.push('\t');
            tsv.push_str(h);
        }
    }
    tsv.push_str("\tconfig_digest\n");
    for row in &rows {
        tsv.push_str(&format!("{}\t{}", row.fraction, row.train_size));
        for (_, m) in row.report.metrics() {
            tsv.push('\t');
            tsv.push_str(&m.render());
        }
        tsv.push_str(&format!("\t{digest}\n"));
    }
    write_file(&cfg.out_dir.join("curve.tsv"), &tsv)?;
    write_json(
        &cfg.out_dir.join("curve.json"),
        &CurveFile {
            config: cfg,
            config_digest: digest,
            rows: &rows,
        },
    )?;
    emit(&tsv)?;
    Ok(())
}

/// Prints the encoding of a sentence pair, one token per line.
pub fn tokenize(cfg: &RunConfig, a: &str, b: &str) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let words = |t: &str| -> Vec<String> { word_tokenize(t).into_iter().map(|(w, _)| w).collect() };
    let enc = encode_pair(&words(a), &words(b), &vocab, cfg.max_seq_len)?;
    let mut out = String::from("pos\tpiece\tid\tsegment\tword\n");
    for i in 0..enc.len() {
        let word = enc.alignment[i].map_or("-".to_string(), |w| w.to_string());
        out.push_str(&format!(
            "{i}\t{}\t{}\t{}\t{word}\n",
            enc.pieces[i], enc.token_ids[i], enc.segment_ids[i]
        ));
    }
    emit(&out)?;
    Ok(())
}

/// Prints `id_a<TAB>id_b` for every pair with identical words. Returns the
/// number of pairs.
pub fn overlap_check(a: &Path, b: &Path) -> Result<usize> {
    let left = load_schemas(require("first corpus", Some(&a.to_path_buf()))?)?;
    let right = load_schemas(require("second corpus", Some(&b.to_path_buf()))?)?;
    let pairs = find_overlaps(&left, &right);
    let text: String = pairs.iter().map(|(x, y)| format!("{x}\t{y}\n")).collect();
    emit(&text)?;
    eprintln!("{} overlapping pair(s)", pairs.len());
    Ok(pairs.len())
}

/// Writes a synthetic corpus, its parses, a vocabulary and a config that
/// points at them.
pub fn synth(cfg: &RunConfig, count: usize, paired: bool) -> Result<PathBuf> {
    let corpus = synth::generate(count, cfg.seed, paired)?;
    let dir = &cfg.out_dir;
    let paths = [dir.join("vocab.txt"), dir.join("corpus.jsonl"), dir.join("parses.conllu")];
    write_file(&paths[0], corpus.vocab.to_text())?;
    write_file(&paths[1], wsc_core::schema::to_jsonl(&corpus.schemas)?)?;
    write_file(&paths[2], corpus.conllu())?;
    let generated = RunConfig {
        vocab: Some(paths[0].clone()),
        corpus: Some(paths[1].clone()),
        parses: Some(paths[2].clone()),
        ..cfg.clone()
    };
    let path = dir.join("config.json");
    write_file(&path, generated.to_json())?;
    emit(&format!("{}\n", path.display()))?;
    Ok(path)
}
