use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;
use sslm_core::corpus::{is_letter, load_corpus};
use sslm_core::eval::{avg_segment_length, load_gold, mbi_scores, mi_scores, parse_predictions, Averaging, SegScores};
use sslm_core::lm::CHECKPOINT_KIND as LM_KIND;
use sslm_core::nn::checkpoint::MAGIC;
use sslm_core::nn::Checkpoint;
use sslm_core::segmenters::{entropy_boundaries, BpeModel, UlmConfig, UlmModel};
use sslm_core::sslm::CHECKPOINT_KIND as SSLM_KIND;
use sslm_core::train::{init_rng, lm_bpc, sslm_bpc, train_lm, train_sslm};
use sslm_core::{
    BatchMode, CharSequence, Corpus, Error, LanguageModel, Lexicon, RunConfig, Segmentation, Span, Sslm,
    TokenKind, Tokenizer,
};

use crate::{BpeArgs, BuildLexiconArgs, EntropyArgs, EvalArgs, Format, SegmentArgs, TrainArgs, UlmArgs};

pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) => 1,
            e if e.is_numeric() => 3,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError {
        code: 2,
        message: format!("{}: {e}", path.display()),
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} file {} does not exist", path.display())))
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn open_output(path: Option<&PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(|e| io_error(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Maximal runs of letters in a line, as character offsets and text.
fn letter_runs(line: &str) -> Vec<(Span, String)> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !is_letter(chars[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && is_letter(chars[i]) {
            i += 1;
        }
        out.push((Span::new(start, i), chars[start..i].iter().collect()));
    }
    out
}

fn write_segmentation(out: &mut dyn Write, seg: &Segmentation, format: Format) -> io::Result<()> {
    match format {
        Format::Hyphen => writeln!(out, "{}", seg.hyphenated()),
        Format::Json => writeln!(out, "{}", json!({ "word": seg.word, "cuts": seg.cuts })),
    }
}

pub fn build_lexicon(a: BuildLexiconArgs) -> CliResult {
    if a.size == 0 {
        return Err(CliError::usage("--size must be at least 1"));
    }
    if a.max_len == 0 {
        return Err(CliError::usage("--max-len must be at least 1"));
    }
    require_file(&a.corpus, "corpus")?;
    let corpus = load_corpus(&a.corpus, None, a.min_char_count)?;
    let lex = Lexicon::build(&corpus.lines, &corpus.vocab, a.size, a.max_len)?;
    lex.save(&a.out)?;
    log::info!("{} lexicon entries written to {}", lex.len(), a.out.display());
    Ok(())
}

fn run_config(a: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = match &a.preset {
        Some(name) => RunConfig::preset(name).ok_or_else(|| {
            CliError::usage(format!(
                "unknown preset {name:?}; known presets: {}",
                RunConfig::preset_names().join(", ")
            ))
        })?,
        None => RunConfig::default(),
    };
    if let Some(path) = &a.config {
        require_file(path, "config")?;
        cfg.apply_text(&read_text(path)?)?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> CliResult {
    let cfg = run_config(&a)?;
    require_file(&a.train, "training")?;
    require_file(&a.valid, "validation")?;
    let train = load_corpus(&a.train, None, cfg.min_char_count)?;
    let valid = load_corpus(&a.valid, Some(&train.vocab), 1)?;
    let mut log = open_output(a.log.as_ref())?;
    let cfg_text = cfg.to_text();
    for line in cfg_text.lines() {
        writeln!(log, "# {line}").map_err(|e| io_error(Path::new("training log"), e))?;
    }
    let opts = cfg.train_options();
    let mut rng = init_rng(cfg.seed);
    let meta = vec![
        ("mode".to_string(), cfg.mode.to_string()),
        ("seq_len".to_string(), cfg.seq_len.to_string()),
        ("eval_batch".to_string(), cfg.eval_batch.to_string()),
        ("config".to_string(), cfg_text.clone()),
    ];
    let (report, ck) = match cfg.model.token_kind() {
        None => {
            let lexicon = match &a.lexicon {
                Some(p) => {
                    require_file(p, "lexicon")?;
                    Lexicon::load(p)?
                }
                None if cfg.lexicon_size == 0 => Lexicon::empty(cfg.max_seg_len),
                None => Lexicon::build(&train.lines, &train.vocab, cfg.lexicon_size, cfg.max_seg_len)?,
            };
            let mut model = Sslm::new(train.vocab.clone(), lexicon, cfg.sslm_config(), &mut rng)?;
            let report = train_sslm(&mut model, &train, &valid, &opts, &mut log)?;
            (report, model.to_checkpoint(&meta))
        }
        Some(kind) => {
            let tokenizer = match kind {
                TokenKind::Char => Tokenizer::Char,
                TokenKind::Bpe => Tokenizer::Bpe(BpeModel::train(&train, cfg.bpe_merges)?.0),
                TokenKind::Ulm => {
                    let ucfg = UlmConfig {
                        target_vocab: cfg.ulm_vocab,
                        ..UlmConfig::default()
                    };
                    Tokenizer::Ulm(UlmModel::train(&train, &ucfg)?.0)
                }
            };
            let mut model = LanguageModel::new(train.vocab.clone(), tokenizer, &train.lines, cfg.lm_config(), &mut rng)?;
            let report = train_lm(&mut model, &train, &valid, &opts, &mut log)?;
            (report, model.to_checkpoint(&meta))
        }
    };
    log.flush().map_err(|e| io_error(Path::new("training log"), e))?;
    ck.save(&a.out)?;
    eprintln!(
        "status={} best_epoch={} best_valid_bpc={:.6}",
        report.stop, report.best_epoch, report.best_valid_bpc
    );
    Ok(())
}

/// Anything that can segment words.
enum Segmenter {
    Sslm { model: Box<Sslm>, mode: BatchMode },
    Bpe(BpeModel),
    Ulm(UlmModel),
}

fn checkpoint_mode(ck: &Checkpoint) -> CliResult<BatchMode> {
    Ok(ck.meta("mode").unwrap_or("word-level").parse()?)
}

fn load_segmenter(path: &Path) -> CliResult<Segmenter> {
    require_file(path, "model")?;
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    if bytes.starts_with(MAGIC) {
        let ck = Checkpoint::from_bytes(&bytes)?;
        return match ck.kind.as_str() {
            SSLM_KIND => Ok(Segmenter::Sslm {
                mode: checkpoint_mode(&ck)?,
                model: Box::new(Sslm::from_checkpoint(&ck)?),
            }),
            other => Err(CliError::usage(format!(
                "{} holds a {other} checkpoint, which does not segment; use `baseline entropy` for language models",
                path.display()
            ))),
        };
    }
    let text = String::from_utf8(bytes).map_err(|_| CliError {
        code: 2,
        message: format!("{} is neither a checkpoint nor a model file", path.display()),
    })?;
    if text.starts_with("#bpe") {
        Ok(Segmenter::Bpe(BpeModel::from_file_string(&text)?))
    } else if text.starts_with("#ulm") {
        Ok(Segmenter::Ulm(UlmModel::from_file_string(&text)?))
    } else {
        Err(CliError {
            code: 2,
            message: format!("{} is neither a checkpoint nor a model file", path.display()),
        })
    }
}

impl Segmenter {
    /// Segments words each in isolation.
    fn words(&self, words: &[String]) -> CliResult<Vec<Segmentation>> {
        match self {
            Segmenter::Bpe(m) => Ok(words.iter().map(|w| m.segment(w)).collect()),
            Segmenter::Ulm(m) => Ok(words.iter().map(|w| m.segment(w)).collect()),
            Segmenter::Sslm { model, .. } => {
                let seqs: Vec<CharSequence> = words
                    .iter()
                    .map(|w| {
                        let ids = model.vocab.encode(w);
                        let n = ids.len();
                        CharSequence {
                            ids,
                            spans: if n == 0 { vec![] } else { vec![Span::new(0, n)] },
                        }
                    })
                    .collect();
                let mut out = Vec::with_capacity(words.len());
                for (chunk, ws) in seqs.chunks(64).zip(words.chunks(64)) {
                    let refs: Vec<&CharSequence> = chunk.iter().collect();
                    for (starts, w) in model.viterbi_starts(&refs, None)?.iter().zip(ws) {
                        let cuts = starts.iter().copied().filter(|&s| s > 0).collect();
                        out.push(Segmentation::new(w.clone(), cuts)?);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Segments the letter words of a line.
    fn line(&self, line: &str) -> CliResult<Vec<Segmentation>> {
        let runs = letter_runs(line);
        match self {
            Segmenter::Sslm {
                model,
                mode: BatchMode::LongRange,
            } => {
                let seq = CharSequence::from_text(line, &model.vocab);
                if seq.is_empty() {
                    return Ok(vec![]);
                }
                let starts = model.viterbi_starts(&[&seq], None)?.pop().unwrap_or_default();
                runs.into_iter()
                    .map(|(span, word)| {
                        let cuts = starts
                            .iter()
                            .filter(|&&s| s > span.start && s < span.end)
                            .map(|&s| s - span.start)
                            .collect();
                        Ok(Segmentation::new(word, cuts)?)
                    })
                    .collect()
            }
            _ => {
                let words: Vec<String> = runs.into_iter().map(|(_, w)| w).collect();
                self.words(&words)
            }
        }
    }
}

pub fn segment(a: SegmentArgs) -> CliResult {
    let seg = load_segmenter(&a.model)?;
    require_file(&a.input, "input")?;
    let text = read_text(&a.input)?;
    let mut out = open_output(a.output.as_ref())?;
    for line in text.lines() {
        for s in seg.line(line)? {
            write_segmentation(&mut out, &s, a.format).map_err(|e| io_error(Path::new("output"), e))?;
        }
    }
    out.flush().map_err(|e| io_error(Path::new("output"), e))
}

fn print_scores(out: &mut dyn Write, name: &str, s: &SegScores) -> io::Result<()> {
    writeln!(out, "{name}_precision\t{:.6}", s.precision)?;
    writeln!(out, "{name}_recall\t{:.6}", s.recall)?;
    writeln!(out, "{name}_f1\t{:.6}", s.f1)
}

fn model_bpc(path: &Path, text_path: &Path) -> CliResult<f64> {
    require_file(path, "model")?;
    require_file(text_path, "BPC text")?;
    let ck = Checkpoint::load(path)?;
    let mode = checkpoint_mode(&ck)?;
    let seq_len: usize = ck.meta("seq_len").map_or(Ok(120), |_| ck.require_parsed("seq_len"))?;
    let batch: usize = ck.meta("eval_batch").map_or(Ok(64), |_| ck.require_parsed("eval_batch"))?;
    match ck.kind.as_str() {
        SSLM_KIND => {
            let m = Sslm::from_checkpoint(&ck)?;
            let corpus = Corpus::from_text(&read_text(text_path)?, Some(&m.vocab), 1);
            Ok(sslm_bpc(&m, &corpus, mode, seq_len, batch)?)
        }
        LM_KIND => {
            let m = LanguageModel::from_checkpoint(&ck)?;
            let corpus = Corpus::from_text(&read_text(text_path)?, Some(&m.vocab), 1);
            Ok(lm_bpc(&m, &corpus, mode, batch)?)
        }
        other => Err(CliError {
            code: 2,
            message: format!("unknown checkpoint kind {other}"),
        }),
    }
}

pub fn eval(a: EvalArgs) -> CliResult {
    if a.gold.is_none() && a.bpc.is_none() {
        return Err(CliError::usage("nothing to evaluate: give --gold and/or --bpc"));
    }
    let avg: Averaging = a.averaging.parse()?;
    let mut out = open_output(None)?;
    let w = |e| io_error(Path::new("stdout"), e);
    if let Some(gold_path) = &a.gold {
        require_file(gold_path, "gold")?;
        let gold = load_gold(gold_path, a.canonical, a.max_substitution_rate)?;
        let pred = match (&a.predictions, &a.model) {
            (Some(p), _) => {
                require_file(p, "predictions")?;
                parse_predictions(&read_text(p)?)
            }
            (None, Some(m)) => {
                let words: Vec<String> = gold.iter().map(|g| g.word.clone()).collect();
                load_segmenter(m)?.words(&words)?
            }
            (None, None) => return Err(CliError::usage("--gold needs --predictions or --model")),
        };
        print_scores(&mut out, "mi", &mi_scores(&pred, &gold, avg)?).map_err(w)?;
        print_scores(&mut out, "mbi", &mbi_scores(&pred, &gold, avg)?).map_err(w)?;
        writeln!(out, "avg_segment_length\t{:.6}", avg_segment_length(&pred)?).map_err(w)?;
        writeln!(out, "gold_avg_segment_length\t{:.6}", avg_segment_length(&gold)?).map_err(w)?;
    }
    if let Some(text) = &a.bpc {
        let m = a
            .model
            .as_ref()
            .ok_or_else(|| CliError::usage("--bpc needs --model with a language-model checkpoint"))?;
        writeln!(out, "bpc\t{:.6}", model_bpc(m, text)?).map_err(w)?;
    }
    out.flush().map_err(w)
}

pub fn baseline_bpe(a: BpeArgs) -> CliResult {
    require_file(&a.corpus, "corpus")?;
    let corpus = load_corpus(&a.corpus, None, 1)?;
    let (model, _) = BpeModel::train(&corpus, a.merges)?;
    model.save(&a.out)?;
    log::info!("{} merges written to {}", model.merges.len(), a.out.display());
    Ok(())
}

pub fn baseline_ulm(a: UlmArgs) -> CliResult {
    if a.vocab == 0 || a.max_piece_len == 0 {
        return Err(CliError::usage("--vocab and --max-piece-len must be positive"));
    }
    require_file(&a.corpus, "corpus")?;
    let corpus = load_corpus(&a.corpus, None, 1)?;
    let cfg = UlmConfig {
        target_vocab: a.vocab,
        max_piece_len: a.max_piece_len,
        seed_size: a.seed_size,
        ..UlmConfig::default()
    };
    let (model, _) = UlmModel::train(&corpus, &cfg)?;
    model.save(&a.out)?;
    Ok(())
}

pub fn baseline_entropy(a: EntropyArgs) -> CliResult {
    let criterion = a.criterion.parse()?;
    let scope = a.scope.parse()?;
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.input, "input")?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    if ck.kind != LM_KIND {
        return Err(CliError::usage("entropy segmentation needs a char-lm checkpoint"));
    }
    let lm = LanguageModel::from_checkpoint(&ck)?;
    if lm.kind() != TokenKind::Char {
        return Err(CliError::usage("entropy segmentation needs a char-lm checkpoint"));
    }
    let text = read_text(&a.input)?;
    let mut out = open_output(a.output.as_ref())?;
    for line in text.lines() {
        let runs = letter_runs(line);
        if runs.is_empty() {
            continue;
        }
        let seq = CharSequence::from_text(line, &lm.vocab);
        let profile = lm.entropy_profile(&seq)?;
        for (span, word) in runs {
            let cuts = entropy_boundaries(&profile, span, criterion, scope);
            let seg = Segmentation::new(word, cuts)?;
            write_segmentation(&mut out, &seg, a.format).map_err(|e| io_error(Path::new("output"), e))?;
        }
    }
    out.flush().map_err(|e| io_error(Path::new("output"), e))
}
