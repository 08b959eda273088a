//! Training loops and the plateau schedule shared by every model.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{concat_stream, long_range_batches, word_level_batches, BatchMode, CharSequence, Corpus, EOS_ID};
use crate::error::{Error, Result};
use crate::eval::bpc;
use crate::lm::LanguageModel;
use crate::nn::{adam_step, AdamConfig, Dropout, Graph, OptState, ParamSet, StateValue};
use crate::sslm::Sslm;

/// Learning-rate halving and early stopping driven by validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub halve_after: usize,
    pub stop_after: usize,
    pub max_epochs: usize,
    best: f64,
    since_best: usize,
    epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleStep {
    pub improved: bool,
    pub halve_lr: bool,
    pub stop: Option<StopReason>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::EarlyStopped => "early-stopped",
            StopReason::MaxEpochs => "max-epochs",
        })
    }
}

impl Schedule {
    pub fn new(halve_after: usize, stop_after: usize, max_epochs: usize) -> Self {
        Schedule {
            halve_after,
            stop_after,
            max_epochs,
            best: f64::INFINITY,
            since_best: 0,
            epochs: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch's validation loss. The rate halves each time the
    /// run of non-improving epochs reaches a multiple of `halve_after`.
    pub fn observe(&mut self, valid: f64) -> ScheduleStep {
        self.epochs += 1;
        let improved = valid < self.best;
        if improved {
            self.best = valid;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        let halve_lr = !improved && self.halve_after > 0 && self.since_best % self.halve_after == 0;
        let stop = if self.stop_after > 0 && self.since_best >= self.stop_after {
            Some(StopReason::EarlyStopped)
        } else if self.epochs >= self.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        };
        ScheduleStep { improved, halve_lr, stop }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub mode: BatchMode,
    pub batch_size: usize,
    pub seq_len: usize,
    pub adam: AdamConfig,
    pub clip: f64,
    pub dropout: f64,
    pub halve_after: usize,
    pub stop_after: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Sequences per forward pass during evaluation.
    pub eval_batch: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            mode: BatchMode::WordLevel,
            batch_size: 16,
            seq_len: 120,
            adam: AdamConfig::default(),
            clip: 1.0,
            dropout: 0.2,
            halve_after: 3,
            stop_after: 6,
            max_epochs: 50,
            seed: 1,
            eval_batch: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_bpc: f64,
    pub valid_bpc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_bpc: f64,
    pub stop: StopReason,
}

/// Random streams derived from the run seed.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dropout_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(1))
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(2))
}

struct Ctx {
    opt: OptState,
    dropout: Dropout,
    shuffle: ChaCha8Rng,
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("training log", e)
}

/// Runs epochs until the schedule stops, keeping the parameters of the best
/// validation epoch. `epoch` returns `(summed nats, characters)` for the
/// training pass; `valid` returns validation BPC.
fn drive<M>(
    model: &mut M,
    params: fn(&mut M) -> &mut ParamSet,
    opts: &TrainOptions,
    log: &mut dyn Write,
    mut epoch: impl FnMut(&mut M, &mut Ctx) -> Result<(f64, usize)>,
    valid: impl Fn(&M) -> Result<f64>,
) -> Result<TrainReport> {
    if opts.max_epochs == 0 {
        return Err(Error::InvalidArgument("max_epochs must be positive".into()));
    }
    let mut ctx = Ctx {
        opt: OptState::new(params(model), opts.adam),
        dropout: Dropout::new(opts.dropout, dropout_rng(opts.seed)),
        shuffle: shuffle_rng(opts.seed),
    };
    let mut schedule = Schedule::new(opts.halve_after, opts.stop_after, opts.max_epochs);
    let mut best_params = params(model).clone();
    let mut best_epoch = 0;
    let mut records = Vec::new();
    loop {
        let e = records.len() + 1;
        let lr = ctx.opt.config.lr;
        let (nats, chars) = epoch(model, &mut ctx)?;
        let train_bpc = bpc(-nats, chars)?;
        let valid_bpc = valid(model)?;
        if !valid_bpc.is_finite() {
            return Err(Error::NonFinite {
                op: "validation BPC".into(),
            });
        }
        writeln!(log, "{e}\ttrain\t{train_bpc:.6}\t{lr}").map_err(io_err)?;
        writeln!(log, "{e}\tvalid\t{valid_bpc:.6}\t{lr}").map_err(io_err)?;
        log::info!("epoch {e}: train {train_bpc:.4} valid {valid_bpc:.4} lr {lr}");
        records.push(EpochRecord {
            epoch: e,
            train_bpc,
            valid_bpc,
            lr,
        });
        let step = schedule.observe(valid_bpc);
        if step.improved {
            best_params = params(model).clone();
            best_epoch = e;
        }
        if step.halve_lr {
            ctx.opt.config.lr *= 0.5;
        }
        if let Some(stop) = step.stop {
            *params(model) = best_params;
            writeln!(log, "# best_epoch={best_epoch}\tbest_valid_bpc={:.6}", schedule.best()).map_err(io_err)?;
            writeln!(log, "# status={stop}").map_err(io_err)?;
            return Ok(TrainReport {
                epochs: records,
                best_epoch,
                best_valid_bpc: schedule.best(),
                stop,
            });
        }
    }
}

fn letter_words(corpus: &Corpus, what: &str) -> Result<Vec<CharSequence>> {
    let words = corpus.words();
    if words.is_empty() {
        return Err(Error::InvalidArgument(format!("the {what} corpus has no words")));
    }
    Ok(words)
}

fn sslm_params(m: &mut Sslm) -> &mut ParamSet {
    &mut m.params
}

fn lm_params(m: &mut LanguageModel) -> &mut ParamSet {
    &mut m.params
}

/// Natural-log likelihood of `lines` under the SSLM. Each line starts from
/// a zero state and is cut into `window`-character pieces with the state
/// carried across them, so segments never span a window edge.
pub fn sslm_logprob(model: &Sslm, lines: &[CharSequence], window: Option<usize>, batch: usize) -> Result<f64> {
    let win = window.unwrap_or(usize::MAX).max(1);
    let mut total = 0.0;
    for chunk in lines.chunks(batch.max(1)) {
        let mut state = model.zero_state(chunk.len());
        for w in 0.. {
            let lo = win.saturating_mul(w);
            let live: Vec<usize> = (0..chunk.len()).filter(|&i| chunk[i].len() > lo).collect();
            if live.is_empty() {
                break;
            }
            let pieces: Vec<CharSequence> = live
                .iter()
                .map(|&i| {
                    let ids = &chunk[i].ids;
                    let hi = lo.saturating_add(win).min(ids.len());
                    CharSequence::new(ids[lo..hi].to_vec(), &model.vocab)
                })
                .collect();
            let refs: Vec<&CharSequence> = pieces.iter().collect();
            let init = state.select_rows(&live);
            let (lps, fin) = model.log_likelihoods(&refs, Some(&init), true)?;
            total += lps.iter().sum::<f64>();
            state.assign_rows(&live, &fin.expect("final state requested"));
        }
    }
    Ok(total)
}

/// Validation BPC of the SSLM: over letter words in word-level mode, over
/// whole lines otherwise.
pub fn sslm_bpc(model: &Sslm, corpus: &Corpus, mode: BatchMode, seq_len: usize, batch: usize) -> Result<f64> {
    match mode {
        BatchMode::WordLevel => {
            let words = letter_words(corpus, "evaluation")?;
            let chars = words.iter().map(|w| w.len()).sum();
            bpc(sslm_logprob(model, &words, None, batch)?, chars)
        }
        BatchMode::LongRange => bpc(
            sslm_logprob(model, &corpus.lines, Some(seq_len), batch)?,
            corpus.num_chars(),
        ),
    }
}

/// Trains the SSLM, writing one `epoch\tsplit\tbpc\tlr` line per split and
/// epoch to `log`. The best validation parameters are left in `model`.
pub fn train_sslm(
    model: &mut Sslm,
    train: &Corpus,
    valid: &Corpus,
    opts: &TrainOptions,
    log: &mut dyn Write,
) -> Result<TrainReport> {
    let valid_fn = |m: &Sslm| sslm_bpc(m, valid, opts.mode, opts.seq_len, opts.eval_batch);
    match opts.mode {
        BatchMode::WordLevel => {
            let words = letter_words(train, "training")?;
            drive(model, sslm_params, opts, log, |m, ctx| {
                let batches = word_level_batches(&words, opts.batch_size, &mut ctx.shuffle)?;
                let (mut nats, mut chars) = (0.0, 0);
                for b in &batches {
                    let refs: Vec<&CharSequence> = b.sequences.iter().collect();
                    let (loss, mut grads, _) = m.nll_loss(&refs, None, false, Some(&mut ctx.dropout))?;
                    adam_step(&mut m.params, &mut grads, &mut ctx.opt, opts.clip)?;
                    nats += loss * b.num_chars() as f64;
                    chars += b.num_chars();
                }
                Ok((nats, chars))
            }, valid_fn)
        }
        BatchMode::LongRange => {
            let stream = concat_stream(&train.lines, &train.vocab);
            let batches = long_range_batches(&stream, &train.vocab, opts.batch_size, opts.seq_len)?;
            drive(model, sslm_params, opts, log, |m, ctx| {
                let (mut nats, mut chars) = (0.0, 0);
                let mut state: Option<StateValue> = None;
                for b in &batches {
                    let refs: Vec<&CharSequence> = b.sequences.iter().collect();
                    let init = if b.carryover { state.as_ref() } else { None };
                    let (loss, mut grads, next) = m.nll_loss(&refs, init, true, Some(&mut ctx.dropout))?;
                    adam_step(&mut m.params, &mut grads, &mut ctx.opt, opts.clip)?;
                    state = next;
                    nats += loss * b.num_chars() as f64;
                    chars += b.num_chars();
                }
                Ok((nats, chars))
            }, valid_fn)
        }
    }
}

/// Validation BPC of a baseline LM, always per character.
pub fn lm_bpc(model: &LanguageModel, corpus: &Corpus, mode: BatchMode, batch: usize) -> Result<f64> {
    let (lines, chars) = match mode {
        BatchMode::WordLevel => {
            let words = letter_words(corpus, "evaluation")?;
            let chars = words.iter().map(|w| w.len()).sum();
            (words, chars)
        }
        BatchMode::LongRange => (corpus.lines.clone(), corpus.num_chars()),
    };
    bpc(model.line_logprobs(&lines, batch)?.iter().sum(), chars)
}

/// One gradient step on token sequences; returns `(summed nats, chars)`.
fn lm_step(
    m: &mut LanguageModel,
    ctx: &mut Ctx,
    seqs: &[&[u32]],
    prev: &[u32],
    init: Option<&StateValue>,
    clip: f64,
) -> Result<(f64, usize, Option<StateValue>)> {
    let chars: usize = seqs.iter().flat_map(|s| s.iter()).map(|&t| m.token_len(t)).sum();
    if chars == 0 {
        return Ok((0.0, 0, init.cloned()));
    }
    let (nats, mut grads, state) = {
        let mut g = Graph::new(&m.params);
        let run = m.run(&mut g, seqs, prev, init, init.is_some(), Some(&mut ctx.dropout))?;
        let total = m.total_logprob(&mut g, &run, seqs);
        let loss = g.scale(total, -1.0 / chars as f64);
        g.check()?;
        let grads = g.backward(loss)?;
        (-g.scalar(total), grads.into_params(), run.final_state)
    };
    adam_step(&mut m.params, &mut grads, &mut ctx.opt, clip)?;
    Ok((nats, chars, state))
}

/// Trains a baseline LM. Long-range mode cuts the token stream into
/// `batch_size` lanes of `seq_len`-token windows with carried state.
pub fn train_lm(
    model: &mut LanguageModel,
    train: &Corpus,
    valid: &Corpus,
    opts: &TrainOptions,
    log: &mut dyn Write,
) -> Result<TrainReport> {
    let valid_fn = |m: &LanguageModel| lm_bpc(m, valid, opts.mode, opts.eval_batch);
    match opts.mode {
        BatchMode::WordLevel => {
            let words = letter_words(train, "training")?;
            let tokens: Vec<Vec<u32>> = words.iter().map(|w| model.tokenize(w)).collect();
            drive(model, lm_params, opts, log, |m, ctx| {
                let mut order: Vec<usize> = (0..tokens.len()).collect();
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ctx.shuffle);
                let (mut nats, mut chars) = (0.0, 0);
                for chunk in order.chunks(opts.batch_size.max(1)) {
                    let seqs: Vec<&[u32]> = chunk.iter().map(|&i| tokens[i].as_slice()).collect();
                    let (n, c, _) = lm_step(m, ctx, &seqs, &vec![EOS_ID; seqs.len()], None, opts.clip)?;
                    nats += n;
                    chars += c;
                }
                Ok((nats, chars))
            }, valid_fn)
        }
        BatchMode::LongRange => {
            let space = train.vocab.space_id();
            let mut stream = Vec::new();
            for line in &train.lines {
                stream.extend(model.tokenize(line));
                stream.push(space);
            }
            let (lanes, len) = (opts.batch_size.max(1), opts.seq_len.max(1));
            let lane_len = stream.len() / lanes;
            let windows = lane_len / len;
            if windows == 0 {
                return Err(Error::CorpusTooShort {
                    have: stream.len(),
                    need: lanes * len,
                });
            }
            drive(model, lm_params, opts, log, |m, ctx| {
                let (mut nats, mut chars) = (0.0, 0);
                let mut state = m.zero_state(lanes);
                for w in 0..windows {
                    let starts: Vec<usize> = (0..lanes).map(|l| l * lane_len + w * len).collect();
                    let seqs: Vec<&[u32]> = starts.iter().map(|&s| &stream[s..s + len]).collect();
                    let prev: Vec<u32> = starts
                        .iter()
                        .map(|&s| if w == 0 { EOS_ID } else { stream[s - 1] })
                        .collect();
                    let (n, c, next) = lm_step(m, ctx, &seqs, &prev, Some(&state), opts.clip)?;
                    state = next.expect("state requested");
                    nats += n;
                    chars += c;
                }
                Ok((nats, chars))
            }, valid_fn)
        }
    }
}
