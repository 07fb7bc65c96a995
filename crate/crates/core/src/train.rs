//! Single-process training loop over a prepared corpus.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::loss::{LossReport, DEFAULT_LAMBDA};
use crate::network::{clip_global_norm, Adam, Feed, Model, Utterance};
use crate::synthdata::{absolute_log_f0, Song};

/// Dropout masks use stream `step`; song order uses this one.
const SHUFFLE_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub clip: f64,
    pub lambda: f64,
    /// Songs per update; gradients are averaged in song order.
    pub batch: usize,
    pub teacher_forcing: bool,
    /// Checkpoint period in steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr: 1e-3,
            clip: 1.0,
            lambda: DEFAULT_LAMBDA,
            batch: 1,
            teacher_forcing: true,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip must be positive, got {}", self.clip)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// A song ready for the network: inputs plus absolute log-F0 targets.
#[derive(Clone, Debug)]
pub struct Example {
    pub utterance: Utterance,
    pub target: Tensor,
    pub truth_alignment: Vec<usize>,
}

impl Example {
    /// The ground-truth alignment is attached so oracle-alignment models can
    /// use it.
    pub fn new(song: &Song, reduction_factor: usize) -> Result<Self> {
        let utterance = Utterance::new(&song.score, reduction_factor)?.with_oracle(song.truth.alignment.clone())?;
        Ok(Example {
            utterance,
            target: absolute_log_f0(&song.score, &song.truth)?,
            truth_alignment: song.truth.alignment.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    /// 1-based.
    pub step: usize,
    /// Batch-mean loss components.
    pub report: LossReport,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "step,feat_dec,feat_post,guided,total,lambda,grad_norm";

    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{}",
            self.step, r.feat_decoder, r.feat_postnet, r.guided, r.total, r.lambda, self.grad_norm
        )
    }
}

/// Deterministic optimizer state plus the song schedule.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    opt: Adam,
    step: usize,
    order: Vec<usize>,
    cursor: usize,
    shuffle_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let seed = model.config.seed;
        Ok(Trainer {
            opt: Adam::new(config.lr),
            model,
            config,
            step: 0,
            order: Vec::new(),
            cursor: 0,
            shuffle_rng: {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(SHUFFLE_STREAM);
                r
            },
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn next_song(&mut self, n: usize) -> usize {
        if self.cursor >= self.order.len() || self.order.len() != n {
            self.order = (0..n).collect();
            self.order.shuffle(&mut self.shuffle_rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// One update on the next batch. On a non-finite loss the parameters are
    /// left untouched and an error is returned.
    pub fn step(&mut self, data: &[Example]) -> Result<StepLog> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("no training examples".into()));
        }
        self.step += 1;
        let mut dropout = ChaCha8Rng::seed_from_u64(self.model.config.seed);
        dropout.set_stream(self.step as u64);
        let mut sum: Option<BTreeMap<String, Tensor>> = None;
        let mut reports = Vec::with_capacity(self.config.batch);
        for _ in 0..self.config.batch {
            let ex = &data[self.next_song(data.len())];
            let feed = if self.config.teacher_forcing {
                Feed::Teacher(&ex.target)
            } else {
                Feed::Free
            };
            let mut g = Graph::new();
            let out = self.model.forward_loss(
                &mut g,
                &ex.utterance,
                &ex.target,
                feed,
                self.config.lambda,
                Some(&mut dropout),
            )?;
            if !out.report.total.is_finite() {
                return Err(Error::NonFinite { op: "loss" });
            }
            let grads = g.gradients(out.loss, &self.model.params)?;
            match &mut sum {
                None => sum = Some(grads),
                Some(acc) => {
                    for (k, t) in grads {
                        let a = acc.get_mut(&k).expect("same parameter set");
                        a.data_mut().iter_mut().zip(t.data()).for_each(|(x, y)| *x += y);
                    }
                }
            }
            reports.push(out.report);
        }
        let mut grads = sum.expect("batch >= 1");
        let k = 1.0 / self.config.batch as f64;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
        let grad_norm = clip_global_norm(&mut grads, self.config.clip);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite { op: "gradient" });
        }
        self.opt.update(&mut self.model.params, &grads)?;
        let mean = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() * k;
        Ok(StepLog {
            step: self.step,
            report: LossReport {
                feat_decoder: mean(|r| r.feat_decoder),
                feat_postnet: mean(|r| r.feat_postnet),
                guided: mean(|r| r.guided),
                total: mean(|r| r.total),
                lambda: reports[0].lambda,
            },
            grad_norm,
        })
    }

    /// Runs the configured number of steps, calling `hook` after each.
    pub fn run<F>(&mut self, data: &[Example], mut hook: F) -> Result<Vec<StepLog>>
    where
        F: FnMut(&StepLog, &Model) -> Result<()>,
    {
        let mut logs = Vec::with_capacity(self.config.steps);
        while self.step < self.config.steps {
            let log = self.step(data)?;
            hook(&log, &self.model)?;
            logs.push(log);
        }
        Ok(logs)
    }
}
