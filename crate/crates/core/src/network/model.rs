use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{conv, gru_step, init_conv, init_gru, init_linear, linear, linear_rows};
use super::ModelConfig;
use crate::attention::{self, AlignmentState, AttentionParams, Memory};
use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::loss::{penalty_matrix, total_loss, LossReport, DEFAULT_DECAY_FRAMES, DEFAULT_SHIFT_FRAMES};
use crate::score::{
    auxiliary_note_frames, note_pitch_vector, phoneme_feature_dim, phoneme_features, position_matrix, Score,
    AUX_FEATURE_DIM,
};

/// `m + residual` for each residual, with `m = Σ_n α(n)·pitch(n)`.
pub fn pitch_normalize(alpha: &[f64], note_pitch: &[f64], residual: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != note_pitch.len() {
        return Err(Error::InvalidArgument(format!(
            "alignment has {} entries but note pitch has {}",
            alpha.len(),
            note_pitch.len()
        )));
    }
    let m: f64 = alpha.iter().zip(note_pitch).map(|(a, p)| a * p).sum();
    Ok(residual.iter().map(|r| m + r).collect())
}

/// Everything the network needs from one score, computed once.
#[derive(Clone, Debug)]
pub struct Utterance {
    /// `[N, Fs]`.
    pub phoneme_features: Tensor,
    /// `[T, Fa]`.
    pub aux: Tensor,
    pub note_bounds: Vec<(usize, usize)>,
    pub frames_per_beat: f64,
    /// Log-F0 of the owning note per phoneme.
    pub note_pitch: Vec<f64>,
    /// Penalty matrix transposed to `[Tdec, N]`.
    pub penalty: Tensor,
    pub frames: usize,
    pub steps: usize,
    /// Ground-truth phoneme index per frame, used instead of attention when
    /// the mode has none.
    pub oracle: Option<Vec<usize>>,
}

impl Utterance {
    pub fn new(score: &Score, reduction_factor: usize) -> Result<Self> {
        let pen = penalty_matrix(score, reduction_factor, DEFAULT_DECAY_FRAMES, DEFAULT_SHIFT_FRAMES)?;
        Ok(Utterance {
            phoneme_features: phoneme_features(score),
            aux: auxiliary_note_frames(score),
            note_bounds: score.entry_note_bounds(),
            frames_per_beat: score.frames_per_beat(),
            note_pitch: note_pitch_vector(score)?,
            penalty: pen.values.transposed(),
            frames: score.total_frames(),
            steps: pen.steps(),
            oracle: None,
        })
    }

    pub fn with_oracle(mut self, alignment: Vec<usize>) -> Result<Self> {
        let n = self.phonemes();
        if alignment.len() != self.frames {
            return Err(Error::InvalidArgument(format!(
                "oracle alignment has {} frames, score has {}",
                alignment.len(),
                self.frames
            )));
        }
        if let Some(&bad) = alignment.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "oracle phoneme {bad} out of range 0..{n}"
            )));
        }
        self.oracle = Some(alignment);
        Ok(self)
    }

    pub fn phonemes(&self) -> usize {
        self.note_pitch.len()
    }
}

/// Source of the previous output group fed to the Pre-Net.
#[derive(Clone, Copy, Debug)]
pub enum Feed<'a> {
    /// Ground-truth frames, `[T, D]`.
    Teacher(&'a Tensor),
    /// The model's own pitch-normalized decoder output.
    Free,
}

/// Nodes of one decoding pass.
pub struct Pass {
    /// Pitch-normalized decoder output, `[T, D]`.
    pub decoder_out: NodeId,
    /// Pitch-normalized Post-Net output, `[T, D]`.
    pub postnet_out: NodeId,
    /// Post-Net output before pitch normalization, `[T, D]`.
    pub residual_out: NodeId,
    /// `[Tdec, N]`.
    pub alignment: NodeId,
    /// Attention-weighted note log-F0 per frame.
    pub note_pitch_frames: Vec<f64>,
}

pub struct TeacherOutput {
    pub pass: Pass,
    pub loss: NodeId,
    pub report: LossReport,
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    /// `[T, D]` with absolute log-F0.
    pub frames: Tensor,
    /// Decoder output before the Post-Net, `[T, D]`.
    pub decoder_frames: Tensor,
    /// Post-Net output before pitch normalization, `[T, D]`.
    pub residual: Tensor,
    /// `[N, Tdec]`.
    pub alignment: Tensor,
    pub note_pitch_frames: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = init_params(&config, &mut rng)?;
        Ok(Model { config, params })
    }

    /// Wrap loaded parameters; names and shapes must match `config`.
    pub fn with_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let fresh = init_params(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        for (name, t) in fresh.iter() {
            let got = params.get(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if got.dims() != t.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has dims {:?}, config expects {:?}",
                    got.dims(),
                    t.dims()
                )));
            }
        }
        if let Some(extra) = params.names().find(|n| !fresh.contains(n)) {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(Model { config, params })
    }

    /// Linear projection, one convolution with tanh, bidirectional recurrence.
    pub fn encode(&self, g: &mut Graph, features: NodeId) -> Result<NodeId> {
        let p = &self.params;
        let n = g.value(features).dims()[0];
        let h = linear_rows(g, p, "enc.in", features)?;
        let h = conv(g, p, "enc.conv", h)?;
        let h = g.tanh(h)?;
        let half = self.config.encoder_dim / 2;
        let rows: Vec<NodeId> = (0..n).map(|i| g.row(h, i)).collect::<Result<_>>()?;
        let mut fwd = Vec::with_capacity(n);
        let mut s = g.input(Tensor::zeros(&[half]));
        for &x in &rows {
            s = gru_step(g, p, "enc.fwd", x, s)?;
            fwd.push(s);
        }
        let mut bwd = vec![s; n];
        let mut s = g.input(Tensor::zeros(&[half]));
        for i in (0..n).rev() {
            s = gru_step(g, p, "enc.bwd", rows[i], s)?;
            bwd[i] = s;
        }
        let out: Vec<NodeId> = (0..n).map(|i| g.concat(&[fwd[i], bwd[i]])).collect::<Result<_>>()?;
        g.stack(&out)
    }

    /// Residual added to the decoder output, `[T, D]`.
    pub fn postnet(&self, g: &mut Graph, frames: NodeId) -> Result<NodeId> {
        let a = conv(g, &self.params, "post.0", frames)?;
        let a = g.tanh(a)?;
        let a = conv(g, &self.params, "post.1", a)?;
        let a = g.tanh(a)?;
        conv(g, &self.params, "post.2", a)
    }

    fn prenet(&self, g: &mut Graph, x: NodeId, rng: &mut Option<&mut ChaCha8Rng>) -> Result<NodeId> {
        let mut h = x;
        let keep = 1.0 - self.config.prenet_dropout;
        for i in 0..self.config.prenet_dims.len() {
            h = linear(g, &self.params, &format!("prenet.{i}"), h)?;
            h = g.tanh(h)?;
            if let Some(rng) = rng.as_deref_mut() {
                if self.config.prenet_dropout > 0.0 {
                    let len = g.value(h).len();
                    let mask: Vec<f64> = (0..len)
                        .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                        .collect();
                    let m = g.input(Tensor::vector(mask)?);
                    h = g.mul(h, m)?;
                }
            }
        }
        Ok(h)
    }

    /// Full decoding pass over `utt`. `dropout` enables Pre-Net dropout.
    pub fn run(
        &self,
        g: &mut Graph,
        utt: &Utterance,
        feed: Feed<'_>,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Pass> {
        let cfg = &self.config;
        let (r, d) = (cfg.reduction_factor, cfg.acoustic_dim);
        let n = utt.phonemes();
        let frames = utt.frames;
        let steps = frames.div_ceil(r);
        let f0 = cfg.f0_channel();
        if utt.phoneme_features.dims() != [n, phoneme_feature_dim()] || utt.aux.dims() != [frames, AUX_FEATURE_DIM] {
            return Err(Error::InvalidArgument("utterance tensors inconsistent".into()));
        }
        if let Feed::Teacher(t) = feed {
            if t.dims() != [frames, d] {
                return Err(Error::InvalidArgument(format!(
                    "target dims {:?} do not match score ({frames} frames x {d})",
                    t.dims()
                )));
            }
        }
        let attn_mode = cfg.mode.attention();
        if attn_mode.is_none() && utt.oracle.is_none() {
            return Err(Error::InvalidArgument(format!(
                "mode {} needs an oracle alignment",
                cfg.mode
            )));
        }

        let feats = g.input(utt.phoneme_features.clone());
        let states = self.encode(g, feats)?;
        let ap = AttentionParams::bind(g, &self.params)?;
        let mem = match attn_mode {
            Some(m) => Some(Memory::new(g, &ap, states, m)?),
            None => None,
        };
        let pitch = g.input(Tensor::vector(utt.note_pitch.clone())?);

        let mut q = g.input(Tensor::zeros(&[cfg.query_dim]));
        let mut dstate = g.input(Tensor::zeros(&[cfg.decoder_dim]));
        let mut ctx = g.input(Tensor::zeros(&[cfg.encoder_dim]));
        let mut align = AlignmentState::initial(g, n);
        let mut prev = vec![0.0; r * d];
        let mut outs = Vec::with_capacity(steps);
        let mut alphas = Vec::with_capacity(steps);
        let mut pitch_steps = Vec::with_capacity(steps);
        let mut pitch_values = Vec::with_capacity(steps);

        for t in 0..steps {
            let frame = r * t;
            let x = g.input(Tensor::vector(prev.clone())?);
            let pre = self.prenet(g, x, &mut dropout)?;
            let aux = if cfg.mode.use_aux() {
                let row = Tensor::vector(utt.aux.row(frame).to_vec())?;
                let a = g.input(row);
                let a = linear(g, &self.params, "aux", a)?;
                g.tanh(a)?
            } else {
                g.input(Tensor::zeros(&[cfg.aux_dim]))
            };
            let inp = g.concat(&[pre, aux, ctx])?;
            q = gru_step(g, &self.params, "attn_rnn", inp, q)?;

            let alpha = match (&mem, attn_mode) {
                (Some(mem), Some(mode)) => {
                    let pos = g.input(position_matrix(&utt.note_bounds, utt.frames_per_beat, frame));
                    let o = attention::attend(g, &ap, mem, mode, q, pos, align)?;
                    align = o.state;
                    ctx = o.context;
                    o.alpha
                }
                _ => {
                    // share of the step's frames sung on each phoneme
                    let oracle = utt.oracle.as_ref().expect("checked above");
                    let group = &oracle[frame..(frame + r).min(frames)];
                    let mut a = Tensor::zeros(&[n]);
                    for &p in group {
                        a.data_mut()[p] += 1.0 / group.len() as f64;
                    }
                    let a = g.input(a);
                    ctx = attention::context(g, a, states)?;
                    a
                }
            };
            alphas.push(alpha);

            let dec_in = g.concat(&[q, ctx])?;
            dstate = gru_step(g, &self.params, "dec_rnn", dec_in, dstate)?;
            let out_in = g.concat(&[dstate, ctx])?;
            let out = linear(g, &self.params, "out", out_in)?;
            outs.push(out);

            let weighted = g.mul(alpha, pitch)?;
            let m = g.sum(weighted)?;
            let m_val = g.scalar(m);
            pitch_steps.push(m);
            pitch_values.push(m_val);

            prev = match feed {
                Feed::Teacher(target) => {
                    let mut v = Vec::with_capacity(r * d);
                    for k in 0..r {
                        // padding repeats the last frame
                        v.extend_from_slice(target.row((frame + k).min(frames - 1)));
                    }
                    v
                }
                Feed::Free => {
                    let mut v = g.value(out).data().to_vec();
                    for k in 0..r {
                        v[k * d + f0] += m_val;
                    }
                    v
                }
            };
        }

        let flat = g.concat(&outs)?;
        let flat = g.slice(flat, 0, frames * d)?;
        let raw = g.reshape(flat, &[frames, d])?;
        let post_res = self.postnet(g, raw)?;
        let residual_out = g.add(raw, post_res)?;

        // Scatter the per-step note pitch onto the log-F0 channel of each frame.
        let mut scatter = vec![0.0; frames * d * steps];
        for f in 0..frames {
            scatter[(f * d + f0) * steps + f / r] = 1.0;
        }
        let scatter = g.input(Tensor::matrix(frames * d, steps, scatter)?);
        let m_vec = g.concat(&pitch_steps)?;
        let offset = g.matvec(scatter, m_vec)?;
        let offset = g.reshape(offset, &[frames, d])?;
        let decoder_out = g.add(raw, offset)?;
        let postnet_out = g.add(residual_out, offset)?;
        let alignment = g.stack(&alphas)?;
        let note_pitch_frames = (0..frames).map(|f| pitch_values[f / r]).collect();

        Ok(Pass {
            decoder_out,
            postnet_out,
            residual_out,
            alignment,
            note_pitch_frames,
        })
    }

    /// Teacher-forced pass and training loss. The guided term is weighted by
    /// `lambda` only in modes that use it.
    pub fn forward_teacher(
        &self,
        g: &mut Graph,
        utt: &Utterance,
        target: &Tensor,
        lambda: f64,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<TeacherOutput> {
        self.forward_loss(g, utt, target, Feed::Teacher(target), lambda, dropout)
    }

    /// Training loss with an explicit Pre-Net feed.
    pub fn forward_loss(
        &self,
        g: &mut Graph,
        utt: &Utterance,
        target: &Tensor,
        feed: Feed<'_>,
        lambda: f64,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<TeacherOutput> {
        if target.dims() != [utt.frames, self.config.acoustic_dim] {
            return Err(Error::InvalidArgument(format!(
                "target dims {:?} do not match score ({} frames x {})",
                target.dims(),
                utt.frames,
                self.config.acoustic_dim
            )));
        }
        let pass = self.run(g, utt, feed, dropout)?;
        let tgt = g.input(target.clone());
        let pen = g.input(utt.penalty.clone());
        let lambda = if self.config.mode.use_guided() { lambda } else { 0.0 };
        let (loss, report) = total_loss(g, tgt, pass.decoder_out, pass.postnet_out, pen, pass.alignment, lambda)?;
        Ok(TeacherOutput { pass, loss, report })
    }

    /// Autoregressive generation for exactly `ceil(T / r)` steps, no dropout.
    pub fn synthesize(&self, utt: &Utterance) -> Result<Synthesis> {
        let mut g = Graph::new();
        let pass = self.run(&mut g, utt, Feed::Free, None)?;
        Ok(Synthesis {
            frames: g.evaluate(pass.postnet_out),
            decoder_frames: g.evaluate(pass.decoder_out),
            residual: g.evaluate(pass.residual_out),
            alignment: g.value(pass.alignment).transposed(),
            note_pitch_frames: pass.note_pitch_frames,
        })
    }
}

fn init_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    let (h, r, d) = (cfg.encoder_dim, cfg.reduction_factor, cfg.acoustic_dim);
    init_linear(&mut p, rng, "enc.in", h, phoneme_feature_dim())?;
    init_conv(&mut p, rng, "enc.conv", h, h, cfg.encoder_conv_width)?;
    init_gru(&mut p, rng, "enc.fwd", h, h / 2)?;
    init_gru(&mut p, rng, "enc.bwd", h, h / 2)?;
    let mut inp = r * d;
    for (i, &w) in cfg.prenet_dims.iter().enumerate() {
        init_linear(&mut p, rng, &format!("prenet.{i}"), w, inp)?;
        inp = w;
    }
    init_linear(&mut p, rng, "aux", cfg.aux_dim, AUX_FEATURE_DIM)?;
    init_gru(&mut p, rng, "attn_rnn", inp + cfg.aux_dim + h, cfg.query_dim)?;
    attention::init_params(&cfg.attention_dims(), rng, &mut p)?;
    init_gru(&mut p, rng, "dec_rnn", cfg.query_dim + h, cfg.decoder_dim)?;
    init_linear(&mut p, rng, "out", r * d, cfg.decoder_dim + h)?;
    let c = cfg.postnet_channels;
    let w = cfg.postnet_width;
    init_conv(&mut p, rng, "post.0", c, d, w)?;
    init_conv(&mut p, rng, "post.1", c, c, w)?;
    p.insert("post.2.K", Tensor::zeros(&[d, c, w]))?;
    p.insert("post.2.b", Tensor::zeros(&[d]))?;
    Ok(p)
}
