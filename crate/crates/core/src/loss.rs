//! Mora-band penalty matrix, guided attention loss, and the training objective
//! `L = L_feat(o, ô) + L_feat(o, ô') + λ L_att(G, A)`.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::score::{mora_boundaries, Score};

pub const DEFAULT_DECAY_FRAMES: usize = 60;
pub const DEFAULT_SHIFT_FRAMES: usize = 15;
pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Soft penalty over (phoneme, decoder step): zero inside the phoneme's
/// shifted mora band, rising linearly to one over `decay_frames` outside it.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyMatrix {
    /// `[N, Tdec]`.
    pub values: Tensor,
    pub decay_frames: usize,
    pub shift_frames: usize,
}

impl PenaltyMatrix {
    pub fn phonemes(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn steps(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn get(&self, n: usize, t: usize) -> f64 {
        self.values.at(n, t)
    }
}

/// Build `G` for a score sampled every `r` frames.
///
/// Every phoneme of a mora shares the band `[b0 - shift, b1 - shift)` where
/// `[b0, b1)` is the mora's pseudo boundary. Step `t` looks at frame `r·t`;
/// outside the band the penalty is `min(1, d / decay)` with `d` the frame
/// distance to the nearest frame inside the band.
pub fn penalty_matrix(score: &Score, r: usize, decay: usize, shift: usize) -> Result<PenaltyMatrix> {
    if r == 0 || decay == 0 {
        return Err(Error::InvalidArgument(
            "reduction factor and decay must be positive".into(),
        ));
    }
    let n = score.num_phonemes();
    let steps = score.total_frames().div_ceil(r);
    let mut data = vec![0.0; n * steps];
    for span in mora_boundaries(score) {
        let lo = span.start as i64 - shift as i64;
        let hi = span.end as i64 - shift as i64;
        for t in 0..steps {
            let f = (r * t) as i64;
            let dist = if f < lo {
                lo - f
            } else if f >= hi {
                f - (hi - 1)
            } else {
                0
            };
            let g = (dist as f64 / decay as f64).min(1.0);
            for e in span.entries.clone() {
                data[e * steps + t] = g;
            }
        }
    }
    Ok(PenaltyMatrix {
        values: Tensor::new(vec![n, steps], data)?,
        decay_frames: decay,
        shift_frames: shift,
    })
}

fn same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape {
            op,
            lhs: "lhs".into(),
            lhs_dims: a.dims().to_vec(),
            rhs: "rhs".into(),
            rhs_dims: b.dims().to_vec(),
        });
    }
    Ok(())
}

/// `‖G ⊙ A‖₁ / (N·T)`.
pub fn guided_attention_loss(penalty: &Tensor, alignment: &Tensor) -> Result<f64> {
    same_dims("guided_attention_loss", penalty, alignment)?;
    let s: f64 = penalty
        .data()
        .iter()
        .zip(alignment.data())
        .map(|(g, a)| (g * a).abs())
        .sum();
    Ok(s / penalty.len() as f64)
}

/// `Σ_t ‖o_t - ô_t‖² / (T·D)`.
pub fn feature_loss(target: &Tensor, predicted: &Tensor) -> Result<f64> {
    same_dims("feature_loss", target, predicted)?;
    let s: f64 = target
        .data()
        .iter()
        .zip(predicted.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / target.len() as f64)
}

/// Graph form of [`guided_attention_loss`]. Alignment entries are
/// non-negative, so the absolute value is dropped.
pub fn guided_loss_node(g: &mut Graph, penalty: NodeId, alignment: NodeId) -> Result<NodeId> {
    let n = g.value(alignment).len() as f64;
    let prod = g.mul(penalty, alignment)?;
    let s = g.sum(prod)?;
    g.scale(s, 1.0 / n)
}

/// Graph form of [`feature_loss`].
pub fn feature_loss_node(g: &mut Graph, target: NodeId, predicted: NodeId) -> Result<NodeId> {
    let n = g.value(target).len() as f64;
    let d = g.sub(target, predicted)?;
    let s = g.squared_norm(d)?;
    g.scale(s, 1.0 / n)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub feat_decoder: f64,
    pub feat_postnet: f64,
    pub guided: f64,
    pub total: f64,
    pub lambda: f64,
}

/// Total training loss. Returns the differentiable root and its components.
pub fn total_loss(
    g: &mut Graph,
    target: NodeId,
    decoder_out: NodeId,
    postnet_out: NodeId,
    penalty: NodeId,
    alignment: NodeId,
    lambda: f64,
) -> Result<(NodeId, LossReport)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let fd = feature_loss_node(g, target, decoder_out)?;
    let fp = feature_loss_node(g, target, postnet_out)?;
    let ga = guided_loss_node(g, penalty, alignment)?;
    let feats = g.add(fd, fp)?;
    let weighted = g.scale(ga, lambda)?;
    let total = g.add(feats, weighted)?;
    let report = LossReport {
        feat_decoder: g.scalar(fd),
        feat_postnet: g.scalar(fp),
        guided: g.scalar(ga),
        total: g.scalar(total),
        lambda,
    };
    Ok((total, report))
}
