use super::LOG_CENT;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::score::{mora_boundaries, Score};

/// Mora index (rest pseudo-morae included) of every phoneme entry.
pub fn mora_of_entries(score: &Score) -> Vec<usize> {
    let mut out = vec![0; score.num_phonemes()];
    for (j, span) in mora_boundaries(score).iter().enumerate() {
        for e in span.entries.clone() {
            out[e] = j;
        }
    }
    out
}

/// Argmax phoneme per frame of an `[N, Tdec]` alignment, each decoder step
/// covering `r` frames, trimmed to `frames`. Ties go to the lower index.
pub fn frame_argmax(alignment: &Tensor, r: usize, frames: usize) -> Result<Vec<usize>> {
    let (n, steps) = match alignment.dims() {
        &[n, s] => (n, s),
        d => {
            return Err(Error::InvalidArgument(format!(
                "alignment must be [N, Tdec], got {d:?}"
            )))
        }
    };
    if r == 0 || steps * r < frames {
        return Err(Error::InvalidArgument(format!(
            "{steps} steps x r={r} do not cover {frames} frames"
        )));
    }
    let best: Vec<usize> = (0..steps)
        .map(|t| (0..n).fold(0, |b, i| if alignment.at(i, t) > alignment.at(b, t) { i } else { b }))
        .collect();
    Ok((0..frames).map(|f| best[f / r]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingReport {
    /// Mean absolute mora-onset error in frames.
    pub mae: f64,
    /// Whether the predicted mora sequence never moves backwards.
    pub monotone: bool,
    /// Morae that never hold the argmax.
    pub skipped: usize,
}

/// Mora-onset error of a per-frame phoneme sequence against the truth.
///
/// The predicted onset of a mora is the first frame whose phoneme belongs to
/// it. A mora that never appears starts where the first later mora does (or
/// at the end of the song).
pub fn timing_error(predicted: &[usize], score: &Score, truth: &[usize]) -> Result<TimingReport> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "predicted has {} frames, truth has {}",
            predicted.len(),
            truth.len()
        )));
    }
    let mora = mora_of_entries(score);
    let n = mora.len();
    if let Some(&bad) = predicted.iter().chain(truth).find(|&&e| e >= n) {
        return Err(Error::InvalidArgument(format!(
            "phoneme index {bad} out of range 0..{n}"
        )));
    }
    let m = score.num_morae();
    let frames = truth.len();
    let onsets = |seq: &[usize]| -> Vec<Option<usize>> {
        let mut first = vec![None; m];
        for (f, &e) in seq.iter().enumerate() {
            first[mora[e]].get_or_insert(f);
        }
        first
    };
    let truth_on = onsets(truth);
    let pred_on = onsets(predicted);
    let mut total = 0.0;
    let mut skipped = 0;
    for j in 0..m {
        let t = truth_on[j].ok_or_else(|| Error::InvalidArgument(format!("mora {j} absent from truth")))?;
        let p = match pred_on[j] {
            Some(p) => p,
            None => {
                skipped += 1;
                predicted.iter().position(|&e| mora[e] > j).unwrap_or(frames)
            }
        };
        total += (p as f64 - t as f64).abs();
    }
    let monotone = predicted.windows(2).all(|w| mora[w[1]] >= mora[w[0]]);
    Ok(TimingReport {
        mae: total / m as f64,
        monotone,
        skipped,
    })
}

/// Fraction of adjacent decoder steps whose argmax phoneme stays or advances
/// by one. A single-step alignment counts as monotone.
pub fn monotonicity_rate(alignment: &Tensor) -> Result<f64> {
    let steps = match alignment.dims() {
        &[_, s] => s,
        d => {
            return Err(Error::InvalidArgument(format!(
                "alignment must be [N, Tdec], got {d:?}"
            )))
        }
    };
    let best = frame_argmax(alignment, 1, steps)?;
    if steps < 2 {
        return Ok(1.0);
    }
    let good = best.windows(2).filter(|w| w[1] == w[0] || w[1] == w[0] + 1).count();
    Ok(good as f64 / (steps - 1) as f64)
}

/// RMS log-F0 error in cents over frames the truth marks voiced.
/// Returns `None` if no frame is voiced.
pub fn f0_rmse_cents(predicted: &[f64], truth: &[f64], truth_vuv: &[f64]) -> Result<Option<f64>> {
    if predicted.len() != truth.len() || truth.len() != truth_vuv.len() {
        return Err(Error::InvalidArgument("F0 tracks differ in length".into()));
    }
    let (sum, count) = predicted
        .iter()
        .zip(truth)
        .zip(truth_vuv)
        .filter(|(_, &v)| v >= 0.5)
        .fold((0.0, 0usize), |(s, c), ((p, t), _)| (s + (p - t) * (p - t), c + 1));
    Ok((count > 0).then(|| (sum / count as f64).sqrt() / LOG_CENT))
}
