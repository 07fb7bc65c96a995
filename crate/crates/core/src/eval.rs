//! Objective metrics of synthesized songs against their ground truth.

use std::fmt::{self, Write as _};

use crate::error::Result;
use crate::loss::{feature_loss, guided_attention_loss, penalty_matrix, DEFAULT_DECAY_FRAMES, DEFAULT_SHIFT_FRAMES};
use crate::network::{Model, Synthesis, Utterance};
use crate::synthdata::{absolute_log_f0, f0_rmse_cents, frame_argmax, monotonicity_rate, timing_error, Song};

#[derive(Clone, Debug, PartialEq)]
pub struct SongMetrics {
    pub song: usize,
    pub feature_loss: f64,
    pub guided_loss: f64,
    /// Frames.
    pub timing_mae: f64,
    pub monotonicity: f64,
    /// Cents over voiced frames; NaN when the song has none.
    pub f0_rmse: f64,
    pub monotone: bool,
    pub skipped_morae: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mode: String,
    pub songs: Vec<SongMetrics>,
    pub mean: SongMetrics,
}

/// Metrics of one synthesized song. `synthesis` must come from `song`.
pub fn song_metrics(index: usize, song: &Song, synthesis: &Synthesis, r: usize) -> Result<SongMetrics> {
    let frames = song.score.total_frames();
    let target = absolute_log_f0(&song.score, &song.truth)?;
    let pen = penalty_matrix(&song.score, r, DEFAULT_DECAY_FRAMES, DEFAULT_SHIFT_FRAMES)?;
    let argmax = frame_argmax(&synthesis.alignment, r, frames)?;
    let timing = timing_error(&argmax, &song.score, &song.truth.alignment)?;
    let d = target.row_len();
    let col = |t: &crate::autodiff::Tensor, c: usize| -> Vec<f64> { (0..frames).map(|f| t.at(f, c)).collect() };
    let f0 = f0_rmse_cents(
        &col(&synthesis.frames, d - 2),
        &col(&target, d - 2),
        &col(&target, d - 1),
    )?;
    Ok(SongMetrics {
        song: index,
        feature_loss: feature_loss(&target, &synthesis.frames)?,
        guided_loss: guided_attention_loss(&pen.values, &synthesis.alignment)?,
        timing_mae: timing.mae,
        monotonicity: monotonicity_rate(&synthesis.alignment)?,
        f0_rmse: f0.unwrap_or(f64::NAN),
        monotone: timing.monotone,
        skipped_morae: timing.skipped,
    })
}

/// Synthesizes every song (indices are the corpus positions) and averages.
pub fn evaluate(model: &Model, songs: &[(usize, &Song)]) -> Result<MetricsReport> {
    let r = model.config.reduction_factor;
    let mut rows = Vec::with_capacity(songs.len());
    for &(i, song) in songs {
        let mut utt = Utterance::new(&song.score, r)?;
        if model.config.mode.attention().is_none() {
            utt = utt.with_oracle(song.truth.alignment.clone())?;
        }
        let synth = model.synthesize(&utt)?;
        rows.push(song_metrics(i, song, &synth, r)?);
    }
    Ok(MetricsReport::new(model.config.mode.name(), rows))
}

fn mean_of(rows: &[SongMetrics], f: impl Fn(&SongMetrics) -> f64) -> f64 {
    let vals: Vec<f64> = rows.iter().map(f).filter(|v| !v.is_nan()).collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "mode,song,feature_loss,guided_loss,timing_mae_frames,monotonicity,f0_rmse_cents,monotone,skipped_morae";

    pub fn new(mode: &str, songs: Vec<SongMetrics>) -> Self {
        let mean = SongMetrics {
            song: usize::MAX,
            feature_loss: mean_of(&songs, |s| s.feature_loss),
            guided_loss: mean_of(&songs, |s| s.guided_loss),
            timing_mae: mean_of(&songs, |s| s.timing_mae),
            monotonicity: mean_of(&songs, |s| s.monotonicity),
            f0_rmse: mean_of(&songs, |s| s.f0_rmse),
            monotone: songs.iter().all(|s| s.monotone),
            skipped_morae: songs.iter().map(|s| s.skipped_morae).sum(),
        };
        MetricsReport {
            mode: mode.to_string(),
            songs,
            mean,
        }
    }

    fn csv_line(&self, label: &str, m: &SongMetrics) -> String {
        format!(
            "{},{label},{},{},{},{},{},{},{}",
            self.mode,
            m.feature_loss,
            m.guided_loss,
            m.timing_mae,
            m.monotonicity,
            m.f0_rmse,
            m.monotone,
            m.skipped_morae
        )
    }

    /// Data rows only: one per song, then the `mean` row.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .songs
            .iter()
            .map(|s| self.csv_line(&s.song.to_string(), s))
            .collect();
        out.push(self.csv_line("mean", &self.mean));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for row in self.csv_rows() {
            s.push_str(&row);
            s.push('\n');
        }
        s
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        writeln!(
            s,
            "{:<8} {:>6} {:>10} {:>10} {:>10} {:>8} {:>10} {:>8}",
            "mode", "song", "feat", "guided", "mae(fr)", "mono", "f0(cent)", "skipped"
        )?;
        let line = |s: &mut String, label: &str, m: &SongMetrics| {
            writeln!(
                s,
                "{:<8} {:>6} {:>10.5} {:>10.5} {:>10.2} {:>8.4} {:>10.2} {:>8}",
                self.mode,
                label,
                m.feature_loss,
                m.guided_loss,
                m.timing_mae,
                m.monotonicity,
                m.f0_rmse,
                m.skipped_morae
            )
        };
        for m in &self.songs {
            line(&mut s, &m.song.to_string(), m)?;
        }
        line(&mut s, "mean", &self.mean)?;
        f.write_str(&s)
    }
}
