//! Text and image artifacts: alignment and penalty images, note boundaries.

use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::score::Score;

fn matrix_dims(m: &Tensor) -> Result<(usize, usize)> {
    match *m.dims() {
        [rows, cols] => Ok((rows, cols)),
        ref d => Err(Error::InvalidArgument(format!("expected a matrix, got dims {d:?}"))),
    }
}

fn pgm(rows: usize, cols: usize, pixels: Vec<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

/// Binary 8-bit PGM, one row per phoneme and one column per decoder step.
/// Each column is scaled so its maximum maps to 255; an all-zero column
/// stays black.
pub fn alignment_pgm(alignment: &Tensor) -> Result<Vec<u8>> {
    let (n, steps) = matrix_dims(alignment)?;
    let col_max: Vec<f64> = (0..steps)
        .map(|t| (0..n).map(|i| alignment.at(i, t)).fold(0.0, f64::max))
        .collect();
    let mut px = Vec::with_capacity(n * steps);
    for i in 0..n {
        for (t, &m) in col_max.iter().enumerate() {
            let v = if m > 0.0 { alignment.at(i, t) / m } else { 0.0 };
            px.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(pgm(n, steps, px))
}

/// Binary 8-bit PGM of a penalty matrix: 0 is black, 1 is white.
pub fn penalty_pgm(penalty: &Tensor) -> Result<Vec<u8>> {
    let (n, steps) = matrix_dims(penalty)?;
    let px = penalty
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok(pgm(n, steps, px))
}

/// Comma-separated rows, shortest round-trip decimal for each value.
pub fn matrix_csv(m: &Tensor) -> Result<String> {
    let (rows, _) = matrix_dims(m)?;
    let mut s = String::new();
    for i in 0..rows {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub const NOTE_CSV_HEADER: &str = "note,pitch,start_frame,end_frame,start_step,end_step,first_phoneme,last_phoneme";

/// One row per note. Steps are `ceil(frame / r)`, so column `start_step` is
/// the first decoder step inside the note.
pub fn note_boundaries_csv(score: &Score, r: usize) -> Result<String> {
    if r == 0 {
        return Err(Error::InvalidArgument("reduction factor must be positive".into()));
    }
    let mut s = format!("{NOTE_CSV_HEADER}\n");
    let mut first = 0;
    for (i, note) in score.notes().iter().enumerate() {
        let count = if note.pitch.is_rest() {
            1
        } else {
            note.morae.iter().map(|m| m.phonemes().len()).sum()
        };
        let pitch = note.pitch.midi().map_or("rest".to_string(), |m| m.to_string());
        writeln!(
            s,
            "{i},{pitch},{},{},{},{},{first},{}",
            note.start_frame,
            note.end_frame,
            note.start_frame.div_ceil(r),
            note.end_frame.div_ceil(r),
            first + count - 1
        )
        .expect("write to String");
        first += count;
    }
    Ok(s)
}

/// Acoustic frames in the corpus `.feat` layout (header `T D`).
pub fn feat_text(frames: &Tensor) -> String {
    let (t, d) = (frames.rows(), frames.row_len());
    let mut s = format!("{t} {d}\n");
    for f in 0..t {
        let row: Vec<String> = frames.row(f).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}
