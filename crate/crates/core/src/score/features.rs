use std::ops::Range;

use super::{midi_to_log_f0, Pitch, Score, PHONEME_INVENTORY};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Width of a row of [`phoneme_features`].
pub const fn phoneme_feature_dim() -> usize {
    PHONEME_INVENTORY + 7
}

/// Width of a row of [`auxiliary_note_frames`].
pub const AUX_FEATURE_DIM: usize = 6;

const BEATS_PER_BAR: f64 = 4.0;

fn normalized_pitch(p: Pitch) -> f64 {
    match p {
        Pitch::Midi(m) => (m as f64 - 60.0) / 24.0,
        Pitch::Rest => 0.0,
    }
}

/// Location of frame `t` relative to the note that owns a phoneme, in frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NotePositionTriple {
    /// `t - s`
    pub p1: f64,
    /// `e - t`
    pub p2: f64,
    /// Distance from `t` to the note, zero inside `[s, e]`.
    pub p3: f64,
}

impl NotePositionTriple {
    pub fn new(start: f64, end: f64, t: f64) -> Self {
        let p3 = if t < start {
            start - t
        } else if t > end {
            t - end
        } else {
            0.0
        };
        NotePositionTriple {
            p1: t - start,
            p2: end - t,
            p3,
        }
    }

    /// Divide every component by `frames_per_beat`.
    pub fn normalized(self, frames_per_beat: f64) -> [f64; 3] {
        [
            self.p1 / frames_per_beat,
            self.p2 / frames_per_beat,
            self.p3 / frames_per_beat,
        ]
    }
}

/// Triple for phoneme `n` (0-based) at frame `t`.
pub fn note_position_triple(score: &Score, t: usize, n: usize) -> Result<NotePositionTriple> {
    let entries = score.flatten();
    let e = entries
        .get(n)
        .ok_or_else(|| Error::InvalidArgument(format!("phoneme index {n} out of range 0..{}", entries.len())))?;
    let note = &score.notes()[e.note_index];
    Ok(NotePositionTriple::new(
        note.start_frame as f64,
        note.end_frame as f64,
        t as f64,
    ))
}

/// `N x 3` matrix of normalized triples for every phoneme at frame `t`.
pub fn position_matrix(note_bounds: &[(usize, usize)], frames_per_beat: f64, t: usize) -> Tensor {
    let mut data = Vec::with_capacity(note_bounds.len() * 3);
    for &(s, e) in note_bounds {
        data.extend(NotePositionTriple::new(s as f64, e as f64, t as f64).normalized(frames_per_beat));
    }
    Tensor::from_raw(vec![note_bounds.len(), 3], data)
}

impl Score {
    /// `(start_frame, end_frame)` of the owning note, per phoneme entry.
    pub fn entry_note_bounds(&self) -> Vec<(usize, usize)> {
        self.flatten()
            .iter()
            .map(|e| {
                let n = &self.notes()[e.note_index];
                (n.start_frame, n.end_frame)
            })
            .collect()
    }
}

/// Phoneme-level encoder input, `N x (P + 7)`.
///
/// Columns: one-hot phoneme (silence included), is-vowel, normalized pitch
/// `(midi - 60) / 24`, note length in beats, mora count of the note, position
/// inside the mora, and index of the mora inside the note.
pub fn phoneme_features(score: &Score) -> Tensor {
    let fs = phoneme_feature_dim();
    let fpb = score.frames_per_beat();
    let entries = score.flatten();
    let mut data = vec![0.0; entries.len() * fs];
    for (i, e) in entries.iter().enumerate() {
        let note = &score.notes()[e.note_index];
        let row = &mut data[i * fs..(i + 1) * fs];
        row[e.phoneme.id()] = 1.0;
        let o = PHONEME_INVENTORY + 1;
        row[o] = if e.phoneme.is_vowel() { 1.0 } else { 0.0 };
        row[o + 1] = normalized_pitch(note.pitch);
        row[o + 2] = note.frames() as f64 / fpb;
        row[o + 3] = note.morae.len() as f64;
        row[o + 4] = e.position_in_mora as f64;
        row[o + 5] = e.mora_in_note as f64;
    }
    Tensor::from_raw(vec![entries.len(), fs], data)
}

/// Frame-level note context, `T x 6`.
///
/// Columns: normalized pitch, notated length in beats, beat position of the
/// note onset within a 4/4 bar, mora count, relative position of the frame in
/// the note `(t - s) / (e - s)`, and note duration in beats measured in frames.
pub fn auxiliary_note_frames(score: &Score) -> Tensor {
    let fpb = score.frames_per_beat();
    let total = score.total_frames();
    let mut data = Vec::with_capacity(total * AUX_FEATURE_DIM);
    let mut onset_beats = 0.0;
    for note in score.notes() {
        let bar_pos = (onset_beats % BEATS_PER_BAR) / BEATS_PER_BAR;
        let len = note.frames() as f64;
        for t in note.start_frame..note.end_frame {
            data.extend_from_slice(&[
                normalized_pitch(note.pitch),
                note.beats,
                bar_pos,
                note.morae.len() as f64,
                (t - note.start_frame) as f64 / len,
                len / fpb,
            ]);
        }
        onset_beats += note.beats;
    }
    Tensor::from_raw(vec![total, AUX_FEATURE_DIM], data)
}

/// Pseudo mora extent obtained by splitting each note evenly among its morae.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MoraSpan {
    pub start: usize,
    pub end: usize,
    pub note_index: usize,
    /// Phoneme entries belonging to this mora.
    pub entries: Range<usize>,
}

/// Mora `j` of an `M`-mora note `[s, s + L)` spans
/// `[s + round(jL/M), s + round((j+1)L/M))`. A rest is one pseudo-mora.
pub fn mora_boundaries(score: &Score) -> Vec<MoraSpan> {
    let mut out = Vec::with_capacity(score.num_morae());
    let mut entry = 0;
    for (ni, note) in score.notes().iter().enumerate() {
        let len = note.frames() as f64;
        if note.pitch.is_rest() {
            out.push(MoraSpan {
                start: note.start_frame,
                end: note.end_frame,
                note_index: ni,
                entries: entry..entry + 1,
            });
            entry += 1;
            continue;
        }
        let m = note.morae.len() as f64;
        for (j, mora) in note.morae.iter().enumerate() {
            let a = note.start_frame + (j as f64 * len / m).round() as usize;
            let b = note.start_frame + ((j + 1) as f64 * len / m).round() as usize;
            let k = mora.phonemes().len();
            out.push(MoraSpan {
                start: a,
                end: b,
                note_index: ni,
                entries: entry..entry + k,
            });
            entry += k;
        }
    }
    out
}

/// Log-F0 of the owning note for each phoneme entry. Rests hold the nearest
/// preceding pitched note; a leading rest takes the first pitched note.
pub fn note_pitch_vector(score: &Score) -> Result<Vec<f64>> {
    let entries = score.flatten();
    let notes = score.notes();
    let first = notes
        .iter()
        .find_map(|n| n.pitch.midi())
        .ok_or_else(|| Error::InvalidScore("all notes are rests".into()))?;
    let mut held = midi_to_log_f0(first);
    Ok(entries
        .iter()
        .map(|e| {
            if let Some(m) = notes[e.note_index].pitch.midi() {
                held = midi_to_log_f0(m);
            }
            held
        })
        .collect())
}
