//! Musical score model and everything derived from it: the phoneme axis seen
//! by the encoder, frame-level note context, note-relative positions, and the
//! pseudo mora boundaries used by the penalty matrix.

mod features;
mod parse;

use std::fmt;

pub use features::{
    auxiliary_note_frames, mora_boundaries, note_pitch_vector, note_position_triple, phoneme_feature_dim,
    phoneme_features, position_matrix, MoraSpan, NotePositionTriple, AUX_FEATURE_DIM,
};

use crate::error::{Error, Result};

/// Size of the closed phoneme inventory. Ids `0..5` are vowels, `5..15`
/// consonants; id `PHONEME_INVENTORY` is reserved for silence.
pub const PHONEME_INVENTORY: usize = 15;
pub const NUM_VOWELS: usize = 5;
pub const SILENCE_ID: usize = PHONEME_INVENTORY;

/// Consonants `5..10` are voiced, `10..15` unvoiced.
const FIRST_UNVOICED: usize = 10;

pub const MIN_MIDI: u8 = 36;
pub const MAX_MIDI: u8 = 84;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Phoneme {
    id: usize,
}

impl Phoneme {
    pub fn new(id: usize) -> Result<Self> {
        if id >= PHONEME_INVENTORY {
            return Err(Error::InvalidScore(format!(
                "phoneme id {id} outside inventory 0..{PHONEME_INVENTORY}"
            )));
        }
        Ok(Phoneme { id })
    }

    pub fn silence() -> Self {
        Phoneme { id: SILENCE_ID }
    }

    pub fn id(self) -> usize {
        self.id
    }

    pub fn is_vowel(self) -> bool {
        self.id < NUM_VOWELS
    }

    pub fn is_silence(self) -> bool {
        self.id == SILENCE_ID
    }

    pub fn is_voiced(self) -> bool {
        self.id < FIRST_UNVOICED
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mora {
    phonemes: Vec<Phoneme>,
}

impl Mora {
    /// A mora is a vowel optionally preceded by one consonant.
    pub fn new(phonemes: Vec<Phoneme>) -> Result<Self> {
        let ok = match phonemes.as_slice() {
            [v] => v.is_vowel(),
            [c, v] => !c.is_vowel() && v.is_vowel(),
            _ => false,
        };
        if !ok {
            let ids: Vec<usize> = phonemes.iter().map(|p| p.id).collect();
            return Err(Error::InvalidScore(format!(
                "mora {ids:?} must be a vowel optionally preceded by one consonant"
            )));
        }
        Ok(Mora { phonemes })
    }

    pub fn from_ids(ids: &[usize]) -> Result<Self> {
        let ph = ids.iter().map(|&i| Phoneme::new(i)).collect::<Result<_>>()?;
        Mora::new(ph)
    }

    pub fn phonemes(&self) -> &[Phoneme] {
        &self.phonemes
    }

    pub fn has_consonant(&self) -> bool {
        self.phonemes.len() == 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pitch {
    Midi(u8),
    Rest,
}

impl Pitch {
    pub fn midi(self) -> Option<u8> {
        match self {
            Pitch::Midi(m) => Some(m),
            Pitch::Rest => None,
        }
    }

    pub fn is_rest(self) -> bool {
        self == Pitch::Rest
    }
}

/// Natural log of the fundamental frequency of a MIDI note (A4 = 440 Hz).
pub fn midi_to_log_f0(midi: u8) -> f64 {
    440f64.ln() + (midi as f64 - 69.0) / 12.0 * 2f64.ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Note {
    pub pitch: Pitch,
    pub beats: f64,
    pub start_frame: usize,
    pub end_frame: usize,
    pub morae: Vec<Mora>,
}

impl Note {
    pub fn frames(&self) -> usize {
        self.end_frame - self.start_frame
    }
}

/// Note content before frame placement.
#[derive(Clone, Debug, PartialEq)]
pub struct NoteSpec {
    pub pitch: Pitch,
    pub beats: f64,
    pub morae: Vec<Mora>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    notes: Vec<Note>,
    tempo_bpm: f64,
    frame_shift_ms: f64,
}

pub const DEFAULT_FRAME_SHIFT_MS: f64 = 5.0;

/// One row of the encoder axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhonemeEntry {
    pub phoneme: Phoneme,
    pub note_index: usize,
    /// Index over all morae of the song; a rest counts as one pseudo-mora.
    pub mora_index_global: usize,
    /// Index of the mora inside its note.
    pub mora_in_note: usize,
    pub position_in_mora: usize,
}

impl Score {
    /// Places notes on the frame grid: each note lasts
    /// `round(beats * 60000 / (bpm * frame_shift_ms))` frames.
    pub fn new(notes: Vec<NoteSpec>, tempo_bpm: f64, frame_shift_ms: f64) -> Result<Self> {
        if !(tempo_bpm.is_finite() && tempo_bpm > 0.0) {
            return Err(Error::InvalidScore(format!("tempo must be positive, got {tempo_bpm}")));
        }
        if !(frame_shift_ms.is_finite() && frame_shift_ms > 0.0) {
            return Err(Error::InvalidScore(format!(
                "frame shift must be positive, got {frame_shift_ms}"
            )));
        }
        let fpb = 60000.0 / (tempo_bpm * frame_shift_ms);
        let mut start = 0;
        let mut placed = Vec::with_capacity(notes.len());
        for (i, n) in notes.into_iter().enumerate() {
            if !(n.beats.is_finite() && n.beats > 0.0) {
                return Err(Error::InvalidScore(format!("note {i}: beats must be positive")));
            }
            let frames = (n.beats * fpb).round() as usize;
            if frames == 0 {
                return Err(Error::InvalidScore(format!("note {i}: shorter than one frame")));
            }
            placed.push(Note {
                pitch: n.pitch,
                beats: n.beats,
                start_frame: start,
                end_frame: start + frames,
                morae: n.morae,
            });
            start += frames;
        }
        Score::from_placed(placed, tempo_bpm, frame_shift_ms)
    }

    /// Build from notes whose frame extents are already set.
    pub fn from_placed(notes: Vec<Note>, tempo_bpm: f64, frame_shift_ms: f64) -> Result<Self> {
        let s = Score {
            notes,
            tempo_bpm,
            frame_shift_ms,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.notes.is_empty() {
            return Err(Error::InvalidScore("score has no notes".into()));
        }
        if !self.notes.iter().any(|n| !n.pitch.is_rest()) {
            return Err(Error::InvalidScore("score needs at least one non-rest note".into()));
        }
        let mut expect = 0;
        for (i, n) in self.notes.iter().enumerate() {
            if n.start_frame != expect || n.end_frame <= n.start_frame {
                return Err(Error::InvalidScore(format!(
                    "note {i} spans [{}, {}) but should start at {expect}",
                    n.start_frame, n.end_frame
                )));
            }
            expect = n.end_frame;
            match n.pitch {
                Pitch::Rest if !n.morae.is_empty() => {
                    return Err(Error::InvalidScore(format!("rest note {i} carries morae")));
                }
                Pitch::Midi(m) if !(MIN_MIDI..=MAX_MIDI).contains(&m) => {
                    return Err(Error::InvalidScore(format!(
                        "note {i}: MIDI {m} outside {MIN_MIDI}..={MAX_MIDI}"
                    )));
                }
                Pitch::Midi(_) if n.morae.is_empty() => {
                    return Err(Error::InvalidScore(format!("note {i} has no morae")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn tempo_bpm(&self) -> f64 {
        self.tempo_bpm
    }

    pub fn frame_shift_ms(&self) -> f64 {
        self.frame_shift_ms
    }

    pub fn frames_per_beat(&self) -> f64 {
        60000.0 / (self.tempo_bpm * self.frame_shift_ms)
    }

    /// Total frame count `T`.
    pub fn total_frames(&self) -> usize {
        self.notes.last().map_or(0, |n| n.end_frame)
    }

    /// Index of the note containing `frame`, clamped to the last note.
    pub fn note_at_frame(&self, frame: usize) -> usize {
        self.notes
            .partition_point(|n| n.end_frame <= frame)
            .min(self.notes.len() - 1)
    }

    /// Flatten into the encoder's phoneme axis. Rests contribute one silence
    /// entry each.
    pub fn flatten(&self) -> Vec<PhonemeEntry> {
        let mut out = Vec::new();
        let mut mora_global = 0;
        for (ni, note) in self.notes.iter().enumerate() {
            if note.pitch.is_rest() {
                out.push(PhonemeEntry {
                    phoneme: Phoneme::silence(),
                    note_index: ni,
                    mora_index_global: mora_global,
                    mora_in_note: 0,
                    position_in_mora: 0,
                });
                mora_global += 1;
                continue;
            }
            for (mi, mora) in note.morae.iter().enumerate() {
                for (pi, &ph) in mora.phonemes.iter().enumerate() {
                    out.push(PhonemeEntry {
                        phoneme: ph,
                        note_index: ni,
                        mora_index_global: mora_global,
                        mora_in_note: mi,
                        position_in_mora: pi,
                    });
                }
                mora_global += 1;
            }
        }
        out
    }

    pub fn num_phonemes(&self) -> usize {
        self.flatten().len()
    }

    /// Number of morae including rest pseudo-morae.
    pub fn num_morae(&self) -> usize {
        self.notes.iter().map(|n| n.morae.len().max(1)).sum()
    }
}

impl fmt::Display for Score {
    /// Text score format; parsed back by [`Score::parse`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tempo={} frame_shift_ms={}", self.tempo_bpm, self.frame_shift_ms)?;
        for n in &self.notes {
            match n.pitch {
                Pitch::Rest => writeln!(f, "note R {}", n.beats)?,
                Pitch::Midi(m) => {
                    let morae: Vec<String> = n
                        .morae
                        .iter()
                        .map(|mo| {
                            mo.phonemes
                                .iter()
                                .map(|p| p.id.to_string())
                                .collect::<Vec<_>>()
                                .join("/")
                        })
                        .collect();
                    writeln!(f, "note {m} {} {}", n.beats, morae.join(";"))?
                }
            }
        }
        Ok(())
    }
}
