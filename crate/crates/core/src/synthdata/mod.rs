//! Procedural singing corpus with known phoneme timing and a deterministic
//! acoustic-feature oracle.

mod io;
mod metrics;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use io::{corpus_checksum, read_corpus, read_song, write_corpus, write_song, SongFiles};
pub use metrics::{f0_rmse_cents, frame_argmax, monotonicity_rate, mora_of_entries, timing_error, TimingReport};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::score::{
    mora_boundaries, note_pitch_vector, Mora, NoteSpec, Phoneme, Pitch, Score, NUM_VOWELS, PHONEME_INVENTORY,
};

/// One cent in natural-log frequency units.
pub const LOG_CENT: f64 = std::f64::consts::LN_2 / 1200.0;

const MAX_TRIES: usize = 100;
const MIN_VOWEL_FRAMES: usize = 2;
const DETUNE_CENTS: f64 = 30.0;
const VIBRATO_CENTS: f64 = 20.0;
const VIBRATO_HZ: f64 = 5.0;
/// Stream ids reserved for corpus-wide draws; per-song streams use the index.
const TIMBRE_STREAM: u64 = u64::MAX;
const DETUNE_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub num_songs: usize,
    /// The last `num_test` songs are held out.
    pub num_test: usize,
    /// Inclusive.
    pub notes_per_song: (usize, usize),
    /// Half-open.
    pub tempo_bpm: (f64, f64),
    /// Inclusive.
    pub pitch_midi: (u8, u8),
    pub note_beats: Vec<f64>,
    pub two_mora_prob: f64,
    pub consonant_prob: f64,
    pub rest_prob: f64,
    pub consonant_frames_mean: f64,
    pub consonant_frames_std: f64,
    pub timing_shift_frames_mean: f64,
    pub timing_shift_frames_std: f64,
    pub noise_std: f64,
    pub acoustic_dim: usize,
    pub frame_shift_ms: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_songs: 70,
            num_test: 10,
            notes_per_song: (4, 8),
            tempo_bpm: (110.0, 150.0),
            pitch_midi: (55, 76),
            note_beats: vec![0.5, 0.75, 1.0],
            two_mora_prob: 0.4,
            consonant_prob: 0.7,
            rest_prob: 0.1,
            consonant_frames_mean: 6.0,
            consonant_frames_std: 2.0,
            timing_shift_frames_mean: 8.0,
            timing_shift_frames_std: 3.0,
            noise_std: 0.05,
            acoustic_dim: 8,
            frame_shift_ms: 5.0,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Corpus(m.to_string()));
        if self.num_songs == 0 || self.num_test > self.num_songs {
            return bad("need num_songs >= 1 and num_test <= num_songs");
        }
        let (lo, hi) = self.notes_per_song;
        if lo == 0 || lo > hi {
            return bad("notes_per_song range is empty");
        }
        let (tlo, thi) = self.tempo_bpm;
        if !(tlo > 0.0 && tlo < thi && thi.is_finite()) {
            return bad("tempo range is empty");
        }
        let (plo, phi) = self.pitch_midi;
        if plo > phi || plo < crate::score::MIN_MIDI || phi > crate::score::MAX_MIDI {
            return bad("pitch range is empty or outside the score MIDI range");
        }
        if self.note_beats.is_empty() || self.note_beats.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return bad("note_beats must be non-empty and positive");
        }
        for p in [self.two_mora_prob, self.consonant_prob, self.rest_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if !(self.consonant_frames_mean >= 2.0) {
            return bad("consonant_frames_mean must be >= 2");
        }
        for s in [
            self.consonant_frames_std,
            self.timing_shift_frames_std,
            self.timing_shift_frames_mean,
            self.noise_std,
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad("standard deviations and shift mean must be finite and >= 0");
            }
        }
        if self.acoustic_dim < 3 {
            return bad("acoustic_dim must be >= 3");
        }
        if !(self.frame_shift_ms > 0.0) {
            return bad("frame_shift_ms must be positive");
        }
        Ok(())
    }

    pub fn num_train(&self) -> usize {
        self.num_songs - self.num_test
    }
}

/// Phoneme timing and acoustic frames of one rendition.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Phoneme entry index per frame; non-decreasing, onto `0..N`.
    pub alignment: Vec<usize>,
    /// `[T, D]`: timbre, log-F0 residual, V/UV.
    pub frames: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Song {
    pub score: Score,
    pub truth: GroundTruth,
}

fn song_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Non-negative integer draw from a rounded normal, floored at `min`.
fn rounded_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64, min: usize) -> usize {
    let v = if std > 0.0 {
        Normal::new(mean, std).expect("validated std").sample(rng)
    } else {
        mean
    };
    (v.round().max(0.0) as usize).max(min)
}

fn sample_score(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> Result<Score> {
    let count = rng.random_range(spec.notes_per_song.0..=spec.notes_per_song.1);
    let tempo = rng.random_range(spec.tempo_bpm.0..spec.tempo_bpm.1);
    let (plo, phi) = spec.pitch_midi;
    let mut pitch = rng.random_range(plo..=phi) as i32;
    let mut notes = Vec::with_capacity(count);
    let mut prev_rest = true;
    for i in 0..count {
        let beats = spec.note_beats[rng.random_range(0..spec.note_beats.len())];
        let rest = i > 0 && !prev_rest && rng.random_bool(spec.rest_prob);
        prev_rest = rest;
        if rest {
            notes.push(NoteSpec {
                pitch: Pitch::Rest,
                beats,
                morae: vec![],
            });
            continue;
        }
        if i > 0 {
            pitch = (pitch + rng.random_range(-4..=4)).clamp(plo as i32, phi as i32);
        }
        let n_morae = if rng.random_bool(spec.two_mora_prob) { 2 } else { 1 };
        let morae = (0..n_morae)
            .map(|_| {
                let v = Phoneme::new(rng.random_range(0..NUM_VOWELS))?;
                if rng.random_bool(spec.consonant_prob) {
                    let c = Phoneme::new(rng.random_range(NUM_VOWELS..PHONEME_INVENTORY))?;
                    Mora::new(vec![c, v])
                } else {
                    Mora::new(vec![v])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        notes.push(NoteSpec {
            pitch: Pitch::Midi(pitch as u8),
            beats,
            morae,
        });
    }
    Score::new(notes, tempo, spec.frame_shift_ms)
}

/// Sung phoneme timing: each note's mora extents move earlier by the note's
/// timing shift, consonants take a note-independent duration and vowels the
/// rest. `None` when some mora cannot fit.
fn sample_alignment(spec: &CorpusSpec, score: &Score, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let spans = mora_boundaries(score);
    let shifts: Vec<usize> = score
        .notes()
        .iter()
        .map(|_| rounded_normal(rng, spec.timing_shift_frames_mean, spec.timing_shift_frames_std, 0))
        .collect();
    let starts: Vec<usize> = spans
        .iter()
        .map(|s| {
            if score.notes()[s.note_index].pitch.is_rest() {
                s.start
            } else {
                s.start.saturating_sub(shifts[s.note_index])
            }
        })
        .collect();
    let total = score.total_frames();
    let mut alignment = Vec::with_capacity(total);
    for (j, span) in spans.iter().enumerate() {
        let start = starts[j];
        let end = starts.get(j + 1).copied().unwrap_or(total);
        if end <= start {
            return None;
        }
        let len = end - start;
        let first = span.entries.start;
        if span.entries.len() == 2 {
            let c = rounded_normal(rng, spec.consonant_frames_mean, spec.consonant_frames_std, 2);
            if len < c + MIN_VOWEL_FRAMES {
                return None;
            }
            alignment.extend(std::iter::repeat_n(first, c));
            alignment.extend(std::iter::repeat_n(first + 1, len - c));
        } else {
            let is_rest = score.notes()[span.note_index].pitch.is_rest();
            if !is_rest && len < MIN_VOWEL_FRAMES {
                return None;
            }
            alignment.extend(std::iter::repeat_n(first, len));
        }
    }
    debug_assert_eq!(alignment.len(), total);
    Some(alignment)
}

/// Timbre prototype per phoneme id (silence included), `[P + 1, D - 2]`.
pub fn timbre_prototypes(spec: &CorpusSpec) -> Tensor {
    let mut rng = song_rng(spec.seed, TIMBRE_STREAM);
    let dims = spec.acoustic_dim - 2;
    let data = (0..(PHONEME_INVENTORY + 1) * dims)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::from_raw(vec![PHONEME_INVENTORY + 1, dims], data)
}

/// Acoustic frames for song `index` sung with the given phoneme timing.
/// Column `D - 2` holds the log-F0 residual from the note pitch.
pub fn oracle_features(score: &Score, alignment: &[usize], spec: &CorpusSpec, index: usize) -> Result<Tensor> {
    let entries = score.flatten();
    if alignment.len() != score.total_frames() {
        return Err(Error::Corpus(format!(
            "alignment has {} frames, score has {}",
            alignment.len(),
            score.total_frames()
        )));
    }
    if let Some(&bad) = alignment.iter().find(|&&e| e >= entries.len()) {
        return Err(Error::Corpus(format!("alignment entry {bad} out of range")));
    }
    let d = spec.acoustic_dim;
    let protos = timbre_prototypes(spec);
    let mut rng = song_rng(spec.seed, DETUNE_STREAM_BASE + index as u64);
    let detune: Vec<f64> = score
        .notes()
        .iter()
        .map(|_| rng.random_range(-DETUNE_CENTS..=DETUNE_CENTS) * LOG_CENT)
        .collect();
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).map_err(|e| Error::Corpus(e.to_string()))?;
    let mut data = Vec::with_capacity(alignment.len() * d);
    let mut vowel_onset = 0;
    for (f, &e) in alignment.iter().enumerate() {
        let entry = entries[e];
        let ph = entry.phoneme;
        if f == 0 || alignment[f - 1] != e {
            vowel_onset = f;
        }
        for &p in protos.row(ph.id()) {
            let n = if spec.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            data.push(p + n);
        }
        let residual = if ph.is_silence() {
            0.0
        } else {
            let mut r = detune[entry.note_index];
            if ph.is_vowel() {
                let secs = (f - vowel_onset) as f64 * spec.frame_shift_ms / 1000.0;
                r += VIBRATO_CENTS * LOG_CENT * (2.0 * std::f64::consts::PI * VIBRATO_HZ * secs).sin();
            }
            r
        };
        data.push(residual);
        data.push(if ph.is_voiced() && !ph.is_silence() { 1.0 } else { 0.0 });
    }
    Tensor::new(vec![alignment.len(), d], data)
}

/// Replace the residual column by absolute log-F0: the sung phoneme's note
/// pitch plus residual.
pub fn absolute_log_f0(score: &Score, truth: &GroundTruth) -> Result<Tensor> {
    let pitch = note_pitch_vector(score)?;
    let d = truth.frames.row_len();
    let mut out = truth.frames.clone();
    for (f, &e) in truth.alignment.iter().enumerate() {
        out.data_mut()[f * d + d - 2] += pitch[e];
    }
    Ok(out)
}

/// One song: rejection-sampled until score and timing are feasible.
pub fn generate_song(spec: &CorpusSpec, index: usize) -> Result<Song> {
    let mut rng = song_rng(spec.seed, index as u64);
    for _ in 0..MAX_TRIES {
        let score = sample_score(spec, &mut rng)?;
        if let Some(alignment) = sample_alignment(spec, &score, &mut rng) {
            let frames = oracle_features(&score, &alignment, spec, index)?;
            return Ok(Song {
                score,
                truth: GroundTruth { alignment, frames },
            });
        }
    }
    Err(Error::Corpus(format!(
        "song {index}: no feasible timing after {MAX_TRIES} tries"
    )))
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<Song>> {
    spec.validate()?;
    (0..spec.num_songs).map(|i| generate_song(spec, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusSpec {
        CorpusSpec {
            num_songs: 12,
            num_test: 2,
            ..Default::default()
        }
    }

    #[test]
    fn default_split() {
        let s = CorpusSpec::default();
        assert_eq!((s.num_songs, s.num_train(), s.num_test), (70, 60, 10));
        assert!(s.validate().is_ok());
    }

    #[test]
    fn deterministic() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&CorpusSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn truth_is_monotone_and_onto() {
        for song in generate_corpus(&small()).unwrap() {
            let a = &song.truth.alignment;
            let n = song.score.num_phonemes();
            assert_eq!(a.len(), song.score.total_frames());
            assert_eq!(a[0], 0);
            assert_eq!(*a.last().unwrap(), n - 1);
            for w in a.windows(2) {
                assert!(w[1] == w[0] || w[1] == w[0] + 1, "{w:?}");
            }
        }
    }

    #[test]
    fn songs_respect_spec() {
        let spec = small();
        for song in generate_corpus(&spec).unwrap() {
            let notes = song.score.notes();
            assert!((4..=8).contains(&notes.len()));
            assert!(!notes[0].pitch.is_rest());
            for w in notes.windows(2) {
                assert!(!(w[0].pitch.is_rest() && w[1].pitch.is_rest()));
            }
            for n in notes {
                assert!(spec.note_beats.contains(&n.beats));
                if let Pitch::Midi(m) = n.pitch {
                    assert!((55..=76).contains(&m));
                    assert!((1..=2).contains(&n.morae.len()));
                }
            }
            assert!((110.0..150.0).contains(&song.score.tempo_bpm()));
        }
    }

    #[test]
    fn noiseless_timbre_is_a_lookup() {
        let spec = CorpusSpec {
            noise_std: 0.0,
            ..small()
        };
        let protos = timbre_prototypes(&spec);
        for song in generate_corpus(&spec).unwrap() {
            let entries = song.score.flatten();
            for (f, &e) in song.truth.alignment.iter().enumerate() {
                let row = &song.truth.frames.row(f)[..6];
                assert_eq!(row, protos.row(entries[e].phoneme.id()));
            }
        }
    }

    #[test]
    fn residual_and_vuv_rules() {
        let bound = (DETUNE_CENTS + VIBRATO_CENTS) * LOG_CENT + 1e-15;
        for song in generate_corpus(&small()).unwrap() {
            let entries = song.score.flatten();
            for (f, &e) in song.truth.alignment.iter().enumerate() {
                let row = song.truth.frames.row(f);
                let ph = entries[e].phoneme;
                assert!(row[6].abs() <= bound);
                if ph.is_silence() {
                    assert_eq!(row[6], 0.0);
                    assert_eq!(row[7], 0.0);
                } else {
                    let voiced = ph.is_vowel() || (5..10).contains(&ph.id());
                    assert_eq!(row[7], if voiced { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn onsets_lead_the_score() {
        // Non-initial pitched notes start singing before their notated onset.
        let mut early = 0;
        let mut total = 0;
        for song in generate_corpus(&small()).unwrap() {
            let entries = song.score.flatten();
            for (ni, note) in song.score.notes().iter().enumerate().skip(1) {
                if note.pitch.is_rest() {
                    continue;
                }
                let first = song
                    .truth
                    .alignment
                    .iter()
                    .position(|&e| entries[e].note_index == ni)
                    .unwrap();
                total += 1;
                if first < note.start_frame {
                    early += 1;
                }
            }
        }
        assert!(early * 10 >= total * 8, "{early}/{total}");
    }

    #[test]
    fn absolute_pitch_adds_note_log_f0() {
        let song = generate_song(&small(), 0).unwrap();
        let abs = absolute_log_f0(&song.score, &song.truth).unwrap();
        let pitch = note_pitch_vector(&song.score).unwrap();
        for (f, &e) in song.truth.alignment.iter().enumerate() {
            assert!((abs.at(f, 6) - song.truth.frames.at(f, 6) - pitch[e]).abs() < 1e-12);
            assert_eq!(abs.at(f, 0), song.truth.frames.at(f, 0));
        }
    }

    #[test]
    fn infeasible_spec_errors() {
        let spec = CorpusSpec {
            num_songs: 1,
            num_test: 0,
            note_beats: vec![0.05],
            ..Default::default()
        };
        assert!(matches!(generate_corpus(&spec), Err(Error::Corpus(_))));
    }
}
