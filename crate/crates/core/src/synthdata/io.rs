//! Corpus directory: `song_%04d.score`, `song_%04d.feat` (header `T D`, then
//! `T` lines of `D` values) and `song_%04d.align` (`T` phoneme indices).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{GroundTruth, Song};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::export::feat_text;
use crate::score::Score;

#[derive(Clone, Debug)]
pub struct SongFiles {
    pub score: PathBuf,
    pub feat: PathBuf,
    pub align: PathBuf,
}

impl SongFiles {
    pub fn new(dir: &Path, index: usize) -> Self {
        let stem = format!("song_{index:04}");
        SongFiles {
            score: dir.join(format!("{stem}.score")),
            feat: dir.join(format!("{stem}.feat")),
            align: dir.join(format!("{stem}.align")),
        }
    }
}

fn align_text(alignment: &[usize]) -> String {
    let mut s = String::with_capacity(alignment.len() * 3);
    for a in alignment {
        writeln!(s, "{a}").expect("write to String");
    }
    s
}

fn song_bytes(song: &Song) -> [String; 3] {
    [
        song.score.to_string(),
        feat_text(&song.truth.frames),
        align_text(&song.truth.alignment),
    ]
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_song(dir: &Path, index: usize, song: &Song) -> Result<()> {
    let files = SongFiles::new(dir, index);
    let [score, feat, align] = song_bytes(song);
    write(&files.score, &score)?;
    write(&files.feat, &feat)?;
    write(&files.align, &align)
}

/// SHA-256 over every song's serialized files, in song order.
pub fn corpus_checksum(songs: &[Song]) -> String {
    let mut h = Sha256::new();
    for (i, song) in songs.iter().enumerate() {
        let files = SongFiles::new(Path::new(""), i);
        let names = [&files.score, &files.feat, &files.align];
        for (name, text) in names.iter().zip(song_bytes(song)) {
            h.update(name.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(text.as_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Writes all songs and returns the corpus checksum.
pub fn write_corpus(dir: &Path, songs: &[Song]) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, s) in songs.iter().enumerate() {
        write_song(dir, i, s)?;
    }
    Ok(corpus_checksum(songs))
}

fn parse_feat(path: &Path, text: &str) -> Result<Tensor> {
    let bad = |m: String| Error::Corpus(format!("{}: {m}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| bad(format!("bad header `{header}`"))))
        .collect::<Result<_>>()?;
    let &[t, d] = dims.as_slice() else {
        return Err(bad(format!("header must be `T D`, got `{header}`")));
    };
    let mut data = Vec::with_capacity(t * d);
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(format!("line {}: bad value `{v}`", i + 2))))
            .collect::<Result<_>>()?;
        if row.len() != d {
            return Err(bad(format!("line {}: expected {d} values, got {}", i + 2, row.len())));
        }
        data.extend(row);
    }
    if data.len() != t * d {
        return Err(bad(format!("expected {t} frames, got {}", data.len() / d.max(1))));
    }
    Tensor::new(vec![t, d], data).map_err(|e| bad(e.to_string()))
}

pub fn read_song(dir: &Path, index: usize) -> Result<Song> {
    let files = SongFiles::new(dir, index);
    let score = Score::parse(&read(&files.score)?)?;
    let frames = parse_feat(&files.feat, &read(&files.feat)?)?;
    let alignment: Vec<usize> = read(&files.align)?
        .lines()
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::Corpus(format!("{}: bad index `{l}`", files.align.display())))
        })
        .collect::<Result<_>>()?;
    if alignment.len() != score.total_frames() || frames.rows() != score.total_frames() {
        return Err(Error::Corpus(format!(
            "song {index}: score has {} frames, features {}, alignment {}",
            score.total_frames(),
            frames.rows(),
            alignment.len()
        )));
    }
    if alignment.iter().any(|&a| a >= score.num_phonemes()) {
        return Err(Error::Corpus(format!("song {index}: alignment index out of range")));
    }
    Ok(Song {
        score,
        truth: GroundTruth { alignment, frames },
    })
}

/// Reads `song_0000`, `song_0001`, ... until the first missing score file.
pub fn read_corpus(dir: &Path) -> Result<Vec<Song>> {
    if !dir.is_dir() {
        return Err(Error::Corpus(format!("{} is not a directory", dir.display())));
    }
    let mut songs = Vec::new();
    while SongFiles::new(dir, songs.len()).score.exists() {
        songs.push(read_song(dir, songs.len())?);
    }
    if songs.is_empty() {
        return Err(Error::Corpus(format!("no songs in {}", dir.display())));
    }
    Ok(songs)
}
