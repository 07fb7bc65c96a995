//! Run configuration: flat `key = value` text with `#` comments.
//!
//! Values start from the built-in defaults, then the config file is applied,
//! then command-line overrides, so later sources win.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::network::{ModelConfig, SystemMode};
use crate::synthdata::CorpusSpec;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub corpus: CorpusSpec,
    pub train: TrainConfig,
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            corpus: CorpusSpec::default(),
            train: TrainConfig::default(),
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("run"),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Apply one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, c, t) = (&mut self.model, &mut self.corpus, &mut self.train);
        let v = value.trim();
        match key {
            "mode" => m.mode = v.parse()?,
            "seed" => m.seed = num(key, v)?,
            "corpus_seed" => c.seed = num(key, v)?,
            "encoder_dim" => m.encoder_dim = num(key, v)?,
            "query_dim" => m.query_dim = num(key, v)?,
            "decoder_dim" => m.decoder_dim = num(key, v)?,
            "prenet_dims" => m.prenet_dims = list(key, v)?,
            "aux_dim" => m.aux_dim = num(key, v)?,
            "postnet_channels" => m.postnet_channels = num(key, v)?,
            "postnet_width" => m.postnet_width = num(key, v)?,
            "encoder_conv_width" => m.encoder_conv_width = num(key, v)?,
            "reduction_factor" => m.reduction_factor = num(key, v)?,
            "acoustic_dim" => {
                m.acoustic_dim = num(key, v)?;
                c.acoustic_dim = m.acoustic_dim;
            }
            "attn_dim" => m.attn_dim = num(key, v)?,
            "embed_dim" => m.embed_dim = num(key, v)?,
            "location_channels" => m.location_channels = num(key, v)?,
            "location_kernel" => m.location_kernel = num(key, v)?,
            "prenet_dropout" => m.prenet_dropout = num(key, v)?,
            "num_songs" => c.num_songs = num(key, v)?,
            "num_test" => c.num_test = num(key, v)?,
            "notes_min" => c.notes_per_song.0 = num(key, v)?,
            "notes_max" => c.notes_per_song.1 = num(key, v)?,
            "tempo_min" => c.tempo_bpm.0 = num(key, v)?,
            "tempo_max" => c.tempo_bpm.1 = num(key, v)?,
            "pitch_min" => c.pitch_midi.0 = num(key, v)?,
            "pitch_max" => c.pitch_midi.1 = num(key, v)?,
            "note_beats" => c.note_beats = list(key, v)?,
            "two_mora_prob" => c.two_mora_prob = num(key, v)?,
            "consonant_prob" => c.consonant_prob = num(key, v)?,
            "rest_prob" => c.rest_prob = num(key, v)?,
            "consonant_frames_mean" => c.consonant_frames_mean = num(key, v)?,
            "consonant_frames_std" => c.consonant_frames_std = num(key, v)?,
            "timing_shift_mean" => c.timing_shift_frames_mean = num(key, v)?,
            "timing_shift_std" => c.timing_shift_frames_std = num(key, v)?,
            "noise_std" => c.noise_std = num(key, v)?,
            "frame_shift_ms" => c.frame_shift_ms = num(key, v)?,
            "steps" => t.steps = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "clip" => t.clip = num(key, v)?,
            "lambda" => t.lambda = num(key, v)?,
            "batch" => t.batch = num(key, v)?,
            "teacher_forcing" => t.teacher_forcing = boolean(key, v)?,
            "checkpoint_every" => t.checkpoint_every = num(key, v)?,
            "corpus_dir" => self.corpus_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Apply a `key = value` document on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.corpus.validate()?;
        self.train.validate()?;
        if self.model.acoustic_dim != self.corpus.acoustic_dim {
            return Err(Error::Config("model and corpus acoustic_dim differ".into()));
        }
        Ok(())
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let (m, c, t) = (&self.model, &self.corpus, &self.train);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to String");
        kv("mode", m.mode.to_string());
        kv("seed", m.seed.to_string());
        kv("corpus_seed", c.seed.to_string());
        kv("encoder_dim", m.encoder_dim.to_string());
        kv("query_dim", m.query_dim.to_string());
        kv("decoder_dim", m.decoder_dim.to_string());
        kv("prenet_dims", join(&m.prenet_dims));
        kv("aux_dim", m.aux_dim.to_string());
        kv("postnet_channels", m.postnet_channels.to_string());
        kv("postnet_width", m.postnet_width.to_string());
        kv("encoder_conv_width", m.encoder_conv_width.to_string());
        kv("reduction_factor", m.reduction_factor.to_string());
        kv("acoustic_dim", m.acoustic_dim.to_string());
        kv("attn_dim", m.attn_dim.to_string());
        kv("embed_dim", m.embed_dim.to_string());
        kv("location_channels", m.location_channels.to_string());
        kv("location_kernel", m.location_kernel.to_string());
        kv("prenet_dropout", m.prenet_dropout.to_string());
        kv("num_songs", c.num_songs.to_string());
        kv("num_test", c.num_test.to_string());
        kv("notes_min", c.notes_per_song.0.to_string());
        kv("notes_max", c.notes_per_song.1.to_string());
        kv("tempo_min", c.tempo_bpm.0.to_string());
        kv("tempo_max", c.tempo_bpm.1.to_string());
        kv("pitch_min", c.pitch_midi.0.to_string());
        kv("pitch_max", c.pitch_midi.1.to_string());
        kv("note_beats", join(&c.note_beats));
        kv("two_mora_prob", c.two_mora_prob.to_string());
        kv("consonant_prob", c.consonant_prob.to_string());
        kv("rest_prob", c.rest_prob.to_string());
        kv("consonant_frames_mean", c.consonant_frames_mean.to_string());
        kv("consonant_frames_std", c.consonant_frames_std.to_string());
        kv("timing_shift_mean", c.timing_shift_frames_mean.to_string());
        kv("timing_shift_std", c.timing_shift_frames_std.to_string());
        kv("noise_std", c.noise_std.to_string());
        kv("frame_shift_ms", c.frame_shift_ms.to_string());
        kv("steps", t.steps.to_string());
        kv("lr", t.lr.to_string());
        kv("clip", t.clip.to_string());
        kv("lambda", t.lambda.to_string());
        kv("batch", t.batch.to_string());
        kv("teacher_forcing", t.teacher_forcing.to_string());
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv("corpus_dir", self.corpus_dir.display().to_string());
        kv("out_dir", self.out_dir.display().to_string());
        s
    }
}

/// Parses a comma-separated list of mode names.
pub fn parse_modes(list: &str) -> Result<Vec<SystemMode>> {
    list.split(',').map(|s| s.trim().parse()).collect()
}
