//! Encoder, autoregressive decoder, Post-Net and pitch normalization around
//! the attention mechanism.

mod checkpoint;
mod layers;
mod model;
mod optim;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use model::{pitch_normalize, Feed, Model, Pass, Synthesis, TeacherOutput, Utterance};
pub use optim::{clip_global_norm, Adam};

use crate::attention::{AttentionDims, AttentionMode, Transition};
use crate::error::{Error, Result};

/// The nine compared systems: component toggles of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SystemMode {
    Base,
    Nf,
    Np,
    NpNf,
    Prop,
    NoAtt,
    NoTrans,
    PTrans,
    TTrans,
}

impl SystemMode {
    pub const ALL: [SystemMode; 9] = [
        SystemMode::Base,
        SystemMode::Nf,
        SystemMode::Np,
        SystemMode::NpNf,
        SystemMode::Prop,
        SystemMode::NoAtt,
        SystemMode::NoTrans,
        SystemMode::PTrans,
        SystemMode::TTrans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemMode::Base => "base",
            SystemMode::Nf => "nf",
            SystemMode::Np => "np",
            SystemMode::NpNf => "npnf",
            SystemMode::Prop => "prop",
            SystemMode::NoAtt => "noatt",
            SystemMode::NoTrans => "notrans",
            SystemMode::PTrans => "ptrans",
            SystemMode::TTrans => "ttrans",
        }
    }

    /// Note position term in the attention heads.
    pub fn use_position(self) -> bool {
        !matches!(self, SystemMode::Base | SystemMode::Nf)
    }

    /// Auxiliary note features in the decoder input.
    pub fn use_aux(self) -> bool {
        !matches!(self, SystemMode::Base | SystemMode::Np)
    }

    /// Guided attention loss weighted into the objective.
    pub fn use_guided(self) -> bool {
        matches!(
            self,
            SystemMode::Prop | SystemMode::NoTrans | SystemMode::PTrans | SystemMode::TTrans
        )
    }

    /// `None` when the alignment comes from ground truth instead of attention.
    pub fn attention(self) -> Option<AttentionMode> {
        let transition = match self {
            SystemMode::NoAtt => return None,
            SystemMode::NoTrans => Transition::FixedHalf,
            SystemMode::PTrans => Transition::PhonemeOnly,
            SystemMode::TTrans => Transition::TimeOnly,
            _ => Transition::Full,
        };
        Some(AttentionMode {
            use_position: self.use_position(),
            transition,
        })
    }
}

impl fmt::Display for SystemMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder_dim: usize,
    pub query_dim: usize,
    pub decoder_dim: usize,
    pub prenet_dims: Vec<usize>,
    pub aux_dim: usize,
    pub postnet_channels: usize,
    pub postnet_width: usize,
    pub encoder_conv_width: usize,
    pub reduction_factor: usize,
    pub acoustic_dim: usize,
    pub attn_dim: usize,
    pub embed_dim: usize,
    pub location_channels: usize,
    pub location_kernel: usize,
    pub prenet_dropout: f64,
    pub mode: SystemMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_dim: 64,
            query_dim: 64,
            decoder_dim: 64,
            prenet_dims: vec![64, 32],
            aux_dim: 16,
            postnet_channels: 16,
            postnet_width: 5,
            encoder_conv_width: 5,
            reduction_factor: 3,
            acoustic_dim: 8,
            attn_dim: 32,
            embed_dim: 16,
            location_channels: 4,
            location_kernel: 15,
            prenet_dropout: 0.5,
            mode: SystemMode::Prop,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.reduction_factor == 0 {
            return bad("reduction_factor must be >= 1".into());
        }
        if self.acoustic_dim < 3 {
            return bad("acoustic_dim must be >= 3 (timbre + log-F0 residual + V/UV)".into());
        }
        if self.encoder_dim == 0 || !self.encoder_dim.is_multiple_of(2) {
            return bad("encoder_dim must be even and positive".into());
        }
        if self.prenet_dims.is_empty() || self.prenet_dims.contains(&0) {
            return bad("prenet_dims must be non-empty and positive".into());
        }
        for (name, w) in [
            ("postnet_width", self.postnet_width),
            ("encoder_conv_width", self.encoder_conv_width),
            ("location_kernel", self.location_kernel),
        ] {
            if w % 2 == 0 {
                return bad(format!("{name} must be odd, got {w}"));
            }
        }
        for (name, v) in [
            ("query_dim", self.query_dim),
            ("decoder_dim", self.decoder_dim),
            ("aux_dim", self.aux_dim),
            ("postnet_channels", self.postnet_channels),
            ("attn_dim", self.attn_dim),
            ("embed_dim", self.embed_dim),
            ("location_channels", self.location_channels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return bad(format!("prenet_dropout must be in [0, 1), got {}", self.prenet_dropout));
        }
        Ok(())
    }

    pub fn attention_dims(&self) -> AttentionDims {
        AttentionDims {
            query: self.query_dim,
            encoder: self.encoder_dim,
            attn: self.attn_dim,
            embed: self.embed_dim,
            channels: self.location_channels,
            kernel: self.location_kernel,
        }
    }

    /// Index of the log-F0 residual channel.
    pub fn f0_channel(&self) -> usize {
        self.acoustic_dim - 2
    }

    pub fn vuv_channel(&self) -> usize {
        self.acoustic_dim - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_table() {
        // (name, position, aux, guided, transition or None for oracle alignment)
        let table = [
            ("base", false, false, false, Some(Transition::Full)),
            ("nf", false, true, false, Some(Transition::Full)),
            ("np", true, false, false, Some(Transition::Full)),
            ("npnf", true, true, false, Some(Transition::Full)),
            ("prop", true, true, true, Some(Transition::Full)),
            ("noatt", true, true, false, None),
            ("notrans", true, true, true, Some(Transition::FixedHalf)),
            ("ptrans", true, true, true, Some(Transition::PhonemeOnly)),
            ("ttrans", true, true, true, Some(Transition::TimeOnly)),
        ];
        assert_eq!(table.len(), SystemMode::ALL.len());
        for (name, pos, aux, guided, transition) in table {
            let m: SystemMode = name.parse().unwrap();
            assert_eq!(m.name(), name);
            assert_eq!(m.use_aux(), aux, "{name}");
            assert_eq!(m.use_guided(), guided, "{name}");
            assert_eq!(m.attention().map(|a| a.transition), transition, "{name}");
            if let Some(a) = m.attention() {
                assert_eq!(a.use_position, pos, "{name}");
            }
        }
        assert!("prop2".parse::<SystemMode>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let c = ModelConfig {
            reduction_factor: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            acoustic_dim: 2,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            location_kernel: 14,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
