//! Model hyperparameters and geometry validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Statistic the information-purification taps compute over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IpMode {
    /// log of mean squared amplitude (the purification transform).
    #[default]
    Power,
    /// Plain time average (ablation).
    Mean,
    /// Population standard deviation over time (ablation).
    Std,
    /// No transform: the bypass carries raw flattened activations (ablation).
    None,
}

/// Which per-block tensor the purification taps read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IpSource {
    /// Fine-branch output F_fg (default).
    #[default]
    Fine,
    /// Coarse-branch output F_cg.
    Coarse,
    /// Block output F_cg + F_fg.
    Fused,
}

/// κ(fs): one tenth of the sampling rate, rounded down, bumped to the next
/// integer when even. Always odd so same-padding is symmetric; covers 0.1 s
/// of signal (e.g. 200 Hz -> 21, 128 Hz -> 13, 500 Hz -> 51).
pub fn odd_kernel_length(sampling_rate: f64) -> Result<usize> {
    if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
        return Err(Error::Config(format!(
            "sampling rate {sampling_rate} must be a positive finite number"
        )));
    }
    let k = (0.1 * sampling_rate).floor() as usize;
    Ok(if k.is_multiple_of(2) { k + 1 } else { k })
}

fn default_kernels() -> usize {
    64
}
fn default_heads() -> usize {
    16
}
fn default_depth() -> usize {
    4
}
fn default_ffn_expansion() -> usize {
    2
}
fn default_dropout() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// EEG channels per segment (c).
    pub channels: usize,
    /// Samples per segment (l).
    pub segment_len: usize,
    /// Sampling rate in Hz (fs); sets the temporal kernel length κ.
    pub sampling_rate: f64,
    /// Output classes.
    pub n_classes: usize,
    /// Convolution kernels k; also the token count in every HCT block.
    #[serde(default = "default_kernels")]
    pub kernels: usize,
    /// Attention heads per block.
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    /// Per-head dimension; defaults to `n_heads` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_dim: Option<usize>,
    /// Number of stacked HCT blocks (n).
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// FFN hidden width as a multiple of the token length.
    #[serde(default = "default_ffn_expansion")]
    pub ffn_expansion: usize,
    /// Dropout probability used in attention, FFN, and the fine branch.
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    /// Fine-grained temporal-learning branch on/off (off = coarse only).
    #[serde(default = "default_true")]
    pub ftl_enabled: bool,
    /// Dense purification: taps from every block (on) or only the last (off).
    #[serde(default = "default_true")]
    pub dense_enabled: bool,
    #[serde(default)]
    pub ip_mode: IpMode,
    #[serde(default)]
    pub ip_source: IpSource,
}

impl ModelConfig {
    /// Per-head attention dimension d.
    pub fn attn_dim(&self) -> usize {
        self.head_dim.unwrap_or(self.n_heads)
    }

    /// Temporal/fine-branch kernel length κ for this sampling rate.
    pub fn kernel_len(&self) -> Result<usize> {
        odd_kernel_length(self.sampling_rate)
    }

    /// Default knobs on top of the given recording geometry.
    pub fn with_geometry(
        channels: usize,
        segment_len: usize,
        sampling_rate: f64,
        n_classes: usize,
    ) -> Self {
        ModelConfig {
            channels,
            segment_len,
            sampling_rate,
            n_classes,
            kernels: default_kernels(),
            n_heads: default_heads(),
            head_dim: None,
            depth: default_depth(),
            ffn_expansion: default_ffn_expansion(),
            dropout_p: default_dropout(),
            ftl_enabled: true,
            dense_enabled: true,
            ip_mode: IpMode::default(),
            ip_source: IpSource::default(),
        }
    }

    /// Desk-scale configuration used by gradient checking: small enough for
    /// per-element finite differences over every parameter.
    pub fn toy() -> Self {
        ModelConfig {
            channels: 4,
            segment_len: 64,
            sampling_rate: 30.0,
            n_classes: 2,
            kernels: 8,
            n_heads: 4,
            head_dim: Some(4),
            depth: 2,
            ffn_expansion: 2,
            dropout_p: 0.25,
            ftl_enabled: true,
            dense_enabled: true,
            ip_mode: IpMode::Power,
            ip_source: IpSource::Fine,
        }
    }

    /// Field-level checks; geometry feasibility is checked by
    /// [`shape_audit`](crate::model::shape_audit), which this calls.
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("channels must be at least 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "n_classes {} must be at least 2",
                self.n_classes
            )));
        }
        if self.kernels == 0 || self.n_heads == 0 || self.attn_dim() == 0 {
            return Err(Error::Config(
                "kernels, n_heads, and head_dim must be positive".into(),
            ));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.ffn_expansion == 0 {
            return Err(Error::Config("ffn_expansion must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        self.kernel_len()?;
        crate::model::shape_audit(self).map(|_| ())
    }
}
