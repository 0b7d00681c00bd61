//! Dataset containers and the synthetic-recording specification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled EEG window, `channels × segment_len` samples in channel-major
/// order. Samples stay in plain `f32` storage so datasets can cross threads;
/// tensors are built at the point of use.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub subject_id: String,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EEGDataset {
    pub channels: usize,
    pub segment_len: usize,
    pub sampling_rate: f64,
    pub n_classes: usize,
    pub subjects: Vec<SubjectData>,
}

impl EEGDataset {
    /// Derived channel labels; the on-disk format does not persist names.
    pub fn channel_names(&self) -> Vec<String> {
        (0..self.channels).map(|i| format!("ch{i}")).collect()
    }

    pub fn n_segments(&self) -> usize {
        self.subjects.iter().map(|s| s.segments.len()).sum()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectData> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.segment_len == 0 {
            return Err(Error::Config("dataset geometry has a zero dimension".into()));
        }
        if self.sampling_rate <= 0.0 {
            return Err(Error::Config(format!(
                "sampling rate {} must be positive",
                self.sampling_rate
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "{} classes; need at least 2",
                self.n_classes
            )));
        }
        if self.subjects.is_empty() {
            return Err(Error::Config("dataset has no subjects".into()));
        }
        let want = self.channels * self.segment_len;
        for subject in &self.subjects {
            if subject.segments.is_empty() {
                return Err(Error::Config(format!(
                    "subject {} has no segments",
                    subject.subject_id
                )));
            }
            for (i, seg) in subject.segments.iter().enumerate() {
                if seg.samples.len() != want {
                    return Err(Error::Config(format!(
                        "subject {} segment {i}: {} samples, expected {want}",
                        subject.subject_id,
                        seg.samples.len()
                    )));
                }
                if seg.label >= self.n_classes {
                    return Err(Error::Config(format!(
                        "subject {} segment {i}: label {} outside 0..{}",
                        subject.subject_id, seg.label, self.n_classes
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A narrowband oscillation injected into designated channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSignature {
    pub channels: Vec<usize>,
    pub center_hz: f64,
    pub width_hz: f64,
    pub amplitude: f64,
}

/// Signature bundle of one class; background-only classes leave it empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    #[serde(default)]
    pub signatures: Vec<ClassSignature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub segments_per_class: usize,
    pub channels: usize,
    pub segment_len: usize,
    pub sampling_rate: f64,
    /// One entry per class, in label order.
    pub classes: Vec<ClassSpec>,
    /// Spectral slope of the background: power falls off as 1/f^exponent.
    #[serde(default = "default_noise_exponent")]
    pub noise_exponent: f64,
    #[serde(default = "default_noise_amplitude")]
    pub noise_amplitude: f64,
    /// Per-subject signature amplitude jitter, as a fraction of the nominal.
    #[serde(default = "default_amplitude_jitter")]
    pub amplitude_jitter: f64,
}

fn default_noise_exponent() -> f64 {
    1.0
}
fn default_noise_amplitude() -> f64 {
    1.0
}
fn default_amplitude_jitter() -> f64 {
    0.2
}

impl Default for SyntheticSpec {
    /// Ten subjects of 8-channel, 2-second recordings at 128 Hz; class 1
    /// carries a 10 Hz alpha bump on channels 2 and 3, class 0 is
    /// background only.
    fn default() -> Self {
        SyntheticSpec {
            n_subjects: 10,
            segments_per_class: 40,
            channels: 8,
            segment_len: 256,
            sampling_rate: 128.0,
            classes: vec![
                ClassSpec::default(),
                ClassSpec {
                    signatures: vec![ClassSignature {
                        channels: vec![2, 3],
                        center_hz: 10.0,
                        width_hz: 2.0,
                        amplitude: 1.0,
                    }],
                },
            ],
            noise_exponent: 1.0,
            noise_amplitude: 1.0,
            amplitude_jitter: 0.2,
        }
    }
}

impl SyntheticSpec {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.segments_per_class == 0 {
            return Err(Error::Config(
                "n_subjects and segments_per_class must be positive".into(),
            ));
        }
        if self.channels == 0 || self.segment_len < 2 {
            return Err(Error::Config(
                "channels must be positive and segment_len at least 2".into(),
            ));
        }
        if self.sampling_rate <= 0.0 {
            return Err(Error::Config(format!(
                "sampling_rate {} must be positive",
                self.sampling_rate
            )));
        }
        if self.classes.len() < 2 {
            return Err(Error::Config(format!(
                "classes lists {} entries; need at least 2",
                self.classes.len()
            )));
        }
        if self.noise_exponent < 0.0 || self.noise_amplitude < 0.0 {
            return Err(Error::Config(
                "noise_exponent and noise_amplitude must be nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter) {
            return Err(Error::Config(format!(
                "amplitude_jitter {} outside [0, 1)",
                self.amplitude_jitter
            )));
        }
        let nyquist = self.sampling_rate / 2.0;
        for (class, spec) in self.classes.iter().enumerate() {
            for (i, sig) in spec.signatures.iter().enumerate() {
                let field = format!("classes[{class}].signatures[{i}]");
                if sig.amplitude < 0.0 || sig.width_hz < 0.0 {
                    return Err(Error::Config(format!(
                        "{field}: amplitude and width_hz must be nonnegative"
                    )));
                }
                let top = sig.center_hz + sig.width_hz / 2.0;
                if sig.center_hz <= 0.0 || top >= nyquist {
                    return Err(Error::Config(format!(
                        "{field}: band reaching {top} Hz must stay below the \
                         Nyquist frequency {nyquist} Hz"
                    )));
                }
                for &ch in &sig.channels {
                    if ch >= self.channels {
                        return Err(Error::Config(format!(
                            "{field}: channel {ch} outside 0..{}",
                            self.channels
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> EEGDataset {
        EEGDataset {
            channels: 2,
            segment_len: 4,
            sampling_rate: 100.0,
            n_classes: 2,
            subjects: vec![SubjectData {
                subject_id: "s01".into(),
                segments: vec![Segment {
                    samples: vec![0.0; 8],
                    label: 1,
                }],
            }],
        }
    }

    #[test]
    fn dataset_validation_catches_bad_members() {
        assert!(tiny_dataset().validate().is_ok());

        let mut short = tiny_dataset();
        short.subjects[0].segments[0].samples.pop();
        assert!(short.validate().is_err());

        let mut label = tiny_dataset();
        label.subjects[0].segments[0].label = 2;
        assert!(label.validate().is_err());

        let mut empty = tiny_dataset();
        empty.subjects[0].segments.clear();
        assert!(empty.validate().is_err());

        let mut none = tiny_dataset();
        none.subjects.clear();
        assert!(none.validate().is_err());
    }

    #[test]
    fn default_spec_is_valid_and_matches_its_contract() {
        let spec = SyntheticSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.n_subjects, 10);
        assert_eq!(spec.channels, 8);
        assert_eq!(spec.segment_len, 256);
        assert_eq!(spec.sampling_rate, 128.0);
        assert_eq!(spec.segments_per_class, 40);
        assert_eq!(spec.n_classes(), 2);
        assert!(spec.classes[0].signatures.is_empty());
        assert_eq!(spec.classes[1].signatures[0].channels, vec![2, 3]);
    }

    #[test]
    fn band_reaching_nyquist_is_rejected_and_named() {
        let mut spec = SyntheticSpec::default();
        spec.classes[1].signatures[0].center_hz = 63.5;
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("classes[1].signatures[0]"), "{err}");
        assert!(err.to_string().contains("Nyquist"), "{err}");
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = SyntheticSpec::default();
        let text = toml::to_string(&spec).unwrap();
        let back: SyntheticSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);

        let sparse = "\
n_subjects = 2
segments_per_class = 3
channels = 4
segment_len = 64
sampling_rate = 100.0

[[classes]]

[[classes]]
[[classes.signatures]]
channels = [0]
center_hz = 12.0
width_hz = 1.0
amplitude = 0.5
";
        let parsed: SyntheticSpec = toml::from_str(sparse).unwrap();
        assert_eq!(parsed.noise_exponent, 1.0);
        assert!(parsed.classes[0].signatures.is_empty());
        parsed.validate().unwrap();
    }
}
