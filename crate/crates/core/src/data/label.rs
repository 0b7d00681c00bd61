//! Trial windowing and reaction-time fatigue labeling.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Cuts a `[c, trial_len]` recording into overlapping `[c, window]` pieces.
/// The stride is `window · (1 − overlap)` samples; the tail that does not
/// fill a whole window is dropped.
pub fn segment_trial<T: Scalar>(
    trial: &Tensor<T>,
    window: usize,
    overlap: f64,
) -> Result<Vec<Tensor<T>>> {
    if trial.ndim() != 2 {
        return Err(Error::shape(
            "segment_trial",
            format!("trial {:?} is not [channels, samples]", trial.shape()),
        ));
    }
    let trial_len = trial.shape()[1];
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Domain(format!("overlap {overlap} outside [0, 1)")));
    }
    if window == 0 || window > trial_len {
        return Err(Error::Domain(format!(
            "window {window} does not fit a {trial_len}-sample trial"
        )));
    }
    let stride = (window as f64 * (1.0 - overlap)).round() as usize;
    if stride == 0 {
        return Err(Error::Domain(format!(
            "window {window} with overlap {overlap} strides zero samples"
        )));
    }
    let count = (trial_len - window) / stride + 1;
    (0..count)
        .map(|i| trial.narrow(1, i * stride, window))
        .collect()
}

/// Outcome of the reaction-time rule: fatigue is class 0, alert is class 1,
/// anything between the two thresholds is excluded from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FatigueLabel {
    Fatigue,
    Alert,
    Excluded,
}

impl FatigueLabel {
    pub fn class(self) -> Option<usize> {
        match self {
            FatigueLabel::Fatigue => Some(0),
            FatigueLabel::Alert => Some(1),
            FatigueLabel::Excluded => None,
        }
    }
}

/// Labels a segment from its local and global reaction times against the
/// alert baseline. Both comparisons are strict: samples sitting exactly on
/// a threshold are excluded.
pub fn label_fatigue(rt_local: f64, rt_global: f64, rt_alert: f64) -> Result<FatigueLabel> {
    for (name, v) in [
        ("rt_local", rt_local),
        ("rt_global", rt_global),
        ("rt_alert", rt_alert),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Domain(format!(
                "{name} = {v}; reaction times must be positive and finite"
            )));
        }
    }
    let label = if rt_local > 2.5 * rt_alert && rt_global > 2.5 * rt_alert {
        FatigueLabel::Fatigue
    } else if rt_local < 1.5 * rt_alert && rt_global < 1.5 * rt_alert {
        FatigueLabel::Alert
    } else {
        FatigueLabel::Excluded
    };
    Ok(label)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(channels: usize, len: usize) -> Tensor<f32> {
        let data: Vec<f32> = (0..channels * len).map(|i| i as f32).collect();
        Tensor::from_vec(data, &[channels, len]).unwrap()
    }

    #[test]
    fn half_overlap_window_counts() {
        // 20 s at 200 Hz, 4 s window, 50% overlap: (4000−800)/400 + 1 = 9.
        let segments = segment_trial(&ramp(1, 4000), 800, 0.5).unwrap();
        assert_eq!(segments.len(), 9);
        // 60 s at 1 Hz, 4 s window, step 2 s: (60−4)/2 + 1 = 29.
        let segments = segment_trial(&ramp(1, 60), 4, 0.5).unwrap();
        assert_eq!(segments.len(), 29);
        // No overlap, exactly two windows.
        let segments = segment_trial(&ramp(2, 16), 8, 0.0).unwrap();
        assert_eq!(segments.len(), 2);
    }

    #[test]
    fn segments_carry_the_right_slices() {
        let trial = ramp(2, 10);
        let segments = segment_trial(&trial, 4, 0.5).unwrap();
        assert_eq!(segments.len(), 4);
        for (i, seg) in segments.iter().enumerate() {
            assert_eq!(seg.shape(), &[2, 4]);
            let start = i * 2;
            let want: Vec<f32> = (0..2)
                .flat_map(|ch| (0..4).map(move |t| (ch * 10 + start + t) as f32))
                .collect();
            assert_eq!(seg.to_vec(), want);
        }
    }

    #[test]
    fn degenerate_windows_are_rejected() {
        let trial = ramp(1, 100);
        assert!(segment_trial(&trial, 101, 0.0).is_err());
        assert!(segment_trial(&trial, 0, 0.0).is_err());
        assert!(segment_trial(&trial, 10, 1.0).is_err());
        assert!(segment_trial(&trial, 10, -0.1).is_err());
        assert!(segment_trial(&trial, 1, 0.9).is_err(), "zero stride");
        let flat = Tensor::<f32>::zeros(&[100]);
        assert!(segment_trial(&flat, 10, 0.0).is_err());
    }

    #[test]
    fn reaction_time_rule_spec_cases() {
        assert_eq!(
            label_fatigue(3.0, 2.6, 1.0).unwrap(),
            FatigueLabel::Fatigue
        );
        assert_eq!(label_fatigue(1.2, 1.4, 1.0).unwrap(), FatigueLabel::Alert);
        assert_eq!(
            label_fatigue(2.0, 2.0, 1.0).unwrap(),
            FatigueLabel::Excluded
        );
        assert_eq!(FatigueLabel::Fatigue.class(), Some(0));
        assert_eq!(FatigueLabel::Alert.class(), Some(1));
        assert_eq!(FatigueLabel::Excluded.class(), None);
    }

    #[test]
    fn thresholds_are_strict() {
        // Exactly 1.5· or 2.5· the baseline never labels.
        assert_eq!(
            label_fatigue(1.5, 1.2, 1.0).unwrap(),
            FatigueLabel::Excluded
        );
        assert_eq!(
            label_fatigue(2.5, 3.0, 1.0).unwrap(),
            FatigueLabel::Excluded
        );
        // Mixed regimes exclude as well.
        assert_eq!(
            label_fatigue(3.0, 1.0, 1.0).unwrap(),
            FatigueLabel::Excluded
        );
    }

    #[test]
    fn nonpositive_reaction_times_are_domain_errors() {
        assert!(label_fatigue(0.0, 1.0, 1.0).is_err());
        assert!(label_fatigue(1.0, -2.0, 1.0).is_err());
        assert!(label_fatigue(1.0, 1.0, 0.0).is_err());
        assert!(label_fatigue(f64::NAN, 1.0, 1.0).is_err());
    }
}
