//! Cosine annealing of the learning rate, stepped once per epoch.

/// `lr_min + 0.5·(lr0 − lr_min)·(1 + cos(π·epoch/total))`, clamped to
/// `lr_min` past the end.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64, lr_min: f64) -> f64 {
    if total_epochs == 0 || epoch >= total_epochs {
        return lr_min;
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + libm::cos(phase))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 0.0), 1e-3);
        assert!(cosine_lr(100, 100, 1e-3, 0.0).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3, 1e-5) - (1e-3 + 1e-5) / 2.0).abs() < 1e-12);
        assert_eq!(cosine_lr(250, 100, 1e-3, 1e-5), 1e-5);
    }

    #[test]
    fn monotonically_nonincreasing() {
        let mut last = f64::INFINITY;
        for epoch in 0..=60 {
            let lr = cosine_lr(epoch, 60, 1e-2, 1e-6);
            assert!(lr <= last + 1e-18, "epoch {epoch}");
            assert!(lr >= 1e-6 - 1e-18);
            last = lr;
        }
    }
}
