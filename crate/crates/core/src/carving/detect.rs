use serde::{Deserialize, Serialize};

/// Which edge the first-photon detector reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRule {
    /// Literal difference rule, replaced by the rising edge when it finds
    /// nothing or lands after the rise.
    LiteralWithFallback,
    /// Literal difference rule only.
    LiteralOnly,
    /// Rising edge only.
    RisingEdge,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub gaussian_sigma: f64,
    pub floor_fraction: f64,
    /// Threshold on `tau(t) - tau(t+1)` as a fraction of the smoothed maximum.
    pub eta_fraction: f64,
    pub rule: EdgeRule,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma: 2.0,
            floor_fraction: 0.1,
            eta_fraction: 0.05,
            rule: EdgeRule::LiteralWithFallback,
        }
    }
}

/// How a detection was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectionPath {
    Literal,
    RisingEdge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Detection {
    pub bin: usize,
    pub path: DetectionPath,
}

/// Gaussian smoothing with zero padding; `sigma = 0` copies.
pub fn gaussian_smooth(x: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return x.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            (-radius..=radius)
                .filter(|k| (0..n).contains(&(i + k)))
                .map(|k| kernel[(k + radius) as usize] * x[(i + k) as usize])
                .sum::<f64>()
                / norm
        })
        .collect()
}

/// First-returning-photon bin of one transient.
///
/// The transient is smoothed and values under `floor_fraction * max` are
/// zeroed. The literal rule returns the `t` minimizing `tau(t) - tau(t+1)`
/// among bins where that difference exceeds `eta`; the rising edge is the
/// first bin left non-zero.
pub fn detect_first_photon(tau: &[f64], cfg: &DetectorConfig) -> Option<Detection> {
    let mut s = gaussian_smooth(tau, cfg.gaussian_sigma);
    let max = s.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let floor = cfg.floor_fraction * max;
    s.iter_mut().filter(|v| **v < floor).for_each(|v| *v = 0.0);
    let eta = cfg.eta_fraction * max;
    let literal = (0..s.len().saturating_sub(1))
        .filter(|&t| s[t] - s[t + 1] > eta)
        .min_by(|&a, &b| (s[a] - s[a + 1]).total_cmp(&(s[b] - s[b + 1])));
    let rise = s.iter().position(|v| *v > 0.0);
    let lit = literal.map(|bin| Detection {
        bin,
        path: DetectionPath::Literal,
    });
    let ris = rise.map(|bin| Detection {
        bin,
        path: DetectionPath::RisingEdge,
    });
    match cfg.rule {
        EdgeRule::LiteralOnly => lit,
        EdgeRule::RisingEdge => ris,
        EdgeRule::LiteralWithFallback => match (literal, rise) {
            (Some(l), Some(r)) if l <= r => lit,
            (None, None) => None,
            _ => ris,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_detect_nothing() {
        assert_eq!(detect_first_photon(&[0.0; 64], &DetectorConfig::default()), None);
    }

    #[test]
    fn clean_step_falls_back_to_rise() {
        let tau: Vec<f64> = (0..64).map(|t| if t < 20 { 0.0 } else { 1.0 }).collect();
        let cfg = DetectorConfig {
            gaussian_sigma: 0.0,
            ..Default::default()
        };
        assert_eq!(
            detect_first_photon(&tau, &cfg),
            Some(Detection {
                bin: 20,
                path: DetectionPath::RisingEdge
            })
        );
    }

    #[test]
    fn smoothing_preserves_mass_inside() {
        let mut x = vec![0.0; 41];
        x[20] = 1.0;
        let s = gaussian_smooth(&x, 2.0);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s[20] > s[19] && s[19] == s[21]);
    }
}
