use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GradCheckError {
    #[error("objective is not finite at the probe for coordinate {coord} (step {step:+e})")]
    NonFinite { coord: usize, step: f64 },
    #[error("coordinate {0} is out of range")]
    BadCoordinate(usize),
    #[error("objective failed: {0}")]
    Objective(String),
}

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|g_ad - g_fd| / (|g_fd| + 1e-8)` over the probed coordinates.
    pub max_rel_error: f64,
    /// `(coordinate, g_ad, g_fd)` per probe.
    pub probes: Vec<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<(usize, f64, f64)> {
        self.probes.iter().copied().max_by(|a, b| {
            rel_error(a.1, a.2)
                .partial_cmp(&rel_error(b.1, b.2))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    }
}

pub fn rel_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / (fd.abs() + 1e-8)
}

/// Compare the gradient returned by `objective` at `theta0` against central
/// finite differences with step `h` on the listed coordinates.
///
/// `objective` returns the value and its reverse-mode gradient; only the value
/// is used at the probe points.
pub fn grad_check<E, O>(
    mut objective: O,
    theta0: &[f64],
    h: f64,
    coords: &[usize],
) -> Result<GradCheckReport, GradCheckError>
where
    E: std::fmt::Display,
    O: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let (_, grad) = objective(theta0).map_err(|e| GradCheckError::Objective(e.to_string()))?;
    let mut theta = theta0.to_vec();
    let mut probes = Vec::with_capacity(coords.len());
    let mut worst: f64 = 0.0;
    for &c in coords {
        if c >= theta.len() || c >= grad.len() {
            return Err(GradCheckError::BadCoordinate(c));
        }
        let mut eval = |step: f64| -> Result<f64, GradCheckError> {
            theta[c] = theta0[c] + step;
            let v = objective(&theta)
                .map_err(|e| GradCheckError::Objective(e.to_string()))?
                .0;
            theta[c] = theta0[c];
            if v.is_finite() {
                Ok(v)
            } else {
                Err(GradCheckError::NonFinite { coord: c, step })
            }
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        worst = worst.max(rel_error(grad[c], fd));
        probes.push((c, grad[c], fd));
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn quadratic(theta: &[f64]) -> Result<(f64, Vec<f64>), String> {
        let mut t = Tape::<f64>::new();
        let x = t.column(theta);
        let sq = t.square(x).map_err(|e| e.to_string())?;
        let s = t.sum(sq).map_err(|e| e.to_string())?;
        let y = t.scale(s, 0.5).map_err(|e| e.to_string())?;
        let g = t.backward(y).map_err(|e| e.to_string())?;
        Ok((t.scalar_value(y), g.wrt(&t, x)))
    }

    #[test]
    fn quadratic_is_exact() {
        let theta = [0.3, -1.2, 2.0, 5.5];
        let r = grad_check(quadratic, &theta, 1e-4, &[0, 1, 2, 3]).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn constant_objective_has_zero_gradients() {
        let f = |theta: &[f64]| -> Result<(f64, Vec<f64>), String> { Ok((3.0, vec![0.0; theta.len()])) };
        let r = grad_check(f, &[1.0, 2.0], 1e-4, &[0, 1]).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.probes.iter().all(|p| p.1 == 0.0 && p.2 == 0.0));
    }

    #[test]
    fn non_finite_probe_is_reported() {
        let f = |theta: &[f64]| -> Result<(f64, Vec<f64>), String> { Ok((theta[0].ln(), vec![1.0 / theta[0]])) };
        let err = grad_check(f, &[1e-5], 1e-4, &[0]).unwrap_err();
        assert!(matches!(err, GradCheckError::NonFinite { coord: 0, .. }));
    }
}
