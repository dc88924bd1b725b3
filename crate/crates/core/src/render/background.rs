use log::warn;

use crate::autodiff::{NodeId, Real, Tape, TapeError};

/// Below this total the background is treated as absent.
pub const MIN_BACKGROUND_SUM: f64 = 1e-12;

/// `xi = max(0, (sum tau_m - sum tau_o) / sum tau_b)` and `tau = tau_o + xi
/// tau_b`.
pub fn composite_background(tau_o: &[f64], tau_b: &[f64], tau_m: &[f64]) -> (Vec<f64>, f64) {
    assert!(
        tau_o.len() == tau_b.len() && tau_o.len() == tau_m.len(),
        "transient lengths differ"
    );
    let sb: f64 = tau_b.iter().sum();
    let xi = if sb < MIN_BACKGROUND_SUM {
        warn!("background transient sums to {sb:e}; scaling set to 0");
        0.0
    } else {
        let sm: f64 = tau_m.iter().sum();
        let so: f64 = tau_o.iter().sum();
        ((sm - so) / sb).max(0.0)
    };
    let tau = tau_o.iter().zip(tau_b).map(|(o, b)| o + xi * b).collect();
    (tau, xi)
}

/// Taped version of [`composite_background`]; `xi` stays differentiable with
/// respect to both transients. Returns the composited node and `xi`'s node.
pub fn composite_background_tape<F: Real>(
    tape: &mut Tape<F>,
    tau_o: NodeId,
    tau_b: NodeId,
    tau_m: &[f64],
) -> Result<(NodeId, NodeId), TapeError> {
    let sb = tape.sum(tau_b)?;
    if tape.scalar_value(sb).to_f64() < MIN_BACKGROUND_SUM {
        warn!("background transient vanishes; scaling set to 0");
        let xi = tape.fixed(0.0);
        return Ok((tau_o, xi));
    }
    let so = tape.sum(tau_o)?;
    let sm = tape.fixed(tau_m.iter().sum());
    let num = tape.sub(sm, so)?;
    let ratio = tape.div(num, sb)?;
    let zero = tape.fixed(0.0);
    let xi = tape.max(ratio, zero)?;
    let scaled = tape.mul(tau_b, xi)?;
    Ok((tape.add(tau_o, scaled)?, xi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_gives_zero() {
        let o = [1.0, 2.0, 0.5];
        let (tau, xi) = composite_background(&o, &[0.1, 0.1, 0.3], &o);
        assert_eq!(xi, 0.0);
        assert_eq!(tau, o.to_vec());
    }

    #[test]
    fn recovers_mixture() {
        let o = [1.0, 2.0, 0.5];
        let b = [0.25, 0.5, 0.125];
        let m: Vec<f64> = o.iter().zip(&b).map(|(o, b)| o + 2.0 * b).collect();
        let (_, xi) = composite_background(&o, &b, &m);
        assert_eq!(xi, 2.0);
        let (_, xi) = composite_background(&[5.0, 5.0, 5.0], &b, &m);
        assert_eq!(xi, 0.0);
    }

    #[test]
    fn tape_agrees() {
        let mut t = Tape::<f64>::new();
        let o = t.column(&[1.0, 2.0]);
        let b = t.column(&[0.5, 0.25]);
        let (tau, xi) = composite_background_tape(&mut t, o, b, &[3.0, 2.5]).unwrap();
        assert!((t.scalar_value(xi) - 2.5 / 0.75).abs() < 1e-15);
        let s: f64 = t.value(tau).iter().sum();
        assert!((s - 5.5).abs() < 1e-12);
    }
}
