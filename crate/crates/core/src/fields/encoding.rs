use std::f64::consts::PI;

/// Output width of [`positional_encode`] for a `k`-vector.
pub fn encoded_width(k: usize, l: usize) -> usize {
    k + 2 * k * l
}

/// Append `(x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x),
/// cos(2^(L-1) pi x))` to `out`; each sine/cosine group covers all `k`
/// coordinates.
///
/// Higher octaves use the double-angle identities, so only the first octave
/// calls `sin_cos`.
pub fn encode_into(x: &[f64], l: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(x);
    if l == 0 {
        return;
    }
    let mut sc: Vec<(f64, f64)> = x.iter().map(|v| (PI * v).sin_cos()).collect();
    for octave in 0..l {
        if octave > 0 {
            for p in sc.iter_mut() {
                *p = (2.0 * p.0 * p.1, (p.1 - p.0) * (p.1 + p.0));
            }
        }
        out.extend(sc.iter().map(|p| p.0));
        out.extend(sc.iter().map(|p| p.1));
    }
}

pub fn positional_encode(x: &[f64], l: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_width(x.len(), l));
    encode_into(x, l, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input() {
        let e = positional_encode(&[0.0; 3], 2);
        assert_eq!(e.len(), 15);
        assert_eq!(&e[3..6], &[0.0; 3]);
        assert_eq!(&e[6..9], &[1.0; 3]);
        assert_eq!(&e[9..12], &[0.0; 3]);
        assert_eq!(&e[12..15], &[1.0; 3]);
    }

    #[test]
    fn identity_without_frequencies() {
        assert_eq!(positional_encode(&[0.3, -2.0, 7.5], 0), vec![0.3, -2.0, 7.5]);
    }

    #[test]
    fn half_turn() {
        let e = positional_encode(&[1.0, 0.0, 0.0], 1);
        assert!(e[3].abs() < 1e-15);
        assert_eq!(e[6], -1.0);
    }

    #[test]
    fn octaves_match_direct_evaluation() {
        let x = [0.123, -0.77, 0.5001];
        let e = positional_encode(&x, 8);
        for k in 0..8 {
            let f = PI * 2f64.powi(k as i32);
            for (i, v) in x.iter().enumerate() {
                assert!((e[3 + 6 * k + i] - (f * v).sin()).abs() < 1e-12);
                assert!((e[6 + 6 * k + i] - (f * v).cos()).abs() < 1e-12);
            }
        }
    }
}
