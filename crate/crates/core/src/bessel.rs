//! Bessel functions of the first kind, integer order, by Miller's backward
//! recurrence normalised with `J_0 + 2 Σ J_2k = 1`.

/// `J_n(x)` for integer `n` and real `x`.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    let order = n.unsigned_abs() as usize;
    let mut v = bessel_j_all(order, x.abs())[order];
    // J_{-n} = (-1)^n J_n and J_n(-x) = (-1)^n J_n(x).
    let odd = order % 2 == 1;
    if odd && (n < 0) != (x < 0.0) {
        v = -v;
    }
    v
}

/// `[J_0(x), …, J_max(x)]` for `x ≥ 0`.
pub fn bessel_j_all(max: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; max + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let top = max.max(x as usize);
    let mut start = top + 20 + (40.0 * top as f64).sqrt() as usize;
    start += start % 2;
    let (mut next, mut cur) = (0.0f64, 1e-300f64);
    let mut norm = 0.0;
    let mut buf = vec![0.0; start + 1];
    buf[start] = cur;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / x * cur - next;
        next = cur;
        cur = prev;
        buf[k - 1] = cur;
        if cur.abs() > 1e250 {
            for v in buf[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
            next *= 1e-250;
            cur *= 1e-250;
            norm *= 1e-250;
        }
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            norm += 2.0 * cur;
        }
    }
    norm += buf[0];
    for (o, b) in out.iter_mut().zip(&buf) {
        *o = b / norm;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Bessel's integral by the trapezoid rule; spectrally accurate for the
    /// periodic integrand.
    fn integral(n: i32, x: f64) -> f64 {
        let m = 400;
        (0..m)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / m as f64;
                (n as f64 * t - x * t.sin()).cos()
            })
            .sum::<f64>()
            / m as f64
    }

    #[test]
    fn agrees_with_integral_representation() {
        for n in -8..=12 {
            for k in 0..60 {
                let x = -15.0 + 0.61 * k as f64;
                let (a, b) = (bessel_j(n, x), integral(n, x));
                assert!((a - b).abs() < 1e-13, "n={n} x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn known_values() {
        assert_eq!(bessel_j(0, 0.0), 1.0);
        assert_eq!(bessel_j(3, 0.0), 0.0);
        assert!(bessel_j(0, 2.404_825_557_695_773).abs() < 1e-15);
        assert!((bessel_j(1, 1.0) - 0.440_050_585_744_933_5).abs() < 1e-15);
    }

    #[test]
    fn large_argument_and_order() {
        for (n, x) in [(0, 80.0), (5, 120.0), (60, 30.0), (100, 150.0)] {
            let (a, b) = (bessel_j(n, x), integral(n, x));
            assert!((a - b).abs() < 1e-12, "n={n} x={x}: {a} vs {b}");
        }
    }
}
