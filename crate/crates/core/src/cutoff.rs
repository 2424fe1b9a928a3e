//! The compactly supported smooth cutoff `χ̄`.

/// `χ̄(s) = ψ(2-s) / (ψ(2-s) + ψ(s-1))` with `ψ(u) = exp(-1/u)` for `u > 0`.
///
/// Equal to 1 on `[0, 1]`, 0 on `[2, ∞)`, smooth and strictly decreasing between.
pub fn smooth_cutoff(s: f64) -> f64 {
    if s <= 1.0 {
        return 1.0;
    }
    if s >= 2.0 {
        return 0.0;
    }
    // ψ(s-1)/ψ(2-s) written as one exponential to delay underflow
    1.0 / (1.0 + (1.0 / (2.0 - s) - 1.0 / (s - 1.0)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_and_tail() {
        assert_eq!(smooth_cutoff(0.0), 1.0);
        assert_eq!(smooth_cutoff(0.5), 1.0);
        assert_eq!(smooth_cutoff(1.0), 1.0);
        assert_eq!(smooth_cutoff(2.0), 0.0);
        assert_eq!(smooth_cutoff(3.0), 0.0);
    }

    #[test]
    fn strictly_decreasing_in_ramp() {
        let v = smooth_cutoff(1.5);
        assert!(v > 0.0 && v < 1.0);
        assert!((v - 0.5).abs() < 1e-15);
        assert!(smooth_cutoff(1.4) > smooth_cutoff(1.6));
        let mut prev = smooth_cutoff(1.049);
        // near the ends the ramp rounds to exactly 1 or 0 in f64
        for i in 50..950 {
            let s = 1.0 + i as f64 / 1000.0;
            let v = smooth_cutoff(s);
            assert!(v < prev, "not decreasing at {s}");
            prev = v;
        }
    }
}
