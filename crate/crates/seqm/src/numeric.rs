//! Small log-space numerics shared across the crate.

use statrs::function::erf;

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// log(exp(a) + exp(b)) without overflow; -inf inputs are handled.
pub(crate) fn logsumexp2(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// log(1 + exp(x)), stable over the whole line.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn ln_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// log P(Z > z) for standard normal Z; exact via erfc up to z = 12, then the
/// continued-fraction asymptotic expansion keeps the value finite for any z.
pub(crate) fn ln_std_normal_sf(z: f64) -> f64 {
    if z < 12.0 {
        (0.5 * erf::erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        let zi = 1.0 / (z * z);
        let series = 1.0 + zi * (-1.0 + zi * (3.0 + zi * (-15.0 + zi * 105.0)));
        -0.5 * z * z - z.ln() - LN_SQRT_2PI + series.ln()
    }
}

pub(crate) fn std_normal_sf(z: f64) -> f64 {
    0.5 * erf::erfc(z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, used once at startup to place the wave window.
pub(crate) fn std_normal_quantile(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf::erf_inv(2.0 * p - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn logsumexp_basics() {
        assert_abs_diff_eq!(logsumexp2(0.0, 0.0), 2.0f64.ln(), epsilon = 1e-15);
        assert_eq!(logsumexp2(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_eq!(logsumexp2(f64::NEG_INFINITY, 1.5), 1.5);
        assert_abs_diff_eq!(logsumexp2(-1000.0, -1001.0), -1000.0 + (1.0 + (-1.0f64).exp()).ln());
    }

    #[test]
    fn sf_matches_erfc_and_asymptotic_agree_at_switch() {
        assert_abs_diff_eq!(ln_std_normal_sf(0.0), 0.5f64.ln(), epsilon = 1e-15);
        let below = ln_std_normal_sf(11.999_999);
        let above = ln_std_normal_sf(12.000_001);
        assert_relative_eq!(below, above, max_relative = 1e-6);
        // Deep tail stays finite.
        assert!(ln_std_normal_sf(300.0).is_finite());
    }

    #[test]
    fn quantile_inverts_sf() {
        let z = std_normal_quantile(0.995);
        assert_abs_diff_eq!(std_normal_sf(z), 0.005, epsilon = 1e-12);
        assert_abs_diff_eq!(z, 2.575_829_3, epsilon = 1e-6);
    }
}
