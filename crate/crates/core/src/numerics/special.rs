//! Gaussian special functions and small numeric helpers.

use crate::error::{Error, Result};

/// `0.5 · ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Quantile inputs are clamped to `[QUANTILE_EPS, 1 − QUANTILE_EPS]` by the
/// clamping entry points; the finite-precision CDF saturates beyond this.
pub const QUANTILE_EPS: f64 = 1e-15;

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - HALF_LN_2PI).exp()
}

pub fn std_normal_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - HALF_LN_2PI
}

/// `Φ(x)`, via the complementary error function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// `1 − Φ(x)` without cancellation.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// `Φ⁻¹(u)` for `u ∈ (0, 1)`.
pub fn std_normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile needs u in (0, 1), got {u}"
        )));
    }
    Ok(quantile_unchecked(u))
}

/// `Φ⁻¹(clamp(u, ε, 1 − ε))` with `ε = QUANTILE_EPS`.
/// The upper clamp is applied to the tail mass `1 − u`, which keeps the two
/// ends exactly symmetric.
pub fn std_normal_quantile_clamped(u: f64) -> f64 {
    if u.is_nan() {
        return f64::NAN;
    }
    if u > 0.5 {
        -lower_quantile((1.0 - u).max(QUANTILE_EPS))
    } else {
        lower_quantile(u.max(QUANTILE_EPS))
    }
}

fn quantile_unchecked(u: f64) -> f64 {
    if u > 0.5 {
        // 1 − u is exact on [0.5, 1]
        -lower_quantile(1.0 - u)
    } else {
        lower_quantile(u)
    }
}

// Acklam's rational approximation (relative error < 1.15e-9) followed by one
// Halley step against the erfc-based CDF. Valid for p in (0, 0.5].
fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    let e = std_normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

/// `ln(u / (1 − u))`.
pub fn logit(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

pub fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}
