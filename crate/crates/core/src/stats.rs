//! Standard-normal helpers.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `ln(1 - Φ(z))`, accurate in both tails.
pub fn log_norm_sf(z: f64) -> f64 {
    if z < 30.0 {
        (0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln()
    } else {
        // Asymptotic series of the Mills ratio.
        let z2 = z * z;
        -0.5 * z2 - LN_SQRT_2PI - z.ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// Inverse Mills ratio `φ(z) / (1 - Φ(z))`, the negated derivative of
/// [`log_norm_sf`].
pub fn inv_mills(z: f64) -> f64 {
    if z < 30.0 {
        (-0.5 * z * z - LN_SQRT_2PI - log_norm_sf(z)).exp()
    } else {
        let z2 = z * z;
        z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2))
    }
}

// Tabulated ln(1 - Φ) on [SF_LO, SF_HI] with spacing 1/SF_STEPS, interpolated
// by cubic Hermite polynomials using the exact derivative -inv_mills.
const SF_LO: f64 = -9.0;
const SF_HI: f64 = 13.0;
const SF_STEPS: f64 = 64.0;

fn sf_table() -> &'static [(f64, f64)] {
    static TABLE: std::sync::OnceLock<Vec<(f64, f64)>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ((SF_HI - SF_LO) * SF_STEPS) as usize + 2;
        (0..n)
            .map(|i| {
                let z = SF_LO + i as f64 / SF_STEPS;
                (log_norm_sf(z), -inv_mills(z) / SF_STEPS)
            })
            .collect()
    })
}

/// Fast interpolated [`log_norm_sf`], absolute error below 1e-9.
#[inline]
pub fn log_norm_sf_fast(z: f64) -> f64 {
    if !(SF_LO..SF_HI).contains(&z) {
        return log_norm_sf(z);
    }
    let table = sf_table();
    let t = (z - SF_LO) * SF_STEPS;
    let i = t as usize;
    let f = t - i as f64;
    let (y0, d0) = table[i];
    let (y1, d1) = table[i + 1];
    let f2 = f * f;
    let f3 = f2 * f;
    (2.0 * f3 - 3.0 * f2 + 1.0) * y0 + (f3 - 2.0 * f2 + f) * d0 + (-2.0 * f3 + 3.0 * f2) * y1 + (f3 - f2) * d1
}

/// The convolution `[Φ * φ](z) = ∫ Φ(z - w) φ(w) dw`, which equals `Φ(z / √2)`.
pub fn cdf_pdf_convolution(z: f64) -> f64 {
    norm_cdf(z / SQRT_2)
}

/// Population mean and standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn convolution_identity_matches_quadrature() {
        for z in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let q = simpson(|w| norm_cdf(z - w) * norm_pdf(w), -12.0, 12.0, 4000);
            assert!((q - cdf_pdf_convolution(z)).abs() < 1e-9, "z={z}");
        }
        assert!((cdf_pdf_convolution(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_sf_is_continuous_across_branch() {
        let a = log_norm_sf(30.0 - 1e-9);
        let b = log_norm_sf(30.0 + 1e-9);
        assert!((a - b).abs() < 1e-6);
        assert!((log_norm_sf(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_norm_sf(-40.0).abs() < 1e-300);
    }

    #[test]
    fn inv_mills_is_derivative_of_log_sf() {
        for z in [-5.0, -1.0, 0.0, 0.7, 3.0, 12.0, 29.0, 35.0] {
            let h = 1e-5;
            let fd = (log_norm_sf(z + h) - log_norm_sf(z - h)) / (2.0 * h);
            assert!((fd + inv_mills(z)).abs() < 1e-5 * (1.0 + z.abs()), "z={z}");
        }
    }

    #[test]
    fn fast_log_sf_matches_exact() {
        let mut z = -12.0;
        while z < 20.0 {
            assert!((log_norm_sf_fast(z) - log_norm_sf(z)).abs() < 1e-9, "z = {z}");
            z += 0.00731;
        }
    }
}
