use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// Draw from N(mean, sd²) restricted to `[lo, hi]` by inverting the CDF on the
/// restricted interval. Always terminates; returns `lo` when `lo == hi`.
pub fn sample_truncated_normal<R: Rng>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if hi <= lo {
        return lo;
    }
    if sd <= 0.0 {
        return mean.clamp(lo, hi);
    }
    let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
    // Work in the lower tail, where the CDF keeps precision.
    let (flip, a, b) = if a > 0.0 {
        (true, -b, -a)
    } else {
        (false, a, b)
    };
    let n = std_normal();
    let (fa, fb) = (n.cdf(a), n.cdf(b));
    let z = if fb - fa > 1e-300 {
        n.inverse_cdf(fa + u * (fb - fa)).clamp(a, b)
    } else {
        // Far tail: the excess over the near bound is approximately exponential.
        let near = b;
        (near + (1.0 - u).ln() / near.abs().max(1.0)).clamp(a, b)
    };
    let z = if flip { -z } else { z };
    (mean + sd * z).clamp(lo, hi)
}

/// Mean and variance of N(mean, sd²) truncated to `[lo, hi]`.
pub fn truncated_normal_moments(mean: f64, sd: f64, lo: f64, hi: f64) -> (f64, f64) {
    let n = std_normal();
    let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
    let z = n.cdf(b) - n.cdf(a);
    let (pa, pb) = (n.pdf(a), n.pdf(b));
    let m = (pa - pb) / z;
    let v = 1.0 + (a * pa - b * pb) / z - m * m;
    (mean + sd * m, sd * sd * v)
}
