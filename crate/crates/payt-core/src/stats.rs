//! Shared statistical primitives: moments, quantiles, distribution tails, and
//! the studentized-range CDF used by pairwise mean comparisons.

use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("invalid distribution parameter: {0}")]
    BadParameter(String),
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Linear-interpolation quantile on an unsorted sample (R type 7).
pub fn quantile(xs: &[f64], p: f64) -> Result<f64, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in quantile"));
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn std_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).expect("standard normal"))
}

pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn norm_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// z multiplier for a two-sided 95% interval.
pub fn z_975() -> f64 {
    static Z: OnceLock<f64> = OnceLock::new();
    *Z.get_or_init(|| norm_quantile(0.975))
}

/// Upper tail of the F distribution.
pub fn f_sf(stat: f64, df1: f64, df2: f64) -> Result<f64, StatsError> {
    if stat <= 0.0 {
        return Ok(1.0);
    }
    let f = FisherSnedecor::new(df1, df2)
        .map_err(|e| StatsError::BadParameter(format!("F({df1}, {df2}): {e}")))?;
    Ok((1.0 - f.cdf(stat)).clamp(0.0, 1.0))
}

/// Upper tail of the chi-squared distribution.
pub fn chi2_sf(stat: f64, df: f64) -> Result<f64, StatsError> {
    if stat <= 0.0 {
        return Ok(1.0);
    }
    let c = ChiSquared::new(df).map_err(|e| StatsError::BadParameter(format!("chi2({df}): {e}")))?;
    Ok((1.0 - c.cdf(stat)).clamp(0.0, 1.0))
}

/// Two-sided p-value for a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64, StatsError> {
    let d = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| StatsError::BadParameter(format!("t({df}): {e}")))?;
    Ok((2.0 * (1.0 - d.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence: (j+1) P_{j+1} = (2j+1) x P_j - j P_{j-1}
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 1..n {
                let p2 = ((2 * j + 1) as f64 * x * p1 - j as f64 * p0) / (j + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl24() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| gauss_legendre(24))
}

/// Composite Gauss-Legendre integral of `f` over [a, b] with `segments` panels.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, segments: usize) -> f64 {
    let (nodes, weights) = gl24();
    let width = (b - a) / segments as f64;
    let mut total = 0.0;
    for s in 0..segments {
        let lo = a + s as f64 * width;
        let half = width / 2.0;
        let mid = lo + half;
        let mut acc = 0.0;
        for (t, w) in nodes.iter().zip(weights) {
            acc += w * f(mid + half * t);
        }
        total += acc * half;
    }
    total
}

/// P(range of k independent standard normals <= r).
fn normal_range_cdf(r: f64, k: usize) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    let f = |z: f64| {
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let span = norm_cdf(z) - norm_cdf(z - r);
        kf * phi * span.powi(k as i32 - 1)
    };
    integrate(&f, -9.0, 9.0, 18).clamp(0.0, 1.0)
}

/// CDF of the studentized range statistic with `k` groups and `df` error
/// degrees of freedom: P(Q <= q) = E[ P(range <= q * S) ] with S^2 ~ chi2_df/df.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> Result<f64, StatsError> {
    if k < 2 {
        return Err(StatsError::BadParameter("studentized range needs k >= 2".into()));
    }
    if !df.is_finite() || df <= 0.0 {
        return Err(StatsError::BadParameter("studentized range needs df > 0".into()));
    }
    if q <= 0.0 {
        return Ok(0.0);
    }
    if df > 1e5 {
        return Ok(normal_range_cdf(q, k));
    }
    let chi = ChiSquared::new(df)
        .map_err(|e| StatsError::BadParameter(format!("chi2({df}): {e}")))?;
    let u_lo = (chi.inverse_cdf(1e-14) / df).sqrt();
    let u_hi = (chi.inverse_cdf(1.0 - 1e-12) / df).sqrt();
    let ln_norm = std::f64::consts::LN_2 + (df / 2.0) * (df / 2.0).ln()
        - statrs::function::gamma::ln_gamma(df / 2.0);
    let f = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let ln_density = ln_norm + (df - 1.0) * u.ln() - df * u * u / 2.0;
        ln_density.exp() * normal_range_cdf(q * u, k)
    };
    Ok(integrate(&f, u_lo, u_hi, 24).clamp(0.0, 1.0))
}
