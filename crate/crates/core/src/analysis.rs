//! Statistics of the reduced readings.
//!
//! High/low classification, Gaussian summaries and histograms, the weighted
//! straight-line fit of mean low voltage against `f - 1/2`, Monte Carlo
//! propagation of the per-point errors, and the confidence bound on the
//! nonlinearity parameter.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::rng::StreamFamily;
use crate::signal::CycleReading;

/// Smallest Monte Carlo sample accepted by [`mc_errors`].
pub const MIN_REALIZATIONS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("no values to summarize")]
    Empty,
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("fit needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("all x values are equal; slope is undetermined")]
    SingularDesign,
    #[error("point {label:?} has invalid sigma {sigma}")]
    BadSigma { label: String, sigma: f64 },
    #[error("confidence level {0} outside (0, 1)")]
    BadConfidence(f64),
    #[error("sigma of the estimate must be positive, got {0}")]
    BadEstimateSigma(f64),
    #[error("Monte Carlo needs at least {MIN_REALIZATIONS} realizations, got {0}")]
    TooFewRealizations(usize),
    #[error("percentile bound requires Monte Carlo samples")]
    MissingSamples,
}

/// Splits readings at `threshold`: strictly greater goes high, the rest
/// (including a reading exactly at the threshold) goes low.
pub fn classify(readings: &[CycleReading], threshold: f64) -> (Vec<CycleReading>, Vec<CycleReading>) {
    readings.iter().partition(|r| r.reading <= threshold || r.reading.is_nan())
}

/// Sample mean, standard deviation (n - 1 denominator) and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub sem: f64,
}

pub fn summarize(values: &[f64]) -> Result<GaussianSummary, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n = values.len();
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let sd = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
    };
    Ok(GaussianSummary {
        n,
        mean,
        sd,
        sem: sd / nf.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram with a Gaussian overlay built from the sample
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<Bin>,
    pub summary: GaussianSummary,
}

impl Histogram {
    /// Overlay probability density (per volt) at `x`. Zero for a degenerate
    /// sample.
    pub fn overlay_density(&self, x: f64) -> f64 {
        match Normal::new(self.summary.mean, self.summary.sd) {
            Ok(g) => g.pdf(x),
            Err(_) => 0.0,
        }
    }

    /// Overlay expectation of the count in `bin`.
    pub fn expected_count(&self, bin: &Bin) -> f64 {
        match Normal::new(self.summary.mean, self.summary.sd) {
            Ok(g) => self.summary.n as f64 * (g.cdf(bin.right) - g.cdf(bin.left)),
            Err(_) => 0.0,
        }
    }

    /// Pearson chi-square per degree of freedom against the overlay, over
    /// bins expecting at least `min_expected` counts. Mean, width and
    /// normalization are estimated, so three degrees of freedom are removed.
    pub fn reduced_chi_square(&self, min_expected: f64) -> Option<f64> {
        let (chi2, used) = self
            .bins
            .iter()
            .map(|b| (b, self.expected_count(b)))
            .filter(|&(_, e)| e >= min_expected)
            .fold((0.0, 0usize), |(c, k), (b, e)| {
                (c + (b.count as f64 - e).powi(2) / e, k + 1)
            });
        (used > 3).then(|| chi2 / (used - 3) as f64)
    }
}

pub fn histogram(values: &[f64], n_bins: usize) -> Result<Histogram, AnalysisError> {
    if n_bins == 0 {
        return Err(AnalysisError::NoBins);
    }
    let summary = summarize(values)?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        // all values equal: centre a unit-relative span on them
        let half = if lo == 0.0 { 0.5 } else { 0.5 * lo.abs() };
        (lo - half, lo + half)
    };
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<Bin> = (0..n_bins)
        .map(|i| Bin {
            left: lo + width * i as f64,
            right: if i + 1 == n_bins { hi } else { lo + width * (i + 1) as f64 },
            count: 0,
        })
        .collect();
    for &v in values {
        let i = (((v - lo) / width) as usize).min(n_bins - 1);
        bins[i].count += 1;
    }
    Ok(Histogram { bins, summary })
}

/// One point of the fidelity regression.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPoint {
    /// Readout fidelity minus 1/2.
    pub x: f64,
    /// Mean low reading, volts.
    pub y: f64,
    /// Standard error of `y`, volts.
    pub sigma: f64,
    pub label: String,
}

impl RegressionPoint {
    pub fn new(x: f64, y: f64, sigma: f64, label: impl Into<String>) -> Self {
        Self {
            x,
            y,
            sigma,
            label: label.into(),
        }
    }
}

/// Straight line `y = intercept + slope * x` with 1-sigma errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub sigma_intercept: f64,
    pub slope: f64,
    pub sigma_slope: f64,
}

impl LineFit {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    pub fn chi_square(&self, points: &[RegressionPoint]) -> f64 {
        points
            .iter()
            .map(|p| ((p.y - self.at(p.x)) / p.sigma).powi(2))
            .sum()
    }
}

/// Closed-form weighted least squares with weights `1 / sigma^2`.
pub fn wls_fit(points: &[RegressionPoint]) -> Result<LineFit, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::TooFewPoints(points.len()));
    }
    for p in points {
        if !p.sigma.is_finite() || p.sigma <= 0.0 {
            return Err(AnalysisError::BadSigma {
                label: p.label.clone(),
                sigma: p.sigma,
            });
        }
    }
    if points.iter().all(|p| p.x == points[0].x) {
        return Err(AnalysisError::SingularDesign);
    }
    let weights: Vec<f64> = points.iter().map(|p| p.sigma.powi(-2)).collect();
    let sw: f64 = weights.iter().sum();
    let x_bar = points.iter().zip(&weights).map(|(p, w)| w * p.x).sum::<f64>() / sw;
    let y_bar = points.iter().zip(&weights).map(|(p, w)| w * p.y).sum::<f64>() / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (p, w) in points.iter().zip(&weights) {
        let dx = p.x - x_bar;
        sxx += w * dx * dx;
        sxy += w * dx * (p.y - y_bar);
    }
    if sxx.is_nan() || sxx <= 0.0 {
        return Err(AnalysisError::SingularDesign);
    }
    let slope = sxy / sxx;
    let sigma_slope = sxx.sqrt().recip();
    Ok(LineFit {
        intercept: y_bar - slope * x_bar,
        sigma_intercept: (sw.recip() + x_bar * x_bar * sigma_slope * sigma_slope).sqrt(),
        slope,
        sigma_slope,
    })
}

/// Nonlinearity parameter from the regression slope (volts per unit
/// fidelity) and the bit-1 voltage.
pub fn eps_from_slope(slope: f64, v1: f64) -> f64 {
    assert!(v1 > 0.0, "v1 must be positive");
    slope / v1
}

/// Monte Carlo resampling of the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct McErrors {
    pub nominal: LineFit,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub sd_slope: f64,
    pub sd_intercept: f64,
}

/// One row of the fit band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPoint {
    pub x: f64,
    pub fit: f64,
    pub lo: f64,
    pub hi: f64,
}

impl McErrors {
    pub fn realizations(&self) -> usize {
        self.slopes.len()
    }

    /// Nominal line with the Monte Carlo 1-sigma spread of the predicted
    /// value at each `x`.
    pub fn band(&self, xs: &[f64]) -> Vec<BandPoint> {
        xs.iter()
            .map(|&x| {
                let preds: Vec<f64> = self
                    .intercepts
                    .iter()
                    .zip(&self.slopes)
                    .map(|(a, b)| a + b * x)
                    .collect();
                let sd = sample_sd(&preds);
                let fit = self.nominal.at(x);
                BandPoint {
                    x,
                    fit,
                    lo: fit - sd,
                    hi: fit + sd,
                }
            })
            .collect()
    }

    /// Percentiles (in percent) of the slope distribution.
    pub fn slope_percentiles(&self, pct: &[f64]) -> Vec<f64> {
        let sorted = sorted(&self.slopes);
        pct.iter().map(|&p| percentile(&sorted, p / 100.0)).collect()
    }

    pub fn intercept_percentiles(&self, pct: &[f64]) -> Vec<f64> {
        let sorted = sorted(&self.intercepts);
        pct.iter().map(|&p| percentile(&sorted, p / 100.0)).collect()
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Linear-interpolated quantile `q` in [0, 1] of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Refits `n_real` copies of the points with each `y` redrawn from
/// `Normal(y, sigma)`. Realization `r` uses stream `r` of `streams`.
pub fn mc_errors(points: &[RegressionPoint], n_real: usize, streams: &StreamFamily) -> Result<McErrors, AnalysisError> {
    if n_real < MIN_REALIZATIONS {
        return Err(AnalysisError::TooFewRealizations(n_real));
    }
    let nominal = wls_fit(points)?;
    let fits = (0..n_real)
        .into_par_iter()
        .map(|r| {
            let mut rng = streams.get(r as u64);
            let trial: Vec<RegressionPoint> = points
                .iter()
                .map(|p| RegressionPoint {
                    y: p.y + p.sigma * rng.sample::<f64, _>(StandardNormal),
                    ..p.clone()
                })
                .collect();
            wls_fit(&trial)
        })
        .collect::<Result<Vec<LineFit>, AnalysisError>>()?;
    let slopes: Vec<f64> = fits.iter().map(|f| f.slope).collect();
    let intercepts: Vec<f64> = fits.iter().map(|f| f.intercept).collect();
    Ok(McErrors {
        nominal,
        sd_slope: sample_sd(&slopes),
        sd_intercept: sample_sd(&intercepts),
        slopes,
        intercepts,
    })
}

/// How the two-sided bound on `|eps|` is constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundRule {
    /// `|eps_hat| + z * sigma` with `z` the normal quantile at `(1 + cl) / 2`.
    #[default]
    Gaussian,
    /// `b` with `P(|X| < b) = cl` for `X ~ Normal(eps_hat, sigma)`.
    FoldedGaussian,
    /// `cl` quantile of `|eps|` over the Monte Carlo realizations.
    McPercentile,
}

impl FromStr for BoundRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "folded-gaussian" => Ok(Self::FoldedGaussian),
            "mc-percentile" => Ok(Self::McPercentile),
            other => Err(format!(
                "unknown bound rule {other:?} (expected gaussian, folded-gaussian or mc-percentile)"
            )),
        }
    }
}

impl fmt::Display for BoundRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::FoldedGaussian => "folded-gaussian",
            Self::McPercentile => "mc-percentile",
        })
    }
}

fn check_bound_inputs(sigma_eps: f64, cl: f64) -> Result<(), AnalysisError> {
    if !(cl > 0.0 && cl < 1.0) {
        return Err(AnalysisError::BadConfidence(cl));
    }
    if !sigma_eps.is_finite() || sigma_eps <= 0.0 {
        return Err(AnalysisError::BadEstimateSigma(sigma_eps));
    }
    Ok(())
}

/// Standard-normal quantile at `(1 + cl) / 2`.
pub fn two_sided_z(cl: f64) -> Result<f64, AnalysisError> {
    if !(cl > 0.0 && cl < 1.0) {
        return Err(AnalysisError::BadConfidence(cl));
    }
    Ok(Normal::standard().inverse_cdf(0.5 * (1.0 + cl)))
}

/// `|eps_hat| + z * sigma_eps`, the default bound.
pub fn confidence_bound(eps_hat: f64, sigma_eps: f64, cl: f64) -> Result<f64, AnalysisError> {
    check_bound_inputs(sigma_eps, cl)?;
    Ok(eps_hat.abs() + two_sided_z(cl)? * sigma_eps)
}

/// Bound under any [`BoundRule`]. `mc_eps` holds the Monte Carlo `eps`
/// realizations and is required only by [`BoundRule::McPercentile`].
pub fn bound_with_rule(
    rule: BoundRule,
    eps_hat: f64,
    sigma_eps: f64,
    cl: f64,
    mc_eps: Option<&[f64]>,
) -> Result<f64, AnalysisError> {
    check_bound_inputs(sigma_eps, cl)?;
    match rule {
        BoundRule::Gaussian => confidence_bound(eps_hat, sigma_eps, cl),
        BoundRule::FoldedGaussian => {
            let g = Normal::standard();
            let mu = eps_hat.abs();
            let coverage = |b: f64| g.cdf((b - mu) / sigma_eps) - g.cdf((-b - mu) / sigma_eps);
            let (mut lo, mut hi) = (0.0, mu + 10.0 * sigma_eps);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if coverage(mid) < cl {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        }
        BoundRule::McPercentile => {
            let samples = mc_eps.filter(|s| !s.is_empty()).ok_or(AnalysisError::MissingSamples)?;
            let abs: Vec<f64> = samples.iter().map(|e| e.abs()).collect();
            Ok(percentile(&sorted(&abs), cl))
        }
    }
}

/// Everything extracted from the unblinded regression.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub line: LineFit,
    pub eps: f64,
    pub sigma_eps: f64,
    pub v1: f64,
    pub mc_sd_slope: f64,
    pub mc_sd_intercept: f64,
    pub mc_realizations: usize,
    pub cl: f64,
    pub bound_rule: BoundRule,
    pub bound: f64,
}

impl FitResult {
    /// Combines the analytic fit, the Monte Carlo spread and the bound.
    pub fn assemble(mc: &McErrors, v1: f64, cl: f64, rule: BoundRule) -> Result<Self, AnalysisError> {
        let line = mc.nominal;
        let eps = eps_from_slope(line.slope, v1);
        let sigma_eps = line.sigma_slope / v1;
        let mc_eps: Vec<f64> = mc.slopes.iter().map(|s| s / v1).collect();
        let bound = bound_with_rule(rule, eps, sigma_eps, cl, Some(&mc_eps))?;
        Ok(Self {
            line,
            eps,
            sigma_eps,
            v1,
            mc_sd_slope: mc.sd_slope,
            mc_sd_intercept: mc.sd_intercept,
            mc_realizations: mc.realizations(),
            cl,
            bound_rule: rule,
            bound,
        })
    }
}
