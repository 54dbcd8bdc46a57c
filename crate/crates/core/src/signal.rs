//! Demodulated lock-in record synthesis and per-cycle reduction.
//!
//! Each switch cycle drives the output to a target level. The demodulated
//! signal relaxes from the previous level through the first-order output
//! filter, picks up a linear drift and white noise, and only the trailing
//! record window is kept. The window is reduced to one reading by a
//! least-squares line fit evaluated at the window's temporal midpoint.
//!
//! The 1 MHz carrier never appears: everything here works on demodulated
//! amplitudes.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::blinding::BlindingKey;
use crate::model::{expected_reading, ModelError, NonlinearParams};
use crate::rng::StreamFamily;
use crate::sources::SourceSpec;

/// Filter time constants that must elapse between the switch edge and the
/// start of the record window. `exp(-37)` is below half an ulp of 1.
pub const SETTLING_TIME_CONSTANTS: f64 = 37.0;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid acquisition config: {0}")]
    Config(String),
    #[error("record window holds {0} samples; at least 2 are needed")]
    WindowTooShort(usize),
    #[error("block has {actual} samples, a full cycle needs {expected}")]
    BlockLength { expected: usize, actual: usize },
    #[error("noise sigma must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("{bits} blinded bits but key has {key} entries")]
    LengthMismatch { bits: usize, key: usize },
    #[error("key references source {0:?} that is not configured")]
    UnknownSource(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("readings file line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcquisitionMode {
    /// Draw each reduced reading directly from its sampling distribution.
    #[default]
    Fast,
    /// Synthesize every sample of every cycle and reduce it.
    Waveform,
}

/// Lock-in input range used for a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Range {
    Sensitive,
    Insensitive,
}

impl Range {
    pub fn as_str(self) -> &'static str {
        match self {
            Range::Sensitive => "sensitive",
            Range::Insensitive => "insensitive",
        }
    }
}

/// Timing, noise and drift of the simulated acquisition.
///
/// `sigma_low` and `sigma_high` are the standard deviations of one *reduced
/// reading* on the sensitive and insensitive ranges. In waveform mode the
/// per-sample noise is `sigma * sqrt(window_samples)`, which gives the same
/// reading-level spread after averaging the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionConfig {
    pub cycle_duration: f64,
    pub record_window: f64,
    pub sample_rate: f64,
    pub filter_tau: f64,
    pub carrier_freq: f64,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub range_threshold: f64,
    pub drift_rate: f64,
    pub mode: AcquisitionMode,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            cycle_duration: 2.0,
            record_window: 1.0,
            sample_rate: 1000.0,
            filter_tau: 1e-3,
            carrier_freq: 1e6,
            sigma_low: 3.4e-9,
            sigma_high: 1.8e-4,
            range_threshold: 1.0,
            drift_rate: 0.0,
            mode: AcquisitionMode::Fast,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: String| Err(SignalError::Config(m));
        let finite = [
            self.cycle_duration,
            self.record_window,
            self.sample_rate,
            self.filter_tau,
            self.carrier_freq,
            self.sigma_low,
            self.sigma_high,
            self.range_threshold,
            self.drift_rate,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if self.cycle_duration <= 0.0 || self.record_window <= 0.0 || self.sample_rate <= 0.0 {
            return bad("durations and sample rate must be positive".into());
        }
        if self.record_window > self.cycle_duration {
            return bad(format!(
                "record window {} s exceeds cycle duration {} s",
                self.record_window, self.cycle_duration
            ));
        }
        if self.filter_tau <= 0.0 {
            return bad("filter time constant must be positive".into());
        }
        let settle = self.cycle_duration - self.record_window;
        if settle < SETTLING_TIME_CONSTANTS * self.filter_tau {
            return bad(format!(
                "only {settle} s of settling before the record window; need {} filter time constants",
                SETTLING_TIME_CONSTANTS
            ));
        }
        if self.sigma_low < 0.0 || self.sigma_high < 0.0 {
            return bad("noise levels must be non-negative".into());
        }
        if self.window_samples() < 2 {
            return Err(SignalError::WindowTooShort(self.window_samples()));
        }
        Ok(())
    }

    pub fn cycle_samples(&self) -> usize {
        (self.cycle_duration * self.sample_rate).round() as usize
    }

    pub fn window_samples(&self) -> usize {
        (self.record_window * self.sample_rate).round() as usize
    }

    /// Time of sample `i` measured from the switch edge.
    pub fn sample_time(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate
    }

    /// Centroid of the record-window sample times.
    pub fn window_midpoint(&self) -> f64 {
        let n = self.cycle_samples();
        let first = n - self.window_samples();
        0.5 * (self.sample_time(first) + self.sample_time(n - 1))
    }

    /// Range selected for a cycle whose true level is `level`.
    pub fn range_for(&self, level: f64) -> Range {
        if level > self.range_threshold {
            Range::Insensitive
        } else {
            Range::Sensitive
        }
    }

    /// Reading-level noise on `range`.
    pub fn reading_sigma(&self, range: Range) -> f64 {
        match range {
            Range::Sensitive => self.sigma_low,
            Range::Insensitive => self.sigma_high,
        }
    }

    /// Per-sample noise on `range` that averages down to the reading-level
    /// noise over the record window.
    pub fn sample_sigma(&self, range: Range) -> f64 {
        self.reading_sigma(range) * (self.window_samples() as f64).sqrt()
    }
}

/// One reduced reading per switch cycle, in blinded order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleReading {
    pub blinded_index: usize,
    pub reading: f64,
    pub range: Range,
}

/// Samples of one full cycle that switches from `prev_level` to
/// `target_level` at `t = 0`.
pub fn synthesize_cycle<R: Rng + ?Sized>(
    prev_level: f64,
    target_level: f64,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Vec<f64>, SignalError> {
    cfg.validate()?;
    let sigma = cfg.sample_sigma(cfg.range_for(target_level));
    let step = prev_level - target_level;
    Ok((0..cfg.cycle_samples())
        .map(|i| {
            let t = cfg.sample_time(i);
            let noise = if sigma > 0.0 {
                sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            target_level + step * (-t / cfg.filter_tau).exp() + cfg.drift_rate * t + noise
        })
        .collect())
}

/// Line fit over the trailing record window, evaluated at the window
/// midpoint.
pub fn reduce_cycle(block: &[f64], cfg: &AcquisitionConfig) -> Result<f64, SignalError> {
    let n = cfg.cycle_samples();
    let m = cfg.window_samples();
    if m < 2 {
        return Err(SignalError::WindowTooShort(m));
    }
    if block.len() != n {
        return Err(SignalError::BlockLength {
            expected: n,
            actual: block.len(),
        });
    }
    let first = n - m;
    let window = &block[first..];
    let times = (first..n).map(|i| cfg.sample_time(i));
    let mf = m as f64;
    let t_bar = times.clone().sum::<f64>() / mf;
    let v_bar = window.iter().sum::<f64>() / mf;
    let (mut stt, mut stv) = (0.0, 0.0);
    for (t, &v) in times.zip(window) {
        let dt = t - t_bar;
        stt += dt * dt;
        stv += dt * (v - v_bar);
    }
    let slope = stv / stt;
    Ok(v_bar + slope * (cfg.window_midpoint() - t_bar))
}

/// A reduced reading drawn directly: `Normal(expected, sigma)`.
pub fn fast_reading<R: Rng + ?Sized>(expected: f64, sigma: f64, rng: &mut R) -> Result<f64, SignalError> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(SignalError::NegativeSigma(sigma));
    }
    let dist = Normal::new(expected, sigma).map_err(|_| SignalError::NegativeSigma(sigma))?;
    Ok(dist.sample(rng))
}

/// Plays nature: turns the blinded control bits into one reading per cycle.
///
/// The key and source fidelities are needed to know each cycle's true
/// expected level. Cycle `i` draws its noise from `noise.get(i)`, so the
/// output does not depend on evaluation order. In waveform mode each cycle
/// starts from the nominal target of the previous cycle (the first from
/// `v0`), which keeps cycles independent.
pub fn run_acquisition(
    bits: &[u8],
    key: &BlindingKey,
    sources: &[SourceSpec],
    params: &NonlinearParams,
    cfg: &AcquisitionConfig,
    noise: &StreamFamily,
) -> Result<Vec<CycleReading>, SignalError> {
    cfg.validate()?;
    if bits.len() != key.len() {
        return Err(SignalError::LengthMismatch {
            bits: bits.len(),
            key: key.len(),
        });
    }
    let fidelity: HashMap<&str, f64> = sources.iter().map(|s| (s.id(), s.fidelity())).collect();
    let levels = bits
        .iter()
        .enumerate()
        .map(|(i, &bit)| {
            let (id, _) = key.origin(i);
            let f = *fidelity
                .get(id)
                .ok_or_else(|| SignalError::UnknownSource(id.to_string()))?;
            Ok(expected_reading(bit, f, params)?)
        })
        .collect::<Result<Vec<f64>, SignalError>>()?;

    let drift_offset = cfg.drift_rate * cfg.window_midpoint();
    (0..levels.len())
        .into_par_iter()
        .map(|i| {
            let level = levels[i];
            let range = cfg.range_for(level);
            let mut rng = noise.get(i as u64);
            let reading = match cfg.mode {
                AcquisitionMode::Fast => fast_reading(level + drift_offset, cfg.reading_sigma(range), &mut rng)?,
                AcquisitionMode::Waveform => {
                    let prev = if i == 0 { params.v0() } else { levels[i - 1] };
                    reduce_cycle(&synthesize_cycle(prev, level, cfg, &mut rng)?, cfg)?
                }
            };
            Ok(CycleReading {
                blinded_index: i,
                reading,
                range,
            })
        })
        .collect()
}

/// Writes `blinded_index,reading_volts,range` with 17 significant digits.
pub fn write_readings(readings: &[CycleReading], path: &Path) -> Result<(), SignalError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "blinded_index,reading_volts,range")?;
    for r in readings {
        writeln!(out, "{},{:.16e},{}", r.blinded_index, r.reading, r.range.as_str())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_readings(path: &Path) -> Result<Vec<CycleReading>, SignalError> {
    let mut csv = csv::Reader::from_path(path)?;
    let header = csv.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["blinded_index", "reading_volts", "range"] {
        return Err(SignalError::Malformed {
            line: 1,
            msg: "expected header blinded_index,reading_volts,range".into(),
        });
    }
    let mut out = Vec::new();
    for (n, rec) in csv.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| SignalError::Malformed { line, msg: e.to_string() })?;
        let bad = |msg: String| SignalError::Malformed { line, msg };
        let blinded_index: usize = rec[0].parse().map_err(|_| bad(format!("bad index {:?}", &rec[0])))?;
        if blinded_index != out.len() {
            return Err(bad(format!("expected index {}, found {blinded_index}", out.len())));
        }
        let reading: f64 = rec[1].parse().map_err(|_| bad(format!("bad reading {:?}", &rec[1])))?;
        let range = match &rec[2] {
            "sensitive" => Range::Sensitive,
            "insensitive" => Range::Insensitive,
            other => return Err(bad(format!("bad range {other:?}"))),
        };
        out.push(CycleReading {
            blinded_index,
            reading,
            range,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn quiet() -> AcquisitionConfig {
        AcquisitionConfig {
            sigma_low: 0.0,
            sigma_high: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = AcquisitionConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.cycle_samples(), 2000);
        assert_eq!(cfg.window_samples(), 1000);
        assert!((cfg.window_midpoint() - 1.4995).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs() {
        let c = AcquisitionConfig {
            record_window: 3.0,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(SignalError::Config(_))));
        let c = AcquisitionConfig {
            filter_tau: 0.1,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(SignalError::Config(_))));
        let c = AcquisitionConfig {
            sample_rate: 1.0,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(SignalError::WindowTooShort(1))));
    }

    #[test]
    fn flat_cycle() {
        let mut rng = SeedTree::new(0).stream("x");
        let block = synthesize_cycle(0.25, 0.25, &quiet(), &mut rng).unwrap();
        assert_eq!(block.len(), 2000);
        assert!(block.iter().all(|&v| v == 0.25));
        assert_eq!(reduce_cycle(&block, &quiet()).unwrap(), 0.25);
    }

    #[test]
    fn settling_is_complete_at_window_start() {
        let cfg = quiet();
        let mut rng = SeedTree::new(0).stream("x");
        let block = synthesize_cycle(0.0, 3.0, &cfg, &mut rng).unwrap();
        // t = 1 s: residual 3 exp(-1000) underflows to zero.
        assert_eq!(block[1000], 3.0);
        assert!(block[0] == 0.0);
        let back = synthesize_cycle(3.0, 0.0, &cfg, &mut rng).unwrap();
        assert_eq!(back[1000], 0.0);
    }

    #[test]
    fn pure_drift() {
        let cfg = AcquisitionConfig {
            drift_rate: 1e-9,
            ..quiet()
        };
        let mut rng = SeedTree::new(0).stream("x");
        let block = synthesize_cycle(0.0, 0.0, &cfg, &mut rng).unwrap();
        for (i, &v) in block.iter().enumerate() {
            assert_eq!(v, 1e-9 * cfg.sample_time(i));
        }
    }

    #[test]
    fn odd_drift_cancels() {
        let cfg = quiet();
        let tm = cfg.window_midpoint();
        let block: Vec<f64> = (0..cfg.cycle_samples())
            .map(|i| 0.7 * (cfg.sample_time(i) - tm) - 3e-10)
            .collect();
        let r = reduce_cycle(&block, &cfg).unwrap();
        assert!((r + 3e-10).abs() < 1e-15);
    }

    #[test]
    fn reduce_matches_normal_equations() {
        let cfg = AcquisitionConfig::default();
        let mut rng = SeedTree::new(4).stream("x");
        let block = synthesize_cycle(3.0, 1e-9, &cfg, &mut rng).unwrap();
        // 2x2 normal equations on raw (uncentred) times, solved by Cramer's rule.
        let first = cfg.cycle_samples() - cfg.window_samples();
        let (mut s1, mut st, mut stt, mut sv, mut stv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &v) in block.iter().enumerate().skip(first) {
            let t = i as f64 / cfg.sample_rate;
            s1 += 1.0;
            st += t;
            stt += t * t;
            sv += v;
            stv += t * v;
        }
        let det = s1 * stt - st * st;
        let a = (s1 * stv - st * sv) / det;
        let b = (stt * sv - st * stv) / det;
        let want = a * cfg.window_midpoint() + b;
        let got = reduce_cycle(&block, &cfg).unwrap();
        assert!((got - want).abs() < 1e-12 * want.abs().max(1e-9), "{got} vs {want}");
    }

    #[test]
    fn reduce_rejects_bad_blocks() {
        let cfg = quiet();
        assert!(matches!(
            reduce_cycle(&[0.0; 10], &cfg),
            Err(SignalError::BlockLength { .. })
        ));
        let tiny = AcquisitionConfig {
            sample_rate: 1.0,
            cycle_duration: 2.0,
            record_window: 1.0,
            filter_tau: 1e-3,
            ..quiet()
        };
        assert!(matches!(reduce_cycle(&[0.0, 0.0], &tiny), Err(SignalError::WindowTooShort(1))));
    }

    #[test]
    fn fast_reading_examples() {
        let mut rng = SeedTree::new(9).stream("f");
        assert_eq!(fast_reading(-0.306e-9, 0.0, &mut rng).unwrap(), -0.306e-9);
        assert!(matches!(
            fast_reading(0.0, -1.0, &mut rng),
            Err(SignalError::NegativeSigma(_))
        ));
        let a = fast_reading(1.0, 0.5, &mut SeedTree::new(9).indexed("f", 3)).unwrap();
        let b = fast_reading(1.0, 0.5, &mut SeedTree::new(9).indexed("f", 3)).unwrap();
        assert_eq!(a, b);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| fast_reading(3.0, 1.8e-4, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 3.0).abs() < 5.0 * 1.8e-4 / (n as f64).sqrt());
    }

    #[test]
    fn range_is_a_threshold() {
        let cfg = AcquisitionConfig::default();
        assert_eq!(cfg.range_for(1.0), Range::Sensitive);
        assert_eq!(cfg.range_for(1.0 + 1e-12), Range::Insensitive);
        assert_eq!(cfg.range_for(-5e-9), Range::Sensitive);
    }
}
