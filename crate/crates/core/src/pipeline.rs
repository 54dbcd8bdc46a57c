//! End-to-end orchestration: generate, blind, acquire, summarize blinded,
//! unblind, fit, report.
//!
//! The in-memory functions ([`generate_bits`], [`simulate`],
//! [`blinded_summary`], [`unblind_fit`]) do the work; the `cmd_*` functions
//! add file I/O around them. The blinded summary never sees the key: its
//! command refuses to run when a key path is supplied.
//!
//! Output layout under the output directory:
//!
//! | file | written by |
//! |------|------------|
//! | `bits_<id>.txt` | `generate` |
//! | `readings.csv` | `run` |
//! | `sealed/blinding_key.csv` | `run` |
//! | `blinded_summary.txt`, `histogram_blinded_low.csv` | `blinded-summary` |
//! | `histogram_<id>.csv`, `fit.csv`, `band.csv`, `unblinded_report.txt` | `unblind-fit` |
//! | `report.txt` | `report` |

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{
    classify, histogram, mc_errors, summarize, AnalysisError, FitResult, GaussianSummary, Histogram,
    McErrors, RegressionPoint,
};
use crate::blinding::{self, combine_and_permute, unblind, BlindingError, BlindingKey};
use crate::config::{ConfigError, RunConfig};
use crate::rng::{labels, SeedTree};
use crate::signal::{self, run_acquisition, CycleReading, SignalError};
use crate::sources::{self, BitString, SourceError};

pub const READINGS_FILE: &str = "readings.csv";
pub const KEY_DIR: &str = "sealed";
pub const KEY_FILE: &str = "blinding_key.csv";

/// Points on the fit band written to `band.csv`.
const BAND_POINTS: usize = 51;

/// Error categories, each with its own process exit code. Code 2 is left to
/// command-line usage errors.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(ConfigError),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Contract(String),
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { path, source } => PipelineError::Io { path, source },
            other => PipelineError::Config(other),
        }
    }
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 3,
            PipelineError::Io { .. } => 4,
            PipelineError::Contract(_) => 5,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn contract(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Contract(e.to_string())
}

fn from_source(path: &Path, e: SourceError) -> PipelineError {
    match e {
        SourceError::Io(source) => PipelineError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => contract(format!("{}: {other}", path.display())),
    }
}

fn from_csv(path: &Path, c: csv::Error) -> PipelineError {
    if !c.is_io_error() {
        return contract(format!("{}: {c}", path.display()));
    }
    match c.into_kind() {
        csv::ErrorKind::Io(source) => PipelineError::Io {
            path: path.to_path_buf(),
            source,
        },
        _ => unreachable!("is_io_error implies ErrorKind::Io"),
    }
}

fn from_signal(path: &Path, e: SignalError) -> PipelineError {
    match e {
        SignalError::Io(source) => PipelineError::Io {
            path: path.to_path_buf(),
            source,
        },
        SignalError::Csv(c) => from_csv(path, c),
        other => contract(format!("{}: {other}", path.display())),
    }
}

fn from_blinding(path: &Path, e: BlindingError) -> PipelineError {
    match e {
        BlindingError::Io(source) => PipelineError::Io {
            path: path.to_path_buf(),
            source,
        },
        BlindingError::Csv(c) => from_csv(path, c),
        other => contract(format!("{}: {other}", path.display())),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Bits for every configured source: ingested from its file when one is
/// configured, otherwise generated from the `bits/<id>` stream.
pub fn generate_bits(cfg: &RunConfig) -> Result<Vec<BitString>, PipelineError> {
    let tree = SeedTree::new(cfg.seed);
    cfg.sources
        .iter()
        .map(|s| match &s.file {
            Some(path) => {
                let bits = sources::ingest_bits(path).map_err(|e| from_source(path, e))?;
                if bits.source() != &s.spec {
                    return Err(contract(format!(
                        "{}: header {:?} does not match configured source {:?}",
                        path.display(),
                        bits.source(),
                        s.spec
                    )));
                }
                Ok(bits)
            }
            None => Ok(sources::generate(&s.spec, &mut tree.stream(&labels::bits(s.spec.id())))),
        })
        .collect()
}

/// Writes one bit file per source.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    cfg.validate()?;
    ensure_dir(out)?;
    let mut written = Vec::new();
    for bits in generate_bits(cfg)? {
        let path = out.join(format!("bits_{}.txt", bits.source().id()));
        sources::write_bits(&bits, &path).map_err(|e| from_source(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Blinded readings plus the key that only the unblinding step may use.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub readings: Vec<CycleReading>,
    pub key: BlindingKey,
}

/// Generates (or ingests) the bits, blinds them and simulates the run.
pub fn simulate(cfg: &RunConfig) -> Result<Simulation, PipelineError> {
    cfg.validate()?;
    let strings = generate_bits(cfg)?;
    let tree = SeedTree::new(cfg.seed);
    let (bits, key) = combine_and_permute(
        &strings,
        &mut tree.stream(labels::BLINDING),
        &tree.descriptor(labels::BLINDING),
    )
    .map_err(contract)?;
    let readings = run_acquisition(
        &bits,
        &key,
        &cfg.specs(),
        &cfg.params,
        &cfg.acquisition,
        &tree.indexed_family(labels::NOISE),
    )
    .map_err(contract)?;
    Ok(Simulation { readings, key })
}

pub fn key_path(out: &Path) -> PathBuf {
    out.join(KEY_DIR).join(KEY_FILE)
}

/// Simulates the run and writes `readings.csv` and the sealed key.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, PathBuf), PipelineError> {
    let sim = simulate(cfg)?;
    ensure_dir(out)?;
    ensure_dir(&out.join(KEY_DIR))?;
    let readings_path = out.join(READINGS_FILE);
    signal::write_readings(&sim.readings, &readings_path).map_err(|e| from_signal(&readings_path, e))?;
    let key_path = key_path(out);
    blinding::write_key(&sim.key, &key_path).map_err(|e| from_blinding(&key_path, e))?;
    Ok((readings_path, key_path))
}

/// Pooled statistics computed before unblinding.
#[derive(Debug, Clone)]
pub struct BlindedSummary {
    pub n_low: usize,
    pub n_high: usize,
    pub low: GaussianSummary,
    pub high: Option<GaussianSummary>,
    pub low_histogram: Histogram,
}

pub fn blinded_summary(readings: &[CycleReading], cfg: &RunConfig) -> Result<BlindedSummary, PipelineError> {
    if readings.is_empty() {
        return Err(contract("no readings"));
    }
    let (low, high) = classify(readings, cfg.analysis.threshold);
    let low_v: Vec<f64> = low.iter().map(|r| r.reading).collect();
    let high_v: Vec<f64> = high.iter().map(|r| r.reading).collect();
    let low_summary = summarize(&low_v).map_err(|_| contract("no low readings"))?;
    Ok(BlindedSummary {
        n_low: low.len(),
        n_high: high.len(),
        low: low_summary,
        high: summarize(&high_v).ok(),
        low_histogram: histogram(&low_v, cfg.analysis.n_bins).map_err(contract)?,
    })
}

impl BlindedSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Blinded summary");
        let _ = writeln!(s, "  readings: {} low + {} high = {}", self.n_low, self.n_high, self.n_low + self.n_high);
        let _ = writeln!(
            s,
            "  V_L = ({:.4} +/- {:.4}) nV   sd {:.4} nV",
            self.low.mean * 1e9,
            self.low.sem * 1e9,
            self.low.sd * 1e9
        );
        match &self.high {
            Some(h) => {
                let _ = writeln!(s, "  V_H = ({:.6} +/- {:.3e}) V   sd {:.3e} V", h.mean, h.sem, h.sd);
            }
            None => {
                let _ = writeln!(s, "  V_H: no high readings");
            }
        }
        s
    }
}

/// Writes the blinded report. Passing a key path is a contract violation:
/// the blinded analysis must not see the permutation.
pub fn cmd_blinded_summary(
    cfg: &RunConfig,
    readings_path: &Path,
    key: Option<&Path>,
    out: &Path,
) -> Result<BlindedSummary, PipelineError> {
    if let Some(k) = key {
        return Err(contract(format!(
            "refusing to load blinding key {} during blinded analysis",
            k.display()
        )));
    }
    cfg.validate()?;
    let readings = signal::read_readings(readings_path).map_err(|e| from_signal(readings_path, e))?;
    let summary = blinded_summary(&readings, cfg)?;
    ensure_dir(out)?;
    write_histogram(&summary.low_histogram, &out.join("histogram_blinded_low.csv"))?;
    write_text(&out.join("blinded_summary.txt"), &summary.render())?;
    Ok(summary)
}

/// Statistics of one source after unblinding.
#[derive(Debug, Clone)]
pub struct SourceSummary {
    pub id: String,
    pub fidelity: f64,
    pub n_high: usize,
    pub low: GaussianSummary,
    pub low_histogram: Histogram,
}

#[derive(Debug, Clone)]
pub struct UnblindedAnalysis {
    pub sources: Vec<SourceSummary>,
    pub points: Vec<RegressionPoint>,
    pub mc: McErrors,
    pub fit: FitResult,
}

/// Regroups by source, fits mean low reading against `f - 1/2`, propagates
/// errors by Monte Carlo and sets the bound.
pub fn unblind_fit(
    readings: &[CycleReading],
    key: &BlindingKey,
    cfg: &RunConfig,
) -> Result<UnblindedAnalysis, PipelineError> {
    key.check_sources(&cfg.source_ids()).map_err(contract)?;
    let groups = unblind(readings, key).map_err(contract)?;
    let mut sources = Vec::new();
    let mut points = Vec::new();
    for s in &cfg.sources {
        let id = s.spec.id();
        let Some(rs) = groups.get(id) else {
            return Err(contract(format!("key has no entries for configured source {id:?}")));
        };
        let (low, high) = classify(rs, cfg.analysis.threshold);
        let low_v: Vec<f64> = low.iter().map(|r| r.reading).collect();
        if low_v.len() < 2 {
            return Err(contract(format!("source {id:?} has {} low readings; need 2", low_v.len())));
        }
        let summary = summarize(&low_v).map_err(contract)?;
        points.push(RegressionPoint::new(s.spec.fidelity() - 0.5, summary.mean, summary.sem, id));
        sources.push(SourceSummary {
            id: id.to_string(),
            fidelity: s.spec.fidelity(),
            n_high: high.len(),
            low: summary,
            low_histogram: histogram(&low_v, cfg.analysis.n_bins).map_err(contract)?,
        });
    }
    let tree = SeedTree::new(cfg.seed);
    let mc = mc_errors(&points, cfg.analysis.mc_realizations, &tree.indexed_family(labels::MONTE_CARLO))
        .map_err(|e: AnalysisError| contract(e))?;
    let fit = FitResult::assemble(&mc, cfg.params.v1(), cfg.analysis.cl, cfg.analysis.bound_rule).map_err(contract)?;
    Ok(UnblindedAnalysis {
        sources,
        points,
        mc,
        fit,
    })
}

impl UnblindedAnalysis {
    pub fn render(&self, cfg: &RunConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Unblinded analysis");
        for (src, conf) in self.sources.iter().zip(&cfg.sources) {
            let _ = write!(
                s,
                "  {:<8} f = {:<6} n_low = {:<6} V_L = ({:.4} +/- {:.4}) nV",
                src.id,
                src.fidelity,
                src.low.n,
                src.low.mean * 1e9,
                src.low.sem * 1e9
            );
            if conf.readout.n_repetitions() > 1 {
                let _ = write!(
                    s,
                    "  [{} readouts, per-readout fidelity {:.6}]",
                    conf.readout.n_repetitions(),
                    conf.readout.per_cycle_fidelity()
                );
            }
            let _ = writeln!(s);
        }
        let f = &self.fit;
        let _ = writeln!(
            s,
            "  V_s (intercept) = ({:.4} +/- {:.4}) nV   [MC {:.4} nV]",
            f.line.intercept * 1e9,
            f.line.sigma_intercept * 1e9,
            f.mc_sd_intercept * 1e9
        );
        let _ = writeln!(
            s,
            "  slope = ({:.4} +/- {:.4}) nV   [MC {:.4} nV]",
            f.line.slope * 1e9,
            f.line.sigma_slope * 1e9,
            f.mc_sd_slope * 1e9
        );
        let _ = writeln!(s, "  eps_gamma = ({:.3e} +/- {:.3e})", f.eps, f.sigma_eps);
        let _ = writeln!(
            s,
            "  |eps_gamma| < {:.3e} at {}% CL ({} rule, {} MC realizations)",
            f.bound,
            f.cl * 100.0,
            f.bound_rule,
            f.mc_realizations
        );
        s
    }
}

fn write_histogram(h: &Histogram, path: &Path) -> Result<(), PipelineError> {
    let mut s = String::from("bin_left,bin_right,count,overlay_density\n");
    for b in &h.bins {
        let centre = 0.5 * (b.left + b.right);
        let _ = writeln!(s, "{:.16e},{:.16e},{},{:.16e}", b.left, b.right, b.count, h.overlay_density(centre));
    }
    write_text(path, &s)
}

fn write_fit(fit: &FitResult, path: &Path) -> Result<(), PipelineError> {
    let mut s = String::from("parameter,value,sigma\n");
    let rows: [(&str, f64, Option<f64>); 7] = [
        ("intercept_volts", fit.line.intercept, Some(fit.line.sigma_intercept)),
        ("slope_volts", fit.line.slope, Some(fit.line.sigma_slope)),
        ("eps_gamma", fit.eps, Some(fit.sigma_eps)),
        ("mc_intercept_volts", fit.line.intercept, Some(fit.mc_sd_intercept)),
        ("mc_slope_volts", fit.line.slope, Some(fit.mc_sd_slope)),
        ("bound", fit.bound, None),
        ("cl", fit.cl, None),
    ];
    for (name, v, sigma) in rows {
        match sigma {
            Some(sg) => writeln!(s, "{name},{v:.16e},{sg:.16e}"),
            None => writeln!(s, "{name},{v:.16e},"),
        }
        .expect("write to string");
    }
    write_text(path, &s)
}

fn write_band(mc: &McErrors, path: &Path) -> Result<(), PipelineError> {
    let xs: Vec<f64> = (0..BAND_POINTS)
        .map(|i| 0.5 * i as f64 / (BAND_POINTS - 1) as f64)
        .collect();
    let mut s = String::from("x,fit,lo,hi\n");
    for p in mc.band(&xs) {
        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", p.x, p.fit, p.lo, p.hi);
    }
    write_text(path, &s)
}

/// Loads readings and key, fits, and writes the per-source histograms,
/// `fit.csv`, `band.csv` and the text report.
pub fn cmd_unblind_fit(
    cfg: &RunConfig,
    readings_path: &Path,
    key_path: &Path,
    out: &Path,
) -> Result<UnblindedAnalysis, PipelineError> {
    cfg.validate()?;
    let readings = signal::read_readings(readings_path).map_err(|e| from_signal(readings_path, e))?;
    let key = blinding::read_key(key_path).map_err(|e| from_blinding(key_path, e))?;
    let result = unblind_fit(&readings, &key, cfg)?;
    ensure_dir(out)?;
    for src in &result.sources {
        write_histogram(&src.low_histogram, &out.join(format!("histogram_{}.csv", src.id)))?;
    }
    write_fit(&result.fit, &out.join("fit.csv"))?;
    write_band(&result.mc, &out.join("band.csv"))?;
    write_text(&out.join("unblinded_report.txt"), &result.render(cfg))?;
    Ok(result)
}

/// Runs every stage in order and writes the combined `report.txt`.
pub fn cmd_report(cfg: &RunConfig, out: &Path) -> Result<String, PipelineError> {
    cmd_generate(cfg, out)?;
    let (readings, key) = cmd_run(cfg, out)?;
    let blinded = cmd_blinded_summary(cfg, &readings, None, out)?;
    let unblinded = cmd_unblind_fit(cfg, &readings, &key, out)?;
    let mut text = String::new();
    let _ = writeln!(text, "seed {}", cfg.seed);
    let _ = writeln!(
        text,
        "eps_gamma (simulated) = {:e}, vs = {:.4} nV, v1 = {} V",
        cfg.params.eps_gamma(),
        cfg.params.vs() * 1e9,
        cfg.params.v1()
    );
    text.push('\n');
    text.push_str(&blinded.render());
    text.push('\n');
    text.push_str(&unblinded.render(cfg));
    write_text(&out.join("report.txt"), &text)?;
    Ok(text)
}
