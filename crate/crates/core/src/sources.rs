//! Control bit strings and their provenance.
//!
//! Three kinds of string drive the switch: classical random bits (readout
//! fidelity 1/2 by construction) and bits recorded from measurements of
//! qubits prepared in an equal superposition. Measurement statistics are
//! 50/50 for any readout fidelity; the fidelity travels as metadata and only
//! enters through the signal model.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("bit count must be at least 1")]
    EmptyCount,
    #[error("fidelity {0} outside [1/2, 1]")]
    Fidelity(f64),
    #[error("classical source must have fidelity exactly 1/2, got {0}")]
    ClassicalFidelity(f64),
    #[error("invalid source id {0:?}")]
    Id(String),
    #[error("bit string length {actual} does not match declared count {declared}")]
    Length { declared: usize, actual: usize },
    #[error("malformed bit file header: {0}")]
    Header(String),
    #[error("line {line}: invalid bit {found:?}")]
    InvalidBit { line: usize, found: String },
    #[error("bit file declares n={declared} but contains {actual} bits")]
    CountMismatch { declared: usize, actual: usize },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Classical,
    Qubit,
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::Classical => "classical",
            SourceKind::Qubit => "qubit",
        })
    }
}

impl FromStr for SourceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classical" => Ok(SourceKind::Classical),
            "qubit" => Ok(SourceKind::Qubit),
            other => Err(format!("unknown source kind {other:?}")),
        }
    }
}

/// Identity and metadata of one bit source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    id: String,
    kind: SourceKind,
    fidelity: f64,
    count: usize,
}

impl SourceSpec {
    pub fn new(id: impl Into<String>, kind: SourceKind, fidelity: f64, count: usize) -> Result<Self, SourceError> {
        let id = id.into();
        // ids appear in file names, CSV cells and the bit-file header
        if id.is_empty()
            || !id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        {
            return Err(SourceError::Id(id));
        }
        if count == 0 {
            return Err(SourceError::EmptyCount);
        }
        match kind {
            SourceKind::Classical if fidelity != 0.5 => return Err(SourceError::ClassicalFidelity(fidelity)),
            _ if !(0.5..=1.0).contains(&fidelity) => return Err(SourceError::Fidelity(fidelity)),
            _ => {}
        }
        Ok(Self { id, kind, fidelity, count })
    }

    pub fn classical(id: impl Into<String>, count: usize) -> Result<Self, SourceError> {
        Self::new(id, SourceKind::Classical, 0.5, count)
    }

    pub fn qubit(id: impl Into<String>, fidelity: f64, count: usize) -> Result<Self, SourceError> {
        Self::new(id, SourceKind::Qubit, fidelity, count)
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn kind(&self) -> SourceKind {
        self.kind
    }
    pub fn fidelity(&self) -> f64 {
        self.fidelity
    }
    pub fn count(&self) -> usize {
        self.count
    }
}

/// Bits of one source, each 0 or 1, with `bits.len() == source.count()`.
#[derive(Debug, Clone, PartialEq)]
pub struct BitString {
    source: SourceSpec,
    bits: Vec<u8>,
}

impl BitString {
    pub fn new(source: SourceSpec, bits: Vec<u8>) -> Result<Self, SourceError> {
        if bits.len() != source.count {
            return Err(SourceError::Length {
                declared: source.count,
                actual: bits.len(),
            });
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(SourceError::InvalidBit {
                line: pos + 2,
                found: bits[pos].to_string(),
            });
        }
        Ok(Self { source, bits })
    }

    pub fn source(&self) -> &SourceSpec {
        &self.source
    }
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
    pub fn len(&self) -> usize {
        self.bits.len()
    }
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

fn fair_bits<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| u8::from(rng.random::<bool>())).collect()
}

/// `n` fair bits from a classical generator.
pub fn generate_classical<R: Rng + ?Sized>(id: &str, n: usize, rng: &mut R) -> Result<BitString, SourceError> {
    let spec = SourceSpec::classical(id, n)?;
    Ok(BitString {
        bits: fair_bits(n, rng),
        source: spec,
    })
}

/// `n` recorded outcomes of measuring `(|0> + |1>)/sqrt(2)` with the given
/// readout fidelity attached.
pub fn generate_qubit<R: Rng + ?Sized>(id: &str, n: usize, fidelity: f64, rng: &mut R) -> Result<BitString, SourceError> {
    let spec = SourceSpec::qubit(id, fidelity, n)?;
    Ok(BitString {
        bits: fair_bits(n, rng),
        source: spec,
    })
}

/// Generates bits for an arbitrary spec.
pub fn generate<R: Rng + ?Sized>(spec: &SourceSpec, rng: &mut R) -> BitString {
    BitString {
        bits: fair_bits(spec.count, rng),
        source: spec.clone(),
    }
}

/// Writes the bit file: one header line then one bit per line.
pub fn write_bits(bits: &BitString, path: &Path) -> Result<(), SourceError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_bits_to(bits, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_bits_to<W: Write>(bits: &BitString, out: &mut W) -> io::Result<()> {
    let s = &bits.source;
    writeln!(
        out,
        "# id={} kind={} fidelity={} n={}",
        s.id, s.kind, s.fidelity, s.count
    )?;
    for &b in &bits.bits {
        out.write_all(if b == 0 { b"0\n" } else { b"1\n" })?;
    }
    Ok(())
}

fn parse_header(line: &str) -> Result<SourceSpec, SourceError> {
    let bad = |msg: &str| SourceError::Header(format!("{msg} in {line:?}"));
    let body = line.strip_prefix("# ").ok_or_else(|| bad("missing '# ' prefix"))?;
    let (mut id, mut kind, mut fidelity, mut count) = (None, None, None, None);
    for field in body.split(' ').filter(|f| !f.is_empty()) {
        let (k, v) = field.split_once('=').ok_or_else(|| bad("field without '='"))?;
        match k {
            "id" => id = Some(v.to_string()),
            "kind" => kind = Some(v.parse::<SourceKind>().map_err(|e| bad(&e))?),
            "fidelity" => fidelity = Some(v.parse::<f64>().map_err(|_| bad("bad fidelity"))?),
            "n" => count = Some(v.parse::<usize>().map_err(|_| bad("bad n"))?),
            _ => return Err(bad(&format!("unknown field {k:?}"))),
        }
    }
    let (Some(id), Some(kind), Some(fidelity), Some(count)) = (id, kind, fidelity, count) else {
        return Err(bad("missing field"));
    };
    SourceSpec::new(id, kind, fidelity, count)
}

/// Parses a bit file from its text.
pub fn parse_bits(text: &str) -> Result<BitString, SourceError> {
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or_default();
    let spec = parse_header(header)?;
    let mut bits = Vec::with_capacity(spec.count);
    for (i, line) in lines.enumerate() {
        match line {
            "0" => bits.push(0),
            "1" => bits.push(1),
            "" => {}
            other => {
                return Err(SourceError::InvalidBit {
                    line: i + 2,
                    found: other.to_string(),
                })
            }
        }
    }
    if bits.len() != spec.count {
        return Err(SourceError::CountMismatch {
            declared: spec.count,
            actual: bits.len(),
        });
    }
    Ok(BitString { source: spec, bits })
}

pub fn ingest_bits(path: &Path) -> Result<BitString, SourceError> {
    parse_bits(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasSummary {
    pub ones_fraction: f64,
    pub longest_run: usize,
    pub z_score: f64,
}

/// Ones fraction, longest run of equal bits and binomial z-score.
pub fn bias_diagnostics(bits: &[u8]) -> Result<BiasSummary, SourceError> {
    if bits.is_empty() {
        return Err(SourceError::EmptyCount);
    }
    let n = bits.len() as f64;
    let ones = bits.iter().filter(|&&b| b == 1).count() as f64;
    let mut longest = 1;
    let mut run = 1;
    for w in bits.windows(2) {
        if w[0] == w[1] {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 1;
        }
    }
    Ok(BiasSummary {
        ones_fraction: ones / n,
        longest_run: longest,
        z_score: (ones - n / 2.0) / (n / 4.0).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    #[test]
    fn classical_is_deterministic() {
        let tree = SeedTree::new(3);
        let a = generate_classical("c1", 8, &mut tree.stream("b")).unwrap();
        let b = generate_classical("c1", 8, &mut tree.stream("b")).unwrap();
        assert_eq!(a, b);
        let big = generate_classical("c1", 60000, &mut tree.stream("b")).unwrap();
        assert_eq!(big.len(), 60000);
        assert_eq!(big.source().fidelity(), 0.5);
        assert!(generate_classical("c1", 0, &mut tree.stream("b")).is_err());
    }

    #[test]
    fn fair_fraction() {
        let tree = SeedTree::new(11);
        let bits = generate_classical("c", 100_000, &mut tree.stream("b")).unwrap();
        let d = bias_diagnostics(bits.bits()).unwrap();
        assert!((d.ones_fraction - 0.5).abs() < 0.0079);
        let q = generate_qubit("q", 10_000, 0.75, &mut tree.stream("q")).unwrap();
        let d = bias_diagnostics(q.bits()).unwrap();
        assert!((d.ones_fraction - 0.5).abs() < 5.0 * (0.25f64 / 10_000.0).sqrt());
        assert!(d.z_score.abs() < 5.0);
    }

    #[test]
    fn qubit_metadata() {
        let tree = SeedTree::new(1);
        let q2 = generate_qubit("q2", 30000, 0.99, &mut tree.stream("a")).unwrap();
        assert_eq!((q2.len(), q2.source().fidelity()), (30000, 0.99));
        let q3 = generate_qubit("q3", 10717, 0.55, &mut tree.stream("a")).unwrap();
        assert_eq!((q3.len(), q3.source().fidelity()), (10717, 0.55));
        assert!(matches!(
            generate_qubit("q", 5, 1.2, &mut tree.stream("a")),
            Err(SourceError::Fidelity(_))
        ));
    }

    #[test]
    fn classical_fidelity_is_fixed() {
        assert!(matches!(
            SourceSpec::new("c", SourceKind::Classical, 0.6, 3),
            Err(SourceError::ClassicalFidelity(_))
        ));
        assert!(SourceSpec::new("c", SourceKind::Classical, 0.5, 3).is_ok());
        assert!(SourceSpec::new("bad id", SourceKind::Qubit, 0.6, 3).is_err());
    }

    #[test]
    fn parse_examples() {
        let b = parse_bits("# id=q kind=qubit fidelity=0.9 n=5\n0\n1\n1\n0\n1\n").unwrap();
        assert_eq!(b.bits(), &[0, 1, 1, 0, 1]);
        assert_eq!(b.source().id(), "q");
        assert!(matches!(
            parse_bits("# id=q kind=qubit fidelity=0.9 n=5\n0\n1\n1\n0\n"),
            Err(SourceError::CountMismatch { declared: 5, actual: 4 })
        ));
        assert!(matches!(
            parse_bits("# id=q kind=qubit fidelity=0.9 n=2\n0\n2\n"),
            Err(SourceError::InvalidBit { line: 3, .. })
        ));
        assert!(matches!(
            parse_bits("id=q kind=qubit fidelity=0.9 n=2\n0\n1\n"),
            Err(SourceError::Header(_))
        ));
        assert!(matches!(
            parse_bits("# id=q kind=qubit n=2\n0\n1\n"),
            Err(SourceError::Header(_))
        ));
    }

    #[test]
    fn diagnostics_examples() {
        let d = bias_diagnostics(&[0; 10]).unwrap();
        assert_eq!((d.ones_fraction, d.longest_run), (0.0, 10));
        assert!((d.z_score + 10f64.sqrt()).abs() < 1e-12);
        let alt: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let d = bias_diagnostics(&alt).unwrap();
        assert_eq!((d.ones_fraction, d.longest_run, d.z_score), (0.5, 1, 0.0));
        assert!(bias_diagnostics(&[]).is_err());
    }
}
