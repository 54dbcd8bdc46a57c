//! Blinded-measurement protocol.
//!
//! The source strings are concatenated and shuffled before they drive the
//! switch. The permutation key maps each blinded position back to
//! `(source_id, index within source)` and is kept away from the analysis until
//! the explicit unblinding step.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::sources::BitString;

#[derive(Debug, Error)]
pub enum BlindingError {
    #[error("no bits to blind")]
    Empty,
    #[error("duplicate source id {0:?}")]
    DuplicateSource(String),
    #[error("{readings} readings but key has {key} entries")]
    LengthMismatch { readings: usize, key: usize },
    #[error("key references unknown source {0:?}")]
    UnknownSource(String),
    #[error("key file line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("key is not a bijection: {0}")]
    NotBijective(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Bijective map from blinded position to origin. Two keys are equal when
/// they share a seed descriptor and map every position to the same origin.
#[derive(Debug, Clone)]
pub struct BlindingKey {
    sources: Vec<String>,
    /// `(index into sources, index within that source)` per blinded position.
    entries: Vec<(u32, u32)>,
    seed: String,
}

impl PartialEq for BlindingKey {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.len() == other.len() && self.origins().eq(other.origins())
    }
}

impl Eq for BlindingKey {}

impl BlindingKey {
    /// Builds a key from explicit origins, verifying bijectivity.
    pub fn from_entries<S: AsRef<str>>(
        origins: impl IntoIterator<Item = (S, usize)>,
        seed: impl Into<String>,
    ) -> Result<Self, BlindingError> {
        let mut sources: Vec<String> = Vec::new();
        let mut lookup: HashMap<String, u32> = HashMap::new();
        let mut entries = Vec::new();
        for (id, idx) in origins {
            let id = id.as_ref();
            let slot = match lookup.get(id) {
                Some(&s) => s,
                None => {
                    let s = sources.len() as u32;
                    sources.push(id.to_string());
                    lookup.insert(id.to_string(), s);
                    s
                }
            };
            let idx = u32::try_from(idx).map_err(|_| BlindingError::NotBijective(format!("index {idx} too large")))?;
            entries.push((slot, idx));
        }
        let key = Self {
            sources,
            entries,
            seed: seed.into(),
        };
        key.check_bijective()?;
        Ok(key)
    }

    fn check_bijective(&self) -> Result<(), BlindingError> {
        if self.entries.is_empty() {
            return Err(BlindingError::Empty);
        }
        let mut seen: Vec<Vec<bool>> = vec![Vec::new(); self.sources.len()];
        for &(s, i) in &self.entries {
            let slots = &mut seen[s as usize];
            let i = i as usize;
            if slots.len() <= i {
                slots.resize(i + 1, false);
            }
            if slots[i] {
                return Err(BlindingError::NotBijective(format!(
                    "({}, {i}) appears more than once",
                    self.sources[s as usize]
                )));
            }
            slots[i] = true;
        }
        for (s, slots) in seen.iter().enumerate() {
            if let Some(gap) = slots.iter().position(|&x| !x) {
                return Err(BlindingError::NotBijective(format!(
                    "source {} has no entry for index {gap}",
                    self.sources[s]
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seed_descriptor(&self) -> &str {
        &self.seed
    }

    /// Source ids in first-appearance order.
    pub fn source_ids(&self) -> &[String] {
        &self.sources
    }

    /// Origin of blinded position `pos`.
    pub fn origin(&self, pos: usize) -> (&str, usize) {
        let (s, i) = self.entries[pos];
        (&self.sources[s as usize], i as usize)
    }

    pub fn origins(&self) -> impl Iterator<Item = (&str, usize)> + '_ {
        self.entries
            .iter()
            .map(|&(s, i)| (self.sources[s as usize].as_str(), i as usize))
    }

    /// Number of entries per source.
    pub fn counts(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for (id, _) in self.origins() {
            *out.entry(id).or_insert(0) += 1;
        }
        out
    }

    /// Fails with [`BlindingError::UnknownSource`] if the key names a source
    /// outside `known`.
    pub fn check_sources<S: AsRef<str>>(&self, known: &[S]) -> Result<(), BlindingError> {
        for id in &self.sources {
            if !known.iter().any(|k| k.as_ref() == id) {
                return Err(BlindingError::UnknownSource(id.clone()));
            }
        }
        Ok(())
    }
}

/// Concatenates the strings in order and applies a Fisher-Yates shuffle
/// driven by `rng`. Returns the blinded bits and the key.
pub fn combine_and_permute<R: Rng + ?Sized>(
    strings: &[BitString],
    rng: &mut R,
    seed_descriptor: &str,
) -> Result<(Vec<u8>, BlindingKey), BlindingError> {
    for (i, s) in strings.iter().enumerate() {
        if strings[..i].iter().any(|t| t.source().id() == s.source().id()) {
            return Err(BlindingError::DuplicateSource(s.source().id().to_string()));
        }
    }
    let mut slots: Vec<(u32, u32, u8)> = strings
        .iter()
        .enumerate()
        .flat_map(|(s, bits)| {
            bits.bits()
                .iter()
                .enumerate()
                .map(move |(i, &b)| (s as u32, i as u32, b))
        })
        .collect();
    if slots.is_empty() {
        return Err(BlindingError::Empty);
    }
    for i in (1..slots.len()).rev() {
        let j = rng.random_range(0..=i);
        slots.swap(i, j);
    }
    let bits = slots.iter().map(|&(_, _, b)| b).collect();
    let key = BlindingKey {
        sources: strings.iter().map(|s| s.source().id().to_string()).collect(),
        entries: slots.iter().map(|&(s, i, _)| (s, i)).collect(),
        seed: seed_descriptor.to_string(),
    };
    key.check_bijective()?;
    Ok((bits, key))
}

/// Regroups blinded-order items by source, restoring within-source order.
pub fn unblind<T: Clone>(items: &[T], key: &BlindingKey) -> Result<BTreeMap<String, Vec<T>>, BlindingError> {
    if items.len() != key.len() {
        return Err(BlindingError::LengthMismatch {
            readings: items.len(),
            key: key.len(),
        });
    }
    let mut sizes = vec![0usize; key.sources.len()];
    for &(s, _) in &key.entries {
        sizes[s as usize] += 1;
    }
    let mut slots: Vec<Vec<Option<T>>> = sizes.into_iter().map(|n| vec![None; n]).collect();
    for (item, &(s, i)) in items.iter().zip(&key.entries) {
        slots[s as usize][i as usize] = Some(item.clone());
    }
    Ok(key
        .sources
        .iter()
        .cloned()
        .zip(slots.into_iter().map(|v| v.into_iter().map(|x| x.expect("bijective key")).collect()))
        .collect())
}

pub fn write_key(key: &BlindingKey, path: &Path) -> Result<(), BlindingError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# seed={}", key.seed)?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["blinded_index", "source_id", "source_index"])?;
        for (pos, (id, idx)) in key.origins().enumerate() {
            w.write_record([pos.to_string().as_str(), id, idx.to_string().as_str()])?;
        }
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_key(path: &Path) -> Result<BlindingKey, BlindingError> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let seed = first
        .trim_end_matches(['\n', '\r'])
        .strip_prefix("# seed=")
        .ok_or_else(|| BlindingError::Malformed {
            line: 1,
            msg: "expected '# seed=<descriptor>'".into(),
        })?
        .to_string();
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["blinded_index", "source_id", "source_index"] {
        return Err(BlindingError::Malformed {
            line: 2,
            msg: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows: Vec<Option<(String, usize)>> = Vec::new();
    for (n, rec) in csv.records().enumerate() {
        let line = n + 3;
        let rec = rec.map_err(|e| BlindingError::Malformed { line, msg: e.to_string() })?;
        if rec.len() != 3 {
            return Err(BlindingError::Malformed {
                line,
                msg: format!("expected 3 fields, got {}", rec.len()),
            });
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| BlindingError::Malformed {
                line,
                msg: format!("bad {what} {s:?}"),
            })
        };
        let pos = parse(&rec[0], "blinded_index")?;
        let idx = parse(&rec[2], "source_index")?;
        if rec[1].is_empty() {
            return Err(BlindingError::Malformed {
                line,
                msg: "empty source_id".into(),
            });
        }
        if rows.len() <= pos {
            rows.resize(pos + 1, None);
        }
        if rows[pos].is_some() {
            return Err(BlindingError::NotBijective(format!("blinded index {pos} appears more than once")));
        }
        rows[pos] = Some((rec[1].to_string(), idx));
    }
    if let Some(gap) = rows.iter().position(Option::is_none) {
        return Err(BlindingError::NotBijective(format!("blinded index {gap} missing")));
    }
    BlindingKey::from_entries(rows.into_iter().map(|r| r.expect("checked")), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::sources::SourceSpec;

    fn string(id: &str, bits: &[u8]) -> BitString {
        BitString::new(SourceSpec::qubit(id, 0.9, bits.len()).unwrap(), bits.to_vec()).unwrap()
    }

    #[test]
    fn single_string_is_permuted() {
        let mut rng = SeedTree::new(1).stream("b");
        let (bits, key) = combine_and_permute(&[string("a", &[0, 1, 1])], &mut rng, "t").unwrap();
        let mut sorted = bits.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 1]);
        assert_eq!(key.len(), 3);
    }

    #[test]
    fn golden_permutation() {
        // Recorded once from SeedTree(2021)/"blinding".
        let mut rng = SeedTree::new(2021).stream("blinding");
        let (bits, key) =
            combine_and_permute(&[string("a", &[0, 0]), string("b", &[1])], &mut rng, "t").unwrap();
        let origins: Vec<(String, usize)> = key.origins().map(|(s, i)| (s.to_string(), i)).collect();
        assert_eq!(bits, GOLDEN_BITS);
        assert_eq!(
            origins,
            GOLDEN_ORIGINS
                .iter()
                .map(|&(s, i)| (s.to_string(), i))
                .collect::<Vec<_>>()
        );
    }
    const GOLDEN_BITS: [u8; 3] = [0, 1, 0];
    const GOLDEN_ORIGINS: [(&str, usize); 3] = [("a", 0), ("b", 0), ("a", 1)];

    #[test]
    fn duplicate_ids_rejected() {
        let mut rng = SeedTree::new(1).stream("b");
        assert!(matches!(
            combine_and_permute(&[string("a", &[0]), string("a", &[1])], &mut rng, "t"),
            Err(BlindingError::DuplicateSource(_))
        ));
        assert!(matches!(combine_and_permute(&[], &mut rng, "t"), Err(BlindingError::Empty)));
    }

    #[test]
    fn identity_readings_map_to_positions() {
        let mut rng = SeedTree::new(5).stream("b");
        let (_, key) = combine_and_permute(
            &[string("a", &[0, 1, 0, 1]), string("b", &[1, 1, 0])],
            &mut rng,
            "t",
        )
        .unwrap();
        let positions: Vec<usize> = (0..key.len()).collect();
        let groups = unblind(&positions, &key).unwrap();
        for (id, ps) in &groups {
            for (i, &p) in ps.iter().enumerate() {
                assert_eq!(key.origin(p), (id.as_str(), i));
            }
        }
        assert!(matches!(
            unblind(&positions[..3], &key),
            Err(BlindingError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn unknown_source_detected() {
        let key = BlindingKey::from_entries([("a", 0), ("z", 0)], "s").unwrap();
        assert!(key.check_sources(&["a", "z"]).is_ok());
        assert!(matches!(key.check_sources(&["a"]), Err(BlindingError::UnknownSource(s)) if s == "z"));
    }

    #[test]
    fn from_entries_rejects_non_bijection() {
        assert!(matches!(
            BlindingKey::from_entries([("a", 0), ("a", 0)], "s"),
            Err(BlindingError::NotBijective(_))
        ));
        assert!(matches!(
            BlindingKey::from_entries([("a", 0), ("a", 2)], "s"),
            Err(BlindingError::NotBijective(_))
        ));
    }

    #[test]
    fn key_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("key.csv");
        let key = BlindingKey::from_entries([("b", 0), ("a", 1), ("a", 0)], "master:1/blinding").unwrap();
        write_key(&key, &path).unwrap();
        assert_eq!(read_key(&path).unwrap(), key);

        fs::write(
            &path,
            "# seed=x\nblinded_index,source_id,source_index\n0,a,0\n1,a,0\n",
        )
        .unwrap();
        assert!(matches!(read_key(&path), Err(BlindingError::NotBijective(_))));
        fs::write(&path, "# seed=x\nblinded_index,source_id,source_index\n0,a,zero\n").unwrap();
        assert!(matches!(read_key(&path), Err(BlindingError::Malformed { line: 3, .. })));
        fs::write(&path, "blinded_index,source_id,source_index\n0,a,0\n").unwrap();
        assert!(matches!(read_key(&path), Err(BlindingError::Malformed { line: 1, .. })));
    }
}
