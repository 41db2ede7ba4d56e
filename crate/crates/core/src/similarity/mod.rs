//! Bytecode similarity search for hidden schemes.
//!
//! A contract is flagged when its normalized edit distance to some known
//! scheme falls under a threshold. The threshold only makes sense relative to
//! the distance between two arbitrary contracts, which `estimate_baseline`
//! measures by Monte Carlo sampling. `fp_pass` then looks for flagged
//! contracts that are close to too many unrelated contracts (typically very
//! short bytecode) and reports them as suspected false positives.

pub mod distance;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::Address;
pub use distance::{
    banded_levenshtein, distance_bound, levenshtein, levenshtein_dp, levenshtein_within, nld,
    normalize, normalized_distance, Normalization,
};

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: file name is not `<address>.hex`")]
    BadFileName { path: PathBuf },
    #[error("{path}: invalid hex bytecode: {message}")]
    BadHex { path: PathBuf, message: String },
    #[error("empty bytecode for {0}")]
    EmptyBytecode(Address),
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("sample_pairs must be positive")]
    ZeroSamples,
    #[error("baseline needs at least two contracts, got {0}")]
    TooFewContracts(usize),
    #[error("seed set is empty")]
    EmptySeeds,
}

/// Contract bytecode keyed by its address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BytecodeBlob {
    pub address: Address,
    pub bytes: Vec<u8>,
}

impl BytecodeBlob {
    pub fn new(address: Address, bytes: Vec<u8>) -> Result<Self, SimilarityError> {
        if bytes.is_empty() {
            return Err(SimilarityError::EmptyBytecode(address));
        }
        Ok(BytecodeBlob { address, bytes })
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Reads one `<address>.hex` file.
pub fn load_blob(path: &Path) -> Result<BytecodeBlob, SimilarityError> {
    let address = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse::<Address>().ok())
        .ok_or_else(|| SimilarityError::BadFileName {
            path: path.to_path_buf(),
        })?;
    let text = fs::read_to_string(path).map_err(|source| SimilarityError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bytes = hex::decode(text.trim_end()).map_err(|e| SimilarityError::BadHex {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    BytecodeBlob::new(address, bytes)
}

/// Loads every `*.hex` file of a directory, sorted by address.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<BytecodeBlob>, SimilarityError> {
    let dir = dir.as_ref();
    let io_err = |source| SimilarityError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut blobs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.extension().is_some_and(|ext| ext == "hex") {
            blobs.push(load_blob(&path)?);
        }
    }
    blobs.sort_by_key(|a| a.address);
    Ok(blobs)
}

pub fn write_blob(dir: impl AsRef<Path>, blob: &BytecodeBlob) -> std::io::Result<()> {
    let path = dir.as_ref().join(format!("{}.hex", blob.address));
    fs::write(path, format!("{}\n", hex::encode(&blob.bytes)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub threshold: f64,
    pub sample_pairs: usize,
    pub rng_seed: u64,
    /// Flagged contracts with more neighbours than this are suspected false
    /// positives.
    pub fp_neighbor_limit: usize,
    pub normalization: Normalization,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            threshold: 0.35,
            sample_pairs: 10_000,
            rng_seed: 0,
            fp_neighbor_limit: 100,
            normalization: Normalization::Metric,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<(), SimilarityError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(SimilarityError::InvalidThreshold(self.threshold));
        }
        if self.sample_pairs == 0 {
            return Err(SimilarityError::ZeroSamples);
        }
        Ok(())
    }

    fn distance(&self, a: &[u8], b: &[u8]) -> f64 {
        normalized_distance(a, b, self.normalization)
    }

    /// Normalized distance if it is below the threshold.
    fn within_threshold(&self, a: &[u8], b: &[u8]) -> Option<f64> {
        let max = distance_bound(a.len(), b.len(), self.threshold, self.normalization);
        let raw = levenshtein_within(a, b, max)?;
        let d = normalize(raw, a.len(), b.len(), self.normalization);
        (d < self.threshold).then_some(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Draws an unordered pair of distinct indices uniformly from `0..n`.
fn sample_pair(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i.min(j), i.max(j))
}

/// Monte Carlo estimate of the distance between two arbitrary contracts.
///
/// Pairs are drawn with replacement from a ChaCha stream seeded with
/// `cfg.rng_seed`; distances are evaluated in parallel but summed in draw
/// order, so the result does not depend on the worker count.
pub fn estimate_baseline(
    corpus: &[BytecodeBlob],
    cfg: &SimilarityConfig,
) -> Result<BaselineEstimate, SimilarityError> {
    if corpus.len() < 2 {
        return Err(SimilarityError::TooFewContracts(corpus.len()));
    }
    if cfg.sample_pairs == 0 {
        return Err(SimilarityError::ZeroSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let pairs: Vec<(usize, usize)> = (0..cfg.sample_pairs)
        .map(|_| sample_pair(&mut rng, corpus.len()))
        .collect();
    let distances: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| cfg.distance(&corpus[i].bytes, &corpus[j].bytes))
        .collect();

    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let std_error = if distances.len() > 1 {
        let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(BaselineEstimate {
        mean,
        std_error,
        samples: distances.len(),
    })
}

/// Mean distance over every unordered pair. Quadratic; meant for checking
/// the sampled estimate on small corpora.
pub fn exhaustive_mean(corpus: &[BytecodeBlob], norm: Normalization) -> f64 {
    let n = corpus.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let distances: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| normalized_distance(&corpus[i].bytes, &corpus[j].bytes, norm))
        .collect();
    distances.iter().sum::<f64>() / distances.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub address: Address,
    pub min_distance: f64,
    pub nearest_seed: Address,
}

/// Flags every corpus contract whose distance to the nearest seed is below
/// `cfg.threshold`. Seeds are removed from the corpus first. Ties on the
/// nearest seed go to the lowest seed address; output is sorted by distance,
/// then address.
pub fn classify(
    corpus: &[BytecodeBlob],
    seeds: &[BytecodeBlob],
    cfg: &SimilarityConfig,
) -> Result<Vec<Match>, SimilarityError> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(SimilarityError::EmptySeeds);
    }
    let mut ordered_seeds: Vec<&BytecodeBlob> = seeds.iter().collect();
    ordered_seeds.sort_by_key(|a| a.address);
    let seed_addresses: HashSet<Address> = seeds.iter().map(|s| s.address).collect();

    let mut matches: Vec<Match> = corpus
        .par_iter()
        .filter(|blob| !seed_addresses.contains(&blob.address))
        .filter_map(|blob| {
            let mut best: Option<(f64, Address)> = None;
            for seed in &ordered_seeds {
                if let Some(d) = cfg.within_threshold(&blob.bytes, &seed.bytes) {
                    if best.is_none_or(|(b, _)| d < b) {
                        best = Some((d, seed.address));
                    }
                }
            }
            best.map(|(min_distance, nearest_seed)| Match {
                address: blob.address,
                min_distance,
                nearest_seed,
            })
        })
        .collect();
    matches.sort_by(|a, b| {
        a.min_distance
            .total_cmp(&b.min_distance)
            .then(a.address.cmp(&b.address))
    });
    Ok(matches)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectedFalsePositive {
    pub address: Address,
    pub neighbor_count: usize,
}

/// Counts, for each flagged contract, the corpus contracts (other than seeds
/// and itself) within the threshold, and reports those with more than
/// `cfg.fp_neighbor_limit` neighbours, most crowded first.
pub fn fp_pass(
    flagged: &[BytecodeBlob],
    corpus: &[BytecodeBlob],
    seeds: &[BytecodeBlob],
    cfg: &SimilarityConfig,
) -> Vec<SuspectedFalsePositive> {
    let seed_addresses: HashSet<Address> = seeds.iter().map(|s| s.address).collect();
    let mut report: Vec<SuspectedFalsePositive> = flagged
        .iter()
        .map(|f| {
            let neighbor_count = corpus
                .par_iter()
                .filter(|c| c.address != f.address && !seed_addresses.contains(&c.address))
                .filter(|c| cfg.within_threshold(&f.bytes, &c.bytes).is_some())
                .count();
            SuspectedFalsePositive {
                address: f.address,
                neighbor_count,
            }
        })
        .filter(|r| r.neighbor_count > cfg.fp_neighbor_limit)
        .collect();
    report.sort_by(|a, b| {
        b.neighbor_count
            .cmp(&a.neighbor_count)
            .then(a.address.cmp(&b.address))
    });
    report
}

/// `address,min_nld,nearest_seed`, distances with nine decimals.
pub fn write_matches_csv<W: Write>(writer: W, matches: &[Match]) -> csv::Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["address", "min_nld", "nearest_seed"])?;
    for m in matches {
        csv.write_record([
            m.address.to_string(),
            format!("{:.9}", m.min_distance),
            m.nearest_seed.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_fp_csv<W: Write>(writer: W, report: &[SuspectedFalsePositive]) -> csv::Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["address", "neighbor_count"])?;
    for r in report {
        csv.write_record([r.address.to_string(), r.neighbor_count.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(index: u64, bytes: &[u8]) -> BytecodeBlob {
        BytecodeBlob::new(Address::from_index(index), bytes.to_vec()).unwrap()
    }

    fn cfg(samples: usize) -> SimilarityConfig {
        SimilarityConfig {
            sample_pairs: samples,
            ..SimilarityConfig::default()
        }
    }

    #[test]
    fn baseline_identical_pair() {
        let corpus = [blob(1, b"abcd"), blob(2, b"abcd")];
        let est = estimate_baseline(&corpus, &cfg(50)).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.samples, 50);
    }

    #[test]
    fn baseline_needs_two_contracts() {
        assert!(matches!(
            estimate_baseline(&[blob(1, b"a")], &cfg(10)),
            Err(SimilarityError::TooFewContracts(1))
        ));
    }

    #[test]
    fn exhaustive_three_pairs() {
        // Pairs: (aaaa,aaaa) = 0 and twice (aaaa,bbbb) = 8/12.
        let corpus = [blob(1, b"aaaa"), blob(2, b"aaaa"), blob(3, b"bbbb")];
        let mean = exhaustive_mean(&corpus, Normalization::Metric);
        assert!((mean - 4.0 / 9.0).abs() < 1e-15);
        // Sampling converges on the same value.
        let est = estimate_baseline(&corpus, &cfg(20_000)).unwrap();
        assert!((est.mean - 4.0 / 9.0).abs() < 3.0 * est.std_error + 1e-12);
    }

    #[test]
    fn baseline_is_deterministic() {
        let corpus: Vec<_> = (0..10u64)
            .map(|i| blob(i, &[i as u8, 2, 3, (i * 7) as u8]))
            .collect();
        let a = estimate_baseline(&corpus, &cfg(500)).unwrap();
        let b = estimate_baseline(&corpus, &cfg(500)).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn exact_copy_is_flagged_at_zero() {
        let seed = blob(1, b"\x60\x60\x60\x40\x52\x36\x15");
        let corpus = [blob(9, &seed.bytes), blob(5, b"zzzzzzzzzzzzzzzzzzzz")];
        let found = classify(&corpus, std::slice::from_ref(&seed), &cfg(1)).unwrap();
        assert_eq!(
            found,
            vec![Match {
                address: Address::from_index(9),
                min_distance: 0.0,
                nearest_seed: seed.address,
            }]
        );
    }

    #[test]
    fn distant_blobs_are_not_flagged() {
        let seed = blob(1, b"aaaaaaaa");
        let corpus = [blob(2, b"bbbbbbbb"), blob(3, b"aaaabbbbbbbb")];
        for c in &corpus {
            assert!(nld(&c.bytes, &seed.bytes) >= 0.5);
        }
        assert!(classify(&corpus, &[seed], &cfg(1)).unwrap().is_empty());
    }

    #[test]
    fn seeds_are_filtered_and_ties_go_to_lowest_seed() {
        let s_low = blob(1, b"abcdefgh");
        let s_high = blob(2, b"abcdefgh");
        let corpus = [s_high.clone(), blob(3, b"abcdefgx")];
        let found = classify(&corpus, &[s_high, s_low.clone()], &cfg(1)).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].address, Address::from_index(3));
        assert_eq!(found[0].nearest_seed, s_low.address);
    }

    #[test]
    fn classify_rejects_empty_seeds_and_bad_threshold() {
        let corpus = [blob(1, b"a")];
        assert!(matches!(
            classify(&corpus, &[], &cfg(1)),
            Err(SimilarityError::EmptySeeds)
        ));
        let bad = SimilarityConfig {
            threshold: 1.0,
            ..cfg(1)
        };
        assert!(matches!(
            classify(&corpus, &corpus, &bad),
            Err(SimilarityError::InvalidThreshold(_))
        ));
    }

    #[test]
    fn fp_pass_limits() {
        let flagged = blob(1, b"abcd");
        let corpus = vec![
            flagged.clone(),
            blob(2, b"abce"),
            blob(3, b"abcf"),
            blob(4, b"wxyz"),
        ];
        let lenient = SimilarityConfig {
            fp_neighbor_limit: corpus.len(),
            ..cfg(1)
        };
        assert!(fp_pass(std::slice::from_ref(&flagged), &corpus, &[], &lenient).is_empty());
        let strict = SimilarityConfig {
            fp_neighbor_limit: 1,
            ..cfg(1)
        };
        assert_eq!(
            fp_pass(std::slice::from_ref(&flagged), &corpus, &[], &strict),
            vec![SuspectedFalsePositive {
                address: flagged.address,
                neighbor_count: 2
            }]
        );
        // Seeds never count as neighbours.
        assert!(fp_pass(
            std::slice::from_ref(&flagged),
            &corpus,
            &corpus[1..2],
            &strict
        )
        .is_empty());
    }

    #[test]
    fn isolated_flagged_blob_not_reported() {
        let flagged = blob(1, b"abcd");
        let corpus = vec![flagged.clone(), blob(2, b"wxyz")];
        let c = SimilarityConfig {
            fp_neighbor_limit: 0,
            ..cfg(1)
        };
        assert!(fp_pass(&[flagged], &corpus, &[], &c).is_empty());
    }

    #[test]
    fn corpus_round_trip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let blobs = [blob(7, &[0x60, 0x80]), blob(3, &[0xfe])];
        for b in &blobs {
            write_blob(dir.path(), b).unwrap();
        }
        fs::write(dir.path().join("README"), "ignored").unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded, vec![blobs[1].clone(), blobs[0].clone()]);
    }

    #[test]
    fn odd_hex_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(format!("{}.hex", Address::from_index(1)));
        fs::write(&path, "abc\n").unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(SimilarityError::BadHex { .. })
        ));
        fs::write(&path, "\n").unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(SimilarityError::EmptyBytecode(_))
        ));
    }
}
