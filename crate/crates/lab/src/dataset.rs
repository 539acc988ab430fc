//! Channel datasets: generation, the on-disk format and the train/test split.
//!
//! Samples are beamspace vectors `vec(H̄_b)` (column-major, length
//! `N_r·N_t`), stored as interleaved `(re, im)` pairs.

use std::path::Path;

use diffpace_core::channel::{sample_scenario, ChannelSample};
use diffpace_core::rng::{derive_seed, purpose, seeded};
use diffpace_core::{CVector, C64};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{ArraySection, ScenarioSection};
use crate::container;
use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 4] = b"DPDS";
pub const VERSION: u32 = 1;

/// Seed of the train/test permutation. Fixed so that every command sees
/// the same split of a given dataset.
pub const SPLIT_SEED: u64 = 0x5eed_9010;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub seed: u64,
    pub samples: usize,
    pub rows: usize,
    pub cols: usize,
    pub array: ArraySection,
    pub scenario: ScenarioSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<CVector>,
}

impl Dataset {
    /// Draws `count` channels; sample `i` depends only on `seed` and `i`.
    pub fn generate(
        array: &ArraySection,
        scenario: &ScenarioSection,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = array.array_config()?;
        let spec = scenario.spec()?;
        let (rx, tx) = cfg.codebooks()?;
        let base = derive_seed(seed, purpose::DATASET);
        let samples = (0..count)
            .map(|i| {
                let mut rng = seeded(derive_seed(base, i as u64));
                let paths = sample_scenario(&mut rng, &spec, &cfg)?;
                Ok(ChannelSample::from_paths(paths, &cfg, &rx, &tx)?.beamspace_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            header: DatasetHeader {
                seed,
                samples: count,
                rows: cfg.n_r,
                cols: cfg.n_t,
                array: array.clone(),
                scenario: scenario.clone(),
            },
            samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.header.rows * self.header.cols
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        container::encode(MAGIC, VERSION, &self.header_toml(), &self.payload())
    }

    fn header_toml(&self) -> String {
        toml::to_string(&self.header).expect("header serializes")
    }

    fn payload(&self) -> Vec<f64> {
        self.samples
            .iter()
            .flat_map(|h| h.iter().flat_map(|z| [z.re, z.im]))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write(path, MAGIC, VERSION, &self.header_toml(), &self.payload())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = container::read(path, MAGIC, VERSION)?;
        let header: DatasetHeader = toml::from_str(&c.header)
            .map_err(|e| LabError::format(path, format!("header: {e}")))?;
        let dim = header.rows * header.cols;
        if c.payload.len() != 2 * dim * header.samples {
            return Err(LabError::format(
                path,
                format!(
                    "payload has {} values, header promises {} samples of length {dim}",
                    c.payload.len(),
                    header.samples
                ),
            ));
        }
        let samples = c
            .payload
            .chunks_exact(2 * dim)
            .map(|s| CVector::from_fn(dim, |i, _| C64::new(s[2 * i], s[2 * i + 1])))
            .collect();
        Ok(Self { header, samples })
    }

    /// Fixed-seed permutation split; the first `round(fraction·n)`
    /// permuted samples train, the rest test. Both parts are non-empty.
    pub fn split(&self, train_fraction: f64) -> (Vec<CVector>, Vec<CVector>) {
        let n = self.samples.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeded(derive_seed(SPLIT_SEED, purpose::SPLIT)));
        let n_train =
            ((train_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.samples[i].clone()).collect();
        (pick(&order[..n_train]), pick(&order[n_train..]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::generate(&ArraySection::default(), &ScenarioSection::default(), 20, 7).unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_prefix_stable() {
        let a = small();
        let b = small();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let short =
            Dataset::generate(&ArraySection::default(), &ScenarioSection::default(), 5, 7).unwrap();
        assert_eq!(&a.samples[..5], &short.samples[..]);
        assert_eq!(a.dim(), 512);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        let a = small();
        a.save(&p).unwrap();
        assert_eq!(Dataset::load(&p).unwrap(), a);
        assert_eq!(std::fs::read(&p).unwrap(), a.to_bytes());
    }

    #[test]
    fn split_is_a_partition() {
        let a = small();
        let (tr, te) = a.split(0.9);
        assert_eq!((tr.len(), te.len()), (18, 2));
        let mut all: Vec<_> = tr.iter().chain(&te).map(|h| h[0].re.to_bits()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 20);
        assert_eq!(a.split(0.9), (tr, te));
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        let mut bytes = small().to_bytes();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&p, &bytes).unwrap();
        assert_eq!(Dataset::load(&p).unwrap_err().exit_code(), 3);
        assert!(matches!(
            Dataset::load(&dir.path().join("none.bin")),
            Err(LabError::Missing(_))
        ));
    }
}
