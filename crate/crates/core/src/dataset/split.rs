use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{DatasetError, Entry, Manifest, Provenance, Result, SplitTag};
use crate::seed;

// Guards floor/ceil against products like 26040 * 0.2 = 5208.000000000001.
const ROUNDING_SLACK: f64 = 1e-9;

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Ratios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl Ratios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        let parts = [train, val, test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (train + val + test - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Ratios(parts));
        }
        Ok(r)
    }

    /// Split sizes for `n` items: validation and test get `floor(n * r)`,
    /// training takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = ((n as f64 * self.val) + ROUNDING_SLACK).floor() as usize;
        let test = ((n as f64 * self.test) + ROUNDING_SLACK).floor() as usize;
        (n - val - test, val, test)
    }
}

fn shuffled(entries: &[Entry], seed: u64) -> Vec<Entry> {
    let mut v = entries.to_vec();
    v.shuffle(&mut seed::rng(seed, "split", 0));
    v
}

/// Shuffles slice entries with `seed` and partitions them into train,
/// validation and test manifests.
pub fn split(entries: &[Entry], ratios: Ratios, seed: u64) -> Result<(Manifest, Manifest, Manifest)> {
    Ratios::new(ratios.train, ratios.val, ratios.test)?;
    if entries.is_empty() {
        return Err(DatasetError::Empty("nothing to split".into()));
    }
    let v = shuffled(entries, seed);
    let (ntr, nva, _) = ratios.sizes(v.len());
    let mut it = v.into_iter();
    let train: Vec<Entry> = it.by_ref().take(ntr).collect();
    let val: Vec<Entry> = it.by_ref().take(nva).collect();
    let test: Vec<Entry> = it.collect();
    Ok((
        Manifest::new(SplitTag::Train, seed, train),
        Manifest::new(SplitTag::Val, seed, val),
        Manifest::new(SplitTag::Test, seed, test),
    ))
}

/// Splits whole subjects rather than slices: volumes are shuffled and
/// assigned to validation, then test, until each reaches its slice quota.
///
/// Slice counts therefore only approximate the ratios. Volume-wise splits
/// are known to overfit badly on small cohorts; slice-wise [`split`] is the
/// default.
pub fn split_by_volume(
    entries: &[Entry],
    ratios: Ratios,
    seed: u64,
) -> Result<(Manifest, Manifest, Manifest)> {
    Ratios::new(ratios.train, ratios.val, ratios.test)?;
    if entries.is_empty() {
        return Err(DatasetError::Empty("nothing to split".into()));
    }
    let mut by_source: BTreeMap<&str, Vec<Entry>> = BTreeMap::new();
    for e in entries {
        by_source.entry(e.source.as_str()).or_default().push(e.clone());
    }
    let mut groups: Vec<Vec<Entry>> = by_source.into_values().collect();
    groups.shuffle(&mut seed::rng(seed, "split-volume", 0));
    let (_, nva, nte) = ratios.sizes(entries.len());
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for g in groups {
        if val.len() < nva {
            val.extend(g);
        } else if test.len() < nte {
            test.extend(g);
        } else {
            train.extend(g);
        }
    }
    Ok((
        Manifest::new(SplitTag::Train, seed, train),
        Manifest::new(SplitTag::Val, seed, val),
        Manifest::new(SplitTag::Test, seed, test),
    ))
}

/// The first `ceil(n * fraction)` entries, in manifest order.
pub fn take_fraction(manifest: &Manifest, fraction: f64) -> Result<Manifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DatasetError::Fraction(fraction));
    }
    let n = ((manifest.len() as f64 * fraction) - ROUNDING_SLACK).ceil().max(0.0) as usize;
    Ok(Manifest {
        entries: manifest.entries[..n.min(manifest.len())].to_vec(),
        ..manifest.clone()
    })
}

/// Concatenates the first `n_real` real and first `n_synth` synthetic
/// entries and shuffles the result with `seed`.
pub fn mix(real: &Manifest, synth: &Manifest, n_real: usize, n_synth: usize, seed: u64) -> Result<Manifest> {
    if n_real > real.len() {
        return Err(DatasetError::Size {
            what: "real",
            need: n_real,
            have: real.len(),
        });
    }
    if n_synth > synth.len() {
        return Err(DatasetError::Size {
            what: "synthetic",
            need: n_synth,
            have: synth.len(),
        });
    }
    let mut entries: Vec<Entry> = real.entries[..n_real]
        .iter()
        .map(|e| Entry {
            provenance: Provenance::Real,
            ..e.clone()
        })
        .chain(synth.entries[..n_synth].iter().map(|e| Entry {
            provenance: Provenance::Synthetic,
            ..e.clone()
        }))
        .collect();
    entries.shuffle(&mut seed::rng(seed, "mix", 0));
    Ok(Manifest::new(SplitTag::Train, seed, entries))
}
