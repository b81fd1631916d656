use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    /// Not yet split (freshly sliced or generated data).
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

/// One slice pair. `mr` is absent for mask-only (QC) datasets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entry {
    pub mr: Option<PathBuf>,
    pub mask: PathBuf,
    pub source: String,
    pub index: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub split_tag: SplitTag,
    pub seed: u64,
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn new(split_tag: SplitTag, seed: u64, entries: Vec<Entry>) -> Self {
        Self {
            split_tag,
            seed,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads a manifest, resolving entry paths relative to the manifest's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m: Manifest = read_json(path)?;
        let base = std::path::absolute(path)?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        for e in &mut m.entries {
            e.mask = base.join(&e.mask);
            if let Some(mr) = e.mr.as_mut() {
                *mr = base.join(&*mr);
            }
        }
        Ok(m)
    }

    /// Saves as pretty JSON with entry paths written relative to the
    /// manifest's directory, so a run tree can be moved as a whole.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = std::path::absolute(path)?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut m = self.clone();
        for e in &mut m.entries {
            e.mask = relative_to(&std::path::absolute(&e.mask)?, &base);
            if let Some(mr) = e.mr.as_mut() {
                *mr = relative_to(&std::path::absolute(&*mr)?, &base);
            }
        }
        write_json(&m, path)
    }
}

fn normalized(p: &Path) -> Vec<Component<'_>> {
    let mut out: Vec<Component<'_>> = Vec::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.last(), Some(Component::Normal(_))) => {
                out.pop();
            }
            c => out.push(c),
        }
    }
    out
}

/// `target` expressed relative to `base`; both must be absolute.
fn relative_to(target: &Path, base: &Path) -> PathBuf {
    let t = normalized(target);
    let b = normalized(base);
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return target.to_path_buf();
    }
    let mut rel = PathBuf::new();
    for _ in common..b.len() {
        rel.push("..");
    }
    for c in &t[common..] {
        rel.push(c.as_os_str());
    }
    rel
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
