//! The long-format results table and its Table-1-style pivot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const HEADER: &str = "run,fraction,n_real,n_synth,classes,seed,best_epoch,val_error,test_error_percent";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run: String,
    pub fraction: f64,
    pub n_real: usize,
    pub n_synth: usize,
    pub classes: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_error: f64,
    pub test_error_percent: f64,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.run.replace([',', '\n'], "_"),
            self.fraction,
            self.n_real,
            self.n_synth,
            self.classes,
            self.seed,
            self.best_epoch,
            self.val_error,
            self.test_error_percent
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            bail!("expected 9 fields, got {}", f.len());
        }
        Ok(Self {
            run: f[0].to_string(),
            fraction: f[1].parse()?,
            n_real: f[2].parse()?,
            n_synth: f[3].parse()?,
            classes: f[4].parse()?,
            seed: f[5].parse()?,
            best_epoch: f[6].parse()?,
            val_error: f[7].parse()?,
            test_error_percent: f[8].parse()?,
        })
    }
}

/// Appends a row, writing the header first if the file is new. Concurrent
/// writers are serialized by an advisory lock on the file.
pub fn append_row(path: &Path, row: &ResultRow) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening results table {}", path.display()))?;
    file.lock()?;
    let mut text = String::new();
    if file.metadata()?.len() == 0 {
        text.push_str(HEADER);
        text.push('\n');
    }
    text.push_str(&row.to_csv());
    text.push('\n');
    file.write_all(text.as_bytes())?;
    file.unlock()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading results table {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == HEADER => {}
        _ => bail!("{} does not start with the header `{HEADER}`", path.display()),
    }
    lines
        .enumerate()
        .map(|(i, l)| ResultRow::parse(l).with_context(|| format!("{} line {}", path.display(), i + 2)))
        .collect()
}

/// Rows are ordered by fraction (descending), real count (descending) and
/// synthetic count (ascending).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MixKey {
    /// Fraction in parts per million, for exact grouping.
    pub fraction_ppm: u64,
    pub n_real: usize,
    pub n_synth: usize,
}

impl MixKey {
    fn sort_key(&self) -> (std::cmp::Reverse<u64>, std::cmp::Reverse<usize>, usize) {
        (
            std::cmp::Reverse(self.fraction_ppm),
            std::cmp::Reverse(self.n_real),
            self.n_synth,
        )
    }

    pub fn fraction(&self) -> f64 {
        self.fraction_ppm as f64 / 1e6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Mean over all runs (seeds) of this mix and class count.
    pub error: f64,
    pub runs: usize,
    /// `error` minus the real-only baseline of the same fraction and class
    /// count.
    pub delta: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub fraction: f64,
    pub n_real: usize,
    pub n_synth: usize,
    /// Keyed by class count.
    pub cells: BTreeMap<usize, Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub class_counts: Vec<usize>,
}

/// Pivots the results: rows are data mixes, columns class counts. Every
/// (fraction, class count) group needs a real-only (`n_synth == 0`) row as
/// its baseline; with several, the one with most real images is used. The
/// lowest mean error of each group is marked best; ties go to the earlier
/// row.
pub fn build_report(rows: &[ResultRow]) -> Result<Report> {
    if rows.is_empty() {
        bail!("results table has no rows");
    }
    let mut sums: BTreeMap<(MixKey, usize), (f64, usize)> = BTreeMap::new();
    for r in rows {
        if !(r.fraction > 0.0 && r.fraction <= 1.0) {
            bail!("run {}: fraction {} outside (0, 1]", r.run, r.fraction);
        }
        let key = MixKey {
            fraction_ppm: (r.fraction * 1e6).round() as u64,
            n_real: r.n_real,
            n_synth: r.n_synth,
        };
        let e = sums.entry((key, r.classes)).or_insert((0.0, 0));
        e.0 += r.test_error_percent;
        e.1 += 1;
    }
    let means: BTreeMap<(MixKey, usize), (f64, usize)> =
        sums.into_iter().map(|(k, (s, n))| (k, (s / n as f64, n))).collect();

    let mut keys: Vec<MixKey> = means.keys().map(|(k, _)| *k).collect();
    keys.sort_by_key(MixKey::sort_key);
    keys.dedup();
    let mut class_counts: Vec<usize> = means.keys().map(|(_, c)| *c).collect();
    class_counts.sort_unstable_by(|a, b| b.cmp(a));
    class_counts.dedup();

    let mut baselines = BTreeMap::new();
    let mut best = BTreeMap::new();
    for (&(key, classes), &(err, _)) in &means {
        let group = (key.fraction_ppm, classes);
        if key.n_synth == 0 {
            let b = baselines.entry(group).or_insert((key.n_real, err));
            if key.n_real > b.0 {
                *b = (key.n_real, err);
            }
        }
    }
    for key in &keys {
        for &c in &class_counts {
            if let Some(&(err, _)) = means.get(&(*key, c)) {
                let b = best.entry((key.fraction_ppm, c)).or_insert((*key, err));
                if err < b.1 {
                    *b = (*key, err);
                }
            }
        }
    }
    let mut missing: Vec<String> = best
        .keys()
        .filter(|g| !baselines.contains_key(*g))
        .map(|(f, c)| format!("fraction {} with {c} classes", *f as f64 / 1e6))
        .collect();
    if !missing.is_empty() {
        missing.sort();
        bail!("no real-only baseline (n_synth = 0) for {}", missing.join(", "));
    }

    let rows = keys
        .iter()
        .map(|key| {
            let cells = class_counts
                .iter()
                .filter_map(|&c| {
                    let &(error, runs) = means.get(&(*key, c))?;
                    let group = (key.fraction_ppm, c);
                    Some((
                        c,
                        Cell {
                            error,
                            runs,
                            delta: error - baselines[&group].1,
                            best: best[&group].0 == *key,
                        },
                    ))
                })
                .collect();
            ReportRow {
                fraction: key.fraction(),
                n_real: key.n_real,
                n_synth: key.n_synth,
                cells,
            }
        })
        .collect();
    Ok(Report { rows, class_counts })
}

/// Markdown rendering; best cells are bold, deltas in parentheses.
pub fn format_report(report: &Report) -> String {
    let mut out = String::from("| fraction | (real, synthetic) | total |");
    for c in &report.class_counts {
        let _ = write!(out, " {c} classes |");
    }
    out.push_str("\n|---|---|---|");
    for _ in &report.class_counts {
        out.push_str("---|");
    }
    out.push('\n');
    for r in &report.rows {
        let _ = write!(
            out,
            "| {} | ({}, {}) | {} |",
            r.fraction,
            r.n_real,
            r.n_synth,
            r.n_real + r.n_synth
        );
        for c in &report.class_counts {
            match r.cells.get(c) {
                Some(cell) => {
                    let v = format!("{:.2}", cell.error);
                    let v = if cell.best { format!("**{v}**") } else { v };
                    let _ = write!(out, " {v} ({:+.2}) |", cell.delta);
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(fraction: f64, n_real: usize, n_synth: usize, classes: usize, err: f64) -> ResultRow {
        ResultRow {
            run: format!("r{n_real}-{n_synth}-{classes}"),
            fraction,
            n_real,
            n_synth,
            classes,
            seed: 0,
            best_epoch: 1,
            val_error: 0.1,
            test_error_percent: err,
        }
    }

    /// Dice errors of the published results table.
    fn published() -> Vec<ResultRow> {
        let table = [
            (1.0, 26040, 0, [10.94, 6.62, 2.49]),
            (1.0, 26040, 8960, [10.92, 6.65, 2.48]),
            (1.0, 26040, 23960, [10.90, 6.42, 2.53]),
            (1.0, 0, 26040, [42.76, 39.11, 24.14]),
            (0.2, 5208, 0, [16.80, 12.90, 6.16]),
            (0.2, 5208, 4792, [16.44, 12.51, 6.14]),
            (0.2, 5208, 20832, [16.18, 12.11, 5.80]),
        ];
        table
            .iter()
            .flat_map(|&(f, r, s, e)| [7, 4, 2].into_iter().zip(e).map(move |(c, v)| row(f, r, s, c, v)))
            .collect()
    }

    fn best_of(report: &Report, fraction: f64, classes: usize) -> (usize, usize) {
        let r = report
            .rows
            .iter()
            .find(|r| r.fraction == fraction && r.cells.get(&classes).is_some_and(|c| c.best))
            .unwrap();
        (r.n_real, r.n_synth)
    }

    #[test]
    fn published_best_mixes() {
        let rep = build_report(&published()).unwrap();
        assert_eq!(rep.class_counts, vec![7, 4, 2]);
        assert_eq!(rep.rows.len(), 7);
        assert_eq!((rep.rows[0].n_real, rep.rows[0].n_synth), (26040, 0));
        assert_eq!((rep.rows[3].n_real, rep.rows[3].n_synth), (0, 26040));
        assert_eq!(best_of(&rep, 1.0, 7), (26040, 23960));
        assert_eq!(best_of(&rep, 1.0, 4), (26040, 23960));
        assert_eq!(best_of(&rep, 1.0, 2), (26040, 8960));
        for c in [7, 4, 2] {
            assert_eq!(best_of(&rep, 0.2, c), (5208, 20832));
        }
        let d = &rep.rows[1].cells[&7];
        assert!((d.delta - (10.92 - 10.94)).abs() < 1e-12);
        let text = format_report(&rep);
        assert!(text.contains("**10.90** (-0.04)"), "{text}");
    }

    #[test]
    fn argmin_is_shift_invariant() {
        let shifted: Vec<_> = published()
            .into_iter()
            .map(|mut r| {
                r.test_error_percent += 3.25;
                r
            })
            .collect();
        let (a, b) = (build_report(&published()).unwrap(), build_report(&shifted).unwrap());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            for c in [7, 4, 2] {
                assert_eq!(ra.cells[&c].best, rb.cells[&c].best);
                assert!((ra.cells[&c].delta - rb.cells[&c].delta).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn baseline_only_has_zero_deltas() {
        let rep = build_report(&[row(1.0, 10, 0, 2, 5.0), row(1.0, 10, 0, 2, 7.0)]).unwrap();
        let cell = &rep.rows[0].cells[&2];
        assert_eq!((cell.error, cell.runs, cell.delta, cell.best), (6.0, 2, 0.0, true));
    }

    #[test]
    fn missing_baseline() {
        let err = build_report(&[row(1.0, 10, 0, 2, 5.0), row(0.2, 2, 4, 2, 5.0)]).unwrap_err();
        assert!(err.to_string().contains("fraction 0.2 with 2 classes"), "{err}");
        assert!(build_report(&[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/results.csv");
        let rows = published();
        for r in &rows[..5] {
            append_row(&p, r).unwrap();
        }
        assert_eq!(read_rows(&p).unwrap(), rows[..5].to_vec());
        assert_eq!(fs::read_to_string(&p).unwrap().matches(HEADER).count(), 1);
        fs::write(&p, "nope\n").unwrap();
        assert!(read_rows(&p).is_err());
    }
}
