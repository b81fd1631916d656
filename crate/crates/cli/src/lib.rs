//! The `segaug` pipeline driver.
//!
//! Every subcommand returns a JSON report; relative paths are resolved
//! against the run root (`--run-root` or `SEGAUG_RUN_ROOT`, default the
//! working directory) and echoed as given, so reports do not depend on
//! where a run lives.

pub mod config;
pub mod results;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use segaug::dataset::{
    compute_class_weights, compute_norm_stats, filter_empty_by, load_masks, load_pairs, mix, remap_classes, split,
    split_by_volume, take_fraction, write_json, ClassScheme, Entry, LabelMask, Manifest, Provenance, Ratios,
    SplitTag, N_SOURCE_CLASSES,
};
use segaug::qc::{batch_pixel_stats, filter_dataset};
use segaug::swd::{swd_score, Image, SWDConfig};
use segaug::synthsrc::{gen_synth_dataset, ingest_external};
use segaug::unet::{evaluate, prepare, train_with, Checkpoint, EvalResult, TrainConfig, UNetConfig};
use segaug::volio::{pad_to_pow2, read_nifti, read_png, slice_axial, slice_filename, write_png, SliceKind};

pub use config::PipelineConfig;
use results::{append_row, build_report, format_report, read_rows, ResultRow};

#[derive(Debug, Parser)]
#[command(name = "segaug", version, about = "Segmentation experiments with synthetic-data augmentation")]
pub struct Cli {
    /// TOML or JSON pipeline configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory that relative paths are resolved against.
    #[arg(long, global = true, env = "SEGAUG_RUN_ROOT")]
    pub run_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// NIFTI volume pairs -> padded PNG slices and a manifest.
    Slice(SliceArgs),
    /// Shuffle a manifest into train/val/test manifests.
    Split(SplitArgs),
    /// Write masks remapped to a 7/4/2-class scheme.
    Remap(RemapArgs),
    /// Z-score filter synthetic masks against real reference masks.
    Qc(QcArgs),
    /// Sliced Wasserstein distance between two PNG directories.
    Swd(SwdArgs),
    /// Generate phantom pairs, or ingest externally generated ones.
    Gen(GenArgs),
    /// Combine real and synthetic entries into a training manifest.
    Mix(MixArgs),
    /// Train a U-Net; optionally evaluate it and append a results row.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test manifest.
    Eval(EvalArgs),
    /// Pivot a results table into a comparison against real-only runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Volume files are `<id><suffix>.nii`.
    #[arg(long, default_value = "_t1ce")]
    pub mr_suffix: String,
    #[arg(long, default_value = "_seg")]
    pub mask_suffix: String,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated train,val,test ratios.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep all slices of a volume in one split. Small cohorts overfit
    /// badly this way; slice-wise is the default.
    #[arg(long)]
    pub by_volume: bool,
}

#[derive(Debug, Args)]
pub struct RemapArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct QcArgs {
    /// Manifest of real masks; empty masks are ignored.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the configured threshold (500).
    #[arg(long)]
    pub qc_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SwdArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub patches: Option<usize>,
    #[arg(long)]
    pub projections: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ingest these masks instead of generating phantoms.
    #[arg(long)]
    pub from_masks: Option<PathBuf>,
    /// Images paired with `--from-masks` by file name.
    #[arg(long, requires = "from_masks")]
    pub from_images: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_real: Option<usize>,
    #[arg(long)]
    pub n_synth: Option<usize>,
    /// Leading fraction of the real manifest to draw from.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Results table; defaults to `results.csv` in the run root.
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed of the per-epoch shuffles.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub base_filters: Option<usize>,
    /// Dataset fraction recorded in the results table.
    #[arg(long)]
    pub fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Markdown table destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct Ctx {
    root: PathBuf,
    cfg: PipelineConfig,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn load_manifest(&self, p: &Path) -> Result<Manifest> {
        Manifest::load(self.path(p)).with_context(|| format!("loading manifest {}", p.display()))
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<Value>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    let ctx = Ctx {
        root: cli.run_root.clone().unwrap_or_else(|| PathBuf::from(".")),
        cfg,
    };
    match &cli.command {
        Command::Slice(a) => cmd_slice(&ctx, a),
        Command::Split(a) => cmd_split(&ctx, a),
        Command::Remap(a) => cmd_remap(&ctx, a),
        Command::Qc(a) => cmd_qc(&ctx, a),
        Command::Swd(a) => cmd_swd(&ctx, a),
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Mix(a) => cmd_mix(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn hashes(ctx: &Ctx, paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(&ctx.path(p))?)))
        .collect()
}

fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_json(value, path).with_context(|| format!("writing {}", path.display()))
}

fn cmd_slice(ctx: &Ctx, a: &SliceArgs) -> Result<Value> {
    let input = ctx.path(&a.input);
    let output = ctx.path(&a.output);
    let suffix = format!("{}.nii", a.mr_suffix);
    let mut ids: Vec<String> = fs::read_dir(&input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(&suffix)).map(str::to_string))
        .collect();
    ids.sort();
    ensure!(!ids.is_empty(), "no `*{suffix}` volumes in {}", a.input.display());

    let (img_dir, mask_dir) = (output.join("images"), output.join("masks"));
    fs::create_dir_all(&img_dir)?;
    fs::create_dir_all(&mask_dir)?;
    let mut entries = Vec::new();
    let mut inputs = BTreeMap::new();
    let mut dims = None;
    for id in &ids {
        let mr_name = format!("{id}{suffix}");
        let mask_name = format!("{id}{}.nii", a.mask_suffix);
        let (mr_path, mask_path) = (input.join(&mr_name), input.join(&mask_name));
        ensure!(mask_path.exists(), "volume {mr_name} has no label volume {mask_name}");
        let mr = read_nifti(&mr_path).with_context(|| format!("reading {mr_name}"))?;
        let mask = read_nifti(&mask_path).with_context(|| format!("reading {mask_name}"))?;
        ensure!(mr.dims == mask.dims, "{mr_name} is {:?} but {mask_name} is {:?}", mr.dims, mask.dims);
        if let Some(v) = mask.data.iter().find(|&&v| !(0..N_SOURCE_CLASSES as i32).contains(&v)) {
            bail!("{mask_name}: label {v} outside 0..{}", N_SOURCE_CLASSES - 1);
        }
        dims.get_or_insert(mr.dims);
        inputs.insert(mr_name.clone(), sha256_file(&mr_path)?);
        inputs.insert(mask_name.clone(), sha256_file(&mask_path)?);
        let mr_slices = slice_axial(&mr, SliceKind::Mr16).with_context(|| format!("slicing {mr_name}"))?;
        let mask_slices = slice_axial(&mask, SliceKind::Mask8)?;
        for (k, (m, s)) in mr_slices.iter().zip(&mask_slices).enumerate() {
            let name = slice_filename(id, k);
            let (mp, sp) = (img_dir.join(&name), mask_dir.join(&name));
            write_png(&pad_to_pow2(m).0, &mp)?;
            write_png(&pad_to_pow2(s).0, &sp)?;
            entries.push(Entry {
                mr: Some(mp),
                mask: sp,
                source: id.clone(),
                index: k,
                provenance: Provenance::Real,
            });
        }
    }
    let n_slices = entries.len();
    let manifest = Manifest::new(SplitTag::All, 0, entries);
    let mpath = output.join("manifest.json");
    manifest.save(&mpath)?;
    Ok(json!({
        "command": "slice",
        "n_volumes": ids.len(),
        "n_slices": n_slices,
        "volume_dims": dims,
        "inputs": inputs,
        "manifest": a.output.join("manifest.json"),
        "manifest_sha256": sha256_file(&mpath)?,
    }))
}

fn cmd_split(ctx: &Ctx, a: &SplitArgs) -> Result<Value> {
    let cfg = &ctx.cfg;
    let r = match a.ratios.as_deref() {
        Some(&[train, val, test]) => [train, val, test],
        Some(v) => bail!("--ratios needs 3 values, got {}", v.len()),
        None => cfg.split.ratios,
    };
    let ratios = Ratios::new(r[0], r[1], r[2])?;
    let seed = a.seed.unwrap_or(cfg.split_seed());
    let by_volume = a.by_volume || cfg.split.by_volume;
    let m = ctx.load_manifest(&a.manifest)?;
    let (train, val, test) = if by_volume {
        split_by_volume(&m.entries, ratios, seed)?
    } else {
        split(&m.entries, ratios, seed)?
    };
    let out = ctx.path(&a.out);
    fs::create_dir_all(&out)?;
    let mut sizes = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        let p = out.join(format!("{name}.json"));
        part.save(&p)?;
        sizes.insert(name, part.len());
        outputs.insert(name, sha256_file(&p)?);
    }
    Ok(json!({
        "command": "split",
        "seed": seed,
        "ratios": r,
        "by_volume": by_volume,
        "sizes": sizes,
        "inputs": hashes(ctx, &[&a.manifest])?,
        "outputs": outputs,
    }))
}

fn cmd_remap(ctx: &Ctx, a: &RemapArgs) -> Result<Value> {
    let classes = a.classes.unwrap_or(ctx.cfg.classes);
    let scheme = ClassScheme::for_classes(classes)?;
    let m = ctx.load_manifest(&a.manifest)?;
    let out = ctx.path(&a.out);
    let mask_dir = out.join("masks");
    fs::create_dir_all(&mask_dir)?;
    let mut counts = vec![0u64; classes];
    let mut entries = Vec::with_capacity(m.len());
    for (e, mask) in m.entries.iter().zip(load_masks(&m)?) {
        let r = remap_classes(&mask, &scheme)?;
        for &v in &r.labels {
            counts[v as usize] += 1;
        }
        let name = e
            .mask
            .file_name()
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(slice_filename(&e.source, e.index)));
        let p = mask_dir.join(name);
        write_png(&r.to_slice(), &p)?;
        entries.push(Entry { mask: p, ..e.clone() });
    }
    let mpath = out.join("manifest.json");
    Manifest::new(m.split_tag, m.seed, entries).save(&mpath)?;
    Ok(json!({
        "command": "remap",
        "classes": classes,
        "n_masks": m.len(),
        "class_pixel_counts": counts,
        "inputs": hashes(ctx, &[&a.manifest])?,
        "manifest_sha256": sha256_file(&mpath)?,
    }))
}

fn mask_id(e: &Entry) -> String {
    e.mask
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| slice_filename(&e.source, e.index))
}

fn cmd_qc(ctx: &Ctx, a: &QcArgs) -> Result<Value> {
    let threshold = a.qc_threshold.unwrap_or(ctx.cfg.qc.threshold);
    let reference = ctx.load_manifest(&a.reference)?;
    let (real, empty_fraction) = filter_empty_by(load_masks(&reference)?, LabelMask::is_empty);
    let stats = batch_pixel_stats(&real)?;
    let cand = ctx.load_manifest(&a.candidates)?;
    let named: Vec<(String, LabelMask)> = cand.entries.iter().map(mask_id).zip(load_masks(&cand)?).collect();
    let report = filter_dataset(&named, &stats, threshold)?;

    let out = ctx.path(&a.out);
    fs::create_dir_all(&out)?;
    write_report(&out.join("qc_report.json"), &report)?;
    let kept: std::collections::HashSet<&str> = report.kept.iter().map(String::as_str).collect();
    let kept_entries = cand
        .entries
        .iter()
        .filter(|e| kept.contains(mask_id(e).as_str()))
        .cloned()
        .collect();
    let kpath = out.join("kept.json");
    Manifest::new(cand.split_tag, cand.seed, kept_entries).save(&kpath)?;
    Ok(json!({
        "command": "qc",
        "threshold": threshold,
        "n_reference": stats.n_ref,
        "reference_empty_fraction": empty_fraction,
        "n_candidates": named.len(),
        "n_kept": report.kept.len(),
        "discarded_fraction": report.discarded_fraction,
        "discarded": report.discarded,
        "inputs": hashes(ctx, &[&a.reference, &a.candidates])?,
        "kept_manifest_sha256": sha256_file(&kpath)?,
    }))
}

fn load_png_dir(dir: &Path) -> Result<(Vec<Image>, BTreeMap<String, String>)> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    names.sort();
    ensure!(!names.is_empty(), "no PNG images in {}", dir.display());
    let mut images = Vec::with_capacity(names.len());
    let mut h = BTreeMap::new();
    for p in &names {
        images.push(Image::from_slice(&read_png(p).with_context(|| format!("reading {}", p.display()))?));
        h.insert(
            p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            sha256_file(p)?,
        );
    }
    Ok((images, h))
}

fn cmd_swd(ctx: &Ctx, a: &SwdArgs) -> Result<Value> {
    let c = ctx.cfg.swd;
    let config = SWDConfig {
        n_levels: a.levels.unwrap_or(c.n_levels),
        patches_per_image: a.patches.unwrap_or(c.patches_per_image),
        n_projections: a.projections.unwrap_or(c.n_projections),
        seed: a.seed.unwrap_or(c.seed),
        ..c
    };
    let (reference, rh) = load_png_dir(&ctx.path(&a.reference))?;
    let (generated, gh) = load_png_dir(&ctx.path(&a.gen))?;
    let score = swd_score(&reference, &generated, &config)?;
    Ok(json!({
        "command": "swd",
        "config": config,
        "per_level": score.per_level,
        "average": score.average,
        "inputs": {"ref": rh, "gen": gh},
    }))
}

fn cmd_gen(ctx: &Ctx, a: &GenArgs) -> Result<Value> {
    let out = ctx.path(&a.out);
    let mpath = out.join("manifest.json");
    if let Some(masks) = &a.from_masks {
        let image_dir = a.from_images.as_ref().map(|p| ctx.path(p));
        let m = ingest_external(&ctx.path(masks), image_dir.as_deref())?;
        fs::create_dir_all(&out)?;
        m.save(&mpath)?;
        return Ok(json!({
            "command": "gen",
            "source": "external",
            "n": m.len(),
            "with_images": image_dir.is_some(),
            "manifest_sha256": sha256_file(&mpath)?,
        }));
    }
    let n = a.n.unwrap_or(ctx.cfg.gen.n);
    let seed = a.seed.unwrap_or(ctx.cfg.gen_seed());
    let params = &ctx.cfg.gen.phantom;
    let (_, m) = gen_synth_dataset(n, params, seed, &out)?;
    m.save(&mpath)?;
    Ok(json!({
        "command": "gen",
        "source": "phantom",
        "n": n,
        "seed": seed,
        "phantom": params,
        "manifest_sha256": sha256_file(&mpath)?,
    }))
}

fn cmd_mix(ctx: &Ctx, a: &MixArgs) -> Result<Value> {
    let cfg = &ctx.cfg.mix;
    let fraction = a.fraction.unwrap_or(cfg.fraction);
    let seed = a.seed.unwrap_or(ctx.cfg.mix_seed());
    let real = take_fraction(&ctx.load_manifest(&a.real)?, fraction)?;
    let n_real = a.n_real.or(cfg.n_real).unwrap_or(real.len());
    let n_synth = a.n_synth.unwrap_or(cfg.n_synth);
    let synth = match &a.synth {
        Some(p) => ctx.load_manifest(p)?,
        None if n_synth == 0 => Manifest::new(SplitTag::All, 0, Vec::new()),
        None => bail!("--synth is required when n_synth = {n_synth} > 0"),
    };
    let mixed = mix(&real, &synth, n_real, n_synth, seed)?;
    let out = ctx.path(&a.out);
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    mixed.save(&out)?;
    let mut inputs: Vec<&Path> = vec![&a.real];
    if let Some(s) = &a.synth {
        inputs.push(s);
    }
    Ok(json!({
        "command": "mix",
        "fraction": fraction,
        "n_real": n_real,
        "n_synth": n_synth,
        "total": mixed.len(),
        "seed": seed,
        "inputs": hashes(ctx, &inputs)?,
        "manifest_sha256": sha256_file(&out)?,
    }))
}

#[derive(Debug, Serialize)]
struct Seeds {
    data: u64,
    shuffle: u64,
    init: u64,
}

#[derive(Debug, Serialize)]
struct ExperimentSpec {
    class_scheme: usize,
    n_real: usize,
    n_synth: usize,
    dataset_fraction: f64,
    seeds: Seeds,
    unet: UNetConfig,
    lr: f64,
    batch_size: usize,
    epochs: usize,
}

/// Everything about a training run that is reproducible; wall-clock time
/// lives in `timing.json` next to it.
#[derive(Debug, Serialize)]
struct RunReport {
    command: &'static str,
    spec: ExperimentSpec,
    best_epoch: usize,
    val_error: f64,
    test: Option<EvalResult>,
    artifacts: BTreeMap<&'static str, String>,
    inputs: BTreeMap<String, String>,
    checkpoint_sha256: String,
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<Value> {
    let cfg = &ctx.cfg;
    let classes = a.classes.unwrap_or(cfg.classes);
    let scheme = ClassScheme::for_classes(classes)?;
    let train_m = ctx.load_manifest(&a.train)?;
    let val_m = ctx.load_manifest(&a.val)?;
    let train_s = load_pairs(&train_m, &scheme).context("loading training pairs")?;
    let val_s = load_pairs(&val_m, &scheme).context("loading validation pairs")?;
    ensure!(!train_s.is_empty(), "training manifest {} is empty", a.train.display());
    ensure!(!val_s.is_empty(), "validation manifest {} is empty", a.val.display());
    let dims = (train_s[0].image.height, train_s[0].image.width);
    if let Some(s) = train_s.iter().chain(&val_s).find(|s| (s.image.height, s.image.width) != dims) {
        bail!("slices differ in size: {:?} vs {:?}", (s.image.height, s.image.width), dims);
    }

    // Statistics cover every training entry, real and synthetic alike.
    let norm = compute_norm_stats(train_s.iter().map(|s| s.image.pixels.as_slice()))?;
    let weights = compute_class_weights(train_s.iter().map(|s| &s.mask), classes)?;
    let unet = UNetConfig {
        n_levels: a.levels.unwrap_or(cfg.unet.n_levels),
        base_filters: a.base_filters.unwrap_or(cfg.unet.base_filters),
        n_classes: classes,
        input_size: dims,
        seed: a.init_seed.unwrap_or(cfg.init_seed()),
    };
    let tcfg = TrainConfig {
        lr: a.lr.unwrap_or(cfg.train.lr),
        batch_size: a.batch_size.unwrap_or(cfg.train.batch_size),
        epochs: a.epochs.unwrap_or(cfg.train.epochs),
        class_weights: weights.clone(),
        seed: a.seed.unwrap_or(cfg.shuffle_seed()),
    };
    let (train_p, val_p) = (prepare(&train_s, &norm), prepare(&val_s, &norm));
    drop((train_s, val_s));
    let outcome = train_with(unet, &tcfg, norm, &train_p, &val_p, |_, _| Ok(()))?;

    let run_dir = ctx.path(&a.run_dir);
    fs::create_dir_all(&run_dir)?;
    let ckpt = run_dir.join("best.ckpt");
    outcome.best.save(&ckpt)?;
    let mut log = String::from("epoch,train_loss,val_error,saved,wall_time_s\n");
    for l in &outcome.log {
        log.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            l.epoch, l.train_loss, l.val_error, l.saved as u8, l.wall_time_s
        ));
    }
    fs::write(run_dir.join("training_log.csv"), log)?;
    write_report(&run_dir.join("norm_stats.json"), &norm)?;
    write_report(&run_dir.join("class_weights.json"), &weights)?;

    let mut inputs: Vec<&Path> = vec![&a.train, &a.val];
    let test = match &a.test {
        Some(t) => {
            inputs.push(t);
            let test_s = load_pairs(&ctx.load_manifest(t)?, &scheme).context("loading test pairs")?;
            Some(evaluate(&outcome.best, &prepare(&test_s, &norm), &weights)?)
        }
        None => None,
    };
    let count = |p: Provenance| train_m.entries.iter().filter(|e| e.provenance == p).count();
    let fraction = a.fraction.unwrap_or(cfg.mix.fraction);
    let report = RunReport {
        command: "train",
        spec: ExperimentSpec {
            class_scheme: classes,
            n_real: count(Provenance::Real),
            n_synth: count(Provenance::Synthetic),
            dataset_fraction: fraction,
            seeds: Seeds {
                data: train_m.seed,
                shuffle: tcfg.seed,
                init: unet.seed,
            },
            unet,
            lr: tcfg.lr,
            batch_size: tcfg.batch_size,
            epochs: tcfg.epochs,
        },
        best_epoch: outcome.best.epoch,
        val_error: outcome.best.val_error,
        test: test.clone(),
        artifacts: [
            ("checkpoint", "best.ckpt"),
            ("training_log", "training_log.csv"),
            ("norm_stats", "norm_stats.json"),
            ("class_weights", "class_weights.json"),
            ("timing", "timing.json"),
        ]
        .into_iter()
        .map(|(k, f)| (k, a.run_dir.join(f).display().to_string()))
        .collect(),
        inputs: hashes(ctx, &inputs)?,
        checkpoint_sha256: sha256_file(&ckpt)?,
    };
    write_report(&run_dir.join("run_report.json"), &report)?;
    let wall = outcome.log.last().map_or(0.0, |l| l.wall_time_s);
    write_report(&run_dir.join("timing.json"), &json!({ "wall_time_s": wall }))?;

    if let Some(t) = &test {
        let results = ctx.path(a.results.as_deref().unwrap_or(Path::new("results.csv")));
        append_row(
            &results,
            &ResultRow {
                run: a.run_dir.display().to_string(),
                fraction,
                n_real: report.spec.n_real,
                n_synth: report.spec.n_synth,
                classes,
                seed: tcfg.seed,
                best_epoch: report.best_epoch,
                val_error: report.val_error,
                test_error_percent: t.dice_error_percent,
            },
        )?;
    }
    Ok(serde_json::to_value(&report)?)
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<Value> {
    let ck = Checkpoint::load(ctx.path(&a.checkpoint))
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let scheme = ClassScheme::for_classes(ck.config.n_classes)?;
    let test_s = load_pairs(&ctx.load_manifest(&a.test)?, &scheme).context("loading test pairs")?;
    let result = evaluate(&ck, &prepare(&test_s, &ck.norm_stats), &ck.class_weights)?;
    let report = json!({
        "command": "eval",
        "classes": ck.config.n_classes,
        "epoch": ck.epoch,
        "val_error": ck.val_error,
        "test": result,
        "inputs": hashes(ctx, &[&a.checkpoint, &a.test])?,
    });
    if let Some(out) = &a.out {
        write_report(&ctx.path(out), &report)?;
    }
    Ok(report)
}

fn cmd_report(ctx: &Ctx, a: &ReportArgs) -> Result<Value> {
    let rows = read_rows(&ctx.path(&a.results))?;
    let report = build_report(&rows)?;
    let table = format_report(&report);
    if let Some(out) = &a.out {
        let p = ctx.path(out);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(p, &table)?;
    }
    Ok(json!({
        "command": "report",
        "n_results": rows.len(),
        "report": report,
        "table": table,
        "inputs": hashes(ctx, &[&a.results])?,
    }))
}
