//! Command-line entry point: phantom generation, augmentation, training,
//! segmentation, quantification, evaluation, and normative-database
//! construction. Flags override config-file values, which override
//! defaults; every artifact-producing run writes a reproducibility
//! manifest into its output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use octaquant::augment::{expand, AugmentPlan};
use octaquant::error::Error;
use octaquant::eval::{accuracy, compare_raters, confusion, dice};
use octaquant::io;
use octaquant::phantom::{generate_dataset, PhantomSpec};
use octaquant::quantify::{
    area_mm2, build_normative_db, mip_um, quantify_mask, sd_map, NormativeDb, Plexus,
    QuantifyConfig,
};
use octaquant::segment::{
    binarize, infer_tiled, otsu, remove_projection_artifacts, remove_small_components,
    PostProcessConfig,
};
use octaquant::training::{
    cross_validate, fine_tune_stage1, fine_tune_stage2, load_labeled_set, mean_dice,
    pseudo_label_expand, save_manifest, train, FramePair, ManifestEntry, SourceTag, TrainConfig,
};
use octaquant::unet::{build, load_weights, save_weights, UnetConfig};
use octaquant::Result;

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_COMPUTE: u8 = 4;

#[derive(Parser)]
#[command(name = "octaquant", version, about = "Angiography vessel segmentation and inter-capillary-area quantification")]
struct Cli {
    /// `key = value` config file; flags override file values, file values
    /// override built-in defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker count for per-image parallelism (1 keeps runs deterministic)
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom cohort with paired frames and truth masks
    Phantom(PhantomArgs),
    /// Expand a labeled dataset with rotations, contrast ops, and strip shuffles
    Augment(AugmentArgs),
    /// Train or fine-tune the segmentation network
    Train(TrainArgs),
    /// Segment images with trained weights and post-process the masks
    Segment(SegmentArgs),
    /// Quantify inter-capillary areas of a mask or an image (via weights)
    Quantify(QuantifyArgs),
    /// Compare a predicted mask against a reference mask
    Eval(EvalArgs),
    /// Normative-database operations
    #[command(subcommand)]
    Normdb(NormdbCommand),
}

#[derive(Subcommand)]
enum NormdbCommand {
    /// Build a normative database from control-cohort masks
    Build(NormdbArgs),
}

/// `key = value` lines; `#` comments and blank lines ignored.
#[derive(Default)]
struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let mut map = BTreeMap::new();
        for (lineno, line) in std::fs::read_to_string(path)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::InvalidArgument(format!(
                    "config line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                )));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(FileConfig(map))
    }

    /// flag > file > default.
    fn resolve<T: FromStr + Clone>(&self, key: &str, flag: &Option<T>, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v.clone());
        }
        match self.0.get(key) {
            Some(raw) => raw.parse().map_err(|_| {
                Error::InvalidArgument(format!("config key {key}: cannot parse {raw:?}"))
            }),
            None => Ok(default),
        }
    }
}

fn write_run_manifest(dir: &Path, lines: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = String::new();
    for (k, v) in lines {
        text.push_str(&format!("{k} = {v}\n"));
    }
    io::write_atomic_str(&dir.join("run-manifest.txt"), &text)
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

#[derive(Args)]
struct PhantomArgs {
    /// Plexus morphology style: SCP or DVC
    #[arg(long)]
    style: Option<Plexus>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    faz_radius: Option<usize>,
    #[arg(long)]
    bands: Option<usize>,
    /// Dropout lesion as `row,col,radius`; repeatable
    #[arg(long = "lesion")]
    lesions: Vec<String>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

fn run_phantom(a: &PhantomArgs, file: &FileConfig) -> Result<()> {
    let style = file.resolve("phantom.style", &a.style, Plexus::Scp)?;
    let height = file.resolve("phantom.height", &a.height, 128)?;
    let width = file.resolve("phantom.width", &a.width, 128)?;
    let count = file.resolve("phantom.count", &a.count, 12)?;
    let seed = file.resolve("phantom.seed", &a.seed, 0)?;
    let mut spec = PhantomSpec::new(style, height, width, seed);
    spec.vessel_density_target = file.resolve("phantom.density", &a.density, spec.vessel_density_target)?;
    spec.speckle_snr = file.resolve("phantom.snr", &a.snr, spec.speckle_snr)?;
    spec.frames_to_average = file.resolve("phantom.frames", &a.frames, spec.frames_to_average)?;
    spec.faz_radius_px = file.resolve("phantom.faz_radius", &a.faz_radius, spec.faz_radius_px)?;
    spec.projection_band_count = file.resolve("phantom.bands", &a.bands, 0)?;
    for raw in &a.lesions {
        let parts: Vec<&str> = raw.split(',').collect();
        let bad = || Error::InvalidArgument(format!("lesion {raw:?}: expected row,col,radius"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        spec.dropout_lesions.push((nums[0], nums[1], nums[2]));
    }

    std::fs::create_dir_all(&a.out)?;
    let cohort = generate_dataset(&spec, count, seed)?;
    let mut entries = Vec::new();
    for (i, item) in cohort.iter().enumerate() {
        let stem = format!("item_{i:03}");
        let single = a.out.join(format!("{stem}_single.pgm"));
        let averaged = a.out.join(format!("{stem}_avg.pgm"));
        let mask = a.out.join(format!("{stem}_mask.pgm"));
        io::save_gray(&single, &item.single)?;
        io::save_gray(&averaged, &item.averaged)?;
        io::save_mask(&mask, &item.truth.vessels)?;
        if item.spec.projection_band_count > 0 {
            io::save_mask(&a.out.join(format!("{stem}_bands.pgm")), &item.truth.projection_bands)?;
        }
        // manifest paths are relative to the manifest's own directory
        entries.push(ManifestEntry {
            image: PathBuf::from(format!("{stem}_single.pgm")),
            mask: PathBuf::from(format!("{stem}_mask.pgm")),
            tag: SourceTag::Manual,
        });
    }
    save_manifest(&a.out.join("manifest.txt"), &entries)?;
    write_run_manifest(
        &a.out,
        &[
            kv("subcommand", "phantom"),
            kv("style", style),
            kv("height", height),
            kv("width", width),
            kv("count", count),
            kv("seed", seed),
            kv("density", spec.vessel_density_target),
            kv("snr", spec.speckle_snr),
            kv("frames", spec.frames_to_average),
            kv("faz_radius", spec.faz_radius_px),
            kv("bands", spec.projection_band_count),
            kv("lesions", a.lesions.join(";")),
        ],
    )?;
    println!("wrote {} phantom items to {}", cohort.len(), a.out.display());
    Ok(())
}

#[derive(Args)]
struct AugmentArgs {
    /// Manifest of (image, mask, tag) lines to expand
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    plain_rotations: Option<usize>,
    #[arg(long)]
    contrast_rotations: Option<usize>,
    #[arg(long)]
    strip_min: Option<usize>,
    #[arg(long)]
    strip_max: Option<usize>,
    /// Also strip-shuffle the contrast-adjusted variants
    #[arg(long, default_value_t = false)]
    shuffle_contrast: bool,
}

fn run_augment(a: &AugmentArgs, file: &FileConfig) -> Result<()> {
    let mut plan = AugmentPlan {
        seed: file.resolve("augment.seed", &a.seed, 0)?,
        plain_rotations: file.resolve("augment.plain_rotations", &a.plain_rotations, 3)?,
        contrast_rotations: file.resolve("augment.contrast_rotations", &a.contrast_rotations, 5)?,
        shuffle_contrast_variants: a.shuffle_contrast,
        ..AugmentPlan::default()
    };
    plan.strip_count_range = (
        file.resolve("augment.strip_min", &a.strip_min, plan.strip_count_range.0)?,
        file.resolve("augment.strip_max", &a.strip_max, plan.strip_count_range.1)?,
    );
    let set = load_labeled_set(&a.manifest)?;
    std::fs::create_dir_all(&a.out)?;
    let mut entries = Vec::new();
    for (i, item) in set.items.iter().enumerate() {
        let mut item_plan = plan.clone();
        item_plan.seed = plan.seed.wrapping_add(i as u64);
        for (j, (img, msk)) in expand(&item.image, &item.mask, &item_plan)?.iter().enumerate() {
            let image = format!("aug_{i:03}_{j:02}.pgm");
            let mask = format!("aug_{i:03}_{j:02}_mask.pgm");
            io::save_gray(&a.out.join(&image), img)?;
            io::save_mask(&a.out.join(&mask), msk)?;
            entries.push(ManifestEntry {
                image: PathBuf::from(image),
                mask: PathBuf::from(mask),
                tag: item.tag,
            });
        }
    }
    save_manifest(&a.out.join("manifest.txt"), &entries)?;
    write_run_manifest(
        &a.out,
        &[
            kv("subcommand", "augment"),
            kv("manifest", a.manifest.display()),
            kv("seed", plan.seed),
            kv("plain_rotations", plan.plain_rotations),
            kv("contrast_rotations", plan.contrast_rotations),
            kv("strip_min", plan.strip_count_range.0),
            kv("strip_max", plan.strip_count_range.1),
            kv("shuffle_contrast", plan.shuffle_contrast_variants),
        ],
    )?;
    println!("expanded {} pairs into {}", set.len(), entries.len());
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Stage {
    Initial,
    Stage1,
    Stage2,
    Cv,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    stage: Stage,
    /// Training manifest; for stage2 this lists (single-frame, averaged)
    /// pairs via the image/mask columns
    #[arg(long)]
    manifest: PathBuf,
    /// Starting weights (omit for `initial` to random-initialize)
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output weight file
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss/Dice CSV
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Split every pair into four quadrant tiles before training
    #[arg(long, default_value_t = false)]
    tile: bool,
    /// Network depth for fresh initialization
    #[arg(long)]
    depth: Option<usize>,
    /// Base channel count for fresh initialization
    #[arg(long)]
    base: Option<usize>,
    /// `lr:epsilon` candidates for cross-validation; repeatable
    #[arg(long = "candidate")]
    candidates: Vec<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// Acceptance gate for stage-2 pseudo-labeling
    #[arg(long)]
    gate: Option<f64>,
}

fn run_train(a: &TrainArgs, file: &FileConfig) -> Result<()> {
    let preset = match a.stage {
        Stage::Initial | Stage::Cv => TrainConfig::initial(),
        Stage::Stage1 | Stage::Stage2 => TrainConfig::fine_tune(),
    };
    let config = TrainConfig {
        epochs: file.resolve("train.epochs", &a.epochs, preset.epochs)?,
        learning_rate: file.resolve("train.lr", &a.lr, preset.learning_rate)?,
        adam_epsilon: file.resolve("train.epsilon", &a.epsilon, preset.adam_epsilon)?,
        batch_size: file.resolve("train.batch", &a.batch, preset.batch_size)?,
        seed: file.resolve("train.seed", &a.seed, preset.seed)?,
        tile_grid: (2, 2),
    };
    let start = match &a.weights {
        Some(p) => load_weights(p)?,
        None => {
            if a.stage != Stage::Initial && a.stage != Stage::Cv {
                return Err(Error::InvalidArgument(
                    "fine-tune stages need --weights from a previous run".into(),
                ));
            }
            let net_config = UnetConfig {
                depth: file.resolve("train.depth", &a.depth, 4)?,
                base_channels: file.resolve("train.base", &a.base, 16)?,
                ..UnetConfig::default()
            };
            build(&net_config, config.seed)?
        }
    };

    let mut set = load_labeled_set(&a.manifest)?;
    if a.tile {
        set = set.tiled_quadrants()?;
    }

    let (final_weights, history) = match a.stage {
        Stage::Initial => train(&start, &set, &config)?,
        Stage::Stage1 => fine_tune_stage1(&start, &set, &config)?,
        Stage::Stage2 => {
            let gate = file.resolve("train.gate", &a.gate, 0.7)?;
            // manifest image column = single frame, mask column = averaged
            // image path for the pseudo-labeling pool
            let pool: Vec<FramePair> = octaquant::training::load_manifest(&a.manifest)?
                .iter()
                .map(|e| {
                    Ok(FramePair {
                        single: io::load_gray(&e.image)?,
                        averaged: io::load_gray(&e.mask)?,
                    })
                })
                .collect::<Result<_>>()?;
            let expanded =
                pseudo_label_expand(&start, &pool, gate, &PostProcessConfig::default())?;
            println!("pseudo-labeling accepted {} of {} pairs", expanded.len(), pool.len());
            if expanded.is_empty() {
                return Err(Error::InvalidArgument(
                    "no pseudo-labeled pairs passed the gate; nothing to train on".into(),
                ));
            }
            fine_tune_stage2(&start, &expanded, &config)?
        }
        Stage::Cv => {
            let mut grid = Vec::new();
            for raw in &a.candidates {
                let bad = || Error::InvalidArgument(format!("candidate {raw:?}: expected lr:epsilon"));
                let (lr, eps) = raw.split_once(':').ok_or_else(bad)?;
                grid.push((
                    lr.trim().parse().map_err(|_| bad())?,
                    eps.trim().parse().map_err(|_| bad())?,
                ));
            }
            if grid.is_empty() {
                return Err(Error::InvalidArgument("cv needs at least one --candidate".into()));
            }
            let folds = file.resolve("train.folds", &a.folds, 3)?;
            let ((lr, eps), table) = cross_validate(&start, &set, &grid, folds, &config)?;
            println!("selected lr={lr} epsilon={eps}");
            for ((clr, ceps), scores) in grid.iter().zip(&table) {
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                println!(
                    "  lr={clr} epsilon={ceps}: folds {} mean {mean:.4}",
                    scores.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>().join(" ")
                );
            }
            let winner = TrainConfig { learning_rate: lr, adam_epsilon: eps, ..config };
            train(&start, &set, &winner)?
        }
    };

    save_weights(&final_weights, &a.out)?;
    if let Some(history_path) = &a.history {
        history.save_csv(history_path)?;
    }
    if let Some(dir) = a.out.parent() {
        write_run_manifest(
            dir,
            &[
                kv("subcommand", "train"),
                kv(
                    "stage",
                    match a.stage {
                        Stage::Initial => "initial",
                        Stage::Stage1 => "stage1",
                        Stage::Stage2 => "stage2",
                        Stage::Cv => "cv",
                    },
                ),
                kv("manifest", a.manifest.display()),
                kv("epochs", config.epochs),
                kv("lr", config.learning_rate),
                kv("epsilon", config.adam_epsilon),
                kv("batch", config.batch_size),
                kv("seed", config.seed),
                kv("tile", a.tile),
            ],
        )?;
    }
    if !set.is_empty() {
        let final_dice = mean_dice(&final_weights, &set, 0.5)?;
        println!("training-set Dice of saved weights: {final_dice:.4}");
    }
    println!("saved weights to {}", a.out.display());
    Ok(())
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Input grayscale image
    #[arg(long = "in")]
    input: PathBuf,
    /// Output mask raster (0/255)
    #[arg(long)]
    out: PathBuf,
    /// Optional probability-map output (8-bit)
    #[arg(long)]
    prob: Option<PathBuf>,
    /// Baseline instead of the network
    #[arg(long, default_value_t = false)]
    otsu: bool,
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long)]
    min_cluster: Option<usize>,
    /// Tile extent (0 = whole image)
    #[arg(long)]
    tile: Option<usize>,
    /// Disk radius for projection-artifact removal (0 disables)
    #[arg(long)]
    artifact_radius: Option<usize>,
    /// Output path for the artifact mask when removal is enabled
    #[arg(long)]
    artifact_out: Option<PathBuf>,
}

fn run_segment(a: &SegmentArgs, file: &FileConfig) -> Result<()> {
    let post = PostProcessConfig::default();
    let threshold = file.resolve("segment.threshold", &a.threshold, post.binarize_threshold)?;
    let min_cluster = file.resolve("segment.min_cluster", &a.min_cluster, post.min_cluster_px)?;
    let tile = file.resolve("segment.tile", &a.tile, 0)?;
    let artifact_radius = file.resolve("segment.artifact_radius", &a.artifact_radius, 0)?;

    let image = io::load_gray(&a.input)?;
    let mask = if a.otsu {
        otsu(&image)
    } else {
        let weights = load_weights(&a.weights)?;
        let (th, tw) = if tile == 0 {
            (image.height(), image.width())
        } else {
            (tile, tile)
        };
        let prob = infer_tiled(&weights, &image, th, tw)?;
        if let Some(prob_path) = &a.prob {
            let bytes: Vec<u8> = prob.data().iter().map(|p| (p * 255.0).round() as u8).collect();
            io::save_gray(prob_path, &octaquant::GrayImage::new(prob.width(), prob.height(), bytes)?)?;
        }
        binarize(&prob, threshold)
    };
    let mask = remove_small_components(&mask, min_cluster, post.connectivity);
    let mask = if artifact_radius > 0 {
        let (cleaned, artifact) = remove_projection_artifacts(&mask, artifact_radius);
        if let Some(artifact_path) = &a.artifact_out {
            io::save_mask(artifact_path, &artifact)?;
        }
        cleaned
    } else {
        mask
    };
    io::save_mask(&a.out, &mask)?;
    if let Some(dir) = a.out.parent() {
        write_run_manifest(
            dir,
            &[
                kv("subcommand", "segment"),
                kv("weights", a.weights.display()),
                kv("input", a.input.display()),
                kv("otsu", a.otsu),
                kv("threshold", threshold),
                kv("min_cluster", min_cluster),
                kv("tile", tile),
                kv("artifact_radius", artifact_radius),
            ],
        )?;
    }
    println!("wrote mask {} (density {:.4})", a.out.display(), mask.density());
    Ok(())
}

#[derive(Args)]
struct QuantifyArgs {
    /// Pre-segmented mask input; alternative to --in + --weights
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Grayscale image to segment first
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Report CSV output
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    plexus: Option<Plexus>,
    #[arg(long)]
    px_per_mm: Option<f64>,
    /// Normative database for SD-map coloring
    #[arg(long)]
    normdb: Option<PathBuf>,
    /// RGB overlay output (requires --normdb and an input image)
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[arg(long)]
    artifact_radius: Option<usize>,
}

fn run_quantify(a: &QuantifyArgs, file: &FileConfig) -> Result<()> {
    let mut qc = QuantifyConfig::default();
    qc.plexus = file.resolve("quantify.plexus", &a.plexus, qc.plexus)?;
    qc.px_per_mm = file.resolve("quantify.px_per_mm", &a.px_per_mm, qc.px_per_mm)?;
    let artifact_radius = file.resolve("quantify.artifact_radius", &a.artifact_radius, 0)?;

    let (mask, image, image_id) = match (&a.mask, &a.input) {
        (Some(mask_path), _) => {
            let mask = io::load_mask(mask_path)?;
            let image = a.input.as_ref().map(|p| io::load_gray(p)).transpose()?;
            (mask, image, mask_path.display().to_string())
        }
        (None, Some(input)) => {
            let weights_path = a.weights.as_ref().ok_or_else(|| {
                Error::InvalidArgument("--in needs --weights to segment first".into())
            })?;
            let weights = load_weights(weights_path)?;
            let image = io::load_gray(input)?;
            let prob = infer_tiled(&weights, &image, image.height(), image.width())?;
            let post = PostProcessConfig::default();
            let mask = remove_small_components(
                &binarize(&prob, post.binarize_threshold),
                post.min_cluster_px,
                post.connectivity,
            );
            (mask, Some(image), input.display().to_string())
        }
        (None, None) => {
            return Err(Error::InvalidArgument("need --mask or --in".into()));
        }
    };
    let (mask, artifact) = if artifact_radius > 0 {
        let (cleaned, artifact) = remove_projection_artifacts(&mask, artifact_radius);
        (cleaned, Some(artifact))
    } else {
        (mask, None)
    };
    let report = quantify_mask(&image_id, &mask, artifact.as_ref(), &qc)?;

    let db = a.normdb.as_ref().map(|p| NormativeDb::load(p)).transpose()?;
    let mut rows = Vec::new();
    for r in &report.regions {
        // z-scores only exist with a normative database, and only for
        // non-FAZ areas inside the grid
        let stats = db.as_ref().and_then(|db| {
            if r.label == report.faz_label {
                return None;
            }
            db.stats.get(&(qc.plexus, r.etdrs_region))
        });
        let (z_area, z_mip, bin) = match stats {
            Some(s) => {
                let za = if s.sd_area > 0.0 { (r.pixel_count as f64 - s.mean_area) / s.sd_area } else { 0.0 };
                let zm = if s.sd_mip > 0.0 { (r.mip_value - s.mean_mip) / s.sd_mip } else { 0.0 };
                (
                    format!("{za:.4}"),
                    format!("{zm:.4}"),
                    octaquant::quantify::SdBin::from_z(za.max(zm)).name().to_string(),
                )
            }
            None => (String::new(), String::new(), String::new()),
        };
        rows.push(vec![
            r.label.to_string(),
            r.etdrs_region.name().to_string(),
            r.pixel_count.to_string(),
            format!("{:.6}", area_mm2(r.pixel_count, qc.px_per_mm)),
            format!("{:.4}", r.mip_value),
            format!("{:.2}", mip_um(r.mip_value, qc.px_per_mm)),
            z_area,
            z_mip,
            bin,
        ]);
    }
    io::save_csv(
        &a.out,
        "ica_id,region,area_px,area_mm2,mip_px,mip_um,z_area,z_mip,bin",
        &rows,
    )?;
    let density_rows: Vec<Vec<String>> = report
        .densities
        .iter()
        .map(|(region, d)| vec![region.name().to_string(), format!("{d:.6}")])
        .collect();
    let density_path = a.out.with_extension("density.csv");
    io::save_csv(&density_path, "region,vessel_density", &density_rows)?;

    if let (Some(db), Some(overlay_path)) = (&db, &a.overlay) {
        let image = image.ok_or_else(|| {
            Error::InvalidArgument("SD-map overlay needs the source image via --in".into())
        })?;
        let map = sd_map(&report, db, &image)?;
        io::save_rgb(overlay_path, map.width, map.height, &map.overlay)?;
    }
    if let Some(dir) = a.out.parent() {
        write_run_manifest(
            dir,
            &[
                kv("subcommand", "quantify"),
                kv("input", image_id.clone()),
                kv("plexus", qc.plexus),
                kv("px_per_mm", qc.px_per_mm),
                kv("artifact_radius", artifact_radius),
            ],
        )?;
    }
    println!(
        "quantified {} inter-capillary areas ({} FAZ label) into {}",
        report.regions.len(),
        report.faz_label,
        a.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Optional CSV output; otherwise printed only
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let pred = io::load_mask(&a.pred)?;
    let reference = io::load_mask(&a.reference)?;
    let counts = confusion(&pred, &reference)?;
    let (acc, dsc) = (accuracy(&counts), dice(&counts));
    let (sym_acc, sym_dice) = compare_raters(&pred, &reference)?;
    debug_assert_eq!((acc, dsc), (sym_acc, sym_dice));
    println!("accuracy {acc:.6}  dice {dsc:.6}");
    if let Some(out) = &a.out {
        io::save_csv(
            out,
            "pred,reference,accuracy,dice,tp,fp,fn,tn",
            &[vec![
                a.pred.display().to_string(),
                a.reference.display().to_string(),
                format!("{acc:.6}"),
                format!("{dsc:.6}"),
                counts.tp.to_string(),
                counts.fp.to_string(),
                counts.fn_.to_string(),
                counts.tn.to_string(),
            ]],
        )?;
    }
    Ok(())
}

#[derive(Args)]
struct NormdbArgs {
    /// Manifest of control masks (mask column used; image column may repeat it)
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    plexus: Option<Plexus>,
    #[arg(long)]
    px_per_mm: Option<f64>,
}

fn run_normdb(a: &NormdbArgs, file: &FileConfig) -> Result<()> {
    let mut qc = QuantifyConfig::default();
    qc.plexus = file.resolve("quantify.plexus", &a.plexus, qc.plexus)?;
    qc.px_per_mm = file.resolve("quantify.px_per_mm", &a.px_per_mm, qc.px_per_mm)?;
    let entries = octaquant::training::load_manifest(&a.manifest)?;
    let mut reports = Vec::new();
    for e in &entries {
        let mask = io::load_mask(&e.mask)?;
        reports.push(quantify_mask(&e.mask.display().to_string(), &mask, None, &qc)?);
    }
    let db = build_normative_db(&reports)?;
    db.save(&a.out)?;
    if let Some(dir) = a.out.parent() {
        write_run_manifest(
            dir,
            &[
                kv("subcommand", "normdb"),
                kv("manifest", a.manifest.display()),
                kv("plexus", qc.plexus),
                kv("px_per_mm", qc.px_per_mm),
                kv("cohort_size", entries.len()),
            ],
        )?;
    }
    println!("built normative database from {} masks: {}", entries.len(), a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if cli.jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
    }
    match &cli.command {
        Command::Phantom(a) => run_phantom(a, &file),
        Command::Augment(a) => run_augment(a, &file),
        Command::Train(a) => run_train(a, &file),
        Command::Segment(a) => run_segment(a, &file),
        Command::Quantify(a) => run_quantify(a, &file),
        Command::Eval(a) => run_eval(a),
        Command::Normdb(NormdbCommand::Build(a)) => run_normdb(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                Error::Io(_) | Error::Image(_) => EXIT_IO,
                _ => EXIT_COMPUTE,
            })
        }
    }
}
