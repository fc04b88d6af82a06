//! `svf-atlas` command-line front end.
//!
//! Exit status: 0 on success, 1 on runtime, numeric or I/O failure, 2 on usage
//! or configuration errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use svf_atlas::eval::EVAL_HEADER;
use svf_atlas::io::{self, ManifestEntry};
use svf_atlas::optim::{EpochLog, LOG_HEADER};
use svf_atlas::{Cohort, Error, RunConfig};

#[derive(Parser)]
#[command(name = "svf-atlas", version, about = "Groupwise diffeomorphic atlas building")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with ground-truth maps.
    Synth {
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Build an atlas from the images listed in a manifest.
    BuildAtlas {
        manifest: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Register one image to a fixed atlas.
    Register {
        atlas: PathBuf,
        image: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Score maps against the manifest's segmentations and write eval.csv.
    Evaluate {
        manifest: PathBuf,
        maps_dir: PathBuf,
        /// Output CSV, `<maps_dir>/eval.csv` by default.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also report pairwise Dice in atlas space.
        #[arg(long)]
        pairwise_atlas: bool,
        /// Also report image-space Dice against an atlas segmentation.
        #[arg(long)]
        image_space: bool,
        /// Atlas segmentation for the image-space measure; voted from the cohort if absent.
        #[arg(long, value_name = "PATH")]
        atlas_seg: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Numerically invert a deformation map.
    Invert {
        map: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
}

fn load_config(arg: &ConfigArg) -> svf_atlas::Result<RunConfig> {
    match &arg.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn config_of(cmd: &Command) -> &ConfigArg {
    match cmd {
        Command::Synth { cfg, .. }
        | Command::BuildAtlas { cfg, .. }
        | Command::Register { cfg, .. }
        | Command::Evaluate { cfg, .. }
        | Command::Invert { cfg, .. } => cfg,
    }
}

fn ensure_dir(dir: &Path) -> svf_atlas::Result<()> {
    if !dir.is_dir() {
        fs::create_dir(dir)
            .map_err(|e| std::io::Error::new(e.kind(), format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(())
}

fn write_log(path: &Path, log: &[EpochLog]) -> svf_atlas::Result<()> {
    let rows: Vec<String> = log.iter().map(EpochLog::csv_row).collect();
    io::write_csv(path, LOG_HEADER, &rows)
}

fn synth(out: &Path, cfg: &RunConfig) -> svf_atlas::Result<()> {
    cfg.synth.validate()?;
    ensure_dir(out)?;
    let s = svf_atlas::generate::<f64>(&cfg.synth)?;
    let labels = s.cohort.labels().expect("synthetic cohorts carry labels");
    let mut entries = Vec::new();
    for (i, img) in s.cohort.images().iter().enumerate() {
        let (im, seg) = (format!("img_{i}.afraw"), format!("seg_{i}.afraw"));
        io::write_scalar(&out.join(&im), img)?;
        io::write_labels(&out.join(&seg), &labels[i])?;
        io::write_map(&out.join(format!("phi_fwd_{i}.afraw")), &s.forward[i])?;
        io::write_map(&out.join(format!("phi_inv_{i}.afraw")), &s.inverse[i])?;
        entries.push(ManifestEntry {
            image: im.into(),
            labels: Some(seg.into()),
        });
    }
    io::write_manifest(&out.join("manifest.txt"), &entries)?;
    println!("wrote {} members to {}", entries.len(), out.display());
    Ok(())
}

fn load_cohort(manifest: &Path, need_labels: bool) -> svf_atlas::Result<Cohort<f64>> {
    let entries = io::read_manifest(manifest)?;
    let missing: Vec<String> = entries
        .iter()
        .flat_map(|e| {
            let mut paths = vec![Some(e.image.clone())];
            if need_labels {
                paths.push(e.labels.clone());
            }
            paths
        })
        .enumerate()
        .filter_map(|(k, p)| match p {
            Some(p) if p.is_file() => None,
            Some(p) => Some(p.display().to_string()),
            None => Some(format!("labels of member {}", k / 2)),
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!("missing inputs: {}", missing.join(", "))));
    }
    let images = entries
        .iter()
        .map(|e| io::read_scalar::<f64>(&e.image))
        .collect::<svf_atlas::Result<Vec<_>>>()?;
    if let Some(first) = images.first() {
        let odd: Vec<String> = entries
            .iter()
            .zip(&images)
            .filter(|(_, im)| im.shape().dims() != first.shape().dims())
            .map(|(e, im)| format!("{} {:?}", e.image.display(), im.shape().dims()))
            .collect();
        if !odd.is_empty() {
            return Err(Error::Validation(format!(
                "members differ from {} {:?}: {}",
                entries[0].image.display(),
                first.shape().dims(),
                odd.join(", ")
            )));
        }
    }
    let labels = if entries.iter().all(|e| e.labels.is_some()) {
        Some(
            entries
                .iter()
                .map(|e| io::read_labels(e.labels.as_ref().unwrap()))
                .collect::<svf_atlas::Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Cohort::new(images, labels)
}

fn build_atlas(manifest: &Path, out: &Path, cfg: &RunConfig) -> svf_atlas::Result<()> {
    cfg.optim.validate()?;
    let cohort = load_cohort(manifest, false)?;
    ensure_dir(out)?;
    let r = svf_atlas::run_atlas_build(&cohort, &cfg.optim)?;
    io::write_scalar(&out.join("atlas.afraw"), &r.state.atlas)?;
    io::export_pgm(&r.state.atlas, &out.join("atlas.pgm"))?;
    for (i, v) in r.state.velocities.iter().enumerate() {
        io::write_vector(&out.join(format!("v_{i}.afraw")), v)?;
        io::write_map(&out.join(format!("phi_fwd_{i}.afraw")), &r.forward_maps[i])?;
        io::write_map(&out.join(format!("phi_inv_{i}.afraw")), &r.inverse_maps[i])?;
    }
    for (epoch, atlas) in &r.snapshots {
        io::export_pgm(atlas, &out.join(format!("atlas_epoch{epoch}.pgm")))?;
    }
    write_log(&out.join("train_log.csv"), &r.log)?;
    if let Some(last) = r.log.last() {
        println!("epoch {} total {}", last.epoch, last.total);
    }
    Ok(())
}

fn register(atlas: &Path, image: &Path, out: &Path, cfg: &RunConfig) -> svf_atlas::Result<()> {
    let a = io::read_scalar::<f64>(atlas)?;
    let im = io::read_scalar::<f64>(image)?;
    ensure_dir(out)?;
    let r = svf_atlas::register(&a, &im, &cfg.optim)?;
    io::write_vector(&out.join("v.afraw"), &r.velocity)?;
    io::write_map(&out.join("phi_fwd.afraw"), &r.forward)?;
    io::write_map(&out.join("phi_inv.afraw"), &r.inverse)?;
    write_log(&out.join("train_log.csv"), &r.log)?;
    if let Some(last) = r.log.last() {
        println!("epoch {} total {}", last.epoch, last.total);
    }
    Ok(())
}

fn evaluate(
    manifest: &Path,
    maps_dir: &Path,
    out: &Path,
    options: svf_atlas::EvalOptions,
    atlas_seg: Option<&Path>,
) -> svf_atlas::Result<()> {
    let cohort = load_cohort(manifest, true)?;
    let n = cohort.len();
    let names: Vec<(PathBuf, PathBuf)> = (0..n)
        .map(|i| {
            (
                maps_dir.join(format!("phi_fwd_{i}.afraw")),
                maps_dir.join(format!("phi_inv_{i}.afraw")),
            )
        })
        .collect();
    let missing: Vec<String> = names
        .iter()
        .flat_map(|(f, b)| [f, b])
        .chain(atlas_seg.map(Path::new).map(|p| p.to_path_buf()).as_ref())
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!("missing inputs: {}", missing.join(", "))));
    }
    let mut fwd = Vec::with_capacity(n);
    let mut inv = Vec::with_capacity(n);
    for (f, b) in &names {
        fwd.push(io::read_map::<f64>(f)?);
        inv.push(io::read_map::<f64>(b)?);
    }
    let seg = atlas_seg.map(io::read_labels).transpose()?;
    let labels = cohort.labels().expect("labels checked above");
    let report = svf_atlas::evaluate(labels, &fwd, &inv, seg.as_ref(), options)?;
    let csv = report.to_csv();
    debug_assert!(csv.starts_with(EVAL_HEADER));
    fs::write(out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn invert(map: &Path, out: &Path, cfg: &RunConfig) -> svf_atlas::Result<()> {
    let m = io::read_map::<f64>(map)?;
    let r = svf_atlas::numeric_inverse(&m, &cfg.inverse)?;
    io::write_map(out, &r.map)?;
    println!("residual {}", r.residual);
    Ok(())
}

fn run(cli: Cli) -> svf_atlas::Result<()> {
    let cfg = load_config(config_of(&cli.command))?;
    if cfg.optim.threads > 0 {
        // only fails if a pool already exists, in which case it is kept
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.optim.threads)
            .build_global();
    }
    match &cli.command {
        Command::Synth { out_dir, .. } => synth(out_dir, &cfg),
        Command::BuildAtlas { manifest, out_dir, .. } => build_atlas(manifest, out_dir, &cfg),
        Command::Register {
            atlas, image, out_dir, ..
        } => register(atlas, image, out_dir, &cfg),
        Command::Evaluate {
            manifest,
            maps_dir,
            out,
            pairwise_atlas,
            image_space,
            atlas_seg,
            ..
        } => {
            let options = svf_atlas::EvalOptions {
                pairwise_atlas: *pairwise_atlas || cfg.eval.pairwise_atlas,
                image_space: *image_space || cfg.eval.image_space || atlas_seg.is_some(),
            };
            let out = out.clone().unwrap_or_else(|| maps_dir.join("eval.csv"));
            evaluate(manifest, maps_dir, &out, options, atlas_seg.as_deref())
        }
        Command::Invert { map, out, .. } => invert(map, out, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
