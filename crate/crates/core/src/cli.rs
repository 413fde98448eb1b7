//! Command-line front end. Every subcommand reads and writes the on-disk
//! formats of [`crate::io`]; a dataset directory holds `images/`,
//! `heights/`, `labels/` and `boundaries/` with matching file stems.

use crate::boundary::{make_boundary_target, BetaMode, BoundaryParams};
use crate::config::{read_config, Config};
use crate::error::{Error, Result};
use crate::graph::{load_weights, save_weights};
use crate::io::{
    read_label_png, read_score_map, write_boundary_preview, write_boundary_target, write_label_png, write_score_map,
};
use crate::metrics::{confusion, default_class_names, overall_accuracy, per_class_prf, report, to_csv, ConfusionMatrix};
use crate::synth::{list_ids, load_dataset, load_sample, synth_generate, ClassMix};
use crate::tiling::{argmax_labels, ensemble_average, predict_raster, TileConfig};
use crate::train::{staged_pipeline, write_trace};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// Thread count of the worker pool; all cores when unset.
pub const THREADS_ENV: &str = "EDGESEG_THREADS";

/// Exit status when a requested accuracy threshold is missed.
pub const EXIT_THRESHOLD: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "edgeseg", version, about = "Boundary-aware semantic segmentation of aerial rasters")]
#[command(after_help = "Environment: EDGESEG_THREADS sets the number of worker threads (default: all cores).")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by all subcommands. Command-line values override the
/// configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Configuration file with [arch], [train], [augment] and [data] tables.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Tile edge in pixels [default: 256].
    #[arg(long, global = true)]
    pub tile: Option<usize>,
    /// Tile strides, comma separated [default: 150,200,220].
    #[arg(long, global = true, value_delimiter = ',')]
    pub strides: Option<Vec<usize>>,
    /// Boundary band radius in pixels [default: 3].
    #[arg(long, global = true)]
    pub radius: Option<usize>,
    /// Distance truncation in pixels [default: radius + 1].
    #[arg(long, global = true)]
    pub truncation: Option<f64>,
    /// Seed of data generation and training [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Scene edge in pixels (at least 64).
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// Compute boundary targets for label PNGs.
    Boundaries {
        /// A label PNG or a directory of them.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        num_classes: usize,
        /// β from the band size instead of the raster size.
        #[arg(long)]
        beta_over_band: bool,
        /// Also write `<stem>_preview.png`.
        #[arg(long)]
        preview: bool,
    },
    /// Run the staged training schedule on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Receives model.toml, model.edgw, one weight file per stage and trace.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict every scene of a dataset with a trained model.
    Infer {
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Receives `<id>.scor` score maps and `<id>.png` label maps.
        #[arg(long)]
        out: PathBuf,
    },
    /// Average the score maps of several models.
    Ensemble {
        /// Directories of `.scor` files with matching names.
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted and reference label PNGs.
    Eval {
        /// A label PNG or a directory of them.
        #[arg(long)]
        pred: PathBuf,
        /// A label PNG or a directory with the same file names.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 5)]
        num_classes: usize,
        /// Also write counts and metrics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Fail unless overall accuracy (percent) reaches this value.
        #[arg(long)]
        min_oa: Option<f64>,
        /// Fail unless a class F1 (percent) reaches a value, as `CLASS=VALUE`.
        #[arg(long, value_parser = parse_class_threshold)]
        min_f1: Vec<(usize, f64)>,
    },
}

fn parse_class_threshold(s: &str) -> std::result::Result<(usize, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected CLASS=VALUE, got `{s}`"))?;
    let k = k.trim().parse().map_err(|_| format!("bad class id `{k}`"))?;
    let v = v.trim().parse().map_err(|_| format!("bad threshold `{v}`"))?;
    Ok((k, v))
}

impl Common {
    /// Configuration file (or defaults) with the command-line overrides.
    pub fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => read_config(p)?,
            None => Config::default(),
        };
        if let Some(t) = self.tile {
            cfg.data.tile = t;
        }
        if let Some(s) = &self.strides {
            cfg.data.strides = s.clone();
        }
        if let Some(r) = self.radius {
            cfg.data.radius = r;
        }
        if self.truncation.is_some() {
            cfg.data.truncation = self.truncation;
        }
        if let Some(seed) = self.seed {
            cfg.reseed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sets up the worker pool and runs one command. Returns the process exit
/// status.
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = std::env::var(THREADS_ENV).ok().filter(|v| !v.is_empty()) {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a thread count, got `{n}`")))?;
        // A pool installed earlier in the same process is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = cli.common.resolve()?;
    match cli.command {
        Command::Synth { out, count, size } => {
            let seed = cli.common.seed.unwrap_or(0);
            let ids = synth_generate(&out, count, size, &ClassMix::default(), seed, &cfg.data.boundary_params())?;
            println!("wrote {} scenes to {}", ids.len(), out.display());
            Ok(0)
        }
        Command::Boundaries {
            labels,
            out,
            num_classes,
            beta_over_band,
            preview,
        } => {
            let mut params = cfg.data.boundary_params();
            if beta_over_band {
                params.beta_mode = BetaMode::BackgroundOverBand;
            }
            boundaries(&labels, &out, num_classes, cfg.data.ignore_label, &params, preview)?;
            Ok(0)
        }
        Command::Train { data, out } => {
            train(&cfg, &data, &out)?;
            Ok(0)
        }
        Command::Infer { model, data, out } => {
            infer(&cli.common, &model, &data, &out)?;
            Ok(0)
        }
        Command::Ensemble { inputs, out } => {
            ensemble(&inputs, &out)?;
            Ok(0)
        }
        Command::Eval {
            pred,
            reference,
            num_classes,
            csv,
            min_oa,
            min_f1,
        } => {
            let cm = evaluate(&pred, &reference, num_classes, cfg.data.ignore_label)?;
            let names = default_class_names(num_classes);
            print!("{}", report(&cm, &names));
            if let Some(p) = csv {
                crate::graph::write_file(&p, to_csv(&cm, &names).as_bytes())?;
            }
            let failures = threshold_failures(&cm, min_oa, &min_f1);
            for f in &failures {
                println!("FAILED: {f}");
            }
            Ok(if failures.is_empty() { 0 } else { EXIT_THRESHOLD })
        }
    }
}

/// Files with `ext` in a directory (sorted), or the path itself.
fn inputs_of(path: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no .{ext} files", path.display())));
    }
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn boundaries(
    labels: &Path,
    out: &Path,
    num_classes: usize,
    ignore: u8,
    params: &BoundaryParams,
    preview: bool,
) -> Result<()> {
    let files = inputs_of(labels, "png")?;
    let lines = files
        .par_iter()
        .map(|f| {
            let map = read_label_png(f, num_classes, Some(ignore))?;
            let t = make_boundary_target(&map, params)?;
            let id = stem(f);
            write_boundary_target(&out.join(format!("{id}.btgt")), &t)?;
            if preview {
                write_boundary_preview(&out.join(format!("{id}_preview.png")), &t)?;
            }
            Ok(if t.boundary_free {
                format!("{id}: boundary-free")
            } else {
                format!("{id}: beta {:.4}", t.beta)
            })
        })
        .collect::<Result<Vec<String>>>()?;
    for l in lines {
        println!("{l}");
    }
    Ok(())
}

pub fn train(cfg: &Config, data: &Path, out: &Path) -> Result<()> {
    let samples: Vec<_> = load_dataset(data, cfg.arch.num_classes, &cfg.data.boundary_params())?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let outcome = staged_pipeline(&samples, &cfg.arch, &cfg.train, &cfg.augment, Some(out))?;
    crate::graph::write_file(&out.join("model.toml"), cfg.to_toml()?.as_bytes())?;
    save_weights(&outcome.graph, &out.join("model.edgw"))?;
    write_trace(&out.join("trace.csv"), &outcome.trace)?;
    println!(
        "trained {} iterations; final loss {:.4}; model in {}",
        outcome.trace.len(),
        outcome.trace.last().map_or(f64::NAN, |r| r.loss),
        out.display()
    );
    Ok(())
}

pub fn infer(common: &Common, model: &Path, data: &Path, out: &Path) -> Result<()> {
    let mut cfg = read_config(&model.join("model.toml"))?;
    if let Some(t) = common.tile {
        cfg.data.tile = t;
    }
    if let Some(s) = &common.strides {
        cfg.data.strides = s.clone();
    }
    cfg.validate()?;
    let mut graph = cfg.arch.build()?;
    load_weights(&mut graph, &model.join("model.edgw"))?;
    let tiles = TileConfig {
        tile: cfg.data.tile,
        strides: cfg.data.strides.clone(),
    };
    let ids = list_ids(data)?;
    let params = cfg.data.boundary_params();
    ids.par_iter()
        .map_init(
            || graph.clone(),
            |g, id| {
                let s = load_sample(data, id, cfg.arch.num_classes, &params)?;
                let scores = predict_raster(g, &s.image, &s.height, &tiles)?;
                write_score_map(&out.join(format!("{id}.scor")), &scores)?;
                write_label_png(&out.join(format!("{id}.png")), &argmax_labels(&scores))
            },
        )
        .collect::<Result<Vec<()>>>()?;
    println!("predicted {} rasters into {}", ids.len(), out.display());
    Ok(())
}

pub fn ensemble(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Config("ensemble needs at least one input".into()))?;
    let files = inputs_of(first, "scor")?;
    for f in &files {
        let name = f.file_name().expect("listed files have names");
        let maps = inputs
            .iter()
            .map(|d| read_score_map(&if d.is_dir() { d.join(name) } else { d.clone() }))
            .collect::<Result<Vec<_>>>()?;
        let avg = ensemble_average(&maps)?;
        let id = stem(f);
        write_score_map(&out.join(format!("{id}.scor")), &avg)?;
        write_label_png(&out.join(format!("{id}.png")), &argmax_labels(&avg))?;
    }
    println!("averaged {} models over {} rasters into {}", inputs.len(), files.len(), out.display());
    Ok(())
}

pub fn evaluate(pred: &Path, reference: &Path, num_classes: usize, ignore: u8) -> Result<ConfusionMatrix> {
    let mut total = ConfusionMatrix::new(num_classes);
    for p in inputs_of(pred, "png")? {
        let r = if reference.is_dir() {
            reference.join(p.file_name().expect("listed files have names"))
        } else {
            reference.to_path_buf()
        };
        let pm = read_label_png(&p, num_classes, Some(ignore))?;
        let rm = read_label_png(&r, num_classes, Some(ignore))?;
        total.merge(&confusion(&pm, &rm, Some(ignore))?)?;
    }
    Ok(total)
}

/// Human-readable descriptions of the missed thresholds (percent values).
pub fn threshold_failures(cm: &ConfusionMatrix, min_oa: Option<f64>, min_f1: &[(usize, f64)]) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(t) = min_oa {
        let oa = overall_accuracy(cm).map_or(0.0, |v| 100.0 * v);
        if oa < t {
            out.push(format!("OA {oa:.2}% < {t}%"));
        }
    }
    let prf = per_class_prf(cm);
    for &(k, t) in min_f1 {
        let f1 = prf.get(k).and_then(|m| m.f1).map_or(0.0, |v| 100.0 * v);
        if f1 < t {
            out.push(format!("class {k} F1 {f1:.2}% < {t}%"));
        }
    }
    out
}
