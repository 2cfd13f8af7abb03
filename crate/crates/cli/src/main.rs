//! `micl`: generate synthetic data, run the curriculum, evaluate boxes and
//! dump saliency planes.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or input error.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use micl_core::ablation::run_ablation;
use micl_core::config::RunConfig;
use micl_core::curriculum::{
    micl_run_from, round_zero, segment_image, top_detections, PreparedDataset,
};
use micl_core::evaluation::{
    average_precision_indexed, corloc_indexed, mean_average_precision, ErrorHistogram,
    GroundTruthIndex, LocPrediction, ScoredDetection,
};
use micl_core::io::{
    metrics_csv, pgm_bytes, read_dataset, read_model, write_dataset, write_mask_pgm, write_model,
    write_saliency_pgm,
};
use micl_core::segmenter::{RegionGrowConfig, RegionGrower};
use micl_core::synthdata::generate;
use micl_core::Label;

/// Marks an error caused by the user's input rather than by the pipeline.
#[derive(Debug)]
struct InputError(String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_err(msg: impl Into<String>) -> InputError {
    InputError(msg.into())
}

#[derive(Parser)]
#[command(
    name = "micl",
    version,
    about = "Multiple instance curriculum learning for weakly supervised detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate(Common),
    /// Run the curriculum on a dataset.
    Run(Common),
    /// Score predicted boxes against a dataset's ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// JSON list of {image_id, category, bbox, score}.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Write saliency, seed and mask images of one dataset image as PGM.
    SaliencyDump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image_id: u64,
    },
    /// Compare the detector-only, segmenter-only, random-order and curriculum
    /// variants on freshly generated datasets, one per seed.
    Ablation {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

#[derive(Args)]
struct Common {
    /// key = value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long = "threshold-T")]
    threshold_t: Option<f64>,
    #[arg(long, value_parser = ["voc07", "area"])]
    ap_variant: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Any config key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| input_err(format!("cannot read config {}", p.display())))?;
                RunConfig::from_text(&text)
                    .map_err(|e| input_err(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        let mut set = |k: &str, v: String| cfg.set(k, &v).map_err(|e| input_err(e.to_string()));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| input_err(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            set(k.trim(), v.to_string())?;
        }
        let path = |p: &PathBuf| p.to_string_lossy().into_owned();
        if let Some(p) = &self.dataset {
            set("dataset", path(p))?;
        }
        if let Some(p) = &self.out {
            set("out", path(p))?;
        }
        if let Some(v) = self.seed {
            set("seed", v.to_string())?;
        }
        if let Some(v) = self.max_rounds {
            set("max_rounds", v.to_string())?;
        }
        if let Some(v) = self.threshold_t {
            set("threshold_t", v.to_string())?;
        }
        if let Some(v) = &self.ap_variant {
            set("ap_variant", v.clone())?;
        }
        if let Some(v) = self.workers {
            set("workers", v.to_string())?;
        }
        cfg.validate().map_err(|e| input_err(e.to_string()))?;
        if let Some(n) = cfg.workers {
            // Fails only if a pool already exists, which is harmless.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        Ok(cfg)
    }
}

fn dataset_path(cfg: &RunConfig) -> Result<&Path> {
    let p = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| input_err("no dataset given (use --dataset or the dataset key)"))?;
    if !p.is_file() {
        return Err(input_err(format!("dataset {} does not exist", p.display())).into());
    }
    Ok(p)
}

fn load_dataset(cfg: &RunConfig) -> Result<micl_core::synthdata::Dataset> {
    let p = dataset_path(cfg)?;
    read_dataset(p).map_err(|e| input_err(format!("{}: {e}", p.display())).into())
}

fn create_out(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn segmenter() -> RegionGrower {
    RegionGrower::new(RegionGrowConfig::default())
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let dataset = generate(&cfg.generator())?;
    let path = match &cfg.dataset {
        Some(p) => p.clone(),
        None => create_out(cfg)?.join("dataset.json"),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_dataset(&path, &dataset)?;
    info!(
        "wrote {} images to {}",
        dataset.images.len(),
        path.display()
    );
    println!("{}", path.display());
    Ok(())
}

fn cmd_run(cfg: &RunConfig) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let ccfg = cfg.curriculum();
    let data = PreparedDataset::new(&dataset, ccfg.pipeline.pooled_size)?;
    if data.is_empty() {
        bail!(input_err("dataset has no labeled images"));
    }
    let seg = segmenter();
    let zero = round_zero(&data, &seg, &ccfg)?;
    let initial = zero.model.clone();
    let outcome = micl_run_from(&data, zero, &seg, &ccfg)?;

    let out = create_out(cfg)?;
    fs::write(out.join("metrics.csv"), metrics_csv(&outcome.metrics))?;
    write_model(&out.join("initial_model.json"), &initial)?;
    write_model(&out.join("model.json"), &outcome.model)?;
    let rounds = out.join("rounds");
    fs::create_dir_all(&rounds)?;
    for s in &outcome.states {
        fs::write(
            rounds.join(format!("round_{}.json", s.round)),
            serde_json::to_string_pretty(s)?,
        )?;
    }
    let detections = top_detections(&data, &outcome.model)?;
    fs::write(
        out.join("predictions.json"),
        serde_json::to_string(&detections)?,
    )?;
    let last = outcome.metrics.last().expect("round 0 metrics");
    println!(
        "rounds {} retrainings {} selected {}/{} CorLoc {:.1}",
        last.round,
        outcome.retrainings,
        last.n_selected,
        outcome.final_state().records.len(),
        last.corloc_all
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, predictions: &Path) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let text = fs::read_to_string(predictions)
        .with_context(|| input_err(format!("cannot read predictions {}", predictions.display())))?;
    let detections: Vec<ScoredDetection> = serde_json::from_str(&text)
        .map_err(|e| input_err(format!("{}: {e}", predictions.display())))?;
    let gt_objects = dataset.ground_truth();
    let gt = GroundTruthIndex::new(&gt_objects);

    // Most confident box per (image, category).
    let mut best: BTreeMap<(u64, usize), &ScoredDetection> = BTreeMap::new();
    for d in &detections {
        let slot = best.entry((d.image_id, d.category)).or_insert(d);
        if d.score > slot.score {
            *slot = d;
        }
    }
    let mut per_cat: Vec<Vec<LocPrediction>> = vec![Vec::new(); dataset.n_categories];
    for s in &dataset.images {
        for &c in &s.labels {
            per_cat[c].push(LocPrediction {
                image_id: s.id,
                category: c,
                bbox: best.get(&(s.id, c)).map(|d| d.bbox),
            });
        }
    }

    let out = create_out(cfg)?;
    let mut w = csv::Writer::from_path(out.join("evaluation.csv"))?;
    w.write_record(["category", "n_examples", "corloc", "ap"])?;
    let mut aps = Vec::new();
    for (c, preds) in per_cat.iter().enumerate() {
        let corloc = if preds.is_empty() {
            f64::NAN
        } else {
            corloc_indexed(preds, &gt)?
        };
        let ap = average_precision_indexed(&detections, &gt, c, cfg.ap_variant);
        aps.push(ap);
        w.write_record([
            c.to_string(),
            preds.len().to_string(),
            fmt_f64(corloc),
            fmt_f64(ap),
        ])?;
    }
    let all: Vec<LocPrediction> = per_cat.concat();
    let corloc = if all.is_empty() {
        0.0
    } else {
        corloc_indexed(&all, &gt)?
    };
    let map = mean_average_precision(&aps);
    w.write_record([
        "all".to_string(),
        all.len().to_string(),
        fmt_f64(corloc),
        fmt_f64(map),
    ])?;
    w.flush()?;

    let hist = ErrorHistogram::from_predictions(&all, &gt);
    let mut w = csv::Writer::from_path(out.join("errors.csv"))?;
    w.write_record(["error_type", "count"])?;
    for (name, n) in [
        ("TOO_LARGE", hist.too_large),
        ("TOO_SMALL", hist.too_small),
        ("OTHER", hist.other),
        ("CORRECT", hist.correct),
    ] {
        w.write_record([name.to_string(), n.to_string()])?;
    }
    w.flush()?;
    println!("CorLoc {corloc:.1} mAP {map:.4}");
    Ok(())
}

fn cmd_saliency_dump(cfg: &RunConfig, model: &Path, image_id: u64) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let model = read_model(model).map_err(|e| input_err(format!("{}: {e}", model.display())))?;
    let ccfg = cfg.curriculum();
    if model.categories() != dataset.n_categories
        || model.pooled_size() != ccfg.pipeline.pooled_size
    {
        bail!(input_err(
            "model does not match the dataset's categories or the pooled size"
        ));
    }
    let scene = dataset
        .images
        .iter()
        .find(|s| s.id == image_id)
        .ok_or_else(|| input_err(format!("no image with id {image_id}")))?;
    let single = micl_core::synthdata::Dataset {
        n_categories: dataset.n_categories,
        images: vec![scene.clone()],
    };
    let data = PreparedDataset::new(&single, ccfg.pipeline.pooled_size)?;
    let Some(image) = data.images.first() else {
        bail!(input_err(format!("image {image_id} has no labels")));
    };
    let trace = segment_image(image, &model, &segmenter(), &ccfg.pipeline)?;

    let out = create_out(cfg)?;
    let (w, h) = (scene.width(), scene.height());
    for (c, plane) in &trace.planes {
        write_saliency_pgm(&out.join(format!("saliency_c{c}.pgm")), plane)?;
    }
    write_saliency_pgm(&out.join("background.pgm"), &trace.background)?;
    let seeds = trace.seeds.mask();
    let seed_plane = |want: Label| -> Vec<f64> {
        seeds
            .labels()
            .iter()
            .map(|&l| if l == want { 1.0 } else { 0.0 })
            .collect()
    };
    for (c, _) in &trace.planes {
        fs::write(
            out.join(format!("seeds_c{c}.pgm")),
            pgm_bytes(w, h, &seed_plane(Label::Object(*c))),
        )?;
    }
    fs::write(
        out.join("seeds_background.pgm"),
        pgm_bytes(w, h, &seed_plane(Label::Background)),
    )?;
    write_mask_pgm(&out.join("mask.pgm"), &trace.mask)?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_ablation(cfg: &RunConfig, seeds: u64) -> Result<()> {
    let out = create_out(cfg)?;
    let mut w = csv::Writer::from_path(out.join("ablation.csv"))?;
    w.write_record([
        "seed",
        "msc",
        "ssg",
        "mil",
        "micl",
        "subset_round0",
        "ssg_all_round0",
        "msc_all_round0",
        "ssg_modal_error",
        "msc_modal_error",
    ])?;
    let modal = |h: &ErrorHistogram| h.modal_error().map_or("NONE", |e| e.as_str()).to_string();
    for seed in cfg.seed..cfg.seed + seeds {
        let gen = micl_core::synthdata::GenConfig {
            seed,
            ..cfg.generate.clone()
        };
        let dataset = generate(&gen)?;
        let ccfg = micl_core::curriculum::CurriculumConfig {
            seed,
            ..cfg.curriculum.clone()
        };
        let r = run_ablation(&dataset, &segmenter(), &ccfg)?;
        println!(
            "seed {seed}: MSC {:.1} SSG {:.1} MIL {:.1} MICL {:.1}",
            r.msc, r.ssg, r.mil, r.micl
        );
        w.write_record([
            seed.to_string(),
            fmt_f64(r.msc),
            fmt_f64(r.ssg),
            fmt_f64(r.mil),
            fmt_f64(r.micl),
            fmt_f64(r.subset_round0),
            fmt_f64(r.ssg_all_round0),
            fmt_f64(r.msc_all_round0),
            modal(&r.ssg_errors),
            modal(&r.msc_errors),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => cmd_generate(&c.resolve()?),
        Command::Run(c) => cmd_run(&c.resolve()?),
        Command::Evaluate {
            common,
            predictions,
        } => cmd_evaluate(&common.resolve()?, &predictions),
        Command::SaliencyDump {
            common,
            model,
            image_id,
        } => cmd_saliency_dump(&common.resolve()?, &model, image_id),
        Command::Ablation { common, seeds } => cmd_ablation(&common.resolve()?, seeds),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InputError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
