use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msda::adaptation::{DanKind, TrainMode};
use msda::data::{generate_dataset, Dataset, DatasetConfig};
use msda::detector::checkpoint::Checkpoint;
use msda::detector::Scale;
use msda::harness::{
    all_subsets, detector_from_checkpoint, domain_confusion_probe, evaluate_split, pixel_probe, report, run_ablation,
    train, ProbeConfig, RunConfig,
};
use msda::{Error, Result};

#[derive(Parser)]
#[command(name = "msda", version, about = "Multiscale domain-adaptive detector on synthetic clear/foggy scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic clear/foggy dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        corruption_strength: f64,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_val: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
    },
    /// Train a detector, optionally with domain adaptation.
    Train(RunArgs),
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "target_val")]
        split: String,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = 0.01)]
        conf_thresh: f64,
        /// Write the machine-readable result here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train the baseline DAN on subsets of the feature scales.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated subsets such as `none,F3,F1+F2`; all eight by default.
        #[arg(long)]
        subsets: Option<String>,
    },
    /// Domain-confusion probe on a checkpoint's frozen features.
    Probe {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Probe raw pixels instead of features.
        #[arg(long)]
        pixels: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Domain-classifier loss curves from a training log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mode: Option<TrainMode>,
    #[arg(long)]
    variant: Option<DanKind>,
    /// Comma-separated, e.g. `F1,F3`; `none` for no adaptation.
    #[arg(long)]
    scales: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    channel_multiplier: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

fn parse_scales(text: &str, sep: char) -> Result<Vec<Scale>> {
    if text.eq_ignore_ascii_case("none") || text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(sep).map(|s| s.trim().parse()).collect()
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.data {
            c.data_dir = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.out_dir = Some(v.clone());
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.variant {
            c.dan_variant = v;
        }
        if let Some(v) = &self.scales {
            c.active_scales = parse_scales(v, ',')?;
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = self.lr {
            c.optimizer.learning_rate = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.data_seed {
            c.data_seed = v;
        }
        if let Some(v) = self.channel_multiplier {
            c.detector.channel_multiplier = v;
        }
        if let Some(v) = self.eval_every {
            c.eval_every = v;
        }
        if let Some(v) = self.checkpoint_every {
            c.checkpoint_every = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn load_data(dir: Option<&Path>) -> Result<Dataset> {
    let dir = dir.ok_or_else(|| Error::Config("no dataset directory given (--data or data_dir)".into()))?;
    Dataset::load(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            seed,
            corruption_strength,
            n_train,
            n_val,
            image_size,
        } => {
            let mut cfg = DatasetConfig {
                seed,
                n_train,
                n_val,
                ..DatasetConfig::default()
            };
            cfg.scene.corruption_strength = corruption_strength;
            cfg.scene.image_size = image_size;
            let ds = generate_dataset(&cfg)?;
            ds.write(&out)?;
            println!("wrote {} splits to {}", ds.splits.len(), out.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let data = load_data(cfg.data_dir.as_deref())?;
            let outcome = train(&cfg, &data)?;
            let last = outcome.log.records.last().expect("at least one iteration");
            println!("trained {} iterations; final L_det {:.4}, L_t {:.4}", outcome.log.len(), last.l_det, last.l_t);
            if let Some(e) = outcome.log.evals.last() {
                println!("target mAP {:.2}", 100.0 * e.target_map);
            }
            if cfg.out_dir.is_none() {
                log::warn!("no --out given; checkpoint not saved");
            }
        }
        Command::Eval {
            weights,
            data,
            split,
            iou,
            conf_thresh,
            json,
        } => {
            let ckpt = Checkpoint::load(&weights)?;
            let (mut cfg, detector) = detector_from_checkpoint(&ckpt)?;
            cfg.eval.iou_threshold = iou;
            cfg.eval.confidence_threshold = conf_thresh;
            let ds = Dataset::load(&data)?;
            let result = evaluate_split(&detector, &ckpt.params, ds.split(&split)?, &cfg.eval)?;
            print!("{}", result.to_text_table(&ds.config.scene.class_names()));
            if let Some(p) = json {
                write(&p, &(result.to_json() + "\n"))?;
            }
        }
        Command::Ablate { run, subsets } => {
            let mut cfg = run.resolve()?;
            if run.variant.is_none() && run.config.is_none() {
                cfg.dan_variant = DanKind::Baseline;
            }
            let subsets: Vec<BTreeSet<Scale>> = match subsets {
                Some(text) => text
                    .split(',')
                    .map(|s| parse_scales(s.trim(), '+').map(|v| v.into_iter().collect()))
                    .collect::<Result<_>>()?,
                None => all_subsets(),
            };
            let data = load_data(cfg.data_dir.as_deref())?;
            let rep = run_ablation(&cfg, &data, &subsets)?;
            let table = rep.table();
            print!("{}", table.render());
            if let Some(dir) = &cfg.out_dir {
                write(&dir.join("ablation.csv"), &table.to_csv())?;
                write(&dir.join("ablation.txt"), &table.render())?;
            }
        }
        Command::Probe {
            weights,
            data,
            pixels,
            seed,
        } => {
            let ds = Dataset::load(&data)?;
            let pcfg = ProbeConfig {
                seed,
                ..ProbeConfig::default()
            };
            let (src, tgt) = (ds.split("source_val")?, ds.split("target_val")?);
            if pixels {
                println!("pixels: {:.4}", pixel_probe(src, tgt, &pcfg)?);
            } else {
                let weights = weights.ok_or_else(|| Error::Config("--weights is required unless --pixels".into()))?;
                let ckpt = Checkpoint::load(&weights)?;
                let (_, detector) = detector_from_checkpoint(&ckpt)?;
                let rep = domain_confusion_probe(&detector, &ckpt.params, src, tgt, &pcfg)?;
                for (s, acc) in &rep.per_scale {
                    println!("{s}: {acc:.4}");
                }
                println!("mean: {:.4}", rep.mean);
            }
        }
        Command::Report { log, out } => {
            let curves = report(&log, &out)?;
            println!("{} rows, {} classifiers -> {}", curves.rows.len(), curves.classifiers.len(), out.display());
            for w in &curves.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
