use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use contrastive_ace::attribution::{ace_matrix, compute_bounds, AceEstimatorConfig, EstimatorMode};
use contrastive_ace::data::{DomainDataset, NormalizeTransform};
use contrastive_ace::harness::{
    bench_leave_one_out, evaluate, load_dataset, method_config, prepare_fold, train, ExperimentConfig, Method,
    MetricsWriter,
};
use contrastive_ace::models::ModelBundle;
use contrastive_ace::{Error, Result};

#[derive(Parser)]
#[command(name = "cace", version, about = "Contrastive-ACE training and leave-one-domain-out benchmarks")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one leave-one-out run and save the selected checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Held-out target domain (default: the first domain).
        #[arg(long)]
        target: Option<usize>,
        #[arg(long, default_value_t = 0)]
        repeat: usize,
        /// `erm` forces rho = 0.
        #[arg(long, default_value = "contrastive-ace")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of a checkpoint on a dataset CSV.
    Eval {
        #[command(flatten)]
        input: ModelInput,
    },
    /// ACE vectors of a checkpoint on a dataset CSV.
    Attribute {
        #[command(flatten)]
        input: ModelInput,
        #[arg(long, default_value = "analytic")]
        estimator: String,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relative widening of the latent bounds.
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        /// Attribute the predicted class instead of the label.
        #[arg(long)]
        predicted: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-domain-out comparison of ERM and Contrastive-ACE.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the configured dataset as CSV plus a manifest.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Sets the init, data and pair seeds together.
    #[arg(long)]
    seed: Option<u64>,
    /// Any configuration key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let flags: [(&str, Option<String>); 10] = [
            ("rho", self.rho.map(|v| v.to_string())),
            ("delta", self.delta.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("estimator", self.estimator.clone()),
            ("samples", self.samples.map(|v| v.to_string())),
            ("normalize", self.normalize.map(|v| v.to_string())),
            ("repeats", self.repeats.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ModelInput {
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV as written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Keep only this domain.
    #[arg(long)]
    domain: Option<usize>,
    /// Normalizer JSON written by train.
    #[arg(long)]
    normalizer: Option<PathBuf>,
}

impl ModelInput {
    fn load(&self) -> Result<(ModelBundle, DomainDataset)> {
        let model = ModelBundle::load(&self.model)?;
        let mut ds = DomainDataset::read_csv(&self.data)?;
        if let Some(d) = self.domain {
            if !ds.domains().contains(&d) {
                return Err(Error::UnknownDomain(d));
            }
            let keep: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples()[i].domain == d).collect();
            ds = ds.subset(&keep);
        }
        if let Some(p) = &self.normalizer {
            ds = NormalizeTransform::load(p)?.apply(&ds)?;
        }
        if ds.feature_dim() != model.input_dim() {
            return Err(Error::Dimension(format!(
                "data has {} features, model expects {}",
                ds.feature_dim(),
                model.input_dim()
            )));
        }
        Ok((model, ds))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            cfg,
            target,
            repeat,
            method,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let method: Method = method.parse()?;
            let ds = load_dataset(&cfg.data)?;
            let target = target.unwrap_or(ds.domains()[0]);
            let tc = method_config(&cfg.train.for_repeat(repeat), method);
            let fold = prepare_fold(&ds, target, &tc)?;
            create_dir(&out)?;
            write_file(&out.join("config.cfg"), &cfg.to_config_string())?;
            let mut writer = MetricsWriter::create(&out.join("metrics.csv"))?;
            let outcome = train(&tc, &fold, Some(&mut writer))?;
            outcome.model.save(&out.join("model.json"))?;
            if let Some(t) = &fold.normalizer {
                t.save(&out.join("normalizer.json"))?;
            }
            let sel = outcome.metrics.selected();
            println!(
                "best_epoch={} val_acc={} test_acc={} intra_ace={} inter_ace={}",
                outcome.metrics.best_epoch, sel.val_acc, sel.test_acc, sel.intra_ace, sel.inter_ace
            );
        }
        Command::Eval { input } => {
            let (model, ds) = input.load()?;
            println!("accuracy={} samples={}", evaluate(&model, &ds)?, ds.len());
        }
        Command::Attribute {
            input,
            estimator,
            samples,
            seed,
            epsilon,
            predicted,
            out,
        } => {
            let (model, ds) = input.load()?;
            let mode: EstimatorMode = estimator.parse()?;
            let mut est = AceEstimatorConfig::analytic();
            est.mode = mode;
            est.samples = samples;
            est.seed = seed;
            let targets: Vec<usize> = if predicted {
                let logits = model.logits_values(&ds.features())?;
                (0..ds.len())
                    .map(|i| {
                        let row = logits.row(i);
                        row.iter()
                            .enumerate()
                            .fold(0, |best, (c, v)| if *v > row[best] { c } else { best })
                    })
                    .collect()
            } else {
                ds.labels()
            };
            let z = model.encode_values(&ds.features())?;
            let bounds = compute_bounds(&z, epsilon)?;
            let ace = ace_matrix(&model, &z, &targets, &bounds, &est)?;
            let mut csv = String::from("sample_id,class");
            for j in 1..=model.latent_dim() {
                let _ = write!(csv, ",c{j}");
            }
            csv.push('\n');
            for (i, (s, t)) in ds.samples().iter().zip(&targets).enumerate() {
                let _ = write!(csv, "{},{t}", s.id);
                for v in ace.row(i) {
                    let _ = write!(csv, ",{v}");
                }
                csv.push('\n');
            }
            write_file(&out, &csv)?;
        }
        Command::Bench { cfg, out } => {
            let cfg = cfg.resolve()?;
            let ds = load_dataset(&cfg.data)?;
            let report = bench_leave_one_out(&cfg, &ds, Some(&out))?;
            print!("{}", report.table_csv());
        }
        Command::GenData { cfg, out } => {
            let cfg = cfg.resolve()?;
            let ds = load_dataset(&cfg.data)?;
            create_dir(&out)?;
            ds.write_csv(&out.join("dataset.csv"))?;
            write_file(&out.join("manifest.txt"), &ds.manifest())?;
            print!("{}", ds.manifest());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={first}");
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} msg={e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
