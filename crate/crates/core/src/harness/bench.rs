//! Leave-one-domain-out benchmark: every target domain × method × repeat.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::{DatasetConfig, ExperimentConfig, Method, TrainConfig};
use super::train::{prepare_fold, train, MetricsWriter};
use crate::data::{load_idx, make_rotated_domains, DomainDataset, RotationDomainSpec, SyntheticSpec};
use crate::error::{Error, Result};

/// Worker-thread count for benchmark cells.
pub const THREADS_ENV: &str = "CACE_THREADS";

pub fn load_dataset(cfg: &DatasetConfig) -> Result<DomainDataset> {
    match cfg {
        DatasetConfig::Synthetic {
            domains,
            per_domain,
            seed,
            shift,
        } => SyntheticSpec {
            domains: *domains,
            per_domain: *per_domain,
            seed: *seed,
            shift: *shift,
        }
        .generate(),
        DatasetConfig::RotatedMnist {
            dir,
            angles,
            per_domain,
            seed,
        } => {
            let base = load_idx(&dir.join("images-idx3-ubyte"), &dir.join("labels-idx1-ubyte"))?;
            make_rotated_domains(
                &base,
                &RotationDomainSpec {
                    angles: angles.clone(),
                    per_domain: *per_domain,
                    seed: *seed,
                },
            )
        }
        DatasetConfig::Csv { path } => DomainDataset::read_csv(path),
    }
}

/// The training configuration a method runs with.
pub fn method_config(base: &TrainConfig, method: Method) -> TrainConfig {
    match method {
        Method::Erm => TrainConfig { rho: 0.0, ..base.clone() },
        Method::ContrastiveAce => base.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub target: usize,
    pub method: Method,
    pub repeat: usize,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    pub intra_ace: f64,
    pub inter_ace: f64,
}

impl RunRecord {
    pub const CSV_HEADER: &'static str =
        "target_domain,method,repeat,best_epoch,val_acc,test_acc,intra_ace,inter_ace";

    pub fn ace_ratio(&self) -> f64 {
        self.intra_ace / self.inter_ace
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    /// `None` for the average over target domains.
    pub target: Option<usize>,
    pub method: Method,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// Ordered by target domain, method, repeat.
    pub runs: Vec<RunRecord>,
    /// Per-domain rows in domain order, then one average row per method.
    pub table: Vec<TableRow>,
}

impl BenchReport {
    pub fn row(&self, target: Option<usize>, method: Method) -> Option<&TableRow> {
        self.table.iter().find(|r| r.target == target && r.method == method)
    }

    pub fn runs_for(&self, target: usize, method: Method) -> impl Iterator<Item = &RunRecord> {
        self.runs
            .iter()
            .filter(move |r| r.target == target && r.method == method)
    }

    pub fn table_csv(&self) -> String {
        let mut out = String::from("target_domain,method,mean_acc,std_acc,repeats\n");
        for r in &self.table {
            let target = r.target.map_or_else(|| "avg".to_string(), |t| t.to_string());
            out.push_str(&format!(
                "{target},{},{},{},{}\n",
                r.method.name(),
                r.mean_acc,
                r.std_acc,
                r.repeats
            ));
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = format!("{}\n", RunRecord::CSV_HEADER);
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.target,
                r.method.name(),
                r.repeat,
                r.best_epoch,
                r.val_acc,
                r.test_acc,
                r.intra_ace,
                r.inter_ace
            ));
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(runs: &[RunRecord], domains: &[usize], methods: &[Method], repeats: usize) -> Vec<TableRow> {
    let acc = |t: usize, m: Method| -> Vec<f64> {
        runs.iter()
            .filter(|r| r.target == t && r.method == m)
            .map(|r| r.test_acc)
            .collect()
    };
    let mut table = Vec::new();
    for &t in domains {
        for &m in methods {
            let (mean_acc, std_acc) = mean_std(&acc(t, m));
            table.push(TableRow {
                target: Some(t),
                method: m,
                mean_acc,
                std_acc,
                repeats,
            });
        }
    }
    for &m in methods {
        // spread of the per-repeat average over domains
        let per_repeat: Vec<f64> = (0..repeats)
            .map(|k| {
                domains
                    .iter()
                    .map(|&t| {
                        runs.iter()
                            .find(|r| r.target == t && r.method == m && r.repeat == k)
                            .map_or(f64::NAN, |r| r.test_acc)
                    })
                    .sum::<f64>()
                    / domains.len() as f64
            })
            .collect();
        let (mean_acc, std_acc) = mean_std(&per_repeat);
        table.push(TableRow {
            target: None,
            method: m,
            mean_acc,
            std_acc,
            repeats,
        });
    }
    table
}

fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_dir(out: &Path, target: usize, method: Method, repeat: usize) -> PathBuf {
    out.join("runs")
        .join(format!("target{target}"))
        .join(method.name())
        .join(format!("repeat{repeat}"))
}

fn run_cell(
    cfg: &ExperimentConfig,
    ds: &DomainDataset,
    target: usize,
    method: Method,
    repeat: usize,
    out: Option<&Path>,
) -> Result<RunRecord> {
    let tc = method_config(&cfg.train.for_repeat(repeat), method);
    let fold = prepare_fold(ds, target, &tc)?;
    let mut writer = match out {
        Some(o) => {
            let dir = run_dir(o, target, method, repeat);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            Some(MetricsWriter::create(&dir.join("metrics.csv"))?)
        }
        None => None,
    };
    let outcome = train(&tc, &fold, writer.as_mut())?;
    if let (Some(o), true) = (out, cfg.save_checkpoints) {
        outcome.model.save(&run_dir(o, target, method, repeat).join("model.json"))?;
    }
    let sel = outcome.metrics.selected();
    log::info!(
        "target {target} {} repeat {repeat}: test {:.4} (epoch {}, {:.1}s)",
        method.name(),
        sel.test_acc,
        outcome.metrics.best_epoch,
        outcome.metrics.wall_time.as_secs_f64()
    );
    Ok(RunRecord {
        target,
        method,
        repeat,
        best_epoch: outcome.metrics.best_epoch,
        val_acc: sel.val_acc,
        test_acc: sel.test_acc,
        intra_ace: sel.intra_ace,
        inter_ace: sel.inter_ace,
    })
}

/// Trains every (target domain, method, repeat) cell with seeds shared
/// across methods. With `out`, writes `table.csv`, `runs.csv`,
/// `config.cfg`, `manifest.txt` and per-run `metrics.csv` files.
pub fn bench_leave_one_out(cfg: &ExperimentConfig, ds: &DomainDataset, out: Option<&Path>) -> Result<BenchReport> {
    cfg.validate()?;
    if ds.domains().len() < 2 {
        return Err(Error::Data("the benchmark needs at least 2 domains".into()));
    }
    if let Some(o) = out {
        fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        fs::write(o.join("config.cfg"), cfg.to_config_string()).map_err(|e| Error::io(o, e))?;
        fs::write(o.join("manifest.txt"), ds.manifest()).map_err(|e| Error::io(o, e))?;
    }
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let cells: Vec<(usize, Method, usize)> = ds
        .domains()
        .iter()
        .flat_map(|&t| methods.iter().flat_map(move |&m| (0..cfg.repeats).map(move |r| (t, m, r))))
        .collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunRecord>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let workers = thread_count().min(cells.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(t, m, r)) = cells.get(k) else { break };
                let res = run_cell(cfg, ds, t, m, r, out);
                results.lock().expect("no worker panics while holding the lock")[k] = Some(res);
            });
        }
    });
    let runs = results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>>>()?;

    let report = BenchReport {
        table: summarize(&runs, ds.domains(), &methods, cfg.repeats),
        runs,
    };
    if let Some(o) = out {
        fs::write(o.join("table.csv"), report.table_csv()).map_err(|e| Error::io(o, e))?;
        fs::write(o.join("runs.csv"), report.runs_csv()).map_err(|e| Error::io(o, e))?;
    }
    Ok(report)
}
