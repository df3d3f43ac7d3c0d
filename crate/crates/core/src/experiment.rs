//! Experiment harness behind the `misgrad` binary: assemble a task from a
//! [`RunConfig`], train, stream metrics to disk, and compare metric files.
//!
//! A metrics file is a comment line `# task=<t> estimator=<e> seed=<s>`
//! followed by the header `epoch,wall_ms,train_loss,eval_loss,eval_error`
//! and one row per epoch. Rows are flushed as they are written, so an
//! interrupted run leaves a readable prefix.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TaskDefaults, TaskKind};
use crate::error::{Error, Result};
use crate::estimator::EstimatorKind;
use crate::linalg::Rng;
use crate::net::{Architecture, Network};
use crate::tasks::{
    gen_polynomial, gen_toy_classification, load_idx_subset, load_image_regression, synthetic_digits, synthetic_image,
    write_idx, write_ppm, Dataset,
};
use crate::train::{EpochLog, Trainer};

pub const METRICS_HEADER: &str = "epoch,wall_ms,train_loss,eval_loss,eval_error";

/// Synthetic digit pool sizes used when no IDX files are configured.
const DIGIT_TRAIN_POOL: usize = 3000;
const DIGIT_EVAL_POOL: usize = 1000;

/// Data, network shape and defaults for one configured run.
#[derive(Debug, Clone)]
pub struct TaskSetup {
    pub train: Arc<Dataset>,
    pub eval: Arc<Dataset>,
    pub arch: Architecture,
    pub defaults: TaskDefaults,
}

/// Build the datasets for `cfg`. Synthetic inputs that stand in for files
/// (the default image, the default digit set) are written under `scratch`
/// and loaded back through the regular file loaders.
pub fn build_task(cfg: &RunConfig, scratch: &Path) -> Result<TaskSetup> {
    let kind = cfg.task_kind()?;
    let d = TaskDefaults::for_task(kind);
    let data_seed = cfg.data.seed.unwrap_or(cfg.seed);
    let n_points = cfg.data.n_points.unwrap_or(d.n_points);
    let hidden = cfg.net.hidden.clone().unwrap_or_else(|| d.hidden.clone());
    let activation = cfg.net.activation.unwrap_or(d.activation);
    let pe_freqs = cfg.net.pe_freqs.unwrap_or(d.pe_freqs);
    let (train, eval) = match kind {
        TaskKind::Polynomial(order) => {
            let dom = cfg.data.domain.unwrap_or([-2.0, 2.0]);
            let ds = Arc::new(gen_polynomial(
                order,
                n_points,
                (dom[0], dom[1]),
                cfg.data.noise_sd.unwrap_or(d.noise_sd),
                data_seed,
            )?);
            (ds.clone(), ds)
        }
        TaskKind::Toy2d => (
            Arc::new(gen_toy_classification(n_points, data_seed)?),
            Arc::new(gen_toy_classification(
                cfg.data.eval_points.unwrap_or(d.eval_points),
                data_seed.wrapping_add(1),
            )?),
        ),
        TaskKind::Image => {
            let path = match &cfg.data.path {
                Some(p) => p.clone(),
                None => {
                    fs::create_dir_all(scratch)?;
                    let p = scratch.join("image.ppm");
                    write_ppm(&p, &synthetic_image(64, 64, data_seed))?;
                    p
                }
            };
            let res = cfg.data.resolution.map(|[w, h]| (w, h)).or(Some((n_points, n_points)));
            let ds = Arc::new(load_image_regression(&path, res)?);
            (ds.clone(), ds)
        }
        TaskKind::Idx => {
            let (ip, lp) = match (&cfg.data.images, &cfg.data.labels) {
                (Some(i), Some(l)) => (i.clone(), l.clone()),
                _ => {
                    fs::create_dir_all(scratch)?;
                    let (img, lbl) = synthetic_digits(DIGIT_TRAIN_POOL, data_seed);
                    let (i, l) = (scratch.join("train-images.idx"), scratch.join("train-labels.idx"));
                    write_idx(&i, &l, &img, &lbl)?;
                    (i, l)
                }
            };
            let (eip, elp) = match (&cfg.data.eval_images, &cfg.data.eval_labels) {
                (Some(i), Some(l)) => (i.clone(), l.clone()),
                _ => {
                    fs::create_dir_all(scratch)?;
                    let (img, lbl) = synthetic_digits(DIGIT_EVAL_POOL, data_seed.wrapping_add(0x7e57));
                    let (i, l) = (scratch.join("eval-images.idx"), scratch.join("eval-labels.idx"));
                    write_idx(&i, &l, &img, &lbl)?;
                    (i, l)
                }
            };
            let train = load_idx_subset(&ip, &lp, n_points, data_seed)?;
            let eval_n = cfg.data.eval_points.unwrap_or(d.eval_points);
            let eval = load_idx_subset(&eip, &elp, eval_n, data_seed.wrapping_add(1))?;
            (Arc::new(train), Arc::new(eval))
        }
    };
    let mut arch = Architecture::mlp(train.input_dim(), &hidden, activation, train.target_kind.output_dim());
    arch.pe_freqs = pe_freqs;
    Ok(TaskSetup {
        train,
        eval,
        arch,
        defaults: d,
    })
}

/// Network initialized from the run seed, plus a ready trainer.
pub fn make_trainer(cfg: &RunConfig, setup: &TaskSetup) -> Result<Trainer> {
    let net = Network::new(&setup.arch, &mut Rng::new(cfg.seed));
    Trainer::new(
        cfg.train_config(&setup.defaults),
        net,
        setup.train.clone(),
        setup.eval.clone(),
    )
}

// ---------------------------------------------------------------------------
// Metrics files

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path, task: &str, estimator: EstimatorKind, seed: u64) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# task={task} estimator={estimator} seed={seed}")?;
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(MetricsWriter { out })
    }

    pub fn append(&mut self, log: &EpochLog) -> Result<()> {
        writeln!(
            self.out,
            "{},{:.3},{},{},{}",
            log.epoch, log.wall_ms, log.train_loss, log.eval_loss, log.eval_error
        )?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub wall_ms: f64,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub path: PathBuf,
    pub task: String,
    pub estimator: String,
    pub seed: Option<u64>,
    pub rows: Vec<MetricsRow>,
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile> {
    let bad = |message: String| Error::MalformedMetrics {
        path: path.to_path_buf(),
        message,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut task = None;
    let mut estimator = String::new();
    let mut seed = None;
    let mut header_seen = false;
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for kv in meta.split_whitespace() {
                match kv.split_once('=') {
                    Some(("task", v)) => task = Some(v.to_string()),
                    Some(("estimator", v)) => estimator = v.to_string(),
                    Some(("seed", v)) => seed = v.parse().ok(),
                    _ => {}
                }
            }
            continue;
        }
        if !header_seen {
            if line != METRICS_HEADER {
                return Err(bad(format!("line {}: expected header `{METRICS_HEADER}`", lineno + 1)));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("line {}: expected 5 fields, got {}", lineno + 1, f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("line {}: bad number {s:?}", lineno + 1)));
        rows.push(MetricsRow {
            epoch: f[0]
                .parse()
                .map_err(|_| bad(format!("line {}: bad epoch {:?}", lineno + 1, f[0])))?,
            wall_ms: num(f[1])?,
            train_loss: num(f[2])?,
            eval_loss: num(f[3])?,
            eval_error: num(f[4])?,
        });
    }
    let task = task.ok_or_else(|| bad("missing `# task=...` line".into()))?;
    if rows.is_empty() {
        return Err(bad("no epoch rows".into()));
    }
    Ok(MetricsFile {
        path: path.to_path_buf(),
        task,
        estimator,
        seed,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Comparison

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub file: String,
    pub estimator: String,
    pub loss_at_epoch: f64,
    pub rank_epoch: usize,
    pub loss_at_time: f64,
    pub rank_time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub task: String,
    /// Last epoch every file reached.
    pub epoch: usize,
    /// Shortest total training time among the files.
    pub wall_ms: f64,
    pub rows: Vec<CompareRow>,
}

/// Eval loss at cumulative wall time `t`, linear between epoch samples and
/// clamped to the first/last sample outside their span.
pub fn loss_at_time(rows: &[MetricsRow], t: f64) -> f64 {
    let first = rows[0];
    if t <= first.wall_ms {
        return first.eval_loss;
    }
    for w in rows.windows(2) {
        let (a, b) = (w[0], w[1]);
        if t <= b.wall_ms {
            let span = b.wall_ms - a.wall_ms;
            if span <= 0.0 {
                return b.eval_loss;
            }
            let s = (t - a.wall_ms) / span;
            return a.eval_loss + s * (b.eval_loss - a.eval_loss);
        }
    }
    rows[rows.len() - 1].eval_loss
}

/// Competition ranking (1, 1, 3, ...) of ascending values; NaN ranks last.
fn ranks(values: &[f64]) -> Vec<usize> {
    let better = |o: f64, v: f64| !o.is_nan() && (v.is_nan() || o < v);
    values
        .iter()
        .map(|&v| 1 + values.iter().filter(|&&o| better(o, v)).count())
        .collect()
}

pub fn compare(files: &[MetricsFile]) -> Result<Comparison> {
    if files.len() < 2 {
        return Err(Error::ConfigInvalid("compare needs at least two metric files".into()));
    }
    let task = files[0].task.clone();
    if let Some(other) = files.iter().find(|f| f.task != task) {
        return Err(Error::TaskMismatch(task, other.task.clone()));
    }
    let epoch = files.iter().map(|f| f.rows.last().map_or(0, |r| r.epoch)).min().unwrap_or(0);
    let wall_ms = files
        .iter()
        .map(|f| f.rows.last().map_or(0.0, |r| r.wall_ms))
        .fold(f64::INFINITY, f64::min);
    let at_epoch: Vec<f64> = files
        .iter()
        .map(|f| {
            f.rows
                .iter()
                .rev()
                .find(|r| r.epoch <= epoch)
                .map_or(f64::NAN, |r| r.eval_loss)
        })
        .collect();
    let at_time: Vec<f64> = files.iter().map(|f| loss_at_time(&f.rows, wall_ms)).collect();
    let (re, rt) = (ranks(&at_epoch), ranks(&at_time));
    let rows = files
        .iter()
        .enumerate()
        .map(|(i, f)| CompareRow {
            file: f.path.display().to_string(),
            estimator: f.estimator.clone(),
            loss_at_epoch: at_epoch[i],
            rank_epoch: re[i],
            loss_at_time: at_time[i],
            rank_time: rt[i],
        })
        .collect();
    Ok(Comparison {
        task,
        epoch,
        wall_ms,
        rows,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# task={} equal_epoch={} equal_wall_ms={:.3}\nfile,estimator,eval_loss_at_epoch,rank_epoch,eval_loss_at_time,rank_time\n",
            self.task, self.epoch, self.wall_ms
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.file, r.estimator, r.loss_at_epoch, r.rank_epoch, r.loss_at_time, r.rank_time
            ));
        }
        s
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "task {}: equal epoch {} / equal time {:.1} ms",
            self.task, self.epoch, self.wall_ms
        )?;
        writeln!(f, "{:<14} {:>14} {:>5} {:>14} {:>5}", "estimator", "loss@epoch", "rank", "loss@time", "rank")?;
        for r in &self.rows {
            let name = if r.estimator.is_empty() { &r.file } else { &r.estimator };
            writeln!(
                f,
                "{:<14} {:>14.6e} {:>5} {:>14.6e} {:>5}",
                name, r.loss_at_epoch, r.rank_epoch, r.loss_at_time, r.rank_time
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Runs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Flat dotted-key config snapshot.
    pub config: serde_json::Value,
    pub version: String,
    pub seed: u64,
    pub start_unix_ms: u128,
    pub out_dir: PathBuf,
    /// `task,N,input_dim,target_kind`
    pub dataset: String,
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub metrics_path: PathBuf,
    pub logs: Vec<EpochLog>,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Create a fresh directory under `root` named after the run.
fn unique_dir(root: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    for k in 0.. {
        let p = root.join(if k == 0 { stem.to_string() } else { format!("{stem}-{k}") });
        match fs::create_dir(&p) {
            Ok(()) => return Ok(p),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

/// Train one configuration under a fresh directory in `out_root`, writing
/// `manifest.json`, `metrics.csv`, `dataset.txt` and `model.bin`.
pub fn run(cfg: &RunConfig, out_root: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = now_ms();
    let dir = unique_dir(out_root, &format!("{}-{}-s{}-{start}", cfg.task, cfg.estimator, cfg.seed))?;
    let setup = build_task(cfg, &dir.join("data"))?;
    let manifest = RunManifest {
        config: serde_json::from_str(&cfg.to_flat_json()).expect("flat config is JSON"),
        version: version_string(),
        seed: cfg.seed,
        start_unix_ms: start,
        out_dir: dir.clone(),
        dataset: setup.train.manifest_line(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    fs::write(dir.join("dataset.txt"), format!("{}\n", manifest.dataset))?;
    let metrics_path = dir.join("metrics.csv");
    let mut writer = MetricsWriter::create(&metrics_path, &cfg.task, cfg.estimator, cfg.seed)?;
    let mut trainer = make_trainer(cfg, &setup)?;
    let logs = trainer.run(|log| {
        log::info!(
            "{} epoch {}: train {:.4e} eval {:.4e} ({:.0} ms)",
            cfg.estimator,
            log.epoch,
            log.train_loss,
            log.eval_loss,
            log.wall_ms
        );
        writer.append(log)
    })?;
    trainer
        .network()
        .save_checkpoint(BufWriter::new(File::create(dir.join("model.bin"))?))?;
    Ok(RunOutcome {
        manifest,
        metrics_path,
        logs,
    })
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub runs: Vec<RunOutcome>,
    pub comparison: Comparison,
    pub table_path: PathBuf,
}

/// Run `cfg` once per estimator, then write `comparison.csv` next to the
/// per-estimator metric files.
pub fn sweep(cfg: &RunConfig, estimators: &[EstimatorKind], out_root: &Path) -> Result<SweepOutcome> {
    if estimators.is_empty() {
        return Err(Error::ConfigInvalid("sweep needs at least one estimator".into()));
    }
    let dir = unique_dir(out_root, &format!("sweep-{}-s{}-{}", cfg.task, cfg.seed, now_ms()))?;
    let mut runs = Vec::with_capacity(estimators.len());
    for &e in estimators {
        let mut c = cfg.clone();
        c.estimator = e;
        if !e.is_multi() {
            c.techniques = None;
            c.technique_counts = None;
        }
        runs.push(run(&c, &dir)?);
    }
    let files = runs
        .iter()
        .map(|r| read_metrics(&r.metrics_path))
        .collect::<Result<Vec<_>>>()?;
    let comparison = if files.len() >= 2 {
        compare(&files)?
    } else {
        Comparison {
            task: files[0].task.clone(),
            epoch: files[0].rows.last().map_or(0, |r| r.epoch),
            wall_ms: files[0].rows.last().map_or(0.0, |r| r.wall_ms),
            rows: Vec::new(),
        }
    };
    let table_path = dir.join("comparison.csv");
    fs::write(&table_path, comparison.to_csv())?;
    Ok(SweepOutcome {
        runs,
        comparison,
        table_path,
    })
}

/// Parse a comma-separated estimator list.
pub fn parse_estimators(list: &str) -> Result<Vec<EstimatorKind>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| EstimatorKind::parse(s).ok_or_else(|| Error::ConfigInvalid(format!("unknown estimator {s:?}"))))
        .collect()
}
