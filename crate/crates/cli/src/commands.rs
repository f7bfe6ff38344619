use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sgp_core::checkpoint;
use sgp_core::data::{load_csv, synth_diffusion, write_wide_csv, ChannelStats, Dataset};
use sgp_core::decoder::{Decoder, Variant};
use sgp_core::encoder::{precompute as build_store, EmbeddingStore, PrecomputeSpec};
use sgp_core::graph::write_edge_list;
use sgp_core::metrics::MetricReport;
use sgp_core::training::{self, Split, TrainOutcome, TrainingData, UpdateTiming};
use sgp_core::{Result, SgpError};

use crate::config::RunConfig;

/// Directory that every relative path in a configuration is resolved against.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

struct Prepared {
    dataset: Dataset,
    split: Split,
    stats: ChannelStats,
    spec: PrecomputeSpec,
}

fn load_dataset(ws: &Workspace, cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data.path {
        Some(path) => {
            let edges = cfg.data.edges.as_ref().map(|e| ws.resolve(e));
            load_csv(&ws.resolve(path), edges.as_deref(), &cfg.load_options()?)
        }
        None => {
            let mut ds = synth_diffusion(&cfg.synth.to_core())?.dataset;
            if let Some(period) = cfg.data.period_steps {
                ds.add_time_of_day(period as i64 * ds.step())?;
            }
            Ok(ds)
        }
    }
}

fn prepare(ws: &Workspace, cfg: &RunConfig) -> Result<Prepared> {
    let dataset = load_dataset(ws, cfg)?;
    let split = cfg.split.to_core()?.resolve(&dataset.timestamps)?;
    let stats = ChannelStats::from_training(&dataset, split.train.end)?;
    Ok(Prepared {
        dataset,
        split,
        stats,
        spec: cfg.precompute_spec()?,
    })
}

fn open_store(path: &Path) -> Result<EmbeddingStore> {
    if !path.exists() {
        return Err(SgpError::MissingArtifact(format!(
            "embedding store {} not found; run `sgp precompute` first",
            path.display()
        )));
    }
    EmbeddingStore::open(path)
}

fn new_decoder(cfg: &RunConfig, p: &Prepared) -> Result<Decoder<f32>> {
    let layout = p.spec.layout(p.dataset.input_width());
    let dcfg = cfg.decoder_config(p.dataset.num_channels())?;
    Decoder::new(&dcfg, &layout, p.dataset.static_attrs.mapv(|v| v as f32))
}

#[derive(Debug, Clone)]
pub struct StoreSummary {
    pub path: PathBuf,
    pub num_steps: usize,
    pub num_nodes: usize,
    pub width: usize,
}

pub fn precompute(ws: &Workspace, cfg: &RunConfig) -> Result<StoreSummary> {
    let p = prepare(ws, cfg)?;
    let path = ws.resolve(&cfg.output.store);
    let store = build_store(&p.dataset, &p.stats, &p.spec, &path, cfg.output.force)?;
    Ok(StoreSummary {
        path,
        num_steps: store.num_steps(),
        num_nodes: store.num_nodes(),
        width: store.width(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub outcome: TrainOutcome,
    pub report: MetricReport,
}

fn history_csv(outcome: &TrainOutcome) -> String {
    let mut s = String::from("epoch,train_mae,val_mae,batch_per_sec\n");
    for r in &outcome.history {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_mae, r.val_mae, r.batch_per_sec);
    }
    s
}

/// Trains on an existing store and writes the run directory: resolved config,
/// history, checkpoint and test metrics.
pub fn train(ws: &Workspace, cfg: &RunConfig) -> Result<TrainSummary> {
    let p = prepare(ws, cfg)?;
    let store = open_store(&ws.resolve(&cfg.output.store))?;
    let fingerprint = store.fingerprint();
    let data = TrainingData::new(store, &p.dataset, p.stats.clone(), &p.spec)?;
    let mut decoder = new_decoder(cfg, &p)?;
    let outcome = training::train(&data, &mut decoder, &cfg.train.to_core(), &p.split)?;
    let report = training::evaluate(&decoder, &data, &p.split.test)?;

    let run_dir = ws.resolve(&cfg.output.run_dir);
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.toml"), cfg.to_toml()?)?;
    fs::write(run_dir.join("history.csv"), history_csv(&outcome))?;
    let metadata = vec![
        ("variant".to_string(), cfg.decoder.variant.clone()),
        ("store_fingerprint".to_string(), fingerprint.to_hex()),
        ("updates".to_string(), outcome.updates.to_string()),
    ];
    checkpoint::save(&run_dir.join("checkpoint.sgpc"), &decoder, &p.stats, &metadata)?;
    fs::write(run_dir.join("metrics.txt"), report.to_text())?;
    Ok(TrainSummary {
        run_dir,
        outcome,
        report,
    })
}

/// Scores a checkpoint on the test period in original units.
pub fn eval(ws: &Workspace, cfg: &RunConfig, checkpoint_path: Option<&Path>) -> Result<MetricReport> {
    let p = prepare(ws, cfg)?;
    let path = match checkpoint_path {
        Some(c) => ws.resolve(c),
        None => ws.resolve(&cfg.output.run_dir).join("checkpoint.sgpc"),
    };
    let ckpt = checkpoint::load(&path)?;
    let store = open_store(&ws.resolve(&cfg.output.store))?;
    let data = TrainingData::new(store, &p.dataset, ckpt.stats, &p.spec)?;
    training::evaluate(&ckpt.decoder, &data, &p.split.test)
}

/// Writes the synthetic dataset as `values.csv` and `edges.csv`.
pub fn synth(ws: &Workspace, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = synth_diffusion(&cfg.synth.to_core())?;
    let dir = ws.resolve(&cfg.synth.out_dir);
    fs::create_dir_all(&dir)?;
    let values = dir.join("values.csv");
    let edges = dir.join("edges.csv");
    write_wide_csv(&values, &out.dataset)?;
    write_edge_list(&edges, &out.dataset.graph)?;
    Ok(vec![values, edges])
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub rows: Vec<(usize, UpdateTiming)>,
}

impl BenchmarkReport {
    /// Per-update time of the largest graph relative to the smallest.
    pub fn ratio(&self) -> f64 {
        let first = &self.rows[0].1;
        let last = &self.rows[self.rows.len() - 1].1;
        last.median_secs / first.median_secs
    }
}

/// Times single updates on synthetic graphs of each configured size.
pub fn benchmark(ws: &Workspace, cfg: &RunConfig) -> Result<BenchmarkReport> {
    let mut rows = Vec::new();
    for &nodes in &cfg.benchmark.nodes {
        let mut c = cfg.clone();
        c.data.path = None;
        c.synth.nodes = nodes;
        c.synth.steps = cfg.benchmark.steps;
        c.split.train = 1.0;
        c.split.val = 0.0;
        c.split.test = 0.0;
        let p = prepare(ws, &c)?;
        let path = ws.resolve(Path::new(&format!("bench-{nodes}.sgpe")));
        let store = build_store(&p.dataset, &p.stats, &p.spec, &path, true)?;
        let data = TrainingData::new(store, &p.dataset, p.stats.clone(), &p.spec)?;
        let decoder = new_decoder(&c, &p)?;
        let timing = training::benchmark_updates(
            &data,
            &decoder,
            &c.train.to_core(),
            &p.split.train,
            cfg.benchmark.batches,
            cfg.benchmark.trim,
        )?;
        drop(data);
        let _ = fs::remove_file(&path);
        log::info!("{nodes} nodes: {:.1} batch/s", timing.batches_per_sec);
        rows.push((nodes, timing));
    }
    Ok(BenchmarkReport { rows })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub summary: TrainSummary,
}

/// Precomputes and trains each variant with otherwise shared settings, in
/// `store-<variant>.sgpe` and `ablate-<variant>/`.
pub fn ablate(ws: &Workspace, cfg: &RunConfig, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut c = cfg.clone();
        c.decoder.variant = variant.name().to_string();
        c.output.store = PathBuf::from(format!("store-{variant}.sgpe"));
        c.output.run_dir = PathBuf::from(format!("ablate-{variant}"));
        c.validate()?;
        precompute(ws, &c)?;
        let summary = train(ws, &c)?;
        rows.push(AblationRow { variant, summary });
    }
    Ok(rows)
}
