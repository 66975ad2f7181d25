use crate::Common;
use anyhow::{bail, Context, Result};
use clap::Args;
use csifb::channel::{generate_samples, ChannelMatrix};
use csifb::config::ExperimentConfig;
use csifb::cqi::{CqiConfig, CqiMode, NUM_CQI};
use csifb::dataset::{self, read_dataset, write_dataset, Dataset, Split};
use csifb::export::{normalized_points, write_analysis, write_embeddings, AnalysisRow};
use csifb::info::{knn_entropy, knn_mutual_information, KnnConfig, Points};
use csifb::model::{checkpoint, Checkpoint, Model};
use csifb::rng::{purpose, substream};
use csifb::train::{
    evaluate, input_scale_for, reports_for, train as run_training, write_eval_csv, write_metrics_csv, EvalConfig,
    EvalMode, TrainState,
};
use csifb::Execution;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

const LAST_CHECKPOINT: &str = "last.smck";
const METRICS: &str = "metrics.csv";

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p, &common.overrides)?,
        None => ExperimentConfig::parse("", &common.overrides)?,
    };
    Ok(cfg)
}

fn exec(common: &Common) -> Execution {
    if common.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    Ok(match s {
        "all" => None,
        "train" => Some(Split::Train),
        "val" => Some(Split::Val),
        "test" => Some(Split::Test),
        other => bail!("unknown split `{other}` (expected train, val, test or all)"),
    })
}

fn select<'a>(ds: &'a Dataset, split: Option<Split>) -> Vec<&'a ChannelMatrix> {
    match split {
        Some(s) => ds.subset(s),
        None => ds.samples.iter().collect(),
    }
}

#[derive(Args, Debug)]
pub struct GenData {
    /// Output SMC1 file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Overrides `scenario.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn gen_data(common: &Common, a: GenData) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = a.seed {
        cfg.scenario.seed = s;
    }
    if a.count == 0 {
        log::warn!("--count 0: writing an empty dataset");
    }
    let samples = generate_samples(&cfg.scenario, a.count, exec(common))?;
    let mut ds = Dataset::new(cfg.scenario.n_t, cfg.scenario.n_c, samples)?;
    ds.scenario = Some(cfg.scenario.clone());
    ds.assign_splits(cfg.train.train_fraction, cfg.train.val_fraction)?;
    write_dataset(&ds, &a.out).with_context(|| format!("writing {}", a.out.display()))?;

    let mut hist = [0usize; NUM_CQI];
    for h in &ds.samples {
        let k = cfg.cqi.report(h, CqiMode::Wideband)?;
        hist[k.indices()[0] as usize] += 1;
    }
    let count = |s| ds.indices(s).len();
    println!("count={}", ds.len());
    println!("n_t={}", ds.n_t);
    println!("n_c={}", ds.n_c);
    println!(
        "splits=train:{},val:{},test:{}",
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    let joined: Vec<String> = hist.iter().map(|c| c.to_string()).collect();
    println!("cqi_histogram={}", joined.join(","));
    Ok(())
}

#[derive(Args, Debug)]
pub struct Train {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Continue from `<out-dir>/last.smck`.
    #[arg(long)]
    resume: bool,
}

fn write_checkpoint(state: &TrainState, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let ck = state.to_checkpoint(&cfg.train, &cfg.cqi)?;
    let bytes = ck.to_bytes()?;
    fs::write(dir.join(format!("step_{:06}.smck", state.step)), &bytes)?;
    fs::write(dir.join(LAST_CHECKPOINT), &bytes)?;
    Ok(())
}

/// Keeps the header and rows with `step < keep` of an existing metrics file.
fn truncate_metrics(path: &Path, keep: u64) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let retain = i == 0
            || line
                .split(',')
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|s| s < keep);
        if retain {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn train(common: &Common, a: Train) -> Result<()> {
    let cfg = load_config(common)?;
    let ds = read_dataset(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    if (ds.n_t, ds.n_c) != (cfg.model.n_t, cfg.model.n_c) {
        bail!(
            "dataset is {}x{} but model.n_t/model.n_c = {}/{}",
            ds.n_t,
            ds.n_c,
            cfg.model.n_t,
            cfg.model.n_c
        );
    }
    let samples = ds.subset(Split::Train);
    if samples.is_empty() {
        bail!("dataset has no training samples");
    }
    fs::create_dir_all(&a.out_dir)?;
    let metrics_path = a.out_dir.join(METRICS);

    let mut state = if a.resume {
        let path = a.out_dir.join(LAST_CHECKPOINT);
        let ck = Checkpoint::read(&path).with_context(|| format!("reading {}", path.display()))?;
        if ck.header.model != cfg.model {
            bail!("checkpoint model config differs from the current [model] section");
        }
        let state = TrainState::from_checkpoint(&ck, &cfg.train)?;
        truncate_metrics(&metrics_path, state.step)?;
        state
    } else {
        let mut model = Model::new(cfg.model.clone(), &mut substream(cfg.train.seed, &[purpose::INIT]))?;
        model.set_input_scale(input_scale_for(&samples)?)?;
        let mut f = File::create(&metrics_path)?;
        write_metrics_csv(&mut f, &[], true)?;
        TrainState::new(model, &cfg.train)
    };
    fs::write(a.out_dir.join("config.toml"), cfg.to_toml()?)?;

    let reports = reports_for(&samples, &cfg.cqi, cfg.model.cqi_mode)?;
    let mut metrics = BufWriter::new(OpenOptions::new().append(true).open(&metrics_path)?);
    let every = cfg.train.checkpoint_every;
    let dir = a.out_dir.clone();
    run_training(&mut state, &samples, &reports, &cfg.train, exec(common), |log, st| {
        write_metrics_csv(&mut metrics, std::slice::from_ref(log), false)?;
        if every > 0 && st.step % every == 0 && st.step < cfg.train.steps {
            metrics.flush()?;
            write_checkpoint(st, &cfg, &dir).map_err(|e| csifb::Error::Contract(e.to_string()))?;
        }
        Ok(())
    })?;
    metrics.flush()?;
    write_checkpoint(&state, &cfg, &a.out_dir)?;
    log::info!("finished {} steps, loss EMA {:?}", state.step, state.loss_ema);
    Ok(())
}

#[derive(Args, Debug)]
pub struct Eval {
    /// One or more checkpoints; their rows are concatenated.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated feedback SNRs in dB (`inf` = noiseless); defaults to
    /// `eval.snr_list`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_list: Option<Vec<f64>>,
    /// `hard` (discrete symbols) or `soft`; defaults to `eval.mode`.
    #[arg(long)]
    mode: Option<String>,
    /// Which split to evaluate: train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "eval.csv")]
    out: PathBuf,
}

pub fn eval(common: &Common, a: Eval) -> Result<()> {
    let cfg = load_config(common)?;
    let ds = read_dataset(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let samples = select(&ds, parse_split(&a.split)?);
    if samples.is_empty() {
        bail!("split `{}` of {} is empty", a.split, a.data.display());
    }
    let mut ecfg: EvalConfig = cfg.eval.clone();
    if let Some(list) = a.snr_list {
        ecfg.snr_list = list;
    }
    if let Some(m) = a.mode {
        ecfg.mode = match m.as_str() {
            "hard" => EvalMode::Hard,
            "soft" => EvalMode::Soft,
            other => bail!("unknown mode `{other}` (expected hard or soft)"),
        };
    }
    let mut rows = Vec::new();
    for path in &a.checkpoints {
        let ck = Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))?;
        let model = Model::from_checkpoint(&ck)?;
        let cqi: CqiConfig = ck.header.cqi.clone().unwrap_or_else(|| cfg.cqi.clone());
        let reports = reports_for(&samples, &cqi, model.config().cqi_mode)
            .with_context(|| format!("CQI for {}", path.display()))?;
        rows.extend(evaluate(&model, &samples, &reports, &ecfg, exec(common))?);
    }
    let f = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_eval_csv(BufWriter::new(f), &rows)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct Analyze {
    #[arg(long)]
    data: PathBuf,
    /// CQI modes to analyze (repeatable).
    #[arg(long = "cqi-mode", default_values = ["wideband", "subband"])]
    cqi_modes: Vec<String>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Tie-breaking jitter, relative to the data spread.
    #[arg(long, default_value_t = 1e-10)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long, default_value = "analysis.csv")]
    out: PathBuf,
}

pub fn analyze(common: &Common, a: Analyze) -> Result<()> {
    let cfg = load_config(common)?;
    let ds = read_dataset(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let samples = select(&ds, parse_split(&a.split)?);
    let knn = KnnConfig {
        k: a.k,
        jitter: a.jitter,
        seed: a.seed,
        exec: exec(common),
    };
    let h_points = normalized_points(&samples)?;
    let mut rows = Vec::new();
    for m in &a.cqi_modes {
        let mode = match m.as_str() {
            "wideband" => CqiMode::Wideband,
            "subband" => CqiMode::Subband,
            other => bail!("cannot analyze CQI mode `{other}` (expected wideband or subband)"),
        };
        let reports = reports_for(&samples, &cfg.cqi, mode)?;
        let width = reports.first().map_or(1, |r| r.indices().len());
        let data: Vec<f64> = reports
            .iter()
            .flat_map(|r| r.indices().iter().map(|&k| k as f64))
            .collect();
        let k_points = Points::new(width, data)?;
        rows.push(AnalysisRow {
            variable: format!("cqi_{mode}"),
            estimate: knn_entropy(&k_points, &knn)?,
        });
        rows.push(AnalysisRow {
            variable: format!("h_norm;cqi_{mode}"),
            estimate: knn_mutual_information(&h_points, &k_points, &knn)?,
        });
    }
    let f = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_analysis(BufWriter::new(f), &rows)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct Export {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "all")]
    split: String,
}

pub fn export(common: &Common, a: Export) -> Result<()> {
    let cfg = load_config(common)?;
    let ds = read_dataset(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let samples = select(&ds, parse_split(&a.split)?);
    let labels = reports_for(&samples, &cfg.cqi, CqiMode::Wideband)?
        .iter()
        .map(|r| r.indices()[0])
        .collect::<Vec<_>>();
    let f = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_embeddings(BufWriter::new(f), &samples, &labels)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct Inspect {
    file: PathBuf,
}

pub fn inspect(a: Inspect) -> Result<()> {
    let bytes = fs::read(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    match bytes.get(0..4) {
        Some(m) if m == dataset::MAGIC => {
            let h = dataset::parse_header(&bytes)?;
            println!("format=SMC1");
            println!("version={}", h.version);
            println!("count={}", h.count);
            println!("n_t={}", h.n_t);
            println!("n_c={}", h.n_c);
            let ds = Dataset::from_bytes(&bytes)?;
            if let Some(s) = &ds.scenario {
                println!("scenario={}", serde_json::to_string(s)?);
            }
        }
        Some(m) if m == checkpoint::MAGIC => {
            let (version, header) = checkpoint::read_header(&bytes)?;
            println!("format=SMCK");
            println!("version={version}");
            println!("header={}", serde_json::to_string(&header)?);
        }
        _ => bail!("{}: magic: not an SMC1 or SMCK file", a.file.display()),
    }
    Ok(())
}
