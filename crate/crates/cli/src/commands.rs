use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ratlab_core::data::{gen_graphs, gen_text, write_jsonl, Example, GraphGenSpec, Splits, TextGenSpec};
use ratlab_core::evaluation::{default_grid, degradation_sweep, evaluate, DegradationCurve, MetricsRecord};
use ratlab_core::oracles::{run_all, CheckReport};
use ratlab_core::rationalization::{train_epoch, EpochRecord, Game, Modality};
use ratlab_core::tensor::gradcheck::{run_suite, OpReport};
use ratlab_core::tensor::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::{NumericalFailure, ValidationError};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_FILE: &str = "final.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const FAILURE_FILE: &str = "FAILED";
pub const DEGRADATION_FILE: &str = "degradation.csv";
pub const METRICS_HEADER: &str = "epoch,pred_loss,ext_loss,S,acc,p,r,f1,mean_norm";

/// RNG stream for the degradation plans, independent of training streams.
const DIAGNOSE_STREAM: u64 = 0x3_0000;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Generator spec for `gen-data`: a text or graph spec tagged by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenSpec {
    Text(TextGenSpec),
    Graph(GraphGenSpec),
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec::Text(TextGenSpec::default())
    }
}

impl GenSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ValidationError(format!("spec: {e}")).into())
    }

    pub fn generate(&self) -> Result<Splits> {
        match self {
            GenSpec::Text(s) => s.validate(),
            GenSpec::Graph(s) => s.validate(),
        }
        .map_err(|e| ValidationError(e.to_string()))?;
        Ok(match self {
            GenSpec::Text(s) => gen_text(s)?,
            GenSpec::Graph(s) => gen_graphs(s)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub split: String,
    pub path: String,
    pub examples: usize,
    pub sha256: String,
}

/// `manifest.json` written next to generated splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: GenSpec,
    pub files: Vec<ManifestFile>,
}

/// Writes `train.jsonl`, `dev.jsonl`, `test.jsonl` and `manifest.json` into
/// `out_dir`.
pub fn cmd_gen_data(spec: &GenSpec, out_dir: &Path) -> Result<Manifest> {
    let splits = spec.generate()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut files = vec![];
    for (name, examples) in splits.named() {
        let file = format!("{name}.jsonl");
        let path = out_dir.join(&file);
        write_jsonl(examples, &path)?;
        let bytes = fs::read(&path).with_context(|| format!("reading back {}", path.display()))?;
        files.push(ManifestFile {
            split: name.into(),
            path: file,
            examples: examples.len(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        spec: spec.clone(),
        files,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

fn modality(cfg: &RunConfig, splits: &Splits) -> Result<Modality> {
    Ok(match &cfg.data {
        DataSource::Text { spec } => Modality::Text {
            vocab_size: spec.vocab_size,
        },
        DataSource::Graph { spec } => Modality::Graph {
            feature_dim: spec.row_width(),
        },
        DataSource::Files { .. } => {
            Modality::infer(splits.train.iter().chain(&splits.dev).chain(&splits.test))
                .map_err(|e| ValidationError(e.to_string()))?
        }
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One `metrics.csv` row. Dev columns are empty on epochs without evaluation.
pub fn metrics_row(r: &EpochRecord) -> String {
    let mut row = format!("{},{},{}", r.epoch, r.pred_loss, r.ext_loss);
    match &r.dev {
        Some(d) => write!(
            row,
            ",{},{},{},{},{},{}",
            d.s,
            d.acc,
            fmt_opt(d.p),
            fmt_opt(d.r),
            fmt_opt(d.f1),
            d.mean_norm
        ),
        None => write!(row, ",,,,,,"),
    }
    .expect("write to string");
    row
}

/// Test-split metrics written to `final.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub split: String,
    pub epochs: usize,
    #[serde(flatten)]
    pub metrics: MetricsRecord,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub records: Vec<EpochRecord>,
    pub test: MetricsRecord,
    pub game: Game,
}

/// Trains the game described by `cfg` and writes its run directory.
///
/// On a numerical failure the config, the metrics rows so far and a `FAILED`
/// marker are left behind.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.resolve()?;
    let splits = cfg.data.load().map_err(|e| ValidationError(format!("{e:#}")))?;
    if splits.test.is_empty() {
        bail!(ValidationError("test split is empty".into()));
    }
    let mut game = Game::new(cfg.game.clone(), modality(&cfg, &splits)?)?;

    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for stale in [FAILURE_FILE, FINAL_FILE, PARAMS_FILE] {
        let _ = fs::remove_file(dir.join(stale));
    }
    write_file(&dir.join(CONFIG_FILE), cfg.snapshot())?;
    let metrics_path = dir.join(METRICS_FILE);
    let mut metrics = File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    writeln!(metrics, "{METRICS_HEADER}")?;

    let mut records = vec![];
    let epochs = cfg.game.epochs;
    for epoch in 1..=epochs {
        let step = train_epoch(&mut game, &splits.train, epoch).and_then(|mut r| {
            if !splits.dev.is_empty() && (epoch % cfg.eval_every == 0 || epoch == epochs) {
                r.dev = Some(evaluate(&game, &splits.dev)?);
            }
            Ok(r)
        });
        let record = match step {
            Ok(r) => r,
            Err(e) if e.is_numerical() => {
                write_file(&dir.join(FAILURE_FILE), format!("epoch {epoch}: {e}\n"))?;
                return Err(anyhow::Error::new(e).context(format!("training aborted in epoch {epoch}")));
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(metrics, "{}", metrics_row(&record))?;
        metrics.flush()?;
        records.push(record);
    }

    checkpoint::save(&game, &dir.join(PARAMS_FILE))?;
    let test = evaluate(&game, &splits.test)?;
    let fin = FinalRecord {
        split: "test".into(),
        epochs,
        metrics: test,
    };
    let mut json = serde_json::to_string_pretty(&fin)?;
    json.push('\n');
    write_file(&dir.join(FINAL_FILE), json)?;
    Ok(TrainOutcome {
        run_dir: dir,
        records,
        test,
        game,
    })
}

/// Rebuilds the trained game and its data from a run directory.
pub fn load_run(dir: &Path) -> Result<(RunConfig, Game, Splits)> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path)
        .map_err(|e| ValidationError(format!("missing run artifact {}: {e}", cfg_path.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    cfg.resolve()?;
    let params = dir.join(PARAMS_FILE);
    if !params.is_file() {
        bail!(ValidationError(format!("missing run artifact {}", params.display())));
    }
    let splits = cfg.data.load().map_err(|e| ValidationError(format!("{e:#}")))?;
    let mut game = Game::new(cfg.game.clone(), modality(&cfg, &splits)?)?;
    checkpoint::load(&mut game, &params)?;
    Ok((cfg, game, splits))
}

fn pick<'a>(splits: &'a Splits, split: &str) -> Result<&'a [Example]> {
    splits
        .named()
        .into_iter()
        .find(|(n, _)| *n == split)
        .map(|(_, e)| e)
        .ok_or_else(|| ValidationError(format!("unknown split `{split}` (expected train, dev or test)")).into())
}

/// Noise-free evaluation of a trained run on `split`; also writes
/// `eval_<split>.json` into the run directory.
pub fn cmd_eval(dir: &Path, split: &str) -> Result<MetricsRecord> {
    let (_, game, splits) = load_run(dir)?;
    let examples = pick(&splits, split)?;
    if examples.is_empty() {
        bail!(ValidationError(format!("split `{split}` is empty")));
    }
    let m = evaluate(&game, examples)?;
    let mut json = serde_json::to_string_pretty(&m)?;
    json.push('\n');
    write_file(&dir.join(format!("eval_{split}.json")), json)?;
    Ok(m)
}

/// Degradation curve of the trained predictor on the test split, written to
/// `degradation.csv`.
pub fn cmd_diagnose(dir: &Path) -> Result<DegradationCurve> {
    let (cfg, game, splits) = load_run(dir)?;
    if splits.test.iter().any(|e| e.rationale.is_none()) {
        bail!(ValidationError("diagnose needs gold rationales on every test example".into()));
    }
    let rng = Rng::with_stream(cfg.game.seed, DIAGNOSE_STREAM);
    let curve = degradation_sweep(&game, &splits.test, &default_grid(), &rng)?;
    write_file(&dir.join(DEGRADATION_FILE), curve.to_csv())?;
    Ok(curve)
}

/// Runs every oracle check; fails with a numerical error if any check fails.
pub fn cmd_oracles(seed: u64) -> (Vec<CheckReport>, Result<()>) {
    let reports = run_all(seed);
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let verdict = if failed.is_empty() {
        Ok(())
    } else {
        Err(NumericalFailure(format!("failed checks: {}", failed.join(", "))).into())
    };
    (reports, verdict)
}

/// Finite-difference suite over every autodiff operation.
pub fn cmd_grad_check(seed: u64, instances: usize) -> Result<(Vec<OpReport>, Result<()>)> {
    let reports = run_suite(seed, instances)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.op).collect();
    let verdict = if failed.is_empty() {
        Ok(())
    } else {
        Err(NumericalFailure(format!("failed operations: {}", failed.join(", "))).into())
    };
    Ok((reports, verdict))
}
