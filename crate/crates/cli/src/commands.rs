use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use farfield::featkit::{write_archive, Fbank, FbankConfig};
use farfield::kws::{
    decide, evaluate, format_scores, read_score_file, spot, threshold_at_ca, write_score_file, Decision, KeywordModel,
};
use farfield::netcore::{load_checkpoint, save_checkpoint, ModelSpec, Network};
use farfield::pipeline::experiments::{ablation_ladder, LadderConfig};
use farfield::pipeline::{
    adapt, distill, kws_scores, synth_many, train, Criterion, Dataset, FrontEnd, Manifest, Record,
    SynthTaskSpec, TrainConfig, TrainOutput,
};
use farfield::seeding::utterance_rng;
use farfield::simkit::SimConfig;
use farfield::simkit::wav::{read_wav, write_wav};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::config::{apply_override, from_snapshot, resolve};
use crate::{Command, Common, EXIT_CONFIG, EXIT_RUNTIME, EXIT_USAGE};

pub struct CmdError {
    pub code: u8,
    pub error: anyhow::Error,
}

type Result<T> = std::result::Result<T, CmdError>;

trait Code<T> {
    fn code(self, code: u8) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for std::result::Result<T, E> {
    fn code(self, code: u8) -> Result<T> {
        self.map_err(|e| CmdError { code, error: e.into() })
    }
}

fn fail<T>(code: u8, msg: String) -> Result<T> {
    Err(CmdError {
        code,
        error: anyhow!(msg),
    })
}

// ---------- command configurations ----------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Keyword,
    Phone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCmd {
    pub seed: u64,
    pub preset: Preset,
    pub count: usize,
    /// Utterance ids are `{prefix}{index:06}`.
    pub prefix: String,
    pub positive_ratio: f64,
    /// Analysis frame layout used for the 10 ms frame labels.
    pub fbank: FbankConfig,
}

impl Default for SynthCmd {
    fn default() -> Self {
        Self {
            seed: 1,
            preset: Preset::Keyword,
            count: 100,
            prefix: "utt".into(),
            positive_ratio: 0.5,
            fbank: FbankConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturizeCmd {
    pub seed: u64,
    pub frontend: FrontEnd,
}

impl Default for FeaturizeCmd {
    fn default() -> Self {
        Self {
            seed: 1,
            frontend: FrontEnd::new(16, 8, 3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmd {
    pub seed: u64,
    /// Used for WAV manifests; a `frontend.json` next to the manifest wins.
    pub frontend: FrontEnd,
    /// `input_dim = 0` takes the dimension from the data.
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl Default for TrainCmd {
    fn default() -> Self {
        Self {
            seed: 1,
            frontend: FrontEnd::new(16, 8, 3),
            model: ModelSpec::new(0, 2, 48, 24, 5).with_peepholes(true),
            train: TrainConfig::new(Criterion::Ctc { blank: 0 }, 1.0, 20, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillCmd {
    pub seed: u64,
    pub frontend: FrontEnd,
    pub student: ModelSpec,
    pub train: TrainConfig,
}

impl Default for DistillCmd {
    fn default() -> Self {
        Self {
            seed: 1,
            frontend: FrontEnd::new(16, 8, 3),
            student: ModelSpec::new(0, 1, 16, 8, 5).with_peepholes(true),
            train: TrainConfig::new(Criterion::SoftCe { lambda: 1.0 }, 0.3, 20, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptCmd {
    pub seed: u64,
    pub frontend: FrontEnd,
    pub train: TrainConfig,
}

impl Default for AdaptCmd {
    fn default() -> Self {
        Self {
            seed: 1,
            frontend: FrontEnd::new(16, 1, 1),
            train: TrainConfig::new(Criterion::TsAdapt, 0.2, 8, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotCmd {
    pub seed: u64,
    pub threshold: f64,
    pub keyword: KeywordModel,
    /// Used when the model directory has no `frontend.json`.
    pub frontend: FrontEnd,
}

impl Default for SpotCmd {
    fn default() -> Self {
        Self {
            seed: 1,
            threshold: 0.5,
            keyword: KeywordModel::two_unit(),
            frontend: FrontEnd::new(16, 8, 3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCmd {
    pub seed: u64,
    pub target_ca: f64,
    /// Fixed threshold; replaces the `target_ca` operating point when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Default for EvalCmd {
    fn default() -> Self {
        Self {
            seed: 1,
            target_ca: 0.96,
            threshold: None,
        }
    }
}

// ---------- provenance ----------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub argv: Vec<String>,
    /// Input files by role, as absolute paths.
    pub inputs: BTreeMap<String, PathBuf>,
    /// Resolved configuration, TOML.
    pub config: String,
}

type Inputs = BTreeMap<String, PathBuf>;

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p)
        .with_context(|| format!("input {} not found", p.display()))
        .code(EXIT_RUNTIME)
}

fn input<'a>(inputs: &'a Inputs, key: &str) -> Result<&'a Path> {
    match inputs.get(key) {
        Some(p) => Ok(p),
        None => fail(EXIT_CONFIG, format!("provenance is missing input `{key}`")),
    }
}

/// Output directory: created if absent; a non-empty one needs `force`.
fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        if !out.is_dir() {
            return fail(EXIT_USAGE, format!("{} exists and is not a directory", out.display()));
        }
        let non_empty = std::fs::read_dir(out).code(EXIT_RUNTIME)?.next().is_some();
        if non_empty && !force {
            return fail(
                EXIT_USAGE,
                format!("output directory {} is not empty; pass --force to write into it", out.display()),
            );
        }
    }
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .code(EXIT_RUNTIME)
}

fn require_out(out: Option<&PathBuf>, cmd: &str) -> Result<PathBuf> {
    match out {
        Some(o) => Ok(o.clone()),
        None => fail(EXIT_USAGE, format!("`{cmd}` needs --out")),
    }
}

fn write_provenance(out: Option<&Path>, prov: &Provenance) -> Result<()> {
    let text = serde_json::to_string_pretty(prov).code(EXIT_RUNTIME)?;
    match out {
        Some(dir) => std::fs::write(dir.join("provenance.json"), text + "\n").code(EXIT_RUNTIME),
        None => {
            eprintln!("{text}");
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).code(EXIT_RUNTIME)?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .code(EXIT_RUNTIME)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .code(EXIT_RUNTIME)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .code(EXIT_CONFIG)
}

/// Resolves a command config. `--seed` replaces the top-level `seed`.
fn resolve_cmd<T: Serialize + DeserializeOwned>(defaults: &T, common: &Common) -> Result<T> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    let (v, _) = resolve(defaults, common.config.as_deref(), &overrides).code(EXIT_CONFIG)?;
    Ok(v)
}

fn snapshot<T: Serialize>(v: &T) -> Result<String> {
    Ok(Table::try_from(v).code(EXIT_RUNTIME)?.to_string())
}

struct Invocation {
    command: &'static str,
    argv: Vec<String>,
    workers: usize,
}

impl Invocation {
    fn provenance(&self, seed: u64, inputs: &Inputs, config: String) -> Provenance {
        Provenance {
            command: self.command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            argv: self.argv.clone(),
            inputs: inputs.clone(),
            config,
        }
    }
}

fn load_manifest(p: &Path) -> Result<Manifest> {
    Manifest::load(p).code(EXIT_RUNTIME)
}

/// A `frontend.json` next to `file` overrides the configured front-end.
fn sibling_frontend(file: &Path, configured: &FrontEnd) -> Result<FrontEnd> {
    let side = file.parent().unwrap_or(Path::new(".")).join("frontend.json");
    if side.is_file() {
        read_json(&side)
    } else {
        Ok(configured.clone())
    }
}

fn load_model(p: &Path) -> Result<Network<f32>> {
    load_checkpoint(p)
        .with_context(|| format!("loading model {}", p.display()))
        .code(EXIT_RUNTIME)
}

// ---------- dispatch ----------

pub fn run(cmd: Command) -> Result<()> {
    let argv: Vec<String> = std::env::args().collect();
    match cmd {
        Command::Rerun { provenance, out, force } => rerun(&provenance, &out, force, argv),
        other => {
            let (name, common) = common_of(&other);
            let workers = common.workers.unwrap_or(1);
            if workers == 0 {
                return fail(EXIT_USAGE, "--workers must be at least 1".into());
            }
            let inv = Invocation {
                command: name,
                argv,
                workers,
            };
            with_pool(workers, || dispatch(other, inv))
        }
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .code(EXIT_RUNTIME)?;
    pool.install(f)
}

fn common_of(cmd: &Command) -> (&'static str, Common) {
    match cmd {
        Command::Synth { common } => ("synth", common.clone()),
        Command::Simulate { common, .. } => ("simulate", common.clone()),
        Command::Featurize { common, .. } => ("featurize", common.clone()),
        Command::Train { common, .. } => ("train", common.clone()),
        Command::Distill { common, .. } => ("distill", common.clone()),
        Command::Adapt { common, .. } => ("adapt", common.clone()),
        Command::Spot { common, .. } => ("spot", common.clone()),
        Command::Eval { common, .. } => ("eval", common.clone()),
        Command::Ladder { common } => ("ladder", common.clone()),
        Command::Rerun { .. } => ("rerun", Common::default()),
    }
}

fn one_input(key: &str, p: &Path) -> Result<Inputs> {
    Ok(BTreeMap::from([(key.to_string(), absolute(p)?)]))
}

fn dispatch(cmd: Command, inv: Invocation) -> Result<()> {
    match cmd {
        Command::Synth { common } => {
            let cfg = resolve_cmd(&SynthCmd::default(), &common)?;
            let out = require_out(common.out.as_ref(), "synth")?;
            prepare_out(&out, common.force)?;
            run_synth(&cfg, &Inputs::new(), &out, &inv)
        }
        Command::Simulate { common, input } => {
            let (cfg, seed, base) = resolve_sim(&common)?;
            let out = require_out(common.out.as_ref(), "simulate")?;
            let mut inputs = one_input("manifest", &input)?;
            inputs.insert("config_dir".into(), absolute(&base)?);
            prepare_out(&out, common.force)?;
            run_simulate(&cfg, seed, &inputs, &out, &inv)
        }
        Command::Featurize { common, input } => {
            let cfg = resolve_cmd(&FeaturizeCmd::default(), &common)?;
            let out = require_out(common.out.as_ref(), "featurize")?;
            let inputs = one_input("manifest", &input)?;
            prepare_out(&out, common.force)?;
            run_featurize(&cfg, &inputs, &out, &inv)
        }
        Command::Train { common, input } => {
            let cfg = resolve_cmd(&TrainCmd::default(), &common)?;
            let out = require_out(common.out.as_ref(), "train")?;
            let inputs = one_input("manifest", &input)?;
            prepare_out(&out, common.force)?;
            run_train(&cfg, &inputs, &out, &inv)
        }
        Command::Distill { common, input, teacher } => {
            let cfg = resolve_cmd(&DistillCmd::default(), &common)?;
            let out = require_out(common.out.as_ref(), "distill")?;
            let mut inputs = one_input("manifest", &input)?;
            inputs.insert("teacher".into(), absolute(&teacher)?);
            prepare_out(&out, common.force)?;
            run_distill(&cfg, &inputs, &out, &inv)
        }
        Command::Adapt { common, input, teacher } => {
            let cfg = resolve_cmd(&AdaptCmd::default(), &common)?;
            let out = require_out(common.out.as_ref(), "adapt")?;
            let mut inputs = one_input("manifest", &input)?;
            inputs.insert("teacher".into(), absolute(&teacher)?);
            prepare_out(&out, common.force)?;
            run_adapt(&cfg, &inputs, &out, &inv)
        }
        Command::Spot {
            mut common,
            model,
            input,
            threshold,
        } => {
            if let Some(t) = threshold {
                common.overrides.push(format!("threshold={t:?}"));
            }
            let cfg = resolve_cmd(&SpotCmd::default(), &common)?;
            let mut inputs = one_input("model", &model)?;
            inputs.insert("input".into(), absolute(&input)?);
            if let Some(o) = &common.out {
                prepare_out(o, common.force)?;
            }
            run_spot(&cfg, &inputs, common.out.as_deref(), &inv)
        }
        Command::Eval {
            mut common,
            scores,
            target_ca,
            threshold,
        } => {
            if let Some(c) = target_ca {
                common.overrides.push(format!("target_ca={c:?}"));
            }
            if let Some(t) = threshold {
                common.overrides.push(format!("threshold={t:?}"));
            }
            let cfg = resolve_cmd(&EvalCmd::default(), &common)?;
            let inputs = one_input("scores", &scores)?;
            if let Some(o) = &common.out {
                prepare_out(o, common.force)?;
            }
            run_eval(&cfg, &inputs, common.out.as_deref(), &inv)
        }
        Command::Ladder { common } => {
            let cfg = resolve_cmd(&LadderConfig::desk_scale(), &common)?;
            let out = require_out(common.out.as_ref(), "ladder")?;
            prepare_out(&out, common.force)?;
            run_ladder(&cfg, &Inputs::new(), &out, &inv)
        }
        Command::Rerun { .. } => unreachable!("handled in run"),
    }
}

fn rerun(path: &Path, out: &Path, force: bool, argv: Vec<String>) -> Result<()> {
    let prov: Provenance = read_json(path)?;
    let inv = Invocation {
        command: match prov.command.as_str() {
            "synth" => "synth",
            "simulate" => "simulate",
            "featurize" => "featurize",
            "train" => "train",
            "distill" => "distill",
            "adapt" => "adapt",
            "spot" => "spot",
            "eval" => "eval",
            "ladder" => "ladder",
            other => return fail(EXIT_CONFIG, format!("unknown command `{other}` in provenance")),
        },
        argv,
        workers: 1,
    };
    fn cfg<T: DeserializeOwned>(p: &Provenance) -> Result<T> {
        from_snapshot(&p.config).code(EXIT_CONFIG)
    }
    prepare_out(out, force)?;
    let inputs = &prov.inputs;
    match inv.command {
        "synth" => run_synth(&cfg(&prov)?, inputs, out, &inv),
        "simulate" => {
            let mut table: Table = prov.config.parse().code(EXIT_CONFIG)?;
            table.remove("seed");
            let sim: SimConfig = Value::Table(table).try_into().code(EXIT_CONFIG)?;
            run_simulate(&sim, prov.seed, inputs, out, &inv)
        }
        "featurize" => run_featurize(&cfg(&prov)?, inputs, out, &inv),
        "train" => run_train(&cfg(&prov)?, inputs, out, &inv),
        "distill" => run_distill(&cfg(&prov)?, inputs, out, &inv),
        "adapt" => run_adapt(&cfg(&prov)?, inputs, out, &inv),
        "spot" => run_spot(&cfg(&prov)?, inputs, Some(out), &inv),
        "eval" => run_eval(&cfg(&prov)?, inputs, Some(out), &inv),
        _ => run_ladder(&cfg(&prov)?, inputs, out, &inv),
    }
}

// ---------- synth ----------

fn run_synth(cfg: &SynthCmd, inputs: &Inputs, out: &Path, inv: &Invocation) -> Result<()> {
    let mut task = match cfg.preset {
        Preset::Keyword => SynthTaskSpec::keyword_task(cfg.seed),
        Preset::Phone => SynthTaskSpec::phone_task(cfg.seed),
    };
    task.positive_ratio = cfg.positive_ratio;
    task.validate().code(EXIT_CONFIG)?;
    cfg.fbank.validate().code(EXIT_CONFIG)?;
    let fb = Fbank::new(&cfg.fbank).code(EXIT_CONFIG)?;
    let utts = synth_many(&task, &cfg.prefix, cfg.count).code(EXIT_RUNTIME)?;
    let wav_dir = out.join("wav");
    std::fs::create_dir_all(&wav_dir).code(EXIT_RUNTIME)?;
    let (win, hop) = (cfg.fbank.window_samples(), cfg.fbank.hop_samples());
    let records = utts
        .par_iter()
        .map(|u| {
            let path = wav_dir.join(format!("{}.wav", u.id));
            write_wav(&path, &u.waveform).code(EXIT_RUNTIME)?;
            let frames = fb.frame_count(u.waveform.len());
            Ok(Record {
                id: u.id.clone(),
                path,
                positive: Some(u.positive),
                transcript: Some(u.transcript.clone()),
                frame_labels: Some(u.frame_labels(task.labels, win, hop, frames)),
                source: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(records).code(EXIT_RUNTIME)?;
    manifest.save(out.join("manifest.txt")).code(EXIT_RUNTIME)?;
    write_json(&out.join("task.json"), &task)?;
    write_provenance(Some(out), &inv.provenance(cfg.seed, inputs, snapshot(cfg)?))?;
    println!("wrote {} utterances to {}", manifest.len(), out.display());
    Ok(())
}

// ---------- simulate ----------

/// Simulation configs are the simulator's own TOML plus an optional
/// top-level `seed`.
fn resolve_sim(common: &Common) -> Result<(SimConfig, u64, PathBuf)> {
    let path = match &common.config {
        Some(p) => p,
        None => return fail(EXIT_CONFIG, "`simulate` needs --config with a room description".into()),
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .code(EXIT_CONFIG)?;
    let mut table: Table = text
        .parse()
        .with_context(|| format!("parsing {}", path.display()))
        .code(EXIT_CONFIG)?;
    for o in &common.overrides {
        apply_override(&mut table, o).code(EXIT_CONFIG)?;
    }
    let seed = match table.remove("seed") {
        None => 0,
        Some(Value::Integer(s)) if s >= 0 => s as u64,
        Some(v) => return fail(EXIT_CONFIG, format!("`seed` must be a non-negative integer, got {v}")),
    };
    let seed = common.seed.unwrap_or(seed);
    let cfg: SimConfig = Value::Table(table)
        .try_into()
        .context("invalid simulation config")
        .code(EXIT_CONFIG)?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, seed, base))
}

fn run_simulate(cfg: &SimConfig, seed: u64, inputs: &Inputs, out: &Path, inv: &Invocation) -> Result<()> {
    let manifest = load_manifest(input(inputs, "manifest")?)?;
    let sim = cfg.load(input(inputs, "config_dir")?).code(EXIT_CONFIG)?;
    let wav_dir = out.join("wav");
    std::fs::create_dir_all(&wav_dir).code(EXIT_RUNTIME)?;
    let results = manifest
        .records
        .par_iter()
        .map(|r| {
            let clean = read_wav(&r.path).code(EXIT_RUNTIME)?;
            let s = sim.run(&clean, &mut utterance_rng(seed, &r.id)).code(EXIT_RUNTIME)?;
            let path = wav_dir.join(format!("{}.wav", r.id));
            write_wav(&path, &s.waveform).code(EXIT_RUNTIME)?;
            let rec = Record {
                path,
                source: Some(r.path.clone()),
                ..r.clone()
            };
            let info = format!("{} {} {} {}\n", r.id, s.delay, s.noise_gain, s.clipped);
            Ok((rec, info))
        })
        .collect::<Result<Vec<_>>>()?;
    let (records, info): (Vec<Record>, Vec<String>) = results.into_iter().unzip();
    Manifest::new(records)
        .code(EXIT_RUNTIME)?
        .save(out.join("manifest.txt"))
        .code(EXIT_RUNTIME)?;
    let mut table = String::from("# id delay_samples noise_gain clipped_samples\n");
    table.extend(info);
    std::fs::write(out.join("simulation.txt"), table).code(EXIT_RUNTIME)?;
    let mut snap = Table::try_from(cfg).code(EXIT_RUNTIME)?;
    snap.insert("seed".into(), Value::Integer(seed as i64));
    write_provenance(Some(out), &inv.provenance(seed, inputs, snap.to_string()))?;
    println!("simulated {} utterances into {}", manifest.len(), out.display());
    Ok(())
}

// ---------- featurize ----------

fn run_featurize(cfg: &FeaturizeCmd, inputs: &Inputs, out: &Path, inv: &Invocation) -> Result<()> {
    let manifest = load_manifest(input(inputs, "manifest")?)?;
    if manifest.records.iter().any(|r| r.path.extension().is_some_and(|e| e == "fea")) {
        return fail(EXIT_RUNTIME, "manifest already holds feature archives".into());
    }
    cfg.frontend.fbank.validate().code(EXIT_CONFIG)?;
    let data = Dataset::from_manifest(&manifest, &cfg.frontend).code(EXIT_RUNTIME)?;
    let dir = out.join("fea");
    std::fs::create_dir_all(&dir).code(EXIT_RUNTIME)?;
    let records = data
        .examples()
        .par_iter()
        .map(|e| {
            let path = dir.join(format!("{}.fea", e.id));
            write_archive(&path, &e.features).code(EXIT_RUNTIME)?;
            let source = match &e.source {
                Some(s) => {
                    let p = dir.join(format!("{}.source.fea", e.id));
                    write_archive(&p, s).code(EXIT_RUNTIME)?;
                    Some(p)
                }
                None => None,
            };
            Ok(Record {
                id: e.id.clone(),
                path,
                positive: e.positive,
                transcript: e.transcript.clone(),
                frame_labels: e.frame_labels.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Manifest::new(records)
        .code(EXIT_RUNTIME)?
        .save(out.join("manifest.txt"))
        .code(EXIT_RUNTIME)?;
    write_json(&out.join("frontend.json"), &cfg.frontend)?;
    write_provenance(Some(out), &inv.provenance(cfg.seed, inputs, snapshot(cfg)?))?;
    println!("featurized {} utterances into {}", data.len(), out.display());
    Ok(())
}

// ---------- training ----------

fn training_data(inputs: &Inputs, fe: &FrontEnd) -> Result<(Dataset, FrontEnd)> {
    let path = input(inputs, "manifest")?;
    let fe = sibling_frontend(path, fe)?;
    let data = Dataset::from_manifest(&load_manifest(path)?, &fe).code(EXIT_RUNTIME)?;
    if data.is_empty() {
        return fail(EXIT_RUNTIME, "training manifest is empty".into());
    }
    Ok((data, fe))
}

/// Runtime-only settings, kept out of the recorded configuration.
fn runtime_train(cfg: &TrainConfig, seed: u64, out: &Path, inv: &Invocation) -> TrainConfig {
    let mut t = cfg.clone();
    t.seed = seed;
    t.workers = inv.workers;
    t.checkpoint_dir = Some(out.join("checkpoints"));
    t
}

fn with_input_dim(mut spec: ModelSpec, data: &Dataset) -> ModelSpec {
    if spec.input_dim == 0 {
        spec.input_dim = data.input_dim().unwrap_or(0);
    }
    spec
}

fn finish_training(output: &TrainOutput, fe: &FrontEnd, out: &Path) -> Result<()> {
    save_checkpoint(out.join("model.ckpt"), &output.net).code(EXIT_RUNTIME)?;
    write_json(&out.join("frontend.json"), fe)?;
    if let Some(last) = output.log.last() {
        println!(
            "epoch {} loss {:.6} over {} frames; model written to {}",
            last.epoch,
            last.loss,
            last.frames,
            out.join("model.ckpt").display()
        );
    }
    Ok(())
}

fn run_train(cfg: &TrainCmd, inputs: &Inputs, out: &Path, inv: &Invocation) -> Result<()> {
    if matches!(cfg.train.criterion, Criterion::SoftCe { .. } | Criterion::TsAdapt) {
        return fail(EXIT_CONFIG, "`train` takes hard_ce or ctc; use `distill` or `adapt` for teacher/student criteria".into());
    }
    let (data, fe) = training_data(inputs, &cfg.frontend)?;
    let spec = with_input_dim(cfg.model.clone(), &data);
    let net = Network::init(spec, &mut utterance_rng(cfg.seed, "train-init")).code(EXIT_CONFIG)?;
    let tc = runtime_train(&cfg.train, cfg.seed, out, inv);
    let output = train(net, &data, None, &tc).code(EXIT_RUNTIME)?;
    finish_training(&output, &fe, out)?;
    write_provenance(Some(out), &inv.provenance(cfg.seed, inputs, snapshot(cfg)?))
}

fn run_distill(cfg: &DistillCmd, inputs: &Inputs, out: &Path, inv: &Invocation) -> Result<()> {
    let teacher = load_model(input(inputs, "teacher")?)?;
    let (data, fe) = training_data(inputs, &cfg.frontend)?;
    let spec = with_input_dim(cfg.student.clone(), &data);
    let tc = runtime_train(&cfg.train, cfg.seed, out, inv);
    let output = distill(&teacher, spec, &data, &tc).code(EXIT_RUNTIME)?;
    finish_training(&output, &fe, out)?;
    write_provenance(Some(out), &inv.provenance(cfg.seed, inputs, snapshot(cfg)?))
}

fn run_adapt(cfg: &AdaptCmd, inputs: &Inputs, out: &Path, inv: &Invocation) -> Result<()> {
    let teacher = load_model(input(inputs, "teacher")?)?;
    let (data, fe) = training_data(inputs, &cfg.frontend)?;
    let tc = runtime_train(&cfg.train, cfg.seed, out, inv);
    let output = adapt(&teacher, &data, &tc).code(EXIT_RUNTIME)?;
    finish_training(&output, &fe, out)?;
    write_provenance(Some(out), &inv.provenance(cfg.seed, inputs, snapshot(cfg)?))
}

// ---------- spot / eval ----------

#[derive(Serialize)]
struct SpotResult {
    id: String,
    score: f64,
    segment: [usize; 2],
    decision: Decision,
    threshold: f64,
}

fn run_spot(cfg: &SpotCmd, inputs: &Inputs, out: Option<&Path>, inv: &Invocation) -> Result<()> {
    let model_path = input(inputs, "model")?;
    let net = load_model(model_path)?;
    cfg.keyword.validate(Some(net.spec().output_dim)).code(EXIT_CONFIG)?;
    let fe = sibling_frontend(model_path, &cfg.frontend)?;
    let path = input(inputs, "input")?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
        let wave = read_wav(path).code(EXIT_RUNTIME)?;
        let fb = Fbank::new(&fe.fbank).code(EXIT_CONFIG)?;
        let feats = fe.compute(&fb, &wave).code(EXIT_RUNTIME)?;
        let post = net.posteriors(&feats).code(EXIT_RUNTIME)?;
        let det = spot(&post, &cfg.keyword).code(EXIT_RUNTIME)?;
        let decision = decide(&det, cfg.threshold);
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let line = format!(
            "{id} score {:.6} segment [{}, {}] decision {}",
            det.score,
            det.segment.0,
            det.segment.1,
            match decision {
                Decision::Accept => "accept",
                Decision::Reject => "reject",
            }
        );
        println!("{line}");
        if let Some(o) = out {
            let r = SpotResult {
                id,
                score: det.score,
                segment: [det.segment.0, det.segment.1],
                decision,
                threshold: cfg.threshold,
            };
            write_json(&o.join("spot.json"), &r)?;
        }
    } else {
        let manifest = load_manifest(path)?;
        let data = Dataset::from_manifest(&manifest, &fe).code(EXIT_RUNTIME)?;
        let scores = kws_scores(&net, &data, &cfg.keyword).code(EXIT_RUNTIME)?;
        match out {
            Some(o) => {
                write_score_file(o.join("scores.txt"), &scores).code(EXIT_RUNTIME)?;
                println!("scored {} utterances into {}", scores.len(), o.join("scores.txt").display());
            }
            None => print!("{}", format_scores(&scores)),
        }
    }
    write_provenance(out, &inv.provenance(cfg.seed, inputs, snapshot(cfg)?))
}

fn run_eval(cfg: &EvalCmd, inputs: &Inputs, out: Option<&Path>, inv: &Invocation) -> Result<()> {
    let scores = read_score_file(input(inputs, "scores")?).code(EXIT_RUNTIME)?;
    let threshold = match cfg.threshold {
        Some(t) => t,
        None => {
            if !(cfg.target_ca > 0.0 && cfg.target_ca <= 1.0) {
                return fail(EXIT_CONFIG, format!("target_ca must be in (0, 1], got {}", cfg.target_ca));
            }
            threshold_at_ca(&scores, cfg.target_ca).code(EXIT_RUNTIME)?
        }
    };
    let report = evaluate(&scores, threshold).with_roc(&scores);
    let text = report.to_text();
    match out {
        Some(o) => {
            std::fs::write(o.join("report.txt"), &text).code(EXIT_RUNTIME)?;
            write_json(&o.join("report.json"), &report)?;
            println!("threshold {:.6} CA {:.4} FA {:.4}", report.threshold, report.ca, report.fa);
        }
        None => print!("{text}"),
    }
    write_provenance(out, &inv.provenance(cfg.seed, inputs, snapshot(cfg)?))
}

// ---------- ladder ----------

fn run_ladder(cfg: &LadderConfig, inputs: &Inputs, out: &Path, inv: &Invocation) -> Result<()> {
    let mut run = cfg.clone();
    run.out_dir = Some(out.join("stages"));
    let report = ablation_ladder(&run).code(EXIT_RUNTIME)?;
    let text = report.to_text();
    std::fs::write(out.join("ladder.txt"), &text).code(EXIT_RUNTIME)?;
    write_json(&out.join("ladder.json"), &report)?;
    print!("{text}");
    write_provenance(Some(out), &inv.provenance(cfg.seed, inputs, snapshot(cfg)?))
}
