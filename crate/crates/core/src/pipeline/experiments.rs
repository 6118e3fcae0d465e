//! Desk-scale experiments: keyword-model compression by teacher/student
//! learning, far-field adaptation with parallel data, and the stage-by-stage
//! ablation ladder.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::data::{Dataset, FrontEnd};
use super::farsim::{far_field, FarFieldSpec, RoomBank};
use super::metrics::{frame_error_rate, kws_report, kws_scores};
use super::synth::{corpus_plan, synth_many, synth_utterance, LabelScheme, SynthTaskSpec, SynthUtterance};
use super::train::{adapt, distill, train, Criterion, TrainConfig};
use super::{PipelineError, Result};
use crate::kws::{EvalReport, KeywordModel};
use crate::netcore::{save_checkpoint, ModelSpec, Network};
use crate::seeding::utterance_rng;
use crate::simkit::{SimMode, Waveform};

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn init(spec: &ModelSpec, seed: u64, tag: &str) -> Result<Network<f32>> {
    Ok(Network::init(spec.clone(), &mut utterance_rng(seed, tag))?)
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        checkpoint_dir: None,
        ..cfg.clone()
    }
}

// ---------------------------------------------------------------------------
// Keyword-model compression

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KwsExperimentConfig {
    pub task: SynthTaskSpec,
    pub train_count: usize,
    pub test_count: usize,
    pub frontend: FrontEnd,
    pub keyword: KeywordModel,
    pub teacher: ModelSpec,
    pub student: ModelSpec,
    /// CTC training of the teacher and of the hard-label student.
    pub ctc: TrainConfig,
    /// Soft-target training of the distilled student.
    pub distill: TrainConfig,
    pub seeds: Vec<u64>,
    pub target_ca: f64,
}

impl KwsExperimentConfig {
    pub fn desk_scale() -> Self {
        let fe = FrontEnd::new(16, 8, 3);
        let dim = fe.output_dim();
        let mut ctc = TrainConfig::new(Criterion::Ctc { blank: 0 }, 1.0, 20, 0);
        ctc.lr_decay = 0.9;
        let mut distill = TrainConfig::new(Criterion::SoftCe { lambda: 1.0 }, 0.1, 20, 0);
        distill.lr_decay = 0.9;
        Self {
            task: SynthTaskSpec::keyword_task(2024),
            train_count: 2000,
            test_count: 1000,
            frontend: fe,
            keyword: KeywordModel::two_unit(),
            teacher: ModelSpec::new(dim, 2, 48, 24, 5).with_peepholes(true),
            student: ModelSpec::new(dim, 1, 16, 8, 5).with_peepholes(true),
            ctc,
            distill,
            seeds: vec![1, 2, 3],
            target_ca: 0.96,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.ctc.validate()?;
        self.distill.validate()?;
        self.keyword.validate(Some(self.teacher.output_dim))?;
        if self.seeds.is_empty() || self.train_count == 0 || self.test_count == 0 {
            return Err(PipelineError::Config("need seeds and non-empty train/test sets".into()));
        }
        if self.teacher.input_dim != self.frontend.output_dim() || self.student.input_dim != self.frontend.output_dim() {
            return Err(PipelineError::Config("model input_dim must match the front-end output".into()));
        }
        if self.teacher.output_dim != self.student.output_dim {
            return Err(PipelineError::OutputMismatch {
                teacher: self.teacher.output_dim,
                student: self.student.output_dim,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KwsRun {
    pub seed: u64,
    pub teacher: EvalReport,
    pub hard: EvalReport,
    pub distilled: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KwsExperimentReport {
    pub teacher_params: usize,
    pub student_params: usize,
    pub runs: Vec<KwsRun>,
    pub median_fa_teacher: f64,
    pub median_fa_hard: f64,
    pub median_fa_distilled: f64,
}

impl KwsExperimentReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# model params median_FA_at_target_CA\nteacher {} {:.4}\nstudent_hard {} {:.4}\nstudent_ts {} {:.4}\n# per seed: seed FA_teacher FA_hard FA_ts\n",
            self.teacher_params,
            self.median_fa_teacher,
            self.student_params,
            self.median_fa_hard,
            self.student_params,
            self.median_fa_distilled
        );
        for r in &self.runs {
            s.push_str(&format!("{} {:.4} {:.4} {:.4}\n", r.seed, r.teacher.fa, r.hard.fa, r.distilled.fa));
        }
        s
    }
}

fn kws_sets(cfg: &KwsExperimentConfig) -> Result<(Dataset, Dataset)> {
    let tr = synth_many(&cfg.task, "train", cfg.train_count)?;
    let te = synth_many(&cfg.task, "test", cfg.test_count)?;
    Ok((
        Dataset::from_synth(&tr, LabelScheme::Keyword, &cfg.frontend)?,
        Dataset::from_synth(&te, LabelScheme::Keyword, &cfg.frontend)?,
    ))
}

/// Teacher, hard-label student and distilled student per seed, compared by
/// FA at the target CA on held-out data. The corpus is shared across seeds;
/// seeds change initialization and presentation order.
pub fn kws_compression(cfg: &KwsExperimentConfig) -> Result<KwsExperimentReport> {
    cfg.validate()?;
    let (tr, te) = kws_sets(cfg)?;
    let eval = |net: &Network<f32>| -> Result<EvalReport> { kws_report(&kws_scores(net, &te, &cfg.keyword)?, cfg.target_ca) };
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let teacher = train(init(&cfg.teacher, seed, "teacher")?, &tr, None, &with_seed(&cfg.ctc, seed))?.net;
        let hard = train(init(&cfg.student, seed, "student")?, &tr, None, &with_seed(&cfg.ctc, seed))?.net;
        let ts = distill(&teacher, cfg.student.clone(), &tr.strip_labels(), &with_seed(&cfg.distill, seed))?.net;
        runs.push(KwsRun {
            seed,
            teacher: eval(&teacher)?,
            hard: eval(&hard)?,
            distilled: eval(&ts)?,
        });
    }
    let med = |f: fn(&KwsRun) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(KwsExperimentReport {
        teacher_params: crate::netcore::param_count(&cfg.teacher),
        student_params: crate::netcore::param_count(&cfg.student),
        median_fa_teacher: med(|r| r.teacher.fa),
        median_fa_hard: med(|r| r.hard.fa),
        median_fa_distilled: med(|r| r.distilled.fa),
        runs,
    })
}

// ---------------------------------------------------------------------------
// Far-field corpora shared by the adaptation experiment and the ladder

/// Phone-labelled corpora: clean training data for the teacher, a pool of
/// parallel clean/far-field pairs, and clean/far-field test sets.
pub struct FarFieldCorpus {
    pub clean_train: Dataset,
    /// Parallel pairs; features are far-field, `source` is close-talk.
    pub pairs: Dataset,
    pub test: Dataset,
}

fn simulate(bank: &RoomBank, task: &SynthTaskSpec, utts: &[SynthUtterance]) -> Result<Vec<Waveform>> {
    use rayon::prelude::*;
    utts.par_iter()
        .map(|u| Ok(far_field(bank, task, &u.id, &u.waveform)?.0))
        .collect()
}

/// Far-field test set (features far-field, `source` close-talk).
pub fn far_field_set(task: &SynthTaskSpec, sim: &FarFieldSpec, fe: &FrontEnd, prefix: &str, count: usize) -> Result<Dataset> {
    let clean = synth_many(task, prefix, count)?;
    let bank = RoomBank::new(sim)?;
    let far = simulate(&bank, task, &clean)?;
    Dataset::from_synth_pairs(&clean, Some(&far), task.labels, fe)
}

// ---------------------------------------------------------------------------
// Adaptation with parallel data

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptExperimentConfig {
    pub task: SynthTaskSpec,
    pub frontend: FrontEnd,
    pub simulation: FarFieldSpec,
    /// Clean utterances for the teacher.
    pub clean_count: usize,
    /// Parallel pairs in the smaller adaptation set; the larger one has twice
    /// as many.
    pub pair_count: usize,
    pub test_count: usize,
    pub teacher: ModelSpec,
    pub teacher_train: TrainConfig,
    pub adapt_train: TrainConfig,
    pub teacher_seed: u64,
    pub seeds: Vec<u64>,
    pub label_delay: usize,
}

impl AdaptExperimentConfig {
    pub fn desk_scale() -> Self {
        let task = SynthTaskSpec::phone_task(77);
        let fe = FrontEnd::new(16, 1, 1);
        let classes = task.num_classes();
        let mut teacher_train = TrainConfig::new(Criterion::HardCe, 0.2, 15, 0);
        teacher_train.label_delay = 5;
        teacher_train.lr_decay = 0.85;
        let mut adapt_train = TrainConfig::new(Criterion::TsAdapt, 0.2, 8, 0);
        adapt_train.lr_decay = 0.85;
        Self {
            task,
            frontend: fe.clone(),
            simulation: FarFieldSpec::single(5),
            clean_count: 600,
            pair_count: 300,
            test_count: 300,
            teacher: ModelSpec::new(fe.output_dim(), 2, 48, 24, classes).with_peepholes(true),
            teacher_train,
            adapt_train,
            teacher_seed: 1,
            seeds: vec![1, 2, 3, 4, 5],
            label_delay: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.simulation.validate()?;
        self.teacher_train.validate()?;
        self.adapt_train.validate()?;
        if self.task.labels != LabelScheme::Phone {
            return Err(PipelineError::Config("adaptation experiment needs a phone-labelled task".into()));
        }
        if self.seeds.is_empty() || self.pair_count == 0 || self.clean_count == 0 || self.test_count == 0 {
            return Err(PipelineError::Config("need seeds and non-empty corpora".into()));
        }
        if self.teacher.output_dim != self.task.num_classes() || self.teacher.input_dim != self.frontend.output_dim() {
            return Err(PipelineError::Config("teacher shape does not match task and front-end".into()));
        }
        Ok(())
    }

    pub fn corpus(&self, sim: &FarFieldSpec, pairs: usize) -> Result<FarFieldCorpus> {
        let clean = synth_many(&self.task, "clean", self.clean_count)?;
        let clean_train = Dataset::from_synth(&clean, LabelScheme::Phone, &self.frontend)?;
        let pairs = far_field_set(&self.task, sim, &self.frontend, "pair", pairs)?;
        let test = far_field_set(&self.task, sim, &self.frontend, "test", self.test_count)?;
        Ok(FarFieldCorpus {
            clean_train,
            pairs,
            test,
        })
    }

    pub fn train_teacher(&self, clean: &Dataset) -> Result<Network<f32>> {
        let cfg = TrainConfig {
            label_delay: self.label_delay,
            ..with_seed(&self.teacher_train, self.teacher_seed)
        };
        Ok(train(init(&self.teacher, self.teacher_seed, "am-teacher")?, clean, None, &cfg)?.net)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptRun {
    pub seed: u64,
    pub fer_half: f64,
    pub fer_full: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptExperimentReport {
    pub teacher_fer_clean: f64,
    pub teacher_fer_far: f64,
    pub runs: Vec<AdaptRun>,
    pub median_fer_half: f64,
    pub median_fer_full: f64,
}

impl AdaptExperimentReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "teacher FER clean {:.4}\nteacher FER far-field {:.4}\nadapted FER far-field, n pairs (median) {:.4}\nadapted FER far-field, 2n pairs (median) {:.4}\n# seed fer_n fer_2n\n",
            self.teacher_fer_clean, self.teacher_fer_far, self.median_fer_half, self.median_fer_full
        );
        for r in &self.runs {
            s.push_str(&format!("{} {:.4} {:.4}\n", r.seed, r.fer_half, r.fer_full));
        }
        s
    }
}

/// Seeded random subset of `n` examples.
fn subset(data: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut utterance_rng(seed, "subset"));
    Dataset::new(idx.into_iter().take(n).map(|i| data.examples()[i].clone()).collect())
}

/// Teacher trained on clean data, then adapted on `n` and `2n` parallel
/// pairs per seed. The smaller set is a seeded random half of the larger.
pub fn adaptation(cfg: &AdaptExperimentConfig) -> Result<AdaptExperimentReport> {
    cfg.validate()?;
    let corpus = cfg.corpus(&cfg.simulation, 2 * cfg.pair_count)?;
    let teacher = cfg.train_teacher(&corpus.clean_train)?;
    let d = cfg.label_delay;
    let clean_test = corpus.test.source_side()?;
    let teacher_fer_clean = frame_error_rate(&teacher, &clean_test, d)?;
    let teacher_fer_far = frame_error_rate(&teacher, &corpus.test, d)?;
    let pool = corpus.pairs.strip_labels();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let half = subset(&pool, cfg.pair_count, seed)?;
        let run = |data: &Dataset| -> Result<f64> {
            let net = adapt(&teacher, data, &with_seed(&cfg.adapt_train, seed))?.net;
            frame_error_rate(&net, &corpus.test, d)
        };
        runs.push(AdaptRun {
            seed,
            fer_half: run(&half)?,
            fer_full: run(&pool)?,
        });
    }
    Ok(AdaptExperimentReport {
        teacher_fer_clean,
        teacher_fer_far,
        median_fer_half: median(&runs.iter().map(|r| r.fer_half).collect::<Vec<_>>()),
        median_fer_full: median(&runs.iter().map(|r| r.fer_full).collect::<Vec<_>>()),
        runs,
    })
}

// ---------------------------------------------------------------------------
// Ablation ladder

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    /// Hard-label training on close-talk data only.
    CloseTalk,
    /// Hard-label fine-tuning of the close-talk model on simulated data.
    CeSimulated,
    /// Teacher/student adaptation of the close-talk model on parallel data.
    TsSimulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    /// The single factor that differs from the previous row.
    pub changed: String,
    pub kind: StageKind,
    /// Parallel pairs as a multiple of `AdaptExperimentConfig::pair_count`.
    #[serde(default = "one")]
    pub data_multiplier: usize,
    #[serde(default)]
    pub simulation: Option<SimMode>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub base: AdaptExperimentConfig,
    pub stages: Vec<StageSpec>,
    /// Seed of every stage's training run.
    pub seed: u64,
    /// Second-domain test set standing in for live recordings.
    pub live: FarFieldSpec,
    /// Checkpoints of every stage are written here when set.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl LadderConfig {
    pub fn desk_scale() -> Self {
        let stage = |name: &str, changed: &str, kind, mult, sim| StageSpec {
            name: name.into(),
            changed: changed.into(),
            kind,
            data_multiplier: mult,
            simulation: sim,
        };
        Self {
            base: AdaptExperimentConfig::desk_scale(),
            stages: vec![
                stage("close-talk CE", "baseline", StageKind::CloseTalk, 1, None),
                stage("CE, simulated", "training data: simulated far-field", StageKind::CeSimulated, 1, Some(SimMode::Single)),
                stage("T/S, simulated", "criterion: CE -> T/S", StageKind::TsSimulated, 1, Some(SimMode::Single)),
                stage("T/S, 2x data", "parallel data: n -> 2n", StageKind::TsSimulated, 2, Some(SimMode::Single)),
                stage("T/S, 2x beamformed sim", "simulation: single -> beamformed", StageKind::TsSimulated, 2, Some(SimMode::Beamformed)),
            ],
            seed: 7,
            live: FarFieldSpec::live(31),
            out_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub name: String,
    pub changed: String,
    pub seed: u64,
    pub fer_simulated: f64,
    pub fer_live: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub rows: Vec<LadderRow>,
    pub note: String,
}

const LADDER_NOTE: &str = "sequence-discriminative training stages are not implemented; the ladder stops after the T/S stages";

impl LadderReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# stage | changed factor | FER simulated | FER live | seed\n");
        for r in &self.rows {
            s.push_str(&format!("{} | {} | {:.4} | {:.4} | {}\n", r.name, r.changed, r.fer_simulated, r.fer_live, r.seed));
        }
        s.push_str(&format!("# {}\n", self.note));
        s
    }
}

/// Shared inputs of every ladder stage; built once per ladder.
pub struct LadderContext {
    pub clean_train: Dataset,
    pub teacher: Network<f32>,
    /// Simulated test set in the base simulation mode.
    pub test_sim: Dataset,
    pub test_live: Dataset,
}

impl LadderConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.live.validate()?;
        if self.stages.is_empty() {
            return Err(PipelineError::Config("ladder has no stages".into()));
        }
        if self.stages.iter().any(|s| s.data_multiplier == 0) {
            return Err(PipelineError::Config("data_multiplier must be at least 1".into()));
        }
        Ok(())
    }

    pub fn context(&self) -> Result<LadderContext> {
        let b = &self.base;
        let clean = synth_many(&b.task, "clean", b.clean_count)?;
        let clean_train = Dataset::from_synth(&clean, LabelScheme::Phone, &b.frontend)?;
        let teacher = b.train_teacher(&clean_train)?;
        let test_sim = far_field_set(&b.task, &b.simulation, &b.frontend, "test", b.test_count)?;
        let test_live = far_field_set(&b.task, &self.live, &b.frontend, "live", b.test_count)?;
        Ok(LadderContext {
            clean_train,
            teacher,
            test_sim,
            test_live,
        })
    }

    /// Parallel pairs for a stage: the first `multiplier * pair_count` ids of
    /// one fixed plan, so larger sets extend smaller ones.
    fn stage_pairs(&self, stage: &StageSpec) -> Result<Dataset> {
        let b = &self.base;
        let sim = FarFieldSpec {
            mode: stage.simulation.unwrap_or(b.simulation.mode),
            ..b.simulation.clone()
        };
        let n = stage.data_multiplier * b.pair_count;
        let plan = corpus_plan(&b.task, "pair", n);
        let clean = plan
            .iter()
            .map(|(id, p)| synth_utterance(&b.task, id, *p))
            .collect::<Result<Vec<_>>>()?;
        let bank = RoomBank::new(&sim)?;
        let far = simulate(&bank, &b.task, &clean)?;
        Dataset::from_synth_pairs(&clean, Some(&far), LabelScheme::Phone, &b.frontend)
    }

    /// Runs one stage from the shared context.
    pub fn run_stage(&self, ctx: &LadderContext, index: usize) -> Result<LadderRow> {
        let stage = self.stages.get(index).ok_or_else(|| PipelineError::Config(format!("no stage {index}")))?;
        let b = &self.base;
        let net = match stage.kind {
            StageKind::CloseTalk => ctx.teacher.clone(),
            StageKind::CeSimulated => {
                let cfg = TrainConfig {
                    criterion: Criterion::HardCe,
                    label_delay: b.label_delay,
                    ..with_seed(&b.adapt_train, self.seed)
                };
                train(ctx.teacher.clone(), &self.stage_pairs(stage)?, None, &cfg)?.net
            }
            StageKind::TsSimulated => {
                let data = self.stage_pairs(stage)?.strip_labels();
                adapt(&ctx.teacher, &data, &with_seed(&b.adapt_train, self.seed))?.net
            }
        };
        let checkpoint = match &self.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let p = dir.join(format!("stage{}.ckpt", index + 1));
                save_checkpoint(&p, &net)?;
                Some(p)
            }
            None => None,
        };
        Ok(LadderRow {
            name: stage.name.clone(),
            changed: stage.changed.clone(),
            seed: self.seed,
            fer_simulated: frame_error_rate(&net, &ctx.test_sim, b.label_delay)?,
            fer_live: frame_error_rate(&net, &ctx.test_live, b.label_delay)?,
            checkpoint,
        })
    }
}

/// Runs every configured stage in order.
pub fn ablation_ladder(cfg: &LadderConfig) -> Result<LadderReport> {
    cfg.validate()?;
    let ctx = cfg.context()?;
    let rows = (0..cfg.stages.len()).map(|i| cfg.run_stage(&ctx, i)).collect::<Result<Vec<_>>>()?;
    Ok(LadderReport {
        rows,
        note: LADDER_NOTE.into(),
    })
}
