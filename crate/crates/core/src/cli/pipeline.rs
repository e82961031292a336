use std::collections::HashSet;
use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::RunConfig;
use super::runs::Stage;
use crate::adapt::{
    evaluate_probe, evaluate_seg, load_samples, read_eval_csv, train_probe, train_seg, write_eval_csv, EvalResult,
    LinearProbe, MetricRow, Sample, SegHead,
};
use crate::coreset::{curate, read_selection, write_selection};
use crate::data::{generate_phantoms, load_manifest, stratified_split, Manifest, PhantomSpec, Split};
use crate::distill::{run_distillation_on, write_csv, Student};
use crate::encoder::{
    embed_manifest, load_checkpoint, load_checkpoint_expecting, load_traces, pretrain_teacher, read_shard,
    save_checkpoint, save_traces, write_shard, Checkpoint, Encoder,
};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    Cls,
    Seg,
}

impl TaskArg {
    pub fn name(self) -> &'static str {
        match self {
            TaskArg::Cls => "cls",
            TaskArg::Seg => "seg",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

/// One row of a distilled-vs-vanilla comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task: crate::adapt::Task,
    pub class: String,
    pub metric: String,
    pub distilled: f64,
    pub vanilla: f64,
    pub delta: f64,
    pub n: usize,
    pub seed: u64,
}

/// Summary stored next to a student checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub train_samples: usize,
    pub val_samples: usize,
    pub final_loss_total: f64,
    pub final_val_loss_total: Option<f64>,
    pub teacher_checksum: String,
}

pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const TRACES: &str = "traces.jsonl";
pub const FEATURES: &str = "features.tusf";
pub const CORESET: &str = "coreset.jsonl";
pub const STUDENT_CKPT: &str = "student.ckpt";
pub const DISTILL_LOG: &str = "distill_log.csv";
pub const VAL_LOG: &str = "val_log.csv";
pub const DISTILL_SUMMARY: &str = "summary.json";
pub const ADAPT_LOG: &str = "adapt_log.csv";
pub const HEAD_CKPT: &str = "head.ckpt";
pub const EVAL_CSV: &str = "eval.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";

/// Runs pipeline stages for one configuration, reusing completed stages
/// unless `force` is set.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub force: bool,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, force: bool) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, force })
    }

    fn root(&self) -> PathBuf {
        self.cfg.paths.output_root.clone()
    }

    fn size(&self) -> (usize, usize) {
        self.cfg.encoder.teacher.image_size
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let p = self.cfg.paths.manifest_path();
        if !p.exists() {
            return Err(Error::Other(format!(
                "manifest {} not found; run `tinydistill generate` or set paths.manifest",
                p.display()
            )));
        }
        load_manifest(&p)
    }

    fn reuse(&self, stage: &Stage) -> bool {
        if stage.is_complete() && !self.force {
            info!("reusing {}", stage.dir.display());
            return true;
        }
        false
    }

    pub fn teacher_stage(&self) -> Stage {
        let c = &self.cfg;
        let key = json!({
            "seed": c.seed,
            "manifest": c.paths.manifest_path(),
            "data": c.data,
            "masking": c.masking,
            "teacher": c.encoder.teacher,
            "pretrain": c.pretrain,
        });
        Stage::new(&self.root(), "teacher", &key)
    }

    pub fn coreset_stage(&self) -> Stage {
        let key = json!({ "teacher": self.teacher_stage().id, "coreset": self.cfg.coreset, "seed": self.cfg.seed });
        Stage::new(&self.root(), "coreset", &key)
    }

    pub fn distill_stage(&self) -> Stage {
        let c = &self.cfg;
        let key = json!({
            "coreset": self.coreset_stage().id,
            "student": c.encoder.student,
            "distill": c.distill,
            "masking": c.masking,
            "seed": c.seed,
        });
        Stage::new(&self.root(), "distill", &key)
    }

    pub fn adapt_stage(&self, task: TaskArg, vanilla: bool) -> Stage {
        let c = &self.cfg;
        let backbone = if vanilla {
            json!({ "vanilla": c.encoder.student, "seed": c.seed })
        } else {
            json!(self.distill_stage().id)
        };
        let key = json!({
            "task": task.name(),
            "backbone": backbone,
            "manifest": c.paths.manifest_path(),
            "adapt": c.adapt,
            "seed": c.seed,
        });
        let kind = if vanilla { "vanilla" } else { "adapt" };
        Stage::new(&self.root(), &format!("{kind}-{}", task.name()), &key)
    }

    /// Writes synthetic phantoms and a stratified split manifest.
    pub fn generate(&self) -> Result<PathBuf> {
        let c = &self.cfg;
        let dir = &c.paths.data_root;
        let spec = PhantomSpec {
            n: c.data.phantoms,
            classes: c.data.classes,
            height: c.data.height,
            width: c.data.width,
            patch_size: c.encoder.teacher.patch_size,
            seed: c.seed,
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let all = generate_phantoms(&spec, dir)?;
        let split = stratified_split(&all, c.data.split, seed::derive(c.seed, &["split"]))?;
        let path = dir.join("manifest.jsonl");
        split.save(&path)?;
        info!("wrote {} phantoms to {}", split.len(), dir.display());
        Ok(path)
    }

    pub fn pretrain_teacher(&self) -> Result<Stage> {
        let stage = self.teacher_stage();
        if self.reuse(&stage) {
            return Ok(stage);
        }
        let manifest = self.manifest()?;
        stage.begin(&self.cfg)?;
        let c = &self.cfg;
        let out = pretrain_teacher(&manifest, &c.encoder.teacher, &c.masking, &c.pretrain, c.seed)?;
        let ckpt = Checkpoint::new(c.encoder.teacher.clone())
            .with_section("encoder", out.encoder.params().clone())
            .with_section("decoder", out.decoder.params().clone());
        save_checkpoint(
            &Checkpoint {
                meta: json!({ "role": "teacher" }),
                ..ckpt
            },
            &stage.path(TEACHER_CKPT),
        )?;
        save_traces(&out.traces, &stage.path(TRACES))?;
        let rows: Vec<LossRow> = out
            .epoch_losses
            .iter()
            .enumerate()
            .map(|(i, &loss)| LossRow { epoch: i + 1, loss })
            .collect();
        write_csv(&rows, &stage.path("pretrain_log.csv"))?;
        let features = embed_manifest(&out.encoder, &manifest.split(Split::Train));
        write_shard(&features, &stage.path(FEATURES))?;
        stage.finish(&[TEACHER_CKPT, TRACES, "pretrain_log.csv", FEATURES])?;
        Ok(stage)
    }

    pub fn load_teacher(&self) -> Result<Encoder> {
        let p = self.teacher_stage().require(TEACHER_CKPT, "pretrain-teacher")?;
        let mut ck = load_checkpoint_expecting(&p, &self.cfg.encoder.teacher)?;
        Encoder::from_parts(ck.config.clone(), ck.take_section("encoder")?)
    }

    pub fn curate(&self) -> Result<Stage> {
        let stage = self.coreset_stage();
        if self.reuse(&stage) {
            return Ok(stage);
        }
        let teacher_stage = self.teacher_stage();
        let traces = load_traces(&teacher_stage.require(TRACES, "pretrain-teacher")?)?;
        let manifest = self.manifest()?;
        let fpath = teacher_stage.path(FEATURES);
        let features = if fpath.exists() {
            read_shard(&fpath)?
        } else {
            info!("no feature shard in {}; embedding the train split", teacher_stage.dir.display());
            let f = embed_manifest(&self.load_teacher()?, &manifest.split(Split::Train));
            write_shard(&f, &fpath)?;
            f
        };
        stage.begin(&self.cfg)?;
        let c = &self.cfg.coreset;
        let n = features.len();
        if c.budget_for(n) >= n {
            warn!("budget {} covers all {n} samples; the coreset is the full set", c.budget_for(n));
        }
        let ids: HashSet<&str> = features.ids.iter().map(String::as_str).collect();
        let organs: Vec<Option<String>> = manifest
            .records
            .iter()
            .filter(|r| ids.contains(r.id.as_str()))
            .map(|r| r.organ.clone())
            .collect();
        let cur = curate(&features, &traces, c, c.k1_for(&organs), self.cfg.seed)?;
        write_selection(&cur.selection, &stage.path(CORESET))?;
        cur.report.write_csv(&stage.path("coreset_report.csv"))?;
        info!("selected {} of {n} samples", cur.selection.len());
        stage.finish(&[CORESET, "coreset_report.csv"])?;
        Ok(stage)
    }

    pub fn distill(&self) -> Result<Stage> {
        let stage = self.distill_stage();
        if self.reuse(&stage) {
            return Ok(stage);
        }
        let teacher = self.load_teacher()?;
        let selected = read_selection(&self.coreset_stage().require(CORESET, "curate")?)?;
        let ids: Vec<String> = selected.into_iter().map(|s| s.id).collect();
        let manifest = self.manifest()?;
        let train = manifest.split(Split::Train).select_ids(&ids).load_images(self.size())?;
        let val = manifest.split(Split::Val).load_images(self.size())?;
        stage.begin(&self.cfg)?;
        let c = &self.cfg;
        let out = run_distillation_on(&teacher, &train, &val, &c.encoder.student, &c.masking, &c.distill, c.seed)?;
        save_checkpoint(&out.student.to_checkpoint(&c.encoder.teacher), &stage.path(STUDENT_CKPT))?;
        write_csv(&out.log, &stage.path(DISTILL_LOG))?;
        write_csv(&out.val_log, &stage.path(VAL_LOG))?;
        let summary = DistillSummary {
            train_samples: train.len(),
            val_samples: val.len(),
            final_loss_total: out.log.last().map_or(f64::NAN, |l| l.loss_total),
            final_val_loss_total: out.val_log.last().map(|l| l.loss_total),
            teacher_checksum: out.teacher_checksum_after,
        };
        let sp = stage.path(DISTILL_SUMMARY);
        std::fs::write(&sp, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&sp, e))?;
        stage.finish(&[STUDENT_CKPT, DISTILL_LOG, VAL_LOG, DISTILL_SUMMARY])?;
        Ok(stage)
    }

    pub fn load_student(&self) -> Result<Encoder> {
        let p = self.distill_stage().require(STUDENT_CKPT, "distill")?;
        let ck = load_checkpoint_expecting(&p, &self.cfg.encoder.student)?;
        Ok(Student::from_checkpoint(ck)?.encoder)
    }

    /// Same architecture as the student, randomly initialised.
    pub fn vanilla_backbone(&self) -> Result<Encoder> {
        Encoder::new(self.cfg.encoder.student.clone(), seed::derive(self.cfg.seed, &["vanilla"]))
    }

    fn samples(&self, split: Split, task: TaskArg) -> Result<Vec<Sample>> {
        let m = self.manifest()?.split(split);
        if m.is_empty() {
            return Err(Error::Empty(format!("{split} split has no samples")));
        }
        load_samples(&m, self.size(), task == TaskArg::Seg)
    }

    fn adapt_one(&self, task: TaskArg, vanilla: bool) -> Result<(Stage, EvalResult)> {
        let stage = self.adapt_stage(task, vanilla);
        let backbone = if vanilla { self.vanilla_backbone()? } else { self.load_student()? };
        if self.reuse(&stage) {
            let r = self.evaluate_stage(&stage, &backbone, task, Split::Test)?;
            return Ok((stage, r));
        }
        let train = self.samples(Split::Train, task)?;
        let test = self.samples(Split::Test, task)?;
        stage.begin(&self.cfg)?;
        let (seed, a) = (self.cfg.seed, &self.cfg.adapt);
        let s = &self.cfg.encoder.student;
        let result = match task {
            TaskArg::Cls => {
                let out = train_probe(&backbone, &train, &a.classification, seed)?;
                let bb = out.backbone(&backbone);
                save_checkpoint(&out.head.to_checkpoint(s), &stage.path(HEAD_CKPT))?;
                save_tuned(&stage, out.tuned_backbone.as_ref())?;
                write_csv(&out.log, &stage.path(ADAPT_LOG))?;
                evaluate_probe(bb, &out.head, &test, seed)?
            }
            TaskArg::Seg => {
                let out = train_seg(&backbone, &train, &a.seg_head, &a.segmentation, seed)?;
                let bb = out.backbone(&backbone);
                save_checkpoint(&out.head.to_checkpoint(s), &stage.path(HEAD_CKPT))?;
                save_tuned(&stage, out.tuned_backbone.as_ref())?;
                write_csv(&out.log, &stage.path(ADAPT_LOG))?;
                evaluate_seg(bb, &out.head, &test, seed)?
            }
        };
        write_eval_csv(std::slice::from_ref(&result), &stage.path(EVAL_CSV))?;
        let mut files = vec![HEAD_CKPT, ADAPT_LOG, EVAL_CSV];
        if stage.path(TUNED_CKPT).exists() {
            files.push(TUNED_CKPT);
        }
        stage.finish(&files)?;
        Ok((stage, result))
    }

    /// Trains and evaluates a head on the distilled student; with
    /// `compare_vanilla` also on a from-scratch student and writes the
    /// per-metric deltas.
    pub fn adapt(&self, task: TaskArg, compare_vanilla: bool) -> Result<(Stage, EvalResult, Option<EvalResult>)> {
        let (stage, distilled) = self.adapt_one(task, false)?;
        if !compare_vanilla {
            return Ok((stage, distilled, None));
        }
        let (_, vanilla) = self.adapt_one(task, true)?;
        let rows = comparison_rows(&distilled, &vanilla);
        write_csv(&rows, &stage.path(COMPARISON_CSV))?;
        Ok((stage, distilled, Some(vanilla)))
    }

    fn evaluate_stage(&self, stage: &Stage, frozen: &Encoder, task: TaskArg, split: Split) -> Result<EvalResult> {
        let head_path = stage.require(HEAD_CKPT, &format!("adapt --task {}", task.name()))?;
        let tuned = stage.path(TUNED_CKPT);
        let backbone = if tuned.exists() { Encoder::load(&tuned)? } else { frozen.clone() };
        let samples = self.samples(split, task)?;
        let ck = load_checkpoint(&head_path)?;
        match task {
            TaskArg::Cls => evaluate_probe(&backbone, &LinearProbe::from_checkpoint(ck)?, &samples, self.cfg.seed),
            TaskArg::Seg => evaluate_seg(&backbone, &SegHead::from_checkpoint(ck)?, &samples, self.cfg.seed),
        }
    }

    /// Re-evaluates a trained head on `split` and writes `eval_<split>.csv`.
    pub fn evaluate(&self, task: TaskArg, split: Split, vanilla: bool) -> Result<(PathBuf, EvalResult)> {
        let stage = self.adapt_stage(task, vanilla);
        let backbone = if vanilla { self.vanilla_backbone()? } else { self.load_student()? };
        let r = self.evaluate_stage(&stage, &backbone, task, split)?;
        let p = stage.path(&format!("eval_{split}.csv"));
        write_eval_csv(std::slice::from_ref(&r), &p)?;
        Ok((p, r))
    }
}

pub const TUNED_CKPT: &str = "backbone.ckpt";

fn save_tuned(stage: &Stage, tuned: Option<&Encoder>) -> Result<()> {
    match tuned {
        Some(e) => e.save(&stage.path(TUNED_CKPT)),
        None => Ok(()),
    }
}

pub fn comparison_rows(distilled: &EvalResult, vanilla: &EvalResult) -> Vec<ComparisonRow> {
    distilled
        .rows()
        .into_iter()
        .zip(vanilla.rows())
        .map(|(d, v): (MetricRow, MetricRow)| ComparisonRow {
            task: d.task,
            class: d.class,
            metric: d.metric,
            distilled: d.value,
            vanilla: v.value,
            delta: d.value - v.value,
            n: d.n,
            seed: d.seed,
        })
        .collect()
}

/// Final aggregate metric of an adapt run directory.
pub fn read_aggregate(dir: &std::path::Path) -> Result<f64> {
    read_eval_csv(&dir.join(EVAL_CSV))?
        .into_iter()
        .find(|r| r.class == crate::adapt::AGGREGATE_CLASS)
        .map(|r| r.value)
        .ok_or_else(|| Error::Other(format!("no aggregate row in {}", dir.display())))
}
