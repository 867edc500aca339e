use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::settings::Settings;
use super::{Command, SNAPSHOT_FILE};
use crate::checkpoint::Checkpoint;
use crate::data::images::image_base;
use crate::data::{
    load_manifest, merge_hybrid, save_manifest, split_framewise, split_subject_disjoint,
    synth_generate, undersample, DatasetManifest, ImageStore, LabelRule, ModeledAuSet,
    ProvenanceStep, RenderSpec, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::render::render_confusion_log10;
use crate::eval::report::{
    evaluate_model, format_ablation_table, format_au_table, format_pain_table, load_au_predictions,
    save_predictions, AblationRow, EvaluationReport,
};
use crate::facs::Scheme;
use crate::model::{Ablation, BackboneSpec, ModelConfig, ModelParams};
use crate::training::{
    pretrain_au, run_ablations, train_pain, AblationPlan, Stage, TrainConfig, TrainData,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// Contents of `ablation.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
    pub reports: Vec<EvaluationReport>,
}

/// Prints to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

/// Fails with the offending path when an input file is absent.
fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        )))
    }
}

pub(super) fn dispatch(cmd: &Command, s: &mut Settings, out: &Path) -> Result<()> {
    match cmd {
        Command::Synth { .. } => synth(s, out),
        Command::Prepare { .. } => prepare(s, out),
        Command::PretrainAu { .. } => pretrain(s, out),
        Command::Train { .. } => train(s, out),
        Command::Evaluate { .. } => evaluate(s, out),
        Command::Ablate { .. } => ablate(s, out),
        Command::Report { .. } => report(s, out),
    }
}

fn write_snapshot(s: &Settings, out: &Path) -> Result<()> {
    fs::write(out.join(SNAPSHOT_FILE), s.snapshot())?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn synth_config(s: &Settings) -> Result<SynthConfig> {
    let label_rule = match s.raw("synth.label_rule") {
        "pspi" => LabelRule::Pspi,
        "co_occurrence" => LabelRule::CoOccurrence,
        other => return Err(Error::InvalidConfig(format!("synth.label_rule {other:?}"))),
    };
    let seed: u64 = s.get("seed")?;
    let render = if s.is_set("synth.regions") {
        let uri = format!(
            "side={};grid={};noise={};seed={seed};regions={}",
            s.raw("synth.side"),
            s.raw("synth.grid"),
            s.raw("synth.noise"),
            s.raw("synth.regions")
        );
        RenderSpec::parse_uri(&uri)?.0
    } else {
        RenderSpec {
            side: s.get("synth.side")?,
            grid: s.get("synth.grid")?,
            noise: s.get("synth.noise")?,
            ..RenderSpec::default()
        }
    };
    Ok(SynthConfig {
        count: s.get("synth.count")?,
        seed,
        mixture: s.list("synth.mixture")?,
        background_rate: s.get("synth.background_rate")?,
        subjects: s.get("synth.subjects")?,
        label_rule,
        frame_prefix: s.raw("synth.frame_prefix").to_string(),
        modeled_aus: ModeledAuSet::new(s.list("synth.modeled_aus")?)?,
        render,
    })
}

fn synth(s: &mut Settings, out: &Path) -> Result<()> {
    let cfg = synth_config(s)?;
    let as_png = match s.raw("synth.images") {
        "png" => true,
        "uri" => false,
        other => return Err(Error::InvalidConfig(format!("synth.images {other:?}"))),
    };
    write_snapshot(s, out)?;
    let data = synth_generate(&cfg)?;
    let manifest = if as_png {
        let dir = out.join("images");
        fs::create_dir_all(&dir)?;
        let mut records = data.manifest.records().to_vec();
        for r in &mut records {
            let rel = format!("images/{}.png", r.frame_id);
            data.images.get(&r.frame_id)?.save_png(&out.join(&rel))?;
            r.image_ref = rel;
        }
        data.manifest.with_records(records)?
    } else {
        data.manifest
    };
    let path = out.join(MANIFEST_FILE);
    save_manifest(&manifest, &path)?;
    let counts = manifest.category_counts(Scheme::Three);
    say!("frames {} (categories {counts:?})", manifest.len());
    say!(
        "manifest {} sha256 {}",
        path.display(),
        sha256_hex(&fs::read(&path)?)
    );
    Ok(())
}

fn parse_aus(s: &Settings, key: &str) -> Result<Vec<u8>> {
    s.list(key)
}

fn prepare(s: &mut Settings, out: &Path) -> Result<()> {
    let input = existing(s.require_path("prepare.manifest")?)?;
    let seed: u64 = s.get("seed")?;
    let keep: Option<f64> = s.opt("prepare.undersample_keep")?;
    let split: Option<f64> = s.opt("prepare.split")?;
    let by_subject = match s.raw("prepare.split_by") {
        "subject" => true,
        "frame" => false,
        other => return Err(Error::InvalidConfig(format!("prepare.split_by {other:?}"))),
    };
    write_snapshot(s, out)?;

    let mut m = load_manifest(&input)?;
    let base = image_base(&m, &input);
    m.provenance.image_root = Some(fs::canonicalize(&base).unwrap_or(base));
    let mut transformed = false;

    if let Some(preds_path) = s.path("prepare.relabel_from") {
        let preds = load_au_predictions(&existing(preds_path.clone())?)?;
        let fill = parse_aus(s, "prepare.fill_aus")?;
        if fill.is_empty() {
            return Err(Error::InvalidConfig(
                "relabeling needs prepare.fill_aus".into(),
            ));
        }
        let mut overlap = parse_aus(s, "prepare.overlap_aus")?;
        if overlap.is_empty() {
            let f: BTreeSet<u8> = fill.iter().copied().collect();
            overlap = m
                .modeled_aus()
                .codes()
                .iter()
                .copied()
                .filter(|c| !f.contains(c))
                .collect();
        }
        m = merge_hybrid(
            &m,
            &preds,
            &overlap,
            &fill,
            &preds_path.display().to_string(),
        )?;
        eprintln!("relabeled AUs {fill:?} on {} frames", m.len());
        transformed = true;
    }
    if let Some(keep) = keep {
        let zero_before = m.records().iter().filter(|r| r.pspi.value() == 0).count();
        let before = m.len();
        m = undersample(&m, keep, seed)?;
        if let Some(ProvenanceStep::Undersampled {
            removed_inactive,
            removed_lottery,
            ..
        }) = m.provenance.steps.last()
        {
            let zero_after = m.records().iter().filter(|r| r.pspi.value() == 0).count();
            eprintln!(
                "undersampling at keep rate {keep}: {before} -> {} frames; PSPI=0 {zero_before} -> {zero_after}; \
                 removed {removed_inactive} without active AUs and {removed_lottery} by lottery",
                m.len()
            );
        }
        transformed = true;
    }
    if !transformed {
        m.provenance.steps.push(ProvenanceStep::Copied {
            from: input.display().to_string(),
        });
    }
    match split {
        Some(f) => {
            let (train, test) = if by_subject {
                split_subject_disjoint(&m, f, seed)?
            } else {
                split_framewise(&m, f, seed)?
            };
            save_manifest(&train, &out.join("train.jsonl"))?;
            save_manifest(&test, &out.join("test.jsonl"))?;
            say!("train {} frames, test {} frames", train.len(), test.len());
        }
        None => {
            save_manifest(&m, &out.join(MANIFEST_FILE))?;
            say!("{} frames", m.len());
        }
    }
    Ok(())
}

fn load_data(path: &Path) -> Result<(DatasetManifest, ImageStore)> {
    let m = load_manifest(path)?;
    let images = ImageStore::load_for(&m, path)?;
    Ok((m, images))
}

/// Model topology from the preset (or `base`) with per-key overrides.
fn model_config(
    s: &mut Settings,
    n_au: usize,
    d_pain: usize,
    base: Option<&ModelConfig>,
) -> Result<ModelConfig> {
    let preset = match base {
        Some(m) => m.clone(),
        None => match s.raw("model.preset") {
            "desk" => ModelConfig::desk(),
            "paper" => ModelConfig::paper(),
            other => return Err(Error::InvalidConfig(format!("model.preset {other:?}"))),
        },
    };
    s.fill("model.d_au", preset.d_au);
    s.fill("model.proj_dim", preset.proj_dim);
    s.fill("model.k", preset.k);
    s.fill("model.input_side", preset.backbone.input_side);
    let channels: Vec<String> = preset
        .backbone
        .channels
        .iter()
        .map(|c| c.to_string())
        .collect();
    s.fill("model.channels", channels.join(","));
    let cfg = ModelConfig {
        n_au,
        d_au: s.get("model.d_au")?,
        proj_dim: s.get("model.proj_dim")?,
        k: s.get("model.k")?,
        d_pain,
        backbone: BackboneSpec {
            kind: preset.backbone.kind.clone(),
            input_side: s.get("model.input_side")?,
            channels: s.list("model.channels")?,
        },
        ablation: s.get::<Ablation>("model.ablation")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(s: &mut Settings, stage: Stage) -> Result<TrainConfig> {
    let p = stage_prefix(stage);
    let key = |k: &str| format!("{p}.{k}");
    let mut cfg = match (stage, s.raw(&key("preset"))) {
        (Stage::AuSft, "desk") => TrainConfig::desk_au_sft(),
        (Stage::AuSft, "paper") => TrainConfig::paper_au_sft(),
        (Stage::Pain, "desk") => TrainConfig::desk_pain(),
        (Stage::Pain, "paper") => TrainConfig::paper_pain(),
        (_, other) => return Err(Error::InvalidConfig(format!("{p}.preset {other:?}"))),
    };
    s.fill(&key("lr"), cfg.lr);
    s.fill(&key("batch_size"), cfg.batch_size);
    s.fill(&key("epochs"), cfg.epochs);
    s.fill(&key("weight_decay"), cfg.weight_decay);
    s.fill(&key("val_fraction"), cfg.val_fraction);
    cfg.lr = s.get(&key("lr"))?;
    cfg.batch_size = s.get(&key("batch_size"))?;
    cfg.epochs = s.get(&key("epochs"))?;
    cfg.weight_decay = s.get(&key("weight_decay"))?;
    cfg.val_fraction = s.get(&key("val_fraction"))?;
    cfg.seed = s.get("seed")?;
    cfg.scheme = s.get("pain.scheme")?;
    if stage == Stage::Pain {
        cfg.class_weights = s.get("pain.class_weights")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage_prefix(stage: Stage) -> &'static str {
    match stage {
        Stage::AuSft => "sft",
        Stage::Pain => "pain",
    }
}

fn run_training(s: &mut Settings, out: &Path, stage: Stage) -> Result<Checkpoint> {
    let train_path = existing(s.require_path("data.train")?)?;
    let init = match (stage, s.path("pain.init")) {
        (Stage::Pain, Some(p)) => Some(Checkpoint::load(&existing(p)?)?),
        _ => None,
    };
    let cfg = train_config(s, stage)?;
    let (manifest, images) = load_data(&train_path)?;
    let model = model_config(
        s,
        manifest.modeled_aus().len(),
        cfg.scheme.classes(),
        init.as_ref().map(|c| &c.model),
    )?;
    write_snapshot(s, out)?;
    let start = Checkpoint::fresh(model.clone(), ModelParams::init(&model, cfg.seed));
    let data = TrainData {
        manifest: &manifest,
        images: &images,
    };
    let mut log = BufWriter::new(fs::File::create(out.join(TRAIN_LOG_FILE))?);
    eprintln!(
        "{} on {} frames for {} epochs ({} wiring)",
        stage,
        manifest.len(),
        cfg.epochs,
        model.ablation
    );
    let ckpt = match stage {
        Stage::AuSft => pretrain_au(start, data, &cfg, Some(&mut log))?,
        Stage::Pain => train_pain(start, data, &cfg, init.as_ref(), Some(&mut log))?,
    };
    let path = out.join(CHECKPOINT_FILE);
    ckpt.save(&path)?;
    if let Some(last) = ckpt.history.last() {
        say!("{}", serde_json::to_string(last)?);
    }
    say!("checkpoint {}", path.display());
    Ok(ckpt)
}

fn pretrain(s: &mut Settings, out: &Path) -> Result<()> {
    run_training(s, out, Stage::AuSft).map(|_| ())
}

fn train(s: &mut Settings, out: &Path) -> Result<()> {
    run_training(s, out, Stage::Pain).map(|_| ())
}

fn write_report_artifacts(report: &EvaluationReport, out: &Path, png: bool) -> Result<()> {
    let pain = format_pain_table(report);
    let au = format_au_table(&report.au);
    let names: Vec<&str> = report.class_names.iter().map(String::as_str).collect();
    let rendering = render_confusion_log10(&report.pain.confusion, &names);
    fs::write(out.join("pain_table.txt"), &pain)?;
    fs::write(out.join("au_table.txt"), &au)?;
    fs::write(out.join("confusion.txt"), rendering.to_text())?;
    if png {
        rendering.save_png(&out.join("confusion.png"), 48)?;
    }
    say!("{pain}\n{au}\n{}", rendering.to_text());
    Ok(())
}

fn evaluate(s: &mut Settings, out: &Path) -> Result<()> {
    let ckpt_path = existing(s.require_path("eval.checkpoint")?)?;
    let test_path = existing(s.require_path("data.test")?)?;
    let png: bool = s.get("eval.png")?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    s.fill("eval.scheme", Scheme::from_classes(ckpt.model.d_pain)?);
    let scheme: Scheme = s.get("eval.scheme")?;
    write_snapshot(s, out)?;
    let (manifest, images) = load_data(&test_path)?;
    let (report, preds) = evaluate_model(&ckpt.params, &ckpt.model, &manifest, &images, scheme)?;
    fs::write(
        out.join("evaluation.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    save_predictions(&preds, &out.join("predictions.jsonl"))?;
    write_report_artifacts(&report, out, png)
}

fn ablate(s: &mut Settings, out: &Path) -> Result<()> {
    let train_path = existing(s.require_path("data.train")?)?;
    let test_path = existing(s.require_path("data.test")?)?;
    let ablations: Vec<Ablation> = s.list("ablate.ablations")?;
    if ablations.is_empty() {
        return Err(Error::InvalidConfig("ablate.ablations is empty".into()));
    }
    let sft = train_config(s, Stage::AuSft)?;
    let pain = train_config(s, Stage::Pain)?;
    let (train_m, train_i) = load_data(&train_path)?;
    let model = model_config(s, train_m.modeled_aus().len(), pain.scheme.classes(), None)?;
    write_snapshot(s, out)?;
    let (test_m, test_i) = load_data(&test_path)?;
    let plan = AblationPlan {
        model,
        init_seed: s.get("seed")?,
        sft,
        pain,
        ablations,
    };
    let outcomes = run_ablations(
        &plan,
        TrainData {
            manifest: &train_m,
            images: &train_i,
        },
        TrainData {
            manifest: &test_m,
            images: &test_i,
        },
        &mut |msg| eprintln!("{msg}"),
    )?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for o in outcomes {
        o.checkpoint
            .save(&out.join(format!("checkpoint_{}.bin", o.ablation.name())))?;
        rows.push(AblationRow::from_report(o.ablation, &o.report.pain));
        reports.push(o.report);
    }
    let table = format_ablation_table(&rows);
    fs::write(out.join("ablation_table.txt"), &table)?;
    fs::write(
        out.join("ablation.json"),
        serde_json::to_vec_pretty(&AblationSummary { rows, reports })?,
    )?;
    say!("{table}");
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(existing(path.to_path_buf())?)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn report(s: &mut Settings, out: &Path) -> Result<()> {
    let eval_path = s.path("report.evaluation");
    let abl_path = s.path("report.ablation");
    if eval_path.is_none() && abl_path.is_none() {
        return Err(Error::InvalidConfig(
            "report needs report.evaluation and/or report.ablation".into(),
        ));
    }
    let png: bool = s.get("eval.png")?;
    write_snapshot(s, out)?;
    if let Some(p) = eval_path {
        let r: EvaluationReport = read_json(&p)?;
        write_report_artifacts(&r, out, png)?;
    }
    if let Some(p) = abl_path {
        let a: AblationSummary = read_json(&p)?;
        let table = format_ablation_table(&a.rows);
        fs::write(out.join("ablation_table.txt"), &table)?;
        say!("{table}");
    }
    Ok(())
}
