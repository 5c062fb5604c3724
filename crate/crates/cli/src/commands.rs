use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use physiossl::data::{
    load_checkpoint, load_checkpoint_as, load_windows, resolve_task, save_checkpoint, sha256_hex, write_atomic,
    write_corpus, write_json, write_pretext, write_windows,
};
use physiossl::train::{
    evaluate_pretext, loso_report, pretrain, run_ablation, run_low_data_study, train_downstream, Experiment, LosoSpec,
};
use physiossl::transforms::build_pretext_dataset;
use physiossl::{DatasetManifest, ModelStage, Network, PretextDataset, RunConfig, TrainMode, Window};
use serde_json::json;

use crate::{Cli, Command, DatasetArg, Mode};

/// A flag combination that cannot work; reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Run<'a> {
    cfg: RunConfig,
    out: &'a Path,
    jobs: usize,
    hash: String,
    command: &'static str,
}

impl Run<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Effective configuration next to the outputs; loading it back reproduces the run.
    fn snapshot(&self) -> Result<()> {
        let text = format!("# effective configuration, sha256 {}\n{}", self.hash, self.cfg.to_toml()?);
        write_atomic(&self.path(&format!("{}.config.toml", self.command)), text.as_bytes())?;
        Ok(())
    }

    fn report(&self, name: &str, body: serde_json::Value, extra: &[(String, String)]) -> Result<()> {
        let doc = json!({
            "command": self.command,
            "config_hash": self.hash,
            "config": self.cfg,
            "report": body,
        });
        write_json(&self.path(&format!("{name}.json")), &doc)?;
        for (file, text) in extra {
            write_atomic(&self.path(file), text.as_bytes())?;
        }
        log::info!("wrote {}", self.path(&format!("{name}.json")).display());
        Ok(())
    }

    fn manifest(&self, path: &Path) -> Result<(DatasetManifest, String)> {
        let bytes = std::fs::read(path).with_context(|| format!("reading dataset manifest {}", path.display()))?;
        let m = DatasetManifest::load(path)?;
        Ok((m, sha256_hex(&bytes)))
    }

    fn task(&self, m: &DatasetManifest, data: &DatasetArg) -> Result<(String, usize)> {
        let requested = data.task.as_deref().or(self.cfg.eval.task.as_deref());
        Ok(resolve_task(m, requested)?)
    }

    fn labelled(&self, data: &DatasetArg) -> Result<(Vec<Window>, String, usize, DatasetManifest, String)> {
        let (m, mhash) = self.manifest(&data.dataset)?;
        let (task, classes) = self.task(&m, data)?;
        let windows = load_windows(&m, Some(&task), &self.cfg.preprocess_for(&m)?)?;
        log::info!("{}: {} windows for task {task}", m.dataset_id, windows.len());
        Ok((windows, task, classes, m, mhash))
    }

    fn unlabelled(&self, path: &Path) -> Result<Vec<Window>> {
        let (m, _) = self.manifest(path)?;
        Ok(load_windows(&m, None, &self.cfg.preprocess_for(&m)?)?)
    }

    fn mode(&self, flag: Option<Mode>) -> TrainMode {
        flag.map(Into::into).unwrap_or(self.cfg.eval.mode)
    }

    /// Load the pretrained network a mode needs, checked against this run's encoder.
    fn pretrained(&self, mode: TrainMode, checkpoint: Option<&PathBuf>) -> Result<Option<Network>> {
        match (mode.needs_pretrained(), checkpoint) {
            (false, None) => Ok(None),
            (false, Some(_)) => Err(usage("--checkpoint is not used with --mode scratch")),
            (true, None) => Err(usage(format!("--mode {mode} needs --checkpoint <pretrained model>"))),
            (true, Some(p)) => {
                let stored = load_checkpoint(p)?;
                let mut expected = self.cfg.network.clone();
                expected.emotion_classes = stored.network.cfg.emotion_classes;
                let ck = load_checkpoint_as(p, &expected)?;
                Ok(Some(ck.network))
            }
        }
    }

    fn loso_spec<'n>(&self, pretrained: Option<&'n Network>, classes: usize, mode: TrainMode) -> LosoSpec<'n> {
        LosoSpec {
            net: self.cfg.network.clone(),
            pretrained,
            classes,
            mode,
            train: self.cfg.downstream.clone(),
            f1: self.cfg.eval.f1,
            jobs: self.jobs,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let g = &cli.global;
    let mut overrides = Vec::new();
    if let Some(seed) = g.seed {
        overrides.push(format!("seed={seed}"));
        overrides.push(format!("synth.seed={seed}"));
    }
    overrides.extend(g.overrides.iter().cloned());
    if let Command::Synth { subjects, classes, blocks_per_class } = &cli.command {
        for (key, v) in [("n_subjects", subjects), ("n_classes", classes), ("blocks_per_class", blocks_per_class)] {
            if let Some(v) = v {
                overrides.push(format!("synth.{key}={v}"));
            }
        }
    }
    Ok(RunConfig::load(g.config.as_deref(), &overrides)?)
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.global.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let cfg = load_config(cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs)
        .build_global()
        .context("starting the worker pool")?;
    let run = Run {
        hash: cfg.hash()?,
        cfg,
        out: &cli.global.out,
        jobs: cli.global.jobs,
        command: cli.command.name(),
    };
    std::fs::create_dir_all(run.out).with_context(|| format!("creating {}", run.out.display()))?;
    run.snapshot()?;
    match &cli.command {
        Command::Synth { .. } => synth(&run),
        Command::Preprocess { data } => preprocess(&run, data),
        Command::BuildPretext { data } => build_pretext(&run, data),
        Command::Pretrain { data } => pretrain_cmd(&run, data),
        Command::Train { data, mode, checkpoint } => train(&run, data, (*mode).into(), checkpoint.as_ref()),
        Command::Evaluate { data, mode, checkpoint, .. } => evaluate(&run, data, run.mode(*mode), checkpoint.as_ref()),
        Command::Ablate { data, kind, mode, pretext_dataset } => {
            ablate(&run, data, (*kind).into(), run.mode(*mode), pretext_dataset.as_ref())
        }
        Command::Lowdata { data, mode, checkpoint } => lowdata(&run, data, run.mode(*mode), checkpoint.as_ref()),
    }
}

fn synth(run: &Run) -> Result<()> {
    let e = &run.cfg.network.encoder;
    let window_s = run.cfg.preprocess.window_s.unwrap_or(e.window_len as f64 / 4.0);
    let overlap = run.cfg.preprocess.overlap_frac.unwrap_or(0.9);
    let manifest = write_corpus(run.out, &run.cfg.synth, window_s, overlap)?;
    log::info!("{} subjects written; manifest {}", run.cfg.synth.n_subjects, manifest.display());
    Ok(())
}

fn preprocess(run: &Run, data: &DatasetArg) -> Result<()> {
    let (m, _) = run.manifest(&data.dataset)?;
    let task = match run.task(&m, data) {
        Ok((t, _)) => Some(t),
        Err(_) if data.task.is_none() && run.cfg.eval.task.is_none() => None,
        Err(e) => return Err(e),
    };
    let windows = load_windows(&m, task.as_deref(), &run.cfg.preprocess_for(&m)?)?;
    write_windows(&run.path("windows"), &windows)?;
    log::info!("{} windows written", windows.len());
    Ok(())
}

fn build_pretext(run: &Run, data: &DatasetArg) -> Result<()> {
    let windows = run.unlabelled(&data.dataset)?;
    let samples = build_pretext_dataset(&windows, &run.cfg.pretext, run.cfg.seed)?;
    write_pretext(&run.path("pretext"), &samples)?;
    log::info!("{} pretext samples written", samples.len());
    Ok(())
}

/// Split off the last `frac` of subjects (by id) as a held-out set.
fn holdout_split(windows: Vec<Window>, frac: f64) -> (Vec<Window>, Vec<Window>) {
    let ids: Vec<String> = windows.iter().map(|w| w.subject_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let n_held = ((ids.len() as f64) * frac).ceil() as usize;
    if frac <= 0.0 || ids.len() < 2 || n_held == 0 {
        return (windows, Vec::new());
    }
    let held: BTreeSet<&String> = ids[ids.len() - n_held.min(ids.len() - 1)..].iter().collect();
    windows.into_iter().partition(|w| !held.contains(&w.subject_id))
}

fn pretrain_cmd(run: &Run, data: &DatasetArg) -> Result<()> {
    let windows = run.unlabelled(&data.dataset)?;
    let (train, held) = holdout_split(windows, run.cfg.eval.pretext_holdout);
    let ds = PretextDataset::new(train, run.cfg.pretext.clone(), run.cfg.seed)?;
    log::info!("pretraining on {} samples", ds.len());
    let mut net = Network::new(run.cfg.network.clone(), run.cfg.seed)?;
    let history = pretrain(&mut net, &ds, &run.cfg.pretrain)?;
    save_checkpoint(&run.path("pretrained.ckpt"), &net, ModelStage::Pretrained, run.cfg.seed)?;

    let mut log_csv = String::from("epoch,loss,head_accuracy\n");
    for h in &history {
        let accs: Vec<String> = h.head_accuracy.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(log_csv, "{},{},{}", h.epoch, h.loss, accs.join("|"));
    }
    let held_out = if held.is_empty() {
        None
    } else {
        let test = PretextDataset::new(held, run.cfg.pretext.clone(), physiossl::rng::derive_seed(run.cfg.seed, &[1]))?;
        let (per_head, mean) = evaluate_pretext(&net, &test, run.cfg.pretrain.batch_size)?;
        log::info!("held-out pretext accuracy {mean:.4}");
        Some(json!({ "samples": test.len(), "per_head_accuracy": per_head, "mean_accuracy": mean }))
    };
    let body = json!({
        "train_samples": ds.len(),
        "final_loss": history.last().map(|h| h.loss),
        "held_out": held_out,
        "checkpoint": "pretrained.ckpt",
    });
    run.report("pretrain_report", body, &[("pretrain_log.csv".into(), log_csv)])
}

fn train(run: &Run, data: &DatasetArg, mode: TrainMode, checkpoint: Option<&PathBuf>) -> Result<()> {
    let pretrained = run.pretrained(mode, checkpoint)?;
    let (windows, task, classes, ..) = run.labelled(data)?;
    let net = train_downstream(pretrained.as_ref(), &run.cfg.network, &windows, classes, mode, &run.cfg.downstream)?;
    let stage = if mode == TrainMode::Scratch { ModelStage::Supervised } else { ModelStage::Finetuned };
    let file = format!("{task}_{mode}.ckpt");
    save_checkpoint(&run.path(&file), &net, stage, run.cfg.seed)?;
    log::info!("saved {}", run.path(&file).display());
    Ok(())
}

fn evaluate(run: &Run, data: &DatasetArg, mode: TrainMode, checkpoint: Option<&PathBuf>) -> Result<()> {
    let pretrained = run.pretrained(mode, checkpoint)?;
    let (windows, task, classes, m, mhash) = run.labelled(data)?;
    let spec = run.loso_spec(pretrained.as_ref(), classes, mode);
    let report = loso_report(&windows, &spec, &task, &m.dataset_id, &run.hash, &mhash)?;
    log::info!(
        "{task} {mode}: accuracy {:.4} +- {:.4}, f1 {:.4} over {} folds",
        report.mean_accuracy,
        report.std_accuracy,
        report.mean_f1,
        report.folds.len()
    );
    let stem = format!("loso_{task}_{mode}");
    let csvs = [
        (format!("{stem}_folds.csv"), report.folds_csv()),
        (format!("{stem}_summary.csv"), report.summary_csv()),
    ];
    run.report(&stem, serde_json::to_value(&report)?, &csvs)
}

fn ablate(
    run: &Run,
    data: &DatasetArg,
    kind: physiossl::AblationKind,
    mode: TrainMode,
    pretext_dataset: Option<&PathBuf>,
) -> Result<()> {
    let (labeled, task, classes, m, mhash) = run.labelled(data)?;
    let unlabeled = match pretext_dataset {
        Some(p) => run.unlabelled(p)?,
        None => labeled.iter().cloned().map(|mut w| {
            w.label = None;
            w
        }).collect(),
    };
    let exp = Experiment {
        net: run.cfg.network.clone(),
        pretext: run.cfg.pretext.clone(),
        pretrain: run.cfg.pretrain.clone(),
        downstream: run.cfg.downstream.clone(),
        mode,
        classes,
        f1: run.cfg.eval.f1,
        jobs: run.jobs,
        unlabeled: &unlabeled,
        labeled: &labeled,
    };
    let report = run_ablation(kind, &exp, &run.cfg.ablation)?;
    let stem = format!("ablation_{kind}_{task}");
    let body = json!({ "dataset_id": m.dataset_id, "manifest_hash": mhash, "task": task, "mode": mode, "ablation": report });
    run.report(&stem, body, &[(format!("{stem}.csv"), report.to_csv())])
}

fn lowdata(run: &Run, data: &DatasetArg, mode: TrainMode, checkpoint: Option<&PathBuf>) -> Result<()> {
    let pretrained = run.pretrained(mode, checkpoint)?;
    let (windows, task, classes, m, mhash) = run.labelled(data)?;
    let spec = run.loso_spec(pretrained.as_ref(), classes, mode);
    let report = run_low_data_study(&windows, &spec, &run.cfg.lowdata.sizes, run.cfg.lowdata.repeats)?;
    let stem = format!("lowdata_{task}_{mode}");
    let body = json!({ "dataset_id": m.dataset_id, "manifest_hash": mhash, "task": task, "mode": mode, "study": report });
    run.report(&stem, body, &[(format!("{stem}.csv"), report.summary_csv())])
}
