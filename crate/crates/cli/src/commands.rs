use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use multiaug_core::analysis::{spectrum_report, Centering, FeatureMatrix};
use multiaug_core::augment::{validate_combination, AugPipeline, Verdict, PRESET_NAMES};
use multiaug_core::data::{generate_synthetic, parse_coco_keypoints, SynthConfig};
use multiaug_core::metrics::write_metrics_csv;
use multiaug_core::model::{TensorFile, TinyPoseNet};
use multiaug_core::ssltrain::{
    evaluate, extract_features, parse_pipeline, rank_augmentations, EvalReport, EvalSample, MetricKind, NetworkMode,
    Trainer, NET_NAMES,
};
use multiaug_core::Image;

use crate::config::{eval_samples, RunConfig};
use crate::run::{create_dir, write, Metadata};
use crate::{EvalArgs, Outcome, RankArgs, SvdArgs, SynthGenArgs, TrainArgs, Usage, ValidateArgs};

pub fn synth_gen(a: &SynthGenArgs) -> Result<Outcome> {
    if a.count == 0 {
        bail!(Usage("--count must be at least 1".into()));
    }
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(Usage::wrap)?;
            toml::from_str(&text)
                .with_context(|| format!("parsing {}", p.display()))
                .map_err(Usage::wrap)?
        }
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed;
    create_dir(&a.out)?;
    let meta = Metadata::start("synth-gen");
    let index = generate_synthetic(&cfg, a.count, &a.out)?;
    write(a.out.join("synth_config.toml"), toml::to_string_pretty(&cfg)?)?;
    meta.finish(&a.out)?;
    println!(
        "{} samples, {}x{} pixels, {} joints ({}), seed {}, written to {}",
        index.len(),
        cfg.height,
        cfg.width,
        index.profile.joints(),
        index.profile.name(),
        cfg.seed,
        a.out.display()
    );
    Ok(Outcome::Success)
}

fn pipeline_error(spec: &str, e: multiaug_core::Error) -> anyhow::Error {
    let mut msg = format!("invalid pipeline {spec:?}: {e}");
    if !msg.contains("valid presets") {
        msg.push_str(&format!("\nvalid presets: {}", PRESET_NAMES.join(", ")));
    }
    anyhow::Error::new(Usage(msg))
}

fn check_pipeline(spec: &str) -> Result<AugPipeline> {
    parse_pipeline(spec).map_err(|e| pipeline_error(spec, e))
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(String::from).collect()
}

fn load_run_config(path: &Path, epochs: Option<usize>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    Ok(cfg)
}

fn checkpoint_dir(root: &Path, epoch: usize) -> PathBuf {
    root.join(format!("epoch_{epoch:03}"))
}

/// Newest `epoch_NNN` directory under `root`.
fn latest_checkpoint(root: &Path) -> Result<Option<PathBuf>> {
    if !root.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(n) = name.to_str().and_then(|s| s.strip_prefix("epoch_")).and_then(|s| s.parse().ok()) else {
            continue;
        };
        if best.as_ref().map_or(true, |(b, _)| n > *b) {
            best = Some((n, entry.path()));
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Keeps the header and the rows whose epoch column (the `epoch_col`-th field) is below
/// `epoch`, so a resumed run appends exactly the rows a straight run would have written.
fn truncate_csv(path: &Path, epoch_col: usize, epoch: usize) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .nth(epoch_col)
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e < epoch);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    write(path, kept)
}

fn append(path: &Path) -> Result<std::fs::File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))
}

fn model_tags(n: usize) -> Vec<String> {
    (0..n).map(|i| char::from(b'A' + (i % 26) as u8).to_string()).collect()
}

fn validation_rows(report: &EvalReport, epoch: usize) -> String {
    let mut out = String::new();
    let tags = model_tags(report.per_model.len());
    for (tag, m) in tags.iter().map(String::as_str).zip(&report.per_model).chain([("mean", &report.mean)]) {
        out.push_str(&format!("{epoch},{tag},{},{}\n", m.pck, m.map));
    }
    out
}

pub fn train(a: &TrainArgs) -> Result<Outcome> {
    let mut cfg = load_run_config(&a.config, a.epochs)?;
    if let Some(m) = &a.mode {
        cfg.train.network_mode = m.parse::<NetworkMode>().map_err(|e| Usage::wrap(e.into()))?;
    }
    if let Some(p) = &a.paths {
        cfg.train.paths = split_list(p);
    }
    if let Some(u) = &a.unsup_mode {
        cfg.train.unsup_mode = u.clone();
    }
    if let Some(t) = a.tau {
        cfg.train.tau = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = Some(s);
    }
    cfg.resolve();
    for p in &cfg.train.paths {
        check_pipeline(p)?;
    }
    cfg.validate()?;
    let data = cfg.load_data()?;
    let joints = data.profile.joints();

    create_dir(&a.out)?;
    let meta = Metadata::start("train");
    write(a.out.join("config.toml"), cfg.to_toml())?;
    let ckpt_root = a.out.join("checkpoints");
    let losses_path = a.out.join("losses.csv");
    let validation_path = a.out.join("validation.csv");

    let mut trainer = match latest_checkpoint(&ckpt_root)?.filter(|_| a.resume) {
        Some(dir) => {
            let t = Trainer::load_checkpoint(&dir)?;
            if t.cfg != cfg.train {
                bail!(Usage(format!(
                    "checkpoint {} was trained with a different [train] configuration",
                    dir.display()
                )));
            }
            truncate_csv(&losses_path, 1, t.epoch)?;
            if validation_path.exists() {
                truncate_csv(&validation_path, 0, t.epoch)?;
            }
            println!("resuming from {} (epoch {})", dir.display(), t.epoch);
            t
        }
        None => {
            if a.resume {
                println!("no checkpoint under {}; starting from scratch", ckpt_root.display());
            }
            std::fs::remove_file(&losses_path).ok();
            std::fs::remove_file(&validation_path).ok();
            Trainer::new(cfg.train.clone(), joints)?
        }
    };

    let with_validation = !data.validation.is_empty();
    if with_validation && trainer.epoch == 0 {
        write(&validation_path, "epoch,net,pck,map\n")?;
    }
    let eval_cfg = cfg.eval.config(joints);
    let mut log = std::io::BufWriter::new(append(&losses_path)?);
    let mut val_log = if with_validation { Some(append(&validation_path)?) } else { None };
    let epochs = trainer.cfg.epochs;
    trainer.fit(&data.train, Some(&mut log), |t, epoch| {
        t.save_checkpoint(checkpoint_dir(&ckpt_root, epoch + 1))?;
        let mut line = format!("epoch {}/{epochs}", epoch + 1);
        if let Some(w) = val_log.as_mut() {
            let nets: Vec<&TinyPoseNet> = t.nets.iter().collect();
            let r = evaluate(&nets, &data.validation, &eval_cfg)?;
            w.write_all(validation_rows(&r, epoch).as_bytes())
                .map_err(|e| multiaug_core::Error::io(&validation_path, e))?;
            line.push_str(&format!("  val PCK@{} {:.4}  mAP {:.4}", eval_cfg.pck_alpha, r.mean.pck, r.mean.map));
        }
        println!("{line}");
        Ok(())
    })?;
    log.flush()?;
    meta.finish(&a.out)?;
    println!("run written to {}", a.out.display());
    Ok(Outcome::Success)
}

pub fn rank_augs(a: &RankArgs) -> Result<Outcome> {
    let mut cfg = load_run_config(&a.config, a.epochs)?;
    let candidates = split_list(&a.candidates);
    if candidates.is_empty() {
        bail!(Usage("--candidates needs at least one pipeline".into()));
    }
    for c in &candidates {
        check_pipeline(c)?;
    }
    cfg.validate()?;
    let data = cfg.load_data()?;
    if data.validation.is_empty() {
        bail!(Usage("ranking needs validation samples (data.validation_count or data.validation_annotations)".into()));
    }
    let joints = data.profile.joints();
    create_dir(&a.out)?;
    let meta = Metadata::start("rank-augs");
    write(a.out.join("config.toml"), cfg.to_toml())?;
    let ranking = rank_augmentations(
        &candidates,
        &cfg.train,
        &data.train,
        &data.validation,
        &cfg.eval.config(joints),
        joints,
    )?;
    ranking.save(a.out.join("curves.csv"), a.out.join("ranking.csv"))?;
    meta.finish(&a.out)?;
    println!("rank  candidate  best PCK  epoch");
    for (i, e) in ranking.entries.iter().enumerate() {
        println!("{:>4}  {:<9}  {:.4}    {}", i + 1, e.candidate, e.best, e.best_epoch);
    }
    Ok(Outcome::Success)
}

fn parse_input(s: &str) -> Result<(usize, usize)> {
    let parsed = s
        .split_once('x')
        .and_then(|(h, w)| Some((h.trim().parse().ok()?, w.trim().parse().ok()?)));
    match parsed {
        Some((h, w)) if h >= 8 && w >= 8 && h % 4 == 0 && w % 4 == 0 => Ok((h, w)),
        _ => bail!(Usage(format!(
            "--input {s:?} must be HEIGHTxWIDTH, each at least 8 and divisible by 4"
        ))),
    }
}

fn load_net(path: &Path) -> Result<TinyPoseNet> {
    Ok(TinyPoseNet::from_tensor_file(&TensorFile::load(path)?)?)
}

/// Every network named by `--checkpoint`, in argument order.
fn load_nets(paths: &[PathBuf]) -> Result<Vec<TinyPoseNet>> {
    let mut nets = Vec::new();
    for p in paths {
        if p.is_dir() {
            let found: Vec<PathBuf> = NET_NAMES
                .iter()
                .map(|n| p.join(format!("net_{n}.tensors")))
                .filter(|f| f.exists())
                .collect();
            if found.is_empty() {
                bail!(Usage(format!("{} holds no net_A.tensors", p.display())));
            }
            for f in found {
                nets.push(load_net(&f)?);
            }
        } else if p.exists() {
            nets.push(load_net(p)?);
        } else {
            bail!(Usage(format!("checkpoint {} does not exist", p.display())));
        }
    }
    Ok(nets)
}

pub fn eval(a: &EvalArgs) -> Result<Outcome> {
    let kind: MetricKind = a.metric.parse().map_err(|e: multiaug_core::Error| Usage::wrap(e.into()))?;
    let input = parse_input(&a.input)?;
    let nets = load_nets(&a.checkpoints)?;
    let index = parse_coco_keypoints(&a.dataset, None).map_err(|e| Usage::wrap(e.into()))?;
    let joints = index.profile.joints();
    if let Some(n) = nets.iter().find(|n| n.joints() != joints) {
        bail!(Usage(format!(
            "a checkpoint predicts {} joints but the dataset has {joints}",
            n.joints()
        )));
    }
    let samples: Vec<EvalSample> = eval_samples(index.load_all(input)?);
    if samples.is_empty() {
        bail!(Usage(format!("{} has no labeled samples", a.dataset.display())));
    }
    create_dir(&a.out)?;
    let meta = Metadata::start("eval");
    let cfg = crate::config::EvalSection::default().config(joints);
    let refs: Vec<&TinyPoseNet> = nets.iter().collect();
    let report = evaluate(&refs, &samples, &cfg)?;
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    for (tag, net) in model_tags(nets.len()).iter().zip(&nets) {
        extract_features(net, &images)?
            .to_tensor_file()
            .save(a.out.join(format!("features_{tag}.tensors")))?;
    }
    let rows = report.rows(kind, &cfg);
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &mut buf)?;
    write(a.out.join("metrics.csv"), &buf)?;
    meta.finish(&a.out)?;
    if rows.is_empty() {
        eprintln!("error: no sample carries a head size, so PCKh is undefined");
        return Ok(Outcome::Failed);
    }
    print!("{}", String::from_utf8(buf)?);
    Ok(Outcome::Success)
}

pub fn svd(a: &SvdArgs) -> Result<Outcome> {
    if a.top_k == 0 {
        bail!(Usage("--top-k must be at least 1".into()));
    }
    let f = FeatureMatrix::load(&a.features).map_err(|e| Usage::wrap(e.into()))?;
    let centering = if a.centered { Centering::Centered } else { Centering::Raw };
    let report = spectrum_report(&f, a.top_k, centering)?;
    match &a.out {
        Some(p) => {
            report.save_csv(p)?;
            println!("H = {} over {} singular values, written to {}", report.entropy, report.top.len(), p.display());
        }
        None => report.write_csv(std::io::stdout().lock())?,
    }
    Ok(Outcome::Success)
}

pub fn validate_combo(a: &ValidateArgs) -> Result<Outcome> {
    let pipelines = a
        .pipelines
        .iter()
        .flat_map(|v| v.split('+'))
        .map(|p| {
            AugPipeline::preset(p.trim())
                .or_else(|_| AugPipeline::from_tags(p.trim()))
                .map_err(|e| pipeline_error(p, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = validate_combination(&pipelines);
    let names: Vec<&str> = pipelines.iter().map(|p| p.name.as_str()).collect();
    match report.verdict {
        Verdict::Recommended => {
            println!("recommended: {}", names.join(" + "));
            Ok(Outcome::Success)
        }
        Verdict::Warned => {
            let tags: Vec<String> = report.principles().iter().map(|p| p.to_string()).collect();
            println!("warned ({}): {}", tags.join(", "), names.join(" + "));
            for v in &report.violations {
                println!("  {}: {}", v.principle, v.message);
            }
            Ok(Outcome::Failed)
        }
    }
}
