use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Deserialize;

use somno::edf::EdfFile;
use somno::features::{mutual_info, relative_importance, stat_features, write_feature_csv, MiOptions, FEATURE_NAMES};
use somno::metrics::{confusion, report, write_hypnogram, HypnogramRow};
use somno::net::{fit, load_weights, predict_set, save_weights, Model, ModelConfig, SequenceSet, TrainConfig};
use somno::pipeline::{
    group_by_night, kfold_split, prepare_night, read_epd, write_epd, DatasetSplit, LabeledEpoch, NightId, PrepOptions,
    SplitOptions, StageLabel,
};
use somno::stream::{replay_edf, ReplayOptions, Server, ServerOptions, CALIB_SERVER_DEFAULT};
use somno::synth::{synth_hypnogram, SynthNight};
use somno::MODEL_RATE_HZ;

use crate::{
    Command, EvalArgs, FeaturesArgs, NightArgs, PredictArgs, PrepArgs, ReplayArgs, ServeArgs, SplitArgs, SynthArgs,
    TrainArgs, UsageError,
};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Inspect { edf } => inspect(&edf),
        Command::Prep(a) => prep(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Serve(a) => serve(a),
        Command::Replay(a) => replay(a),
        Command::Split(a) => split(a),
        Command::Synth(a) => synth(a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn inspect(path: &Path) -> Result<()> {
    let f = EdfFile::open(path).with_context(|| format!("reading {}", path.display()))?;
    let h = &f.header;
    let mut out = std::io::stdout().lock();
    writeln!(out, "file        {}", path.display())?;
    writeln!(out, "patient     {}", h.patient_id)?;
    writeln!(out, "recording   {}", h.recording_id)?;
    writeln!(out, "start       {} {}", h.start_date, h.start_time)?;
    writeln!(
        out,
        "records     {} x {} s ({} s)",
        h.data_record_count,
        h.record_duration_s,
        h.data_record_count as f64 * h.record_duration_s
    )?;
    writeln!(out, "signals     {}", f.signals.len())?;
    for (i, s) in f.signals.iter().enumerate() {
        let rate = if h.record_duration_s > 0.0 {
            format!("{} Hz", s.samples_per_record as f64 / h.record_duration_s)
        } else {
            format!("{} samples/record", s.samples_per_record)
        };
        writeln!(
            out,
            "  {i:>2} {:<18} {:<12} {:>4} [{}, {}] digital [{}, {}]",
            s.label, rate, s.physical_dim, s.physical_min, s.physical_max, s.digital_min, s.digital_max
        )?;
    }
    if let Ok(ann) = f.parse_annotations() {
        writeln!(out, "annotations {}", ann.len())?;
        let mut counts: Vec<(String, f64)> = Vec::new();
        for a in &ann {
            match counts.iter_mut().find(|(t, _)| *t == a.label_text) {
                Some((_, d)) => *d += a.duration_s,
                None => counts.push((a.label_text.clone(), a.duration_s)),
            }
        }
        for (text, dur) in counts {
            writeln!(out, "  {text:<24} {dur} s")?;
        }
    }
    Ok(())
}

fn night_id(a: &NightArgs) -> NightId {
    a.night
        .map(NightId)
        .or_else(|| NightId::from_sleep_edf_name(&a.psg.to_string_lossy()))
        .unwrap_or(NightId(0))
}

fn load_night(a: &NightArgs) -> Result<Vec<LabeledEpoch>> {
    let rec = EdfFile::open(&a.psg)
        .and_then(|f| f.read_signal(&a.channel))
        .with_context(|| format!("reading channel {:?} of {}", a.channel, a.psg.display()))?;
    if rec.clamped_samples > 0 {
        warn!(
            "{} samples were outside the digital range and clamped",
            rec.clamped_samples
        );
    }
    let ann = EdfFile::open(&a.hyp)
        .and_then(|f| f.parse_annotations())
        .with_context(|| format!("reading annotations of {}", a.hyp.display()))?;
    let opts = PrepOptions {
        boundary_epochs: a.boundary_epochs,
        normalization: a.normalization.into(),
        ..PrepOptions::default()
    };
    let night = night_id(a);
    let ep = prepare_night(&rec, &ann, night, &opts).context("preparing epochs")?;
    for w in &ep.warnings {
        warn!("{w:?}");
    }
    info!(
        "night {night}: {} epochs kept, {} excluded",
        ep.epochs.len(),
        ep.excluded
    );
    Ok(ep.epochs)
}

fn prep(a: PrepArgs) -> Result<()> {
    let epochs = load_night(&a.night)?;
    write_epd(&a.out, &epochs).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} epochs written to {}", epochs.len(), a.out.display());
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let epochs = read_epd(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let rows = epochs
        .iter()
        .map(|e| Ok((stat_features(&e.samples, MODEL_RATE_HZ)?, e.label.code())))
        .collect::<Result<Vec<_>>>()?;
    write_feature_csv(&rows, create(&a.out)?)?;
    println!("{} feature rows written to {}", rows.len(), a.out.display());
    if !a.mi {
        return Ok(());
    }
    let opts = MiOptions {
        k: a.k as usize,
        seed: a.seed,
        scaling: a.mi_scaling.into(),
    };
    let mut per_night = Vec::new();
    let mut offset = 0;
    for (night, group) in group_by_night(epochs.clone()) {
        let range = offset..offset + group.len();
        offset += group.len();
        let x: Vec<Vec<f64>> = rows[range.clone()].iter().map(|(f, _)| f.to_array().to_vec()).collect();
        let y: Vec<u8> = rows[range].iter().map(|(_, l)| *l).collect();
        per_night.push(mutual_info(&x, &y, &opts).with_context(|| format!("mutual information of night {night}"))?);
    }
    let ranking = relative_importance(&per_night)?;
    if let Some(p) = &a.mi_out {
        ranking.write_csv(&FEATURE_NAMES, create(p)?)?;
    }
    println!("{:<20} {:>10} {:>8}", "feature", "MI (nats)", "share %");
    for i in ranking.order() {
        println!(
            "{:<20} {:>10.4} {:>8.2}",
            FEATURE_NAMES[i], ranking.scores[i], ranking.relative_importance[i]
        );
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Every EPD1 file of `dir`, in file-name order.
fn load_dir(dir: &Path) -> Result<Vec<LabeledEpoch>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "epd"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .epd files in {}", dir.display());
    }
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_epd(&p).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(all)
}

fn select(nights: &[(NightId, Vec<LabeledEpoch>)], wanted: &[NightId]) -> Result<Vec<LabeledEpoch>> {
    let mut out = Vec::new();
    for id in wanted {
        let (_, e) = nights
            .iter()
            .find(|(n, _)| n == id)
            .with_context(|| format!("night {id} of the split is not in the data directory"))?;
        out.extend(e.iter().cloned());
    }
    Ok(out)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg: RunConfig = read_json(&a.config)?;
    cfg.model.validate().context("model config")?;
    let split: DatasetSplit = read_json(&a.split)?;
    if split.train.is_empty() {
        bail!("split has no training nights");
    }
    let nights = group_by_night(load_dir(&a.data)?);
    let train_set = SequenceSet::from_epochs(&select(&nights, &split.train)?, cfg.model.seq_len);
    let val_set = if split.validation.is_empty() {
        None
    } else {
        Some(SequenceSet::from_epochs(
            &select(&nights, &split.validation)?,
            cfg.model.seq_len,
        ))
    };
    info!(
        "{} training and {} validation sequences",
        train_set.len(),
        val_set.as_ref().map_or(0, SequenceSet::len)
    );
    let tc = TrainConfig {
        seed: a.seed,
        ..cfg.train
    };
    let mut model = Model::<f32>::new(cfg.model, a.seed)?;
    let mut log_file = a.log.as_deref().map(create).transpose()?;
    let history = fit(
        &mut model,
        &train_set,
        val_set.as_ref(),
        &tc,
        log_file.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = log_file {
        w.flush()?;
    }
    save_weights(&model.weights(), &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(last) = history.epochs.last() {
        let val = last
            .val_acc
            .map(|v| format!(", validation accuracy {v:.4}"))
            .unwrap_or_default();
        println!("{} epochs, training accuracy {:.4}{val}", last.epoch, last.train_acc);
    }
    println!("weights written to {}", a.out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    let w = load_weights(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Model::from_weights(&w)?)
}

fn argmax(row: &[f32]) -> (u8, f32) {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    (best as u8, row[best])
}

/// Predicted stage and confidence per epoch, in `set` order.
fn predict_epochs(model: &Model<f32>, set: &SequenceSet) -> Result<Vec<(u8, f32)>> {
    let probs = predict_set(model, set, 32)?;
    Ok(probs.chunks(model.config().classes).map(argmax).collect())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.weights)?;
    let epochs = read_epd(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let set = SequenceSet::from_epochs(&epochs, model.config().seq_len);
    if set.is_empty() {
        bail!(
            "no complete sequence of {} epochs in {}",
            model.config().seq_len,
            a.data.display()
        );
    }
    let predicted: Vec<u8> = predict_epochs(&model, &set)?.into_iter().map(|(s, _)| s).collect();
    let cm = confusion(&set.labels, &predicted)?;
    let r = report(&cm)?;
    fs::write(&a.report, r.to_json()).with_context(|| format!("writing {}", a.report.display()))?;
    let mut w = create(&a.cm)?;
    cm.write_csv(&mut w)?;
    w.flush()?;
    print!("{r}");
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.weights)?;
    let epochs = load_night(&a.night)?;
    let set = SequenceSet::from_epochs(&epochs, model.config().seq_len);
    let predicted = predict_epochs(&model, &set)?;
    // from_epochs keeps epoch order and only drops incomplete trailing windows
    let covered = sequence_epochs(&epochs, model.config().seq_len);
    let rows: Vec<HypnogramRow> = covered
        .iter()
        .zip(&predicted)
        .map(|(e, &(s, c))| {
            HypnogramRow::new(
                e.epoch_index,
                Some(e.label),
                StageLabel::from_code(s).expect("model has 5 classes"),
                c as f64,
            )
        })
        .collect();
    let mut w = create(&a.out)?;
    write_hypnogram(&rows, &mut w)?;
    w.flush()?;
    let correct = rows.iter().filter(|r| r.true_stage == Some(r.predicted_stage)).count();
    println!(
        "{} epochs staged, agreement with reference {:.4}; written to {}",
        rows.len(),
        correct as f64 / rows.len().max(1) as f64,
        a.out.display()
    );
    Ok(())
}

/// The epochs [`SequenceSet::from_epochs`] keeps, in the same order.
fn sequence_epochs(epochs: &[LabeledEpoch], seq_len: usize) -> Vec<&LabeledEpoch> {
    fn flush<'a>(run: &mut Vec<&'a LabeledEpoch>, out: &mut Vec<&'a LabeledEpoch>, seq_len: usize) {
        let keep = run.len() / seq_len * seq_len;
        out.extend(run.drain(..).take(keep));
    }
    let mut out = Vec::new();
    let mut run: Vec<&LabeledEpoch> = Vec::new();
    for e in epochs {
        if let Some(prev) = run.last() {
            if prev.source_night != e.source_night || prev.epoch_index + 1 != e.epoch_index {
                flush(&mut run, &mut out, seq_len);
            }
        }
        run.push(e);
    }
    flush(&mut run, &mut out, seq_len);
    out
}

fn serve(a: ServeArgs) -> Result<()> {
    let model = load_model(&a.weights)?;
    if let Some(dir) = &a.hypnogram_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let opts = ServerOptions {
        default_calib_epochs: a.calib_epochs,
        hypnogram_dir: a.hypnogram_dir,
    };
    let server = Server::bind((a.host.as_str(), a.port), Arc::new(model), opts)?;
    info!("listening on {}", server.local_addr()?);
    server.serve()?;
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let opts = ReplayOptions {
        speed: a.speed,
        calib_epochs: a.calib_epochs.unwrap_or(CALIB_SERVER_DEFAULT),
        device_name: a.device,
        ..ReplayOptions::default()
    };
    let mut stdout = std::io::stdout();
    let frames = replay_edf(&a.psg, &a.channel, (a.host.as_str(), a.port), &opts, |s| {
        let stage = StageLabel::from_code(s.stage).map_or("?", StageLabel::name);
        // a closed stdout must not end the session
        let _ = writeln!(
            stdout,
            "{:>6} {:>8.1} {:<5} {:.4}",
            s.epoch_index,
            s.epoch_index as f64 * 30.0,
            stage,
            s.confidence
        );
    })?;
    if let Some(path) = &a.out {
        let rows: Vec<HypnogramRow> = frames
            .iter()
            .map(|s| {
                HypnogramRow::new(
                    s.epoch_index,
                    None,
                    StageLabel::from_code(s.stage).unwrap_or(StageLabel::Wake),
                    s.confidence as f64,
                )
            })
            .collect();
        let mut w = create(path)?;
        write_hypnogram(&rows, &mut w)?;
        w.flush()?;
    }
    info!("{} stages received", frames.len());
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    if a.k < 2 || a.fold >= a.k {
        return Err(usage(format!(
            "need k >= 2 and fold < k, got k={} fold={}",
            a.k, a.fold
        )));
    }
    let nights: Vec<NightId> = group_by_night(load_dir(&a.data)?).into_iter().map(|(n, _)| n).collect();
    let s = kfold_split(&nights, a.k, a.fold, a.seed, &SplitOptions::default())?;
    fs::write(&a.out, serde_json::to_string_pretty(&s)? + "\n")
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "fold {}: {} train, {} validation, {} test nights",
        a.fold,
        s.train.len(),
        s.validation.len(),
        s.test.len()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for i in 0..a.nights {
        // one night per subject
        let id = NightId(4001 + 10 * i);
        let seed = a.seed.wrapping_add(i as u64);
        let hyp = synth_hypnogram(a.epochs as usize, seed);
        let night = SynthNight::generate(hyp, a.rate as f64, seed);
        let (psg, hyp) = night.write_edf_pair(&a.out, id)?;
        println!("{} {}", psg.display(), hyp.display());
    }
    Ok(())
}
