use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use agentprint::classifier::{
    load_model, save_model, train as train_model, write_history_csv, ArchConfig, Model, Optimizer, Prediction,
    TrainConfig,
};
use agentprint::evaluation::{kfold_evaluate, EvalConfig, LabelKind};
use agentprint::features::{extract_mtam, read_dataset, write_dataset, Dataset, MtamConfig};
use agentprint::simulation::ArchetypeLibrary;
use agentprint::trace::{
    assemble_traces, parse_pcap, parse_prefix, read_traces, write_traces, FlowScope, IngestConfig, Trace,
};

use crate::{
    ArchArg, ClassifyArgs, CliError, EvaluateArgs, ExtractArgs, IngestArgs, OptimizerArg, RecipeArgs, TrainArgs,
    WindowArgs,
};

/// Prefixes runtime failures with the file they concern.
fn at<T, E: Into<CliError>>(path: &Path, r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| match e.into() {
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn capture_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = at(path, fs::read_dir(path))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|x| x == "pcap"));
    files.sort();
    if files.is_empty() {
        return Err(CliError::validation(format!("no .pcap files in {}", path.display())));
    }
    Ok(files)
}

pub fn ingest(a: &IngestArgs) -> Result<(), CliError> {
    let clients = a
        .client_ip
        .iter()
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::validation(format!("bad client address `{s}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let providers = a
        .provider_ip
        .iter()
        .map(|s| parse_prefix(s))
        .collect::<Result<Vec<_>, _>>()?;
    if providers.is_empty() && a.scope == FlowScope::Primary {
        return Err(CliError::validation("primary scope needs at least one --provider-ip"));
    }
    if !(a.session_gap > 0.0 && a.session_gap.is_finite()) {
        return Err(CliError::validation(
            "--session-gap must be a positive number of seconds",
        ));
    }
    let cfg = IngestConfig::new(clients, providers, a.scope)?;

    let files = capture_files(&a.pcap)?;
    let prefix_ids = a.pcap.is_dir();
    let mut traces = Vec::new();
    for file in &files {
        let bytes = at(file, fs::read(file))?;
        let records = parse_pcap(&bytes, &cfg).map_err(|e| match CliError::from(e) {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", file.display())),
            other => other,
        })?;
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for t in assemble_traces(&records, &cfg, a.session_gap) {
            let id = if prefix_ids {
                format!("{stem}/{}", t.id())
            } else {
                t.id().to_string()
            };
            traces.push(t.with_id(id).with_label(a.label.clone()));
        }
        log::info!("{}: {} records", file.display(), records.len());
    }
    at(&a.out, write_traces(&traces, &a.out))?;
    println!(
        "{} traces from {} capture(s) written to {}",
        traces.len(),
        files.len(),
        a.out.display()
    );
    Ok(())
}

fn mtam_config(windows: usize, w: &WindowArgs) -> Result<MtamConfig, CliError> {
    let cfg = MtamConfig {
        windows,
        mode: w.mode.into(),
        gap: w.gap,
        clip_counts: w.clip_counts,
        clip_bytes: w.clip_bytes,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn extract(a: &ExtractArgs) -> Result<(), CliError> {
    let cfg = mtam_config(a.windows, &a.window)?;
    let traces = at(&a.traces, read_traces(&a.traces))?;
    let (ds, failures) = Dataset::from_traces(&traces, &cfg, a.normalize)?;
    for f in &failures {
        log::warn!("trace {} (`{}`) skipped: {}", f.index, f.trace_id, f.error);
    }
    if ds.is_empty() {
        return Err(CliError::validation(format!(
            "none of the {} traces could be extracted",
            traces.len()
        )));
    }
    at(&a.out, write_dataset(&ds, &a.out))?;
    println!(
        "{} samples ({} skipped), {} labels, written to {}",
        ds.len(),
        failures.len(),
        ds.header.label_map.len(),
        a.out.display()
    );
    Ok(())
}

pub(crate) fn train_config(r: &RecipeArgs) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        epochs: r.epochs.unwrap_or(d.epochs),
        batch_size: r.batch.unwrap_or(d.batch_size),
        learning_rate: r.lr.unwrap_or(d.learning_rate),
        optimizer: match r.optimizer {
            Some(OptimizerArg::Adam) => Optimizer::Adam,
            Some(OptimizerArg::Sgd) => Optimizer::SgdMomentum,
            None => d.optimizer,
        },
        seed: r.seed,
        patience: match r.patience {
            Some(0) => None,
            Some(p) => Some(p),
            None => d.patience,
        },
        ..d
    }
}

pub(crate) fn arch_config(arch: ArchArg, windows: usize, classes: usize) -> ArchConfig {
    match arch {
        ArchArg::Standard => ArchConfig::standard(windows, classes),
        ArchArg::Tiny => ArchConfig::tiny(windows, classes),
    }
}

fn labelled_dataset(path: &Path, kind: LabelKind) -> Result<Dataset, CliError> {
    Ok(at(path, read_dataset(path))?.relabel(|l| kind.apply(l)))
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let ds = labelled_dataset(&a.dataset, a.recipe.labels)?;
    let cfg = train_config(&a.recipe);
    let arch = arch_config(a.recipe.arch, ds.header.windows, ds.header.label_map.len());
    let model = Model::<f32>::build(arch, cfg.seed)?.with_label_map(ds.header.label_map.clone())?;
    let (model, history) = train_model(model, &ds, &cfg)?;
    at(&a.out, save_model(&model, &a.out))?;
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        p.into()
    });
    at(
        &history_path,
        write_history_csv(
            &history,
            BufWriter::new(at(&history_path, File::create(&history_path))?),
        ),
    )?;
    let best = &history.epochs[history.best_epoch];
    println!(
        "trained {} epochs, best epoch {} (val_loss {}, val_acc {}); model written to {}",
        history.epochs.len(),
        history.best_epoch,
        best.val_loss,
        best.val_acc,
        a.out.display()
    );
    Ok(())
}

struct Scored {
    trace_id: String,
    truth: String,
    prediction: Prediction,
}

fn score_dataset(
    model: &Model<f32>,
    path: &Path,
    threshold: Option<f64>,
    relabel: &dyn Fn(&str) -> String,
) -> Result<Vec<Scored>, CliError> {
    let ds = at(path, read_dataset(path))?;
    if ds.header.windows != model.arch().windows {
        return Err(CliError::validation(format!(
            "dataset has {} windows, the model expects {}",
            ds.header.windows,
            model.arch().windows
        )));
    }
    if ds.header.scheme != model.normalization() {
        return Err(CliError::validation(format!(
            "dataset normalization {:?} differs from the model's {:?}",
            ds.header.scheme,
            model.normalization()
        )));
    }
    check_features(model, &ds.header.config_hash)?;
    let inputs: Vec<&[f32]> = ds.samples.iter().map(|s| s.values.as_slice()).collect();
    let preds = model.predict_inputs(&inputs, threshold)?;
    Ok(ds
        .samples
        .iter()
        .zip(preds)
        .map(|(s, prediction)| Scored {
            trace_id: s.trace_id.clone(),
            truth: relabel(&ds.header.label_map[s.label]),
            prediction,
        })
        .collect())
}

fn check_features(model: &Model<f32>, digest: &str) -> Result<(), CliError> {
    match model.trained_on() {
        Some(trained) if trained != digest => Err(CliError::validation(format!(
            "feature configuration {digest} differs from the one the model was trained on ({trained})"
        ))),
        _ => Ok(()),
    }
}

fn score_traces(
    model: &Model<f32>,
    traces: &[Trace],
    cfg: &MtamConfig,
    threshold: Option<f64>,
    relabel: &dyn Fn(&str) -> String,
) -> Result<Vec<Scored>, CliError> {
    check_features(model, &cfg.digest())?;
    let mut out = Vec::with_capacity(traces.len());
    for t in traces {
        let mtam = match extract_mtam(t, cfg) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("trace `{}` skipped: {e}", t.id());
                continue;
            }
        };
        out.push(Scored {
            trace_id: t.id().to_string(),
            truth: t.label().map(relabel).unwrap_or_default(),
            prediction: model.predict(&mtam, threshold)?,
        });
    }
    Ok(out)
}

pub fn classify(a: &ClassifyArgs) -> Result<(), CliError> {
    let threshold = if a.open_world { a.threshold } else { None };
    if let Some(t) = threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::validation(format!("threshold {t} outside [0, 1]")));
        }
    }
    let model = at(&a.model, load_model(&a.model))?;
    let relabel = |l: &str| a.labels.map_or_else(|| l.to_string(), |k| k.apply(l));
    let scored = match (&a.dataset, &a.traces) {
        (Some(ds), _) => score_dataset(&model, ds, threshold, &relabel)?,
        (None, Some(tr)) => {
            let cfg = mtam_config(model.arch().windows, &a.window)?;
            score_traces(&model, &at(tr, read_traces(tr))?, &cfg, threshold, &relabel)?
        }
        (None, None) => return Err(CliError::validation("one of --traces or --dataset is required")),
    };

    let mut w = csv::Writer::from_writer(BufWriter::new(at(&a.out, File::create(&a.out))?));
    let mut header = vec![
        "trace_id".to_string(),
        "label".into(),
        "predicted".into(),
        "confidence".into(),
    ];
    header.extend(model.label_map().iter().map(|l| format!("p_{l}")));
    w.write_record(&header)?;
    for s in &scored {
        let p = &s.prediction;
        let confidence = p.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut row = vec![
            s.trace_id.clone(),
            s.truth.clone(),
            p.label.clone(),
            confidence.to_string(),
        ];
        row.extend(p.probs.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    if let Some(path) = &a.embeddings {
        let mut w = csv::Writer::from_writer(BufWriter::new(at(path, File::create(path))?));
        let dim = model.arch().embedding_dim();
        let mut header = vec!["trace_id".to_string(), "label".into()];
        header.extend((1..=dim).map(|i| format!("v_{i}")));
        w.write_record(&header)?;
        for s in &scored {
            let mut row = vec![s.trace_id.clone(), s.truth.clone()];
            row.extend(s.prediction.embedding.iter().flatten().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    let rejected = scored.iter().filter(|s| s.prediction.class.is_none()).count();
    println!(
        "{} predictions ({rejected} rejected) written to {}",
        scored.len(),
        a.out.display()
    );
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let ds = labelled_dataset(&a.dataset, a.recipe.labels)?;
    let cfg = EvalConfig {
        repeats: a.repeats,
        ratios: a.split,
        train: train_config(&a.recipe),
        arch: arch_config(a.recipe.arch, ds.header.windows, ds.header.label_map.len()),
        seed: a.recipe.seed,
    };
    let report = kfold_evaluate(&ds, &cfg)?;
    report.write_csv(BufWriter::new(at(&a.out, File::create(&a.out))?))?;
    match &report.fold_stats {
        Some(s) => println!(
            "macro-F1 {:.4} ± {:.4}, accuracy {:.4} ± {:.4} over {} repeats; report written to {}",
            s.macro_f1_mean,
            s.macro_f1_std,
            s.accuracy_mean,
            s.accuracy_std,
            report.folds.len(),
            a.out.display()
        ),
        None => println!("macro-F1 {:.4}; report written to {}", report.macro_f1, a.out.display()),
    }
    Ok(())
}

pub fn simulate_traffic(archetypes: Option<&Path>, per_class: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    if per_class == 0 {
        return Err(CliError::validation("--per-class must be at least 1"));
    }
    let library = match archetypes {
        Some(p) => at(p, ArchetypeLibrary::load(p))?,
        None => ArchetypeLibrary::builtin(),
    };
    let traces = library.generate(per_class, seed);
    at(out, write_traces(&traces, out))?;
    println!("{} traces written to {}", traces.len(), out.display());
    Ok(())
}
