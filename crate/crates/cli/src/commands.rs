use std::collections::BTreeMap;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;

use adagcl::data::{
    k_core_filter, load_interactions, read_manifest, read_split, sha256_file, split, Axis, Format,
    SplitMode,
};
use adagcl::eval::{
    lambda1_sweep, line_chart, noise_chart, noise_csv, noise_robustness, sparsity_csv,
    sparsity_report, sweep_chart, sweep_csv, GroupMetrics, ModelKind, Series, DEFAULT_CUTOFFS,
    LAMBDA1_GRID, NOISE_RATIOS,
};
use adagcl::trainer::{fit_with, view_embeddings};
use adagcl::{evaluate, Embeddings, EvalMode, InteractionGraph, SplitSet, TrainConfig, TrainState};

use crate::args::{
    EvalArgs, ExperimentArgs, ExperimentKind, ExportArgs, ModeArg, PrepareArgs, SplitModeArg,
    TrainArgs, Which,
};
use crate::error::{CliError, EXIT_INTERRUPTED};
use crate::manifest::{RunManifest, Status};
use crate::{ACTIVE, COOPERATIVE, INTERRUPTED};

/// Env var naming the root for default output directories.
pub const OUTPUT_ENV: &str = "ADAGCL_OUTPUT_DIR";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn stamped(name: &str) -> PathBuf {
    output_root().join(format!(
        "{name}-{}",
        chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ")
    ))
}

fn write_file(m: &mut RunManifest, name: &str, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    let p = m.output_dir.join(name);
    fs::write(&p, body).map_err(|e| CliError::io(&p, e))?;
    m.output(name);
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(v).map_err(adagcl::Error::from)?)
}

/// Writes the manifest, runs `work`, then finalizes the manifest with the
/// outcome.
fn run_recorded(
    mut m: RunManifest,
    work: impl FnOnce(&mut RunManifest) -> Result<(), CliError>,
) -> Result<(), CliError> {
    m.write()?;
    *ACTIVE.lock().unwrap() = Some(m.clone());
    let result = work(&mut m);
    ACTIVE.lock().unwrap().take();
    let (status, code, msg) = match &result {
        Ok(()) => (Status::Success, 0, None),
        Err(CliError::Interrupted) => (
            Status::Interrupted,
            EXIT_INTERRUPTED,
            Some("interrupted".into()),
        ),
        Err(e) => (Status::Failed, e.exit_code(), Some(e.to_string())),
    };
    m.finish(status, code, msg)?;
    result
}

fn config_map(cfg: &TrainConfig) -> BTreeMap<String, String> {
    TrainConfig::KEYS
        .iter()
        .map(|k| (k.to_string(), cfg.get(k).unwrap_or_default()))
        .collect()
}

/// Defaults, then the config file, then command-line overrides.
fn resolve_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
    inputs: &mut BTreeMap<String, String>,
) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
        cfg.apply_kv_text(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        inputs.insert("config_file".into(), sha256_file(p)?);
    }
    for (k, v) in overrides {
        cfg.set(k, v)
            .map_err(|e| CliError::Usage(format!("--{k}: {e}")))?;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn load_split(dir: &Path, inputs: &mut BTreeMap<String, String>) -> Result<SplitSet, CliError> {
    let (s, manifest) = read_split(dir)?;
    inputs.insert("split".into(), manifest.checksum);
    Ok(s)
}

fn load_checkpoint(
    path: &Path,
    splits: &SplitSet,
    inputs: &mut BTreeMap<String, String>,
) -> Result<TrainState, CliError> {
    inputs.insert("checkpoint".into(), sha256_file(path)?);
    let state = TrainState::load(path)?;
    if (state.user_count(), state.item_count()) != (splits.user_count(), splits.item_count()) {
        return Err(CliError::Data(format!(
            "checkpoint covers {} users x {} items but the split has {} x {}",
            state.user_count(),
            state.item_count(),
            splits.user_count(),
            splits.item_count()
        )));
    }
    Ok(state)
}

pub fn prepare(a: PrepareArgs) -> Result<(), CliError> {
    let ratios: [f64; 3] = a.ratios.as_slice().try_into().map_err(|_| {
        CliError::Usage(format!(
            "--ratios needs three values, got {}",
            a.ratios.len()
        ))
    })?;
    let format: Format = a
        .format
        .parse()
        .map_err(|e: adagcl::DataError| CliError::Usage(e.to_string()))?;
    let mode = match a.split_mode {
        SplitModeArg::PerUser => SplitMode::PerUser,
        SplitModeArg::Global => SplitMode::Global,
    };
    let out = a.out.unwrap_or_else(|| output_root().join("split"));
    let source = sha256_file(&a.input)?;
    let mut config = BTreeMap::new();
    config.insert("format".to_string(), a.format.clone());
    config.insert(
        "k_core".to_string(),
        a.k_core.map(|k| k.to_string()).unwrap_or_default(),
    );
    config.insert("ratios".to_string(), format!("{ratios:?}"));
    config.insert("split_mode".to_string(), format!("{mode:?}"));

    if let (Ok(prev), Ok(run)) = (read_manifest(&out), RunManifest::read(&out)) {
        let same = prev.source_checksum.as_deref() == Some(source.as_str())
            && prev.seed == a.split_seed
            && prev.ratios == ratios
            && prev.k_core == a.k_core
            && prev.mode == mode
            && run.config == config
            && run.status == Status::Success;
        if same && read_split(&out).is_ok() {
            println!("up-to-date: {} (checksum {})", out.display(), prev.checksum);
            return Ok(());
        }
    }

    let mut m = RunManifest::new("prepare", &out);
    m.config = config;
    m.seeds.insert("split_seed".into(), a.split_seed);
    m.inputs.insert("input".into(), source.clone());
    run_recorded(m, |m| {
        let mut table = load_interactions(&a.input, format)?;
        if let Some(k) = a.k_core {
            table = k_core_filter(&table, k)?;
        }
        let s = split(&table, ratios, a.split_seed, mode)?;
        let sm = adagcl::data::write_split(&out, &s, (Some(source), a.k_core))?;
        for f in [
            "train.tsv",
            "validation.tsv",
            "test.tsv",
            "user_map.json",
            "item_map.json",
            "manifest.json",
        ] {
            m.output(f);
        }
        let c = &sm.counts;
        println!(
            "users {} items {} interactions {} (train {}, validation {}, test {}) -> {}",
            c.users,
            c.items,
            c.train + c.validation + c.test,
            c.train,
            c.validation,
            c.test,
            out.display()
        );
        Ok(())
    })
}

fn eval_and_write(
    m: &mut RunManifest,
    emb: &Embeddings,
    splits: &SplitSet,
    state: &TrainState,
    mode: EvalMode,
    cutoffs: &[usize],
) -> Result<(), CliError> {
    let mut rep = evaluate(emb, splits, mode, cutoffs)?;
    rep.meta.config_hash = Some(state.config.hash());
    rep.meta.seed = Some(state.config.seed);
    rep.meta.epoch = state.best_epoch.or(Some(state.epoch));
    let stem = match mode {
        EvalMode::Validation => "eval_validation",
        EvalMode::Test => "eval_test",
    };
    rep.write(&m.output_dir, stem)?;
    for ext in [".json", ".csv", "_users.csv"] {
        m.output(&format!("{stem}{ext}"));
    }
    let cells: Vec<String> = rep
        .cutoffs
        .iter()
        .zip(rep.recall.iter().zip(&rep.ndcg))
        .map(|(n, (r, g))| format!("recall@{n} {r:.4} ndcg@{n} {g:.4}"))
        .collect();
    println!("{stem}: {}", cells.join(", "));
    Ok(())
}

pub fn train(a: TrainArgs, overrides: &[(String, String)]) -> Result<(), CliError> {
    let mut inputs = BTreeMap::new();
    let cfg = resolve_config(a.config.as_deref(), overrides, &mut inputs)?;
    let splits = load_split(&a.split, &mut inputs)?;
    let out = a.out.unwrap_or_else(|| stamped("train"));
    let mut m = RunManifest::new("train", &out);
    m.config = config_map(&cfg);
    m.seeds.insert("seed".into(), cfg.seed);
    m.seeds.insert("split_seed".into(), splits.seed);
    m.inputs = inputs;
    COOPERATIVE.store(true, Ordering::SeqCst);
    run_recorded(m, |m| {
        write_file(m, "config.txt", cfg.to_kv_text())?;
        let last = m.output_dir.join("last.ckpt");
        let mut save_err = None;
        let every = a.checkpoint_every;
        let (state, history) = fit_with(&cfg, &splits, |state, rec| {
            if every > 0 && rec.epoch % every == 0 {
                if let Err(e) = state.save(&last) {
                    save_err = Some(e);
                    return ControlFlow::Break(());
                }
            }
            if INTERRUPTED.load(Ordering::SeqCst) {
                log::warn!("interrupt received; stopping after epoch {}", rec.epoch);
                return ControlFlow::Break(());
            }
            ControlFlow::Continue(())
        })?;
        if let Some(e) = save_err {
            return Err(e.into());
        }
        if last.exists() {
            m.output("last.ckpt");
        }
        state.save(&m.output_dir.join("model.ckpt"))?;
        m.output("model.ckpt");
        history.write(&m.output_dir)?;
        m.output("history.csv");
        m.output("history.json");
        println!(
            "trained {} epochs (best epoch {}, val recall@20 {})",
            history.records.len(),
            history
                .best_epoch
                .map(|e| e.to_string())
                .unwrap_or_else(|| "-".into()),
            if history.best_metric.is_finite() {
                format!("{:.4}", history.best_metric)
            } else {
                "-".into()
            }
        );
        if INTERRUPTED.load(Ordering::SeqCst) {
            return Err(CliError::Interrupted);
        }
        let emb = state.main.embed(&InteractionGraph::build(&splits.train)?)?;
        if !splits.validation.is_empty() {
            eval_and_write(
                m,
                &emb,
                &splits,
                &state,
                EvalMode::Validation,
                &DEFAULT_CUTOFFS,
            )?;
        }
        if !splits.test.is_empty() {
            eval_and_write(m, &emb, &splits, &state, EvalMode::Test, &DEFAULT_CUTOFFS)?;
        }
        println!("outputs in {}", m.output_dir.display());
        Ok(())
    })
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut inputs = BTreeMap::new();
    let splits = load_split(&a.split, &mut inputs)?;
    let state = load_checkpoint(&a.checkpoint, &splits, &mut inputs)?;
    let out = a.out.unwrap_or_else(|| stamped("eval"));
    let mut m = RunManifest::new("eval", &out);
    m.config = config_map(&state.config);
    m.config
        .insert("cutoffs".into(), format!("{:?}", a.cutoffs));
    m.seeds.insert("seed".into(), state.config.seed);
    m.seeds.insert("split_seed".into(), splits.seed);
    m.inputs = inputs;
    let mode = match a.mode {
        ModeArg::Validation => EvalMode::Validation,
        ModeArg::Test => EvalMode::Test,
    };
    run_recorded(m, |m| {
        let emb = state.main.embed(&InteractionGraph::build(&splits.train)?)?;
        eval_and_write(m, &emb, &splits, &state, mode, &a.cutoffs)
    })
}

fn parse_models(
    names: &Option<Vec<String>>,
    default: &[ModelKind],
) -> Result<Vec<ModelKind>, CliError> {
    match names {
        None => Ok(default.to_vec()),
        Some(v) => v
            .iter()
            .map(|s| {
                s.parse::<ModelKind>()
                    .map_err(|e| CliError::Usage(e.to_string()))
            })
            .collect(),
    }
}

fn group_chart(title: &str, per_model: &[(ModelKind, Vec<GroupMetrics>)]) -> String {
    let series: Vec<Series> = per_model
        .iter()
        .map(|(m, groups)| Series {
            name: m.name().to_string(),
            points: groups
                .iter()
                .enumerate()
                .filter_map(|(g, gm)| gm.recall.as_ref().map(|r| (g as f64, r[0])))
                .collect(),
        })
        .collect();
    line_chart(
        title,
        "group (ascending training degree)",
        "Recall@20",
        &series,
    )
}

pub fn experiment(a: ExperimentArgs, overrides: &[(String, String)]) -> Result<(), CliError> {
    let mut inputs = BTreeMap::new();
    let cfg = resolve_config(a.config.as_deref(), overrides, &mut inputs)?;
    let splits = load_split(&a.split, &mut inputs)?;
    let kind = match a.kind {
        ExperimentKind::Noise => "noise",
        ExperimentKind::Sparsity => "sparsity",
        ExperimentKind::Sweep => "sweep",
    };
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| stamped(&format!("experiment-{kind}")));
    let mut m = RunManifest::new("experiment", &out);
    m.config = config_map(&cfg);
    m.config.insert("kind".into(), kind.into());
    m.seeds.insert("seed".into(), cfg.seed);
    m.seeds.insert("split_seed".into(), splits.seed);
    m.inputs = inputs;
    run_recorded(m, |m| {
        match a.kind {
            ExperimentKind::Noise => {
                let models = parse_models(&a.models, &ModelKind::ALL)?;
                let ratios = a.ratios.clone().unwrap_or_else(|| NOISE_RATIOS.to_vec());
                let rows = noise_robustness(&cfg, &splits, &ratios, &models)?;
                write_file(m, "noise.csv", noise_csv(&rows))?;
                write_file(m, "noise.json", json(&rows)?)?;
                write_file(m, "noise.svg", noise_chart(&rows))?;
                for r in rows.iter().filter(|r| r.ratio > 0.0) {
                    println!(
                        "{} noise {:.2}: recall@20 {:.4} (relative drop {:.4})",
                        r.model.name(),
                        r.ratio,
                        r.recall20,
                        r.relative_drop
                    );
                }
            }
            ExperimentKind::Sparsity => {
                let models = parse_models(&a.models, &[ModelKind::AdaGcl, ModelKind::LightGcn])?;
                let cutoffs = DEFAULT_CUTOFFS;
                let graph = InteractionGraph::build(&splits.train)?;
                let mut users = Vec::new();
                let mut items = Vec::new();
                for model in models {
                    let (state, _) = adagcl::fit(&model.config(&cfg), &splits)?;
                    let emb = state.main.embed(&graph)?;
                    users.push((
                        model,
                        sparsity_report(&emb, &splits, &a.user_bounds, Axis::User, &cutoffs)?,
                    ));
                    items.push((
                        model,
                        sparsity_report(&emb, &splits, &a.item_bounds, Axis::Item, &cutoffs)?,
                    ));
                }
                for (axis, per_model) in [("users", &users), ("items", &items)] {
                    for (model, groups) in per_model.iter() {
                        write_file(
                            m,
                            &format!("sparsity_{axis}_{}.csv", model.name()),
                            sparsity_csv(groups, &cutoffs),
                        )?;
                    }
                    let title = format!(
                        "Recall@20 by {} training-degree group",
                        &axis[..axis.len() - 1]
                    );
                    write_file(
                        m,
                        &format!("sparsity_{axis}.svg"),
                        group_chart(&title, per_model),
                    )?;
                }
                let report: BTreeMap<&str, BTreeMap<&str, &Vec<GroupMetrics>>> = [
                    ("users", users.iter().map(|(k, g)| (k.name(), g)).collect()),
                    ("items", items.iter().map(|(k, g)| (k.name(), g)).collect()),
                ]
                .into_iter()
                .collect();
                write_file(m, "sparsity.json", json(&report)?)?;
                for (model, groups) in &users {
                    for g in groups {
                        let r = g
                            .recall
                            .as_ref()
                            .map(|r| format!("{:.4}", r[0]))
                            .unwrap_or_else(|| "-".into());
                        println!(
                            "{} users {}: {} users, recall@20 {r}",
                            model.name(),
                            g.label,
                            g.entities
                        );
                    }
                }
            }
            ExperimentKind::Sweep => {
                let grid = a.grid.clone().unwrap_or_else(|| LAMBDA1_GRID.to_vec());
                let rows = lambda1_sweep(&cfg, &splits, &grid)?;
                write_file(m, "sweep.csv", sweep_csv(&rows))?;
                write_file(m, "sweep.json", json(&rows)?)?;
                write_file(m, "sweep.svg", sweep_chart(&rows))?;
                for r in &rows {
                    println!(
                        "lambda1 {:e}: recall@20 {:.4} ndcg@20 {:.4}",
                        r.lambda1, r.recall20, r.ndcg20
                    );
                }
            }
        }
        println!("outputs in {}", m.output_dir.display());
        Ok(())
    })
}

pub fn export(a: ExportArgs) -> Result<(), CliError> {
    let mut inputs = BTreeMap::new();
    let splits = load_split(&a.split, &mut inputs)?;
    let mut state = load_checkpoint(&a.checkpoint, &splits, &mut inputs)?;
    let file = a
        .out
        .unwrap_or_else(|| stamped("export").join(format!("{}.csv", a.which.name())));
    let dir = file
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let mut m = RunManifest::new("export", &dir);
    m.config = config_map(&state.config);
    m.config.insert("which".into(), a.which.name().into());
    m.seeds.insert("seed".into(), state.config.seed);
    m.inputs = inputs;
    run_recorded(m, |m| {
        let graph = InteractionGraph::build(&splits.train)?;
        let emb = match a.which {
            Which::Main => state.main.embed(&graph)?,
            Which::View1 | Which::View2 => {
                let (v1, v2) = view_embeddings(&mut state, &graph).map_err(|e| match e {
                    adagcl::Error::Config(msg) => {
                        CliError::Usage(format!("{}: {msg}", a.checkpoint.display()))
                    }
                    other => other.into(),
                })?;
                if a.which == Which::View1 {
                    v1
                } else {
                    v2
                }
            }
        };
        let f = fs::File::create(&file).map_err(|e| CliError::io(&file, e))?;
        let mut w = std::io::BufWriter::new(f);
        emb.write_csv(&mut w).map_err(|e| CliError::io(&file, e))?;
        std::io::Write::flush(&mut w).map_err(|e| CliError::io(&file, e))?;
        m.output(&file.file_name().unwrap_or_default().to_string_lossy());
        println!(
            "{} embeddings: {} rows x {} dims -> {}",
            a.which.name(),
            emb.users.rows + emb.items.rows,
            emb.dim(),
            file.display()
        );
        Ok(())
    })
}
