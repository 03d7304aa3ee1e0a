//! The five subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use tsgcl_core::data::format::{load_dataset, write_dataset};
use tsgcl_core::data::synth::generate;
use tsgcl_core::data::Dataset;
use tsgcl_core::graph::{
    build_adjacency, edges, extremal_eigenvalues, normalize_adjacency, padded_raw_features,
};
use tsgcl_core::metrics::Metrics;
use tsgcl_core::train::{
    ablation_rows, ablation_run, evaluate, split_dialogues, train, ABLATION_VARIANTS,
};

use crate::config::{
    ablation_seeds, model_config, scheme_for_file, split_config, synth_config, train_config,
    ConfigMap,
};
use crate::error::{CliError, CliResult};
use crate::report;

fn load_file(cfg: &ConfigMap, key: &str) -> CliResult<Option<Dataset>> {
    let value = cfg.get(key);
    if value.is_empty() {
        return Ok(None);
    }
    let path = Path::new(value);
    let scheme = scheme_for_file(cfg, path)?;
    let ds = load_dataset(path, &scheme).map_err(|e| CliError::from(e).with_path(path))?;
    Ok(Some(ds))
}

struct TrainData {
    train: Dataset,
    val: Option<Dataset>,
    test: Option<Dataset>,
}

/// Data for training: files when `data.train` is set, otherwise the
/// synthetic dataset split by the configured fractions.
fn training_data(cfg: &ConfigMap) -> CliResult<TrainData> {
    if let Some(train) = load_file(cfg, "data.train")? {
        return Ok(TrainData {
            train,
            val: load_file(cfg, "data.val")?,
            test: load_file(cfg, "data.test")?,
        });
    }
    let ds = generate(&synth_config(cfg)?)?;
    let split = split_config(cfg)?;
    let (tr, va, te) = split_dialogues(ds.dialogues.len(), &split)?;
    Ok(TrainData {
        train: ds.subset(&tr)?,
        val: if va.is_empty() { None } else { Some(ds.subset(&va)?) },
        test: if te.is_empty() { None } else { Some(ds.subset(&te)?) },
    })
}

/// Unsplit dataset for the ablation and graph-report commands.
fn whole_dataset(cfg: &ConfigMap) -> CliResult<Dataset> {
    match load_file(cfg, "data.train")? {
        Some(ds) => Ok(ds),
        None => Ok(generate(&synth_config(cfg)?)?),
    }
}

pub fn gen_data(cfg: &ConfigMap, out_dir: &Path) -> CliResult<()> {
    let ds = generate(&synth_config(cfg)?)?;
    let split = split_config(cfg)?;
    let (tr, va, te) = split_dialogues(ds.dialogues.len(), &split)?;
    if va.is_empty() || te.is_empty() {
        return Err(CliError::Config(format!(
            "split of {} dialogues leaves an empty file (train {}, val {}, test {}); \
             raise synth.dialogues or the split fractions",
            ds.dialogues.len(),
            tr.len(),
            va.len(),
            te.len()
        )));
    }
    for (name, idx) in [("train.tsgcl", &tr), ("val.tsgcl", &va), ("test.tsgcl", &te)] {
        let path = out_dir.join(name);
        write_dataset(&path, &ds.subset(idx)?)?;
        println!("wrote {} ({} dialogues)", path.display(), idx.len());
    }
    Ok(())
}

pub fn train_cmd(cfg: &ConfigMap, out_dir: &Path) -> CliResult<()> {
    let data = training_data(cfg)?;
    let model_cfg = model_config(cfg)?;
    let t_cfg = train_config(cfg)?;

    let outcome = train(&model_cfg, &t_cfg, &data.train, data.val.as_ref())?;
    report::write_history_csv(&out_dir.join("history.csv"), &outcome.history)?;

    let (eval_ds, split_name) = match (&data.test, &data.val) {
        (Some(t), _) => (t, "test"),
        (None, Some(v)) => (v, "val"),
        (None, None) => (&data.train, "train"),
    };
    let eval_out = evaluate(&outcome.params, &model_cfg, eval_ds)?;
    report::write_metrics_csv(&out_dir.join("metrics.csv"), &eval_ds.scheme, &eval_out.metrics)?;
    report::write_predictions(&out_dir.join("predictions.tsv"), eval_ds, &eval_out.predictions)?;

    if outcome.history.is_empty() {
        println!("trained 0 epochs (initialization only)");
    } else {
        println!(
            "trained {} epochs (best {}{}), scored on the {split_name} split:",
            outcome.history.len(),
            outcome.best_epoch,
            if outcome.stopped_early { ", stopped early" } else { "" }
        );
    }
    print!("{}", report::metrics_table(&eval_ds.scheme, &eval_out.metrics));
    Ok(())
}

pub fn eval_cmd(cfg: &ConfigMap, out_dir: &Path) -> CliResult<()> {
    let gold = load_file(cfg, "data.test")?
        .ok_or_else(|| CliError::Config("eval needs data.test (gold labels)".into()))?;
    let pred_path = cfg.get("eval.pred");
    if pred_path.is_empty() {
        return Err(CliError::Config("eval needs eval.pred (predictions file)".into()));
    }
    let preds = report::read_predictions(Path::new(pred_path))?;

    // slot every prediction against the gold utterance it names
    let mut by_dialogue: Vec<Vec<Option<usize>>> = gold
        .dialogues
        .iter()
        .map(|d| vec![None; d.utterances.len()])
        .collect();
    for (id, turn, label) in &preds {
        let di = gold
            .dialogues
            .iter()
            .position(|d| &d.id == id)
            .ok_or_else(|| CliError::Data(format!("prediction for unknown dialogue {id:?}")))?;
        let slot = by_dialogue[di].get_mut(*turn).ok_or_else(|| {
            CliError::Data(format!("prediction for {id:?} turn {turn} out of range"))
        })?;
        if slot.is_some() {
            return Err(CliError::Data(format!("duplicate prediction for {id:?} turn {turn}")));
        }
        *slot = Some(gold.scheme.index_of(label)?);
    }

    let mut gold_flat = Vec::new();
    let mut pred_flat = Vec::new();
    for (d, row) in gold.dialogues.iter().zip(&by_dialogue) {
        for (turn, (u, p)) in d.utterances.iter().zip(row).enumerate() {
            let p = p.ok_or_else(|| {
                CliError::Data(format!("missing prediction for {:?} turn {turn}", d.id))
            })?;
            gold_flat.push(u.label);
            pred_flat.push(p);
        }
    }
    let metrics = Metrics::from_pairs(&gold_flat, &pred_flat, gold.scheme.n_classes())?;
    report::write_metrics_csv(&out_dir.join("metrics.csv"), &gold.scheme, &metrics)?;
    print!("{}", report::metrics_table(&gold.scheme, &metrics));
    Ok(())
}

pub fn ablate_cmd(cfg: &ConfigMap, out_dir: &Path) -> CliResult<()> {
    let ds = whole_dataset(cfg)?;
    let model_cfg = model_config(cfg)?;
    let t_cfg = train_config(cfg)?;
    let split = split_config(cfg)?;
    let seeds = ablation_seeds(cfg)?;
    let jobs = cfg.get_usize("jobs")?.max(1);

    // grid cells in report order; independent runs, so they may execute on
    // worker threads, with results slotted by index for determinism
    let cells: Vec<(usize, tsgcl_core::model::Variant, u64)> = ABLATION_VARIANTS
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .enumerate()
        .map(|(i, (v, s))| (i, v, s))
        .collect();
    let results: Mutex<Vec<Option<(f64, f64)>>> = Mutex::new(vec![None; cells.len()]);
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);

    let worker = || {
        loop {
            let i = next.fetch_add(1, Ordering::Relaxed);
            if i >= cells.len() || abort.load(Ordering::Relaxed) {
                break;
            }
            let (slot, variant, seed) = cells[i];
            match ablation_run(&model_cfg, &t_cfg, &split, &ds, variant, seed) {
                Ok(scores) => {
                    results.lock().expect("results lock")[slot] = Some(scores);
                }
                Err(e) => {
                    *failure.lock().expect("failure lock") = Some(e.into());
                    abort.store(true, Ordering::Relaxed);
                }
            }
        }
    };
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(cells.len()) {
                scope.spawn(worker);
            }
        });
    }
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    let flat = results.into_inner().expect("results lock");
    let scores: Vec<Vec<(f64, f64)>> = flat
        .chunks(seeds.len())
        .map(|chunk| chunk.iter().map(|r| r.expect("all cells ran")).collect())
        .collect();

    let rows = ablation_rows(&scores)?;
    report::write_ablation_csv(&out_dir.join("ablation.csv"), &rows)?;
    print!("{}", report::ablation_table(&rows));
    Ok(())
}

pub fn graph_stats(cfg: &ConfigMap) -> CliResult<()> {
    let ds = whole_dataset(cfg)?;
    let omega = cfg.get_f64("model.omega")?;
    const BINS: usize = 10;
    for d in &ds.dialogues {
        let rows = padded_raw_features(d, ds.dims);
        let nodes = rows.len();
        let adj = build_adjacency(&rows, omega)?;
        let edge_list = edges(d.utterances.len());
        let mut hist = [0usize; BINS];
        for e in &edge_list {
            let w = adj[e.a * nodes + e.b];
            let bin = ((w * BINS as f64) as usize).min(BINS - 1);
            hist[bin] += 1;
        }
        let p_norm = normalize_adjacency(&adj, nodes)?;
        let (lo, hi) = extremal_eigenvalues(&p_norm, nodes)?;
        let hist_text: Vec<String> = hist.iter().map(|c| c.to_string()).collect();
        println!(
            "{} nodes={nodes} edges={} eig_min={lo:.6} eig_max={hi:.6} hist=[{}]",
            d.id,
            edge_list.len(),
            hist_text.join(",")
        );
    }
    Ok(())
}

/// Shared run preamble: ensure the output directory exists and record the
/// effective configuration.
pub fn prepare_out_dir(cfg: &ConfigMap) -> CliResult<PathBuf> {
    let out_dir = PathBuf::from(cfg.get("out"));
    std::fs::create_dir_all(&out_dir)?;
    cfg.write_resolved(&out_dir)?;
    Ok(out_dir)
}
