use std::path::{Path, PathBuf};
use std::time::Instant;

use cecf_core::analysis::shapley::{self, DEFAULT_PERMUTATIONS, DEFAULT_SAMPLE_SIZE};
use cecf_core::analysis::tendency::{tendency_analysis, ModelView, TendencyReport};
use cecf_core::analysis::{cca, DEFAULT_RIDGE};
use cecf_core::autodiff::Fault;
use cecf_core::graph::{self, Graph};
use cecf_core::model::EdgeOutputs;
use cecf_core::training::{self, hsic_value};
use cecf_core::verify::{self, DEFAULT_EPSILON, DEFAULT_TOLERANCE};
use cecf_core::{synth, Checkpoint, ModelState, SynthConfig, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{require, set, Echo, FileConfig, DEFAULT_GAMMAS};
use crate::error::CliError;
use crate::output::{digest, ensure_dir, write_json, write_text, FileDigest};
use crate::{
    AnalyzeArgs, Common, FaultArg, GenArgs, GradcheckArgs, SweepArgs, TrainArgs, TrainFlags,
};

pub const NODES_FILE: &str = "nodes.csv";
pub const EDGES_FILE: &str = "edges.csv";

fn out_dir(common: &Common, file: &FileConfig) -> Result<PathBuf, CliError> {
    require(
        "output directory --out",
        [common.out.clone(), file.out.clone()],
    )
}

fn echo<T: Serialize>(dir: &Path, command: &str, settings: T) -> Result<(), CliError> {
    ensure_dir(dir)?;
    write_json(&dir.join("config.json"), &Echo { command, settings })
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GenSettings<'a> {
    out: &'a Path,
    synth: &'a SynthConfig,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a SynthConfig,
    num_nodes: usize,
    num_edges: usize,
    class_counts: Vec<usize>,
    files: std::collections::BTreeMap<&'static str, FileDigest>,
}

pub fn gen(args: GenArgs) -> Result<(), CliError> {
    let file = FileConfig::load_opt(args.common.config.as_deref())?;
    let out = out_dir(&args.common, &file)?;
    let mut cfg = file.synth.clone().unwrap_or_default();
    set(&mut cfg.seed, file.seed);
    set(&mut cfg.seed, args.common.seed);
    set(&mut cfg.n, args.n);
    set(&mut cfg.m, args.m);
    set(&mut cfg.d1, args.d1);
    set(&mut cfg.d2, args.d2);
    set(&mut cfg.num_classes, args.classes);
    set(&mut cfg.alpha, args.alpha);
    set(&mut cfg.noise_sigma, args.noise_sigma);
    cfg.validate()?;

    echo(
        &out,
        "gen",
        GenSettings {
            out: &out,
            synth: &cfg,
        },
    )?;
    let g = synth::generate(&cfg)?;
    let nodes = out.join(NODES_FILE);
    let edges = out.join(EDGES_FILE);
    graph::write_graph(&g, &nodes, &edges)?;

    let mut class_counts = vec![0; g.num_classes()];
    g.labels().iter().for_each(|&y| class_counts[y] += 1);
    let mut files = std::collections::BTreeMap::new();
    files.insert(NODES_FILE, digest(&nodes)?);
    files.insert(EDGES_FILE, digest(&edges)?);
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            config: &cfg,
            num_nodes: g.num_nodes(),
            num_edges: g.num_edges(),
            class_counts,
            files,
        },
    )?;
    println!(
        "wrote {} nodes and {} edges to {}",
        g.num_nodes(),
        g.num_edges(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train / sweep
// ---------------------------------------------------------------------------

fn resolve_train(
    flags: &TrainFlags,
    common: &Common,
    file: &FileConfig,
) -> Result<(PathBuf, TrainConfig), CliError> {
    let data = require(
        "dataset directory --data",
        [flags.data.clone(), file.data.clone()],
    )?;
    let mut cfg = file.train.clone().unwrap_or_default();
    set(&mut cfg.seed, file.seed);
    set(&mut cfg.seed, common.seed);
    set(&mut cfg.gamma, flags.gamma);
    set(&mut cfg.regularizer, flags.regularizer.map(Into::into));
    set(&mut cfg.hsic_weight, flags.hsic_weight);
    set(&mut cfg.lr_main, flags.lr);
    set(&mut cfg.lr_probe, flags.lr_probe);
    set(&mut cfg.epochs, flags.epochs);
    set(&mut cfg.batch_size, flags.batch);
    cfg.validate()?;
    Ok((data, cfg))
}

pub fn load_dataset(dir: &Path) -> Result<Graph, CliError> {
    Ok(graph::load_graph(
        dir.join(NODES_FILE),
        dir.join(EDGES_FILE),
    )?)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainMetrics {
    pub bacc: f64,
    pub macro_f1: f64,
    pub per_class_recall: Vec<f64>,
    /// 1-based epoch whose parameters were kept; absent when no epoch ran.
    pub best_epoch: Option<usize>,
    pub epochs: usize,
    pub test_edges: usize,
    pub seconds: f64,
}

#[derive(Serialize)]
struct TrainSettings<'a> {
    out: &'a Path,
    data: &'a Path,
    train: &'a TrainConfig,
}

/// Split, train, evaluate on test and write checkpoint, log and metrics.
fn run_training(g: &Graph, cfg: &TrainConfig, out: &Path) -> Result<TrainMetrics, CliError> {
    let started = Instant::now();
    let split = graph::split_edges(g, cfg.seed)?;
    let run = training::train_run(g, &split, cfg, None)?;
    let adj = graph::normalize_adjacency(g);
    let test = training::evaluate(&run.best, g, &adj, &split.test)?;
    let seconds = started.elapsed().as_secs_f64();

    Checkpoint::new(&run.best, cfg).save(out.join("checkpoint.json"))?;
    write_text(&out.join("log.ndjson"), &run.history.to_ndjson())?;
    let metrics = TrainMetrics {
        bacc: test.bacc,
        macro_f1: test.macro_f1,
        per_class_recall: test.per_class_recall,
        best_epoch: run.history.best_epoch.map(|i| run.history.epochs[i].epoch),
        epochs: run.history.len(),
        test_edges: split.test.len(),
        seconds,
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load_opt(args.common.config.as_deref())?;
    let out = out_dir(&args.common, &file)?;
    let (data, cfg) = resolve_train(&args.train, &args.common, &file)?;
    echo(
        &out,
        "train",
        TrainSettings {
            out: &out,
            data: &data,
            train: &cfg,
        },
    )?;
    let g = load_dataset(&data)?;
    let m = run_training(&g, &cfg, &out)?;
    println!(
        "bacc={:.4} macro_f1={:.4} seconds={:.2}",
        m.bacc, m.macro_f1, m.seconds
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepSettings<'a> {
    out: &'a Path,
    data: &'a Path,
    train: &'a TrainConfig,
    gammas: &'a [f64],
}

fn gamma_dir(out: &Path, gamma: f64) -> PathBuf {
    out.join(format!("gamma_{gamma}"))
}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let file = FileConfig::load_opt(args.common.config.as_deref())?;
    let out = out_dir(&args.common, &file)?;
    let (data, base) = resolve_train(&args.train, &args.common, &file)?;
    let mut gammas = args
        .gammas
        .clone()
        .or_else(|| file.sweep.as_ref().and_then(|s| s.gammas.clone()))
        .unwrap_or_else(|| DEFAULT_GAMMAS.to_vec());
    if gammas.is_empty() {
        return Err(CliError::Usage("gamma list is empty".into()));
    }
    if let Some(bad) = gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(CliError::Usage(format!(
            "gamma values must be finite and >= 0, got {bad}"
        )));
    }
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    echo(
        &out,
        "sweep",
        SweepSettings {
            out: &out,
            data: &data,
            train: &base,
            gammas: &gammas,
        },
    )?;
    let g = load_dataset(&data)?;

    let rows: Vec<(f64, Result<TrainMetrics, CliError>)> = gammas
        .par_iter()
        .map(|&gamma| {
            let cfg = TrainConfig {
                gamma,
                ..base.clone()
            };
            let dir = gamma_dir(&out, gamma);
            let result = ensure_dir(&dir)
                .and_then(|_| {
                    echo(
                        &dir,
                        "train",
                        TrainSettings {
                            out: &dir,
                            data: &data,
                            train: &cfg,
                        },
                    )
                })
                .and_then(|_| run_training(&g, &cfg, &dir));
            (gamma, result)
        })
        .collect();

    let path = out.join("sweep.csv");
    let csv_err = |source| CliError::Csv {
        context: format!("writing {}", path.display()),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["gamma", "bacc", "macro_f1", "seconds", "error"])
        .map_err(csv_err)?;
    for (gamma, result) in &rows {
        let record = match result {
            Ok(m) => [
                gamma.to_string(),
                m.bacc.to_string(),
                m.macro_f1.to_string(),
                m.seconds.to_string(),
                String::new(),
            ],
            Err(e) => [
                gamma.to_string(),
                String::new(),
                String::new(),
                String::new(),
                e.to_string(),
            ],
        };
        w.write_record(&record).map_err(csv_err)?;
        match result {
            Ok(m) => println!(
                "gamma={gamma} bacc={:.4} macro_f1={:.4} seconds={:.2}",
                m.bacc, m.macro_f1, m.seconds
            ),
            Err(e) => println!("gamma={gamma} error: {e}"),
        }
    }
    w.flush().map_err(|e| CliError::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct AnalyzeSettings<'a> {
    out: &'a Path,
    data: &'a Path,
    checkpoint: &'a Path,
    baseline: Option<&'a Path>,
    samples: usize,
    permutations: usize,
    ridge: f64,
    seed: u64,
}

#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub test_edges: usize,
    pub bacc: f64,
    pub macro_f1: f64,
    pub per_class_recall: Vec<f64>,
    /// Canonical correlations between endpoint embeddings and edge features.
    pub cca: Vec<f64>,
    pub cca_leading: f64,
    pub interplay_flag: bool,
    /// Same, on raw endpoint features instead of embeddings.
    pub input_cca: Vec<f64>,
    pub hsic: f64,
    pub node_shapley: f64,
    pub edge_shapley: f64,
    pub shapley_samples: usize,
    pub shapley_permutations: usize,
    pub shapley_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tendency: Option<TendencyReport>,
}

fn load_checkpoint(path: &Path, g: &Graph) -> Result<(ModelState, TrainConfig), CliError> {
    let ck = Checkpoint::load(path)?;
    if (ck.node_dim, ck.edge_dim, ck.num_classes) != (g.node_dim(), g.edge_dim(), g.num_classes()) {
        return Err(CliError::Usage(format!(
            "checkpoint {} expects d1={}, d2={}, C={} but the dataset has d1={}, d2={}, C={}",
            path.display(),
            ck.node_dim,
            ck.edge_dim,
            ck.num_classes,
            g.node_dim(),
            g.edge_dim(),
            g.num_classes()
        )));
    }
    let cfg = ck.config.clone();
    Ok((ck.into_state(), cfg))
}

fn model_view<'a>(test: &'a EdgeOutputs, train: &'a EdgeOutputs) -> ModelView<'a> {
    ModelView {
        predictions: &test.predictions,
        node_pairs: &test.node_pairs,
        treatment: &test.treatment,
        train_node_pairs: &train.node_pairs,
        train_treatment: &train.treatment,
    }
}

pub fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let file = FileConfig::load_opt(args.common.config.as_deref())?;
    let section = file.analyze.clone().unwrap_or_default();
    let out = out_dir(&args.common, &file)?;
    let data = require(
        "dataset directory --data",
        [args.data.clone(), file.data.clone()],
    )?;
    let checkpoint = require(
        "--checkpoint",
        [args.checkpoint.clone(), section.checkpoint.clone()],
    )?;
    let baseline = args.baseline.clone().or(section.baseline.clone());
    let samples = args
        .samples
        .or(section.samples)
        .unwrap_or(DEFAULT_SAMPLE_SIZE);
    let permutations = args
        .permutations
        .or(section.permutations)
        .unwrap_or(DEFAULT_PERMUTATIONS);
    let ridge = args.ridge.or(section.ridge).unwrap_or(DEFAULT_RIDGE);
    if samples == 0 || permutations == 0 {
        return Err(CliError::Usage(
            "--samples and --permutations must be at least 1".into(),
        ));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(CliError::Usage(format!(
            "--ridge must be finite and >= 0, got {ridge}"
        )));
    }

    let g = load_dataset(&data)?;
    let (state, train_cfg) = load_checkpoint(&checkpoint, &g)?;
    let baseline_state = baseline
        .as_deref()
        .map(|p| load_checkpoint(p, &g))
        .transpose()?;
    let seed = args.common.seed.or(file.seed).unwrap_or(train_cfg.seed);
    echo(
        &out,
        "analyze",
        AnalyzeSettings {
            out: &out,
            data: &data,
            checkpoint: &checkpoint,
            baseline: baseline.as_deref(),
            samples,
            permutations,
            ridge,
            seed,
        },
    )?;

    let split = graph::split_edges(&g, train_cfg.seed)?;
    let adj = graph::normalize_adjacency(&g);
    let z = state.embed(&g, &adj)?;
    let test_out = state.edge_outputs(&g, &z, &split.test)?;
    let labels: Vec<usize> = split.test.iter().map(|&e| g.labels()[e]).collect();
    let metrics =
        training::score_predictions(&labels, test_out.predictions.clone(), g.num_classes())?;
    let s_test = g.edge_features().select_rows(&split.test)?;

    let emb_cca = cca(&test_out.node_pairs, &s_test, ridge)?;
    let input_cca = cca(&graph::endpoint_features(&g, &split.test)?, &s_test, ridge)?;
    let hsic = hsic_value(&test_out.node_pairs, &s_test)?;

    let sample = shapley::sample_edges(&split.test, samples, seed);
    let attribution =
        shapley::shapley_group(&state, &g, &adj, &sample, &split.train, permutations, seed)?;

    let tendency = match &baseline_state {
        None => None,
        Some((base, _)) => {
            let train_labels: Vec<usize> = split.train.iter().map(|&e| g.labels()[e]).collect();
            let cecf_train = state.edge_outputs(&g, &z, &split.train)?;
            let bz = base.embed(&g, &adj)?;
            let base_test = base.edge_outputs(&g, &bz, &split.test)?;
            let base_train = base.edge_outputs(&g, &bz, &split.train)?;
            Some(tendency_analysis(
                &model_view(&base_test, &base_train),
                &model_view(&test_out, &cecf_train),
                &labels,
                &train_labels,
                g.num_classes(),
            )?)
        }
    };

    let report = AnalysisReport {
        test_edges: split.test.len(),
        bacc: metrics.bacc,
        macro_f1: metrics.macro_f1,
        per_class_recall: metrics.per_class_recall.clone(),
        cca_leading: emb_cca.leading,
        interplay_flag: emb_cca.interplay_flag,
        cca: emb_cca.coefficients,
        input_cca: input_cca.coefficients,
        hsic,
        node_shapley: attribution.node_shapley,
        edge_shapley: attribution.edge_shapley,
        shapley_samples: attribution.n_samples,
        shapley_permutations: attribution.n_permutations,
        shapley_seed: attribution.seed,
        tendency,
    };
    write_json(&out.join("report.json"), &report)?;

    let mut recall = String::from("class,recall\n");
    for (c, r) in metrics.per_class_recall.iter().enumerate() {
        recall.push_str(&format!("{c},{r}\n"));
    }
    write_text(&out.join("recall.csv"), &recall)?;

    println!(
        "bacc={:.4} macro_f1={:.4} cca_leading={:.4} interplay={} node_shapley={:.5} edge_shapley={:.5}",
        report.bacc, report.macro_f1, report.cca_leading, report.interplay_flag, report.node_shapley, report.edge_shapley
    );
    if let Some(t) = &report.tendency {
        println!(
            "flipped={} cecf node/edge/combined={}/{}/{} baseline node/edge/combined={}/{}/{}",
            t.flipped,
            t.cecf.node,
            t.cecf.edge,
            t.cecf.combined,
            t.baseline.node,
            t.baseline.edge,
            t.baseline.combined
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GradcheckSettings {
    seed: u64,
    epsilon: f64,
    tolerance: f64,
}

#[derive(Serialize)]
struct LossSummary {
    loss: &'static str,
    max_rel_error: f64,
    pass: bool,
    failing_blocks: Vec<String>,
}

#[derive(Serialize)]
struct GradcheckReport {
    seed: u64,
    epsilon: f64,
    tolerance: f64,
    pass: bool,
    losses: Vec<LossSummary>,
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let file = FileConfig::load_opt(args.common.config.as_deref())?;
    let section = file.gradcheck.clone().unwrap_or_default();
    let seed = args.common.seed.or(file.seed).unwrap_or(0);
    let epsilon = args.epsilon.or(section.epsilon).unwrap_or(DEFAULT_EPSILON);
    let tolerance = args
        .tolerance
        .or(section.tolerance)
        .unwrap_or(DEFAULT_TOLERANCE);
    if !(epsilon > 0.0 && epsilon.is_finite()) || !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(CliError::Usage(
            "--epsilon and --tolerance must be positive".into(),
        ));
    }
    let out = args.common.out.clone().or(file.out.clone());
    let settings = GradcheckSettings {
        seed,
        epsilon,
        tolerance,
    };
    if let Some(dir) = &out {
        echo(dir, "gradcheck", &settings)?;
    }
    let fault = args.inject_fault.map(|f| match f {
        FaultArg::Elu => Fault::EluSlope,
        FaultArg::Matmul => Fault::MatmulRhs,
    });

    let checks = verify::check_losses(seed, epsilon, tolerance, fault)?;
    let losses: Vec<LossSummary> = checks
        .iter()
        .map(|c| LossSummary {
            loss: c.loss,
            max_rel_error: c.report.max_rel_error,
            pass: c.report.pass,
            failing_blocks: c.failing_blocks(tolerance),
        })
        .collect();
    for l in &losses {
        println!(
            "{:<12} max_rel_error={:.3e} {}",
            l.loss,
            l.max_rel_error,
            if l.pass { "ok" } else { "FAIL" }
        );
    }
    let pass = losses.iter().all(|l| l.pass);
    let report = GradcheckReport {
        seed,
        epsilon,
        tolerance,
        pass,
        losses,
    };
    if let Some(dir) = &out {
        write_json(&dir.join("report.json"), &report)?;
    }
    if pass {
        return Ok(());
    }
    let failing: Vec<String> = report
        .losses
        .iter()
        .filter(|l| !l.pass)
        .map(|l| format!("{} [{}]", l.loss, l.failing_blocks.join(", ")))
        .collect();
    Err(CliError::Verification(failing.join("; ")))
}
