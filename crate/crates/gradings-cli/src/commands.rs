use crate::config::{parse_list, Config};
use crate::{CommonOverrides, EXIT_CONFIG, EXIT_INPUT, EXIT_TRAINING};
use anyhow::{bail, Context, Result};
use gradings::baselines::{CovarianceType, GmmFitOptions, GmmSearchSpec};
use gradings::dataset;
use gradings::eval::{
    fit_model, fpr_at_tpr, roc, split_train_eval, variant_scores, ExperimentCounts, GmmSelection,
    ModelChoice, ModelParams, RocPoint, Scenario, Variant,
};
use gradings::flows::TrainConfig;
use gradings::geolife::{build_dataset, BoundingBox, TransportMode};
use gradings::model_io::{load_model, save_model, ModelBundle};
use gradings::pipeline::{score_trajectory, write_scores_csv, write_segment_scores_csv, Aggregation};
use gradings::synthetic::{self, SyntheticSpec};
use gradings::trajectory::{
    apply_standardizer, fit_standardizer, flatten_segment, segment_trajectory, FeatureVector,
    Trajectory,
};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<gradings::Error>() {
        Some(gradings::Error::ConfigMismatch(_)) => EXIT_CONFIG,
        Some(gradings::Error::Training { .. }) | Some(gradings::Error::NonFinite { .. }) => {
            EXIT_TRAINING
        }
        _ => EXIT_INPUT,
    }
}

fn resolved(args: &CommonOverrides) -> Result<Config> {
    let mut cfg = Config::load(args.config.as_deref())?;
    cfg.apply_overrides(args);
    Ok(cfg)
}

fn out_dir(cfg: &Config) -> Result<PathBuf> {
    let dir = cfg.path("output.dir").unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating `{}`", dir.display()))?;
    Ok(dir)
}

fn parse_bbox(cfg: &Config) -> Result<BoundingBox> {
    match cfg.get("data.bbox") {
        None => Ok(BoundingBox::beijing()),
        Some(raw) => {
            let nums: Vec<f64> = parse_list(raw, "bbox coordinate")?;
            if nums.len() != 4 {
                bail!("bbox needs lat_min,lat_max,lon_min,lon_max, got `{raw}`");
            }
            Ok(BoundingBox::new(nums[0], nums[1], nums[2], nums[3])?)
        }
    }
}

fn scenario_of(cfg: &Config) -> Result<Scenario> {
    if let Some(s) = cfg.get("experiment.scenario") {
        return Ok(Scenario::from_str(s)?);
    }
    Ok(match cfg.get("data.mode") {
        Some("bus") => Scenario::BusVsCar,
        Some("car") => Scenario::CarVsBus,
        _ => match cfg.get("data.source") {
            Some("geolife") => Scenario::CarVsBus,
            _ => Scenario::Synthetic,
        },
    })
}

fn scenario_modes(scenario: Scenario) -> Result<(TransportMode, TransportMode)> {
    match scenario {
        Scenario::CarVsBus => Ok((TransportMode::Car, TransportMode::Bus)),
        Scenario::BusVsCar => Ok((TransportMode::Bus, TransportMode::Car)),
        Scenario::Synthetic => bail!("synthetic scenario has no GeoLife modes"),
    }
}

fn synthetic_spec(cfg: &Config, default_seed: u64) -> Result<SyntheticSpec> {
    let base = SyntheticSpec::default();
    Ok(SyntheticSpec {
        n_normal: cfg.parse_key_or("synthetic.n_normal", base.n_normal)?,
        n_abnormal: cfg.parse_key_or("synthetic.n_abnormal", base.n_abnormal)?,
        min_len: cfg.parse_key_or("synthetic.min_len", base.min_len)?,
        max_len: cfg.parse_key_or("synthetic.max_len", base.max_len)?,
        seed: cfg.parse_key_or("synthetic.seed", default_seed)?,
    })
}

fn model_params(cfg: &Config) -> Result<ModelParams> {
    let defaults = ModelParams::default();
    let hidden = match cfg.get("flow.hidden") {
        None => defaults.flow_hidden.clone(),
        Some(raw) => parse_list(raw, "hidden size")?,
    };
    let gmm = match cfg.get("gmm.selection").unwrap_or("grid") {
        "fixed" => GmmSelection::Fixed {
            k: cfg.parse_key_or("gmm.k", 8)?,
            cov_type: cfg.parse_key_or("gmm.cov_type", CovarianceType::Diagonal)?,
            fit: GmmFitOptions {
                max_iters: cfg.parse_key_or("gmm.max_iters", 200)?,
                ..GmmFitOptions::default()
            },
        },
        "grid" => {
            let spec = GmmSearchSpec::default();
            GmmSelection::Grid(GmmSearchSpec {
                components: match cfg.get("gmm.components") {
                    None => spec.components,
                    Some(raw) => parse_list(raw, "component count")?,
                },
                cov_types: match cfg.get("gmm.cov_types") {
                    None => spec.cov_types,
                    Some(raw) => parse_list(raw, "covariance type")?,
                },
                folds: cfg.parse_key_or("gmm.folds", spec.folds)?,
                fit: GmmFitOptions {
                    max_iters: cfg.parse_key_or("gmm.max_iters", 200)?,
                    ..GmmFitOptions::default()
                },
            })
        }
        other => bail!("gmm.selection must be `fixed` or `grid`, got `{other}`"),
    };
    Ok(ModelParams {
        flow_num_flows: cfg.parse_key_or("flow.num_flows", defaults.flow_num_flows)?,
        flow_hidden: hidden,
        train: TrainConfig {
            epochs: cfg.parse_key_or("flow.epochs", defaults.train.epochs)?,
            batch_size: cfg.parse_key_or("flow.batch_size", defaults.train.batch_size)?,
            adam: gradings::autodiff::AdamConfig {
                lr: cfg.parse_key_or("flow.learning_rate", defaults.train.adam.lr)?,
                ..defaults.train.adam
            },
            seed: 0, // overwritten per plan
        },
        gmm,
        lof_k_values: match cfg.get("lof.k_values") {
            None => defaults.lof_k_values,
            Some(raw) => parse_list(raw, "LOF neighbor count")?,
        },
        lof_variant: cfg.parse_key_or("lof.rd_variant", defaults.lof_variant)?,
        split_ratio: cfg.parse_key_or("experiment.split_ratio", defaults.split_ratio)?,
    })
}

struct ClassData {
    normal: Vec<Trajectory>,
    abnormal: Vec<Trajectory>,
    scenario: Scenario,
    /// Files that fed this data, for provenance hashing.
    inputs: Vec<PathBuf>,
}

fn load_class_data(cfg: &Config, seed: u64) -> Result<ClassData> {
    let source = cfg.get("data.source").unwrap_or("synthetic");
    match source {
        "synthetic" => {
            let spec = synthetic_spec(cfg, seed)?;
            let data = synthetic::generate(&spec);
            Ok(ClassData {
                normal: data.normal,
                abnormal: data.abnormal,
                scenario: Scenario::Synthetic,
                inputs: Vec::new(),
            })
        }
        "geolife" => {
            let root = cfg
                .path("data.root")
                .context("geolife source needs data.root (or --data-root)")?;
            let scenario = scenario_of(cfg)?;
            let (normal_mode, abnormal_mode) = scenario_modes(scenario)?;
            let bbox = parse_bbox(cfg)?;
            let normal = build_dataset(&root, normal_mode, &bbox)?;
            let abnormal = build_dataset(&root, abnormal_mode, &bbox)?;
            for w in normal.warnings.iter().chain(&abnormal.warnings) {
                eprintln!("warning: {w}");
            }
            Ok(ClassData {
                normal: normal.trajectories,
                abnormal: abnormal.trajectories,
                scenario,
                inputs: vec![root],
            })
        }
        "csv" => {
            let normal_path = cfg
                .path("data.dataset")
                .context("csv source needs data.dataset")?;
            let normal = read_dataset(&normal_path)?;
            let mut inputs = vec![normal_path];
            let abnormal = match cfg.path("data.abnormal_dataset") {
                Some(p) => {
                    let t = read_dataset(&p)?;
                    inputs.push(p);
                    t
                }
                None => Vec::new(),
            };
            Ok(ClassData {
                normal,
                abnormal,
                scenario: scenario_of(cfg)?,
                inputs,
            })
        }
        other => bail!("unknown data.source `{other}` (synthetic, geolife, or csv)"),
    }
}

fn read_dataset(path: &Path) -> Result<Vec<Trajectory>> {
    let file =
        File::open(path).with_context(|| format!("opening dataset `{}`", path.display()))?;
    Ok(dataset::read_csv(BufReader::new(file))?)
}

fn write_dataset(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut out = BufWriter::new(
        File::create(path).with_context(|| format!("creating `{}`", path.display()))?,
    );
    dataset::write_csv(&mut out, trajs)?;
    out.flush()?;
    Ok(())
}

fn segment_count(trajs: &[Trajectory], window: usize) -> usize {
    trajs
        .iter()
        .filter(|t| t.len() >= window)
        .map(|t| t.len() - window + 1)
        .sum()
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing `{}`", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub fn ingest(args: &CommonOverrides) -> Result<()> {
    let cfg = resolved(args)?;
    let out = out_dir(&cfg)?;
    let window: usize = cfg.parse_key_or("experiment.window", 10)?;
    let seed: u64 = cfg.parse_key_or("experiment.seed", 1)?;

    match cfg.get("data.source").unwrap_or("synthetic") {
        "synthetic" => {
            let data = load_class_data(&cfg, seed)?;
            for (name, trajs) in [("normal", &data.normal), ("abnormal", &data.abnormal)] {
                let path = out.join(format!("{name}.csv"));
                write_dataset(&path, trajs)?;
                println!(
                    "{name}: trajectories={} segments={} (W={window}) -> {}",
                    trajs.len(),
                    segment_count(trajs, window),
                    path.display()
                );
            }
        }
        "geolife" => {
            let root = cfg
                .path("data.root")
                .context("geolife source needs data.root (or --data-root)")?;
            let mode: TransportMode = TransportMode::from_str(
                cfg.get("data.mode").unwrap_or("car"),
            )
            .expect("infallible");
            let bbox = parse_bbox(&cfg)?;
            let result = build_dataset(&root, mode, &bbox)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            let path = out.join(format!("{mode}.csv"));
            write_dataset(&path, &result.trajectories)?;
            println!(
                "mode={mode} trajectories={} segments={} (W={window}) -> {}",
                result.trajectories.len(),
                segment_count(&result.trajectories, window),
                path.display()
            );
        }
        "csv" => bail!("data.source = csv is already ingested; nothing to do"),
        other => bail!("unknown data.source `{other}`"),
    }
    Ok(())
}

/// Flattens every window of every sufficiently long trajectory.
fn training_features(
    trajs: &[Trajectory],
    window: usize,
) -> Result<(Vec<FeatureVector>, usize, usize)> {
    let mut features = Vec::new();
    let (mut kept, mut skipped) = (0usize, 0usize);
    for t in trajs {
        if t.len() < window {
            skipped += 1;
            continue;
        }
        kept += 1;
        for seg in segment_trajectory(t, window)? {
            features.push(flatten_segment(&seg));
        }
    }
    if features.is_empty() {
        bail!("no trajectory reaches window length {window}");
    }
    Ok((features, kept, skipped))
}

fn fit_bundle(
    trajs: &[Trajectory],
    window: usize,
    choice: ModelChoice,
    params: &ModelParams,
    seed: u64,
) -> Result<(ModelBundle, Vec<f64>, usize)> {
    let (features, kept, skipped) = training_features(trajs, window)?;
    if skipped > 0 {
        eprintln!("warning: {skipped} trajectories shorter than W={window} excluded from training");
    }
    let stats = fit_standardizer(&features)?;
    let std_train: Vec<FeatureVector> = features
        .iter()
        .map(|f| apply_standardizer(&stats, f))
        .collect::<gradings::Result<_>>()?;
    let (model, loss_trace) = fit_model(choice, &std_train, params, seed)?;
    let _ = kept;
    Ok((
        ModelBundle {
            window,
            stats,
            model,
        },
        loss_trace,
        std_train.len(),
    ))
}

fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "epoch,loss")?;
    for (i, v) in trace.iter().enumerate() {
        writeln!(out, "{i},{v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn train(args: &CommonOverrides) -> Result<()> {
    let cfg = resolved(args)?;
    let out = out_dir(&cfg)?;
    let window: usize = cfg.parse_key_or("experiment.window", 10)?;
    let seed: u64 = cfg.parse_key_or("experiment.seed", 1)?;
    let choice: ModelChoice = cfg.parse_key_or("experiment.model", ModelChoice::Maf)?;
    let params = model_params(&cfg)?;

    let dataset_path = cfg
        .path("data.dataset")
        .context("train needs data.dataset (a trajectory CSV artifact)")?;
    let trajs = read_dataset(&dataset_path)?;

    let (bundle, loss_trace, n_segments) = fit_bundle(&trajs, window, choice, &params, seed)?;
    let model_path = out.join("model.txt");
    save_model(&model_path, &bundle)?;
    if !loss_trace.is_empty() {
        write_loss_trace(&out.join("loss_trace.csv"), &loss_trace)?;
    }
    println!(
        "trained {choice} on {} segments (W={window}, seed={seed}) -> {}",
        n_segments,
        model_path.display()
    );
    Ok(())
}

fn model_path_from(cfg: &Config, args: &CommonOverrides, out: &Path) -> PathBuf {
    // --model may name a serialized model file; otherwise it is a kind and
    // the model is expected at <out>/model.txt (or data.model).
    if let Some(m) = &args.model {
        let p = PathBuf::from(m);
        if p.is_file() {
            return p;
        }
    }
    cfg.path("data.model").unwrap_or_else(|| out.join("model.txt"))
}

fn check_window(cfg: &Config, bundle: &ModelBundle) -> Result<()> {
    if let Some(w) = cfg.parse_key::<usize>("experiment.window")? {
        if w != bundle.window {
            return Err(gradings::Error::ConfigMismatch(format!(
                "requested window {w} but the model was trained with window {}",
                bundle.window
            ))
            .into());
        }
    }
    Ok(())
}

pub fn score(args: &CommonOverrides) -> Result<()> {
    let cfg = resolved(args)?;
    let out = out_dir(&cfg)?;
    let model_path = model_path_from(&cfg, args, &out);
    let bundle = load_model(&model_path)?;
    check_window(&cfg, &bundle)?;

    let dataset_path = cfg
        .path("data.dataset")
        .context("score needs data.dataset")?;
    let trajs = read_dataset(&dataset_path)?;

    let aggregation = match cfg.get("experiment.variant") {
        Some(raw) => parse_list::<Variant>(raw, "variant")?
            .into_iter()
            .find_map(|v| match v {
                Variant::Median => Some(Aggregation::Median),
                Variant::Average => Some(Aggregation::Average),
                Variant::Segment => None,
            })
            .unwrap_or(Aggregation::Median),
        None => Aggregation::Median,
    };

    let scorer = bundle.model.scorer();
    let mut scored = Vec::new();
    let mut skipped = 0usize;
    for t in &trajs {
        if t.len() < bundle.window {
            skipped += 1;
            continue;
        }
        scored.push(score_trajectory(
            scorer,
            t,
            bundle.window,
            &bundle.stats,
            aggregation,
        )?);
    }
    if skipped > 0 {
        eprintln!(
            "warning: {skipped} trajectories shorter than W={} skipped",
            bundle.window
        );
    }

    let scores_path = out.join("scores.csv");
    let mut f = BufWriter::new(File::create(&scores_path)?);
    write_scores_csv(&mut f, &scored)?;
    f.flush()?;
    let seg_path = out.join("segment_scores.csv");
    let mut f = BufWriter::new(File::create(&seg_path)?);
    write_segment_scores_csv(&mut f, &scored)?;
    f.flush()?;
    println!(
        "scored {} trajectories ({aggregation}) -> {} and {}",
        scored.len(),
        scores_path.display(),
        seg_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct VariantResult {
    variant: Variant,
    auroc: f64,
    fpr80: f64,
    eval_normal_samples: usize,
    eval_abnormal_samples: usize,
    roc_csv: String,
}

#[derive(Serialize)]
struct EvaluateReport {
    config: BTreeMap<String, String>,
    input_hashes: BTreeMap<String, String>,
    window: usize,
    model_kind: String,
    eval_normal_trajectories: usize,
    eval_abnormal_trajectories: usize,
    variants: Vec<VariantResult>,
}

fn requested_variants(cfg: &Config) -> Result<Vec<Variant>> {
    match cfg.get("experiment.variant") {
        None => Ok(vec![Variant::Segment, Variant::Average, Variant::Median]),
        Some(raw) => parse_list(raw, "variant"),
    }
}

fn write_roc(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    gradings::eval::write_roc_csv(&mut f, points)?;
    f.flush()?;
    Ok(())
}

pub fn evaluate(args: &CommonOverrides) -> Result<()> {
    let cfg = resolved(args)?;
    let out = out_dir(&cfg)?;
    let model_path = model_path_from(&cfg, args, &out);
    let bundle = load_model(&model_path)?;
    check_window(&cfg, &bundle)?;

    let seed: u64 = cfg.parse_key_or("experiment.seed", 1)?;
    let data = load_class_data(&cfg, seed)?;
    if data.abnormal.is_empty() {
        bail!("evaluate needs an abnormal set (data.abnormal_dataset for csv sources)");
    }

    let mut input_hashes = BTreeMap::new();
    input_hashes.insert("model".to_string(), sha256_file(&model_path)?);
    for p in &data.inputs {
        if p.is_file() {
            input_hashes.insert(p.display().to_string(), sha256_file(p)?);
        }
    }

    let mut variants = Vec::new();
    for variant in requested_variants(&cfg)? {
        let (scores_n, kept_n, _) = variant_scores(
            &bundle.model,
            &data.normal,
            bundle.window,
            &bundle.stats,
            variant,
        )?;
        let (scores_a, kept_a, _) = variant_scores(
            &bundle.model,
            &data.abnormal,
            bundle.window,
            &bundle.stats,
            variant,
        )?;
        let curve = roc(&scores_a, &scores_n)?;
        let roc_csv = format!("roc_{variant}.csv");
        write_roc(&out.join(&roc_csv), &curve.points)?;
        let _ = (kept_n, kept_a);
        variants.push(VariantResult {
            variant,
            auroc: curve.auroc,
            fpr80: fpr_at_tpr(&curve, 0.8),
            eval_normal_samples: scores_n.len(),
            eval_abnormal_samples: scores_a.len(),
            roc_csv,
        });
    }

    let report = EvaluateReport {
        config: cfg.echo(),
        input_hashes,
        window: bundle.window,
        model_kind: bundle.model.kind_name().to_string(),
        eval_normal_trajectories: data.normal.len(),
        eval_abnormal_trajectories: data.abnormal.len(),
        variants,
    };
    let report_path = out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    for v in &report.variants {
        println!("{}: AUROC={:.4} FPR80={:.4}", v.variant, v.auroc, v.fpr80);
    }
    println!("report -> {}", report_path.display());
    Ok(())
}

#[derive(Serialize)]
struct SeedResult {
    seed: u64,
    auroc: f64,
    fpr80: f64,
    counts: ExperimentCounts,
}

#[derive(Serialize)]
struct ExperimentVariantReport {
    variant: Variant,
    per_seed: Vec<SeedResult>,
    auroc_mean: f64,
    auroc_std: f64,
    fpr80_mean: f64,
    fpr80_std: f64,
}

#[derive(Serialize)]
struct FullReport {
    config: BTreeMap<String, String>,
    scenario: Scenario,
    window: usize,
    model: ModelChoice,
    seeds: Vec<u64>,
    variants: Vec<ExperimentVariantReport>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn experiment(args: &CommonOverrides) -> Result<()> {
    let cfg = resolved(args)?;
    let out = out_dir(&cfg)?;
    let window: usize = cfg.parse_key_or("experiment.window", 10)?;
    let choice: ModelChoice = cfg.parse_key_or("experiment.model", ModelChoice::Maf)?;
    let params = model_params(&cfg)?;
    let variants = requested_variants(&cfg)?;

    let seeds: Vec<u64> = match cfg.get("experiment.seeds") {
        Some(raw) => parse_list(raw, "seed")?,
        None => vec![cfg.parse_key_or("experiment.seed", 1)?],
    };
    if seeds.is_empty() {
        bail!("experiment.seeds is empty");
    }

    let data = load_class_data(&cfg, seeds[0])?;
    if data.abnormal.is_empty() {
        bail!("experiment needs an abnormal set");
    }

    // per seed: split, fit once, score every variant
    let mut per_variant: Vec<Vec<SeedResult>> = (0..variants.len()).map(|_| Vec::new()).collect();
    for (si, &seed) in seeds.iter().enumerate() {
        let split = split_train_eval(&data.normal, &data.abnormal, params.split_ratio, seed)?;
        let (bundle, loss_trace, n_train_segments) =
            fit_bundle(&split.train, window, choice, &params, seed)?;

        if si == 0 {
            save_model(&out.join("model.txt"), &bundle)?;
            if !loss_trace.is_empty() {
                write_loss_trace(&out.join("loss_trace.csv"), &loss_trace)?;
            }
            // per-trajectory score dumps for the first aggregation variant
            let agg = variants
                .iter()
                .find_map(|v| match v {
                    Variant::Median => Some(Aggregation::Median),
                    Variant::Average => Some(Aggregation::Average),
                    Variant::Segment => None,
                })
                .unwrap_or(Aggregation::Median);
            for (name, trajs) in [
                ("scores_normal.csv", &split.eval_normal),
                ("scores_abnormal.csv", &split.eval_abnormal),
            ] {
                let scored: Vec<_> = trajs
                    .iter()
                    .filter(|t| t.len() >= window)
                    .map(|t| {
                        score_trajectory(bundle.model.scorer(), t, window, &bundle.stats, agg)
                    })
                    .collect::<gradings::Result<_>>()?;
                let mut f = BufWriter::new(File::create(out.join(name))?);
                write_scores_csv(&mut f, &scored)?;
                f.flush()?;
            }
        }

        for (vi, &variant) in variants.iter().enumerate() {
            let (scores_n, kept_n, excl_n) = variant_scores(
                &bundle.model,
                &split.eval_normal,
                window,
                &bundle.stats,
                variant,
            )?;
            let (scores_a, kept_a, excl_a) = variant_scores(
                &bundle.model,
                &split.eval_abnormal,
                window,
                &bundle.stats,
                variant,
            )?;
            let curve = roc(&scores_a, &scores_n)?;
            if si == 0 {
                write_roc(&out.join(format!("roc_{variant}.csv")), &curve.points)?;
            }
            per_variant[vi].push(SeedResult {
                seed,
                auroc: curve.auroc,
                fpr80: fpr_at_tpr(&curve, 0.8),
                counts: ExperimentCounts {
                    train_trajectories: split.train.iter().filter(|t| t.len() >= window).count(),
                    eval_normal_trajectories: kept_n,
                    eval_abnormal_trajectories: kept_a,
                    excluded_short_train: split.train.iter().filter(|t| t.len() < window).count(),
                    excluded_short_eval_normal: excl_n,
                    excluded_short_eval_abnormal: excl_a,
                    train_segments: n_train_segments,
                    eval_normal_samples: scores_n.len(),
                    eval_abnormal_samples: scores_a.len(),
                },
            });
        }
    }

    let variants_report: Vec<ExperimentVariantReport> = variants
        .iter()
        .zip(per_variant)
        .map(|(&variant, per_seed)| {
            let aurocs: Vec<f64> = per_seed.iter().map(|r| r.auroc).collect();
            let fprs: Vec<f64> = per_seed.iter().map(|r| r.fpr80).collect();
            let (auroc_mean, auroc_std) = mean_std(&aurocs);
            let (fpr80_mean, fpr80_std) = mean_std(&fprs);
            ExperimentVariantReport {
                variant,
                per_seed,
                auroc_mean,
                auroc_std,
                fpr80_mean,
                fpr80_std,
            }
        })
        .collect();

    let report = FullReport {
        config: cfg.echo(),
        scenario: data.scenario,
        window,
        model: choice,
        seeds,
        variants: variants_report,
    };
    let report_path = out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    for v in &report.variants {
        println!(
            "{} {}: AUROC={:.4}±{:.4} FPR80={:.4}±{:.4}",
            report.model, v.variant, v.auroc_mean, v.auroc_std, v.fpr80_mean, v.fpr80_std
        );
    }
    println!("report -> {}", report_path.display());
    Ok(())
}
