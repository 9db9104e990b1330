//! Implementations of the subcommands.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use msvl::calib::{
    default_lambda, read_patch_csv_file, validate_calibration, wiener_fit, write_patch_csv_file,
    TransformationMatrix,
};
use msvl::graph::{analyze, GraphTopology};
use msvl::metrics::{
    delong_test, read_scores_csv_file, roc_curve,
    stratified_report, write_roc_csv, write_scores_csv_file, youden_cutoff, EvalReport, RocPoint,
    ScoreRecord, ScoredSample,
};
use msvl::model::{self, Arch, ModelParams, TrainConfig};
use msvl::phantom::{synth_fundus_dataset, synth_patch_set, PhantomConfig, SyntheticCamera};
use msvl::recon::{linear_decode, reconstruct_cube, srgb_decode, Rgb8Image};
use msvl::spectral::read_cube_file;
use msvl::{Error, Result};

use crate::pipeline::load_split;
use crate::svg::{self, Curve};
use crate::{
    CalibrateArgs, CliFailure, CliResult, CommandOutput, EvaluateArgs, GraphAction, GraphArgs,
    PlotRocArgs, ReconstructArgs, SynthArgs, SynthFundusArgs, TrainArgs, ValidateArgs,
};

fn usage(message: impl Into<String>) -> CliFailure {
    CliFailure::Usage(message.into())
}

pub(crate) fn calibrate(args: CalibrateArgs) -> CliResult {
    let patches = read_patch_csv_file(&args.patches)?;
    let lambda = match args.lambda {
        Some(l) if l.is_finite() && l >= 0.0 => l,
        Some(l) => return Err(usage(format!("--lambda must be finite and >= 0, got {l}"))),
        None => default_lambda(&patches, args.bias),
    };
    let matrix = wiener_fit(&patches, lambda, args.bias)?;
    matrix.save_file(&args.out)?;
    Ok(CommandOutput {
        summary: format!(
            "fitted {}->24 matrix from {} patches (lambda {:.3e}): training_rmse {:.6}",
            if args.bias { "3+1" } else { "3" },
            patches.len(),
            lambda,
            matrix.training_rmse()
        ),
        json: json!({
            "patches": patches.len(),
            "lambda": lambda,
            "bias": args.bias,
            "training_rmse": matrix.training_rmse(),
            "matrix_id": matrix.checksum(),
            "out": args.out,
        }),
    })
}

pub(crate) fn validate(args: ValidateArgs) -> CliResult {
    let matrix = TransformationMatrix::load_file(&args.matrix)?;
    let patches = read_patch_csv_file(&args.patches)?;
    let report = validate_calibration(&matrix, &patches)?;
    let mut csv = String::from("id,rmse\n");
    for (id, rmse) in &report.per_patch_rmse {
        csv.push_str(&format!("{id},{rmse}\n"));
    }
    std::fs::write(&args.report, csv).map_err(|e| Error::io(&args.report, e))?;
    Ok(CommandOutput {
        summary: format!(
            "validated on {} patches: mean RMSE {:.6}, max RMSE {:.6}",
            report.per_patch_rmse.len(),
            report.mean_rmse,
            report.max_rmse
        ),
        json: json!({
            "patches": report.per_patch_rmse.len(),
            "mean_rmse": report.mean_rmse,
            "max_rmse": report.max_rmse,
            "report": args.report,
        }),
    })
}

pub(crate) fn reconstruct(args: ReconstructArgs) -> CliResult {
    let matrix = TransformationMatrix::load_file(&args.matrix)?;
    let image8 = Rgb8Image::load_auto(&args.input)?;
    let linear = if args.no_srgb_decode { linear_decode(&image8) } else { srgb_decode(&image8) };
    let (cube, meta) = reconstruct_cube(&matrix, &linear)?;
    let bytes = msvl::spectral::write_cube_file(&cube, &args.out)?;
    let meta_path = sidecar_meta_path(&args.out);
    let meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Format(format!("metadata serialization failed: {e}")))?;
    std::fs::write(&meta_path, meta_json).map_err(|e| Error::io(&meta_path, e))?;
    Ok(CommandOutput {
        summary: format!(
            "reconstructed {}x{}x24 cube ({bytes} bytes): clamped fraction {:.6}",
            cube.width(),
            cube.height(),
            meta.clamped_fraction
        ),
        json: json!({
            "width": cube.width(),
            "height": cube.height(),
            "bands": cube.bands(),
            "bytes": bytes,
            "clamped_fraction": meta.clamped_fraction,
            "matrix_id": meta.matrix_id,
            "srgb_decoded": meta.srgb_decoded,
            "out": args.out,
            "meta": meta_path,
        }),
    })
}

fn sidecar_meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

pub(crate) fn graph(args: GraphArgs) -> CliResult {
    if let Some(GraphAction::Info { file }) = args.action {
        let topology = GraphTopology::load_file(&file)?;
        let stats = analyze(&topology);
        let doc = json!({
            "v": topology.node_count(),
            "kind": topology.kind().to_string(),
            "step": topology.step(),
            "include_ring": topology.include_ring(),
            "edges": topology.edges().len(),
            "degree_histogram": stats.degree_histogram,
            "connected_component_count": stats.connected_component_count,
            "component_sizes": stats.component_sizes,
            "component_diameters": stats.component_diameters,
        });
        let rendered =
            serde_json::to_string_pretty(&doc).expect("stats serialize to valid JSON");
        return Ok(CommandOutput { summary: rendered, json: doc });
    }

    let kind = args.kind.as_deref().ok_or_else(|| usage("graph needs --kind (or `graph info FILE`)"))?;
    let nodes = args.nodes.ok_or_else(|| usage("graph needs --nodes"))?;
    let out = args.out.as_ref().ok_or_else(|| usage("graph needs --out"))?;
    let topology = match kind {
        "ring" => GraphTopology::ring(nodes)?,
        "full" => GraphTopology::full(nodes)?,
        "jumper" => {
            let step = args.step.ok_or_else(|| usage("jumper graphs need --step"))?;
            GraphTopology::jumper(nodes, step, args.include_ring)?
        }
        other => return Err(usage(format!("unknown graph kind {other:?}"))),
    };
    topology.save_file(out)?;
    let stats = analyze(&topology);
    Ok(CommandOutput {
        summary: format!(
            "built {kind} graph on {nodes} nodes: {} edges, {} component(s)",
            topology.edges().len(),
            stats.connected_component_count
        ),
        json: json!({
            "kind": kind,
            "v": nodes,
            "step": topology.step(),
            "include_ring": topology.include_ring(),
            "edges": topology.edges().len(),
            "connected_component_count": stats.connected_component_count,
            "out": out,
        }),
    })
}

#[derive(serde::Deserialize)]
#[serde(default)]
struct PatchSynthConfig {
    basis_dim: usize,
    n_train: usize,
    n_holdout: usize,
    camera_centers_nm: [f64; 3],
    camera_widths_nm: [f64; 3],
    noise_sigma: f64,
    seed: u64,
}

impl Default for PatchSynthConfig {
    fn default() -> Self {
        PatchSynthConfig {
            basis_dim: 6,
            n_train: 24,
            n_holdout: 96,
            camera_centers_nm: [610.0, 540.0, 460.0],
            camera_widths_nm: [45.0, 40.0, 35.0],
            noise_sigma: 0.01,
            seed: 42,
        }
    }
}

fn load_config_json<T: serde::de::DeserializeOwned + Default>(
    path: Option<&PathBuf>,
) -> Result<T> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("{}: config parse failed: {e}", p.display())))
        }
        None => Ok(T::default()),
    }
}

pub(crate) fn synth_patches(args: SynthArgs) -> CliResult {
    let mut config: PatchSynthConfig = load_config_json(args.config.as_ref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let camera = SyntheticCamera::new(
        config.camera_centers_nm,
        config.camera_widths_nm,
        config.noise_sigma,
    )?;
    let (train, holdout) =
        synth_patch_set(config.basis_dim, config.n_train, config.n_holdout, &camera, config.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let train_path = args.out.join("train.csv");
    let holdout_path = args.out.join("holdout.csv");
    write_patch_csv_file(&train, &train_path)?;
    write_patch_csv_file(&holdout, &holdout_path)?;
    Ok(CommandOutput {
        summary: format!(
            "wrote {} training and {} holdout patches (basis {}, noise {}, seed {})",
            train.len(),
            holdout.len(),
            config.basis_dim,
            config.noise_sigma,
            config.seed
        ),
        json: json!({
            "n_train": train.len(),
            "n_holdout": holdout.len(),
            "basis_dim": config.basis_dim,
            "noise_sigma": config.noise_sigma,
            "seed": config.seed,
            "train_csv": train_path,
            "holdout_csv": holdout_path,
        }),
    })
}

pub(crate) fn synth_fundus(args: SynthFundusArgs) -> CliResult {
    let mut config: PhantomConfig = load_config_json(args.config.as_ref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let entries = synth_fundus_dataset(&config, &args.out, args.emit_cubes)?;
    let counts = |split: &str| entries.iter().filter(|e| e.split == split).count();
    Ok(CommandOutput {
        summary: format!(
            "wrote {} phantom images ({} train / {} val / {} test) at {}px, seed {}",
            entries.len(),
            counts("train"),
            counts("val"),
            counts("test"),
            config.image_size,
            config.seed
        ),
        json: json!({
            "total": entries.len(),
            "train": counts("train"),
            "val": counts("val"),
            "test": counts("test"),
            "image_size": config.image_size,
            "seed": config.seed,
            "emit_cubes": args.emit_cubes,
            "out": args.out,
            "manifest": args.out.join("manifest.jsonl"),
        }),
    })
}

pub(crate) fn train(args: TrainArgs) -> CliResult {
    let arch: Arch = args.arch.parse().map_err(|e: Error| usage(e.to_string()))?;
    let mut config: TrainConfig = match &args.config {
        Some(path) => TrainConfig::load_file(path)?,
        None => TrainConfig::default(),
    };
    config.arch = arch;
    if args.band.is_some() {
        config.band_index = args.band;
    }
    config.model.encoder.in_channels = match arch {
        Arch::RgbBaseline => 3,
        _ => 1,
    };

    let topology = match (arch, &args.graph) {
        (Arch::GnnMsvl, Some(path)) => Some(GraphTopology::load_file(path)?),
        (Arch::GnnMsvl, None) => return Err(usage("gnn_msvl training needs --graph")),
        (_, _) => None,
    };
    if arch == Arch::SingleBand && config.band_index.is_none() {
        return Err(usage("single_band training needs --band"));
    }

    let matrix = match &args.matrix {
        Some(path) => Some(TransformationMatrix::load_file(path)?),
        None => None,
    };
    let train_set = load_split(&args.data, "train", arch, config.band_index, matrix.as_ref())?;
    let val_set = load_split(&args.data, "val", arch, config.band_index, matrix.as_ref())?;

    let (params, history) = model::train(&config, &train_set, &val_set, topology.as_ref())?;
    params.save_file(&args.out)?;

    if let Some(history_path) = &args.history {
        let mut file =
            std::fs::File::create(history_path).map_err(|e| Error::io(history_path, e))?;
        writeln!(file, "epoch,train_loss,val_auroc").map_err(|e| Error::io(history_path, e))?;
        for row in &history {
            writeln!(file, "{},{},{}", row.epoch, row.train_loss, row.val_auroc)
                .map_err(|e| Error::io(history_path, e))?;
        }
    }

    let best = history.iter().map(|h| h.val_auroc).fold(f64::NEG_INFINITY, f64::max);
    Ok(CommandOutput {
        summary: format!(
            "trained {arch} on {} samples for {} epoch(s): best val AUROC {:.4} ({} parameters)",
            train_set.len(),
            history.len(),
            best,
            params.parameter_count()
        ),
        json: json!({
            "arch": arch.to_string(),
            "epochs_run": history.len(),
            "best_val_auroc": if best.is_finite() { Some(best) } else { None },
            "parameters": params.parameter_count(),
            "train_samples": train_set.len(),
            "val_samples": val_set.len(),
            "out": args.out,
            "history": history,
        }),
    })
}

pub(crate) fn evaluate(args: EvaluateArgs) -> CliResult {
    let params = ModelParams::load_file(&args.model)?;
    let matrix = match &args.matrix {
        Some(path) => Some(TransformationMatrix::load_file(path)?),
        None => None,
    };
    let arch = params.arch();
    let band = params.band_index();

    let eval_set = load_split(&args.data, &args.split, arch, band, matrix.as_ref())?;
    let eval_scores = score_split(&params, &eval_set)?;

    // Operating cutoff from the requested split (the evaluated split itself
    // when they coincide).
    let cutoff = if args.cutoff_from == args.split {
        youden_cutoff(&eval_scores)?
    } else {
        let cutoff_set =
            load_split(&args.data, &args.cutoff_from, arch, band, matrix.as_ref())?;
        youden_cutoff(&score_split(&params, &cutoff_set)?)?
    };

    if args.bootstrap < 100 {
        return Err(usage(format!(
            "--bootstrap must be at least 100, got {}",
            args.bootstrap
        )));
    }

    // Optional DeLong comparison against another model's scores.
    let p_value = match &args.compare {
        Some(path) => {
            let other = read_scores_csv_file(path)?;
            let by_id: std::collections::HashMap<&str, f64> =
                other.iter().map(|r| (r.id.as_str(), r.score)).collect();
            let mut ours = Vec::with_capacity(eval_set.len());
            let mut theirs = Vec::with_capacity(eval_set.len());
            let mut labels = Vec::with_capacity(eval_set.len());
            for (sample, scored) in eval_set.iter().zip(&eval_scores) {
                let other_score = by_id.get(sample.id.as_str()).ok_or_else(|| {
                    Error::Format(format!(
                        "comparison scores at {} lack an entry for {:?}",
                        path.display(),
                        sample.id
                    ))
                })?;
                ours.push(scored.score);
                theirs.push(*other_score);
                labels.push(scored.label);
            }
            Some(delong_test(&ours, &theirs, &labels)?)
        }
        None => None,
    };

    let report = EvalReport::compute(
        &eval_scores,
        cutoff,
        args.bootstrap,
        args.seed,
        p_value.as_ref().map(|d| d.p_value),
    )?;
    let strata = stratified_report(&eval_scores, cutoff)?;
    let curve = roc_curve(&eval_scores)?;

    if let Some(path) = &args.scores {
        let records: Vec<ScoreRecord> = eval_set
            .iter()
            .zip(&eval_scores)
            .map(|(sample, scored)| ScoreRecord {
                id: sample.id.clone(),
                score: scored.score,
                label: u8::from(scored.label),
                group: sample.group.clone().unwrap_or_default(),
            })
            .collect();
        write_scores_csv_file(&records, path)?;
    }
    if let Some(path) = &args.roc {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_roc_csv(&curve, std::io::BufWriter::new(file))?;
    }

    let model_label = match (arch, band, params.topology()) {
        (Arch::SingleBand, Some(b), _) => format!("single_band[{}nm]", 450 + 10 * b),
        (Arch::GnnMsvl, _, Some(t)) => match (t.kind(), t.step()) {
            (msvl::graph::TopologyKind::Jumper, Some(n)) => format!("gnn_jumper_{n}"),
            (kind, _) => format!("gnn_{kind}"),
        },
        _ => arch.to_string(),
    };

    let mut doc = serde_json::to_value(&report)
        .map_err(|e| Error::Format(format!("report serialization failed: {e}")))?;
    let extra = json!({
        "model": model_label,
        "arch": arch.to_string(),
        "split": args.split,
        "cutoff_from": args.cutoff_from,
        "bootstrap_resamples": args.bootstrap,
        "bootstrap_seed": args.seed,
        "compare": args.compare,
        "delong": p_value,
        "stratified": strata,
        "roc": curve,
    });
    merge_json(&mut doc, extra);

    if let Some(path) = &args.report {
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Format(format!("report serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }

    let mut summary = format!(
        "{model_label} on {} ({} samples, {} pos / {} neg)\n",
        args.split,
        eval_scores.len(),
        report.n_pos,
        report.n_neg
    );
    summary.push_str(
        "accuracy\tsensitivity\tspecificity\tf1\tauroc\tauroc_95ci\tcutoff\tp\n",
    );
    summary.push_str(&report.to_string());
    summary.push('\n');
    for row in &strata.rows {
        summary.push_str(&format!(
            "group {}: accuracy {:.1}% ({}/{})\n",
            row.group,
            row.accuracy * 100.0,
            row.correct,
            row.n
        ));
    }
    summary.push_str(&format!(
        "overall: accuracy {:.1}% ({}/{})",
        strata.overall.accuracy * 100.0,
        strata.overall.correct,
        strata.overall.n
    ));

    Ok(CommandOutput { summary, json: doc })
}

fn merge_json(base: &mut serde_json::Value, extra: serde_json::Value) {
    if let (serde_json::Value::Object(base), serde_json::Value::Object(extra)) = (base, extra) {
        for (k, v) in extra {
            base.insert(k, v);
        }
    }
}

fn score_split(
    params: &ModelParams,
    samples: &[model::LabeledSample],
) -> Result<Vec<ScoredSample>> {
    use rayon::prelude::*;
    let scores: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| params.predict(s.input.as_model_input()))
        .collect();
    let mut out = Vec::with_capacity(samples.len());
    for (score, sample) in scores.into_iter().zip(samples) {
        let mut scored = ScoredSample::new(score?, sample.label)?;
        if let Some(group) = &sample.group {
            scored = scored.with_group(group.clone());
        }
        out.push(scored);
    }
    Ok(out)
}

pub(crate) fn plot_roc(args: PlotRocArgs) -> CliResult {
    let mut curves = Vec::new();
    for path in &args.report {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: report parse failed: {e}", path.display())))?;
        let label = doc["model"]
            .as_str()
            .unwrap_or_else(|| path.file_stem().and_then(|s| s.to_str()).unwrap_or("model"))
            .to_string();
        let auroc = doc["auroc"].as_f64().ok_or_else(|| {
            Error::Format(format!("{}: report lacks an auroc field", path.display()))
        })?;
        let points: Vec<RocPoint> = serde_json::from_value(doc["roc"].clone())
            .map_err(|e| Error::Format(format!("{}: report roc points invalid: {e}", path.display())))?;
        if points.is_empty() {
            return Err(Error::Format(format!("{}: report holds no roc points", path.display())).into());
        }
        curves.push(Curve { label, auroc, points });
    }
    let rendered = svg::render(&curves);
    std::fs::write(&args.out, &rendered).map_err(|e| Error::io(&args.out, e))?;
    Ok(CommandOutput {
        summary: format!("wrote {} curve(s) to {}", curves.len(), args.out.display()),
        json: json!({
            "curves": curves.iter().map(|c| json!({"model": c.label, "auroc": c.auroc})).collect::<Vec<_>>(),
            "out": args.out,
        }),
    })
}

pub(crate) fn cube_info(file: PathBuf) -> CliResult {
    let cube = read_cube_file(&file)?;
    let data = cube.data();
    let (mut min, mut max, mut total) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64);
    for &v in data {
        min = min.min(v);
        max = max.max(v);
        total += v as f64;
    }
    let doc = json!({
        "width": cube.width(),
        "height": cube.height(),
        "bands": cube.bands(),
        "wavelengths_nm": cube.grid().wavelengths_nm().to_vec(),
        "min": min,
        "max": max,
        "mean": total / data.len() as f64,
    });
    let rendered = serde_json::to_string_pretty(&doc).expect("cube stats serialize");
    Ok(CommandOutput { summary: rendered, json: doc })
}
