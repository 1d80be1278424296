use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use shelfalign::detection::{save_overlay, DetectedObject};
use shelfalign::evaluation::{
    detection_metrics, label_metrics, load_ground_truth, product_sprites, render_metrics_table, scenario_spec,
    synth_shelf, GroundTruth, Metrics, Scenario, SynthSpec,
};
use shelfalign::features::io::import_features_for;
use shelfalign::features::ExtractorParams;
use shelfalign::imaging::{load_image, RoiMask};
use shelfalign::planogram::{load_reference, Planogram, PlanogramEntry};
use shelfalign::search::{
    detect_products, run_compliance_observed, with_regions, ComplianceReport, Model, Shelf,
};

use crate::config::RunConfig;
use crate::output::{atomic, ensure_dir, write_json, write_text};
use crate::CliError;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Precomputed features stored next to an image as `<image>.shft`.
fn feature_sidecar(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".shft");
    PathBuf::from(s)
}

fn load_shelf(path: &Path, params: &ExtractorParams) -> Result<Shelf, CliError> {
    let image = load_image(path)?;
    let sidecar = feature_sidecar(path);
    if sidecar.is_file() {
        let features = import_features_for(&sidecar, image.width(), image.height())?;
        Ok(Shelf::with_features(image, features)?)
    } else {
        Ok(Shelf::new(image, params)?)
    }
}

fn load_model(id: &str, path: &Path, params: &ExtractorParams) -> Result<Model, CliError> {
    let image = load_image(path)?;
    let sidecar = feature_sidecar(path);
    if sidecar.is_file() {
        Ok(Model {
            id: id.to_string(),
            features: import_features_for(&sidecar, image.width(), image.height())?,
        })
    } else {
        Ok(Model::from_image(id, &image, params)?)
    }
}

fn model_in_dir(dir: &Path, id: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

/// Models for every product of `reference`, or for every image in `models_dir`.
fn load_models(
    reference: Option<&Planogram>,
    models_dir: Option<&Path>,
    params: &ExtractorParams,
) -> Result<Vec<Model>, CliError> {
    let mut sources: Vec<(String, PathBuf)> = Vec::new();
    match reference {
        Some(r) => {
            let mut seen = BTreeSet::new();
            for e in &r.entries {
                let id = e.kind.as_str();
                if !seen.insert(id.to_string()) {
                    continue;
                }
                let path = e
                    .image
                    .clone()
                    .or_else(|| models_dir.and_then(|d| model_in_dir(d, id)))
                    .ok_or_else(|| CliError::Input(format!("no model image for product '{id}'")))?;
                sources.push((id.to_string(), path));
            }
        }
        None => {
            let dir = models_dir
                .ok_or_else(|| CliError::Input("either --planogram or --models-dir is required".into()))?;
            let entries = std::fs::read_dir(dir)
                .map_err(|e| CliError::Input(format!("cannot read models directory {}: {e}", dir.display())))?;
            for entry in entries {
                let path = entry.map_err(CliError::internal)?.path();
                let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
                if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        sources.push((stem.to_string(), path.clone()));
                    }
                }
            }
            sources.sort();
            if sources.is_empty() {
                return Err(CliError::Input(format!("no model images in {}", dir.display())));
            }
        }
    }
    sources
        .iter()
        .map(|(id, path)| load_model(id, path, params))
        .collect()
}

fn write_overlay(shelf: &Shelf, detections: &[DetectedObject], path: &Path) -> Result<(), CliError> {
    atomic(path, |tmp| save_overlay(&shelf.image, detections, tmp).map_err(CliError::internal))
}

#[derive(Serialize)]
struct Inputs<'a> {
    shelf: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    planogram: Option<&'a Path>,
}

#[derive(Serialize)]
struct DetectionsFile<'a> {
    config: &'a RunConfig,
    inputs: Inputs<'a>,
    detections: &'a [DetectedObject],
}

pub fn detect(
    shelf_path: &Path,
    planogram: Option<&Path>,
    models_dir: Option<&Path>,
    out: &Path,
    config: &RunConfig,
) -> Result<(), CliError> {
    let reference = planogram.map(load_reference).transpose()?;
    let shelf = load_shelf(shelf_path, &config.search.extractor)?;
    let models = load_models(reference.as_ref(), models_dir, &config.search.extractor)?;
    let pass = detect_products(&shelf, &models, 1.0, &RoiMask::full(), &[], &config.search)?;
    let detections = with_regions(&shelf.image, &pass.detections, &config.search.empty_space);

    ensure_dir(out)?;
    write_json(
        &out.join("detections.json"),
        &DetectionsFile {
            config,
            inputs: Inputs {
                shelf: shelf_path,
                planogram,
            },
            detections: &detections,
        },
    )?;
    if config.overlay {
        write_overlay(&shelf, &detections, &out.join("overlay.png"))?;
    }
    if config.dump_votes {
        let dir = out.join("votes");
        ensure_dir(&dir)?;
        for v in &pass.votes {
            let path = dir.join(format!("{}.png", v.object_id()));
            atomic(&path, |tmp| v.save_png(tmp).map_err(CliError::internal))?;
        }
    }
    println!("detections={}", pass.detections.len());
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a RunConfig,
    inputs: Inputs<'a>,
    report: &'a ComplianceReport,
}

pub fn comply(
    shelf_path: &Path,
    planogram: &Path,
    models_dir: Option<&Path>,
    out: &Path,
    config: &RunConfig,
) -> Result<(), CliError> {
    let reference = load_reference(planogram)?;
    let shelf = load_shelf(shelf_path, &config.search.extractor)?;
    let models = load_models(Some(&reference), models_dir, &config.search.extractor)?;
    ensure_dir(out)?;

    let votes_dir = out.join("votes");
    let mut dump_error: Option<CliError> = None;
    let report = run_compliance_observed(&shelf, &models, &reference, &config.search, |record, votes| {
        if config.dump_votes && dump_error.is_none() {
            let result = ensure_dir(&votes_dir).and_then(|_| {
                votes.iter().try_for_each(|v| {
                    let path = votes_dir.join(format!("iter{:02}_{}.png", record.iteration, v.object_id()));
                    atomic(&path, |tmp| v.save_png(tmp).map_err(CliError::internal))
                })
            });
            dump_error = result.err();
        }
        Ok(())
    })?;
    if let Some(e) = dump_error {
        return Err(e);
    }

    write_json(
        &out.join("report.json"),
        &ReportFile {
            config,
            inputs: Inputs {
                shelf: shelf_path,
                planogram: Some(planogram),
            },
            report: &report,
        },
    )?;
    let mut table = report.outcome.render_table();
    table.push_str(&format!("iterations = {}\n", report.iterations_run));
    write_text(&out.join("alignment.txt"), &table)?;
    if config.overlay {
        write_overlay(&shelf, &report.detections, &out.join("overlay.png"))?;
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("mu={:.4}", report.final_mu);
    Ok(())
}

/// What a prediction file provides for scoring.
struct Prediction {
    detections: Vec<DetectedObject>,
    labels: Option<Vec<(String, shelfalign::alignment::Label)>>,
}

fn read_prediction(path: &Path) -> Result<Prediction, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let schema = |e: serde_json::Error| CliError::Input(format!("invalid prediction file {}: {e}", path.display()));
    let value: Value = serde_json::from_str(&text).map_err(schema)?;
    if let Some(report) = value.get("report") {
        let report: ComplianceReport = serde_json::from_value(report.clone()).map_err(schema)?;
        Ok(Prediction {
            labels: Some(shelfalign::evaluation::group_labels(&report.outcome)),
            detections: report.detections,
        })
    } else if let Some(dets) = value.get("detections") {
        Ok(Prediction {
            detections: serde_json::from_value(dets.clone()).map_err(schema)?,
            labels: None,
        })
    } else if value.get("boxes").is_some() {
        let gt: GroundTruth = serde_json::from_value(value).map_err(schema)?;
        Ok(Prediction {
            detections: gt
                .boxes
                .iter()
                .map(|b| DetectedObject::region(b.id.clone(), b.bbox))
                .collect(),
            labels: Some(gt.labels.into_iter().map(|l| (l.group, l.label)).collect()),
        })
    } else {
        Err(CliError::Input(format!(
            "{}: expected a comply report, a detections file or a ground-truth file",
            path.display()
        )))
    }
}

#[derive(Serialize)]
struct ShelfMetrics {
    shelf: String,
    detection: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    compliance: Option<Metrics>,
}

#[derive(Serialize)]
struct Aggregate {
    detection: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    compliance: Option<Metrics>,
}

#[derive(Serialize)]
struct MetricsFile {
    iou_thresh: f64,
    shelves: Vec<ShelfMetrics>,
    aggregate: Aggregate,
}

pub fn eval(gts: &[PathBuf], preds: &[PathBuf], out: &Path, config: &RunConfig) -> Result<(), CliError> {
    if gts.len() != preds.len() {
        return Err(CliError::Input(format!(
            "{} ground-truth files but {} prediction files",
            gts.len(),
            preds.len()
        )));
    }
    if !(config.eval_iou > 0.0 && config.eval_iou < 1.0) {
        return Err(CliError::Input(format!("eval_iou must lie in (0, 1), got {}", config.eval_iou)));
    }
    let mut shelves = Vec::with_capacity(gts.len());
    for (g, p) in gts.iter().zip(preds) {
        let truth = load_ground_truth(g)?;
        let pred = read_prediction(p)?;
        let detection = detection_metrics(&pred.detections, &truth, config.eval_iou);
        let compliance = pred.labels.as_ref().map(|l| label_metrics(l, &truth.labels));
        let shelf = if truth.shelf_id.is_empty() {
            g.display().to_string()
        } else {
            truth.shelf_id.clone()
        };
        shelves.push(ShelfMetrics {
            shelf,
            detection,
            compliance,
        });
    }
    let detection = Metrics::aggregate(shelves.iter().map(|s| &s.detection));
    let scored: Vec<&Metrics> = shelves.iter().filter_map(|s| s.compliance.as_ref()).collect();
    let compliance = (!scored.is_empty()).then(|| Metrics::aggregate(scored));

    ensure_dir(out)?;
    let mut rows: Vec<(String, Metrics)> = shelves.iter().map(|s| (s.shelf.clone(), s.detection)).collect();
    rows.push(("aggregate".into(), detection));
    let mut text = format!("detection (IoU > {})\n", config.eval_iou);
    text.push_str(&render_metrics_table(&rows));
    if let Some(c) = compliance {
        let mut rows: Vec<(String, Metrics)> = shelves
            .iter()
            .filter_map(|s| s.compliance.map(|m| (s.shelf.clone(), m)))
            .collect();
        rows.push(("aggregate".into(), c));
        text.push_str("\ncompliance\n");
        text.push_str(&render_metrics_table(&rows));
    }
    write_json(
        &out.join("metrics.json"),
        &MetricsFile {
            iou_thresh: config.eval_iou,
            shelves,
            aggregate: Aggregate {
                detection,
                compliance,
            },
        },
    )?;
    write_text(&out.join("metrics.txt"), &text)?;
    match compliance {
        Some(c) => println!("detection_f1={:.4} compliance_f1={:.4}", detection.f1, c.f1),
        None => println!("detection_f1={:.4}", detection.f1),
    }
    Ok(())
}

fn parse_scenario(name: &str) -> Result<Scenario, CliError> {
    Scenario::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| {
            let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
            CliError::Input(format!("unknown scenario '{name}', expected one of {}", names.join(", ")))
        })
}

pub fn synth(
    spec_path: Option<&Path>,
    scenario: Option<&str>,
    seed_given: bool,
    out: &Path,
    config: &RunConfig,
) -> Result<(), CliError> {
    let mut spec = match (spec_path, scenario) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("cannot read spec {}: {e}", p.display())))?;
            let spec: SynthSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("invalid spec {}: {e}", p.display())))?;
            spec
        }
        (None, Some(name)) => scenario_spec(parse_scenario(name)?, config.seed),
        (None, None) => SynthSpec::from_layout(
            "synthetic",
            &[("o1", 3), ("o2", 5), ("o3", 5), ("o4", 4), ("o5", 2)],
            config.seed,
        ),
    };
    if seed_given || spec_path.is_none() {
        spec.seed = config.seed;
    }
    let sprites = product_sprites(spec.product_ids(), spec.sprite_seed);
    let shelf = synth_shelf(&spec, &sprites)?;

    let models_dir = out.join("models");
    ensure_dir(&models_dir)?;
    for (id, img) in &sprites {
        let path = models_dir.join(format!("{id}.png"));
        atomic(&path, |tmp| img.save_png(tmp).map_err(CliError::internal))?;
    }
    let shelf_path = out.join("shelf.png");
    atomic(&shelf_path, |tmp| shelf.image.save_png(tmp).map_err(CliError::internal))?;
    write_json(&out.join("gt.json"), &shelf.truth)?;
    let reference = Planogram {
        shelf_id: shelf.reference.shelf_id.clone(),
        entries: shelf
            .reference
            .entries
            .iter()
            .map(|e| PlanogramEntry {
                image: Some(PathBuf::from(format!("models/{}.png", e.kind))),
                ..e.clone()
            })
            .collect(),
    };
    write_json(&out.join("planogram.json"), &reference)?;
    println!("boxes={}", shelf.truth.boxes.len());
    Ok(())
}
