//! synth, train, eval, predict and netspec-check.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use otoar_core::folds::{make_folds, FoldPlan};
use otoar_core::netspec::{format_shape_table, parse_netspec, NetworkSpec};
use otoar_core::nn::Checkpoint;
use otoar_core::report::{evaluate, CaseErrors, EvalReport};
use otoar_core::synth::synth_generate;
use otoar_core::train::{load_fold_models, predict_case, prepare_all, prepare_case, save_fold, train_cv, write_file, TrainConfig};
use otoar_core::volume::{load_volume, save_annotations, save_volume};
use otoar_core::{Case, Landmark};
use serde_json::{json, Map, Value};

use crate::args::{EvalArgs, NetspecArgs, PredictArgs, SynthArgs, TrainArgs};
use crate::error::{CliError, Result};
use crate::manifest::FILE_NAME;
use crate::Ctx;

const ANNOTATIONS: &str = "annotations.json";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn json_bytes(v: &impl serde::Serialize) -> Vec<u8> {
    (serde_json::to_string_pretty(v).expect("plain data") + "\n").into_bytes()
}

/// Every case sidecar in `dir`, sorted by file name.
pub fn load_cases(dir: &Path) -> Result<Vec<Case>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| p.file_name().is_some_and(|n| n != ANNOTATIONS && n != FILE_NAME))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::data(format!("{}: no case sidecars", dir.display())));
    }
    paths
        .iter()
        .map(|p| load_volume(p).map_err(|e| CliError::data(format!("{}: {e}", p.display()))))
        .collect()
}

pub fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let mut m = ctx.manifest("synth");
    m.seed = Some(a.seed);
    m.config = json!({"cases": a.cases, "dims": a.dims, "spacing": a.spacing, "seed": a.seed});
    m.output("dir", &a.out);
    m.write(Some(&a.out), ctx.manifest_path())?;

    let cases = synth_generate(a.cases, a.dims, a.spacing, a.seed)?;
    for c in &cases {
        save_volume(c, &a.out, &c.volume.id)?;
    }
    let table: Vec<(String, _)> = cases.iter().map(|c| (c.volume.id.clone(), c.landmarks)).collect();
    save_annotations(&a.out.join(ANNOTATIONS), &table)?;
    outln!("wrote {} cases to {}", cases.len(), a.out.display());
    Ok(())
}

/// Defaults, then `--desk-scale`, then `--config`, then explicit flags.
pub fn resolve_train_config(a: &TrainArgs, explicit: &dyn Fn(&str) -> bool) -> Result<TrainConfig> {
    let mut cfg = if a.desk_scale { TrainConfig::desk_scale() } else { TrainConfig::default() };
    if let Some(path) = &a.config {
        let text = read_text(path)?;
        let mut base = serde_json::to_value(&cfg).expect("config serializes");
        let overlay: Value =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let Value::Object(fields) = overlay else {
            return Err(CliError::usage(format!("{}: config must be a JSON object", path.display())));
        };
        for (k, v) in fields {
            if base.get(&k).is_none() {
                return Err(CliError::usage(format!("{}: unknown config key `{k}`", path.display())));
            }
            base[k] = v;
        }
        cfg = serde_json::from_value(base).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    }
    if explicit("epochs") {
        cfg.epochs = a.epochs;
    }
    if explicit("batch_size") {
        cfg.batch_size = a.batch_size;
    }
    if explicit("learning_rate") {
        cfg.learning_rate = a.learning_rate;
    }
    if explicit("dropout_rate") {
        cfg.dropout_rate = a.dropout_rate;
    }
    if explicit("seed") {
        cfg.seed = a.seed;
    }
    if explicit("folds") {
        cfg.folds = a.folds;
    }
    if explicit("input_dims") {
        cfg.input_dims = a.input_dims;
    }
    if let Some(p) = &a.spec {
        cfg.spec = Some(read_text(p)?);
    }
    if a.ungrouped {
        cfg.grouped_by_patient = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn plan_for(cases: &[Case], cfg: &TrainConfig) -> Result<FoldPlan> {
    let patients: Vec<&str> = cases.iter().map(|c| c.patient.as_str()).collect();
    make_folds(&patients, cfg.folds, cfg.seed, cfg.grouped_by_patient).map_err(|e| CliError::usage(e.to_string()))
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_file(dir, "report.json", &json_bytes(&report.to_json()))?;
    write_file(dir, "report.txt", report.render_table().as_bytes())?;
    out!("{}", report.render_table());
    outln!(
        "overall {:.3} ± {:.3} mm, {:.3} ± {:.3} voxels over {} cases",
        report.overall.mean,
        report.overall.sd,
        report.overall_voxels.mean,
        report.overall_voxels.sd,
        report.cases.len()
    );
    Ok(())
}

pub fn train(ctx: &Ctx, a: &TrainArgs, explicit: &dyn Fn(&str) -> bool) -> Result<()> {
    let cfg = resolve_train_config(a, explicit)?;
    let cases = load_cases(&a.data)?;
    let plan = plan_for(&cases, &cfg)?;

    let mut m = ctx.manifest("train");
    m.seed = Some(cfg.seed);
    m.config = serde_json::to_value(&cfg).expect("config serializes");
    m.input("data", &a.data);
    m.output("run", &a.out);
    m.write(Some(&a.out), ctx.manifest_path())?;
    write_file(&a.out, "config.json", &json_bytes(&cfg))?;
    write_file(&a.out, "folds.json", &json_bytes(&plan))?;
    let ids: Vec<&str> = cases.iter().map(|c| c.volume.id.as_str()).collect();
    write_file(&a.out, "cases.json", &json_bytes(&ids))?;

    let data = prepare_all(&cases, cfg.input_dims)?;
    let every = a.log_every.max(1);
    let epochs = cfg.epochs;
    let outcomes = train_cv(&data, &plan, &cfg, ctx.threads as usize, &|fold, epoch, loss| {
        if epoch == 1 || epoch % every == 0 || epoch == epochs {
            eprintln!("fold {fold} epoch {epoch}/{epochs} loss {loss:.6}");
        }
    })?;
    for o in &outcomes {
        save_fold(&a.out, o)?;
    }
    let models: Vec<_> = outcomes.into_iter().map(|o| o.checkpoint.model).collect();
    let report = evaluate(&models, &plan, &cases, &data, cfg.input_dims)?;
    write_report(&a.out, &report)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let cfg: TrainConfig = read_json(&a.run.join("config.json"))?;
    let plan: FoldPlan = read_json(&a.run.join("folds.json"))?;
    let ids: Vec<String> = read_json(&a.run.join("cases.json"))?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("eval"));

    let cases = load_cases(&a.data)?;
    let found: Vec<&str> = cases.iter().map(|c| c.volume.id.as_str()).collect();
    if found != ids {
        return Err(CliError::data(format!(
            "{} holds {} cases that do not match the {} cases of run {}",
            a.data.display(),
            found.len(),
            ids.len(),
            a.run.display()
        )));
    }

    let mut m = ctx.manifest("eval");
    m.seed = Some(cfg.seed);
    m.config = serde_json::to_value(&cfg).expect("config serializes");
    m.input("data", &a.data).input("run", &a.run);
    m.output("dir", &out);
    m.write(Some(&out), ctx.manifest_path())?;

    let data = prepare_all(&cases, cfg.input_dims)?;
    let models = load_fold_models(&a.run, plan.k)?;
    let report = evaluate(&models, &plan, &cases, &data, cfg.input_dims)?;
    write_report(&out, &report)
}

fn landmark_table(f: impl Fn(Landmark) -> Value) -> Value {
    let mut m = Map::new();
    for l in Landmark::ALL {
        m.insert(l.key().into(), f(l));
    }
    Value::Object(m)
}

pub fn predict(ctx: &Ctx, a: &PredictArgs) -> Result<()> {
    let mut m = ctx.manifest("predict");
    m.input("checkpoint", &a.checkpoint).input("case", &a.case);
    m.write(None, ctx.manifest_path())?;

    let model = Checkpoint::load(&a.checkpoint)?.model;
    let input = model.spec().input;
    let dims = [input.w, input.h, input.d];
    let case = load_volume(&a.case)?;
    let prepared = prepare_case(&case, dims)?;
    let pred = predict_case(&model, &prepared, dims)?;
    let vol = &case.volume;
    let err = CaseErrors::between(&vol.id, None, &pred, &case.landmarks, vol.spacing());
    let out = json!({
        "case": vol.id,
        "voxel": landmark_table(|l| json!(pred.get(l))),
        "mm": landmark_table(|l| json!(vol.voxel_to_mm(pred.get(l)))),
        "error_mm": landmark_table(|l| json!(err.mm[l.index()])),
    });
    outln!("{}", serde_json::to_string_pretty(&out).expect("plain data"));
    Ok(())
}

pub fn netspec_check(ctx: &Ctx, a: &NetspecArgs) -> Result<()> {
    let mut m = ctx.manifest("netspec-check");
    let (label, spec) = match &a.file {
        None => {
            let [w, h, d] = a.input_dims;
            m.config = json!({"input_dims": a.input_dims, "dropout_rate": a.dropout_rate});
            ("reference".to_string(), NetworkSpec::reference_with_dropout(w, h, d, a.dropout_rate))
        }
        Some(path) => {
            m.input("spec", path);
            let (label, src) = if path.as_os_str() == "-" {
                let mut s = String::new();
                std::io::stdin()
                    .read_to_string(&mut s)
                    .map_err(|e| CliError::data(format!("stdin: {e}")))?;
                ("<stdin>".to_string(), s)
            } else {
                (path.display().to_string(), read_text(path)?)
            };
            let spec = parse_netspec(&src).map_err(|d| CliError::data(format!("{label}:{d}")))?;
            (label, spec)
        }
    };
    m.write(None, ctx.manifest_path())?;
    let rows = spec.infer_shapes().map_err(|e| CliError::data(format!("{label}: {e}")))?;
    out!("{}", format_shape_table(&rows));
    Ok(())
}
