use anyhow::{Context, Result};
use neft_core::channel::ChannelDataset;
use neft_core::complexity::complexity_for;
use neft_core::distill::distill_train;
use neft_core::models::{save_checkpoint, Model, NeftConfig, Variant};
use neft_core::trainer::{evaluate_in, train as train_model, TrainOutcome};
use neft_tensor::{DType, Element};
use serde::Serialize;

use super::{load_data, load_model, AnyModel};
use crate::config::{self, RunConfig};
use crate::exit::{usage, NumericFailure};
use crate::output::{resolve_out, OutDir, Provenance};
use crate::report::{DistillSummary, ExperimentReport, FinalMetrics, FlopSummary};
use crate::{DistillArgs, TrainArgs, TrainOverrides};

fn apply_overrides(cfg: &mut RunConfig, o: &TrainOverrides) {
    let t = &mut cfg.train;
    if let Some(v) = o.epochs {
        t.epochs = v;
    }
    if let Some(v) = o.lr {
        t.lr_max = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.seed {
        t.seed = v;
        cfg.model.seed = v;
    }
    if o.max_steps.is_some() {
        cfg.train.max_steps = o.max_steps;
    }
    if let Some(v) = o.precision {
        cfg.train.precision = v;
    }
    if o.no_early_stop {
        cfg.train.early_stop = None;
    }
    if o.c1.is_some() {
        cfg.model.c1 = o.c1;
    }
    if o.c0.is_some() {
        cfg.model.c0 = o.c0;
    }
    if o.mlp_ratio.is_some() {
        cfg.model.mlp_ratio = o.mlp_ratio;
    }
    if o.test.is_some() {
        cfg.paths.test = o.test.clone();
    }
}

struct Datasets {
    train: ChannelDataset,
    val: ChannelDataset,
    test: Option<ChannelDataset>,
}

fn load_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let p = &cfg.paths;
    let train = load_data(p.require(&p.data, "--data")?)?;
    let val = load_data(p.require(&p.val, "--val")?)?;
    let test = p.test.as_deref().map(load_data).transpose()?;
    for (name, d) in [("validation", Some(&val)), ("test", test.as_ref())] {
        if let Some(d) = d {
            if d.input_shape() != train.input_shape() {
                return Err(usage(format!(
                    "{name} samples are {:?} but training samples are {:?}",
                    d.input_shape(),
                    train.input_shape()
                )));
            }
        }
    }
    Ok(Datasets { train, val, test })
}

fn check_model_fits(model: &NeftConfig, data: &ChannelDataset) -> Result<()> {
    if model.input_shape != data.input_shape() {
        return Err(usage(format!(
            "model expects {:?} inputs but the dataset holds {:?}",
            model.input_shape,
            data.input_shape()
        )));
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = config::load_or_default(args.common.config.as_deref())?;
    apply_overrides(&mut cfg, &args.train);
    if args.variant.is_some() {
        cfg.model.variant = args.variant;
    }
    if args.gamma.is_some() {
        cfg.model.gamma = args.gamma;
    }
    if args.data.is_some() {
        cfg.paths.data = args.data;
    }
    if args.val.is_some() {
        cfg.paths.val = args.val;
    }
    cfg.train.validate()?;
    let data = load_datasets(&cfg)?;
    let model_cfg = cfg.model.resolve(Variant::Neft, 16, data.train.input_shape())?;
    check_model_fits(&model_cfg, &data.train)?;
    let out = OutDir::prepare(&resolve_out(args.common.out, &mut cfg, "train"), args.common.force)?;

    match cfg.train.precision {
        DType::F32 => {
            let outcome = train_model(Model::<f32>::build(&model_cfg)?, &data.train, &data.val, &cfg.train)?;
            finish("train", &cfg, &out, outcome, data.test.as_ref(), None)
        }
        DType::F64 => {
            let outcome = train_model(Model::<f64>::build(&model_cfg)?, &data.train, &data.val, &cfg.train)?;
            finish("train", &cfg, &out, outcome, data.test.as_ref(), None)
        }
    }
}

pub fn distill(args: DistillArgs) -> Result<()> {
    let mut cfg = config::load_or_default(args.common.config.as_deref())?;
    apply_overrides(&mut cfg, &args.train);
    if let Some(lr) = args.train.lr {
        cfg.distill.lr_max = lr;
    }
    if let Some(l) = &args.lambdas {
        cfg.distill.lambdas = config::parse_lambdas(l)?;
    }
    cfg.distill.lambdas.validate()?;
    if args.student_variant.is_some() {
        cfg.model.variant = args.student_variant;
    }
    if args.teacher.is_some() {
        cfg.paths.teacher = args.teacher;
    }
    if args.data.is_some() {
        cfg.paths.data = args.data;
    }
    if args.val.is_some() {
        cfg.paths.val = args.val;
    }
    let mut train_cfg = cfg.train.clone();
    train_cfg.lr_max = cfg.distill.lr_max;
    train_cfg.validate()?;

    let teacher_path = cfg.paths.require(&cfg.paths.teacher, "--teacher")?.to_path_buf();
    let teacher = load_model(&teacher_path)?;
    let teacher_cfg = teacher.config().clone();
    let default_student = Variant::ALL.into_iter().find(|v| v.teacher() == Some(teacher_cfg.variant));
    let default_student = match (cfg.model.variant, default_student) {
        (Some(v), _) | (None, Some(v)) => v,
        (None, None) => return Err(usage(format!("no student variant is defined for a {} teacher; pass --student-variant", teacher_cfg.variant))),
    };
    let student_cfg = cfg.model.resolve(default_student, teacher_cfg.gamma, teacher_cfg.input_shape)?;
    student_cfg.check_student_of(&teacher_cfg)?;
    let data = load_datasets(&cfg)?;
    check_model_fits(&teacher_cfg, &data.train)?;
    let out = OutDir::prepare(&resolve_out(args.common.out, &mut cfg, "distill"), args.common.force)?;

    let summary = DistillSummary { teacher: teacher_path, teacher_model: teacher_cfg, lambdas: cfg.distill.lambdas };
    let lambdas = cfg.distill.lambdas;
    match train_cfg.precision {
        DType::F32 => {
            let teacher = match teacher {
                AnyModel::F32(m) => m,
                AnyModel::F64(m) => m.cast(),
            };
            let outcome = distill_train(&teacher, Model::<f32>::build(&student_cfg)?, &data.train, &data.val, lambdas, &train_cfg)?;
            finish("distill", &cfg, &out, outcome, data.test.as_ref(), Some(summary))
        }
        DType::F64 => {
            let teacher = match teacher {
                AnyModel::F32(m) => m.cast(),
                AnyModel::F64(m) => m,
            };
            let outcome = distill_train(&teacher, Model::<f64>::build(&student_cfg)?, &data.train, &data.val, lambdas, &train_cfg)?;
            finish("distill", &cfg, &out, outcome, data.test.as_ref(), Some(summary))
        }
    }
}

#[derive(Serialize)]
struct DistillLine {
    epoch: usize,
    rec: f64,
    ra: f64,
    aa: f64,
    ca: f64,
    total: f64,
    #[serde(with = "neft_core::metrics::db")]
    val_nmse_db: f64,
}

fn fmt_f64(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

/// Writes the checkpoint, report and curves; turns a divergence into a
/// numeric failure after the artifacts are on disk.
fn finish<T: Element>(
    command: &str,
    cfg: &RunConfig,
    out: &OutDir,
    outcome: TrainOutcome<T>,
    test: Option<&ChannelDataset>,
    distillation: Option<DistillSummary>,
) -> Result<()> {
    let provenance = Provenance::new(command, cfg);
    let ckpt = out.path("checkpoint.ckpt");
    save_checkpoint(&outcome.model, &ckpt, serde_json::to_value(&provenance)?).with_context(|| format!("writing {}", ckpt.display()))?;

    let final_metrics = match test {
        Some(t) => FinalMetrics { split: "test".into(), metrics: Some(evaluate_in(&outcome.model, t, cfg.eval.batch_size, cfg.eval.domain)?) },
        None => FinalMetrics { split: "val".into(), metrics: outcome.report.best_val },
    };
    let cost = complexity_for(outcome.model.config())?;
    let report = ExperimentReport {
        provenance: provenance.clone(),
        status: if outcome.diverged() { "diverged".into() } else { "ok".into() },
        model: outcome.model.config().clone(),
        param_count: outcome.model.param_count() as u64,
        flops: FlopSummary { total: cost.total_flops, encoder: cost.encoder_flops },
        training: outcome.report.clone(),
        final_metrics,
        distillation,
    };
    out.write_json("report.json", &report)?;

    let epochs = &outcome.report.epochs;
    let loss_names: Vec<String> = epochs.first().map(|e| e.losses.keys().cloned().collect()).unwrap_or_default();
    let mut header: Vec<String> = ["epoch", "lr", "steps"].map(String::from).to_vec();
    header.extend(loss_names.iter().map(|n| format!("loss_{n}")));
    header.extend(["val_nmse_db", "val_rho"].map(String::from));
    let rows: Vec<Vec<String>> = epochs
        .iter()
        .map(|e| {
            let mut r = vec![e.epoch.to_string(), e.lr.to_string(), e.steps.to_string()];
            r.extend(loss_names.iter().map(|n| fmt_f64(e.losses[n.as_str()])));
            r.push(fmt_f64(e.val.nmse_db));
            r.push(fmt_f64(e.val.rho));
            r
        })
        .collect();
    out.write_csv("curves.csv", &provenance, &header, &rows)?;

    if report.distillation.is_some() {
        let lines: Vec<DistillLine> = epochs
            .iter()
            .map(|e| {
                let l = |k: &str| e.losses.get(k).copied().unwrap_or(0.0);
                DistillLine { epoch: e.epoch, rec: l("rec"), ra: l("ra"), aa: l("aa"), ca: l("ca"), total: l("total"), val_nmse_db: e.val.nmse_db }
            })
            .collect();
        out.write_jsonl("distill.jsonl", &provenance, &lines)?;
    }

    let r = &outcome.report;
    match &report.final_metrics.metrics {
        Some(m) => println!(
            "{}: {} epochs, {} steps, {} NMSE {:.3} dB, rho {:.5}",
            report.model.variant,
            r.epochs.len(),
            r.steps,
            report.final_metrics.split,
            m.nmse_db,
            m.rho
        ),
        None => println!("{}: no completed epoch", report.model.variant),
    }
    if let Some(e) = r.stopped_early_at {
        println!("early stop at epoch {e} (best epoch {:?})", r.best_epoch);
    }
    if let Some(f) = &r.failure {
        return Err(NumericFailure(format!("training diverged: {f}; best checkpoint so far kept at {}", ckpt.display())).into());
    }
    Ok(())
}
