use std::path::PathBuf;

use anyhow::{Context, Result};
use neft_core::channel::ChannelDataset;
use neft_core::complexity::{complexity_for, group, ComplexityReport};
use neft_core::metrics::Metrics;
use neft_core::models::{Model, NeftConfig, Part, Variant, DEFAULT_INPUT};
use neft_core::trainer::{evaluate_in, MetricDomain};
use neft_tensor::Element;
use serde::Serialize;

use super::{load_data, load_model, AnyModel};
use crate::config;
use crate::exit::usage;
use crate::output::{resolve_out, OutDir, Provenance};
use crate::report::ExperimentReport;
use crate::{CompareArgs, EvalArgs, ExportAttnArgs, FlopsArgs};

fn check_fits(model: &NeftConfig, data: &ChannelDataset) -> Result<()> {
    if model.input_shape != data.input_shape() {
        return Err(usage(format!(
            "checkpoint expects {:?} inputs but the dataset holds {:?}",
            model.input_shape,
            data.input_shape()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    #[serde(flatten)]
    provenance: Provenance,
    model: NeftConfig,
    checkpoint: PathBuf,
    data: PathBuf,
    samples: usize,
    domain: MetricDomain,
    metrics: Metrics,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut cfg = config::load_or_default(args.common.config.as_deref())?;
    if args.checkpoint.is_some() {
        cfg.paths.checkpoint = args.checkpoint;
    }
    if args.data.is_some() {
        cfg.paths.data = args.data;
    }
    if let Some(b) = args.batch_size {
        cfg.eval.batch_size = b;
    }
    if let Some(d) = args.domain {
        cfg.eval.domain = d;
    }
    if cfg.eval.batch_size == 0 {
        return Err(usage("--batch-size must be at least 1"));
    }
    let ckpt_path = cfg.paths.require(&cfg.paths.checkpoint, "--checkpoint")?.to_path_buf();
    let data_path = cfg.paths.require(&cfg.paths.data, "--data")?.to_path_buf();
    let model = load_model(&ckpt_path)?;
    let data = load_data(&data_path)?;
    check_fits(model.config(), &data)?;
    let out = OutDir::prepare(&resolve_out(args.common.out, &mut cfg, "eval"), args.common.force)?;

    let (batch, domain) = (cfg.eval.batch_size, cfg.eval.domain);
    let metrics = match &model {
        AnyModel::F32(m) => evaluate_in(m, &data, batch, domain)?,
        AnyModel::F64(m) => evaluate_in(m, &data, batch, domain)?,
    };
    let report = EvalReport {
        provenance: Provenance::new("eval", &cfg),
        model: model.config().clone(),
        checkpoint: ckpt_path,
        data: data_path,
        samples: data.len(),
        domain,
        metrics,
    };
    out.write_json("eval.json", &report)?;
    println!("{} on {} samples: NMSE {:.3} dB, rho {:.5}", report.model.variant, report.samples, metrics.nmse_db, metrics.rho);
    Ok(())
}

#[derive(Serialize)]
struct FlopsFile<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    report: &'a ComplexityReport,
}

pub fn flops(args: FlopsArgs) -> Result<()> {
    let mut cfg = config::load_or_default(args.common.config.as_deref())?;
    if args.checkpoint.is_some() {
        cfg.paths.checkpoint = args.checkpoint;
    }
    let model_cfg = match &cfg.paths.checkpoint {
        Some(p) => load_model(p)?.config().clone(),
        None => {
            if args.variant.is_some() {
                cfg.model.variant = args.variant;
            }
            if args.gamma.is_some() {
                cfg.model.gamma = args.gamma;
            }
            if args.c1.is_some() {
                cfg.model.c1 = args.c1;
            }
            if args.c0.is_some() {
                cfg.model.c0 = args.c0;
            }
            if args.mlp_ratio.is_some() {
                cfg.model.mlp_ratio = args.mlp_ratio;
            }
            cfg.model.resolve(Variant::Neft, 16, DEFAULT_INPUT)?
        }
    };
    let report = complexity_for(&model_cfg)?;
    let out = OutDir::prepare(&resolve_out(args.common.out, &mut cfg, "flops"), args.common.force)?;
    out.write_json("flops.json", &FlopsFile { provenance: Provenance::new("flops", &cfg), report: &report })?;
    let text = report.to_text();
    out.write_text("flops.txt", &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct AttentionEntry {
    file: String,
    part: Part,
    stage: usize,
    block: usize,
    head: usize,
    tokens: usize,
}

#[derive(Serialize)]
struct AttentionIndex {
    #[serde(flatten)]
    provenance: Provenance,
    model: NeftConfig,
    sample_index: usize,
    maps: Vec<AttentionEntry>,
}

pub fn export_attn(args: ExportAttnArgs) -> Result<()> {
    let mut cfg = config::load_or_default(args.common.config.as_deref())?;
    if args.checkpoint.is_some() {
        cfg.paths.checkpoint = args.checkpoint;
    }
    if args.data.is_some() {
        cfg.paths.data = args.data;
    }
    if let Some(i) = args.sample_index {
        cfg.eval.sample_index = i;
    }
    let model = load_model(cfg.paths.require(&cfg.paths.checkpoint, "--checkpoint")?)?;
    let data = load_data(cfg.paths.require(&cfg.paths.data, "--data")?)?;
    check_fits(model.config(), &data)?;
    let index = cfg.eval.sample_index;
    if index >= data.len() {
        return Err(usage(format!("--sample-index {index} is out of range for {} samples", data.len())));
    }
    let out = OutDir::prepare(&resolve_out(args.common.out, &mut cfg, "export-attn"), args.common.force)?;
    let provenance = Provenance::new("export-attn", &cfg);
    let maps = match &model {
        AnyModel::F32(m) => write_maps(m, &data, index, &out, &provenance)?,
        AnyModel::F64(m) => write_maps(m, &data, index, &out, &provenance)?,
    };
    println!("wrote {} attention maps for sample {index}", maps.len());
    out.write_json("attention.json", &AttentionIndex { provenance, model: model.config().clone(), sample_index: index, maps })?;
    Ok(())
}

fn write_maps<T: Element>(model: &Model<T>, data: &ChannelDataset, index: usize, out: &OutDir, provenance: &Provenance) -> Result<Vec<AttentionEntry>> {
    let inference = model.infer(&data.batch::<T>(&[index]))?;
    let mut entries = Vec::new();
    for (rec, maps) in &inference.attention {
        let n = rec.tokens;
        let header: Vec<String> = std::iter::once("query".to_string()).chain((0..n).map(|k| format!("k{k}"))).collect();
        for head in 0..rec.heads {
            let part = match rec.part {
                Part::Encoder => "encoder",
                Part::Decoder => "decoder",
            };
            let file = format!("attn_{part}_stage{}_block{}_head{head}.csv", rec.stage, rec.block);
            let base = head * n * n;
            let rows: Vec<Vec<String>> = (0..n)
                .map(|q| std::iter::once(q.to_string()).chain((0..n).map(|k| maps.data()[base + q * n + k].to_string())).collect())
                .collect();
            out.write_csv(&file, provenance, &header, &rows)?;
            entries.push(AttentionEntry { file, part: rec.part, stage: rec.stage, block: rec.block, head, tokens: n });
        }
    }
    Ok(entries)
}

struct Row {
    label: String,
    gamma: usize,
    nmse_db: Option<f64>,
    rho: Option<f64>,
    params: u64,
    flops: u64,
    encoder_flops: u64,
    source: String,
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let mut cfg = config::load_or_default(args.common.config.as_deref())?;
    if !args.reports.is_empty() {
        cfg.paths.reports = args.reports;
    }
    if cfg.paths.reports.is_empty() {
        return Err(usage("pass at least one report with --reports"));
    }
    let mut rows = Vec::new();
    for path in &cfg.paths.reports {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let r: ExperimentReport =
            serde_json::from_str(&text).map_err(|e| usage(format!("{} is not a train or distill report: {e}", path.display())))?;
        let m = r.final_metrics.metrics;
        rows.push(Row {
            label: r.label(),
            gamma: r.model.gamma,
            nmse_db: m.map(|m| m.nmse_db),
            rho: m.map(|m| m.rho),
            params: r.param_count,
            flops: r.flops.total,
            encoder_flops: r.flops.encoder,
            source: path.display().to_string(),
        });
    }
    rows.sort_by(|a, b| a.gamma.cmp(&b.gamma).then_with(|| a.label.cmp(&b.label)).then_with(|| a.source.cmp(&b.source)));
    let out = OutDir::prepare(&resolve_out(args.common.out, &mut cfg, "compare"), args.common.force)?;
    let provenance = Provenance::new("compare", &cfg);

    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    let header: Vec<String> = ["model", "gamma", "nmse_db", "rho", "params", "flops", "encoder_flops", "report"].map(String::from).to_vec();
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.gamma.to_string(),
                opt(r.nmse_db),
                opt(r.rho),
                r.params.to_string(),
                r.flops.to_string(),
                r.encoder_flops.to_string(),
                r.source.clone(),
            ]
        })
        .collect();
    out.write_csv("compare.csv", &provenance, &header, &csv_rows)?;

    let cells: Vec<[String; 7]> = std::iter::once(["Model", "gamma", "NMSE (dB)", "rho (%)", "Params", "FLOPs", "Enc. FLOPs"].map(String::from))
        .chain(rows.iter().map(|r| {
            [
                r.label.clone(),
                r.gamma.to_string(),
                r.nmse_db.map_or("-".into(), |v| format!("{v:.2}")),
                r.rho.map_or("-".into(), |v| format!("{:.2}", 100.0 * v)),
                group(r.params),
                group(r.flops),
                group(r.encoder_flops),
            ]
        }))
        .collect();
    let widths: Vec<usize> = (0..7).map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut text = String::new();
    for (i, r) in cells.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
        if i == 0 {
            text.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            text.push('\n');
        }
    }
    out.write_text("compare.txt", &text)?;
    print!("{text}");
    Ok(())
}
