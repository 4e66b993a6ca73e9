//! Acceptance checks. Prints one `criterion N ... PASS|FAIL` line per
//! criterion and exits non-zero if any failed.
//!
//! `cargo test --test acceptance -- 3 10` runs a subset.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use neft_core::channel::*;
use neft_core::complexity::{complexity_for, conv_flops, group, msa_flops, wmsa_flops};
use neft_core::distill::{distill_train, KdPreset};
use neft_core::metrics::{cosine_similarity, nmse};
use neft_core::models::*;
use neft_core::schedule::cosine_lr;
use neft_core::trainer::{evaluate, train, TrainConfig};
use neft_tensor::{grad_check, BatchNormMode, GradCheckReport, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

// Desk-scale budgets shared by criteria 7 and 8.
const DESK_TRAIN: usize = 2000;
const DESK_VAL: usize = 500;
const DESK_EPOCHS: usize = 30;
const DESK_LR: f64 = 1e-3;
const DESK_BATCH: usize = 32;
const KD_SEEDS: [u64; 3] = [0, 1, 2];

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn weighted_sum(t: &mut Tape<f64>, y: Var, seed: u64) -> neft_tensor::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = t.shape(y).to_vec();
    let w = t.constant(&rand_tensor(&mut rng, &shape));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn op_checks() -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn(&mut Tape<f64>, &[Var]) -> neft_tensor::Result<Var>, inputs: Vec<Tensor<f64>>| {
        out.push((name, grad_check(f, &inputs, FD_STEP, FD_TOL).unwrap()));
    };
    let (a, b) = (rand_tensor(&mut rng, &[2, 3, 4]), rand_tensor(&mut rng, &[4, 3]));
    run("matmul", &|t, v| { let y = t.matmul(v[0], v[1])?; weighted_sum(t, y, 1) }, vec![a.clone(), b]);
    let b = rand_tensor(&mut rng, &[4]);
    run("add", &|t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y, 2) }, vec![a.clone(), b.clone()]);
    run("sub", &|t, v| { let y = t.sub(v[0], v[1])?; weighted_sum(t, y, 3) }, vec![a.clone(), b.clone()]);
    run("mul", &|t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y, 4) }, vec![a.clone(), b]);
    run("scale", &|t, v| { let y = t.scale(v[0], -2.5); weighted_sum(t, y, 5) }, vec![a.clone()]);
    run("gelu", &|t, v| { let y = t.gelu(v[0]); weighted_sum(t, y, 6) }, vec![a.clone()]);
    let away_from_kink = Tensor::from_fn(&[2, 3, 4], |i| if i % 2 == 0 { 0.3 + 0.1 * i as f64 } else { -0.2 - 0.1 * i as f64 });
    run("relu", &|t, v| { let y = t.relu(v[0]); weighted_sum(t, y, 7) }, vec![away_from_kink]);
    run("sum", &|t, v| Ok(t.sum(v[0])), vec![a.clone()]);
    run("mean", &|t, v| Ok(t.mean(v[0])), vec![a.clone()]);
    run("softmax", &|t, v| { let y = t.softmax(v[0], 2)?; weighted_sum(t, y, 8) }, vec![a.clone()]);
    let (g, bb) = (rand_tensor(&mut rng, &[4]), rand_tensor(&mut rng, &[4]));
    run("layer_norm", &|t, v| { let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?; weighted_sum(t, y, 9) }, vec![a.clone(), g, bb]);
    let x4 = rand_tensor(&mut rng, &[2, 3, 2, 2]);
    let (g, bb) = (rand_tensor(&mut rng, &[3]), rand_tensor(&mut rng, &[3]));
    run(
        "batch_norm/train",
        &|t, v| { let y = t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train, 1e-5)?; weighted_sum(t, y, 10) },
        vec![x4.clone(), g.clone(), bb.clone()],
    );
    run(
        "batch_norm/eval",
        &|t, v| {
            let mode = BatchNormMode::Eval { running_mean: &[0.1, -0.2, 0.0], running_var: &[0.5, 1.5, 2.0] };
            let y = t.batch_norm(v[0], v[1], v[2], mode, 1e-5)?;
            weighted_sum(t, y, 11)
        },
        vec![x4, g, bb],
    );
    let (x, k, cb) = (rand_tensor(&mut rng, &[2, 2, 5, 5]), rand_tensor(&mut rng, &[3, 2, 3, 3]), rand_tensor(&mut rng, &[3]));
    run("conv2d", &|t, v| { let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?; weighted_sum(t, y, 12) }, vec![x, k, cb]);
    let (x, k, cb) = (rand_tensor(&mut rng, &[2, 2, 2, 3]), rand_tensor(&mut rng, &[2, 3, 2, 2]), rand_tensor(&mut rng, &[3]));
    run("conv_transpose2d", &|t, v| { let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), 2)?; weighted_sum(t, y, 13) }, vec![x, k, cb]);
    run("reshape", &|t, v| { let y = t.reshape(v[0], &[6, 4])?; weighted_sum(t, y, 14) }, vec![a.clone()]);
    run("permute", &|t, v| { let y = t.permute(v[0], &[2, 0, 1])?; weighted_sum(t, y, 15) }, vec![a.clone()]);
    let idx: Vec<usize> = (0..48).map(|i| (i * 7) % 24).collect();
    run("gather", &|t, v| { let y = t.gather(v[0], idx.clone(), &[48])?; weighted_sum(t, y, 16) }, vec![a.clone()]);
    let b = rand_tensor(&mut rng, &[2, 3, 4]);
    run("mse", &|t, v| t.mse(v[0], v[1]), vec![a, b]);
    out
}

/// Perturbs every parameter so zero-initialized tables get non-trivial gradients.
fn jittered(cfg: &NeftConfig) -> Model<f64> {
    let mut m = Model::<f64>::build(cfg).unwrap();
    for (k, (_, t)) in m.params_mut().iter_mut().enumerate() {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += 0.05 * (((i * 31 + k * 17) % 23) as f64 / 11.0 - 1.0);
        }
    }
    m
}

fn model_check(model: &Model<f64>, batch: usize) -> GradCheckReport {
    let mut shape = vec![batch];
    shape.extend(model.config().input_shape);
    let x = Tensor::from_fn(&shape, |i| 0.5 + 0.4 * ((i as f64) * 0.731).sin());
    let inputs: Vec<Tensor<f64>> = model.params().values().cloned().collect();
    let f = |tape: &mut Tape<f64>, vars: &[Var]| {
        let xv = tape.constant(&x);
        let pass = model
            .forward_with_params(tape, xv, ForwardMode::TRAIN, vars)
            .map_err(|e| neft_tensor::TensorError::Contract(e.to_string()))?;
        tape.mse(pass.reconstruction, xv)
    };
    grad_check(f, &inputs, FD_STEP, FD_TOL).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let ops = op_checks();
    let (worst_op, worst_err) = ops.iter().map(|(n, r)| (*n, r.max_rel_err)).fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let failed: Vec<&str> = ops.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| *n).collect();
    let tiny = jittered(&NeftConfig::tiny());
    let model = model_check(&tiny, 2);
    let elapsed = start.elapsed();
    let pass = failed.is_empty() && model.passed() && elapsed < Duration::from_secs(120);
    let detail = format!(
        "{} ops, worst {worst_op} {worst_err:.2e}, failed {failed:?}; NEFT-tiny (c1 8, 2 heads, {} params) max rel err {:.2e}; {:.1}s",
        ops.len(),
        tiny.param_count(),
        model.max_rel_err,
        elapsed.as_secs_f64()
    );
    (pass, detail)
}

fn criterion_2() -> Outcome {
    let neft = complexity_for(&NeftConfig::preset(Variant::Neft, 16)).unwrap();
    let global = neft.attention_analysis.global_total;
    let out = Command::new(env!("CARGO_BIN_EXE_neft")).args(["flops", "--out"]).arg(tempfile::tempdir().unwrap().path().join("f")).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let units = [
        ("W-MSA 16x16x40 M=4", wmsa_flops(16, 16, 40, 4).unwrap(), 4 * 256 * 1600 + 2 * 16 * 256 * 40),
        ("MSA 8x8x40", msa_flops(8, 8, 40), 4 * 64 * 1600 + 2 * 64 * 64 * 40),
        ("MSA 4x4x40", msa_flops(4, 4, 40), 4 * 16 * 1600 + 2 * 16 * 16 * 40),
        ("conv 16x16x8 k3 cin2", conv_flops(16, 16, 8, 3, 3, 2), 16 * 16 * 8 * 9 * 2),
    ];
    let expected = [1_966_080, 737_280, 122_880, 36_864];
    let units_ok = units.iter().zip(expected).all(|(&(_, got, oracle), want)| got == oracle && got == want);
    let pass = global == 860_160 && out.status.success() && stdout.contains("860,160") && units_ok;
    let listed: Vec<String> = units.iter().map(|(n, v, _)| format!("{n} = {}", group(*v))).collect();
    (pass, format!("encoder attention {} (CLI prints it: {}); {}", group(global), stdout.contains("860,160"), listed.join(", ")))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut origin_exact, mut worst_mag) = (0.0f64, true, 0.0f64);
    for _ in 0..1000 {
        let n1 = rng.gen_range(1..64);
        let n2 = rng.gen_range(1..8);
        let lambda = rng.gen_range(1e-3..1e-1);
        let g = ArrayGeometry::new(n1, n2, lambda * rng.gen_range(0.1..1.0), lambda).unwrap();
        let p = UePlacement::new(rng.gen_range(0.05..100.0), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)).unwrap();
        let (i, j) = (rng.gen_range(0..n1), rng.gen_range(0..n2));
        let bs = (0.0, i as f64 * g.spacing);
        let ue = (p.r * p.theta.cos() - j as f64 * g.spacing * p.phi.sin(), p.r * p.theta.sin() + j as f64 * g.spacing * p.phi.cos());
        let want = ((ue.0 - bs.0).powi(2) + (ue.1 - bs.1).powi(2)).sqrt();
        let got = element_distance(&g, &p, i, j).unwrap();
        worst = worst.max(((got - want) / want).abs());
        origin_exact &= element_distance(&g, &p, 0, 0).unwrap() == p.r;
        let h = channel_matrix(&g, &p).unwrap();
        for b in 0..n2 {
            for a in 0..n1 {
                worst_mag = worst_mag.max((h.at(b, a).norm() * element_distance(&g, &p, a, b).unwrap() - 1.0).abs());
            }
        }
    }
    let g = ArrayGeometry::default();
    for p in &sample_dataset(&g, DEFAULT_R_BOUNDS, 20, 4).unwrap().placements {
        let h = channel_matrix(&g, p).unwrap();
        for a in 0..g.n1 {
            worst_mag = worst_mag.max((h.at(0, a).norm() * element_distance(&g, p, a, 0).unwrap() - 1.0).abs());
        }
    }
    let pass = worst < 1e-12 && origin_exact && worst_mag < 1e-12;
    (pass, format!("1000 configurations: max rel err {worst:.2e}, d(0,0) == r {origin_exact}, max ||h| r - 1| {worst_mag:.2e}"))
}

fn criterion_4() -> Outcome {
    let x = Tensor::<f32>::from_fn(&[2, 2, 32, 32], |i| ((i * 37 % 101) as f32) / 100.0);
    let mut lines = Vec::new();
    let mut pass = true;
    for (gamma, k) in [(16, 128), (32, 64), (64, 32)] {
        let m = Model::<f32>::build(&NeftConfig::preset(Variant::Neft, gamma)).unwrap();
        let inf = m.infer(&x).unwrap();
        let mut tokens: Vec<usize> = inf.attention.iter().filter(|(r, _)| r.part == Part::Encoder).map(|(r, _)| r.tokens).collect();
        tokens.dedup();
        let ok = inf.codeword.shape() == [2, k] && inf.reconstruction.shape() == [2, 2, 32, 32] && tokens == [64, 16];
        pass &= ok;
        lines.push(format!("gamma {gamma}: codeword {}, output {:?}, tokens {tokens:?}", inf.codeword.shape()[1], &inf.reconstruction.shape()[1..]));
    }
    (pass, lines.join("; "))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs: Vec<Tensor<f64>> = (0..4).map(|_| Tensor::from_fn(&[25, 2, 32, 32], |_| rng.gen::<f64>())).collect();
    let (mut worst, mut rows, mut maps) = (0.0f64, 0usize, 0usize);
    for variant in Variant::ALL {
        let m = Model::<f64>::build(&NeftConfig::preset(variant, 16).with_seed(5)).unwrap();
        for x in &inputs {
            for (rec, a) in m.infer(x).unwrap().attention {
                maps += 1;
                for row in a.data().chunks_exact(rec.tokens) {
                    worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                    rows += 1;
                }
            }
        }
    }
    (worst < 1e-6, format!("{rows} rows over {maps} attention tensors (4 variants, 100 inputs), max |sum - 1| {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let data = sample_dataset(&ArrayGeometry::default(), DEFAULT_R_BOUNDS, 32, 7).unwrap();
    let cfg = TrainConfig { epochs: 2000, lr_max: 3e-3, batch_size: 32, early_stop: None, max_steps: Some(500), ..Default::default() };
    let out = train(Model::<f32>::build(&NeftConfig::preset(Variant::Neft, 16)).unwrap(), &data, &data, &cfg).unwrap();
    let db = evaluate(&out.model, &data, 32).unwrap().nmse_db;
    let elapsed = start.elapsed();
    let pass = db <= -30.0 && out.report.steps <= 500 && elapsed < Duration::from_secs(600);
    (pass, format!("train NMSE {db:.2} dB after {} steps (need <= -30 dB); {:.0}s", out.report.steps, elapsed.as_secs_f64()))
}

fn desk_data() -> (ChannelDataset, ChannelDataset) {
    let g = ArrayGeometry::default();
    (sample_dataset(&g, DEFAULT_R_BOUNDS, DESK_TRAIN, 1).unwrap(), sample_dataset(&g, DEFAULT_R_BOUNDS, DESK_VAL, 2).unwrap())
}

fn desk_config() -> TrainConfig {
    TrainConfig { epochs: DESK_EPOCHS, lr_max: DESK_LR, batch_size: DESK_BATCH, early_stop: None, ..Default::default() }
}

fn train_desk(variant: Variant, data: &(ChannelDataset, ChannelDataset)) -> (Model<f32>, f64, Duration) {
    let start = Instant::now();
    let out = train(Model::<f32>::build(&NeftConfig::preset(variant, 16)).unwrap(), &data.0, &data.1, &desk_config()).unwrap();
    let db = evaluate(&out.model, &data.1, 200).unwrap().nmse_db;
    (out.model, db, start.elapsed())
}

fn criterion_7(data: &(ChannelDataset, ChannelDataset), teacher: &mut Option<Model<f32>>) -> Outcome {
    let (neft, neft_db, neft_t) = train_desk(Variant::Neft, data);
    *teacher = Some(neft);
    let (_, hybrid_db, hybrid_t) = train_desk(Variant::Hybrid, data);
    let limit = Duration::from_secs(1800);
    let pass = neft_db <= -10.0 && hybrid_db <= -8.0 && neft_t < limit && hybrid_t < limit;
    let detail = format!(
        "NEFT {neft_db:.2} dB in {:.0}s (need <= -10), Hybrid {hybrid_db:.2} dB in {:.0}s (need <= -8); {DESK_TRAIN}/{DESK_VAL} samples, {DESK_EPOCHS} epochs",
        neft_t.as_secs_f64(),
        hybrid_t.as_secs_f64()
    );
    (pass, detail)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_8(data: &(ChannelDataset, ChannelDataset), teacher: &mut Option<Model<f32>>) -> Outcome {
    if teacher.is_none() {
        *teacher = Some(train_desk(Variant::Neft, data).0);
    }
    let teacher = teacher.as_ref().unwrap();
    let mut medians = Vec::new();
    for preset in KdPreset::ALL {
        let runs: Vec<f64> = KD_SEEDS
            .iter()
            .map(|&s| {
                let student = Model::<f32>::build(&NeftConfig::preset(Variant::Compact, 16).with_seed(100 + s)).unwrap();
                let cfg = TrainConfig { seed: s, ..desk_config() };
                let out = distill_train(teacher, student, &data.0, &data.1, preset.lambdas(), &cfg).unwrap();
                evaluate(&out.model, &data.1, 200).unwrap().nmse_db
            })
            .collect();
        medians.push((preset.name(), median(runs)));
    }
    let (full, only, none) = (medians[0].1, medians[1].1, medians[2].1);
    let pass = full <= only && only <= none && full <= none - 0.3;
    let listed: Vec<String> = medians.iter().map(|(n, v)| format!("{n} {v:.2} dB")).collect();
    (pass, format!("median val NMSE over {} seeds: {} (need ordered, full at least 0.3 dB below w/o-KD)", KD_SEEDS.len(), listed.join(", ")))
}

fn criterion_9() -> Outcome {
    let neft = complexity_for(&NeftConfig::preset(Variant::Neft, 16)).unwrap();
    let compact = complexity_for(&NeftConfig::preset(Variant::Compact, 16)).unwrap();
    let hybrid = complexity_for(&NeftConfig::preset(Variant::Hybrid, 16)).unwrap();
    let reduction = 1.0 - compact.total_params as f64 / neft.total_params as f64;
    let enc_ratio = hybrid.encoder_flops as f64 / neft.encoder_flops as f64;
    let pass = (0.15..=0.35).contains(&reduction) && enc_ratio < 0.5;
    let detail = format!(
        "params NEFT {} vs Compact {} ({:.1}% fewer); encoder FLOPs Hybrid {} vs NEFT {} (ratio {enc_ratio:.3})",
        group(neft.total_params),
        group(compact.total_params),
        100.0 * reduction,
        group(hybrid.encoder_flops),
        group(neft.encoder_flops)
    );
    (pass, detail)
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h: Vec<f64> = (0..2048).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let hh: Vec<f64> = h.iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
    let zero = nmse(&h, &vec![0.0; h.len()]).unwrap();
    let base = nmse(&h, &hh).unwrap();
    let mut scale_err = 0.0f64;
    for s in [1e-3, 0.5, 2.0, 7.3, -4.0, 1e3] {
        let a: Vec<f64> = h.iter().map(|v| v * s).collect();
        let b: Vec<f64> = hh.iter().map(|v| v * s).collect();
        scale_err = scale_err.max((nmse(&a, &b).unwrap() - base).abs());
    }
    let doubled: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
    let rho = cosine_similarity(&h, &doubled, 2048).unwrap();
    let (lr_max, lr_min, total) = (1e-3, 1e-5, 200);
    let start = cosine_lr(0, total, lr_max, lr_min).unwrap();
    let end = cosine_lr(total, total, lr_max, lr_min).unwrap();
    let mid = cosine_lr(total / 2, total, lr_max, lr_min).unwrap();
    let mid_want = lr_min + 0.5 * (lr_max - lr_min);
    let pass = zero == 0.0 && scale_err < 1e-9 && (rho - 1.0).abs() < 1e-12 && start == lr_max && end == lr_min && (mid - mid_want).abs() <= 1e-15 * lr_max;
    let detail = format!(
        "nmse(h, 0) = {zero} dB; scale drift {scale_err:.1e} dB; rho(h, 2h) = {rho}; lr(0) = {start:e}, lr(T) = {end:e}, lr(T/2) = {mid:e}"
    );
    (pass, detail)
}

fn neft_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_neft")).args(args).env_remove("NEFT_OUT_DIR").output().unwrap().status.success()
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (train_set, val_set) = (p("train.bin"), p("val.bin"));
    let base: Vec<String> = ["--data", &train_set, "--val", &val_set, "--epochs", "2", "--batch-size", "4", "--lr", "1e-3", "--seed", "4"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let teacher_ckpt = format!("{}/checkpoint.ckpt", p("train"));
    let commands: Vec<(&str, Vec<String>, Vec<&str>)> = vec![
        ("gen-data", vec!["gen-data", "--n1", "256", "--count", "8", "--seed", "1", "--out", &train_set].into_iter().map(String::from).collect(), vec![]),
        ("gen-data", vec!["gen-data", "--n1", "256", "--count", "4", "--seed", "2", "--out", &val_set].into_iter().map(String::from).collect(), vec![]),
        ("train", [vec!["train".into(), "--c1".into(), "8".into(), "--out".into(), p("train")], base.clone()].concat(), vec!["report.json", "curves.csv", "checkpoint.ckpt"]),
        (
            "distill",
            [vec!["distill".into(), "--teacher".into(), teacher_ckpt.clone(), "--c1".into(), "4".into(), "--out".into(), p("distill")], base.clone()].concat(),
            vec!["report.json", "distill.jsonl", "checkpoint.ckpt"],
        ),
        ("eval", vec!["eval".into(), "--checkpoint".into(), teacher_ckpt, "--data".into(), val_set.clone(), "--out".into(), p("eval")], vec!["eval.json"]),
    ];
    let mut compared = 0;
    for (name, args, files) in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        if !neft_cli(&args) {
            return (false, format!("{name} failed"));
        }
        let out = Path::new(args[args.iter().position(|a| *a == "--out").unwrap() + 1]).to_path_buf();
        let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
        let mut again = args.clone();
        again.push("--force");
        if !neft_cli(&again) {
            return (false, format!("{name} re-run failed"));
        }
        for (f, bytes) in files.iter().zip(first) {
            if fs::read(out.join(f)).unwrap() != bytes {
                return (false, format!("{name}: {f} differs between runs"));
            }
            compared += 1;
        }
    }
    (true, format!("train, distill and eval re-runs byte-identical ({compared} artifacts compared)"))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let titles = [
        "gradient correctness",
        "FLOPs exactness",
        "geometry oracle",
        "shape pipeline",
        "attention normalization",
        "overfit sanity",
        "desk-scale learning",
        "KD ordering",
        "efficiency ratios",
        "metric and scheduler exactness",
        "determinism",
    ];
    let mut teacher = None;
    let mut desk = None;
    let mut failures = 0;
    for n in 1..=11 {
        if !run(n) {
            continue;
        }
        let (pass, detail) = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(desk.get_or_insert_with(desk_data), &mut teacher),
            8 => criterion_8(desk.get_or_insert_with(desk_data), &mut teacher),
            9 => criterion_9(),
            10 => criterion_10(),
            _ => criterion_11(),
        };
        failures += usize::from(!pass);
        println!("criterion {n:>2} {:<31} {}  {detail}", titles[n - 1], if pass { "PASS" } else { "FAIL" });
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
