use neft_core::models::{ForwardMode, Model, NeftConfig, Variant};
use neft_tensor::{grad_check, Tape, Tensor, Var};

fn input(shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| 0.5 + 0.4 * ((i as f64) * 0.731).sin())
}

/// Perturbs every parameter (including zero-initialized tables and biases)
/// so no gradient is trivially zero.
fn jittered(cfg: &NeftConfig) -> Model<f64> {
    let mut m = Model::<f64>::build(cfg).unwrap();
    for (k, (_, t)) in m.params_mut().iter_mut().enumerate() {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += 0.05 * (((i * 31 + k * 17) % 23) as f64 / 11.0 - 1.0);
        }
    }
    m
}

fn check_model(model: &Model<f64>, batch: usize, mode: ForwardMode) {
    let mut shape = vec![batch];
    shape.extend(model.config().input_shape);
    let x = input(&shape);
    let inputs: Vec<Tensor<f64>> = model.params().values().cloned().collect();
    let f = |tape: &mut Tape<f64>, vars: &[Var]| {
        let xv = tape.constant(&x);
        let pass = model.forward_with_params(tape, xv, mode, vars)
            .map_err(|e| neft_tensor::TensorError::Contract(e.to_string()))?;
        tape.mse(pass.reconstruction, xv)
    };
    let report = grad_check(f, &inputs, 1e-5, 1e-4).unwrap();
    assert!(report.passed(), "max rel err {:.3e} at {:?}", report.max_rel_err, report.worst);
}

#[test]
fn neft_tiny_matches_finite_differences() {
    let cfg = NeftConfig::tiny();
    check_model(&jittered(&cfg), 2, ForwardMode::TRAIN);
}

#[test]
fn hybrid_tiny_matches_finite_differences() {
    let mut cfg = NeftConfig::preset(Variant::Hybrid, 64);
    cfg.c1 = 4;
    cfg.heads_per_stage = [2, 2];
    cfg.c0 = Some(8);
    cfg.input_shape = [2, 16, 16];
    check_model(&jittered(&cfg), 3, ForwardMode::TRAIN);
}
