//! Multi-level knowledge distillation: a frozen teacher supervises the
//! student through its reconstruction, attention maps and codeword.

use neft_tensor::{Element, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelDataset;
use crate::error::{NeftError, Result};
use crate::models::{ForwardPass, Inference, Model};
use crate::trainer::{train_with, Objective, TrainConfig, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lambdas {
    /// Reconstruction alignment.
    pub ra: f64,
    /// Attention alignment.
    pub aa: f64,
    /// Codeword alignment.
    pub ca: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        KdPreset::Full.lambdas()
    }
}

impl Lambdas {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.ra), ("lambda2", self.aa), ("lambda3", self.ca)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(NeftError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdPreset {
    Full,
    /// Reconstruction alignment only.
    OnlyRecon,
    WithoutKd,
}

impl KdPreset {
    pub const ALL: [KdPreset; 3] = [KdPreset::Full, KdPreset::OnlyRecon, KdPreset::WithoutKd];

    pub fn lambdas(self) -> Lambdas {
        match self {
            KdPreset::Full => Lambdas { ra: 0.3, aa: 2.0, ca: 2.0 },
            KdPreset::OnlyRecon => Lambdas { ra: 0.3, aa: 0.0, ca: 0.0 },
            KdPreset::WithoutKd => Lambdas { ra: 0.0, aa: 0.0, ca: 0.0 },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KdPreset::Full => "full",
            KdPreset::OnlyRecon => "only_recon",
            KdPreset::WithoutKd => "without_kd",
        }
    }
}

impl std::str::FromStr for KdPreset {
    type Err = NeftError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(KdPreset::Full),
            "only_recon" | "onlyrecon" => Ok(KdPreset::OnlyRecon),
            "without_kd" | "w/o_kd" | "none" => Ok(KdPreset::WithoutKd),
            _ => Err(NeftError::Config(format!("unknown KD preset `{s}` (full, only_recon, without_kd)"))),
        }
    }
}

/// Teacher-side supervision for one batch.
#[derive(Clone, Debug)]
pub struct AlignmentBundle<T: Element> {
    pub reconstruction: Tensor<T>,
    pub codeword: Tensor<T>,
    /// One `[B, heads, N, N]` map stack per attention layer, in model order.
    pub attention: Vec<Tensor<T>>,
}

impl<T: Element> From<Inference<T>> for AlignmentBundle<T> {
    fn from(inf: Inference<T>) -> Self {
        AlignmentBundle {
            reconstruction: inf.reconstruction,
            codeword: inf.codeword,
            attention: inf.attention.into_iter().map(|(_, t)| t).collect(),
        }
    }
}

fn same_shape<T: Element>(tape: &Tape<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(NeftError::Compatibility(format!(
            "{what}: teacher shape {:?} differs from student shape {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

/// Mean squared difference between reconstructions.
pub fn tape_loss_ra<T: Element>(tape: &mut Tape<T>, teacher: Var, student: Var) -> Result<Var> {
    if tape.shape(teacher) != tape.shape(student) {
        return Err(NeftError::Dimension(format!(
            "reconstruction shapes differ: {:?} vs {:?}",
            tape.shape(teacher),
            tape.shape(student)
        )));
    }
    Ok(tape.mse(student, teacher)?)
}

/// Layer mean of the head mean of squared Frobenius distances, averaged over the batch.
pub fn tape_loss_aa<T: Element>(tape: &mut Tape<T>, teacher: &[Var], student: &[Var]) -> Result<Var> {
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(NeftError::Compatibility(format!(
            "attention layer counts differ: teacher {} vs student {}",
            teacher.len(),
            student.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (l, (&t, &s)) in teacher.iter().zip(student).enumerate() {
        same_shape(tape, t, s, &format!("attention layer {l}"))?;
        // mse averages over B * heads * N * N; N^2 turns it into the per-map squared norm
        let n = *tape.shape(s).last().expect("attention maps have rank >= 2");
        let m = tape.mse(s, t)?;
        let term = tape.scale(m, T::cast((n * n) as f64));
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let sum = total.expect("at least one layer");
    Ok(tape.scale(sum, T::cast(1.0 / teacher.len() as f64)))
}

/// `(1 / N_d) ||z_T - z_S||^2`, averaged over the batch.
pub fn tape_loss_ca<T: Element>(tape: &mut Tape<T>, teacher: Var, student: Var) -> Result<Var> {
    same_shape(tape, teacher, student, "codeword")?;
    Ok(tape.mse(student, teacher)?)
}

/// `rec + l1 ra + l2 aa + l3 ca`; terms with a zero weight are left out.
pub fn tape_total_loss<T: Element>(tape: &mut Tape<T>, rec: Var, ra: Var, aa: Var, ca: Var, lambdas: &Lambdas) -> Result<Var> {
    let mut total = rec;
    for (w, v) in [(lambdas.ra, ra), (lambdas.aa, aa), (lambdas.ca, ca)] {
        if w != 0.0 {
            let t = tape.scale(v, T::cast(w));
            total = tape.add(total, t)?;
        }
    }
    Ok(total)
}

fn scalar_loss<T: Element>(f: impl FnOnce(&mut Tape<T>) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = f(&mut tape)?;
    Ok(tape.scalar(v)?.as_f64())
}

pub fn loss_ra<T: Element>(teacher: &Tensor<T>, student: &Tensor<T>) -> Result<f64> {
    scalar_loss(|tape| {
        let (t, s) = (tape.constant(teacher), tape.constant(student));
        tape_loss_ra(tape, t, s)
    })
}

pub fn loss_aa<T: Element>(teacher: &[Tensor<T>], student: &[Tensor<T>]) -> Result<f64> {
    scalar_loss(|tape| {
        let t: Vec<Var> = teacher.iter().map(|x| tape.constant(x)).collect();
        let s: Vec<Var> = student.iter().map(|x| tape.constant(x)).collect();
        tape_loss_aa(tape, &t, &s)
    })
}

pub fn loss_ca<T: Element>(teacher: &Tensor<T>, student: &Tensor<T>) -> Result<f64> {
    if teacher.shape() != student.shape() {
        return Err(NeftError::Compatibility(format!(
            "codeword lengths differ: teacher {:?} vs student {:?}",
            teacher.shape(),
            student.shape()
        )));
    }
    scalar_loss(|tape| {
        let (t, s) = (tape.constant(teacher), tape.constant(student));
        tape_loss_ca(tape, t, s)
    })
}

pub fn total_loss(rec: f64, ra: f64, aa: f64, ca: f64, lambdas: &Lambdas) -> f64 {
    rec + lambdas.ra * ra + lambdas.aa * aa + lambdas.ca * ca
}

/// Student objective with a frozen teacher run in evaluation mode on its own tape.
pub struct DistillObjective<'t, T: Element> {
    teacher: &'t Model<T>,
    lambdas: Lambdas,
}

impl<'t, T: Element> DistillObjective<'t, T> {
    pub fn new(teacher: &'t Model<T>, lambdas: Lambdas) -> Result<Self> {
        lambdas.validate()?;
        Ok(DistillObjective { teacher, lambdas })
    }
}

impl<T: Element> Objective<T> for DistillObjective<'_, T> {
    fn loss(&mut self, tape: &mut Tape<T>, batch: &Tensor<T>, input: Var, pass: &ForwardPass) -> Result<(Var, Vec<(&'static str, Var)>)> {
        let bundle = AlignmentBundle::from(self.teacher.infer(batch)?);
        let rec = tape.mse(pass.reconstruction, input)?;
        let t_rec = tape.constant(&bundle.reconstruction);
        let ra = tape_loss_ra(tape, t_rec, pass.reconstruction)?;
        let t_attn: Vec<Var> = bundle.attention.iter().map(|a| tape.constant(a)).collect();
        let s_attn: Vec<Var> = pass.attention.iter().map(|r| r.var).collect();
        let aa = tape_loss_aa(tape, &t_attn, &s_attn)?;
        let t_code = tape.constant(&bundle.codeword);
        let ca = tape_loss_ca(tape, t_code, pass.codeword)?;
        let total = tape_total_loss(tape, rec, ra, aa, ca, &self.lambdas)?;
        Ok((total, vec![("total", total), ("rec", rec), ("ra", ra), ("aa", aa), ("ca", ca)]))
    }
}

/// Trains `student` against a frozen `teacher`. The teacher is only read.
pub fn distill_train<T: Element>(
    teacher: &Model<T>,
    student: Model<T>,
    train_set: &ChannelDataset,
    val_set: &ChannelDataset,
    lambdas: Lambdas,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    student.config().check_alignment(teacher.config())?;
    let mut objective = DistillObjective::new(teacher, lambdas)?;
    train_with(student, train_set, val_set, cfg, &mut objective)
}
