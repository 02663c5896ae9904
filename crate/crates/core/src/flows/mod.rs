//! Degradation and restoration processes over latent clouds: Gaussian
//! diffusion, heat dissipation and flow matching.

mod ddpm;
mod fm;
mod heat;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Tape, Tensor, Var};
use crate::gnn::GnnError;

pub use ddpm::{
    ddpm_degrade, ddpm_generate, ddpm_loss, ddpm_loss_at, ddpm_step, egnn_restore_step, DdpmSchedule, EgnnRestorer,
    GcnRestorer,
};
pub use fm::{fm_generate, fm_interpolate, fm_loss, fm_loss_at, fm_target_velocity, integrate as fm_integrate, FlowField, SIGMA_MIN};
pub use heat::{heat_blur, heat_blur_var, heat_generate, heat_loss, heat_loss_at, HeatDeblurrer, HeatSchedule, KL_MEAN, KL_VAR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("step {t} outside 1..={total}")]
    StepOutOfRange { t: usize, total: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("empty input")]
    EmptyInput,
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Noise predictor for Gaussian diffusion: maps `s_t = [x_t ‖ h_t]` to `d_t`
/// of the same shape.
pub trait Restorer {
    fn restore(&self, tape: &mut Tape, s: Var) -> Result<Var, FlowError>;
}

/// Heat model: predicts the residual `Δx` that undoes one blur step.
pub trait Deblurrer {
    /// Residual taking blur level `t` to `t − 1`; `s = t / T`.
    fn delta(&self, tape: &mut Tape, x: Var, s: f64) -> Result<Var, FlowError>;
}

/// Flow-matching vector field `v(t, x)`.
pub trait VelocityField {
    fn velocity(&self, tape: &mut Tape, t: f64, x: Var) -> Result<Var, FlowError>;
}

pub(crate) fn standard_normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.sample(StandardNormal);
    }
    t
}

/// Closed-form `KL(N(m̂, v̂) ‖ N(mean, var))` where `m̂`, `v̂` are the mean and
/// population variance of all entries of `x`.
pub fn gaussian_kl(tape: &mut Tape, x: Var, mean: f64, var: f64) -> Var {
    let m = tape.mean(x);
    let sq = tape.square(x);
    let m2 = tape.mean(sq);
    let msq = tape.square(m);
    let v = tape.sub(m2, msq).expect("scalars");
    let v = tape.offset(v, 1e-12);
    let log_ratio = tape.log(v);
    let log_ratio = tape.scale(log_ratio, -1.0);
    let log_ratio = tape.offset(log_ratio, var.ln());
    let shift = tape.offset(m, -mean);
    let shift = tape.square(shift);
    let num = tape.add(v, shift).expect("scalars");
    let num = tape.scale(num, 1.0 / var);
    let total = tape.add(log_ratio, num).expect("scalars");
    let total = tape.offset(total, -1.0);
    tape.scale(total, 0.5)
}

/// Affine per-column normalization fitted on training clouds. A scalar
/// standardizer uses one mean and deviation for every column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Column-wise mean and population deviation over all rows of `clouds`.
    pub fn per_column(clouds: &[Tensor]) -> Result<Self, FlowError> {
        let width = clouds.first().ok_or(FlowError::EmptyInput)?.cols();
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let mut count = 0usize;
        for c in clouds {
            if c.cols() != width {
                return Err(FlowError::ShapeMismatch {
                    left: vec![width],
                    right: c.shape().to_vec(),
                });
            }
            for r in 0..c.rows() {
                for (k, v) in c.row(r).iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            count += c.rows();
        }
        if count == 0 {
            return Err(FlowError::EmptyInput);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| floor_std((q / n - m * m).max(0.0).sqrt())).collect();
        Ok(Self { mean, std })
    }

    /// One mean and deviation pooled over every entry.
    pub fn scalar(clouds: &[Tensor]) -> Result<Self, FlowError> {
        let width = clouds.first().ok_or(FlowError::EmptyInput)?.cols();
        let all: Vec<f64> = clouds.iter().flat_map(|c| c.data().iter().copied()).collect();
        if all.is_empty() {
            return Err(FlowError::EmptyInput);
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self {
            mean: vec![mean; width],
            std: vec![floor_std(var.sqrt()); width],
        })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Tensor) -> Result<(), FlowError> {
        if x.rank() != 2 || x.cols() != self.width() {
            return Err(FlowError::ShapeMismatch {
                left: vec![self.width()],
                right: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor, FlowError> {
        self.check(x)?;
        let mut out = x.clone();
        let w = self.width();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[k % w]) / self.std[k % w];
        }
        Ok(out)
    }

    pub fn invert(&self, x: &Tensor) -> Result<Tensor, FlowError> {
        self.check(x)?;
        let mut out = x.clone();
        let w = self.width();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[k % w] + self.mean[k % w];
        }
        Ok(out)
    }
}

fn floor_std(s: f64) -> f64 {
    if s > 1e-8 {
        s
    } else {
        1.0
    }
}
