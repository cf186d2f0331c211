//! Dice-based task losses and the min-max task weighting.
//!
//! The combined energy is `E(λ) = λ·E1 + sqrt(1 - λ²)·E2`. For fixed task
//! losses it is concave in λ, and its maximizer has the closed form
//! `λ* = E1 / sqrt(E1² + E2²)`, so the heavier-failing task gets the larger
//! weight before each parameter step.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorGrid, Var};

pub const LAMBDA_MIN: f64 = 1e-4;
pub const LAMBDA_MAX: f64 = 1.0 - 1e-4;

/// Regularizer used by test oracles.
pub const DICE_EPS_EXACT: f64 = 1e-6;
/// Regularizer used during training.
pub const DICE_EPS_TRAIN: f64 = 1.0;

/// `(2·Σ y·ŷ + ε) / (Σ y + Σ ŷ + ε)`.
///
/// With `ε = 0` and both inputs empty the score is defined as 1.
pub fn dice<T: Scalar>(y: &[T], yhat: &[T], eps: T) -> Result<T> {
    if y.len() != yhat.len() {
        return Err(Error::Dimension(format!("dice: {} vs {} values", y.len(), yhat.len())));
    }
    if eps < T::zero() {
        return Err(Error::InvalidValue("dice: negative epsilon".into()));
    }
    let (mut inter, mut sy, mut sp) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in y.iter().zip(yhat) {
        if a < T::zero() || b < T::zero() {
            return Err(Error::InvalidValue("dice: negative input".into()));
        }
        inter += a * b;
        sy += a;
        sp += b;
    }
    let den = sy + sp + eps;
    if den == T::zero() {
        return Ok(T::one());
    }
    let two = T::one() + T::one();
    Ok((two * inter + eps) / den)
}

/// Differentiable `1 - dice(target, pred)` recorded on `tape`; the target is
/// treated as data.
pub fn dice_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, target: Var, pred: Var, eps: T) -> Result<Var> {
    let tv = tape.value(target)?;
    if tv.shape() != tape.value(pred)?.shape() {
        return Err(Error::Dimension("dice: target and prediction shapes differ".into()));
    }
    if eps <= T::zero() {
        // the tape form divides by the denominator, which may vanish without ε
        return Err(Error::InvalidValue("dice on tape needs ε > 0".into()));
    }
    if tv.values().iter().chain(tape.value(pred)?.values()).any(|&v| v < T::zero()) {
        return Err(Error::InvalidValue("dice: negative input".into()));
    }
    let target_sum = tv.values().iter().fold(T::zero(), |a, &v| a + v);
    let two = T::one() + T::one();
    let prod = tape.mul(target, pred)?;
    let inter = tape.sum(prod)?;
    let inter2 = tape.scale(inter, two)?;
    let num = tape.add_scalar(inter2, eps)?;
    let pred_sum = tape.sum(pred)?;
    let den = tape.add_scalar(pred_sum, target_sum + eps)?;
    let d = tape.div(num, den)?;
    let neg = tape.scale(d, -T::one())?;
    tape.add_scalar(neg, T::one())
}

/// Floor applied inside the logarithms of [`bce`] and [`bce_on_tape`].
pub const BCE_LOG_FLOOR: f64 = 1e-7;

/// Mean binary cross-entropy `-mean(y ln p + (1-y) ln(1-p))`, logs floored at [`BCE_LOG_FLOOR`].
pub fn bce<T: Scalar>(y: &[T], p: &[T]) -> Result<T> {
    if y.len() != p.len() {
        return Err(Error::Dimension(format!("bce: lengths {} and {} differ", y.len(), p.len())));
    }
    let fl = T::lit(BCE_LOG_FLOOR);
    let total = y
        .iter()
        .zip(p)
        .fold(T::zero(), |a, (&t, &q)| a + t * q.max(fl).ln() + (T::one() - t) * (T::one() - q).max(fl).ln());
    Ok(-total / T::lit(p.len().max(1) as f64))
}

/// Mean binary cross-entropy of `pred` against a target in [0,1], recorded on `tape`.
pub fn bce_on_tape<T: Scalar>(tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
    let n = T::lit(tape.value(pred)?.len() as f64);
    let tv = tape.value(target)?.clone();
    let inv = tv.values().iter().map(|&v| T::one() - v).collect();
    let inv = tape.constant(TensorGrid::new(tv.shape().to_vec(), inv)?);
    let fl = T::lit(BCE_LOG_FLOOR);
    let log_p = tape.ln(pred, fl)?;
    let neg = tape.scale(pred, -T::one())?;
    let q = tape.add_scalar(neg, T::one())?;
    let log_q = tape.ln(q, fl)?;
    let a = tape.mul(target, log_p)?;
    let b = tape.mul(inv, log_q)?;
    let ab = tape.add(a, b)?;
    let total = tape.sum(ab)?;
    tape.scale(total, -T::one() / n)
}

/// `(E1, E2)` for one sample: region map vs. region mask, edge map vs. edge target.
pub fn task_losses<T: Scalar>(f_r: &[T], f_e: &[T], g: &[T], edge_gt: &[T], eps: T) -> Result<(T, T)> {
    if !(f_r.len() == f_e.len() && f_e.len() == g.len() && g.len() == edge_gt.len()) {
        return Err(Error::Dimension("task_losses: all maps must have the same size".into()));
    }
    Ok((T::one() - dice(g, f_r, eps)?, T::one() - dice(edge_gt, f_e, eps)?))
}

/// `sqrt(1 - λ²)`.
pub fn beta_of<T: Scalar>(lambda: T) -> T {
    (T::one() - lambda * lambda).max(T::zero()).sqrt()
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if !(lambda > T::zero() && lambda < T::one()) {
        return Err(Error::InvalidValue(format!("λ = {lambda} outside (0,1)")));
    }
    Ok(())
}

/// `λ·E1 + sqrt(1-λ²)·E2`.
pub fn combined_energy<T: Scalar>(e1: T, e2: T, lambda: T) -> Result<T> {
    check_lambda(lambda)?;
    if e1 < T::zero() || e2 < T::zero() {
        return Err(Error::InvalidValue("task losses must be non-negative".into()));
    }
    Ok(lambda * e1 + beta_of(lambda) * e2)
}

/// The same combination recorded on a tape; λ enters as a constant.
pub fn combined_energy_on_tape<T: Scalar>(tape: &mut Tape<T>, e1: Var, e2: Var, lambda: T) -> Result<Var> {
    check_lambda(lambda)?;
    let a = tape.scale(e1, lambda)?;
    let b = tape.scale(e2, beta_of(lambda))?;
    tape.add(a, b)
}

/// Maximizer of the combined energy over λ, clamped to `[LAMBDA_MIN, LAMBDA_MAX]`.
/// When both losses vanish the energy is flat and `previous` is kept.
pub fn lambda_star<T: Scalar>(e1: T, e2: T, previous: T) -> T {
    let norm = e1.hypot(e2);
    if !(norm > T::zero()) {
        return previous;
    }
    clamp_lambda(e1.max(T::zero()) / norm)
}

pub fn clamp_lambda<T: Scalar>(lambda: T) -> T {
    lambda.max(T::lit(LAMBDA_MIN)).min(T::lit(LAMBDA_MAX))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRecord {
    pub epoch: usize,
    pub step: usize,
    pub lambda: f64,
    pub e1: f64,
    pub e2: f64,
}

impl LambdaRecord {
    pub fn energy(&self) -> f64 {
        self.lambda * self.e1 + beta_of(self.lambda) * self.e2
    }
}

/// Current task weighting `(α, β) = (λ, sqrt(1-λ²))` and its history.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskWeights {
    lambda: f64,
    history: Vec<LambdaRecord>,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self::new(std::f64::consts::FRAC_1_SQRT_2)
    }
}

impl TaskWeights {
    pub fn new(lambda: f64) -> Self {
        Self { lambda: clamp_lambda(lambda), history: Vec::new() }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> f64 {
        beta_of(self.lambda)
    }

    pub fn history(&self) -> &[LambdaRecord] {
        &self.history
    }

    /// Moves λ toward `λ*(e1, e2)`: `λ ← ema·λ + (1-ema)·λ*`, then clamps.
    /// Returns the new λ.
    pub fn update(&mut self, e1: f64, e2: f64, ema: f64) -> f64 {
        let target = lambda_star(e1, e2, self.lambda);
        self.lambda = clamp_lambda(ema * self.lambda + (1.0 - ema) * target);
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = clamp_lambda(lambda);
    }

    pub fn record(&mut self, epoch: usize, step: usize, e1: f64, e2: f64) {
        self.history.push(LambdaRecord { epoch, step, lambda: self.lambda, e1, e2 });
    }
}
