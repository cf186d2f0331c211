//! Mini-batch training with min-max task weighting and Adam.
//!
//! Each batch: forward every sample on its own tape, average the two task
//! losses over the batch, move λ toward the loss-maximizing weight, then
//! minimize `λ·E1 + sqrt(1-λ²)·E2` with one Adam step. λ is a constant
//! during the parameter step.

mod adam;
mod augment;
pub mod checkpoint;
mod edge;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{Adam, AdamConfig, LayerGrads, LayerMoments};
pub use augment::{augment, AugmentConfig, AugmentPlan};
pub use edge::{edge_groundtruth, edge_groundtruth_instances};

use crate::error::{Error, Result};
use crate::losses::{self, TaskWeights};
use crate::network::ModelParams;
use crate::plane::{LabeledMask, Plane};
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorGrid, Var};

/// When λ is re-estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaCadence {
    PerBatch,
    PerEpoch,
}

impl std::str::FromStr for LambdaCadence {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "batch" | "per-batch" => Ok(Self::PerBatch),
            "epoch" | "per-epoch" => Ok(Self::PerEpoch),
            other => Err(format!("unknown λ cadence `{other}` (expected batch or epoch)")),
        }
    }
}

impl std::fmt::Display for LambdaCadence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerBatch => "batch",
            Self::PerEpoch => "epoch",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub adam: AdamConfig,
    pub lambda_cadence: LambdaCadence,
    /// Weight of the previous λ in `λ ← ema·λ + (1-ema)·λ*`.
    pub lambda_ema: f64,
    pub lambda_init: f64,
    /// Keep λ at `lambda_init` for the whole run (fixed-weight baseline).
    pub fixed_lambda: bool,
    pub edge_sigma: f64,
    pub dice_eps: f64,
    /// Weight `w` of a pixelwise cross-entropy added to the edge term of the
    /// training objective. Logged losses and λ use the Dice losses alone.
    pub edge_bce_weight: f64,
    pub augment: AugmentConfig,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 10,
            learning_rate: 1e-4,
            lr_decay: 0.99,
            adam: AdamConfig::default(),
            lambda_cadence: LambdaCadence::PerBatch,
            lambda_ema: 0.9,
            lambda_init: std::f64::consts::FRAC_1_SQRT_2,
            fixed_lambda: false,
            edge_sigma: 1.0,
            dice_eps: losses::DICE_EPS_TRAIN,
            edge_bce_weight: 0.2,
            augment: AugmentConfig::default(),
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad("lr_decay must be positive");
        }
        if !(self.edge_sigma > 0.0) {
            return bad("edge_sigma must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda_ema) {
            return bad("lambda_ema must lie in [0,1]");
        }
        if !(self.lambda_init > 0.0 && self.lambda_init < 1.0) {
            return bad("lambda_init must lie in (0,1)");
        }
        if !(self.dice_eps > 0.0) {
            return bad("dice_eps must be positive for training");
        }
        if !(self.edge_bce_weight >= 0.0 && self.edge_bce_weight.is_finite()) {
            return bad("edge_bce_weight must be finite and non-negative");
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("Adam betas must lie in [0,1) and eps must be positive");
        }
        Ok(())
    }
}

/// One training example; every raster has the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    /// Normalized intensities in `[0,1]`.
    pub image: Plane<f64>,
    /// Binary foreground mask as 0/1.
    pub region: Plane<f64>,
    /// Edge target in `[0,1]`.
    pub edge: Plane<f64>,
    /// Instances, kept for evaluation only.
    pub labels: Option<Plane<u32>>,
}

impl TrainSample {
    pub fn new(image: Plane<f64>, region: Plane<f64>, edge: Plane<f64>, labels: Option<Plane<u32>>) -> Result<Self> {
        if !(image.same_size(&region) && image.same_size(&edge) && labels.as_ref().is_none_or(|l| image.same_size(l))) {
            return Err(Error::Dimension("sample rasters differ in size".into()));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidValue("image must be normalized to [0,1]".into()));
        }
        if region.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidValue("region ground truth must be binary".into()));
        }
        if edge.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidValue("edge ground truth must lie in [0,1]".into()));
        }
        Ok(Self { image, region, edge, labels })
    }

    /// Builds a sample from a raw image and its instances: the image is
    /// percentile-normalized and the edge target comes from the instances.
    pub fn from_instances(raw_image: &Plane<f64>, labels: &LabeledMask, edge_sigma: f64) -> Result<Self> {
        let region = labels.foreground().map(|b| if b { 1.0 } else { 0.0 });
        let edge = edge_groundtruth_instances(labels, edge_sigma)?;
        Self::new(normalize_image(raw_image), region, edge, Some(labels.labels().clone()))
    }
}

/// Percentile stretch: the 1st and 99th percentiles map to 0 and 1, then clip.
pub fn normalize_image(raw: &Plane<f64>) -> Plane<f64> {
    let mut sorted: Vec<f64> = raw.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return raw.clone();
    }
    let at = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
    let (lo, hi) = (at(0.01), at(0.99));
    if hi - lo < 1e-12 {
        return raw.map(|_| 0.0);
    }
    raw.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
}

pub fn plane_to_grid<T: Scalar>(p: &Plane<f64>) -> Result<TensorGrid<T>> {
    TensorGrid::new(vec![1, p.height(), p.width()], p.data().iter().map(|&v| T::lit(v)).collect())
}

pub fn grid_to_plane<T: Scalar>(g: &TensorGrid<T>) -> Result<Plane<f64>> {
    let (c, h, w) = g.dims3()?;
    if c != 1 {
        return Err(Error::Dimension(format!("expected one channel, got {c}")));
    }
    Plane::new(w, h, g.values().iter().map(|v| v.to_f64_lossy()).collect())
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    pub optimizer: Adam<T>,
    pub weights: TaskWeights,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    /// Learning rate for the next epoch.
    pub learning_rate: f64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: ModelParams<T>, config: &TrainConfig) -> Self {
        let optimizer = Adam::new(config.adam, &params);
        Self {
            params,
            optimizer,
            weights: TaskWeights::new(config.lambda_init),
            epoch: 0,
            step: 0,
            learning_rate: config.learning_rate,
        }
    }
}

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lambda: f64,
    pub e1: f64,
    pub e2: f64,
    pub energy: f64,
    pub learning_rate: f64,
}

pub const LOG_HEADER: &str = "epoch,step,lambda,E1,E2,E,lr";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.epoch, self.step, self.lambda, self.e1, self.e2, self.energy, self.learning_rate
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_e1: f64,
    pub mean_e2: f64,
    pub mean_energy: f64,
    pub records: Vec<StepRecord>,
}

/// Renders step records as the training-log CSV.
pub fn log_csv(records: &[StepRecord]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Forward pass of one sample with both task losses recorded on a fresh tape.
pub struct SampleLosses<T> {
    pub tape: Tape<T>,
    pub params: crate::network::ParamVars,
    pub e1: Var,
    pub e2: Var,
    /// `w·BCE(edge target, f_e)`, present when `w > 0`.
    pub edge_aux: Option<Var>,
}

pub fn sample_losses<T: Scalar>(
    params: &ModelParams<T>,
    sample: &TrainSample,
    eps: f64,
    bce_weight: f64,
) -> Result<SampleLosses<T>> {
    let mut tape = Tape::new();
    let vars = params.attach(&mut tape, true);
    let image = tape.constant(plane_to_grid(&sample.image)?);
    let out = params.forward(&mut tape, &vars, image)?;
    let region = tape.constant(plane_to_grid(&sample.region)?);
    let edge = tape.constant(plane_to_grid(&sample.edge)?);
    let e1 = losses::dice_loss_on_tape(&mut tape, region, out.region, T::lit(eps))?;
    let e2 = losses::dice_loss_on_tape(&mut tape, edge, out.edge, T::lit(eps))?;
    let edge_aux = if bce_weight > 0.0 {
        let b = losses::bce_on_tape(&mut tape, edge, out.edge)?;
        Some(tape.scale(b, T::lit(bce_weight))?)
    } else {
        None
    };
    Ok(SampleLosses { tape, params: vars, e1, e2, edge_aux })
}

/// Batch gradient of `α·mean(E1) + β·mean(E2 + w·BCE_edge)`, reduced in sample order.
/// Returns `(E1_mean, E2_mean, λ, grads)` with the pure Dice losses; λ is chosen by
/// `pick_lambda` from those batch means before any backward pass runs.
pub fn batch_gradient<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[TrainSample],
    eps: f64,
    bce_weight: f64,
    mut pick_lambda: impl FnMut(f64, f64) -> f64,
) -> Result<(f64, f64, f64, LayerGrads<T>)> {
    let mut runs = Vec::with_capacity(batch.len());
    for s in batch {
        runs.push(sample_losses(params, s, eps, bce_weight)?);
    }
    let m = batch.len() as f64;
    let mut e1 = 0.0;
    let mut e2 = 0.0;
    for r in &runs {
        e1 += r.tape.scalar(r.e1)?.to_f64_lossy();
        e2 += r.tape.scalar(r.e2)?.to_f64_lossy();
    }
    e1 /= m;
    e2 /= m;
    if !(e1.is_finite() && e2.is_finite()) {
        return Err(Error::NonFinite("batch loss"));
    }
    let lambda = pick_lambda(e1, e2);
    let (alpha, beta) = (lambda, losses::beta_of(lambda));
    let mut grads: LayerGrads<T> = params
        .layers()
        .iter()
        .map(|(k, l)| (k.clone(), (vec![T::zero(); l.kernel.len()], vec![T::zero(); l.bias.len()])))
        .collect();
    for mut r in runs {
        let a = r.tape.scale(r.e1, T::lit(alpha / m))?;
        let edge = match r.edge_aux {
            Some(aux) => r.tape.add(r.e2, aux)?,
            None => r.e2,
        };
        let b = r.tape.scale(edge, T::lit(beta / m))?;
        let loss = r.tape.add(a, b)?;
        let mut g = r.tape.backward(loss)?;
        for (path, (kv, bv)) in &r.params {
            let (gk, gb) = grads.get_mut(path).expect("same layer set");
            let dk = g.take(*kv).expect("tracked kernel");
            let db = g.take(*bv).expect("tracked bias");
            gk.iter_mut().zip(dk.values()).for_each(|(a, &d)| *a += d);
            gb.iter_mut().zip(db.values()).for_each(|(a, &d)| *a += d);
        }
    }
    Ok((e1, e2, lambda, grads))
}

/// Runs one epoch over `data` and advances `state`.
pub fn train_epoch<T: Scalar>(state: &mut TrainState<T>, data: &[TrainSample], config: &TrainConfig) -> Result<EpochStats> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidValue("training data is empty".into()));
    }
    let epoch = state.epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..data.len()).collect();
    if config.shuffle {
        order.shuffle(&mut rng);
    }

    let lr = state.learning_rate;
    let mut records = Vec::new();
    let (mut sum_e1, mut sum_e2, mut sum_energy) = (0.0, 0.0, 0.0);
    for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
        let batch: Vec<TrainSample> = chunk
            .iter()
            .map(|&i| augment(&data[i], &AugmentPlan::draw(&config.augment, &mut rng)))
            .collect();
        let weights = &mut state.weights;
        let result = batch_gradient(&state.params, &batch, config.dice_eps, config.edge_bce_weight, |e1, e2| {
            if !config.fixed_lambda && config.lambda_cadence == LambdaCadence::PerBatch {
                weights.update(e1, e2, config.lambda_ema);
            }
            weights.lambda()
        });
        let (e1, e2, lambda, grads) = match result {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => return Err(Error::NonFiniteLoss { epoch, batch: batch_index }),
            Err(e) => return Err(e),
        };
        match state.optimizer.step(&mut state.params, &grads, lr) {
            Err(Error::NonFinite(_)) => return Err(Error::NonFiniteLoss { epoch, batch: batch_index }),
            other => other?,
        }
        state.step += 1;
        state.weights.record(epoch, state.step, e1, e2);
        let energy = lambda * e1 + losses::beta_of(lambda) * e2;
        records.push(StepRecord { epoch, step: state.step, lambda, e1, e2, energy, learning_rate: lr });
        let w = chunk.len() as f64;
        sum_e1 += e1 * w;
        sum_e2 += e2 * w;
        sum_energy += energy * w;
    }
    let n = data.len() as f64;
    let (mean_e1, mean_e2) = (sum_e1 / n, sum_e2 / n);
    if !config.fixed_lambda && config.lambda_cadence == LambdaCadence::PerEpoch {
        state.weights.update(mean_e1, mean_e2, config.lambda_ema);
    }
    state.epoch += 1;
    state.learning_rate *= config.lr_decay;
    Ok(EpochStats { epoch, mean_e1, mean_e2, mean_energy: sum_energy / n, records })
}

/// Mean `(E1, E2)` of the current parameters over `data`, ε as in training.
pub fn evaluate_losses<T: Scalar>(params: &ModelParams<T>, data: &[TrainSample], eps: f64) -> Result<(f64, f64)> {
    let (mut e1, mut e2) = (0.0, 0.0);
    for s in data {
        let (f_r, f_e) = params.predict(&plane_to_grid(&s.image)?)?;
        let (a, b) = losses::task_losses(
            &to_f64(f_r.values()),
            &to_f64(f_e.values()),
            s.region.data(),
            s.edge.data(),
            eps,
        )?;
        e1 += a;
        e2 += b;
    }
    let n = data.len().max(1) as f64;
    Ok((e1 / n, e2 / n))
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}
