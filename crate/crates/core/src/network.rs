//! Twin encoder-decoder network: a region branch and an edge branch.
//!
//! Both branches are U-shaped: a full-resolution input block, `depth`
//! down-sampling blocks (2x2 max pool then two conv+ReLU stages) and
//! `depth` up-sampling blocks (nearest x2, conv+ReLU, skip concat, two
//! conv+ReLU stages), closed by a conv+sigmoid head. The edge branch sees
//! the image plus the region branch's first two down-sampling outputs
//! (brought back to full resolution by repeated nearest up-sampling) and
//! the region branch's last up-sampling output. Those region parameters
//! therefore receive gradient from both task losses.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};
use crate::tensor::{Tape, TensorGrid, Var};

pub const REGION: &str = "region";
pub const EDGE: &str = "edge";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub input_size: usize,
    pub precision: Precision,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { depth: 3, base_channels: 8, input_size: 64, precision: Precision::F64 }
    }
}

impl NetConfig {
    /// Four levels on 512x512 inputs.
    pub fn full_scale() -> Self {
        Self { depth: 4, base_channels: 16, input_size: 512, precision: Precision::F32 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be at least 1".into()));
        }
        let factor = 1usize
            .checked_shl(self.depth as u32)
            .ok_or_else(|| Error::Config(format!("depth {} is too large", self.depth)))?;
        if self.input_size == 0 || self.input_size % factor != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of 2^depth = {factor}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Channels produced at resolution level `level` (0 = full resolution).
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input channels of the edge branch: image + shared region features.
    pub fn edge_input_channels(&self) -> usize {
        let shared_down: usize = (1..=self.depth.min(2)).map(|l| self.channels_at(l)).sum();
        1 + shared_down + self.channels_at(0)
    }

    /// `(path, in_channels, out_channels)` for every conv layer, in build order.
    pub fn layer_specs(&self) -> Vec<(String, usize, usize)> {
        let mut specs = branch_specs(self, REGION, 1);
        specs.extend(branch_specs(self, EDGE, self.edge_input_channels()));
        specs
    }

    pub fn param_count(&self) -> usize {
        self.layer_specs().iter().map(|(_, cin, cout)| cout * cin * 9 + cout).sum()
    }
}

fn branch_specs(cfg: &NetConfig, branch: &str, input_channels: usize) -> Vec<(String, usize, usize)> {
    let c = |l: usize| cfg.channels_at(l);
    let mut v = vec![
        (format!("{branch}/enc0/conv1"), input_channels, c(0)),
        (format!("{branch}/enc0/conv2"), c(0), c(0)),
    ];
    for l in 1..=cfg.depth {
        v.push((format!("{branch}/down{l}/conv1"), c(l - 1), c(l)));
        v.push((format!("{branch}/down{l}/conv2"), c(l), c(l)));
    }
    for l in (1..=cfg.depth).rev() {
        v.push((format!("{branch}/up{l}/upconv"), c(l), c(l - 1)));
        v.push((format!("{branch}/up{l}/conv1"), 2 * c(l - 1), c(l - 1)));
        v.push((format!("{branch}/up{l}/conv2"), c(l - 1), c(l - 1)));
    }
    v.push((format!("{branch}/head"), c(0), 1));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    /// `[Cout, Cin, 3, 3]`
    pub kernel: TensorGrid<T>,
    /// `[Cout]`
    pub bias: TensorGrid<T>,
}

/// Learnable parameters of both branches, keyed by layer path
/// (`region/down1/conv2`, `edge/head`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: NetConfig,
    layers: BTreeMap<String, ConvLayer<T>>,
}

/// Tape handles for every parameter, keyed like [`ModelParams`].
pub type ParamVars = BTreeMap<String, (Var, Var)>;

/// The two sigmoid maps, each `[1,H,W]`.
#[derive(Debug, Clone, Copy)]
pub struct NetOutput {
    pub region: Var,
    pub edge: Var,
}

impl<T: Scalar> ModelParams<T> {
    /// He fan-in normal kernels, zero biases; deterministic in `seed`.
    /// Weights are drawn in `f64` and rounded, so `f32` and `f64` models built
    /// from one seed agree to `f32` precision.
    pub fn build(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = BTreeMap::new();
        for (path, cin, cout) in config.layer_specs() {
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let kernel = TensorGrid::from_fn(&[cout, cin, 3, 3], |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(z * std)
            })?;
            layers.insert(path, ConvLayer { kernel, bias: TensorGrid::zeros(&[cout]) });
        }
        Ok(Self { config, layers })
    }

    /// Assembles parameters from explicit layers, checking them against `config`.
    pub fn from_layers(config: NetConfig, layers: BTreeMap<String, ConvLayer<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.layer_specs();
        if specs.len() != layers.len() {
            return Err(Error::ConfigMismatch(format!(
                "config expects {} layers, found {}",
                specs.len(),
                layers.len()
            )));
        }
        for (path, cin, cout) in specs {
            let layer = layers
                .get(&path)
                .ok_or_else(|| Error::ConfigMismatch(format!("missing layer `{path}`")))?;
            if layer.kernel.shape() != [cout, cin, 3, 3] || layer.bias.shape() != [cout] {
                return Err(Error::ConfigMismatch(format!(
                    "layer `{path}` has kernel {:?} and bias {:?}, expected [{cout},{cin},3,3] and [{cout}]",
                    layer.kernel.shape(),
                    layer.bias.shape()
                )));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &BTreeMap<String, ConvLayer<T>> {
        &self.layers
    }

    pub fn layer(&self, path: &str) -> Option<&ConvLayer<T>> {
        self.layers.get(path)
    }

    pub fn layer_mut(&mut self, path: &str) -> Option<&mut ConvLayer<T>> {
        self.layers.get_mut(path)
    }

    pub fn param_count(&self) -> usize {
        self.layers.values().map(|l| l.kernel.len() + l.bias.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut config = self.config;
        config.precision = U::PRECISION;
        ModelParams {
            config,
            layers: self
                .layers
                .iter()
                .map(|(k, l)| (k.clone(), ConvLayer { kernel: l.kernel.cast(), bias: l.bias.cast() }))
                .collect(),
        }
    }

    /// Records every parameter on `tape`, as tracked leaves or constants.
    pub fn attach(&self, tape: &mut Tape<T>, tracked: bool) -> ParamVars {
        self.layers
            .iter()
            .map(|(path, layer)| {
                let vars = if tracked {
                    (tape.leaf(layer.kernel.clone()), tape.leaf(layer.bias.clone()))
                } else {
                    (tape.constant(layer.kernel.clone()), tape.constant(layer.bias.clone()))
                };
                (path.clone(), vars)
            })
            .collect()
    }

    /// Checks that `image` is a `[1,S,S]` grid in `[0,1]` for this config.
    pub fn check_image(&self, image: &TensorGrid<T>) -> Result<()> {
        let s = self.config.input_size;
        if image.shape() != [1, s, s] {
            return Err(Error::Dimension(format!("image must be [1,{s},{s}], got {:?}", image.shape())));
        }
        if image.values().iter().any(|&v| v < T::zero() || v > T::one()) {
            return Err(Error::InvalidValue("image values must lie in [0,1]".into()));
        }
        Ok(())
    }

    /// Runs both branches on `image` (already on `tape`).
    pub fn forward(&self, tape: &mut Tape<T>, vars: &ParamVars, image: Var) -> Result<NetOutput> {
        self.check_image(tape.value(image)?)?;
        let region = self.run_branch(tape, vars, REGION, image)?;
        let mut shared = image;
        for (level, &feature) in region.down.iter().take(2).enumerate() {
            let mut up = feature;
            for _ in 0..=level {
                up = tape.upsample2(up)?;
            }
            shared = tape.concat_channels(shared, up)?;
        }
        shared = tape.concat_channels(shared, region.last_up)?;
        let edge = self.run_branch(tape, vars, EDGE, shared)?;
        Ok(NetOutput { region: region.output, edge: edge.output })
    }

    /// Inference without gradient tracking; returns `(f_r, f_e)`.
    pub fn predict(&self, image: &TensorGrid<T>) -> Result<(TensorGrid<T>, TensorGrid<T>)> {
        let mut tape = Tape::new();
        let vars = self.attach(&mut tape, false);
        let x = tape.constant(image.clone());
        let out = self.forward(&mut tape, &vars, x)?;
        Ok((tape.value(out.region)?.clone(), tape.value(out.edge)?.clone()))
    }

    fn run_branch(&self, tape: &mut Tape<T>, vars: &ParamVars, branch: &str, input: Var) -> Result<BranchTaps> {
        let conv_relu = |tape: &mut Tape<T>, name: &str, x: Var| -> Result<Var> {
            let (k, b) = vars
                .get(&format!("{branch}/{name}"))
                .ok_or_else(|| Error::ConfigMismatch(format!("missing layer `{branch}/{name}`")))?;
            let y = tape.conv2d(x, *k, *b)?;
            tape.relu(y)
        };
        let block = |tape: &mut Tape<T>, name: &str, x: Var| -> Result<Var> {
            let y = conv_relu(tape, &format!("{name}/conv1"), x)?;
            conv_relu(tape, &format!("{name}/conv2"), y)
        };

        let mut skips = vec![block(tape, "enc0", input)?];
        let mut down = Vec::with_capacity(self.config.depth);
        for l in 1..=self.config.depth {
            let pooled = tape.maxpool2(*skips.last().expect("non-empty"))?;
            let feature = block(tape, &format!("down{l}"), pooled)?;
            down.push(feature);
            skips.push(feature);
        }
        let mut x = skips.pop().expect("bottleneck");
        for l in (1..=self.config.depth).rev() {
            let up = tape.upsample2(x)?;
            let up = conv_relu(tape, &format!("up{l}/upconv"), up)?;
            let skip = skips.pop().expect("skip per level");
            let merged = tape.concat_channels(up, skip)?;
            x = block(tape, &format!("up{l}"), merged)?;
        }
        let (k, b) = vars
            .get(&format!("{branch}/head"))
            .ok_or_else(|| Error::ConfigMismatch(format!("missing layer `{branch}/head`")))?;
        let logits = tape.conv2d(x, *k, *b)?;
        let output = tape.sigmoid(logits)?;
        Ok(BranchTaps { down, last_up: x, output })
    }
}

struct BranchTaps {
    down: Vec<Var>,
    last_up: Var,
    output: Var,
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn cfg(depth: usize, base: usize, size: usize) -> NetConfig {
        NetConfig { depth, base_channels: base, input_size: size, precision: Precision::F64 }
    }

    fn image(size: usize, seed: u64) -> TensorGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TensorGrid::from_fn(&[1, size, size], |_| rng.random_range(0.0..1.0)).unwrap()
    }

    /// Hand enumeration: conv(cin -> cout) holds 9*cin*cout + cout values.
    fn closed_form(depth: usize, b: usize) -> usize {
        let conv = |cin: usize, cout: usize| 9 * cin * cout + cout;
        let c = |l: usize| b * (1 << l);
        let branch = |cin: usize| {
            let mut n = conv(cin, c(0)) + conv(c(0), c(0));
            for l in 1..=depth {
                n += conv(c(l - 1), c(l)) + conv(c(l), c(l));
                n += conv(c(l), c(l - 1)) + conv(2 * c(l - 1), c(l - 1)) + conv(c(l - 1), c(l - 1));
            }
            n + conv(c(0), 1)
        };
        let shared = c(1) + if depth >= 2 { c(2) } else { 0 };
        branch(1) + branch(1 + shared + c(0))
    }

    #[test]
    fn depth1_base1_count_by_hand() {
        // region: 1->1, 1->1, 1->2, 2->2, 2->1, 2->1, 1->1, head 1->1
        let region = [(1, 1), (1, 1), (1, 2), (2, 2), (2, 1), (2, 1), (1, 1), (1, 1)];
        // edge input = image + down1 (2 ch) + last up (1 ch) = 4 channels
        let edge = [(4, 1), (1, 1), (1, 2), (2, 2), (2, 1), (2, 1), (1, 1), (1, 1)];
        let by_hand: usize = region.iter().chain(&edge).map(|&(i, o)| 9 * i * o + o).sum();
        let p = ModelParams::<f64>::build(cfg(1, 1, 4), 0).unwrap();
        assert_eq!(p.param_count(), by_hand);
        assert_eq!(p.layers().len(), 16);
    }

    #[test]
    fn param_count_matches_closed_form() {
        for &(d, b, s) in &[(1, 1, 2), (2, 3, 8), (3, 8, 64), (4, 16, 512)] {
            let c = cfg(d, b, s);
            assert_eq!(c.param_count(), closed_form(d, b), "depth {d} base {b}");
        }
        let p = ModelParams::<f32>::build(NetConfig::full_scale(), 0).unwrap();
        assert_eq!(p.param_count(), closed_form(4, 16));
    }

    #[test]
    fn build_is_deterministic_and_validates() {
        let a = ModelParams::<f64>::build(cfg(2, 2, 8), 42).unwrap();
        let b = ModelParams::<f64>::build(cfg(2, 2, 8), 42).unwrap();
        assert_eq!(a, b);
        assert!(a.layers().values().all(|l| l.bias.values().iter().all(|&v| v == 0.0)));
        let c = ModelParams::<f64>::build(cfg(2, 2, 8), 43).unwrap();
        assert_ne!(a, c);
        assert!(ModelParams::<f64>::build(cfg(0, 2, 8), 0).is_err());
        assert!(ModelParams::<f64>::build(cfg(3, 2, 12), 0).is_err());
        assert!(ModelParams::<f64>::build(cfg(1, 0, 8), 0).is_err());
    }

    #[test]
    fn outputs_have_input_shape_and_unit_range() {
        for depth in 1..=4 {
            let size = 16;
            let p = ModelParams::<f64>::build(cfg(depth, 2, size), depth as u64).unwrap();
            let (r, e) = p.predict(&image(size, 1)).unwrap();
            for m in [&r, &e] {
                assert_eq!(m.shape(), &[1, size, size]);
                assert!(m.values().iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let p = ModelParams::<f64>::build(cfg(2, 3, 16), 7).unwrap();
        let img = image(16, 9);
        assert_eq!(p.predict(&img).unwrap(), p.predict(&img).unwrap());
    }

    #[test]
    fn rejects_bad_images() {
        let p = ModelParams::<f64>::build(cfg(1, 1, 8), 0).unwrap();
        assert!(matches!(p.predict(&image(16, 0)), Err(Error::Dimension(_))));
        let hot = TensorGrid::filled(&[1, 8, 8], 1.5);
        assert!(matches!(p.predict(&hot), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn perturbation_probe_confirms_sharing_topology() {
        let base = ModelParams::<f64>::build(cfg(2, 2, 16), 11).unwrap();
        let img = image(16, 12);
        let (r0, e0) = base.predict(&img).unwrap();
        let bump = |path: &str| {
            let mut p = base.clone();
            let layer = p.layer_mut(path).unwrap();
            let v = layer.kernel.values()[4];
            layer.kernel.set(4, v + 0.25).unwrap();
            p.predict(&img).unwrap()
        };
        let (r, e) = bump("edge/down1/conv1");
        assert_eq!(r, r0, "edge-exclusive kernel must not touch the region map");
        assert_ne!(e, e0);
        let (r, e) = bump("region/enc0/conv1");
        assert_ne!(r, r0);
        assert_ne!(e, e0);
    }

    #[test]
    fn cast_preserves_structure() {
        let p = ModelParams::<f64>::build(cfg(1, 2, 8), 3).unwrap();
        let q: ModelParams<f32> = p.cast();
        assert_eq!(q.config().precision, Precision::F32);
        assert_eq!(q, ModelParams::<f32>::build(cfg(1, 2, 8), 3).unwrap().cast::<f32>());
        let layers = q.layers().clone();
        let mut c = *q.config();
        c.depth = 2;
        assert!(matches!(ModelParams::from_layers(c, layers), Err(Error::ConfigMismatch(_))));
    }
}
