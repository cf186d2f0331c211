//! Flat `key = value` run configuration.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use cellseg_core::network::NetConfig;
use cellseg_core::segmenter::SegmenterParams;
use cellseg_core::synthdata::{SceneSpec, TEST_BASE_SEED, TEST_SCENES, TRAIN_BASE_SEED, TRAIN_SCENES};
use cellseg_core::trainer::TrainConfig;

use crate::error::CliError;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "CELLSEG_CONFIG";

/// File name of the resolved config written into every output directory.
pub const ECHO_FILE: &str = "config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_count: usize,
    pub test_count: usize,
    pub train_seed: u64,
    pub test_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train_count: TRAIN_SCENES, test_count: TEST_SCENES, train_seed: TRAIN_BASE_SEED, test_seed: TEST_BASE_SEED }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub net: NetConfig,
    /// Seed of the weight initialisation.
    pub init_seed: u64,
    pub train: TrainConfig,
    /// Write a numbered checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub scene: SceneSpec,
    pub data: DataConfig,
    pub seg: SegmenterParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            init_seed: 0,
            train: TrainConfig::default(),
            checkpoint_every: 50,
            scene: SceneSpec::default(),
            data: DataConfig::default(),
            seg: SegmenterParams::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value.parse().map_err(|e| CliError::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_pair<T: FromStr>(key: &str, value: &str) -> Result<(T, T), CliError>
where
    T::Err: Display,
{
    let (a, b) = value.split_once(',').ok_or_else(|| CliError::Config(format!("{key}: expected `a,b`, got `{value}`")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

fn pair<T: Display>(p: (T, T)) -> String {
    format!("{},{}", p.0, p.1)
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let n = &self.net;
        let t = &self.train;
        let s = &self.scene;
        let d = &self.data;
        let g = &self.seg;
        vec![
            ("net.depth", n.depth.to_string()),
            ("net.base_channels", n.base_channels.to_string()),
            ("net.input_size", n.input_size.to_string()),
            ("net.precision", n.precision.to_string()),
            ("net.init_seed", self.init_seed.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.lr_decay", t.lr_decay.to_string()),
            ("train.adam_beta1", t.adam.beta1.to_string()),
            ("train.adam_beta2", t.adam.beta2.to_string()),
            ("train.adam_eps", t.adam.eps.to_string()),
            ("train.lambda_cadence", t.lambda_cadence.to_string()),
            ("train.lambda_ema", t.lambda_ema.to_string()),
            ("train.lambda_init", t.lambda_init.to_string()),
            ("train.fixed_lambda", t.fixed_lambda.to_string()),
            ("train.edge_sigma", t.edge_sigma.to_string()),
            ("train.dice_eps", t.dice_eps.to_string()),
            ("train.edge_bce_weight", t.edge_bce_weight.to_string()),
            ("train.augment_hflip", t.augment.hflip.to_string()),
            ("train.augment_vflip", t.augment.vflip.to_string()),
            ("train.augment_intensity", t.augment.intensity.to_string()),
            ("train.augment_gain", pair(t.augment.gain_range)),
            ("train.augment_offset", pair(t.augment.offset_range)),
            ("train.augment_gamma", pair(t.augment.gamma_range)),
            ("train.shuffle", t.shuffle.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("scene.size", s.size.to_string()),
            ("scene.cell_count", pair(s.cell_count)),
            ("scene.radius", pair(s.radius)),
            ("scene.perturbation", s.perturbation.to_string()),
            ("scene.touch_probability", s.touch_probability.to_string()),
            ("scene.touch_spacing", pair(s.touch_spacing)),
            ("scene.free_gap", s.free_gap.to_string()),
            ("scene.background", s.background.to_string()),
            ("scene.contrast", s.contrast.to_string()),
            ("scene.ramp", s.ramp.to_string()),
            ("scene.halo", s.halo.to_string()),
            ("scene.membrane", s.membrane.to_string()),
            ("scene.noise_sigma", s.noise_sigma.to_string()),
            ("scene.edge_sigma", s.edge_sigma.to_string()),
            ("data.train_count", d.train_count.to_string()),
            ("data.test_count", d.test_count.to_string()),
            ("data.train_seed", d.train_seed.to_string()),
            ("data.test_seed", d.test_seed.to_string()),
            ("seg.seed_source", g.seed_source.to_string()),
            ("seg.threshold", g.seeds.threshold.to_string()),
            ("seg.erosion_radius", g.seeds.erosion_radius.to_string()),
            ("seg.min_seed_area", g.seeds.min_seed_area.to_string()),
            ("seg.peak_separation", g.seeds.peak_separation.to_string()),
            ("seg.peak_prominence", g.seeds.peak_prominence.to_string()),
            ("seg.radius_factor", g.seeds.radius_factor.to_string()),
            ("seg.step", g.snake.step.to_string()),
            ("seg.curvature", g.snake.curvature.to_string()),
            ("seg.spacing", g.snake.spacing.to_string()),
            ("seg.stop_threshold", g.snake.stop_threshold.to_string()),
            ("seg.d_min", g.snake.d_min.to_string()),
            ("seg.tol", g.snake.tol.to_string()),
            ("seg.window", g.snake.window.to_string()),
            ("seg.max_iterations", g.snake.max_iterations.to_string()),
            ("seg.min_cell_area", g.min_cell_area.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let k = key;
        match key {
            "net.depth" => self.net.depth = parse(k, v)?,
            "net.base_channels" => self.net.base_channels = parse(k, v)?,
            "net.input_size" => self.net.input_size = parse(k, v)?,
            "net.precision" => self.net.precision = parse(k, v)?,
            "net.init_seed" => self.init_seed = parse(k, v)?,
            "train.epochs" => self.train.epochs = parse(k, v)?,
            "train.batch_size" => self.train.batch_size = parse(k, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(k, v)?,
            "train.lr_decay" => self.train.lr_decay = parse(k, v)?,
            "train.adam_beta1" => self.train.adam.beta1 = parse(k, v)?,
            "train.adam_beta2" => self.train.adam.beta2 = parse(k, v)?,
            "train.adam_eps" => self.train.adam.eps = parse(k, v)?,
            "train.lambda_cadence" => self.train.lambda_cadence = parse(k, v)?,
            "train.lambda_ema" => self.train.lambda_ema = parse(k, v)?,
            "train.lambda_init" => self.train.lambda_init = parse(k, v)?,
            "train.fixed_lambda" => self.train.fixed_lambda = parse(k, v)?,
            "train.edge_sigma" => self.train.edge_sigma = parse(k, v)?,
            "train.dice_eps" => self.train.dice_eps = parse(k, v)?,
            "train.edge_bce_weight" => self.train.edge_bce_weight = parse(k, v)?,
            "train.augment_hflip" => self.train.augment.hflip = parse(k, v)?,
            "train.augment_vflip" => self.train.augment.vflip = parse(k, v)?,
            "train.augment_intensity" => self.train.augment.intensity = parse(k, v)?,
            "train.augment_gain" => self.train.augment.gain_range = parse_pair(k, v)?,
            "train.augment_offset" => self.train.augment.offset_range = parse_pair(k, v)?,
            "train.augment_gamma" => self.train.augment.gamma_range = parse_pair(k, v)?,
            "train.shuffle" => self.train.shuffle = parse(k, v)?,
            "train.seed" => self.train.seed = parse(k, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(k, v)?,
            "scene.size" => self.scene.size = parse(k, v)?,
            "scene.cell_count" => self.scene.cell_count = parse_pair(k, v)?,
            "scene.radius" => self.scene.radius = parse_pair(k, v)?,
            "scene.perturbation" => self.scene.perturbation = parse(k, v)?,
            "scene.touch_probability" => self.scene.touch_probability = parse(k, v)?,
            "scene.touch_spacing" => self.scene.touch_spacing = parse_pair(k, v)?,
            "scene.free_gap" => self.scene.free_gap = parse(k, v)?,
            "scene.background" => self.scene.background = parse(k, v)?,
            "scene.contrast" => self.scene.contrast = parse(k, v)?,
            "scene.ramp" => self.scene.ramp = parse(k, v)?,
            "scene.halo" => self.scene.halo = parse(k, v)?,
            "scene.membrane" => self.scene.membrane = parse(k, v)?,
            "scene.noise_sigma" => self.scene.noise_sigma = parse(k, v)?,
            "scene.edge_sigma" => self.scene.edge_sigma = parse(k, v)?,
            "data.train_count" => self.data.train_count = parse(k, v)?,
            "data.test_count" => self.data.test_count = parse(k, v)?,
            "data.train_seed" => self.data.train_seed = parse(k, v)?,
            "data.test_seed" => self.data.test_seed = parse(k, v)?,
            "seg.seed_source" => self.seg.seed_source = parse(k, v)?,
            "seg.threshold" => self.seg.seeds.threshold = parse(k, v)?,
            "seg.erosion_radius" => self.seg.seeds.erosion_radius = parse(k, v)?,
            "seg.min_seed_area" => self.seg.seeds.min_seed_area = parse(k, v)?,
            "seg.peak_separation" => self.seg.seeds.peak_separation = parse(k, v)?,
            "seg.peak_prominence" => self.seg.seeds.peak_prominence = parse(k, v)?,
            "seg.radius_factor" => self.seg.seeds.radius_factor = parse(k, v)?,
            "seg.step" => self.seg.snake.step = parse(k, v)?,
            "seg.curvature" => self.seg.snake.curvature = parse(k, v)?,
            "seg.spacing" => self.seg.snake.spacing = parse(k, v)?,
            "seg.stop_threshold" => self.seg.snake.stop_threshold = parse(k, v)?,
            "seg.d_min" => self.seg.snake.d_min = parse(k, v)?,
            "seg.tol" => self.seg.snake.tol = parse(k, v)?,
            "seg.window" => self.seg.snake.window = parse(k, v)?,
            "seg.max_iterations" => self.seg.snake.max_iterations = parse(k, v)?,
            "seg.min_cell_area" => self.seg.min_cell_area = parse(k, v)?,
            _ => return Err(CliError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| CliError::Config(format!("{origin}:{}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    /// Defaults, then the config file (explicit path or `CELLSEG_CONFIG`),
    /// then `key=value` overrides.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let env_path = std::env::var_os(CONFIG_ENV).map(std::path::PathBuf::from);
        if let Some(p) = path.map(Path::to_path_buf).or(env_path) {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.net.validate()?;
        // Zero epochs is a valid run that only writes the initial checkpoint.
        TrainConfig { epochs: self.train.epochs.max(1), ..self.train.clone() }.validate()?;
        self.scene.validate()?;
        self.seg.validate()?;
        if self.scene.size != self.net.input_size {
            return Err(CliError::Config(format!(
                "scene.size ({}) must equal net.input_size ({})",
                self.scene.size, self.net.input_size
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes the resolved config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::write(dir.join(ECHO_FILE), self.to_text()).map_err(|e| CliError::io(dir.join(ECHO_FILE), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("train.learning_rate", "0.00123").unwrap();
        cfg.set("scene.radius", "5.5, 9").unwrap();
        cfg.set("seg.seed_source", "region").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "echo").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_listed_key_is_settable() {
        let cfg = RunConfig::default();
        let mut other = RunConfig::default();
        for (k, v) in cfg.entries() {
            other.set(k, &v).unwrap();
        }
        assert_eq!(other, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("train.epoch", "3"), Err(CliError::Config(_))));
        assert!(cfg.apply_text("net.depth 3", "x").is_err());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# header\n\ntrain.epochs = 7 # short run\n", "x").unwrap();
        assert_eq!(cfg.train.epochs, 7);
    }
}
