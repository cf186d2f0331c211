use rand::Rng;

use super::TrainSample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    /// Random affine gain/offset followed by a random gamma.
    pub intensity: bool,
    pub gain_range: (f64, f64),
    pub offset_range: (f64, f64),
    pub gamma_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            intensity: true,
            gain_range: (0.8, 1.2),
            offset_range: (-0.1, 0.1),
            gamma_range: (0.7, 1.5),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { hflip: false, vflip: false, intensity: false, ..Self::default() }
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPlan {
    pub hflip: bool,
    pub vflip: bool,
    pub gain: f64,
    pub offset: f64,
    pub gamma: f64,
}

impl AugmentPlan {
    pub fn identity() -> Self {
        Self { hflip: false, vflip: false, gain: 1.0, offset: 0.0, gamma: 1.0 }
    }

    pub fn draw<R: Rng + ?Sized>(config: &AugmentConfig, rng: &mut R) -> Self {
        // draw every field unconditionally so the stream does not depend on toggles
        let hflip = rng.random_bool(0.5);
        let vflip = rng.random_bool(0.5);
        let gain = rng.random_range(config.gain_range.0..=config.gain_range.1);
        let offset = rng.random_range(config.offset_range.0..=config.offset_range.1);
        let gamma = rng.random_range(config.gamma_range.0..=config.gamma_range.1);
        if config.intensity {
            Self { hflip: hflip && config.hflip, vflip: vflip && config.vflip, gain, offset, gamma }
        } else {
            Self { hflip: hflip && config.hflip, vflip: vflip && config.vflip, ..Self::identity() }
        }
    }

    /// Maps one normalized intensity: `clip(gain·x + offset)^gamma`.
    pub fn intensity(&self, x: f64) -> f64 {
        (self.gain * x + self.offset).clamp(0.0, 1.0).powf(self.gamma)
    }
}

/// Applies flips to every raster of the sample and intensity changes to the image only.
pub fn augment(sample: &TrainSample, plan: &AugmentPlan) -> TrainSample {
    let mut out = sample.clone();
    if plan.hflip {
        out.image = out.image.flip_horizontal();
        out.region = out.region.flip_horizontal();
        out.edge = out.edge.flip_horizontal();
        out.labels = out.labels.map(|l| l.flip_horizontal());
    }
    if plan.vflip {
        out.image = out.image.flip_vertical();
        out.region = out.region.flip_vertical();
        out.edge = out.edge.flip_vertical();
        out.labels = out.labels.map(|l| l.flip_vertical());
    }
    if (plan.gain, plan.offset, plan.gamma) != (1.0, 0.0, 1.0) {
        out.image = out.image.map(|v| plan.intensity(v));
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::plane::Plane;

    fn sample() -> TrainSample {
        let image = Plane::from_fn(4, 3, |x, y| (x + 4 * y) as f64 / 12.0);
        let region = Plane::from_fn(4, 3, |x, _| if x < 2 { 1.0 } else { 0.0 });
        let edge = Plane::from_fn(4, 3, |x, _| if x == 1 || x == 2 { 1.0 } else { 0.0 });
        TrainSample::new(image, region, edge, None).unwrap()
    }

    #[test]
    fn identity_plan_is_a_no_op() {
        let s = sample();
        assert_eq!(augment(&s, &AugmentPlan::identity()), s);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = AugmentPlan::draw(&AugmentConfig::disabled(), &mut rng);
        assert_eq!(plan, AugmentPlan::identity());
    }

    #[test]
    fn double_flip_restores() {
        let s = sample();
        let plan = AugmentPlan { hflip: true, ..AugmentPlan::identity() };
        let once = augment(&s, &plan);
        assert_ne!(once, s);
        assert_eq!(once.region.get(3, 0), 1.0);
        assert_eq!(augment(&once, &plan), s);
    }

    #[test]
    fn gamma_two() {
        let plan = AugmentPlan { gamma: 2.0, ..AugmentPlan::identity() };
        let got: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|&v| plan.intensity(v)).collect();
        assert_eq!(got, vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn intensity_touches_image_only() {
        let s = sample();
        let plan = AugmentPlan { gain: 1.5, offset: 0.1, gamma: 0.8, ..AugmentPlan::identity() };
        let a = augment(&s, &plan);
        assert_eq!(a.region, s.region);
        assert_eq!(a.edge, s.edge);
        assert!(a.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(a.image, s.image);
    }
}
