//! Instance refinement: seeds from the maps, coupled active contours pushed
//! outward by `F_s = f_r · (1 - f_e)`, then rasterization to a labeled mask.

mod contour;
mod raster;
mod seeds;

pub use contour::{evolve, point_segment_distance, polygon_is_simple, Contour, ForceField, Point, SnakeParams, MIN_VERTICES};
pub use raster::{fill, rasterize, RasterStats};
pub use seeds::{detect_seeds, Seed, SeedParams};

use crate::error::{Error, Result};
use crate::plane::{LabeledMask, Plane};

/// Map thresholded for seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSource {
    /// `f_r` alone.
    Region,
    /// `f_r · (1 - f_e)`, which cuts touching cells apart along their shared edge.
    ForceField,
}

impl std::str::FromStr for SeedSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "region" => Ok(Self::Region),
            "force" | "force-field" => Ok(Self::ForceField),
            other => Err(format!("unknown seed source `{other}` (expected region or force)")),
        }
    }
}

impl std::fmt::Display for SeedSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Region => "region",
            Self::ForceField => "force",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmenterParams {
    pub seeds: SeedParams,
    pub seed_source: SeedSource,
    pub snake: SnakeParams,
    pub min_cell_area: usize,
}

impl Default for SegmenterParams {
    fn default() -> Self {
        Self {
            seeds: SeedParams::default(),
            seed_source: SeedSource::ForceField,
            snake: SnakeParams::default(),
            min_cell_area: 30,
        }
    }
}

impl SegmenterParams {
    pub fn validate(&self) -> Result<()> {
        let s = &self.snake;
        let ok = s.step > 0.0
            && s.curvature >= 0.0
            && s.curvature < 0.5
            && s.spacing > 0.0
            && s.stop_threshold >= 0.0
            && s.d_min >= 0.0
            && s.tol > 0.0
            && s.window >= 1
            && self.seeds.radius_factor > 0.0
            && self.seeds.peak_separation >= 0.0
            && self.seeds.peak_prominence >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("segmenter parameters out of range".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub labels: LabeledMask,
    pub seeds: Vec<Seed>,
    pub contours: Vec<Contour>,
    /// Contours that hit the iteration cap.
    pub unconverged: usize,
    pub raster: RasterStats,
}

/// Seeds, contour evolution and rasterization; a pure function of its inputs.
pub fn segment(f_r: &Plane<f64>, f_e: &Plane<f64>, params: &SegmenterParams) -> Result<Segmentation> {
    params.validate()?;
    let field = ForceField::new(f_r, f_e)?;
    let seed_map = match params.seed_source {
        SeedSource::Region => f_r,
        SeedSource::ForceField => field.plane(),
    };
    let seeds = detect_seeds(seed_map, &params.seeds);
    let initial = seeds.iter().map(|s| Contour::circle(s.x, s.y, s.radius, params.snake.spacing)).collect();
    let contours = evolve(initial, &field, &params.snake);
    let unconverged = contours.iter().filter(|c| !c.converged).count();
    let (labels, raster) = rasterize(&contours, f_r.width(), f_r.height(), params.min_cell_area);
    Ok(Segmentation { labels, seeds, contours, unconverged, raster })
}
