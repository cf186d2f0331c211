use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use cellseg_core::metrics::{aggregate, evaluate_image};
use cellseg_core::network::{ModelParams, NetConfig};
use cellseg_core::plane::{LabeledMask, Plane};
use cellseg_core::segmenter::{segment, SegmenterParams};
use cellseg_core::synthdata::{generate_set, scene_seed};
use cellseg_core::trainer::checkpoint::{load_checkpoint, peek_config, save_checkpoint};
use cellseg_core::trainer::{grid_to_plane, normalize_image, plane_to_grid, train_epoch, TrainSample, TrainState, LOG_HEADER};
use cellseg_core::{Precision, Scalar};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io;
use crate::overlay::render_overlay;

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "id,split,image,mask,seed";
pub const FINAL_CHECKPOINT: &str = "checkpoint.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";

// ---------------------------------------------------------------- gen-data

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    io::create_dir(out)?;
    cfg.echo(out)?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    let splits = [
        ("train", cfg.data.train_seed, cfg.data.train_count),
        ("test", cfg.data.test_seed, cfg.data.test_count),
    ];
    for (split, base, count) in splits {
        io::create_dir(&out.join(split).join("images"))?;
        io::create_dir(&out.join(split).join("masks"))?;
        let scenes = generate_set(&cfg.scene, base, count)?;
        for (i, scene) in scenes.iter().enumerate() {
            let id = format!("{split}-{i:04}");
            let image = format!("{split}/images/{id}.png");
            let mask = format!("{split}/masks/{id}.png");
            io::write_unit_plane(&out.join(&image), &scene.image)?;
            io::write_labels(&out.join(&mask), &scene.labels)?;
            manifest.push_str(&format!("{id},{split},{image},{mask},{}\n", scene_seed(base, i)));
        }
    }
    io::write_text(&out.join(MANIFEST), &manifest)
}

pub struct ManifestRow {
    pub id: String,
    pub split: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>, CliError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(CliError::Data(format!("{}: expected header `{MANIFEST_HEADER}`", path.display())));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || CliError::Data(format!("{}:{}: malformed row `{line}`", path.display(), i + 2));
            if f.len() != 5 || f[4].parse::<u64>().is_err() {
                return Err(bad());
            }
            Ok(ManifestRow {
                id: f[0].to_owned(),
                split: f[1].to_owned(),
                image: dir.join(f[2]),
                mask: dir.join(f[3]),
            })
        })
        .collect()
}

fn load_split(dir: &Path, split: &str, cfg: &RunConfig) -> Result<Vec<TrainSample>, CliError> {
    let rows: Vec<ManifestRow> = read_manifest(dir)?.into_iter().filter(|r| r.split == split).collect();
    if rows.is_empty() {
        return Err(CliError::Data(format!("{}: no `{split}` rows in manifest", dir.display())));
    }
    rows.iter()
        .map(|r| {
            let image = io::read_image(&r.image)?;
            let labels = io::read_labels(&r.mask)?;
            check_size(&r.image, image.width(), image.height(), cfg.net.input_size)?;
            if !labels.labels().same_size(&image) {
                return Err(CliError::Data(format!("{}: mask size differs from image", r.id)));
            }
            Ok(TrainSample::from_instances(&image, &labels, cfg.train.edge_sigma)?)
        })
        .collect()
}

fn check_size(path: &Path, w: usize, h: usize, n: usize) -> Result<(), CliError> {
    if w != n || h != n {
        return Err(CliError::Data(format!("{}: image is {w}x{h}, network expects {n}x{n}", path.display())));
    }
    Ok(())
}

// ---------------------------------------------------------------- train

pub fn train(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    match cfg.net.precision {
        Precision::F32 => train_as::<f32>(cfg, data, out, resume),
        Precision::F64 => train_as::<f64>(cfg, data, out, resume),
    }
}

fn train_as<T: Scalar>(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    let samples = load_split(data, "train", cfg)?;
    let mut state = match resume {
        Some(p) => load_checkpoint::<T>(p, Some(&cfg.net))?,
        None => TrainState::new(ModelParams::<T>::build(cfg.net, cfg.init_seed)?, &cfg.train),
    };
    io::create_dir(out)?;
    cfg.echo(out)?;
    let log_path = out.join(TRAIN_LOG);
    if resume.is_none() || !log_path.exists() {
        io::write_text(&log_path, &format!("{LOG_HEADER}\n"))?;
    }
    let mut log = OpenOptions::new().append(true).open(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    while state.epoch < cfg.train.epochs {
        let stats = train_epoch(&mut state, &samples, &cfg.train)?;
        let rows: String = stats.records.iter().map(|r| r.csv_row() + "\n").collect();
        log.write_all(rows.as_bytes()).map_err(|e| CliError::io(&log_path, e))?;
        eprintln!(
            "epoch {:>4}  E1 {:.5}  E2 {:.5}  E {:.5}  lambda {:.5}",
            stats.epoch, stats.mean_e1, stats.mean_e2, stats.mean_energy, state.weights.lambda()
        );
        if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 && state.epoch < cfg.train.epochs {
            let dir = out.join("checkpoints");
            io::create_dir(&dir)?;
            save_checkpoint(&state, &dir.join(format!("epoch_{:05}.ckpt", state.epoch)))?;
        }
    }
    save_checkpoint(&state, &out.join(FINAL_CHECKPOINT))?;
    Ok(())
}

// ---------------------------------------------------------------- predict

/// Probability maps for one image, passed through the 16-bit file quantisation.
pub struct Maps {
    pub region: Plane<f64>,
    pub edge: Plane<f64>,
}

impl Maps {
    fn quantized(region: Plane<f64>, edge: Plane<f64>) -> Self {
        let q = |p: &Plane<f64>| p.map(|v| io::dequantize(io::quantize(v)));
        Self { region: q(&region), edge: q(&edge) }
    }

    pub fn paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
        (dir.join(format!("{id}_region.png")), dir.join(format!("{id}_edge.png")))
    }

    pub fn read(dir: &Path, id: &str) -> Result<Self, CliError> {
        let (r, e) = Self::paths(dir, id);
        let maps = Self { region: io::read_unit_plane(&r)?, edge: io::read_unit_plane(&e)? };
        if !maps.region.same_size(&maps.edge) {
            return Err(CliError::Data(format!("{id}: region and edge maps differ in size")));
        }
        Ok(maps)
    }

    pub fn write(&self, dir: &Path, id: &str) -> Result<(), CliError> {
        let (r, e) = Self::paths(dir, id);
        io::write_unit_plane(&r, &self.region)?;
        io::write_unit_plane(&e, &self.edge)
    }
}

enum AnyParams {
    F32(ModelParams<f32>),
    F64(ModelParams<f64>),
}

fn load_params(path: &Path) -> Result<AnyParams, CliError> {
    let net: NetConfig = peek_config(path)?;
    Ok(match net.precision {
        Precision::F32 => AnyParams::F32(load_checkpoint::<f32>(path, None)?.params),
        Precision::F64 => AnyParams::F64(load_checkpoint::<f64>(path, None)?.params),
    })
}

fn predict_with<T: Scalar>(params: &ModelParams<T>, path: &Path, image: &Plane<f64>) -> Result<Maps, CliError> {
    check_size(path, image.width(), image.height(), params.config().input_size)?;
    let (fr, fe) = params.predict(&plane_to_grid::<T>(&normalize_image(image))?)?;
    Ok(Maps::quantized(grid_to_plane(&fr)?, grid_to_plane(&fe)?))
}

fn predict_one(params: &AnyParams, path: &Path, image: &Plane<f64>) -> Result<Maps, CliError> {
    match params {
        AnyParams::F32(p) => predict_with(p, path, image),
        AnyParams::F64(p) => predict_with(p, path, image),
    }
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path, images: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let params = load_params(checkpoint)?;
    io::create_dir(out)?;
    cfg.echo(out)?;
    for path in images {
        let image = io::read_image(path)?;
        predict_one(&params, path, &image)?.write(out, &io::stem(path)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- segment

pub enum MapSource<'a> {
    Checkpoint(&'a Path),
    Maps(&'a Path),
}

pub fn segment_images(cfg: &RunConfig, source: MapSource<'_>, images: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let params = match source {
        MapSource::Checkpoint(p) => Some(load_params(p)?),
        MapSource::Maps(_) => None,
    };
    io::create_dir(&out.join("labels"))?;
    io::create_dir(&out.join("overlays"))?;
    cfg.echo(out)?;
    for path in images {
        let id = io::stem(path)?;
        let image = io::read_image(path)?;
        let maps = match (&params, &source) {
            (Some(p), _) => predict_one(p, path, &image)?,
            (None, MapSource::Maps(dir)) => Maps::read(dir, &id)?,
            (None, MapSource::Checkpoint(_)) => unreachable!("checkpoint source always loads parameters"),
        };
        if !maps.region.same_size(&image) {
            return Err(CliError::Data(format!("{id}: maps do not match the image size")));
        }
        let labels = segment_maps(&maps, &cfg.seg)?;
        io::write_labels(&out.join("labels").join(format!("{id}.png")), &labels)?;
        let rgb = render_overlay(&image, &labels);
        io::write_rgb8(&out.join("overlays").join(format!("{id}.png")), image.width(), image.height(), &rgb)?;
        eprintln!("{id}: {} cells", labels.count());
    }
    Ok(())
}

pub fn segment_maps(maps: &Maps, params: &SegmenterParams) -> Result<LabeledMask, CliError> {
    Ok(segment(&maps.region, &maps.edge, params)?.labels)
}

// ---------------------------------------------------------------- eval

fn png_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            files.insert(io::stem(&path)?, path);
        }
    }
    Ok(files)
}

pub fn eval(pred_dir: &Path, gt_dir: &Path, out: &Path) -> Result<(), CliError> {
    let pred = png_files(pred_dir)?;
    let gt = png_files(gt_dir)?;
    let only_pred: Vec<&String> = pred.keys().filter(|k| !gt.contains_key(*k)).collect();
    let only_gt: Vec<&String> = gt.keys().filter(|k| !pred.contains_key(*k)).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        let list = |v: &[&String]| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
        return Err(CliError::Data(format!(
            "unmatched files; only in predictions: [{}]; only in ground truth: [{}]",
            list(&only_pred),
            list(&only_gt)
        )));
    }
    let mut evals = Vec::with_capacity(pred.len());
    for (id, p) in &pred {
        let pm = io::read_labels(p)?;
        let gm = io::read_labels(&gt[id])?;
        evals.push(evaluate_image(id, &pm, &gm)?);
    }
    let report = aggregate(evals)?;
    io::create_dir(out)?;
    io::write_text(&out.join("image_metrics.csv"), &report.image_csv())?;
    io::write_text(&out.join("cell_metrics.csv"), &report.cell_csv())?;
    io::write_text(&out.join("summary.csv"), &report.summary_csv())?;
    let summary = report.summary_text();
    io::write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use cellseg_core::imgproc::gaussian_blur;
    use cellseg_core::metrics::image_metrics;
    use cellseg_core::synthdata::{generate, SceneSpec};

    use super::*;

    /// Passing maps through the 16-bit files moves whole-image dice by < 1e-3.
    #[test]
    fn map_quantization_barely_moves_dice() {
        let params = SegmenterParams::default();
        for seed in 0..8 {
            let scene = generate(&SceneSpec { seed, ..SceneSpec::default() }).unwrap();
            let region = gaussian_blur(&scene.region, 1.0);
            let exact = segment(&region, &scene.edge, &params).unwrap().labels;
            let maps = Maps::quantized(region.clone(), scene.edge.clone());
            let quant = segment_maps(&maps, &params).unwrap();
            let gt = scene.labels.foreground();
            let (d0, _) = image_metrics(&exact.foreground(), &gt).unwrap();
            let (d1, _) = image_metrics(&quant.foreground(), &gt).unwrap();
            assert!((d0 - d1).abs() < 1e-3, "seed {seed}: {d0} vs {d1}");
        }
    }

    #[test]
    fn quantize_round_trip_within_half_step() {
        for i in 0..=1000 {
            let v = i as f64 / 1000.0;
            assert!((io::dequantize(io::quantize(v)) - v).abs() <= 0.5 / io::MAP_SCALE + 1e-15);
        }
        assert_eq!(io::quantize(1.0), u16::MAX);
        assert_eq!(io::quantize(-0.2), 0);
    }
}
