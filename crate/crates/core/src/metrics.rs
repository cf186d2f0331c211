//! Whole-image and per-cell Dice / MSE with mean ± standard deviation.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::plane::{LabeledMask, Mask};

/// Binary Dice (`ε = 0`, two empty masks score 1) and mean squared error.
pub fn image_metrics(pred: &Mask, gt: &Mask) -> Result<(f64, f64)> {
    if !pred.same_size(gt) {
        return Err(Error::Dimension(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (mut both, mut p, mut g, mut diff) = (0usize, 0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        both += (a && b) as usize;
        p += a as usize;
        g += b as usize;
        diff += (a != b) as usize;
    }
    let dice = if p + g == 0 { 1.0 } else { 2.0 * both as f64 / (p + g) as f64 };
    Ok((dice, diff as f64 / pred.len().max(1) as f64))
}

/// Score of one ground-truth cell against its matched prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetric {
    pub gt_label: u32,
    pub pred_label: Option<u32>,
    pub dice: f64,
    pub mse: f64,
}

/// Matches every ground-truth cell independently to the predicted cell with
/// the largest pixel overlap (ties: higher Dice, then nearer centroid, then
/// lower label). Without any overlap the nearest predicted centroid is used.
pub fn percell_metrics(pred: &LabeledMask, gt: &LabeledMask) -> Result<Vec<CellMetric>> {
    if pred.labels().width() != gt.labels().width() || pred.labels().height() != gt.labels().height() {
        return Err(Error::Dimension("prediction and ground truth differ in size".into()));
    }
    let (kp, kg) = (pred.count(), gt.count());
    let npix = gt.labels().len().max(1) as f64;
    // overlap[g][p] for g in 1..=kg, p in 1..=kp
    let mut overlap = vec![vec![0usize; kp + 1]; kg + 1];
    for (&g, &p) in gt.labels().data().iter().zip(pred.labels().data()) {
        overlap[g as usize][p as usize] += 1;
    }
    let mut out = Vec::with_capacity(kg);
    for g in 1..=kg {
        let ga = gt.area(g as u32);
        if kp == 0 {
            out.push(CellMetric { gt_label: g as u32, pred_label: None, dice: 0.0, mse: ga as f64 / npix });
            continue;
        }
        let gc = gt.centroid(g as u32);
        let centre_dist = |p: usize| {
            let c = pred.centroid(p as u32);
            (c.0 - gc.0).hypot(c.1 - gc.1)
        };
        let score = |p: usize| {
            let o = overlap[g][p];
            let pa = pred.area(p as u32);
            let dice = 2.0 * o as f64 / (ga + pa) as f64;
            let mse = (ga + pa - 2 * o) as f64 / npix;
            (o, dice, mse)
        };
        let best = (1..=kp)
            .min_by(|&a, &b| {
                let (oa, da, _) = score(a);
                let (ob, db, _) = score(b);
                ob.cmp(&oa)
                    .then(db.total_cmp(&da))
                    .then(centre_dist(a).total_cmp(&centre_dist(b)))
                    .then(a.cmp(&b))
            })
            .expect("at least one predicted cell");
        let (_, dice, mse) = score(best);
        out.push(CellMetric { gt_label: g as u32, pred_label: Some(best as u32), dice, mse });
    }
    Ok(out)
}

/// Evaluation of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub id: String,
    pub dice: f64,
    pub mse: f64,
    pub cells: Vec<CellMetric>,
}

pub fn evaluate_image(id: &str, pred: &LabeledMask, gt: &LabeledMask) -> Result<ImageEval> {
    let (dice, mse) = image_metrics(&pred.foreground(), &gt.foreground())?;
    Ok(ImageEval { id: id.to_string(), dice, mse, cells: percell_metrics(pred, gt)? })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidValue("cannot summarize an empty list".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt(), count: values.len() })
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4} (n = {})", self.mean, self.std, self.count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by image id.
    pub images: Vec<ImageEval>,
    pub image_dice: Summary,
    pub image_mse: Summary,
    /// `None` when no image has ground-truth cells.
    pub cell_dice: Option<Summary>,
    pub cell_mse: Option<Summary>,
}

/// Combines per-image results; the order of `items` does not matter.
pub fn aggregate(items: Vec<ImageEval>) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::InvalidValue("no images to aggregate".into()));
    }
    let mut images = items;
    images.sort_by(|a, b| a.id.cmp(&b.id));
    let dice: Vec<f64> = images.iter().map(|i| i.dice).collect();
    let mse: Vec<f64> = images.iter().map(|i| i.mse).collect();
    let cd: Vec<f64> = images.iter().flat_map(|i| i.cells.iter().map(|c| c.dice)).collect();
    let cm: Vec<f64> = images.iter().flat_map(|i| i.cells.iter().map(|c| c.mse)).collect();
    Ok(EvalReport {
        image_dice: Summary::of(&dice)?,
        image_mse: Summary::of(&mse)?,
        cell_dice: Summary::of(&cd).ok(),
        cell_mse: Summary::of(&cm).ok(),
        images,
    })
}

pub const IMAGE_CSV_HEADER: &str = "image,dice,mse";
pub const CELL_CSV_HEADER: &str = "image,gt_label,pred_label,dice,mse";
pub const SUMMARY_CSV_HEADER: &str = "scope,metric,mean,std,count";

impl EvalReport {
    /// Per-image rows.
    pub fn image_csv(&self) -> String {
        let mut s = format!("{IMAGE_CSV_HEADER}\n");
        for i in &self.images {
            let _ = writeln!(s, "{},{:.17e},{:.17e}", i.id, i.dice, i.mse);
        }
        s
    }

    /// Per-cell rows; an unmatched cell has an empty `pred_label`.
    pub fn cell_csv(&self) -> String {
        let mut s = format!("{CELL_CSV_HEADER}\n");
        for i in &self.images {
            for c in &i.cells {
                let p = c.pred_label.map(|p| p.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{},{},{},{:.17e},{:.17e}", i.id, c.gt_label, p, c.dice, c.mse);
            }
        }
        s
    }

    /// Two small tables: dataset averages and individual-cell averages.
    /// Aggregates at full precision; the cell rows are omitted when there are no cells.
    pub fn summary_csv(&self) -> String {
        let mut s = format!("{SUMMARY_CSV_HEADER}\n");
        let mut row = |scope: &str, metric: &str, v: &Summary| {
            let _ = writeln!(s, "{scope},{metric},{:.17e},{:.17e},{}", v.mean, v.std, v.count);
        };
        row("image", "dice", &self.image_dice);
        row("image", "mse", &self.image_mse);
        if let (Some(d), Some(m)) = (&self.cell_dice, &self.cell_mse) {
            row("cell", "dice", d);
            row("cell", "mse", m);
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Average error for the dataset ({} images)", self.images.len());
        let _ = writeln!(s, "  dice  {}", self.image_dice);
        let _ = writeln!(s, "  mse   {}", self.image_mse);
        let _ = writeln!(s, "Average error for individual cells");
        match (&self.cell_dice, &self.cell_mse) {
            (Some(d), Some(m)) => {
                let _ = writeln!(s, "  dice  {d}");
                let _ = writeln!(s, "  mse   {m}");
            }
            _ => {
                let _ = writeln!(s, "  (no ground-truth cells)");
            }
        }
        s
    }
}
