//! Region (J), contour (F) and temporal-stability metrics.

use std::fmt::Write as _;

use crate::error::{shape_err, Error, Result};
use crate::formats::Mask;

/// IoU with the conventions: both empty → 1, exactly one empty → 0.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    check_pair(a, b)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

fn check_pair(a: &Mask, b: &Mask) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(shape_err!(
            "mask {}×{} vs {}×{}",
            a.height,
            a.width,
            b.height,
            b.width
        ));
    }
    Ok(())
}

fn check_trajectories(pred: &[Mask], gt: &[Mask]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(shape_err!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(Error::Input("empty trajectory".into()));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-frame IoU and their mean ×100.
pub fn jaccard(pred: &[Mask], gt: &[Mask]) -> Result<(Vec<f64>, f64)> {
    check_trajectories(pred, gt)?;
    let per = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect::<Result<Vec<_>>>()?;
    let m = 100.0 * mean(&per);
    Ok((per, m))
}

/// Foreground pixels with at least one 4-neighbour in the background;
/// pixels outside the image count as background.
pub fn boundary(m: &Mask) -> Mask {
    let (h, w) = (m.height, m.width);
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !m.get(y, x) {
                continue;
            }
            let interior = y > 0 && x > 0 && y + 1 < h && x + 1 < w
                && m.get(y - 1, x)
                && m.get(y + 1, x)
                && m.get(y, x - 1)
                && m.get(y, x + 1);
            out[y * w + x] = !interior;
        }
    }
    Mask { height: h, width: w, data: out }
}

/// Match radius in pixels: `ceil(0.008 · diagonal)`.
pub fn boundary_tolerance(height: usize, width: usize) -> usize {
    (0.008 * ((height * height + width * width) as f64).sqrt()).ceil() as usize
}

/// Fraction of `from`'s boundary pixels lying within Euclidean distance
/// `r` of some boundary pixel of `to`.
fn matched_fraction(from: &Mask, to: &Mask, r: usize) -> f64 {
    let (h, w) = (from.height as i64, from.width as i64);
    let r = r as i64;
    let mut total = 0usize;
    let mut hit = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !from.get(y as usize, x as usize) {
                continue;
            }
            total += 1;
            let found = (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (yy, xx) = (y + dy, x + dx);
                    dx * dx + dy * dy <= r * r
                        && yy >= 0
                        && xx >= 0
                        && yy < h
                        && xx < w
                        && to.get(yy as usize, xx as usize)
                })
            });
            hit += found as usize;
        }
    }
    hit as f64 / total as f64
}

/// Contour F-measure of one frame at tolerance `r`.
pub fn boundary_f_frame(pred: &Mask, gt: &Mask, r: usize) -> Result<f64> {
    check_pair(pred, gt)?;
    let (bp, bg) = (boundary(pred), boundary(gt));
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let precision = matched_fraction(&bp, &bg, r);
    let recall = matched_fraction(&bg, &bp, r);
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// Per-frame F at the standard tolerance and their mean ×100.
pub fn boundary_f(pred: &[Mask], gt: &[Mask]) -> Result<(Vec<f64>, f64)> {
    check_trajectories(pred, gt)?;
    let r = boundary_tolerance(gt[0].height, gt[0].width);
    let per = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| boundary_f_frame(p, g, r))
        .collect::<Result<Vec<_>>>()?;
    let m = 100.0 * mean(&per);
    Ok((per, m))
}

/// Mean IoU between consecutive predictions ×100.
pub fn avg_iou_adjacent(pred: &[Mask]) -> Result<f64> {
    if pred.len() < 2 {
        return Err(Error::Input(format!(
            "adjacent-frame IoU needs at least 2 frames, got {}",
            pred.len()
        )));
    }
    let per = pred.windows(2).map(|w| iou(&w[0], &w[1])).collect::<Result<Vec<_>>>()?;
    Ok(100.0 * mean(&per))
}

/// Population variance of the per-frame IoU against ground truth ×100.
pub fn t_iou_var(pred: &[Mask], gt: &[Mask]) -> Result<f64> {
    let (per, _) = jaccard(pred, gt)?;
    let m = mean(&per);
    let var = per.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / per.len() as f64;
    Ok(100.0 * var)
}

/// `(Avg-IoU_adjacent, T-IoU-Var)`.
pub fn temporal_metrics(pred: &[Mask], gt: &[Mask]) -> Result<(f64, f64)> {
    check_trajectories(pred, gt)?;
    Ok((avg_iou_adjacent(pred)?, t_iou_var(pred, gt)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoReport {
    pub name: String,
    pub frames: usize,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    /// Absent for single-frame videos.
    pub avg_iou_adj: Option<f64>,
    pub t_iou_var: f64,
}

pub fn evaluate_video(name: &str, pred: &[Mask], gt: &[Mask]) -> Result<VideoReport> {
    let (_, j) = jaccard(pred, gt)?;
    let (_, f) = boundary_f(pred, gt)?;
    let avg_iou_adj = if pred.len() >= 2 { Some(avg_iou_adjacent(pred)?) } else { None };
    Ok(VideoReport {
        name: name.to_string(),
        frames: pred.len(),
        j,
        f,
        jf: (j + f) / 2.0,
        avg_iou_adj,
        t_iou_var: t_iou_var(pred, gt)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub videos: Vec<VideoReport>,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub avg_iou_adj: Option<f64>,
    pub t_iou_var: f64,
}

impl MetricReport {
    pub fn new(videos: Vec<VideoReport>) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::Input("no videos to report".into()));
        }
        let avg = |f: &dyn Fn(&VideoReport) -> f64| mean(&videos.iter().map(f).collect::<Vec<_>>());
        let j = avg(&|v| v.j);
        let f = avg(&|v| v.f);
        let adj: Vec<f64> = videos.iter().filter_map(|v| v.avg_iou_adj).collect();
        Ok(MetricReport {
            j,
            f,
            jf: (j + f) / 2.0,
            avg_iou_adj: (!adj.is_empty()).then(|| mean(&adj)),
            t_iou_var: avg(&|v| v.t_iou_var),
            videos,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("video,frames,J,F,J&F,avg_iou_adj,t_iou_var\n");
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.4}"));
        for v in &self.videos {
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.4},{:.4},{},{:.4}",
                v.name,
                v.frames,
                v.j,
                v.f,
                v.jf,
                opt(v.avg_iou_adj),
                v.t_iou_var
            );
        }
        let _ = writeln!(
            s,
            "mean,,{:.4},{:.4},{:.4},{},{:.4}",
            self.j,
            self.f,
            self.jf,
            opt(self.avg_iou_adj),
            self.t_iou_var
        );
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.videos.iter().map(|v| v.name.len()).max().unwrap_or(0).max(5);
        let mut s = format!(
            "{:<width$} {:>6} {:>7} {:>7} {:>7} {:>8} {:>8}\n",
            "video", "frames", "J", "F", "J&F", "IoU_adj", "T-Var"
        );
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
        for v in &self.videos {
            let _ = writeln!(
                s,
                "{:<width$} {:>6} {:>7.2} {:>7.2} {:>7.2} {:>8} {:>8.2}",
                v.name,
                v.frames,
                v.j,
                v.f,
                v.jf,
                opt(v.avg_iou_adj),
                v.t_iou_var
            );
        }
        let _ = writeln!(
            s,
            "{:<width$} {:>6} {:>7.2} {:>7.2} {:>7.2} {:>8} {:>8.2}",
            "mean",
            "",
            self.j,
            self.f,
            self.jf,
            opt(self.avg_iou_adj),
            self.t_iou_var
        );
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LengthBucket {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    /// `None` when no video falls in the bucket.
    pub mean_jf: Option<f64>,
}

/// Mean J&F of videos with frame count in `[edges[i], edges[i+1])`.
pub fn length_buckets(reports: &[VideoReport], edges: &[usize]) -> Result<Vec<LengthBucket>> {
    if edges.len() < 2 {
        return Err(Error::Input("length buckets need at least two edges".into()));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input(format!("bucket edges {edges:?} are not strictly increasing")));
    }
    Ok(edges
        .windows(2)
        .map(|w| {
            let scores: Vec<f64> = reports
                .iter()
                .filter(|r| r.frames >= w[0] && r.frames < w[1])
                .map(|r| r.jf)
                .collect();
            LengthBucket {
                lo: w[0],
                hi: w[1],
                count: scores.len(),
                mean_jf: (!scores.is_empty()).then(|| mean(&scores)),
            }
        })
        .collect())
}

pub fn buckets_table(buckets: &[LengthBucket]) -> String {
    let mut s = String::from("frames      videos   J&F\n");
    for b in buckets {
        let v = b.mean_jf.map_or("absent".to_string(), |x| format!("{x:.2}"));
        let _ = writeln!(s, "[{:>3},{:>3})  {:>6}  {v}", b.lo, b.hi, b.count);
    }
    s
}
