//! Fixed linear resampling over a spatial grid: ROI-align, bilinear
//! upsampling and average pooling all reduce to a sparse matrix that maps
//! input locations to output locations, applied identically to every
//! channel.

use crate::error::{Error, Result};

/// Axis-aligned box in normalised image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl NormBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let ok = [x0, y0, x1, y1].iter().all(|v| v.is_finite())
            && (0.0..=1.0).contains(&x0)
            && (0.0..=1.0).contains(&y0)
            && (0.0..=1.0).contains(&x1)
            && (0.0..=1.0).contains(&y1);
        if !ok {
            return Err(Error::Input(format!(
                "box [{x0}, {y0}, {x1}, {y1}] outside the unit square"
            )));
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Input(format!(
                "degenerate box [{x0}, {y0}, {x1}, {y1}]"
            )));
        }
        Ok(NormBox { x0, y0, x1, y1 })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

#[derive(Clone, Debug)]
pub struct ResamplePlan {
    pub in_rows: usize,
    pub out_rows: usize,
    /// For each output location, the (input location, weight) taps.
    pub taps: Vec<Vec<(usize, f64)>>,
}

/// Bilinear taps for a sample at continuous index coordinates `(y, x)` on an
/// `h × w` grid whose cell centres sit at integer coordinates. Coordinates are
/// clamped to the grid.
pub fn bilinear_taps(y: f64, x: f64, h: usize, w: usize) -> Vec<(usize, f64)> {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ly = y - y0 as f64;
    let lx = x - x0 as f64;
    let mut taps = Vec::with_capacity(4);
    let mut push = |idx: usize, wgt: f64| {
        if wgt != 0.0 {
            if let Some(t) = taps.iter_mut().find(|t: &&mut (usize, f64)| t.0 == idx) {
                t.1 += wgt;
            } else {
                taps.push((idx, wgt));
            }
        }
    };
    push(y0 * w + x0, (1.0 - ly) * (1.0 - lx));
    push(y0 * w + x1, (1.0 - ly) * lx);
    push(y1 * w + x0, ly * (1.0 - lx));
    push(y1 * w + x1, ly * lx);
    taps
}

impl ResamplePlan {
    /// ROI-align with one bilinear sample at the centre of each of the
    /// `out × out` bins. Feature cell `(i, j)` covers `[j, j+1) × [i, i+1)` in
    /// feature units, so its centre is at `(i + 0.5, j + 0.5)`.
    pub fn roi_align(h: usize, w: usize, b: &NormBox, out: usize) -> Result<Self> {
        if out == 0 {
            return Err(Error::Input("roi_align output size must be positive".into()));
        }
        let (bx0, by0) = (b.x0 * w as f64, b.y0 * h as f64);
        let bin_w = (b.x1 - b.x0) * w as f64 / out as f64;
        let bin_h = (b.y1 - b.y0) * h as f64 / out as f64;
        let mut taps = Vec::with_capacity(out * out);
        for i in 0..out {
            let cy = by0 + (i as f64 + 0.5) * bin_h;
            for j in 0..out {
                let cx = bx0 + (j as f64 + 0.5) * bin_w;
                taps.push(bilinear_taps(cy - 0.5, cx - 0.5, h, w));
            }
        }
        Ok(ResamplePlan {
            in_rows: h * w,
            out_rows: out * out,
            taps,
        })
    }

    /// Bilinear upsampling of an `h × w` grid by an integer factor, half-pixel
    /// centred (no corner alignment).
    pub fn upsample(h: usize, w: usize, factor: usize) -> Self {
        let (oh, ow) = (h * factor, w * factor);
        let f = factor as f64;
        let mut taps = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            let sy = (y as f64 + 0.5) / f - 0.5;
            for x in 0..ow {
                let sx = (x as f64 + 0.5) / f - 0.5;
                taps.push(bilinear_taps(sy, sx, h, w));
            }
        }
        ResamplePlan {
            in_rows: h * w,
            out_rows: oh * ow,
            taps,
        }
    }

    /// Non-overlapping `factor × factor` average pooling of an `h × w` grid.
    pub fn avg_pool(h: usize, w: usize, factor: usize) -> Result<Self> {
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!(
                "{h}×{w} grid is not divisible by pooling factor {factor}"
            )));
        }
        let (oh, ow) = (h / factor, w / factor);
        let wgt = 1.0 / (factor * factor) as f64;
        let mut taps = Vec::with_capacity(oh * ow);
        for i in 0..oh {
            for j in 0..ow {
                let mut t = Vec::with_capacity(factor * factor);
                for di in 0..factor {
                    for dj in 0..factor {
                        t.push(((i * factor + di) * w + j * factor + dj, wgt));
                    }
                }
                taps.push(t);
            }
        }
        Ok(ResamplePlan {
            in_rows: h * w,
            out_rows: oh * ow,
            taps,
        })
    }

    /// Apply to a `in_rows × c` buffer.
    pub fn apply(&self, input: &[f64], c: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.out_rows * c];
        for (o, taps) in self.taps.iter().enumerate() {
            let orow = &mut out[o * c..(o + 1) * c];
            for &(i, w) in taps {
                let irow = &input[i * c..(i + 1) * c];
                for (ov, &iv) in orow.iter_mut().zip(irow) {
                    *ov += w * iv;
                }
            }
        }
        out
    }

    /// Transpose application, used for the backward pass.
    pub fn apply_transpose_acc(&self, grad_out: &[f64], c: usize, grad_in: &mut [f64]) {
        for (o, taps) in self.taps.iter().enumerate() {
            let grow = &grad_out[o * c..(o + 1) * c];
            for &(i, w) in taps {
                let irow = &mut grad_in[i * c..(i + 1) * c];
                for (iv, &gv) in irow.iter_mut().zip(grow) {
                    *iv += w * gv;
                }
            }
        }
    }
}
