//! Object-proposal geometry: boxes, IoU, projection from input frames onto
//! the feature grid, and RoIAlign pooling of a feature volume into one
//! vector per proposal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `(x1, y1) .. (x2, y2)` in the units of whatever frame it
/// was declared in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BoundingBox { x1, y1, x2, y2 };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite box {b:?}")));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::Invalid(format!("inverted box {b:?}")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BoundingBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        BoundingBox {
            x1: self.x1 * s,
            y1: self.y1 * s,
            x2: self.x2 * s,
            y2: self.y2 * s,
        }
    }

    fn clip(&self, width: f64, height: f64) -> Self {
        BoundingBox {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// A graph node: a box on one feature frame plus its feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    pub frame: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub feature: Vec<f64>,
    #[serde(default)]
    pub source_id: String,
}

/// Dense `T x H x W x C` feature map, channel-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    t_dim: usize,
    h_dim: usize,
    w_dim: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureVolume {
    pub fn new(
        t_dim: usize,
        h_dim: usize,
        w_dim: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != t_dim * h_dim * w_dim * channels {
            return Err(Error::Length {
                op: "FeatureVolume::new",
                left: t_dim * h_dim * w_dim * channels,
                right: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature volume".into()));
        }
        Ok(FeatureVolume {
            t_dim,
            h_dim,
            w_dim,
            channels,
            data,
        })
    }

    pub fn zeros(t_dim: usize, h_dim: usize, w_dim: usize, channels: usize) -> Self {
        FeatureVolume {
            t_dim,
            h_dim,
            w_dim,
            channels,
            data: vec![0.0; t_dim * h_dim * w_dim * channels],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.t_dim, self.h_dim, self.w_dim, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn offset(&self, t: usize, y: usize, x: usize) -> usize {
        ((t * self.h_dim + y) * self.w_dim + x) * self.channels
    }

    /// Channel vector of one cell.
    pub fn cell(&self, t: usize, y: usize, x: usize) -> &[f64] {
        let o = self.offset(t, y, x);
        &self.data[o..o + self.channels]
    }

    pub fn cell_mut(&mut self, t: usize, y: usize, x: usize) -> &mut [f64] {
        let o = self.offset(t, y, x);
        &mut self.data[o..o + self.channels]
    }

    /// Mean over every cell of every frame: the whole-video pooled feature.
    pub fn mean_all(&self) -> Vec<f64> {
        let cells = self.t_dim * self.h_dim * self.w_dim;
        let mut acc = vec![0.0; self.channels];
        for cell in self.data.chunks_exact(self.channels.max(1)) {
            for (a, v) in acc.iter_mut().zip(cell) {
                *a += v;
            }
        }
        if cells > 0 {
            acc.iter_mut().for_each(|a| *a /= cells as f64);
        }
        acc
    }

    /// Bilinear sample at continuous point `(px, py)` of frame `t`. Cell
    /// `(x, y)` holds the value at `(x + 0.5, y + 0.5)`; points beyond the
    /// outermost centers clamp to the border.
    pub fn bilinear(&self, t: usize, px: f64, py: f64, out: &mut [f64]) {
        let fx = (px - 0.5).clamp(0.0, (self.w_dim - 1) as f64);
        let fy = (py - 0.5).clamp(0.0, (self.h_dim - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.w_dim - 1);
        let y1 = (y0 + 1).min(self.h_dim - 1);
        let lx = fx - x0 as f64;
        let ly = fy - y0 as f64;
        let corners = [
            ((1.0 - lx) * (1.0 - ly), y0, x0),
            (lx * (1.0 - ly), y0, x1),
            ((1.0 - lx) * ly, y1, x0),
            (lx * ly, y1, x1),
        ];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (w, y, x) in corners {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.cell(t, y, x)) {
                *o += w * v;
            }
        }
    }
}

/// Intersection over union; two zero-area boxes give 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// A box mapped onto the feature grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedBox {
    /// Index into the input list.
    pub source_index: usize,
    pub frame: usize,
    pub bbox: BoundingBox,
}

/// A box discarded during projection.
#[derive(Clone, Debug, PartialEq)]
pub struct DroppedBox {
    pub source_index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Projection {
    pub boxes: Vec<ProjectedBox>,
    pub dropped: Vec<DroppedBox>,
}

/// Feature-grid geometry that input-frame boxes are projected onto.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureGrid {
    pub input_frames: usize,
    pub feature_frames: usize,
    pub spatial_stride: f64,
    pub width: usize,
    pub height: usize,
}

/// Maps `(input_frame, box)` pairs onto feature frames: the frame index is
/// divided by the temporal stride, coordinates by the spatial stride, and
/// the result is clipped to the map. Boxes that land entirely outside the
/// map are dropped and reported.
pub fn project_boxes(boxes: &[(usize, BoundingBox)], grid: &FeatureGrid) -> Result<Projection> {
    if grid.feature_frames == 0 || !grid.input_frames.is_multiple_of(grid.feature_frames) {
        return Err(Error::Invalid(format!(
            "input frames {} not divisible by feature frames {}",
            grid.input_frames, grid.feature_frames
        )));
    }
    if !(grid.spatial_stride > 0.0) {
        return Err(Error::Invalid(format!(
            "spatial stride must be positive, got {}",
            grid.spatial_stride
        )));
    }
    let t_stride = grid.input_frames / grid.feature_frames;
    let (w, h) = (grid.width as f64, grid.height as f64);
    let mut out = Projection::default();
    for (i, &(frame, b)) in boxes.iter().enumerate() {
        if frame >= grid.input_frames {
            out.dropped.push(DroppedBox {
                source_index: i,
                reason: format!("input frame {frame} beyond {}", grid.input_frames),
            });
            continue;
        }
        let scaled = b.scale(1.0 / grid.spatial_stride);
        let outside = scaled.x2 < 0.0 || scaled.y2 < 0.0 || scaled.x1 > w || scaled.y1 > h;
        let clipped = scaled.clip(w, h);
        if outside || (scaled.area() > 0.0 && clipped.area() <= 0.0) {
            log::warn!("box {i} {b:?} falls outside the {w}x{h} feature map");
            out.dropped.push(DroppedBox {
                source_index: i,
                reason: "outside feature map".into(),
            });
            continue;
        }
        out.boxes.push(ProjectedBox {
            source_index: i,
            frame: frame / t_stride,
            bbox: clipped,
        });
    }
    Ok(out)
}

/// RoIAlign settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiAlignConfig {
    /// Output grid side; the box is cut into `bins x bins` cells.
    pub bins: usize,
    /// Samples per cell; must be a perfect square (1, 4, 9, ...).
    pub samples_per_bin: usize,
}

impl Default for RoiAlignConfig {
    fn default() -> Self {
        RoiAlignConfig {
            bins: 7,
            samples_per_bin: 1,
        }
    }
}

/// Pools the region under `bbox` on frame `frame` into one channel vector:
/// each of the `bins x bins` cells averages its bilinear samples, then the
/// result is the channelwise max over cells.
pub fn roi_align(
    volume: &FeatureVolume,
    frame: usize,
    bbox: &BoundingBox,
    cfg: &RoiAlignConfig,
) -> Result<Vec<f64>> {
    let (t_dim, h_dim, w_dim, channels) = volume.dims();
    if frame >= t_dim {
        return Err(Error::Invalid(format!(
            "frame {frame} out of range for {t_dim} frames"
        )));
    }
    if h_dim == 0 || w_dim == 0 || cfg.bins == 0 {
        return Err(Error::Empty { op: "roi_align" });
    }
    let side = (cfg.samples_per_bin as f64).sqrt().round() as usize;
    if side == 0 || side * side != cfg.samples_per_bin {
        return Err(Error::Invalid(format!(
            "samples_per_bin must be a perfect square, got {}",
            cfg.samples_per_bin
        )));
    }
    let bbox = bbox.clip(w_dim as f64, h_dim as f64);
    let bin_w = bbox.width() / cfg.bins as f64;
    let bin_h = bbox.height() / cfg.bins as f64;
    let norm = 1.0 / cfg.samples_per_bin as f64;

    let mut pooled = vec![f64::NEG_INFINITY; channels];
    let mut cell = vec![0.0; channels];
    let mut sample = vec![0.0; channels];
    for by in 0..cfg.bins {
        for bx in 0..cfg.bins {
            cell.iter_mut().for_each(|c| *c = 0.0);
            for sy in 0..side {
                let py = bbox.y1 + bin_h * (by as f64 + (sy as f64 + 0.5) / side as f64);
                for sx in 0..side {
                    let px = bbox.x1 + bin_w * (bx as f64 + (sx as f64 + 0.5) / side as f64);
                    volume.bilinear(frame, px, py, &mut sample);
                    for (c, s) in cell.iter_mut().zip(&sample) {
                        *c += s;
                    }
                }
            }
            for (p, c) in pooled.iter_mut().zip(&cell) {
                *p = p.max(c * norm);
            }
        }
    }
    Ok(pooled)
}
