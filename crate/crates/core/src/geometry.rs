//! Layouts, boxes and masks, the projections between them, and the
//! geometric relation heuristic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("layout has no pixel at or above the threshold")]
    EmptyLayout,
    #[error("box covers no whole pixel on a {height}x{width} grid")]
    DegenerateBox { height: usize, width: usize },
    #[error("invalid box {0:?}")]
    InvalidBox([f64; 4]),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("mask size {mask} must be smaller than min(H, W) = {grid}")]
    MaskTooLarge { mask: usize, grid: usize },
}

/// A soft per-object occupancy map, row-major `height x width`, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Layout {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Layout { height, width, data: vec![value; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self, GeometryError> {
        if data.len() != height * width {
            return Err(GeometryError::Shape(format!(
                "{} values for a {height}x{width} layout",
                data.len()
            )));
        }
        Ok(Layout { height, width, data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn num_pixels(&self) -> usize {
        self.data.len()
    }

    pub fn active_count(&self, threshold: f64) -> usize {
        self.data.iter().filter(|&&v| v >= threshold).count()
    }

    /// Fills the rectangle `rows x cols` (half-open) with `value`.
    pub fn fill_rect(&mut self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, value: f64) {
        for r in rows {
            for c in cols.clone() {
                self.set(r, c, value);
            }
        }
    }

    /// Mirrors the layout left to right.
    pub fn flip_horizontal(&self) -> Layout {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r, c, self.get(r, self.width - 1 - c));
            }
        }
        out
    }
}

/// The per-object layouts of one scene; all share one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutSet {
    pub layouts: Vec<Layout>,
}

impl LayoutSet {
    pub fn new(layouts: Vec<Layout>) -> Result<Self, GeometryError> {
        if let Some(first) = layouts.first() {
            if layouts.iter().any(|l| l.height != first.height || l.width != first.width) {
                return Err(GeometryError::Shape("layouts differ in grid size".into()));
            }
        }
        Ok(LayoutSet { layouts })
    }

    /// Splits a flat `n x height x width` buffer into layouts.
    pub fn from_flat(n: usize, height: usize, width: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), n * height * width, "flat layout buffer size");
        let layouts = data
            .chunks(height * width)
            .map(|chunk| Layout { height, width, data: chunk.to_vec() })
            .collect();
        LayoutSet { layouts }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layouts.iter().flat_map(|l| l.data.iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.layouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layouts.is_empty()
    }

    /// `(height, width)` of the shared grid; `(0, 0)` for an empty set.
    pub fn grid(&self) -> (usize, usize) {
        self.layouts.first().map_or((0, 0), |l| (l.height, l.width))
    }
}

/// Axis-aligned box in relative coordinates; x grows rightward, y downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        let b = BoundingBox { x0, y0, x1, y1 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::InvalidBox(b.to_array()))
        }
    }

    pub fn is_valid(&self) -> bool {
        0.0 <= self.x0 && self.x0 < self.x1 && self.x1 <= 1.0 && 0.0 <= self.y0 && self.y0 < self.y1 && self.y1 <= 1.0
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// True when `self` lies within `other` (boundaries may touch).
    pub fn is_within(&self, other: &BoundingBox) -> bool {
        self.x0 >= other.x0 && self.x1 <= other.x1 && self.y0 >= other.y0 && self.y1 <= other.y1
    }

    /// Half-open pixel rectangle `(row0, row1, col0, col1)` on a `height x width` grid.
    pub fn pixel_rect(&self, height: usize, width: usize) -> Result<(usize, usize, usize, usize), GeometryError> {
        if !self.is_valid() {
            return Err(GeometryError::InvalidBox(self.to_array()));
        }
        let to_px = |v: f64, n: usize| ((v * n as f64).round() as usize).min(n);
        let (r0, r1) = (to_px(self.y0, height), to_px(self.y1, height));
        let (c0, c1) = (to_px(self.x0, width), to_px(self.x1, width));
        if r1 <= r0 || c1 <= c0 {
            return Err(GeometryError::DegenerateBox { height, width });
        }
        Ok((r0, r1, c0, c1))
    }
}

/// Square object shape at a fixed resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Mask {
    pub fn filled(size: usize, value: f64) -> Self {
        Mask { size, data: vec![value; size * size] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }
}

/// The six geometric relations, from the subject's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    Inside,
    Surrounding,
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Above,
        Relation::Below,
        Relation::Inside,
        Relation::Surrounding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::Inside => "inside",
            Relation::Surrounding => "surrounding",
        }
    }

    pub fn from_name(name: &str) -> Option<Relation> {
        Relation::ALL.into_iter().find(|r| r.name() == name)
    }

    /// Position in [`Relation::ALL`]; the class index used by the relation head.
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn converse(self) -> Relation {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
            Relation::Inside => Relation::Surrounding,
            Relation::Surrounding => Relation::Inside,
        }
    }
}

/// Relation of subject box `s` to object box `o`: containment first, then the
/// dominant axis of the center offset (ties go to the horizontal relation).
pub fn infer_relation(s: &BoundingBox, o: &BoundingBox) -> Relation {
    if s.is_within(o) {
        return Relation::Inside;
    }
    if o.is_within(s) {
        return Relation::Surrounding;
    }
    let (sx, sy) = s.center();
    let (ox, oy) = o.center();
    let (dx, dy) = (ox - sx, oy - sy);
    if dx > 0.0 && dx >= dy.abs() {
        Relation::LeftOf
    } else if dx < 0.0 && -dx >= dy.abs() {
        Relation::RightOf
    } else if dy > dx.abs() {
        Relation::Above
    } else if -dy > dx.abs() {
        Relation::Below
    } else {
        // Coincident centers without containment (a cross shape).
        if s.area() <= o.area() {
            Relation::Inside
        } else {
            Relation::Surrounding
        }
    }
}

fn box_where(l: &Layout, active: impl Fn(f64) -> bool) -> Result<BoundingBox, GeometryError> {
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..l.height {
        for c in 0..l.width {
            if active(l.get(r, c)) {
                rmin = rmin.min(r);
                rmax = rmax.max(r);
                cmin = cmin.min(c);
                cmax = cmax.max(c);
            }
        }
    }
    if rmin == usize::MAX {
        return Err(GeometryError::EmptyLayout);
    }
    let (h, w) = (l.height as f64, l.width as f64);
    Ok(BoundingBox {
        x0: cmin as f64 / w,
        y0: rmin as f64 / h,
        x1: (cmax + 1) as f64 / w,
        y1: (rmax + 1) as f64 / h,
    })
}

/// Tightest box around pixels with value `>= threshold`.
pub fn box_from_layout(l: &Layout, threshold: f64) -> Result<BoundingBox, GeometryError> {
    box_where(l, |v| v >= threshold)
}

/// Tightest box around pixels with value strictly above `threshold`.
pub fn box_above(l: &Layout, threshold: f64) -> Result<BoundingBox, GeometryError> {
    box_where(l, |v| v > threshold)
}

/// Bilinear resample with half-pixel centers and clamped edges.
pub fn resample_bilinear(src: &[f64], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f64> {
    let axis = |dst: usize, n_dst: usize, n_src: usize| -> (usize, usize, f64) {
        let scale = n_src as f64 / n_dst as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_src - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..dst_w).map(|c| axis(c, dst_w, src_w)).collect();
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for r in 0..dst_h {
        let (r0, r1, fy) = axis(r, dst_h, src_h);
        for &(c0, c1, fx) in &cols {
            let top = src[r0 * src_w + c0] * (1.0 - fx) + src[r0 * src_w + c1] * fx;
            let bottom = src[r1 * src_w + c0] * (1.0 - fx) + src[r1 * src_w + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Crops `l` to `b` and resamples the crop to a `mask_size x mask_size` mask.
pub fn mask_from_layout(l: &Layout, b: &BoundingBox, mask_size: usize) -> Result<Mask, GeometryError> {
    let grid = l.height.min(l.width);
    if mask_size >= grid {
        return Err(GeometryError::MaskTooLarge { mask: mask_size, grid });
    }
    let (r0, r1, c0, c1) = b.pixel_rect(l.height, l.width)?;
    let (ch, cw) = (r1 - r0, c1 - c0);
    let mut crop = Vec::with_capacity(ch * cw);
    for r in r0..r1 {
        crop.extend_from_slice(&l.data[r * l.width + c0..r * l.width + c1]);
    }
    let data = resample_bilinear(&crop, ch, cw, mask_size, mask_size)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(Mask { size: mask_size, data })
}

/// Pastes `m` into the pixel rectangle of `b` on a `height x width` grid.
pub fn layout_from_box_mask(b: &BoundingBox, m: &Mask, height: usize, width: usize) -> Result<Layout, GeometryError> {
    let (r0, r1, c0, c1) = b.pixel_rect(height, width)?;
    let patch = resample_bilinear(&m.data, m.size, m.size, r1 - r0, c1 - c0);
    let mut out = Layout::zeros(height, width);
    let pw = c1 - c0;
    for r in r0..r1 {
        for c in c0..c1 {
            out.set(r, c, patch[(r - r0) * pw + (c - c0)].clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Elementwise indicator `value >= threshold`.
pub fn threshold_layouts(ls: &LayoutSet, threshold: f64) -> LayoutSet {
    LayoutSet {
        layouts: ls
            .layouts
            .iter()
            .map(|l| Layout {
                height: l.height,
                width: l.width,
                data: l.data.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect_layout(h: usize, w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Layout {
        let mut l = Layout::zeros(h, w);
        l.fill_rect(rows, cols, 1.0);
        l
    }

    fn centered(cx: f64, cy: f64, half: f64) -> BoundingBox {
        BoundingBox::new(cx - half, cy - half, cx + half, cy + half).unwrap()
    }

    /// Scalar bilinear sample of `src` at output pixel `(r, c)`, written
    /// independently of `resample_bilinear`.
    fn reference_sample(src: &[Vec<f64>], out_h: usize, out_w: usize, r: usize, c: usize) -> f64 {
        let (in_h, in_w) = (src.len(), src[0].len());
        let mut y = (r as f64 + 0.5) * in_h as f64 / out_h as f64 - 0.5;
        let mut x = (c as f64 + 0.5) * in_w as f64 / out_w as f64 - 0.5;
        y = y.max(0.0).min((in_h - 1) as f64);
        x = x.max(0.0).min((in_w - 1) as f64);
        let (iy, ix) = (y.floor() as usize, x.floor() as usize);
        let mut acc = 0.0;
        for (dy, wy) in [(0usize, 1.0 - (y - iy as f64)), (1, y - iy as f64)] {
            for (dx, wx) in [(0usize, 1.0 - (x - ix as f64)), (1, x - ix as f64)] {
                let yy = (iy + dy).min(in_h - 1);
                let xx = (ix + dx).min(in_w - 1);
                acc += wy * wx * src[yy][xx];
            }
        }
        acc
    }

    fn iou(a: &Layout, b: &Layout, t: f64) -> f64 {
        let (mut inter, mut union) = (0, 0);
        for (x, y) in a.data.iter().zip(&b.data) {
            let (p, q) = (*x >= t, *y >= t);
            inter += (p && q) as usize;
            union += (p || q) as usize;
        }
        inter as f64 / union as f64
    }

    #[test]
    fn box_examples() {
        let l = rect_layout(16, 16, 2..6, 4..10);
        assert_eq!(box_from_layout(&l, 0.5).unwrap().to_array(), [0.25, 0.125, 0.625, 0.375]);
        let ones = Layout::filled(8, 8, 1.0);
        assert_eq!(box_from_layout(&ones, 0.5).unwrap().to_array(), [0.0, 0.0, 1.0, 1.0]);
        let single = rect_layout(8, 8, 0..1, 0..1);
        assert_eq!(box_from_layout(&single, 0.5).unwrap().to_array(), [0.0, 0.0, 0.125, 0.125]);
        assert_eq!(box_from_layout(&Layout::zeros(8, 8), 0.5), Err(GeometryError::EmptyLayout));
    }

    #[test]
    fn strict_box_ignores_half() {
        let mut l = Layout::filled(8, 8, 0.5);
        assert_eq!(box_above(&l, 0.5), Err(GeometryError::EmptyLayout));
        l.set(3, 3, 0.51);
        assert_eq!(box_above(&l, 0.5).unwrap().to_array(), [0.375, 0.375, 0.5, 0.5]);
    }

    #[test]
    fn mask_of_constant_region_is_ones() {
        let l = rect_layout(32, 32, 4..20, 8..14);
        let b = box_from_layout(&l, 0.5).unwrap();
        let m = mask_from_layout(&l, &b, 16).unwrap();
        assert!(m.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mask_identity_when_sizes_match() {
        let mut l = Layout::zeros(16, 16);
        for (k, v) in l.data.iter_mut().enumerate() {
            *v = (k % 7) as f64 / 7.0;
        }
        let b = BoundingBox::new(0.25, 0.25, 0.75, 0.75).unwrap();
        let m = mask_from_layout(&l, &b, 8).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(m.get(r, c), l.get(r + 4, c + 4));
            }
        }
    }

    #[test]
    fn mask_upsample_matches_reference() {
        let mut l = Layout::zeros(8, 8);
        l.set(2, 2, 1.0);
        let b = BoundingBox::new(0.25, 0.25, 0.5, 0.5).unwrap();
        let m = mask_from_layout(&l, &b, 4).unwrap();
        let src = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        for r in 0..4 {
            for c in 0..4 {
                assert!((m.get(r, c) - reference_sample(&src, 4, 4, r, c)).abs() < 1e-12);
            }
        }
        // Frozen from the reference: corner, edge-adjacent and far values.
        assert_eq!(m.get(0, 0), 1.0);
        assert!((m.get(1, 1) - 0.5625).abs() < 1e-12);
        assert!((m.get(0, 2) - 0.25).abs() < 1e-12);
        assert_eq!(m.get(3, 3), 0.0);
    }

    #[test]
    fn mask_errors() {
        let l = Layout::filled(8, 8, 1.0);
        let full = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(matches!(mask_from_layout(&l, &full, 8), Err(GeometryError::MaskTooLarge { .. })));
        let thin = BoundingBox::new(0.0, 0.0, 0.05, 1.0).unwrap();
        assert!(matches!(mask_from_layout(&l, &thin, 4), Err(GeometryError::DegenerateBox { .. })));
    }

    #[test]
    fn paste_full_box() {
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let l = layout_from_box_mask(&b, &Mask::filled(4, 1.0), 16, 16).unwrap();
        assert!(l.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rectangle_round_trip_is_exact() {
        let l = rect_layout(32, 32, 3..17, 9..30);
        let b = box_from_layout(&l, 0.5).unwrap();
        let m = mask_from_layout(&l, &b, 16).unwrap();
        let back = layout_from_box_mask(&b, &m, 32, 32).unwrap();
        assert_eq!(iou(&l, &back, 0.5), 1.0);
    }

    #[test]
    fn disk_round_trip_iou() {
        let mut l = Layout::zeros(32, 32);
        for r in 0..32 {
            for c in 0..32 {
                let (dy, dx) = (r as f64 + 0.5 - 15.0, c as f64 + 0.5 - 17.0);
                if dx * dx + dy * dy <= 100.0 {
                    l.set(r, c, 1.0);
                }
            }
        }
        let b = box_from_layout(&l, 0.5).unwrap();
        let m = mask_from_layout(&l, &b, 16).unwrap();
        let back = layout_from_box_mask(&b, &m, 32, 32).unwrap();
        let score = iou(&l, &back, 0.5);
        // Reference pipeline built from `reference_sample` gives the same IoU.
        let (r0, r1, c0, c1) = b.pixel_rect(32, 32).unwrap();
        let crop: Vec<Vec<f64>> = (r0..r1).map(|r| (c0..c1).map(|c| l.get(r, c)).collect()).collect();
        let mask: Vec<Vec<f64>> =
            (0..16).map(|r| (0..16).map(|c| reference_sample(&crop, 16, 16, r, c)).collect()).collect();
        let mut rebuilt = Layout::zeros(32, 32);
        for r in r0..r1 {
            for c in c0..c1 {
                rebuilt.set(r, c, reference_sample(&mask, r1 - r0, c1 - c0, r - r0, c - c0));
            }
        }
        let reference = iou(&l, &rebuilt, 0.5);
        assert!((score - reference).abs() < 1e-12);
        assert!(score >= 0.8, "disk IoU {score}");
    }

    #[test]
    fn relation_examples() {
        assert_eq!(infer_relation(&centered(0.1, 0.1, 0.05), &centered(0.7, 0.1, 0.05)), Relation::LeftOf);
        let s = BoundingBox::new(0.4, 0.4, 0.6, 0.6).unwrap();
        let o = BoundingBox::new(0.2, 0.2, 0.8, 0.8).unwrap();
        assert_eq!(infer_relation(&s, &o), Relation::Inside);
        assert_eq!(infer_relation(&o, &s), Relation::Surrounding);
        assert_eq!(infer_relation(&s, &s), Relation::Inside);
        assert_eq!(infer_relation(&centered(0.5, 0.2, 0.1), &centered(0.5, 0.7, 0.1)), Relation::Above);
        assert_eq!(infer_relation(&centered(0.5, 0.7, 0.1), &centered(0.5, 0.2, 0.1)), Relation::Below);
        // |dx| == |dy| resolves horizontally.
        assert_eq!(infer_relation(&centered(0.2, 0.2, 0.1), &centered(0.6, 0.6, 0.1)), Relation::LeftOf);
    }

    #[test]
    fn threshold_examples() {
        let half = LayoutSet::new(vec![Layout::filled(4, 4, 0.5)]).unwrap();
        assert!(threshold_layouts(&half, 0.5).layouts[0].data.iter().all(|&v| v == 1.0));
        let below = LayoutSet::new(vec![Layout::filled(4, 4, 0.49)]).unwrap();
        assert!(threshold_layouts(&below, 0.5).layouts[0].data.iter().all(|&v| v == 0.0));
        let mut mixed = Layout::zeros(4, 4);
        for (k, v) in mixed.data.iter_mut().enumerate() {
            *v = k as f64 / 15.0;
        }
        let set = LayoutSet::new(vec![mixed.clone()]).unwrap();
        let out = threshold_layouts(&set, 0.5);
        for r in 0..4 {
            for c in 0..4 {
                let want = if mixed.get(r, c) >= 0.5 { 1.0 } else { 0.0 };
                assert_eq!(out.layouts[0].get(r, c), want);
            }
        }
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0u32..31, 0u32..31, 1u32..32, 1u32..32).prop_map(|(a, b, w, h)| {
            let x0 = a as f64 / 32.0;
            let y0 = b as f64 / 32.0;
            let x1 = ((a + w).min(32)) as f64 / 32.0;
            let y1 = ((b + h).min(32)) as f64 / 32.0;
            BoundingBox::new(x0, y0, x1.max(x0 + 1.0 / 32.0), y1.max(y0 + 1.0 / 32.0)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn paste_then_box_recovers_box(b in arb_box(), seed in any::<u64>()) {
            let size = 4usize;
            let (r0, r1, c0, c1) = b.pixel_rect(32, 32).unwrap();
            prop_assume!(r1 - r0 >= size && c1 - c0 >= size);
            let mut data = vec![0.0; size * size];
            let mut state = seed;
            for r in 0..size {
                for c in 0..size {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let border = r == 0 || c == 0 || r == size - 1 || c == size - 1;
                    data[r * size + c] = if border || (state >> 33) % 2 == 0 { 1.0 } else { 0.0 };
                }
            }
            let m = Mask { size, data };
            let l = layout_from_box_mask(&b, &m, 32, 32).unwrap();
            prop_assert_eq!(box_from_layout(&l, 0.5).unwrap(), b);
        }

        #[test]
        fn relation_converse(s in arb_box(), o in arb_box()) {
            prop_assume!(!s.is_within(&o) && !o.is_within(&s));
            let fwd = infer_relation(&s, &o);
            let back = infer_relation(&o, &s);
            if matches!(fwd, Relation::LeftOf | Relation::RightOf | Relation::Above | Relation::Below) {
                prop_assert_eq!(back, fwd.converse());
            }
        }

        #[test]
        fn mask_values_stay_within_crop_range(vals in proptest::collection::vec(0.0f64..1.0, 64), b in arb_box()) {
            let l = Layout::from_vec(8, 8, vals).unwrap();
            let scaled = BoundingBox { x0: b.x0, y0: b.y0, x1: b.x1, y1: b.y1 };
            prop_assume!(scaled.pixel_rect(8, 8).is_ok());
            let (r0, r1, c0, c1) = scaled.pixel_rect(8, 8).unwrap();
            let crop: Vec<f64> = (r0..r1).flat_map(|r| (c0..c1).map(move |c| (r, c))).map(|(r, c)| l.get(r, c)).collect();
            let lo = crop.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = crop.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let m = mask_from_layout(&l, &scaled, 4).unwrap();
            for v in m.data {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn threshold_idempotent(vals in proptest::collection::vec(0.0f64..1.0, 16), t in 0.01f64..0.99) {
            let set = LayoutSet::new(vec![Layout::from_vec(4, 4, vals).unwrap()]).unwrap();
            let once = threshold_layouts(&set, t);
            prop_assert_eq!(threshold_layouts(&once, t), once);
        }
    }
}
