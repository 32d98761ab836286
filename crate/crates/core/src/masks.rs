//! Known-region masks and the boundary-aware fields derived from them.
//!
//! Polarity is fixed everywhere in this crate: `true` marks a known scene
//! pixel, `false` marks a hole pixel that receives the target.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    scene: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, scene: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidMask(format!("empty mask {height}x{width}")));
        }
        if scene.len() != height * width {
            return Err(Error::InvalidMask(format!(
                "{} values for a {height}x{width} mask",
                scene.len()
            )));
        }
        Ok(Self {
            height,
            width,
            scene,
        })
    }

    pub fn all_scene(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![true; height * width]).expect("non-empty")
    }

    pub fn all_hole(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![false; height * width]).expect("non-empty")
    }

    /// Scene everywhere except the half-open rectangle `rows × cols`.
    pub fn with_hole_rect(
        height: usize,
        width: usize,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Self {
        let mut m = Self::all_scene(height, width);
        for y in rows {
            for x in cols.clone() {
                m.set_hole(y, x);
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_scene(&self, y: usize, x: usize) -> bool {
        self.scene[y * self.width + x]
    }

    pub fn is_hole(&self, y: usize, x: usize) -> bool {
        !self.is_scene(y, x)
    }

    pub fn set_hole(&mut self, y: usize, x: usize) {
        self.scene[y * self.width + x] = false;
    }

    /// Row-major scene indicator.
    pub fn scene_pixels(&self) -> &[bool] {
        &self.scene
    }

    pub fn hole_count(&self) -> usize {
        self.scene.iter().filter(|s| !**s).count()
    }

    pub fn has_scene(&self) -> bool {
        self.scene.iter().any(|s| *s)
    }

    pub fn has_hole(&self) -> bool {
        self.scene.iter().any(|s| !*s)
    }

    /// A usable inpainting task has both a hole and some scene.
    pub fn is_degenerate(&self) -> bool {
        !(self.has_scene() && self.has_hole())
    }
}

/// Per-pixel Manhattan distance from each pixel to the nearest scene pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    height: usize,
    width: usize,
    values: Vec<u32>,
}

impl DistanceField {
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.values[y * self.width + x]
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }
}

/// Exact 4-connected distance transform by two raster sweeps.
///
/// The L1 metric is separable into forward (up, left) and backward
/// (down, right) propagation, so two passes are exact rather than an
/// approximation.
pub fn distance_transform(mask: &Mask) -> Result<DistanceField> {
    if !mask.has_scene() {
        return Err(Error::InvalidMask(
            "distance transform needs at least one scene pixel".into(),
        ));
    }
    let (h, w) = (mask.height, mask.width);
    let far = (h + w) as u32;
    let mut d: Vec<u32> = mask
        .scene
        .iter()
        .map(|&s| if s { 0 } else { far })
        .collect();

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if y > 0 {
                d[i] = d[i].min(d[i - w] + 1);
            }
            if x > 0 {
                d[i] = d[i].min(d[i - 1] + 1);
            }
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            if y + 1 < h {
                d[i] = d[i].min(d[i + w] + 1);
            }
            if x + 1 < w {
                d[i] = d[i].min(d[i + 1] + 1);
            }
        }
    }
    Ok(DistanceField {
        height: h,
        width: w,
        values: d,
    })
}

/// Per-pixel blend weight toward the forward-noised target, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl HeatField {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// `min(d / b, 1)` on hole pixels, `0` on scene pixels.
pub fn heated_mask(mask: &Mask, buffer: u32) -> Result<HeatField> {
    if buffer == 0 {
        return Err(Error::invalid("heat buffer size must be at least 1"));
    }
    let dist = distance_transform(mask)?;
    let b = buffer as f64;
    let values = dist
        .values
        .iter()
        .map(|&d| (d as f64 / b).min(1.0))
        .collect();
    Ok(HeatField {
        height: mask.height,
        width: mask.width,
        values,
    })
}

/// Grows the hole by `width` steps of 8-connected dilation.
pub fn dilate_hole(mask: &Mask, width: usize) -> Mask {
    if width == 0 || !mask.has_hole() {
        return mask.clone();
    }
    let (h, w) = (mask.height, mask.width);
    // A square structuring element is separable: dilate rows, then columns.
    let mut rows = vec![false; h * w];
    for y in 0..h {
        let line = &mask.scene[y * w..(y + 1) * w];
        let holes = prefix_counts(line.iter().map(|s| !*s));
        for x in 0..w {
            let lo = x.saturating_sub(width);
            let hi = (x + width + 1).min(w);
            rows[y * w + x] = holes[hi] > holes[lo];
        }
    }
    let mut scene = vec![true; h * w];
    for x in 0..w {
        let holes = prefix_counts((0..h).map(|y| rows[y * w + x]));
        for y in 0..h {
            let lo = y.saturating_sub(width);
            let hi = (y + width + 1).min(h);
            scene[y * w + x] = holes[hi] == holes[lo];
        }
    }
    Mask {
        height: h,
        width: w,
        scene,
    }
}

fn prefix_counts(values: impl Iterator<Item = bool>) -> Vec<u32> {
    let mut out = vec![0];
    for v in values {
        out.push(out.last().unwrap() + v as u32);
    }
    out
}

/// Band of pixels that the dilated hole adds around the original hole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ring {
    height: usize,
    width: usize,
    members: Vec<bool>,
}

impl Ring {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.members[y * self.width + x]
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

pub fn ring(mask: &Mask, width: usize) -> Ring {
    let grown = dilate_hole(mask, width);
    let members = mask
        .scene
        .iter()
        .zip(&grown.scene)
        .map(|(&orig, &ext)| orig && !ext)
        .collect();
    Ring {
        height: mask.height,
        width: mask.width,
        members,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_5x5() -> Mask {
        Mask::with_hole_rect(5, 5, 1..4, 1..4)
    }

    #[test]
    fn all_scene_distance_is_zero() {
        let d = distance_transform(&Mask::all_scene(4, 6)).unwrap();
        assert!(d.values().iter().all(|v| *v == 0));
    }

    #[test]
    fn all_hole_distance_is_an_error() {
        assert!(matches!(
            distance_transform(&Mask::all_hole(3, 3)),
            Err(Error::InvalidMask(_))
        ));
    }

    #[test]
    fn fixture_distances() {
        let d = distance_transform(&fixture_5x5()).unwrap();
        assert_eq!(d.get(2, 2), 2);
        assert_eq!(d.get(1, 1), 1);
        assert_eq!(d.get(1, 2), 1);
        assert_eq!(d.get(0, 0), 0);
    }

    #[test]
    fn heat_with_unit_buffer_is_the_hole_indicator() {
        let m = fixture_5x5();
        let h = heated_mask(&m, 1).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let expected = if m.is_hole(y, x) { 1.0 } else { 0.0 };
                assert_eq!(h.get(y, x), expected);
            }
        }
    }

    #[test]
    fn heat_fixture_b2() {
        let h = heated_mask(&fixture_5x5(), 2).unwrap();
        assert_eq!(h.get(2, 2), 1.0);
        assert_eq!(h.get(1, 1), 0.5);
        assert_eq!(h.get(0, 3), 0.0);
    }

    #[test]
    fn heat_rejects_zero_buffer() {
        assert!(matches!(
            heated_mask(&fixture_5x5(), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn dilate_zero_is_identity() {
        let m = fixture_5x5();
        assert_eq!(dilate_hole(&m, 0), m);
    }

    #[test]
    fn dilate_single_pixel_gives_3x3_block() {
        let m = Mask::with_hole_rect(7, 7, 3..4, 3..4);
        let grown = dilate_hole(&m, 1);
        assert_eq!(grown, Mask::with_hole_rect(7, 7, 2..5, 2..5));
    }

    #[test]
    fn dilate_clips_at_borders() {
        let m = Mask::with_hole_rect(4, 4, 0..1, 0..1);
        assert_eq!(dilate_hole(&m, 2), Mask::with_hole_rect(4, 4, 0..3, 0..3));
    }

    #[test]
    fn dilate_saturates() {
        let m = Mask::with_hole_rect(6, 9, 2..3, 4..5);
        assert_eq!(dilate_hole(&m, 9), Mask::all_hole(6, 9));
    }

    #[test]
    fn ring_sizes() {
        let m = Mask::with_hole_rect(7, 7, 3..4, 3..4);
        assert!(ring(&m, 0).is_empty());
        let r = ring(&m, 1);
        assert_eq!(r.len(), 8);
        assert!(!r.contains(3, 3));
        assert!(r.contains(2, 2));
    }

    #[test]
    fn degenerate_flags() {
        assert!(Mask::all_scene(2, 2).is_degenerate());
        assert!(Mask::all_hole(2, 2).is_degenerate());
        assert!(!fixture_5x5().is_degenerate());
    }
}
