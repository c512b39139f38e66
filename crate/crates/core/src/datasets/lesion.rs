use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::metrics::Region;

/// Lesions covering at most this fraction of the image are "small".
pub const SMALL_LESION_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Small,
    Large,
}

impl SizeClass {
    pub fn of(area_fraction: f64) -> Self {
        if area_fraction <= SMALL_LESION_FRACTION {
            SizeClass::Small
        } else {
            SizeClass::Large
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Large => "large",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionAnnotation {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub area_fraction: f64,
    pub size_class: SizeClass,
}

impl LesionAnnotation {
    pub fn region(&self) -> Region {
        Region {
            row: self.row,
            col: self.col,
            height: self.height,
            width: self.width,
        }
    }
}

/// Picks box sides `(h, w)` whose area falls in the requested class.
fn box_sides<R: Rng + ?Sized>(img_h: usize, img_w: usize, class: SizeClass, rng: &mut R) -> Result<(usize, usize)> {
    let limit = (SMALL_LESION_FRACTION * (img_h * img_w) as f64).floor() as usize;
    match class {
        SizeClass::Small => {
            if limit < 4 {
                return Err(Error::invalid(format!(
                    "a {img_h}x{img_w} image is too small for a lesion of at most {limit} pixels"
                )));
            }
            let max_side = ((limit as f64).sqrt().floor() as usize).min(img_h).min(img_w);
            let min_side = (max_side / 2).max(2);
            let bh = rng.gen_range(min_side..=max_side);
            let max_w = (limit / bh).min(img_w);
            let bw = rng.gen_range(min_side.min(max_w)..=max_w);
            Ok((bh, bw))
        }
        SizeClass::Large => {
            let side = (limit as f64).sqrt().ceil() as usize + 1;
            let max_side = (2 * side).min(img_h).min(img_w);
            if side > max_side {
                return Err(Error::invalid(format!("a {img_h}x{img_w} image cannot hold a large lesion")));
            }
            let bh = rng.gen_range(side..=max_side);
            let min_w = limit / bh + 1;
            let max_w = (4 * limit.max(1) / bh).max(min_w).min(img_w);
            if min_w > max_w {
                return Err(Error::invalid(format!("a {img_h}x{img_w} image cannot hold a large lesion")));
            }
            Ok((bh, rng.gen_range(min_w..=max_w)))
        }
    }
}

/// Adds a smooth elliptical intensity anomaly inside a random box of the
/// requested size class. Pixels outside the box are left untouched; the
/// anomaly is added along each pixel's existing phase.
pub fn insert_lesion<R: Rng + ?Sized>(
    image: &ComplexImage,
    rng: &mut R,
    class: SizeClass,
    amplitude: f64,
) -> Result<(ComplexImage, LesionAnnotation)> {
    let (bh, bw) = box_sides(image.height, image.width, class, rng)?;
    // keep lesions off the outermost quarter when there is room
    let pick = |extent: usize, side: usize, rng: &mut R| {
        let lo = extent / 4;
        let hi = (3 * extent / 4).saturating_sub(side);
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            rng.gen_range(0..=extent - side)
        }
    };
    let row = pick(image.height, bh, rng);
    let col = pick(image.width, bw, rng);
    let area_fraction = (bh * bw) as f64 / (image.height * image.width) as f64;
    let annotation = LesionAnnotation {
        row,
        col,
        height: bh,
        width: bw,
        area_fraction,
        size_class: SizeClass::of(area_fraction),
    };
    debug_assert_eq!(annotation.size_class, class);

    let mut out = image.clone();
    if amplitude != 0.0 {
        let (ry, rx) = (bh as f64 / 2.0, bw as f64 / 2.0);
        for r in row..row + bh {
            for c in col..col + bw {
                let dy = (r as f64 + 0.5 - row as f64 - ry) / ry;
                let dx = (c as f64 + 0.5 - col as f64 - rx) / rx;
                let d = (dy * dy + dx * dx).sqrt();
                if d < 1.0 {
                    let profile = 0.5 + 0.5 * (std::f64::consts::PI * d).cos();
                    let v = out.get(r, c);
                    let dir = if v.norm() > 0.0 { v / v.norm() } else { Complex64::new(1.0, 0.0) };
                    out.set(r, c, v + dir * (amplitude * profile));
                }
            }
        }
    }
    Ok((out, annotation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn image(h: usize, w: usize) -> ComplexImage {
        ComplexImage::from_values(h, w, vec![Complex64::new(0.5, 0.1); h * w]).unwrap()
    }

    #[test]
    fn small_lesion_on_64() {
        for s in 0..50 {
            let (_, a) = insert_lesion(&image(64, 64), &mut seed::stream(s, 0), SizeClass::Small, 0.3).unwrap();
            assert!(a.height * a.width <= 40, "{a:?}");
            assert_eq!(a.size_class, SizeClass::Small);
        }
    }

    #[test]
    fn large_lesion_is_large() {
        for s in 0..50 {
            let (_, a) = insert_lesion(&image(48, 64), &mut seed::stream(s, 0), SizeClass::Large, 0.3).unwrap();
            assert!(a.area_fraction > SMALL_LESION_FRACTION);
            assert!(a.row + a.height <= 48 && a.col + a.width <= 64);
        }
    }

    #[test]
    fn outside_box_is_unchanged() {
        let img = image(40, 40);
        let (out, a) = insert_lesion(&img, &mut seed::stream(3, 0), SizeClass::Large, 0.4).unwrap();
        let mut changed = 0;
        for r in 0..40 {
            for c in 0..40 {
                let inside = r >= a.row && r < a.row + a.height && c >= a.col && c < a.col + a.width;
                if !inside {
                    assert_eq!(out.get(r, c), img.get(r, c));
                } else if out.get(r, c) != img.get(r, c) {
                    changed += 1;
                }
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn zero_amplitude_still_annotates() {
        let img = image(32, 32);
        let (out, a) = insert_lesion(&img, &mut seed::stream(4, 0), SizeClass::Small, 0.0).unwrap();
        assert_eq!(out, img);
        assert!(a.height > 0 && a.width > 0);
    }

    #[test]
    fn impossible_placement() {
        assert!(insert_lesion(&image(16, 16), &mut seed::stream(0, 0), SizeClass::Small, 0.1).is_err());
    }
}
