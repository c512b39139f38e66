//! Synthetic magnitude phantoms in [0, 1].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::RealImage;
use crate::kspace::lowpass_field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    EllipsePhantom,
    PolygonPhantom,
    TexturedPhantom,
}

/// Monotone intensity map applied to phantom magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ContrastTransform {
    Identity,
    Gamma { gamma: f64 },
    /// Piecewise-linear map through `(input, output)` knots sorted by input,
    /// with nondecreasing outputs; values outside the knot range are clamped.
    PiecewiseLinear { knots: Vec<[f64; 2]> },
}

impl ContrastTransform {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ContrastTransform::Identity => Ok(()),
            ContrastTransform::Gamma { gamma } if *gamma > 0.0 && gamma.is_finite() => Ok(()),
            ContrastTransform::Gamma { gamma } => Err(format!("gamma {gamma} must be positive")),
            ContrastTransform::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return Err("piecewise-linear contrast needs >= 2 knots".into());
                }
                if knots.windows(2).any(|w| !(w[1][0] > w[0][0]) || w[1][1] < w[0][1]) {
                    return Err("piecewise-linear knots must increase in input and not decrease in output".into());
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        match self {
            ContrastTransform::Identity => v,
            ContrastTransform::Gamma { gamma } => v.max(0.0).powf(*gamma),
            ContrastTransform::PiecewiseLinear { knots } => {
                if v <= knots[0][0] {
                    return knots[0][1];
                }
                for w in knots.windows(2) {
                    let ([x0, y0], [x1, y1]) = (w[0], w[1]);
                    if v <= x1 {
                        return y0 + (y1 - y0) * (v - x0) / (x1 - x0);
                    }
                }
                knots[knots.len() - 1][1]
            }
        }
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, r: f64, c: f64) -> bool {
        let (dy, dx) = (r - self.cy, c - self.cx);
        let (s, co) = self.angle.sin_cos();
        let u = dx * co + dy * s;
        let v = -dx * s + dy * co;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }
}

fn head<R: Rng + ?Sized>(h: f64, w: f64, rng: &mut R) -> Ellipse {
    Ellipse {
        cy: h / 2.0 + rng.gen_range(-0.03..0.03) * h,
        cx: w / 2.0 + rng.gen_range(-0.03..0.03) * w,
        ay: rng.gen_range(0.36..0.44) * h,
        ax: rng.gen_range(0.32..0.42) * w,
        angle: rng.gen_range(-0.2..0.2),
    }
}

fn inner_ellipse<R: Rng + ?Sized>(outer: &Ellipse, h: f64, w: f64, rng: &mut R) -> Ellipse {
    let t: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let rho: f64 = rng.gen::<f64>().sqrt() * 0.6;
    Ellipse {
        cy: outer.cy + rho * outer.ay * t.sin(),
        cx: outer.cx + rho * outer.ax * t.cos(),
        ay: rng.gen_range(0.04..0.16) * h,
        ax: rng.gen_range(0.04..0.16) * w,
        angle: rng.gen_range(0.0..std::f64::consts::PI),
    }
}

/// Convex polygon as a list of vertices in angular order.
fn polygon_contains(vertices: &[(f64, f64)], r: f64, c: f64) -> bool {
    let n = vertices.len();
    let mut sign = 0.0;
    for i in 0..n {
        let (y0, x0) = vertices[i];
        let (y1, x1) = vertices[(i + 1) % n];
        let cross = (x1 - x0) * (r - y0) - (y1 - y0) * (c - x0);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
    }
    true
}

/// Draws a phantom magnitude image with values in [0, 1].
pub fn phantom<R: Rng + ?Sized>(family: ShapeFamily, height: usize, width: usize, rng: &mut R) -> RealImage {
    let (h, w) = (height as f64, width as f64);
    let outer = head(h, w, rng);
    let base: f64 = rng.gen_range(0.55..0.75);
    let mut img = RealImage::from_fn(height, width, |r, c| {
        if outer.contains(r as f64 + 0.5, c as f64 + 0.5) {
            base
        } else {
            0.0
        }
    });
    let inside = |img: &RealImage, r: usize, c: usize| img.get(r, c) > 0.0;

    match family {
        ShapeFamily::EllipsePhantom | ShapeFamily::TexturedPhantom => {
            let count = rng.gen_range(3..=7);
            for _ in 0..count {
                let e = inner_ellipse(&outer, h, w, rng);
                let delta: f64 = rng.gen_range(0.1..0.4) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                for r in 0..height {
                    for c in 0..width {
                        if inside(&img, r, c) && e.contains(r as f64 + 0.5, c as f64 + 0.5) {
                            img.set(r, c, img.get(r, c) + delta);
                        }
                    }
                }
            }
        }
        ShapeFamily::PolygonPhantom => {
            let count = rng.gen_range(3..=6);
            for _ in 0..count {
                let center = inner_ellipse(&outer, h, w, rng);
                let sides = rng.gen_range(3..=6);
                let radius = rng.gen_range(0.06..0.18) * h.min(w);
                let rot: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
                let vertices: Vec<(f64, f64)> = (0..sides)
                    .map(|k| {
                        let a = rot + std::f64::consts::TAU * k as f64 / sides as f64;
                        (center.cy + radius * a.sin(), center.cx + radius * a.cos())
                    })
                    .collect();
                let delta: f64 = rng.gen_range(0.1..0.4) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                for r in 0..height {
                    for c in 0..width {
                        if inside(&img, r, c) && polygon_contains(&vertices, r as f64 + 0.5, c as f64 + 0.5) {
                            img.set(r, c, img.get(r, c) + delta);
                        }
                    }
                }
            }
        }
    }

    if family == ShapeFamily::TexturedPhantom {
        let texture = lowpass_field(height, width, (height.min(width) / 6).max(2), rng);
        for r in 0..height {
            for c in 0..width {
                if inside(&img, r, c) {
                    let t = texture.get(r, c).re;
                    img.set(r, c, img.get(r, c) * (1.0 + 0.3 * t));
                }
            }
        }
    }

    for v in img.values.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    img
}
