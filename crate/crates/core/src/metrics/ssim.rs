//! Structural similarity with a uniform square window.
//!
//! Local statistics use the unbiased covariance normalization `n / (n - 1)`,
//! `C1 = (k1 L)^2`, `C2 = (k2 L)^2`, and the index is averaged over every
//! window position fully inside the image (no padding).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RealImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataRange {
    /// Maximum of the target image (per-volume maximum when the target is a
    /// slice of a volume and the caller passes the volume maximum through
    /// [`DataRange::Fixed`]).
    TargetMax,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: DataRange,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: DataRange::TargetMax,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::invalid(format!("ssim window {} must be odd and >= 3", self.window)));
        }
        Ok(())
    }

    /// Resolves the dynamic range `L` for a given target.
    pub fn range_for(&self, target: &RealImage) -> f64 {
        let l = match self.data_range {
            DataRange::TargetMax => target.max(),
            DataRange::Fixed(v) => v,
        };
        // an all-zero target has no meaningful range; fall back to 1
        if l > 0.0 && l.is_finite() {
            l
        } else {
            1.0
        }
    }
}

/// Summed-area table with a zero first row/column.
struct Integral {
    w: usize,
    data: Vec<f64>,
}

impl Integral {
    fn new(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Self {
        let mut data = vec![0.0; (h + 1) * (w + 1)];
        for r in 0..h {
            let mut row = 0.0;
            for c in 0..w {
                row += f(r * w + c);
                data[(r + 1) * (w + 1) + c + 1] = data[r * (w + 1) + c + 1] + row;
            }
        }
        Self { w: w + 1, data }
    }

    #[inline]
    fn window(&self, r: usize, c: usize, k: usize) -> f64 {
        let w = self.w;
        self.data[(r + k) * w + c + k] - self.data[r * w + c + k] - self.data[(r + k) * w + c]
            + self.data[r * w + c]
    }
}

struct Moments {
    mx: f64,
    my: f64,
    vx: f64,
    vy: f64,
    cxy: f64,
}

fn check(x: &RealImage, y: &RealImage, window: usize) -> Result<()> {
    if !x.same_extents(y) {
        return Err(Error::Extent(format!(
            "ssim inputs {}x{} and {}x{}",
            x.height, x.width, y.height, y.width
        )));
    }
    if x.height < window || x.width < window {
        return Err(Error::Extent(format!(
            "ssim needs extents >= window {window}, got {}x{}",
            x.height, x.width
        )));
    }
    Ok(())
}

/// Visits every valid window with its local moments.
fn for_each_window(x: &RealImage, y: &RealImage, k: usize, mut f: impl FnMut(usize, usize, Moments)) {
    let (h, w) = (x.height, x.width);
    let sx = Integral::new(h, w, |i| x.values[i]);
    let sy = Integral::new(h, w, |i| y.values[i]);
    let sxx = Integral::new(h, w, |i| x.values[i] * x.values[i]);
    let syy = Integral::new(h, w, |i| y.values[i] * y.values[i]);
    let sxy = Integral::new(h, w, |i| x.values[i] * y.values[i]);
    let n = (k * k) as f64;
    let cov_norm = n / (n - 1.0);
    for r in 0..=h - k {
        for c in 0..=w - k {
            let mx = sx.window(r, c, k) / n;
            let my = sy.window(r, c, k) / n;
            let vx = cov_norm * (sxx.window(r, c, k) / n - mx * mx);
            let vy = cov_norm * (syy.window(r, c, k) / n - my * my);
            let cxy = cov_norm * (sxy.window(r, c, k) / n - mx * my);
            f(r, c, Moments { mx, my, vx, vy, cxy });
        }
    }
}

/// SSIM with an explicit dynamic range.
pub fn ssim_with_range(x: &RealImage, y: &RealImage, cfg: &SsimConfig, data_range: f64) -> Result<f64> {
    cfg.validate()?;
    check(x, y, cfg.window)?;
    let c1 = (cfg.k1 * data_range).powi(2);
    let c2 = (cfg.k2 * data_range).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for_each_window(x, y, cfg.window, |_, _, m| {
        let a = (2.0 * m.mx * m.my + c1) * (2.0 * m.cxy + c2);
        let b = (m.mx * m.mx + m.my * m.my + c1) * (m.vx + m.vy + c2);
        total += a / b;
        count += 1;
    });
    Ok(total / count as f64)
}

/// SSIM of `recon` against `target`, range per `cfg.data_range`.
pub fn ssim(recon: &RealImage, target: &RealImage, cfg: &SsimConfig) -> Result<f64> {
    ssim_with_range(recon, target, cfg, cfg.range_for(target))
}

/// SSIM and its gradient with respect to `x` (the first argument).
pub fn ssim_and_grad(
    x: &RealImage,
    y: &RealImage,
    cfg: &SsimConfig,
    data_range: f64,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    check(x, y, cfg.window)?;
    let k = cfg.window;
    let (h, w) = (x.height, x.width);
    let c1 = (cfg.k1 * data_range).powi(2);
    let c2 = (cfg.k2 * data_range).powi(2);
    let n = (k * k) as f64;
    let cov_norm = n / (n - 1.0);
    let (wh, ww) = (h - k + 1, w - k + 1);
    let windows = (wh * ww) as f64;

    // dS_w/dx_p = a_w + b_w y_p + c_w x_p for every p inside window w
    let mut a = vec![0.0; wh * ww];
    let mut b = vec![0.0; wh * ww];
    let mut cc = vec![0.0; wh * ww];
    let mut total = 0.0;
    for_each_window(x, y, k, |r, c, m| {
        let a1 = 2.0 * m.mx * m.my + c1;
        let a2 = 2.0 * m.cxy + c2;
        let b1 = m.mx * m.mx + m.my * m.my + c1;
        let b2 = m.vx + m.vy + c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        let denom = n * b1 * b2;
        let i = r * ww + c;
        a[i] = (2.0 * m.my * a2 - 2.0 * cov_norm * a1 * m.my - s * (2.0 * m.mx * b2 - 2.0 * cov_norm * b1 * m.mx))
            / denom;
        b[i] = 2.0 * cov_norm * a1 / denom;
        cc[i] = -2.0 * cov_norm * s * b1 / denom;
    });

    let ia = Integral::new(wh, ww, |i| a[i]);
    let ib = Integral::new(wh, ww, |i| b[i]);
    let ic = Integral::new(wh, ww, |i| cc[i]);
    let mut grad = vec![0.0; h * w];
    for r in 0..h {
        let r0 = r.saturating_sub(k - 1);
        let r1 = r.min(wh - 1);
        for c in 0..w {
            let c0 = c.saturating_sub(k - 1);
            let c1_ = c.min(ww - 1);
            let rect = |t: &Integral| {
                let tw = t.w;
                t.data[(r1 + 1) * tw + c1_ + 1] - t.data[r0 * tw + c1_ + 1] - t.data[(r1 + 1) * tw + c0]
                    + t.data[r0 * tw + c0]
            };
            let p = r * w + c;
            grad[p] = (rect(&ia) + rect(&ib) * y.values[p] + rect(&ic) * x.values[p]) / windows;
        }
    }
    Ok((total / windows, grad))
}

/// SSIM restricted to a box; the dynamic range still comes from the full
/// target.
pub fn region_ssim(recon: &RealImage, target: &RealImage, region: &Region, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    if !recon.same_extents(target) {
        return Err(Error::Extent("region_ssim inputs differ in extents".into()));
    }
    if region.height < cfg.window || region.width < cfg.window {
        return Err(Error::invalid(format!(
            "region {}x{} is smaller than the {}x{} ssim window",
            region.height, region.width, cfg.window, cfg.window
        )));
    }
    let range = cfg.range_for(target);
    let x = recon.crop(region.row, region.col, region.height, region.width)?;
    let y = target.crop(region.row, region.col, region.height, region.width)?;
    ssim_with_range(&x, &y, cfg, range)
}

/// Axis-aligned pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn full(image: &RealImage) -> Self {
        Self {
            row: 0,
            col: 0,
            height: image.height,
            width: image.width,
        }
    }
}
