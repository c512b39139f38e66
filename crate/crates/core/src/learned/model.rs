use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RealImage;
use crate::kspace::{apply_adjoint, zero_filled_rss, CoilSensitivities, Direction, KSpaceData, SamplingMask};
use crate::seed;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Image-domain U-net applied to the normalized zero-filled RSS image.
    UnetLite,
    /// Unrolled data-consistency steps with small convolutional denoisers.
    VarnetLite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Channels at the first U-net level.
    pub channels: usize,
    pub pool_levels: usize,
    /// Unrolled steps (varnet_lite only).
    pub cascades: usize,
    /// Hidden channels of each cascade's denoiser (varnet_lite only).
    pub denoiser_channels: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn unet_lite(seed: u64) -> Self {
        Self {
            kind: ModelKind::UnetLite,
            channels: 8,
            pool_levels: 2,
            cascades: 0,
            denoiser_channels: 0,
            seed,
        }
    }

    pub fn varnet_lite(seed: u64) -> Self {
        Self {
            kind: ModelKind::VarnetLite,
            channels: 0,
            pool_levels: 0,
            cascades: 3,
            denoiser_channels: 6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::UnetLite => {
                if self.pool_levels == 0 || self.channels == 0 {
                    return Err(Error::invalid("unet_lite needs pool_levels >= 1 and channels >= 1"));
                }
                if self.pool_levels > 8 {
                    return Err(Error::invalid("unet_lite supports at most 8 pool levels"));
                }
            }
            ModelKind::VarnetLite => {
                if self.cascades == 0 || self.denoiser_channels == 0 {
                    return Err(Error::invalid("varnet_lite needs cascades >= 1 and denoiser_channels >= 1"));
                }
            }
        }
        Ok(())
    }
}

/// Measurements handed to a model.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub kspace: &'a KSpaceData,
    pub sensitivities: &'a CoilSensitivities,
    pub mask: &'a SamplingMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// Parameters in registration order.
    pub params: Vec<Tensor>,
    pub names: Vec<String>,
}

struct Init {
    rng: seed::Rng,
    params: Vec<Tensor>,
    names: Vec<String>,
}

impl Init {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, gain: f64) {
        let std = gain * (2.0 / (cin * k * k) as f64).sqrt();
        let data = (0..cout * cin * k * k).map(|_| std * self.rng.sample::<f64, _>(StandardNormal)).collect();
        self.params.push(Tensor::new(vec![cout, cin, k, k], data).expect("shape matches"));
        self.names.push(format!("{name}.weight"));
        self.params.push(Tensor::zeros(&[cout]));
        self.names.push(format!("{name}.bias"));
    }
}

/// Builds a model with seeded initial parameters.
pub fn construct_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut init = Init {
        rng: seed::stream(config.seed, 0x6d6f_6465),
        params: Vec::new(),
        names: Vec::new(),
    };
    match config.kind {
        ModelKind::UnetLite => {
            let c = |l: usize| config.channels << l;
            let levels = config.pool_levels;
            for l in 0..levels {
                init.conv(&format!("enc{l}"), if l == 0 { 1 } else { c(l - 1) }, c(l), 3, 1.0);
            }
            init.conv("bottleneck", c(levels - 1), c(levels), 3, 1.0);
            for l in (0..levels).rev() {
                init.conv(&format!("dec{l}"), c(l + 1) + c(l), c(l), 3, 1.0);
            }
            init.conv("out", c(0), 1, 1, 0.1);
        }
        ModelKind::VarnetLite => {
            let dc = config.denoiser_channels;
            for k in 0..config.cascades {
                init.params.push(Tensor::from_vec(vec![1.0]));
                init.names.push(format!("cascade{k}.eta"));
                init.conv(&format!("cascade{k}.conv0"), 2, dc, 3, 1.0);
                init.conv(&format!("cascade{k}.conv1"), dc, dc, 3, 1.0);
                init.conv(&format!("cascade{k}.conv2"), dc, 2, 3, 0.1);
            }
        }
    }
    Ok(Model {
        config: config.clone(),
        params: init.params,
        names: init.names,
    })
}

fn complex_constant(tape: &mut Tape, img: &crate::image::ComplexImage) -> Var {
    tape.constant(Tensor::from_complex_image(img))
}

impl Model {
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Registers parameters on `tape` (trainable or frozen).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect()
    }

    /// Records the forward pass; returns a `[1, H, W]` magnitude image.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: &ModelInput<'_>) -> Result<Var> {
        match self.config.kind {
            ModelKind::UnetLite => self.forward_unet(tape, params, input),
            ModelKind::VarnetLite => self.forward_varnet(tape, params, input),
        }
    }

    /// Reconstruction without gradient tracking.
    pub fn reconstruct(&self, input: &ModelInput<'_>) -> Result<RealImage> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &params, input)?;
        tape.value(out).to_real_image()
    }

    fn forward_unet(&self, tape: &mut Tape, p: &[Var], input: &ModelInput<'_>) -> Result<Var> {
        let zf = zero_filled_rss(input.kspace);
        let block = 1usize << self.config.pool_levels;
        if zf.height % block != 0 || zf.width % block != 0 {
            return Err(Error::Extent(format!(
                "unet_lite with {} pool levels needs extents divisible by {block}, got {}x{}",
                self.config.pool_levels, zf.height, zf.width
            )));
        }
        let mean = zf.mean();
        let std = zf.variance().sqrt();
        let std = if std > 0.0 { std } else { 1.0 };
        let normalized = RealImage::from_fn(zf.height, zf.width, |r, c| (zf.get(r, c) - mean) / std);
        let x = tape.constant(Tensor::from_real_image(&normalized));

        let mut it = p.chunks_exact(2);
        let mut conv = |tape: &mut Tape, h: Var, relu: bool| -> Result<Var> {
            let wb = it.next().expect("parameter layout matches config");
            let y = tape.conv2d(h, wb[0], Some(wb[1]))?;
            Ok(if relu { tape.relu(y) } else { y })
        };
        let mut h = x;
        let mut skips = Vec::with_capacity(self.config.pool_levels);
        for _ in 0..self.config.pool_levels {
            h = conv(tape, h, true)?;
            skips.push(h);
            h = tape.avgpool2(h)?;
        }
        h = conv(tape, h, true)?;
        for skip in skips.into_iter().rev() {
            let up = tape.upsample2(h)?;
            let cat = tape.concat_channels(up, skip)?;
            h = conv(tape, cat, true)?;
        }
        let residual = conv(tape, h, false)?;
        let out = tape.add(residual, x)?;
        let scaled = tape.scale(out, std);
        Ok(tape.add_scalar(scaled, mean))
    }

    fn forward_varnet(&self, tape: &mut Tape, p: &[Var], input: &ModelInput<'_>) -> Result<Var> {
        let atb_img = apply_adjoint(input.kspace, input.sensitivities, input.mask)?;
        let (h, w) = (atb_img.height, atb_img.width);
        let atb = complex_constant(tape, &atb_img);
        let maps: Vec<(Var, Var)> = input
            .sensitivities
            .maps
            .iter()
            .map(|s| {
                let conj = crate::image::ComplexImage {
                    height: s.height,
                    width: s.width,
                    values: s.values.iter().map(|v| v.conj()).collect(),
                };
                (complex_constant(tape, s), complex_constant(tape, &conj))
            })
            .collect();
        let mut m = vec![0.0; 2 * h * w];
        for r in 0..h {
            for c in 0..w {
                if input.mask.is_sampled(c) {
                    m[r * w + c] = 1.0;
                    m[h * w + r * w + c] = 1.0;
                }
            }
        }
        let mask = tape.constant(Tensor::new(vec![2, h, w], m)?);

        let per_cascade = 1 + 6;
        let mut x = atb;
        for k in 0..self.config.cascades {
            let q = &p[k * per_cascade..(k + 1) * per_cascade];
            // A^H A x
            let mut normal: Option<Var> = None;
            for &(s, sc) in &maps {
                let sx = tape.complex_mul(s, x)?;
                let kx = tape.fft2c(sx, Direction::Forward)?;
                let mk = tape.mul(kx, mask)?;
                let back = tape.fft2c(mk, Direction::Inverse)?;
                let term = tape.complex_mul(sc, back)?;
                normal = Some(match normal {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
            let normal = normal.ok_or_else(|| Error::invalid("varnet_lite needs at least one coil"))?;
            let grad = tape.sub(normal, atb)?;
            let step = tape.scale_by(grad, q[0])?;
            let d0 = tape.conv2d(x, q[1], Some(q[2]))?;
            let d0 = tape.relu(d0);
            let d1 = tape.conv2d(d0, q[3], Some(q[4]))?;
            let d1 = tape.relu(d1);
            let den = tape.conv2d(d1, q[5], Some(q[6]))?;
            let x1 = tape.sub(x, step)?;
            x = tape.sub(x1, den)?;
        }
        tape.complex_abs(x)
    }
}
