//! Synthetic multi-distribution datasets: generation, dataset algebra,
//! lesion insertion, measurement simulation and file I/O.

mod io;
mod lesion;
mod phantom;

pub use io::{ingest_raw_volume, load, save, RawKind, RawLayout, FORMAT_VERSION};
pub use lesion::{insert_lesion, LesionAnnotation, SizeClass, SMALL_LESION_FRACTION};
pub use phantom::{phantom, ContrastTransform, ShapeFamily};

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{ComplexImage, RealImage};
use crate::kspace::{
    apply_forward, simulate_sensitivities, CoilSensitivities, KSpaceData, MaskPolicy, NoiseModel, SamplingMask,
};
use crate::kspace::lowpass_field;
use crate::par;
use crate::seed;

/// Optional lesion insertion during generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    /// Probability that an item carries a lesion.
    pub rate: f64,
    /// Probability that an inserted lesion is small (<= 1% of the image).
    pub small_fraction: f64,
    pub amplitude: f64,
}

fn default_cutoff() -> usize {
    3
}

/// A parameterized synthetic image distribution.
///
/// Anatomy maps to `shape_family`, contrast/sequence to `contrast`, field
/// strength to `snr_db`, and receiver hardware to `coils`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub name: String,
    pub shape_family: ShapeFamily,
    pub contrast: ContrastTransform,
    pub snr_db: f64,
    pub coils: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    #[serde(default = "default_cutoff")]
    pub sensitivity_cutoff: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesions: Option<LesionSpec>,
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("distribution name must not be empty"));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::invalid(format!("{}: snr_db must be finite", self.name)));
        }
        if self.height < 16 || self.width < 16 || self.height % 4 != 0 || self.width % 4 != 0 {
            return Err(Error::invalid(format!(
                "{}: extents {}x{} must be >= 16 and divisible by 4",
                self.name, self.height, self.width
            )));
        }
        if self.coils == 0 {
            return Err(Error::invalid(format!("{}: coil count must be >= 1", self.name)));
        }
        if let Some(l) = &self.lesions {
            if !(0.0..=1.0).contains(&l.rate) || !(0.0..=1.0).contains(&l.small_fraction) {
                return Err(Error::invalid(format!("{}: lesion probabilities must lie in [0, 1]", self.name)));
            }
        }
        self.contrast.validate().map_err(|e| Error::invalid(format!("{}: {e}", self.name)))
    }

    /// Per-coil noise standard deviation for an item, chosen so that the
    /// expected full-k-space noise energy is `||signal||^2 / 10^(snr/10)`.
    pub fn noise_sigma(&self, image: &ComplexImage, coils: usize) -> f64 {
        let n = (image.len() * coils) as f64;
        image.norm() / n.sqrt() * 10f64.powf(-self.snr_db / 20.0)
    }
}

/// One slice with its ground truth, coils and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub image: ComplexImage,
    pub sensitivities: CoilSensitivities,
    /// Name of the [`DistributionSpec`] this item was drawn from.
    pub source: String,
    pub lesion: Option<LesionAnnotation>,
}

impl Item {
    /// RSS of the coil images `S_i x`; equals `|x|` for normalized coils.
    pub fn target(&self) -> RealImage {
        self.image.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub specs: Vec<DistributionSpec>,
    pub items: Vec<Item>,
}

/// Simulated acquisition of one item.
#[derive(Debug, Clone)]
pub struct Sample {
    pub kspace: KSpaceData,
    pub mask: SamplingMask,
    pub target: RealImage,
    pub mask_seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn extents(&self) -> Option<(usize, usize)> {
        self.items.first().map(|i| (i.image.height, i.image.width))
    }

    pub fn spec(&self, name: &str) -> Option<&DistributionSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn spec_of(&self, index: usize) -> Result<&DistributionSpec> {
        let src = &self.items[index].source;
        self.spec(src)
            .ok_or_else(|| Error::Format(format!("item {index} references unknown distribution `{src}`")))
    }

    /// Number of items per source distribution.
    pub fn source_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for it in &self.items {
            *m.entry(it.source.clone()).or_insert(0) += 1;
        }
        m
    }

    /// Comma-joined sorted source names.
    pub fn source_label(&self) -> String {
        self.source_counts().into_keys().collect::<Vec<_>>().join("+")
    }

    /// Noisy undersampled measurement of item `index`.
    pub fn measure(&self, index: usize, mask: &SamplingMask, noise_seed: u64) -> Result<KSpaceData> {
        let item = &self.items[index];
        let spec = self.spec_of(index)?;
        let noise = NoiseModel {
            sigma: spec.noise_sigma(&item.image, item.sensitivities.coils()),
            seed: noise_seed,
        };
        apply_forward(&item.image, &item.sensitivities, mask, &noise)
    }

    /// Evaluation sample: one fixed mask per volume (each item is its own
    /// volume here), drawn from `mask_seed` and the item index.
    pub fn eval_sample(&self, index: usize, acceleration: f64, mask_seed: u64) -> Result<Sample> {
        let item = &self.items[index];
        let policy = MaskPolicy::new(mask_seed);
        let mask = policy.volume_mask(item.image.width, acceleration, index as u64)?;
        let noise_seed = seed::derive(mask_seed, &[0x6e6f_6973, index as u64]);
        Ok(Sample {
            kspace: self.measure(index, &mask, noise_seed)?,
            mask,
            target: item.target(),
            mask_seed,
        })
    }

    /// SHA-256 over every payload and the spec catalog.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.specs).expect("specs serialize"));
        for item in &self.items {
            h.update(item_bytes(item));
            h.update(item.source.as_bytes());
            h.update(serde_json::to_vec(&item.lesion).expect("lesion serializes"));
        }
        hex::encode(h.finalize())
    }

    /// Ground-truth targets in item order.
    pub fn targets(&self) -> Vec<RealImage> {
        self.items.iter().map(Item::target).collect()
    }

    fn from_parts(specs: Vec<DistributionSpec>, items: Vec<Item>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("dataset would be empty"));
        }
        Ok(Self { specs, items })
    }
}

/// Little-endian payload of an item: image then every coil map, each as
/// interleaved (re, im) `f64`.
pub(crate) fn item_bytes(item: &Item) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 * item.image.len() * (1 + item.sensitivities.coils()));
    let mut put = |v: &Complex64| {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    };
    item.image.values.iter().for_each(&mut put);
    for m in &item.sensitivities.maps {
        m.values.iter().for_each(&mut put);
    }
    out
}

fn generate_item(spec: &DistributionSpec, index: usize) -> Result<Item> {
    let mut rng = seed::stream(spec.seed, index as u64);
    let magnitude = phantom(spec.shape_family, spec.height, spec.width, &mut rng);
    let phase = lowpass_field(spec.height, spec.width, 2, &mut rng);
    let values = magnitude
        .values
        .iter()
        .zip(&phase.values)
        .map(|(&m, p)| Complex64::from_polar(spec.contrast.apply(m), 0.5 * std::f64::consts::PI * p.re))
        .collect();
    let mut image = ComplexImage::from_values(spec.height, spec.width, values)?;
    let sensitivities = simulate_sensitivities(spec.height, spec.width, spec.coils, spec.sensitivity_cutoff, &mut rng)?;
    let mut lesion = None;
    if let Some(l) = &spec.lesions {
        if rng.gen_bool(l.rate) {
            let class = if rng.gen_bool(l.small_fraction) {
                SizeClass::Small
            } else {
                SizeClass::Large
            };
            let (img, ann) = insert_lesion(&image, &mut rng, class, l.amplitude)?;
            image = img;
            lesion = Some(ann);
        }
    }
    Ok(Item {
        image,
        sensitivities,
        source: spec.name.clone(),
        lesion,
    })
}

/// Draws `count` items; item `i` depends only on `(spec, i)`.
pub fn generate(spec: &DistributionSpec, count: usize) -> Result<Dataset> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::invalid("generate needs count >= 1"));
    }
    let items = par::try_map_indexed(count, |i| generate_item(spec, i))?;
    Dataset::from_parts(vec![spec.clone()], items)
}

/// Concatenation with provenance preserved; all inputs must share extents.
pub fn combine(datasets: &[&Dataset]) -> Result<Dataset> {
    let mut specs: Vec<DistributionSpec> = Vec::new();
    let mut items = Vec::new();
    let mut extents = None;
    for d in datasets {
        if let Some(e) = d.extents() {
            if *extents.get_or_insert(e) != e {
                return Err(Error::Extent(format!(
                    "cannot combine {}x{} with {}x{} datasets",
                    e.0,
                    e.1,
                    extents.unwrap().0,
                    extents.unwrap().1
                )));
            }
        }
        for s in &d.specs {
            match specs.iter().find(|x| x.name == s.name) {
                Some(existing) if existing != s => {
                    return Err(Error::invalid(format!("conflicting definitions of distribution `{}`", s.name)))
                }
                Some(_) => {}
                None => specs.push(s.clone()),
            }
        }
        items.extend(d.items.iter().cloned());
    }
    Dataset::from_parts(specs, items)
}

/// Returns the large set unchanged and a small set of its first
/// `round(len / factor)` items.
pub fn skew(large: &Dataset, factor: f64) -> Result<(Dataset, Dataset)> {
    if !(factor >= 1.0) {
        return Err(Error::invalid(format!("skew factor {factor} must be >= 1")));
    }
    let n = (large.len() as f64 / factor).round() as usize;
    let small = Dataset::from_parts(large.specs.clone(), large.items[..n].to_vec())?;
    Ok((large.clone(), small))
}

/// Seeded sample without replacement of `round(fraction * len)` items,
/// kept in original order.
pub fn subsample<R: Rng + ?Sized>(d: &Dataset, fraction: f64, rng: &mut R) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("subsample fraction {fraction} must lie in (0, 1]")));
    }
    let k = (fraction * d.len() as f64).round() as usize;
    let mut idx = rand::seq::index::sample(rng, d.len(), k.min(d.len())).into_vec();
    idx.sort_unstable();
    Dataset::from_parts(d.specs.clone(), idx.into_iter().map(|i| d.items[i].clone()).collect())
}
