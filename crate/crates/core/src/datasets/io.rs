//! Dataset directory format and raw-volume ingestion.
//!
//! A dataset directory holds `manifest.json` and `data.bin`. The manifest
//! carries the format version, the distribution catalog and an item table
//! with byte offsets and a SHA-256 per payload; `data.bin` is the
//! concatenation of item payloads (little-endian `f64`, interleaved complex,
//! row-major; image first, then each coil map).

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{item_bytes, ContrastTransform, Dataset, DistributionSpec, Item, LesionAnnotation, ShapeFamily};
use crate::error::{Error, Result};
use crate::image::{ComplexImage, ComplexVolume};
use crate::kspace::{ifft2c, rss, views_from_3d, CoilSensitivities};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const PAYLOAD: &str = "data.bin";

#[derive(Debug, Serialize, Deserialize)]
struct ItemEntry {
    source: String,
    height: usize,
    width: usize,
    coils: usize,
    offset: u64,
    length: u64,
    sha256: String,
    lesion: Option<LesionAnnotation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    item_count: usize,
    content_hash: String,
    specs: Vec<DistributionSpec>,
    items: Vec<ItemEntry>,
}

/// Writes `dataset` into directory `path` (created if missing).
pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(dataset.len());
    for item in &dataset.items {
        let bytes = item_bytes(item);
        entries.push(ItemEntry {
            source: item.source.clone(),
            height: item.image.height,
            width: item.image.width,
            coils: item.sensitivities.coils(),
            offset: blob.len() as u64,
            length: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
            lesion: item.lesion.clone(),
        });
        blob.extend_from_slice(&bytes);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        item_count: dataset.len(),
        content_hash: dataset.content_hash(),
        specs: dataset.specs.clone(),
        items: entries,
    };
    fs::write(path.join(PAYLOAD), &blob)?;
    fs::write(path.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn read_complex(bytes: &[u8]) -> Vec<Complex64> {
    bytes
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
            )
        })
        .collect()
}

/// Reads a dataset directory written by [`save`].
pub fn load(path: &Path) -> Result<Dataset> {
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(path.join(MANIFEST))?)?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Format("manifest lacks format_version".into()))? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(raw)?;
    if manifest.item_count != manifest.items.len() {
        return Err(Error::Format(format!(
            "manifest declares {} items but lists {}",
            manifest.item_count,
            manifest.items.len()
        )));
    }
    let blob = fs::read(path.join(PAYLOAD))?;
    let mut items = Vec::with_capacity(manifest.items.len());
    for (i, e) in manifest.items.into_iter().enumerate() {
        let n = e.height * e.width;
        let expected = (16 * n * (1 + e.coils)) as u64;
        if e.length != expected {
            return Err(Error::Format(format!("item {i}: length {} does not match extents", e.length)));
        }
        let end = e.offset.checked_add(e.length).filter(|&end| end <= blob.len() as u64).ok_or_else(|| {
            Error::Truncated(format!("item {i} needs bytes up to {} but data.bin has {}", e.offset + e.length, blob.len()))
        })?;
        let bytes = &blob[e.offset as usize..end as usize];
        if hex::encode(Sha256::digest(bytes)) != e.sha256 {
            return Err(Error::Checksum(format!("item {i}")));
        }
        let values = read_complex(bytes);
        let image = ComplexImage::from_values(e.height, e.width, values[..n].to_vec())?;
        let maps = values[n..]
            .chunks_exact(n)
            .map(|c| ComplexImage::from_values(e.height, e.width, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        items.push(Item {
            image,
            sensitivities: CoilSensitivities::new(maps)?,
            source: e.source,
            lesion: e.lesion,
        });
    }
    let dataset = Dataset {
        specs: manifest.specs,
        items,
    };
    if dataset.content_hash() != manifest.content_hash {
        return Err(Error::Checksum("dataset content hash".into()));
    }
    Ok(dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawKind {
    /// 3D k-space; 2D views are synthesized along `axis`.
    Volume3d,
    /// Stack of 2D k-space slices along axis 0.
    Stack2d,
}

fn default_snr() -> f64 {
    60.0
}

/// Describes a raw little-endian `f64` interleaved-complex payload holding
/// `coils` consecutive arrays of extents `dims`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLayout {
    pub name: String,
    pub kind: RawKind,
    pub dims: [usize; 3],
    #[serde(default = "one")]
    pub coils: usize,
    #[serde(default)]
    pub axis: usize,
    #[serde(default)]
    pub trim_front: usize,
    #[serde(default)]
    pub trim_back: usize,
    /// SNR assigned to the ingested distribution when it is re-measured.
    #[serde(default = "default_snr")]
    pub snr_db: f64,
}

fn one() -> usize {
    1
}

/// Turns raw k-space into a dataset of fully sampled slices.
///
/// Single-coil data keeps its complex image with unit sensitivity. For
/// multi-coil data the ground truth is the RSS image and each coil map is
/// the coil image divided by that RSS (a unit map on the first coil where
/// the RSS vanishes), so `S_i x` reproduces every coil image exactly.
pub fn ingest_raw_volume(path: &Path, layout: &RawLayout) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    ingest_raw_bytes(&bytes, layout)
}

pub(crate) fn ingest_raw_bytes(bytes: &[u8], layout: &RawLayout) -> Result<Dataset> {
    if layout.coils == 0 || layout.dims.contains(&0) {
        return Err(Error::invalid("raw layout extents and coil count must be positive"));
    }
    let per_coil: usize = layout.dims.iter().product();
    let expected = 16 * per_coil * layout.coils;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "raw payload has {} bytes, layout {:?} x {} coils needs {expected}",
            bytes.len(),
            layout.dims,
            layout.coils
        )));
    }
    let values = read_complex(bytes);
    let volumes = values
        .chunks_exact(per_coil)
        .map(|c| ComplexVolume::new(layout.dims, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;

    let slices: Vec<Vec<ComplexImage>> = match layout.kind {
        RawKind::Volume3d => views_from_3d(&volumes, layout.axis)?.into_iter().map(|k| k.coils).collect(),
        RawKind::Stack2d => {
            let [n, h, w] = layout.dims;
            (0..n)
                .map(|s| {
                    volumes
                        .iter()
                        .map(|v| ComplexImage::from_values(h, w, v.values[s * h * w..(s + 1) * h * w].to_vec()))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?
        }
    };
    let total = slices.len();
    if layout.trim_front + layout.trim_back >= total {
        return Err(Error::invalid(format!(
            "trimming {} + {} slices leaves nothing of {total}",
            layout.trim_front, layout.trim_back
        )));
    }
    let kept = &slices[layout.trim_front..total - layout.trim_back];
    let (h, w) = (kept[0][0].height, kept[0][0].width);

    let items = kept
        .iter()
        .map(|coil_k| {
            let coil_images: Vec<ComplexImage> = coil_k.iter().map(ifft2c).collect();
            if coil_images.len() == 1 {
                return Ok(Item {
                    image: coil_images.into_iter().next().expect("one coil"),
                    sensitivities: CoilSensitivities::unit(h, w),
                    source: layout.name.clone(),
                    lesion: None,
                });
            }
            let combined = rss(&coil_images)?;
            let maps = coil_images
                .iter()
                .enumerate()
                .map(|(c, img)| {
                    let values = img
                        .values
                        .iter()
                        .zip(&combined.values)
                        .map(|(v, &r)| {
                            if r > 0.0 {
                                v / r
                            } else if c == 0 {
                                Complex64::new(1.0, 0.0)
                            } else {
                                Complex64::new(0.0, 0.0)
                            }
                        })
                        .collect();
                    ComplexImage::from_values(h, w, values)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Item {
                image: ComplexImage::from_real(&combined),
                sensitivities: CoilSensitivities::new(maps)?,
                source: layout.name.clone(),
                lesion: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let spec = DistributionSpec {
        name: layout.name.clone(),
        shape_family: ShapeFamily::EllipsePhantom,
        contrast: ContrastTransform::Identity,
        snr_db: layout.snr_db,
        coils: layout.coils,
        height: h,
        width: w,
        seed: 0,
        sensitivity_cutoff: 0,
        lesions: None,
    };
    Dataset::from_parts(vec![spec], items)
}
