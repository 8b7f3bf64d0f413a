//! Volumes on disk, physical-space cropping and resampling, augmentation,
//! synthetic phantoms and case datasets.

mod augment;
mod dataset;
mod geometry;
mod phantom;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{LabelMask, TZ_LABEL};

pub use augment::{augment, AugmentSpec, ElasticSpec};
pub use dataset::{list_cases, load_case, prepare_case, Case, CasePaths, PreparedCase};
pub use geometry::{central_crop_mm, paste_crop, resample_image, resample_mask, CropWindow, DEFAULT_CROP_MM};
pub use phantom::{generate_phantom, generate_second_reader, write_phantom_dataset, PHANTOM_SPACING_MM};

/// Network input side the pipeline resamples to by default.
pub const DEFAULT_INPUT_SIZE: usize = 192;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeKind {
    Image,
    Mask,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Voxels {
    U16(Vec<u16>),
    U8(Vec<u8>),
}

impl Voxels {
    fn len(&self) -> usize {
        match self {
            Voxels::U16(v) => v.len(),
            Voxels::U8(v) => v.len(),
        }
    }
}

/// A stack of 2D slices with physical spacing. Images hold 16-bit
/// intensities, masks hold zone labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    width: usize,
    height: usize,
    n_slices: usize,
    spacing_mm: [f64; 3],
    voxels: Voxels,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    width: usize,
    height: usize,
    slices: usize,
    spacing_mm: [f64; 3],
    dtype: String,
    kind: String,
}

impl Volume {
    pub fn new(width: usize, height: usize, n_slices: usize, spacing_mm: [f64; 3], voxels: Voxels) -> Result<Self> {
        if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Validation(format!("spacing must be positive, got {spacing_mm:?}")));
        }
        let expected = width * height * n_slices;
        if voxels.len() != expected {
            return Err(Error::Validation(format!(
                "{width}×{height}×{n_slices} volume needs {expected} voxels, got {}",
                voxels.len()
            )));
        }
        if let Voxels::U8(v) = &voxels {
            if let Some(bad) = v.iter().find(|&&l| l > TZ_LABEL) {
                return Err(Error::Validation(format!("mask value {bad} outside {{0, 1, 2}}")));
            }
        }
        Ok(Self { width, height, n_slices, spacing_mm, voxels })
    }

    /// Builds a mask volume from equally sized slices.
    pub fn from_masks(slices: &[LabelMask], spacing_mm: [f64; 3]) -> Result<Self> {
        let (w, h) = slices.first().map_or((0, 0), |m| (m.width(), m.height()));
        if slices.iter().any(|m| (m.width(), m.height()) != (w, h)) {
            return Err(Error::Validation("mask slices differ in size".into()));
        }
        let voxels = slices.iter().flat_map(|m| m.labels().iter().copied()).collect();
        Self::new(w, h, slices.len(), spacing_mm, Voxels::U8(voxels))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn voxels(&self) -> &Voxels {
        &self.voxels
    }

    pub fn kind(&self) -> VolumeKind {
        match self.voxels {
            Voxels::U16(_) => VolumeKind::Image,
            Voxels::U8(_) => VolumeKind::Mask,
        }
    }

    fn slice_range(&self, z: usize) -> std::ops::Range<usize> {
        assert!(z < self.n_slices, "slice {z} out of {}", self.n_slices);
        let n = self.width * self.height;
        z * n..(z + 1) * n
    }

    /// Intensities of slice `z` as floats; errors on mask volumes.
    pub fn image_slice(&self, z: usize) -> Result<Vec<f32>> {
        match &self.voxels {
            Voxels::U16(v) => Ok(v[self.slice_range(z)].iter().map(|&x| f32::from(x)).collect()),
            Voxels::U8(_) => Err(Error::Validation("expected an image volume, got a mask".into())),
        }
    }

    /// Labels of slice `z`; errors on image volumes.
    pub fn mask_slice(&self, z: usize) -> Result<LabelMask> {
        match &self.voxels {
            Voxels::U8(v) => LabelMask::new(self.width, self.height, v[self.slice_range(z)].to_vec()),
            Voxels::U16(_) => Err(Error::Validation("expected a mask volume, got an image".into())),
        }
    }

    pub fn mask_slices(&self) -> Result<Vec<LabelMask>> {
        (0..self.n_slices).map(|z| self.mask_slice(z)).collect()
    }
}

/// `<stem>.json` and `<stem>.raw` for a path given with or without either
/// extension.
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".json"), with(".raw"))
}

pub fn save_volume(volume: &Volume, path: &Path) -> Result<()> {
    let (json_path, raw_path) = volume_paths(path);
    let (dtype, kind, bytes) = match &volume.voxels {
        Voxels::U16(v) => ("u16", "image", v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>()),
        Voxels::U8(v) => ("u8", "mask", v.clone()),
    };
    let header = Header {
        width: volume.width,
        height: volume.height,
        slices: volume.n_slices,
        spacing_mm: volume.spacing_mm,
        dtype: dtype.into(),
        kind: kind.into(),
    };
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(&json_path, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let (json_path, raw_path) = volume_paths(path);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: Header =
        serde_json::from_str(&text).map_err(|e| Error::corrupt(&json_path, format!("bad header: {e}")))?;
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let count = header.width * header.height * header.slices;
    let voxels = match (header.kind.as_str(), header.dtype.as_str()) {
        ("image", "u16") => {
            if bytes.len() != count * 2 {
                return Err(Error::corrupt(&raw_path, format!("expected {} bytes, found {}", count * 2, bytes.len())));
            }
            Voxels::U16(bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect())
        }
        ("mask", "u8") => {
            if bytes.len() != count {
                return Err(Error::corrupt(&raw_path, format!("expected {count} bytes, found {}", bytes.len())));
            }
            Voxels::U8(bytes)
        }
        (kind, dtype) => {
            return Err(Error::corrupt(&json_path, format!("unsupported kind/dtype {kind}/{dtype}")));
        }
    };
    Volume::new(header.width, header.height, header.slices, header.spacing_mm, voxels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> Volume {
        Volume::new(3, 2, 2, [0.5, 0.5, 3.6], Voxels::U16((0..12).map(|i| i * 5000).collect())).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = image();
        save_volume(&img, &dir.path().join("case000_img")).unwrap();
        assert_eq!(load_volume(&dir.path().join("case000_img.json")).unwrap(), img);
        let mask = Volume::new(2, 1, 2, [0.5, 0.5, 3.6], Voxels::U8(vec![0, 1, 2, 1])).unwrap();
        save_volume(&mask, &dir.path().join("m.raw")).unwrap();
        assert_eq!(load_volume(&dir.path().join("m")).unwrap(), mask);
    }

    #[test]
    fn truncated_blob_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v");
        save_volume(&image(), &p).unwrap();
        let raw = dir.path().join("v.raw");
        let bytes = fs::read(&raw).unwrap();
        fs::write(&raw, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn mask_values_are_validated_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m");
        save_volume(&Volume::new(2, 1, 1, [1.0; 3], Voxels::U8(vec![0, 1])).unwrap(), &p).unwrap();
        fs::write(dir.path().join("m.raw"), [0u8, 3]).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v");
        save_volume(&image(), &p).unwrap();
        let json = fs::read_to_string(dir.path().join("v.json")).unwrap().replace("\"image\"", "\"label\"");
        fs::write(dir.path().join("v.json"), json).unwrap();
        assert!(load_volume(&p).is_err());
    }

    #[test]
    fn invalid_spacing_is_rejected() {
        assert!(Volume::new(1, 1, 1, [0.0, 1.0, 1.0], Voxels::U8(vec![0])).is_err());
    }
}
