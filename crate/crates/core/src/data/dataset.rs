use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::LabelMask;

use super::geometry::{central_crop_mm, paste_crop, resample_image, resample_mask, CropWindow};
use super::{load_volume, Volume, VolumeKind};

/// Files of one case in a dataset directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CasePaths {
    pub id: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub reader2: Option<PathBuf>,
}

/// Cases in `dir`, sorted by id. A case is any `<id>_img.json`; its masks
/// are `<id>_mask.json` and `<id>_mask_reader2.json` when present.
pub fn list_cases(dir: &Path) -> Result<Vec<CasePaths>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut cases = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(id) = name.to_str().and_then(|n| n.strip_suffix("_img.json")) else {
            continue;
        };
        let existing = |suffix: &str| {
            let p = dir.join(format!("{id}{suffix}.json"));
            p.exists().then(|| p.with_extension(""))
        };
        cases.push(CasePaths {
            id: id.to_string(),
            image: dir.join(format!("{id}_img")),
            mask: existing("_mask"),
            reader2: existing("_mask_reader2"),
        });
    }
    cases.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(cases)
}

#[derive(Clone, Debug)]
pub struct Case {
    pub id: String,
    pub image: Volume,
    pub mask: Option<Volume>,
    pub reader2: Option<Volume>,
}

fn check_pair(id: &str, image: &Volume, mask: &Volume) -> Result<()> {
    if mask.kind() != VolumeKind::Mask {
        return Err(Error::Validation(format!("{id}: mask file holds an image")));
    }
    if (image.width(), image.height(), image.n_slices()) != (mask.width(), mask.height(), mask.n_slices()) {
        return Err(Error::Validation(format!("{id}: image and mask geometry differ")));
    }
    Ok(())
}

pub fn load_case(paths: &CasePaths) -> Result<Case> {
    let image = load_volume(&paths.image)?;
    if image.kind() != VolumeKind::Image {
        return Err(Error::Validation(format!("{}: image file holds a mask", paths.id)));
    }
    let load_mask = |p: &Option<PathBuf>| -> Result<Option<Volume>> {
        p.as_ref()
            .map(|p| {
                let m = load_volume(p)?;
                check_pair(&paths.id, &image, &m)?;
                Ok(m)
            })
            .transpose()
    };
    let mask = load_mask(&paths.mask)?;
    let reader2 = load_mask(&paths.reader2)?;
    Ok(Case { id: paths.id.clone(), image, mask, reader2 })
}

/// A case cropped, resampled to the network input size and normalized.
#[derive(Clone, Debug)]
pub struct PreparedCase {
    pub id: String,
    /// One `input_size²` plane per slice, zero mean and unit SD over the
    /// cropped volume.
    pub images: Vec<Vec<f32>>,
    /// Reader-1 labels at input size, when the case has a mask.
    pub masks: Option<Vec<LabelMask>>,
    pub window: CropWindow,
    pub input_size: usize,
}

impl PreparedCase {
    /// Maps an input-size prediction back onto the original slice grid.
    pub fn restore_mask(&self, pred: &LabelMask) -> Result<LabelMask> {
        paste_crop(&resample_mask(pred, self.window.width, self.window.height), &self.window)
    }
}

pub fn prepare_case(case: &Case, input_size: usize, crop_mm: f64) -> Result<PreparedCase> {
    if input_size == 0 || !input_size.is_multiple_of(8) {
        return Err(Error::Config(format!("input size must be a positive multiple of 8, got {input_size}")));
    }
    let (cropped, window) = central_crop_mm(&case.image, crop_mm)?;
    let (w, h) = (cropped.width(), cropped.height());
    let planes: Vec<Vec<f32>> = (0..cropped.n_slices()).map(|z| cropped.image_slice(z)).collect::<Result<_>>()?;
    let count = (w * h * planes.len()) as f64;
    let mean = planes.iter().flatten().map(|&v| f64::from(v)).sum::<f64>() / count;
    let var = planes.iter().flatten().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / count;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    let images = planes
        .iter()
        .map(|p| {
            let normalized: Vec<f32> = p.iter().map(|&v| ((f64::from(v) - mean) / sd) as f32).collect();
            resample_image(&normalized, w, h, input_size, input_size)
        })
        .collect();
    let masks = case
        .mask
        .as_ref()
        .map(|m| -> Result<Vec<LabelMask>> {
            let (cm, _) = central_crop_mm(m, crop_mm)?;
            Ok(cm.mask_slices()?.iter().map(|s| resample_mask(s, input_size, input_size)).collect())
        })
        .transpose()?;
    Ok(PreparedCase { id: case.id.clone(), images, masks, window, input_size })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_phantom_dataset, DEFAULT_CROP_MM};

    #[test]
    fn lists_and_prepares_cases() {
        let dir = tempfile::tempdir().unwrap();
        write_phantom_dataset(dir.path(), 3, 1, 6, 64, true).unwrap();
        fs::remove_file(dir.path().join("case001_mask.json")).unwrap();
        let cases = list_cases(dir.path()).unwrap();
        let ids: Vec<&str> = cases.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["case000", "case001", "case002"]);
        assert!(cases[1].mask.is_none() && cases[1].reader2.is_some());

        let case = load_case(&cases[0]).unwrap();
        let prepared = prepare_case(&case, 32, DEFAULT_CROP_MM).unwrap();
        assert_eq!(prepared.images.len(), 6);
        assert!(prepared.images.iter().all(|p| p.len() == 32 * 32 && p.iter().all(|v| v.is_finite())));
        let masks = prepared.masks.as_ref().unwrap();
        let restored = prepared.restore_mask(&masks[2]).unwrap();
        assert_eq!((restored.width(), restored.height()), (64, 64));
        assert!(prepare_case(&case, 30, DEFAULT_CROP_MM).is_err());
    }
}
