use crate::autodiff::resize::resize_plane;
use crate::error::{Error, Result};
use crate::metrics::LabelMask;

use super::{Volume, Voxels};

/// Side of the square central region kept around the prostate, in mm.
pub const DEFAULT_CROP_MM: f64 = 93.0;

/// Where a crop sits inside its source grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub source_width: usize,
    pub source_height: usize,
}

fn crop_extent(size_mm: f64, spacing: f64, available: usize, axis: &str) -> Result<(usize, usize)> {
    let px = (size_mm / spacing).round() as usize;
    if px == 0 || px > available {
        return Err(Error::Geometry(format!(
            "{size_mm} mm crop needs {px} px along {axis}, image has {available}"
        )));
    }
    // Floor puts the extra pixel on the right when centering is ambiguous.
    Ok(((available - px) / 2, px))
}

/// Keeps the central `size_mm`×`size_mm` region of every slice.
pub fn central_crop_mm(volume: &Volume, size_mm: f64) -> Result<(Volume, CropWindow)> {
    if !(size_mm.is_finite() && size_mm > 0.0) {
        return Err(Error::Geometry(format!("crop size must be positive, got {size_mm}")));
    }
    let [sx, sy, _] = volume.spacing_mm;
    let (x0, cw) = crop_extent(size_mm, sx, volume.width, "x")?;
    let (y0, ch) = crop_extent(size_mm, sy, volume.height, "y")?;
    let window = CropWindow { x0, y0, width: cw, height: ch, source_width: volume.width, source_height: volume.height };
    fn cut<T: Copy>(v: &[T], vol: &Volume, w: &CropWindow) -> Vec<T> {
        let mut out = Vec::with_capacity(w.width * w.height * vol.n_slices);
        for z in 0..vol.n_slices {
            let plane = &v[vol.slice_range(z)];
            for y in w.y0..w.y0 + w.height {
                out.extend_from_slice(&plane[y * vol.width + w.x0..y * vol.width + w.x0 + w.width]);
            }
        }
        out
    }
    let voxels = match &volume.voxels {
        Voxels::U16(v) => Voxels::U16(cut(v, volume, &window)),
        Voxels::U8(v) => Voxels::U8(cut(v, volume, &window)),
    };
    Ok((Volume::new(cw, ch, volume.n_slices, volume.spacing_mm, voxels)?, window))
}

/// Bilinear (half-pixel aligned) resampling of a `width`×`height` plane.
pub fn resample_image(plane: &[f32], width: usize, height: usize, out_width: usize, out_height: usize) -> Vec<f32> {
    assert_eq!(plane.len(), width * height, "plane size");
    resize_plane(plane, height, width, out_height, out_width)
}

fn nearest_index(dst: usize, input: usize, output: usize) -> usize {
    let src = ((dst as f64 + 0.5) * input as f64 / output as f64).floor() as usize;
    src.min(input - 1)
}

/// Nearest-neighbour resampling; never invents labels.
pub fn resample_mask(mask: &LabelMask, out_width: usize, out_height: usize) -> LabelMask {
    let (w, h) = (mask.width(), mask.height());
    let xs: Vec<usize> = (0..out_width).map(|x| nearest_index(x, w, out_width)).collect();
    let labels = (0..out_height)
        .flat_map(|y| {
            let row = nearest_index(y, h, out_height) * w;
            xs.iter().map(move |&x| mask.labels()[row + x])
        })
        .collect();
    LabelMask::new(out_width, out_height, labels).expect("labels come from a valid mask")
}

/// Places a crop-sized mask back into its source grid, background elsewhere.
pub fn paste_crop(mask: &LabelMask, window: &CropWindow) -> Result<LabelMask> {
    if (mask.width(), mask.height()) != (window.width, window.height) {
        return Err(Error::Geometry(format!(
            "mask {}×{} does not fit a {}×{} crop window",
            mask.width(),
            mask.height(),
            window.width,
            window.height
        )));
    }
    let mut labels = vec![0u8; window.source_width * window.source_height];
    for y in 0..window.height {
        let dst = (window.y0 + y) * window.source_width + window.x0;
        labels[dst..dst + window.width].copy_from_slice(&mask.labels()[y * window.width..(y + 1) * window.width]);
    }
    LabelMask::new(window.source_width, window.source_height, labels)
}
