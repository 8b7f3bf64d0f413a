//! Synthetic prostate phantoms: an elliptical gland whose transition zone
//! shrinks from the superior to the inferior end, inside a noisy body with
//! a smooth bias field.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::{PZ_LABEL, TZ_LABEL};
use crate::seeding::derive_seed;

use super::{save_volume, Volume, Voxels};

/// In-plane spacing at the default 192-pixel size, and slice thickness.
pub const PHANTOM_SPACING_MM: [f64; 3] = [0.5, 0.5, 3.6];
const FIELD_OF_VIEW_MM: f64 = 96.0;

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (self.cos * dx + self.sin * dy) / self.a;
        let v = (-self.sin * dx + self.cos * dy) / self.b;
        u * u + v * v <= 1.0
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Region {
    None,
    Base,
    Middle,
    Apex,
}

/// Randomized anatomy of one phantom; all lengths in mm.
struct Anatomy {
    regions: Vec<Region>,
    /// Position along the gland in (0, 1) for prostate slices.
    along: Vec<f64>,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    tilt: f64,
    /// TZ centre shift towards anterior (−y), as a fraction of `b`; large
    /// enough that the TZ reaches the anterior gland boundary.
    tz_shift: f64,
    /// TZ size relative to the gland on the first and last middle slice.
    tz_fraction: (f64, f64),
    body: (f64, f64),
    bladder_slices: usize,
    intensity: Intensity,
}

struct Intensity {
    outside: f64,
    body: f64,
    bladder: f64,
    pz: f64,
    tz: f64,
    noise_sd: f64,
    bias: (f64, f64, f64),
}

fn split_prostate(rng: &mut ChaCha8Rng, n_slices: usize) -> Vec<Region> {
    // The gland spans roughly half the stack, with at least one empty slice
    // on either side.
    let round = |f: f64| (f * n_slices as f64).round() as usize;
    let p_max = round(0.65).min(n_slices - 2).max(4);
    let p = rng.random_range(round(0.45).clamp(4, p_max)..=p_max);
    let head = rng.random_range(1..=n_slices - p - 1);
    let tail = n_slices - p - head;
    let end_max = ((p - 1) / 3).max(1);
    let base = rng.random_range(1..=end_max);
    let apex = rng.random_range(1..=end_max.min(p - 1 - base));
    let middle = p - base - apex;
    let mut regions = vec![Region::None; head];
    regions.extend(std::iter::repeat_n(Region::Base, base));
    regions.extend(std::iter::repeat_n(Region::Middle, middle));
    regions.extend(std::iter::repeat_n(Region::Apex, apex));
    regions.extend(std::iter::repeat_n(Region::None, tail));
    regions
}

impl Anatomy {
    fn sample(seed: u64, n_slices: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
        let regions = split_prostate(&mut rng, n_slices);
        let first = regions.iter().position(|r| *r != Region::None).expect("prostate slices exist");
        let count = regions.iter().filter(|r| **r != Region::None).count();
        let along = (0..n_slices).map(|z| (z as f64 - first as f64 + 0.5) / count as f64).collect();
        let j = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.random_range(lo..hi);
        Self {
            cx: j(&mut rng, -4.0, 4.0),
            cy: j(&mut rng, -3.0, 5.0),
            a: j(&mut rng, 19.0, 24.0),
            b: j(&mut rng, 14.0, 18.0),
            tilt: j(&mut rng, -10.0, 10.0).to_radians(),
            tz_shift: j(&mut rng, 0.48, 0.56),
            tz_fraction: (j(&mut rng, 0.62, 0.7), j(&mut rng, 0.52, 0.58)),
            body: (j(&mut rng, 40.0, 46.0), j(&mut rng, 30.0, 36.0)),
            bladder_slices: first.min(rng.random_range(1..=2)),
            intensity: Intensity {
                outside: j(&mut rng, 20.0, 40.0),
                body: j(&mut rng, 230.0, 280.0),
                bladder: j(&mut rng, 850.0, 950.0),
                pz: j(&mut rng, 600.0, 700.0),
                tz: j(&mut rng, 380.0, 460.0),
                noise_sd: j(&mut rng, 25.0, 40.0),
                bias: (j(&mut rng, -0.12, 0.12), j(&mut rng, -0.12, 0.12), j(&mut rng, 0.0, 0.1)),
            },
            regions,
            along,
        }
    }

    /// Gland scale along the slice axis: small at both ends, full mid-gland.
    fn profile(&self, z: usize) -> f64 {
        0.6 + 0.4 * (std::f64::consts::PI * self.along[z]).sin()
    }

    fn gland(&self, z: usize, scale: f64) -> Ellipse {
        let s = self.profile(z) * scale;
        Ellipse { cx: self.cx, cy: self.cy, a: self.a * s, b: self.b * s, cos: self.tilt.cos(), sin: self.tilt.sin() }
    }

    fn transition_zone(&self, z: usize, gland_scale: f64, tz_scale: f64) -> Ellipse {
        let middle: Vec<usize> = (0..self.regions.len()).filter(|&i| self.regions[i] == Region::Middle).collect();
        let k = middle.iter().position(|&i| i == z).unwrap_or(0);
        let t = if middle.len() > 1 { k as f64 / (middle.len() - 1) as f64 } else { 0.5 };
        let frac = (self.tz_fraction.0 + (self.tz_fraction.1 - self.tz_fraction.0) * t) * tz_scale;
        let g = self.gland(z, gland_scale);
        // Shift towards anterior (−y in the gland frame).
        let shift = self.tz_shift * g.b;
        Ellipse { cx: g.cx + g.sin * shift, cy: g.cy - g.cos * shift, a: g.a * frac, b: g.b * frac, cos: g.cos, sin: g.sin }
    }

    fn label(&self, z: usize, x: f64, y: f64, gland_scale: f64, tz_scale: f64) -> u8 {
        let region = self.regions[z];
        if region == Region::None || !self.gland(z, gland_scale).contains(x, y) {
            return 0;
        }
        match region {
            Region::Base => TZ_LABEL,
            Region::Apex => PZ_LABEL,
            _ if self.transition_zone(z, gland_scale, tz_scale).contains(x, y) => TZ_LABEL,
            _ => PZ_LABEL,
        }
    }
}

fn pixel_mm(i: usize, size: usize, spacing: f64) -> f64 {
    (i as f64 + 0.5 - size as f64 / 2.0) * spacing
}

fn check_args(n_slices: usize, size: usize) -> Result<f64> {
    if n_slices < 6 {
        return Err(Error::Validation(format!("phantoms need at least 6 slices, got {n_slices}")));
    }
    if size < 16 {
        return Err(Error::Validation(format!("phantom size {size} is too small")));
    }
    Ok(FIELD_OF_VIEW_MM / size as f64)
}

fn mask_volume(anatomy: &Anatomy, n_slices: usize, size: usize, spacing: f64, gland_scale: f64, tz_scale: f64) -> Result<Volume> {
    let mut labels = Vec::with_capacity(size * size * n_slices);
    for z in 0..n_slices {
        for py in 0..size {
            let y = pixel_mm(py, size, spacing);
            for px in 0..size {
                labels.push(anatomy.label(z, pixel_mm(px, size, spacing), y, gland_scale, tz_scale));
            }
        }
    }
    Volume::new(size, size, n_slices, [spacing, spacing, PHANTOM_SPACING_MM[2]], Voxels::U8(labels))
}

/// Image and reader-1 mask of the phantom drawn from `seed`.
pub fn generate_phantom(seed: u64, n_slices: usize, size: usize) -> Result<(Volume, Volume)> {
    let spacing = check_args(n_slices, size)?;
    let anatomy = Anatomy::sample(seed, n_slices);
    let mask = mask_volume(&anatomy, n_slices, size, spacing, 1.0, 1.0)?;

    let it = &anatomy.intensity;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let noise = Normal::new(0.0, it.noise_sd).expect("positive noise sd");
    let body = Ellipse { cx: 0.0, cy: 0.0, a: anatomy.body.0, b: anatomy.body.1, cos: 1.0, sin: 0.0 };
    let bladder = Ellipse { cx: anatomy.cx, cy: anatomy.cy - 4.0, a: 18.0, b: 14.0, cos: 1.0, sin: 0.0 };
    let labels = match mask.voxels() {
        Voxels::U8(v) => v,
        Voxels::U16(_) => unreachable!("mask volume"),
    };
    let half_fov = FIELD_OF_VIEW_MM / 2.0;
    let mut voxels = Vec::with_capacity(labels.len());
    for z in 0..n_slices {
        let bladder_here = z < anatomy.bladder_slices;
        for py in 0..size {
            let y = pixel_mm(py, size, spacing);
            for px in 0..size {
                let x = pixel_mm(px, size, spacing);
                let base = match labels[(z * size + py) * size + px] {
                    PZ_LABEL => it.pz,
                    TZ_LABEL => it.tz,
                    _ if bladder_here && bladder.contains(x, y) => it.bladder,
                    _ if body.contains(x, y) => it.body,
                    _ => it.outside,
                };
                let (u, v) = (x / half_fov, y / half_fov);
                let bias = 1.0 + it.bias.0 * u + it.bias.1 * v + it.bias.2 * (u * u + v * v);
                let value = base * bias + noise.sample(&mut rng);
                voxels.push(value.round().clamp(0.0, f64::from(u16::MAX)) as u16);
            }
        }
    }
    let image = Volume::new(size, size, n_slices, mask.spacing_mm(), Voxels::U16(voxels))?;
    Ok((image, mask))
}

/// A second annotation of the same phantom with slightly different gland
/// and transition-zone boundaries, for inter-reader comparisons.
pub fn generate_second_reader(seed: u64, n_slices: usize, size: usize) -> Result<Volume> {
    let spacing = check_args(n_slices, size)?;
    let anatomy = Anatomy::sample(seed, n_slices);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2]));
    let gland_scale = rng.random_range(0.94..1.06);
    let tz_scale = rng.random_range(0.92..1.08);
    mask_volume(&anatomy, n_slices, size, spacing, gland_scale, tz_scale)
}

/// Writes `count` phantom cases (`caseNNN_img`, `caseNNN_mask` and
/// optionally `caseNNN_mask_reader2`) into `dir`. Case `i` uses a seed
/// derived from `(seed, i)`.
pub fn write_phantom_dataset(dir: &Path, count: usize, seed: u64, n_slices: usize, size: usize, second_reader: bool) -> Result<()> {
    for i in 0..count {
        let case_seed = derive_seed(seed, &[i as u64]);
        let (image, mask) = generate_phantom(case_seed, n_slices, size)?;
        save_volume(&image, &dir.join(format!("case{i:03}_img")))?;
        save_volume(&mask, &dir.join(format!("case{i:03}_mask")))?;
        if second_reader {
            let reader2 = generate_second_reader(case_seed, n_slices, size)?;
            save_volume(&reader2, &dir.join(format!("case{i:03}_mask_reader2")))?;
        }
    }
    Ok(())
}
