use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::LabelMask;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticSpec {
    pub enabled: bool,
    /// Displacement scale in pixels.
    pub alpha: f64,
    /// Gaussian smoothing of the random field, in pixels.
    pub sigma: f64,
}

impl Default for ElasticSpec {
    fn default() -> Self {
        Self { enabled: true, alpha: 10.0, sigma: 4.0 }
    }
}

/// Random flip, rotation and elastic deformation applied identically to an
/// image slice and its mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub hflip_probability: f64,
    /// Angles are drawn uniformly from ±this many degrees.
    pub rotation_degrees: f64,
    pub elastic: ElasticSpec,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self { hflip_probability: 0.5, rotation_degrees: 5.0, elastic: ElasticSpec::default(), seed: 0 }
    }
}

impl AugmentSpec {
    /// A spec that leaves every slice unchanged.
    pub fn identity() -> Self {
        Self {
            hflip_probability: 0.0,
            rotation_degrees: 0.0,
            elastic: ElasticSpec { enabled: false, ..ElasticSpec::default() },
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hflip_probability) {
            return Err(Error::Config(format!("hflip_probability must lie in [0, 1], got {}", self.hflip_probability)));
        }
        if !(self.rotation_degrees.is_finite() && self.rotation_degrees >= 0.0) {
            return Err(Error::Config(format!("rotation_degrees must be non-negative, got {}", self.rotation_degrees)));
        }
        if self.elastic.enabled && !(self.elastic.alpha > 0.0 && self.elastic.sigma > 0.0) {
            return Err(Error::Config("elastic alpha and sigma must be positive when enabled".into()));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with edge clamping.
fn blur(field: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k.iter().enumerate().map(|(i, kv)| kv * field[y * w + clampi(x as isize + i as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k.iter().enumerate().map(|(i, kv)| kv * tmp[clampi(y as isize + i as isize - r, h) * w + x]).sum();
        }
    }
    out
}

fn sample_bilinear(img: &[f32], w: usize, h: usize, x: f64, y: f64) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            f64::from(img[yi as usize * w + xi as usize])
        }
    };
    let mut v = at(x0, y0) * (1.0 - fx) * (1.0 - fy);
    if fx != 0.0 {
        v += at(x0 + 1.0, y0) * fx * (1.0 - fy);
    }
    if fy != 0.0 {
        v += at(x0, y0 + 1.0) * (1.0 - fx) * fy;
        if fx != 0.0 {
            v += at(x0 + 1.0, y0 + 1.0) * fx * fy;
        }
    }
    v as f32
}

fn sample_nearest(labels: &[u8], w: usize, h: usize, x: f64, y: f64) -> u8 {
    let (xi, yi) = (x.round(), y.round());
    if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
        0
    } else {
        labels[yi as usize * w + xi as usize]
    }
}

/// Applies one random geometric transform, drawn from `spec.seed`, to both
/// the image (bilinear) and the mask (nearest). Pixels mapped from outside
/// the slice become 0.
pub fn augment(image: &[f32], mask: &LabelMask, spec: &AugmentSpec) -> Result<(Vec<f32>, LabelMask)> {
    spec.validate()?;
    let (w, h) = (mask.width(), mask.height());
    if image.len() != w * h {
        return Err(Error::Validation(format!("image of {} pixels does not match {w}×{h} mask", image.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let flip = rng.random::<f64>() < spec.hflip_probability;
    let angle = if spec.rotation_degrees > 0.0 {
        rng.random_range(-spec.rotation_degrees..=spec.rotation_degrees).to_radians()
    } else {
        0.0
    };
    let displacement = (spec.elastic.enabled).then(|| {
        let field = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..=1.0)).collect();
            blur(&raw, w, h, spec.elastic.sigma).into_iter().map(|v| v * spec.elastic.alpha).collect::<Vec<_>>()
        };
        let dx = field(&mut rng);
        let dy = field(&mut rng);
        (dx, dy)
    });

    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut out_img = Vec::with_capacity(w * h);
    let mut out_mask = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (x as f64, y as f64);
            if let Some((dx, dy)) = &displacement {
                sx += dx[y * w + x];
                sy += dy[y * w + x];
            }
            if angle != 0.0 {
                let (rx, ry) = (sx - cx, sy - cy);
                sx = cx + cos * rx + sin * ry;
                sy = cy - sin * rx + cos * ry;
            }
            if flip {
                sx = w as f64 - 1.0 - sx;
            }
            out_img.push(sample_bilinear(image, w, h, sx, sy));
            out_mask.push(sample_nearest(mask.labels(), w, h, sx, sy));
        }
    }
    Ok((out_img, LabelMask::new(w, h, out_mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vec<f32>, LabelMask) {
        let (w, h) = (24, 20);
        let img: Vec<f32> = (0..w * h).map(|i| ((i * 37) % 101) as f32 / 10.0).collect();
        let labels: Vec<u8> = (0..w * h).map(|i| ((i / 7) % 3) as u8).collect();
        (img, LabelMask::new(w, h, labels).unwrap())
    }

    #[test]
    fn identity_spec_is_identity() {
        let (img, mask) = sample();
        let zero_alpha = AugmentSpec {
            hflip_probability: 0.0,
            rotation_degrees: 0.0,
            elastic: ElasticSpec { enabled: false, alpha: 0.0, sigma: 4.0 },
            seed: 9,
        };
        for spec in [AugmentSpec::identity(), zero_alpha] {
            let (i2, m2) = augment(&img, &mask, &spec).unwrap();
            assert_eq!(i2, img);
            assert_eq!(m2, mask);
        }
    }

    #[test]
    fn double_flip_restores() {
        let (img, mask) = sample();
        let spec = AugmentSpec { hflip_probability: 1.0, ..AugmentSpec::identity() };
        let (i1, m1) = augment(&img, &mask, &spec).unwrap();
        assert_ne!(i1, img);
        let (i2, m2) = augment(&i1, &m1, &spec).unwrap();
        assert_eq!((i2, m2), (img, mask));
    }

    #[test]
    fn deterministic_and_label_preserving() {
        let (img, mask) = sample();
        let spec = AugmentSpec::default().with_seed(42);
        let a = augment(&img, &mask, &spec).unwrap();
        let b = augment(&img, &mask, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.0.iter().all(|v| v.is_finite()));
        assert!(a.1.labels().iter().all(|&l| l <= 2));
        let c = augment(&img, &mask, &spec.with_seed(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_rejected() {
        let (img, mask) = sample();
        let bad = AugmentSpec { elastic: ElasticSpec { enabled: true, alpha: 0.0, sigma: 4.0 }, ..Default::default() };
        assert!(augment(&img, &mask, &bad).is_err());
        assert!(augment(&img[1..], &mask, &AugmentSpec::identity()).is_err());
    }
}
