//! Synthetic segmentation datasets with exact render oracles.
//!
//! Three families mimic common imaging modalities at desk scale: point-like
//! diffraction spots, textured elliptical cells among unlabeled distractors,
//! and branching vessel trees. Every generator draws its structures from a
//! seeded stream and returns them alongside the rendered image, so tests can
//! recompute any pixel independently. Images are `[1,H,W]` in `[0,1]`, masks
//! are binary `[1,H,W]`.

mod pgm;

pub use pgm::{load_pgm, save_pgm};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;

/// Dataset family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Airy,
    Cells,
    Vessels,
}

impl DataKind {
    pub const ALL: [DataKind; 3] = [DataKind::Airy, DataKind::Cells, DataKind::Vessels];

    pub fn name(&self) -> &'static str {
        match self {
            DataKind::Airy => "airy",
            DataKind::Cells => "cells",
            DataKind::Vessels => "vessels",
        }
    }
}

/// One clean image/mask pair. `amplitude` is the peak foreground signal and
/// sets the noise scale: additive Gaussian noise at `sigma = amplitude/snr`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Tensor,
    pub amplitude: f64,
}

pub const AIRY_BACKGROUND: f64 = 0.05;
pub const CELLS_BACKGROUND: f64 = 0.1;
pub const VESSELS_BACKGROUND: f64 = 0.08;

/// A diffraction-like spot: `sinc^2` radial intensity with its first zero at
/// `radius`; the mask covers the main lobe.
#[derive(Debug, Clone, Copy)]
pub struct Spot {
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
    pub amp: f64,
}

impl Spot {
    pub fn intensity(&self, y: f64, x: f64) -> f64 {
        let d = (y - self.cy).hypot(x - self.cx);
        if d == 0.0 {
            return self.amp;
        }
        let u = std::f64::consts::PI * d / self.radius;
        self.amp * (u.sin() / u).powi(2)
    }

    pub fn covers(&self, y: f64, x: f64) -> bool {
        (y - self.cy).hypot(x - self.cx) <= self.radius
    }
}

/// Rotated ellipse with a bright plateau and linear rim falloff. Labeled
/// cells go into the mask; distractors only add dim texture.
#[derive(Debug, Clone, Copy)]
pub struct Blob {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    pub theta: f64,
    pub amp: f64,
    pub labeled: bool,
}

impl Blob {
    /// Normalized elliptical radius: 0 at the center, 1 on the rim.
    pub fn rho(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (sin, cos) = self.theta.sin_cos();
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt()
    }

    pub fn intensity(&self, y: f64, x: f64) -> f64 {
        let rho = self.rho(y, x);
        if rho >= 1.0 {
            0.0
        } else {
            self.amp * (1.5 * (1.0 - rho)).min(1.0)
        }
    }

    pub fn covers(&self, y: f64, x: f64) -> bool {
        self.rho(y, x) <= 1.0
    }
}

/// One rasterization site of a vessel tree: a disk of `radius` around the
/// continuous path point, shaded from the centerline outwards.
#[derive(Debug, Clone, Copy)]
pub struct PathPoint {
    pub y: f64,
    pub x: f64,
    pub radius: f64,
}

impl PathPoint {
    pub fn covers(&self, y: f64, x: f64) -> bool {
        (y - self.y).hypot(x - self.x) <= self.radius
    }

    /// Falloff from 1 at the centerline to 0.3 at the rim, 0 outside.
    pub fn shade(&self, y: f64, x: f64) -> f64 {
        let d = (y - self.y).hypot(x - self.x);
        if d > self.radius {
            0.0
        } else {
            1.0 - 0.7 * d / self.radius
        }
    }
}

fn check_extent(h: usize, w: usize) -> Result<()> {
    if h < 16 || w < 16 {
        return Err(Error::config(format!(
            "images must be at least 16x16, got {h}x{w}"
        )));
    }
    Ok(())
}

fn blank(h: usize, w: usize, background: f64) -> (Tensor, Tensor) {
    (
        Tensor::full(&[1, h, w], background),
        Tensor::zeros(&[1, h, w]),
    )
}

/// Spot count/size/brightness ranges for the diffraction family. The
/// defaults give moderately busy images; a single faint small spot makes a
/// heavily imbalanced dataset for degenerate-metric tests.
#[derive(Debug, Clone)]
pub struct AiryParams {
    pub spots: std::ops::RangeInclusive<usize>,
    pub radius: (f64, f64),
    pub amp: (f64, f64),
}

impl Default for AiryParams {
    fn default() -> Self {
        AiryParams {
            spots: 3..=6,
            radius: (1.8, 3.2),
            amp: (0.6, 1.0),
        }
    }
}

pub fn airy_sample_with(
    params: &AiryParams,
    h: usize,
    w: usize,
    rng: &mut impl Rng,
) -> Result<(Sample, Vec<Spot>)> {
    check_extent(h, w)?;
    let count = rng.gen_range(params.spots.clone());
    let margin = params.radius.1.ceil() + 1.0;
    let spots: Vec<Spot> = (0..count)
        .map(|_| Spot {
            cy: rng.gen_range(margin..h as f64 - margin),
            cx: rng.gen_range(margin..w as f64 - margin),
            radius: rng.gen_range(params.radius.0..params.radius.1),
            amp: rng.gen_range(params.amp.0..params.amp.1),
        })
        .collect();

    let (mut image, mut mask) = blank(h, w, AIRY_BACKGROUND);
    for iy in 0..h {
        for ix in 0..w {
            let (y, x) = (iy as f64, ix as f64);
            let mut v = AIRY_BACKGROUND;
            let mut inside = false;
            for s in &spots {
                v += s.intensity(y, x);
                inside |= s.covers(y, x);
            }
            image.data[iy * w + ix] = v.clamp(0.0, 1.0);
            mask.data[iy * w + ix] = f64::from(inside as u8);
        }
    }
    let amplitude = spots
        .iter()
        .map(|s| s.amp)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    Ok((
        Sample {
            image,
            mask,
            amplitude,
        },
        spots,
    ))
}

pub fn airy_sample(h: usize, w: usize, rng: &mut impl Rng) -> Result<(Sample, Vec<Spot>)> {
    airy_sample_with(&AiryParams::default(), h, w, rng)
}

/// Labeled cells plus dim unlabeled distractors; distractor footprints are
/// rejection-sampled away from every labeled cell so the mask stays exact.
pub fn cells_sample(h: usize, w: usize, rng: &mut impl Rng) -> Result<(Sample, Vec<Blob>)> {
    check_extent(h, w)?;
    let margin = 6.5;
    let mut blobs: Vec<Blob> = Vec::new();
    let labeled = rng.gen_range(2..=4usize);
    for _ in 0..labeled {
        blobs.push(Blob {
            cy: rng.gen_range(margin..h as f64 - margin),
            cx: rng.gen_range(margin..w as f64 - margin),
            ry: rng.gen_range(2.5..5.5),
            rx: rng.gen_range(2.5..5.5),
            theta: rng.gen_range(0.0..std::f64::consts::PI),
            amp: rng.gen_range(0.5..0.9),
            labeled: true,
        });
    }
    let distractors = rng.gen_range(1..=3usize);
    'outer: for _ in 0..distractors {
        for _attempt in 0..40 {
            let cand = Blob {
                cy: rng.gen_range(margin..h as f64 - margin),
                cx: rng.gen_range(margin..w as f64 - margin),
                ry: rng.gen_range(2.0..4.0),
                rx: rng.gen_range(2.0..4.0),
                theta: rng.gen_range(0.0..std::f64::consts::PI),
                amp: rng.gen_range(0.08..0.2),
                labeled: false,
            };
            // Conservative center-distance separation: footprints cannot
            // touch if the gap exceeds the two largest semi-axes.
            let clear = blobs.iter().filter(|b| b.labeled).all(|b| {
                let d = (cand.cy - b.cy).hypot(cand.cx - b.cx);
                d > cand.ry.max(cand.rx) + b.ry.max(b.rx) + 1.0
            });
            if clear {
                blobs.push(cand);
                continue 'outer;
            }
        }
        // No room left for this distractor; skip it.
    }

    let (mut image, mut mask) = blank(h, w, CELLS_BACKGROUND);
    for iy in 0..h {
        for ix in 0..w {
            let (y, x) = (iy as f64, ix as f64);
            let mut v = CELLS_BACKGROUND;
            let mut inside = false;
            for b in &blobs {
                v += b.intensity(y, x);
                inside |= b.labeled && b.covers(y, x);
            }
            image.data[iy * w + ix] = v.clamp(0.0, 1.0);
            mask.data[iy * w + ix] = f64::from(inside as u8);
        }
    }
    let amplitude = blobs
        .iter()
        .filter(|b| b.labeled)
        .map(|b| b.amp)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    Ok((
        Sample {
            image,
            mask,
            amplitude,
        },
        blobs,
    ))
}

/// A branching random-walk tree stamped as overlapping disks. The walk stays
/// inside the frame (children that would start outside are dropped), every
/// branch forks from its parent's last point, and consecutive stamps sit
/// 0.7px apart with radius >= 0.8px, so the rasterized mask is one
/// 4-connected component.
pub fn vessels_sample(h: usize, w: usize, rng: &mut impl Rng) -> Result<(Sample, Vec<PathPoint>)> {
    check_extent(h, w)?;
    let amp = rng.gen_range(0.55..0.95);
    let (hf, wf) = (h as f64, w as f64);
    let inside = |y: f64, x: f64| y >= 1.5 && x >= 1.5 && y <= hf - 2.5 && x <= wf - 2.5;

    // Entry point on a random side, heading inwards.
    let side = rng.gen_range(0..4u32);
    let along = rng.gen_range(0.25..0.75);
    let (y0, x0, dir0) = match side {
        0 => (2.0, wf * along, std::f64::consts::FRAC_PI_2), // top edge, heading down
        1 => (hf - 3.0, wf * along, -std::f64::consts::FRAC_PI_2),
        2 => (hf * along, 2.0, 0.0), // left edge, heading right
        _ => (hf * along, wf - 3.0, std::f64::consts::PI),
    };
    let dir0 = dir0 + rng.gen_range(-0.4..0.4);
    let step = 0.7;
    let max_steps = ((h + w) as f64 / step) as usize;

    let mut points: Vec<PathPoint> = Vec::new();
    // (y, x, direction, radius, depth, budget)
    let mut stack = vec![(y0, x0, dir0, rng.gen_range(0.9..1.4), 0usize, max_steps)];
    while let Some((mut y, mut x, mut dir, radius, depth, budget)) = stack.pop() {
        if !inside(y, x) {
            continue;
        }
        for _ in 0..budget {
            points.push(PathPoint { y, x, radius });
            let (ny, nx) = (y + step * dir.sin(), x + step * dir.cos());
            if !inside(ny, nx) {
                break;
            }
            (y, x) = (ny, nx);
            dir += rng.gen_range(-0.25..0.25);
            if depth < 3 && rng.gen_bool(0.06) {
                let split = rng.gen_range(0.3..0.7);
                let child_r = (radius * 0.8).max(0.8);
                stack.push((y, x, dir - split, child_r, depth + 1, budget / 2));
                stack.push((y, x, dir + split, child_r, depth + 1, budget / 2));
                break;
            }
        }
    }

    let (mut image, mut mask) = blank(h, w, VESSELS_BACKGROUND);
    for p in &points {
        let r = p.radius.ceil() as i64 + 1;
        let (py, px) = (p.y.round() as i64, p.x.round() as i64);
        for iy in (py - r).max(0)..=(py + r).min(h as i64 - 1) {
            for ix in (px - r).max(0)..=(px + r).min(w as i64 - 1) {
                let idx = iy as usize * w + ix as usize;
                let shade = p.shade(iy as f64, ix as f64);
                if shade > 0.0 {
                    mask.data[idx] = 1.0;
                    let v = VESSELS_BACKGROUND + amp * shade;
                    if v > image.data[idx] {
                        image.data[idx] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Ok((
        Sample {
            image,
            mask,
            amplitude: amp,
        },
        points,
    ))
}

/// Generate `count` clean samples; image `i` draws from the substream
/// `(seed, IMAGE, i)` so any prefix of the dataset is stable.
pub fn generate(
    kind: DataKind,
    count: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let mut rng = stream(seed, &[tag::IMAGE, i as u64]);
            Ok(match kind {
                DataKind::Airy => airy_sample(h, w, &mut rng)?.0,
                DataKind::Cells => cells_sample(h, w, &mut rng)?.0,
                DataKind::Vessels => vessels_sample(h, w, &mut rng)?.0,
            })
        })
        .collect()
}

/// Additive Gaussian noise at `sigma = amplitude / snr`, clamped back to
/// `[0,1]`. The mask and amplitude pass through untouched.
pub fn add_noise_snr(sample: &Sample, snr: f64, rng: &mut impl Rng) -> Result<Sample> {
    if snr <= 0.0 || !snr.is_finite() {
        return Err(Error::config(format!(
            "snr must be positive and finite, got {snr}"
        )));
    }
    let sigma = sample.amplitude / snr;
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(format!("noise: {e}")))?;
    let mut image = sample.image.clone();
    for v in &mut image.data {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
    Ok(Sample {
        image,
        mask: sample.mask.clone(),
        amplitude: sample.amplitude,
    })
}

/// Clean samples plus per-image noise from `(seed, NOISE, i, snr-bits)`:
/// the clean structures are shared across SNR levels, only the noise
/// realization changes.
pub fn generate_noisy(
    kind: DataKind,
    count: usize,
    h: usize,
    w: usize,
    snr: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    generate(kind, count, h, w, seed)?
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream(seed, &[tag::NOISE, i as u64, snr.to_bits()]);
            add_noise_snr(s, snr, &mut rng)
        })
        .collect()
}

/// One cross-validation fold: index sets into the sample list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle `n` indices and split them into `k` test folds (remainder images
/// go to the earliest folds). Fold `f` tests on part `f`, validates on part
/// `(f+1) % k`, and trains on the rest, giving a 3:1:1 split at `k = 5`.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 3 {
        return Err(Error::config(format!(
            "need at least 3 folds for train/val/test, got {k}"
        )));
    }
    if n < k {
        return Err(Error::config(format!(
            "need at least {k} samples for {k} folds, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, &[tag::FOLDS]);
    // Fisher-Yates so the plan depends only on (n, k, seed).
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let base = n / k;
    let extra = n % k;
    let mut parts: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        parts.push(order[at..at + len].to_vec());
        at += len;
    }
    Ok((0..k)
        .map(|f| {
            let val_part = (f + 1) % k;
            let mut train = Vec::new();
            for (p, part) in parts.iter().enumerate() {
                if p != f && p != val_part {
                    train.extend_from_slice(part);
                }
            }
            Fold {
                train,
                val: parts[val_part].clone(),
                test: parts[f].clone(),
            }
        })
        .collect())
}

/// `per_image` random square crops from each sample, as (image, mask) pairs
/// of shape `[1,crop,crop]`. Crop origins come from `rng`.
pub fn random_crops(
    samples: &[Sample],
    crop: usize,
    per_image: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(Tensor, Tensor)>> {
    let mut out = Vec::with_capacity(samples.len() * per_image);
    for s in samples {
        let (h, w) = (s.image.shape[1], s.image.shape[2]);
        if crop == 0 || crop > h || crop > w {
            return Err(Error::shape(format!(
                "crop {crop} does not fit a {h}x{w} image"
            )));
        }
        for _ in 0..per_image {
            let oy = rng.gen_range(0..=h - crop);
            let ox = rng.gen_range(0..=w - crop);
            out.push((
                slice2d(&s.image, oy, ox, crop),
                slice2d(&s.mask, oy, ox, crop),
            ));
        }
    }
    Ok(out)
}

fn slice2d(t: &Tensor, oy: usize, ox: usize, crop: usize) -> Tensor {
    let w = t.shape[2];
    let mut out = Tensor::zeros(&[1, crop, crop]);
    for y in 0..crop {
        let row = (oy + y) * w + ox;
        out.data[y * crop..(y + 1) * crop].copy_from_slice(&t.data[row..row + crop]);
    }
    out
}

/// Stack `[1,H,W]` pairs into `([N,1,H,W], [N,1,H,W])` batch tensors.
pub fn stack_batch(pairs: &[(Tensor, Tensor)]) -> Result<(Tensor, Tensor)> {
    if pairs.is_empty() {
        return Err(Error::shape("cannot stack an empty batch".to_string()));
    }
    let (h, w) = (pairs[0].0.shape[1], pairs[0].0.shape[2]);
    let n = pairs.len();
    let mut images = Tensor::zeros(&[n, 1, h, w]);
    let mut masks = Tensor::zeros(&[n, 1, h, w]);
    for (i, (img, msk)) in pairs.iter().enumerate() {
        if img.shape.as_slice() != [1, h, w] || msk.shape.as_slice() != [1, h, w] {
            return Err(Error::shape(format!(
                "batch element {i} has shape {:?}/{:?}, expected [1,{h},{w}]",
                img.shape, msk.shape
            )));
        }
        images.data[i * h * w..(i + 1) * h * w].copy_from_slice(&img.data);
        masks.data[i * h * w..(i + 1) * h * w].copy_from_slice(&msk.data);
    }
    Ok((images, masks))
}
