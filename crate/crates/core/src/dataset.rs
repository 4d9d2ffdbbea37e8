//! Training pairs, crop sampling, synthetic sparse-coding problems and
//! synthetic two-modality scenes.
//!
//! On disk a dataset is a directory of scenes, each holding `target.pgm`
//! (high-resolution target modality) and `guide.ppm` (RGB guidance of the
//! same size). Scenes are visited in lexicographic order.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::imageops::{bicubic_resize, load_pgm, load_ppm, rgb_to_luma, save_pgm, save_ppm};
use crate::imageops::{ImagePlane, RgbImage};
use crate::solvers::{Dictionary, SideInfoProblem, DEFAULT_LAMBDA};

pub const SCALES: [usize; 3] = [2, 4, 6];
pub const TARGET_FILE: &str = "target.pgm";
pub const GUIDE_FILE: &str = "guide.ppm";

pub fn check_scale(scale: usize) -> Result<()> {
    if SCALES.contains(&scale) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("scale must be 2, 4 or 6, got {scale}")))
    }
}

/// Upscaled low-resolution input, guidance luminance and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub y_up: ImagePlane,
    pub z: ImagePlane,
    pub x: ImagePlane,
}

impl PairedSample {
    pub fn new(y_up: ImagePlane, z: ImagePlane, x: ImagePlane) -> Result<Self> {
        if y_up.dims() != x.dims() || z.dims() != x.dims() {
            return Err(Error::Shape(format!(
                "sample planes differ in size: {:?}, {:?}, {:?}",
                y_up.dims(),
                z.dims(),
                x.dims()
            )));
        }
        Ok(Self { y_up, z, x })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.x.dims()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        Ok(Self {
            y_up: self.y_up.crop(x0, y0, w, h)?,
            z: self.z.crop(x0, y0, w, h)?,
            x: self.x.crop(x0, y0, w, h)?,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.y_up.all_finite() && self.z.all_finite() && self.x.all_finite()
    }
}

/// Largest top-left region whose sides are multiples of `scale`.
pub fn divisible_dims(width: usize, height: usize, scale: usize) -> Result<(usize, usize)> {
    let (w, h) = (width / scale * scale, height / scale * scale);
    if w == 0 || h == 0 {
        return Err(Error::Shape(format!(
            "{width}x{height} image is smaller than scale {scale}"
        )));
    }
    Ok((w, h))
}

fn crop_divisible(img: &ImagePlane, scale: usize) -> Result<ImagePlane> {
    let (w, h) = divisible_dims(img.width(), img.height(), scale)?;
    if (w, h) == img.dims() {
        return Ok(img.clone());
    }
    img.crop(0, 0, w, h)
}

/// Low-resolution observation of `x`: bicubic downscale by `scale`.
pub fn downscale(x: &ImagePlane, scale: usize) -> Result<ImagePlane> {
    check_scale(scale)?;
    let x = crop_divisible(x, scale)?;
    bicubic_resize(&x, x.width() / scale, x.height() / scale)
}

/// Bicubic downscale by `scale` then back up, after cropping to a divisible
/// size.
pub fn degrade(x: &ImagePlane, scale: usize) -> Result<ImagePlane> {
    check_scale(scale)?;
    let x = crop_divisible(x, scale)?;
    let lr = bicubic_resize(&x, x.width() / scale, x.height() / scale)?;
    bicubic_resize(&lr, x.width(), x.height())
}

/// Builds a training pair from a target image and its RGB guidance. Both are
/// cropped to the largest region divisible by `scale`.
pub fn make_pair(target: &ImagePlane, guide: &RgbImage, scale: usize) -> Result<PairedSample> {
    if target.dims() != guide.dims() {
        return Err(Error::Shape(format!(
            "guide is {:?} but target is {:?}",
            guide.dims(),
            target.dims()
        )));
    }
    let x = crop_divisible(target, scale)?;
    let z = rgb_to_luma(guide);
    let z = if z.dims() == x.dims() { z } else { z.crop(0, 0, x.width(), x.height())? };
    PairedSample::new(degrade(&x, scale)?, z, x)
}

/// `n` aligned random crops of side `crop`.
pub fn sample_crops(pair: &PairedSample, crop: usize, n: usize, seed: u64) -> Result<Vec<PairedSample>> {
    let (w, h) = pair.dims();
    if crop == 0 || crop > w || crop > h {
        return Err(Error::InvalidParameter(format!(
            "crop {crop} does not fit a {w}x{h} image"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x0 = rng.gen_range(0..=w - crop);
            let y0 = rng.gen_range(0..=h - crop);
            pair.crop(x0, y0, crop, crop)
        })
        .collect()
}

/// Parameters of a synthetic side-information sparse coding instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_y: usize,
    pub n_alpha: usize,
    pub sparsity: usize,
    /// Entries of the side code that differ from the true code.
    pub side_perturb: usize,
    pub noise_std: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_y: 16,
            n_alpha: 32,
            sparsity: 4,
            side_perturb: 1,
            noise_std: 0.0,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_y == 0 || self.n_alpha == 0 {
            return bad(format!("dimensions must be positive, got {}x{}", self.n_y, self.n_alpha));
        }
        if self.sparsity > self.n_alpha {
            return bad(format!("sparsity {} exceeds n_alpha {}", self.sparsity, self.n_alpha));
        }
        if self.side_perturb > self.n_alpha {
            return bad(format!("perturb {} exceeds n_alpha {}", self.side_perturb, self.n_alpha));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub y: Vec<f64>,
    pub side: Vec<f64>,
    pub code: Vec<f64>,
}

/// Many instances sharing one dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub dict: Dictionary,
    pub samples: Vec<SyntheticSample>,
}

fn unit_norm_dictionary(rng: &mut ChaCha8Rng, n_y: usize, n_alpha: usize) -> Result<Dictionary> {
    let mut data: Vec<f64> = (0..n_y * n_alpha).map(|_| rng.sample(StandardNormal)).collect();
    for j in 0..n_alpha {
        let norm = (0..n_y).map(|i| data[i * n_alpha + j].powi(2)).sum::<f64>().sqrt();
        for i in 0..n_y {
            data[i * n_alpha + j] /= norm;
        }
    }
    Dictionary::from_rows(n_y, n_alpha, data)
}

fn draw_sample(rng: &mut ChaCha8Rng, dict: &Dictionary, spec: &SyntheticSpec) -> Result<SyntheticSample> {
    let n = spec.n_alpha;
    let mut code = vec![0.0; n];
    for i in sample_indices(rng, n, spec.sparsity) {
        code[i] = rng.sample(StandardNormal);
    }
    let mut y = dict.apply(&code)?;
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
        for v in &mut y {
            *v += rng.sample(noise);
        }
    }
    // on the support the value is resampled, off it a new entry appears
    let mut side = code.clone();
    for i in sample_indices(rng, n, spec.side_perturb) {
        side[i] = rng.sample(StandardNormal);
    }
    Ok(SyntheticSample { y, side, code })
}

/// `count` instances over one seeded unit-norm Gaussian dictionary.
pub fn gen_synthetic_batch(spec: &SyntheticSpec, count: usize) -> Result<SyntheticBatch> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dict = unit_norm_dictionary(&mut rng, spec.n_y, spec.n_alpha)?;
    let samples = (0..count).map(|_| draw_sample(&mut rng, &dict, spec)).collect::<Result<_>>()?;
    Ok(SyntheticBatch { dict, samples })
}

/// One instance; equal to the first element of [`gen_synthetic_batch`].
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(SideInfoProblem, Vec<f64>)> {
    let batch = gen_synthetic_batch(spec, 1)?;
    let s = batch.samples.into_iter().next().expect("one sample");
    Ok((SideInfoProblem::new(batch.dict, s.y, spec.lambda, s.side)?, s.code))
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    HalfPlane { nx: f64, ny: f64, d: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Shape::HalfPlane { nx, ny, d } => nx * x + ny * y >= d,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Material {
    rgb: [f64; 3],
    target: f64,
    // shared stripe texture: (frequency, angle, amplitude)
    stripes: Option<(f64, f64, f64)>,
}

impl Material {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let stripes = rng
            .gen_bool(0.5)
            .then(|| (rng.gen_range(0.3..1.5), rng.gen_range(0.0..std::f64::consts::PI), rng.gen_range(0.04..0.12)));
        Self {
            rgb: [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)],
            target: rng.gen_range(0.1..0.9),
            stripes,
        }
    }
}

/// Piecewise-smooth scene pair: an RGB guide and a target modality that
/// shares its edges but maps each region to an unrelated intensity.
pub fn synthetic_scene(width: usize, height: usize, seed: u64) -> Result<(ImagePlane, RgbImage)> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!("scene size must be positive, got {width}x{height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (wf, hf) = (width as f64, height as f64);
    let span = wf.min(hf);
    let mut layers = vec![(Shape::HalfPlane { nx: 0.0, ny: 0.0, d: f64::NEG_INFINITY }, Material::random(&mut rng))];
    // a few large partitions at the bottom, then many small objects
    for _ in 0..rng.gen_range(1..4) {
        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (nx, ny) = (a.cos(), a.sin());
        let d = nx * rng.gen_range(0.0..wf) + ny * rng.gen_range(0.0..hf);
        layers.push((Shape::HalfPlane { nx, ny, d }, Material::random(&mut rng)));
    }
    let n_objects = (wf * hf / 400.0).ceil() as usize + rng.gen_range(0..8);
    for _ in 0..n_objects {
        let shape = if rng.gen_bool(0.5) {
            Shape::Disk {
                cx: rng.gen_range(0.0..wf),
                cy: rng.gen_range(0.0..hf),
                r: rng.gen_range(0.02..0.12) * span,
            }
        } else {
            let (x0, y0) = (rng.gen_range(0.0..wf), rng.gen_range(0.0..hf));
            Shape::Rect {
                x0,
                y0,
                x1: x0 + rng.gen_range(0.03..0.25) * wf,
                y1: y0 + rng.gen_range(0.03..0.25) * hf,
            }
        };
        layers.push((shape, Material::random(&mut rng)));
    }
    // smooth shading common to both modalities
    let (gx, gy) = (rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15));
    let target_gain = rng.gen_range(0.5..1.5);

    const SS: usize = 3;
    let mut target = Vec::with_capacity(width * height);
    let mut guide = Vec::with_capacity(3 * width * height);
    for py in 0..height {
        for px in 0..width {
            let mut t = 0.0;
            let mut c = [0.0; 3];
            for sy in 0..SS {
                for sx in 0..SS {
                    let x = px as f64 + (sx as f64 + 0.5) / SS as f64;
                    let y = py as f64 + (sy as f64 + 0.5) / SS as f64;
                    let m = layers.iter().rev().find(|(s, _)| s.contains(x, y)).expect("background covers").1;
                    let shade = gx * (x / wf - 0.5) + gy * (y / hf - 0.5);
                    let tex = m
                        .stripes
                        .map_or(0.0, |(f, a, amp)| amp * (f * (x * a.cos() + y * a.sin())).sin());
                    t += m.target + target_gain * shade + tex;
                    for k in 0..3 {
                        c[k] += m.rgb[k] + shade + tex;
                    }
                }
            }
            let n = (SS * SS) as f64;
            target.push((t / n).clamp(0.0, 1.0));
            guide.extend(c.iter().map(|v| (v / n).clamp(0.0, 1.0)));
        }
    }
    Ok((ImagePlane::new(width, height, target)?, RgbImage::new(width, height, guide)?))
}

/// A scene as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub target: ImagePlane,
    pub guide: RgbImage,
}

impl Scene {
    pub fn pair(&self, scale: usize) -> Result<PairedSample> {
        make_pair(&self.target, &self.guide, scale)
    }
}

pub fn write_scene(root: &Path, name: &str, target: &ImagePlane, guide: &RgbImage) -> Result<PathBuf> {
    let dir = root.join(name);
    fs::create_dir_all(&dir)?;
    save_pgm(dir.join(TARGET_FILE), target)?;
    save_ppm(dir.join(GUIDE_FILE), guide)?;
    Ok(dir)
}

/// Writes `count` synthetic scenes named `scene00`, `scene01`, ...
pub fn write_synthetic_dataset(root: &Path, count: usize, width: usize, height: usize, seed: u64) -> Result<()> {
    for i in 0..count {
        let (t, g) = synthetic_scene(width, height, seed.wrapping_add(i as u64))?;
        write_scene(root, &format!("scene{i:02}"), &t, &g)?;
    }
    Ok(())
}

/// Loads every scene directory under `root` that holds both files.
pub fn load_scenes(root: &Path) -> Result<Vec<Scene>> {
    if !root.is_dir() {
        return Err(Error::MissingData(format!("dataset root {} not found", root.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut scenes = Vec::new();
    for dir in dirs {
        let (t, g) = (dir.join(TARGET_FILE), dir.join(GUIDE_FILE));
        if !t.is_file() && !g.is_file() {
            continue;
        }
        if !t.is_file() || !g.is_file() {
            return Err(Error::MissingData(format!(
                "scene {} lacks {} or {}",
                dir.display(),
                TARGET_FILE,
                GUIDE_FILE
            )));
        }
        scenes.push(Scene {
            name: dir.file_name().expect("directory entry").to_string_lossy().into_owned(),
            target: load_pgm(&t)?,
            guide: load_ppm(&g)?,
        });
    }
    if scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(scenes)
}
