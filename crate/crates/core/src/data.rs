//! Synthetic scenes, the on-disk dataset layout, loading and augmentation.
//!
//! Layout: `<root>/<split>/images/<stem>.png` and `<root>/<split>/masks/<stem>.png`,
//! with an optional `<root>/manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::GroundTruthMask;
use crate::reflection::ImageTensor;

pub const MANIFEST: &str = "manifest.json";
pub const GENERATOR_VERSION: u32 = 1;

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_owned(),
        source,
    }
}

/// Stems of the `.png` files directly inside `dir`.
pub fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let mut stems = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.insert(stem.to_owned());
            }
        }
    }
    Ok(stems)
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::InvalidImage {
            path: path.to_owned(),
            reason: "zero-sized image".into(),
        });
    }
    Ok(img)
}

fn gray_to_array(img: &GrayImage) -> Array2<f64> {
    Array2::from_shape_fn((img.height() as usize, img.width() as usize), |(y, x)| {
        f64::from(img.get_pixel(x as u32, y as u32).0[0]) / 255.0
    })
}

/// 8-bit grayscale scaled to `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Array2<f64>> {
    Ok(gray_to_array(&open(path)?.to_luma8()))
}

/// Foreground where the 8-bit value is at least 128.
pub fn read_mask(path: &Path) -> Result<GroundTruthMask> {
    let img = open(path)?.to_luma8();
    binarize_gray(&img)
}

fn binarize_gray(img: &GrayImage) -> Result<GroundTruthMask> {
    GroundTruthMask::new(Array2::from_shape_fn((img.height() as usize, img.width() as usize), |(y, x)| {
        u8::from(img.get_pixel(x as u32, y as u32).0[0] >= 128)
    }))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

/// Writes `round(v * 255)` as an 8-bit grayscale PNG.
pub fn write_gray(path: &Path, values: &Array2<f64>) -> Result<()> {
    ensure_parent(path)?;
    let (h, w) = values.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(values[[y as usize, x as usize]])]));
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn write_mask(path: &Path, mask: &GroundTruthMask) -> Result<()> {
    write_gray(path, &mask.to_real())
}

pub fn write_rgb(path: &Path, image: &ImageTensor) -> Result<()> {
    ensure_parent(path)?;
    let img = RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([0, 1, 2].map(|c| to_u8(image.data[[c, y, x]])))
    });
    img.save(path).map_err(|e| image_err(path, e))
}

type RgbF = ImageBuffer<Rgb<f32>, Vec<f32>>;
type GrayF = ImageBuffer<Luma<f32>, Vec<f32>>;

fn tensor_to_rgbf(image: &ImageTensor) -> RgbF {
    RgbF::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([0, 1, 2].map(|c| image.data[[c, y, x]] as f32))
    })
}

fn rgbf_to_tensor(img: &RgbF) -> ImageTensor {
    let data = Array3::from_shape_fn((3, img.height() as usize, img.width() as usize), |(c, y, x)| {
        f64::from(img.get_pixel(x as u32, y as u32).0[c])
    });
    ImageTensor { data }
}

/// Reads an RGB image and resizes it (bilinear) to `size = [h, w]`, values in `[0, 1]`.
pub fn read_rgb(path: &Path, size: [usize; 2]) -> Result<ImageTensor> {
    let mut img = open(path)?.to_rgb8();
    if (img.height() as usize, img.width() as usize) != (size[0], size[1]) {
        img = imageops::resize(&img, size[1] as u32, size[0] as u32, FilterType::Triangle);
    }
    let data = Array3::from_shape_fn((3, size[0], size[1]), |(c, y, x)| {
        f64::from(img.get_pixel(x as u32, y as u32).0[c]) / 255.0
    });
    Ok(ImageTensor { data })
}

/// Loads an image/mask pair at `size = [h, w]`: bilinear resize for the
/// image, nearest-neighbour for the mask, mask binarized at 128.
pub fn load_pair(image_path: &Path, mask_path: &Path, size: [usize; 2]) -> Result<(ImageTensor, GroundTruthMask)> {
    let image = read_rgb(image_path, size)?;
    let mut mask = open(mask_path)?.to_luma8();
    if (mask.height() as usize, mask.width() as usize) != (size[0], size[1]) {
        mask = imageops::resize(&mask, size[1] as u32, size[0] as u32, FilterType::Nearest);
    }
    Ok((image, binarize_gray(&mask)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Triangle,
    Blob,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Triangle, ShapeKind::Blob];
}

/// Parameters of the synthetic scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    /// `[h, w]`.
    pub size: [usize; 2],
    /// Inclusive object-count range.
    pub objects: [usize; 2],
    pub shapes: Vec<ShapeKind>,
    /// Inclusive range of per-channel foreground/background colour distance.
    pub contrast: [f64; 2],
    /// Amplitude of uniform background texture noise.
    pub noise: f64,
    /// Inclusive range of mask coverage.
    pub coverage: [f64; 2],
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            size: [64, 64],
            objects: [1, 3],
            shapes: ShapeKind::ALL.to_vec(),
            contrast: [0.3, 0.7],
            noise: 0.08,
            coverage: [0.05, 0.6],
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.size[0] < 8 || self.size[1] < 8 {
            return bad("scene size must be at least 8x8");
        }
        if self.objects[0] == 0 || self.objects[0] > self.objects[1] {
            return bad("object range must satisfy 1 <= min <= max");
        }
        if self.shapes.is_empty() {
            return bad("at least one shape kind is required");
        }
        if !(0.0..=1.0).contains(&self.contrast[0]) || self.contrast[0] > self.contrast[1] || self.contrast[1] > 1.0 {
            return bad("contrast range must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1]");
        }
        if !(0.0 < self.coverage[0] && self.coverage[0] <= self.coverage[1] && self.coverage[1] < 1.0) {
            return bad("coverage range must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One rendered object; `contains` tests a pixel centre.
#[derive(Clone, Debug)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, angle: f64 },
    Rectangle { y0: f64, x0: f64, y1: f64, x1: f64 },
    Triangle { v: [(f64, f64); 3] },
    Blob { cy: f64, cx: f64, r: f64, harmonics: [(f64, f64); 3] },
}

impl Shape {
    fn sample(kind: ShapeKind, h: f64, w: f64, rng: &mut ChaCha8Rng) -> Self {
        let scale = h.min(w);
        let cy = rng.random_range(0.2..0.8) * h;
        let cx = rng.random_range(0.2..0.8) * w;
        let r = rng.random_range(0.12..0.32) * scale;
        match kind {
            ShapeKind::Ellipse => Shape::Ellipse {
                cy,
                cx,
                ry: r,
                rx: r * rng.random_range(0.5..1.5),
                angle: rng.random_range(0.0..std::f64::consts::PI),
            },
            ShapeKind::Rectangle => {
                let hy = r * rng.random_range(0.6..1.2);
                let hx = r * rng.random_range(0.6..1.2);
                Shape::Rectangle {
                    y0: cy - hy,
                    x0: cx - hx,
                    y1: cy + hy,
                    x1: cx + hx,
                }
            }
            ShapeKind::Triangle => {
                let base = rng.random_range(0.0..std::f64::consts::TAU);
                let v = [0.0, 1.0, 2.0].map(|i| {
                    let a = base + i * std::f64::consts::TAU / 3.0 + rng.random_range(-0.4..0.4);
                    let rr = r * rng.random_range(1.0..1.6);
                    (cy + rr * a.sin(), cx + rr * a.cos())
                });
                Shape::Triangle { v }
            }
            ShapeKind::Blob => Shape::Blob {
                cy,
                cx,
                r,
                harmonics: [0; 3].map(|_| (rng.random_range(0.0..0.25), rng.random_range(0.0..std::f64::consts::TAU))),
            },
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx, angle } => {
                let (dy, dx) = (y - cy, x - cx);
                let (s, c) = angle.sin_cos();
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rectangle { y0, x0, y1, x1 } => (y0..=y1).contains(&y) && (x0..=x1).contains(&x),
            Shape::Triangle { v } => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) * (y - a.0) - (b.0 - a.0) * (x - a.1);
                let d = [edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0])];
                d.iter().all(|&e| e >= 0.0) || d.iter().all(|&e| e <= 0.0)
            }
            Shape::Blob { cy, cx, r, harmonics } => {
                let (dy, dx) = (y - cy, x - cx);
                let theta = dy.atan2(dx);
                let bound = harmonics
                    .iter()
                    .enumerate()
                    .fold(1.0, |acc, (k, &(a, phase))| acc + a * ((k as f64 + 2.0) * theta + phase).sin());
                (dy * dy + dx * dx).sqrt() <= r * bound
            }
        }
    }
}

/// Renders scene `index` of `spec`. Every scene has its own RNG stream.
pub fn render_scene(spec: &SyntheticSceneSpec, index: u64) -> Result<(ImageTensor, GroundTruthMask)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let [h, w] = spec.size;
    let area = (h * w) as f64;
    let mut mask = Array2::<u8>::zeros((h, w));
    let mut object_of = Array2::<u8>::zeros((h, w));
    let mut accepted = false;
    for _ in 0..64 {
        let count = rng.random_range(spec.objects[0]..=spec.objects[1]);
        let shapes: Vec<Shape> = (0..count)
            .map(|_| {
                let kind = spec.shapes[rng.random_range(0..spec.shapes.len())];
                Shape::sample(kind, h as f64, w as f64, &mut rng)
            })
            .collect();
        mask.fill(0);
        for ((y, x), m) in mask.indexed_iter_mut() {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            if let Some(i) = shapes.iter().position(|s| s.contains(py, px)) {
                *m = 1;
                object_of[[y, x]] = i as u8;
            }
        }
        let cover = mask.iter().filter(|&&v| v == 1).count() as f64 / area;
        if (spec.coverage[0]..=spec.coverage[1]).contains(&cover) {
            accepted = true;
            break;
        }
    }
    if !accepted {
        // Centred rectangle with coverage at the midpoint of the range.
        let side = ((spec.coverage[0] + spec.coverage[1]) / 2.0).sqrt();
        let (rh, rw) = (((h as f64) * side) as usize, ((w as f64) * side) as usize);
        mask.fill(0);
        object_of.fill(0);
        mask.slice_mut(ndarray::s![(h - rh) / 2..(h + rh) / 2, (w - rw) / 2..(w + rw) / 2]).fill(1);
    }

    let background: [f64; 3] = [0; 3].map(|_| rng.random_range(0.0..1.0));
    let palette: Vec<[f64; 3]> = (0..spec.objects[1].max(1))
        .map(|_| {
            background.map(|b| {
                let d = rng.random_range(spec.contrast[0]..=spec.contrast[1]);
                if b + d <= 1.0 && (b - d < 0.0 || rng.random_bool(0.5)) {
                    b + d
                } else {
                    (b - d).max(0.0)
                }
            })
        })
        .collect();
    let mut data = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let base = if mask[[y, x]] == 1 {
                palette[object_of[[y, x]] as usize]
            } else {
                background
            };
            for c in 0..3 {
                let n = if spec.noise > 0.0 {
                    rng.random_range(-spec.noise..=spec.noise)
                } else {
                    0.0
                };
                data[[c, y, x]] = (base[c] + n).clamp(0.0, 1.0);
            }
        }
    }
    Ok((ImageTensor { data }, GroundTruthMask::new(mask)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub stems: Vec<String>,
    /// `[h, w]`.
    pub size: [usize; 2],
}

/// Describes a dataset root. `root` is filled in on load and not serialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub generator_version: u32,
    pub seed: Option<u64>,
    pub spec: Option<SyntheticSceneSpec>,
    pub splits: BTreeMap<String, SplitManifest>,
}

impl DatasetManifest {
    /// Reads `manifest.json`, or scans `<root>/*/images` when there is none.
    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found")));
        }
        let path = root.join(MANIFEST);
        if path.is_file() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut m: DatasetManifest = serde_json::from_str(&text)?;
            m.root = root.to_owned();
            return Ok(m);
        }
        let mut splits = BTreeMap::new();
        for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let dir = entry.map_err(|e| Error::io(root, e))?.path();
            let (images, masks) = (dir.join("images"), dir.join("masks"));
            if !(images.is_dir() && masks.is_dir()) {
                continue;
            }
            let stems: Vec<String> = png_stems(&images)?.intersection(&png_stems(&masks)?).cloned().collect();
            let Some(first) = stems.first() else { continue };
            let probe = open(&images.join(format!("{first}.png")))?;
            let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
            splits.insert(
                name,
                SplitManifest {
                    stems,
                    size: [probe.height() as usize, probe.width() as usize],
                },
            );
        }
        if splits.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            root: root.to_owned(),
            generator_version: 0,
            seed: None,
            spec: None,
            splits,
        })
    }

    pub fn split(&self, name: &str) -> Result<&SplitManifest> {
        self.splits
            .get(name)
            .ok_or_else(|| Error::Config(format!("dataset has no split `{name}`")))
    }

    pub fn image_path(&self, split: &str, stem: &str) -> PathBuf {
        self.root.join(split).join("images").join(format!("{stem}.png"))
    }

    pub fn mask_path(&self, split: &str, stem: &str) -> PathBuf {
        self.root.join(split).join("masks").join(format!("{stem}.png"))
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Writes `n` scenes into the `train` split of `root`.
pub fn generate_synthetic(spec: &SyntheticSceneSpec, n: usize, root: &Path) -> Result<DatasetManifest> {
    generate_splits(spec, &[("train", n)], root)
}

/// Writes each `(split, count)`; scene indices continue across splits so
/// no two splits share a scene.
pub fn generate_splits(spec: &SyntheticSceneSpec, splits: &[(&str, usize)], root: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    if splits.iter().any(|&(_, n)| n == 0) {
        return Err(Error::Config("scene count must be at least 1".into()));
    }
    let mut manifest = DatasetManifest {
        root: root.to_owned(),
        generator_version: GENERATOR_VERSION,
        seed: Some(spec.seed),
        spec: Some(spec.clone()),
        splits: BTreeMap::new(),
    };
    let mut index = 0u64;
    for &(name, n) in splits {
        let width = n.to_string().len().max(4);
        let mut stems = Vec::with_capacity(n);
        for i in 0..n {
            let stem = format!("{name}_{i:0width$}");
            let (image, mask) = render_scene(spec, index)?;
            write_rgb(&manifest.image_path(name, &stem), &image)?;
            write_mask(&manifest.mask_path(name, &stem), &mask)?;
            stems.push(stem);
            index += 1;
        }
        manifest.splits.insert(name.to_owned(), SplitManifest { stems, size: spec.size });
    }
    manifest.save()?;
    Ok(manifest)
}

/// One loaded training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub stem: String,
    pub image: ImageTensor,
    pub mask: GroundTruthMask,
}

/// Loads every pair of `split` at `size`, in manifest order.
pub fn load_split(manifest: &DatasetManifest, split: &str, size: [usize; 2]) -> Result<Vec<Sample>> {
    let entries = manifest.split(split)?;
    if entries.stems.is_empty() {
        return Err(Error::EmptyDataset);
    }
    entries
        .stems
        .iter()
        .map(|stem| {
            let (image, mask) = load_pair(&manifest.image_path(split, stem), &manifest.mask_path(split, stem), size)?;
            Ok(Sample {
                stem: stem.clone(),
                image,
                mask,
            })
        })
        .collect()
}

/// Horizontal mirror of both image and mask.
pub fn mirror(image: &ImageTensor, mask: &GroundTruthMask) -> (ImageTensor, GroundTruthMask) {
    let mut data = image.data.clone();
    data.invert_axis(Axis(2));
    let mut m = mask.values().clone();
    m.invert_axis(Axis(1));
    (
        ImageTensor {
            data: data.as_standard_layout().into_owned(),
        },
        GroundTruthMask::new(m.as_standard_layout().into_owned()).expect("mirror keeps mask binary"),
    )
}

/// Crop window `(top, left, height, width)`.
pub type Window = (usize, usize, usize, usize);

/// Crops `window` from both inputs and resizes back to the original size:
/// bilinear for the image, bilinear then `>= 0.5` for the mask.
pub fn crop_resize(image: &ImageTensor, mask: &GroundTruthMask, window: Window) -> (ImageTensor, GroundTruthMask) {
    let (top, left, ch, cw) = window;
    let (h, w) = (image.height() as u32, image.width() as u32);
    let rgb = tensor_to_rgbf(image);
    let cropped = imageops::crop_imm(&rgb, left as u32, top as u32, cw as u32, ch as u32).to_image();
    let image = rgbf_to_tensor(&imageops::resize(&cropped, w, h, FilterType::Triangle));
    let m = mask.to_real();
    let gray = GrayF::from_fn(w, h, |x, y| Luma([m[[y as usize, x as usize]] as f32]));
    let cropped = imageops::crop_imm(&gray, left as u32, top as u32, cw as u32, ch as u32).to_image();
    let resized = imageops::resize(&cropped, w, h, FilterType::Triangle);
    let mask = GroundTruthMask::new(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        u8::from(resized.get_pixel(x as u32, y as u32).0[0] >= 0.5)
    }))
    .expect("binarized mask");
    (image, mask)
}

/// Area fraction range of the random crop.
pub const CROP_AREA: [f64; 2] = [0.8, 1.0];

/// Mirror with probability 0.5, then a random crop covering 80–100% of the
/// area (aspect ratio kept), resized back. Both inputs see identical
/// transforms.
pub fn augment(image: &ImageTensor, mask: &GroundTruthMask, seed: u64) -> Result<(ImageTensor, GroundTruthMask)> {
    if (image.height(), image.width()) != mask.dim() {
        return Err(Error::shape(mask.dim(), (image.height(), image.width())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = mask.dim();
    let flip = rng.random_bool(0.5);
    let side = rng.random_range(CROP_AREA[0]..=CROP_AREA[1]).sqrt();
    let ch = ((h as f64 * side).round() as usize).clamp(1, h);
    let cw = ((w as f64 * side).round() as usize).clamp(1, w);
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    let (image, mask) = if flip {
        mirror(image, mask)
    } else {
        (image.clone(), mask.clone())
    };
    if (ch, cw) == (h, w) {
        return Ok((image, mask));
    }
    Ok(crop_resize(&image, &mask, (top, left, ch, cw)))
}
