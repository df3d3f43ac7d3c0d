//! Dataset generators and loaders.
//!
//! * polynomial regression on `[lo, hi]`, with features `(x/s)^k` where `s`
//!   is the larger domain magnitude so every feature lies in `[-1, 1]`;
//! * 2-D three-class toy classification: classes are concentric bands around
//!   the square's centre whose radii wobble with angle (`r + 0.04 sin 5φ`),
//!   so every class boundary is curved;
//! * image regression from binary PPM (P6): pixel coordinate to RGB;
//! * small image classification from IDX files.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::net::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Regression { dim: usize },
    Classification { classes: usize },
}

impl TargetKind {
    pub fn name(&self) -> &'static str {
        match self {
            TargetKind::Regression { .. } => "regression",
            TargetKind::Classification { .. } => "classification",
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            TargetKind::Regression { dim } => dim,
            TargetKind::Classification { classes } => classes,
        }
    }
}

/// Extra facts a loader knows about its data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMeta {
    /// Image width and height for pixel-grid datasets (row-major order).
    pub image_size: Option<(usize, usize)>,
    /// Reference coefficients of a generated polynomial, constant term first,
    /// in the scaled basis.
    pub coefficients: Option<Vec<f64>>,
    /// Raw scalar inputs before feature expansion.
    pub raw_inputs: Option<Vec<f64>>,
    /// Divisor applied to raw inputs before taking powers.
    pub input_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: String,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
    pub target_kind: TargetKind,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(task: &str, inputs: Vec<Vec<f64>>, targets: Vec<Target>, target_kind: TargetKind) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptySubset);
        }
        if inputs.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                context: "dataset targets",
                expected: inputs.len(),
                actual: targets.len(),
            });
        }
        let d = inputs[0].len();
        for x in &inputs {
            if x.len() != d {
                return Err(Error::ShapeMismatch {
                    context: "dataset input width",
                    expected: d,
                    actual: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput("dataset"));
            }
        }
        for t in &targets {
            match (t, target_kind) {
                (Target::Class(c), TargetKind::Classification { classes }) if *c >= classes => {
                    return Err(Error::InvalidTarget { target: *c, classes });
                }
                (Target::Values(v), TargetKind::Regression { dim }) if v.len() != dim => {
                    return Err(Error::ShapeMismatch {
                        context: "regression target width",
                        expected: dim,
                        actual: v.len(),
                    });
                }
                (Target::Values(_), TargetKind::Classification { .. })
                | (Target::Class(_), TargetKind::Regression { .. }) => {
                    return Err(Error::ConfigInvalid("target kind does not match task".into()));
                }
                _ => {}
            }
        }
        Ok(Dataset {
            task: task.to_string(),
            inputs,
            targets,
            target_kind,
            meta: DatasetMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// `task,N,input_dim,target_kind`
    pub fn manifest_line(&self) -> String {
        format!("{},{},{},{}", self.task, self.len(), self.input_dim(), self.target_kind.name())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let TargetKind::Classification { classes } = self.target_kind else {
            return Vec::new();
        };
        let mut counts = vec![0; classes];
        for t in &self.targets {
            if let Target::Class(c) = t {
                counts[*c] += 1;
            }
        }
        counts
    }

    /// Render a pixel-grid RGB dataset back to binary PPM.
    pub fn to_ppm(&self) -> Result<Vec<u8>> {
        let (w, h) = self
            .meta
            .image_size
            .ok_or_else(|| Error::MalformedImage("dataset has no image geometry".into()))?;
        let mut rgb = Vec::with_capacity(w * h * 3);
        for t in &self.targets {
            match t {
                Target::Values(v) if v.len() == 3 => {
                    rgb.extend(v.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
                }
                _ => return Err(Error::MalformedImage("targets are not RGB triples".into())),
            }
        }
        Ok(encode_ppm(w, h, &rgb))
    }
}

// ---------------------------------------------------------------------------
// Polynomial regression

/// Random polynomial of the given order sampled at `n_points` uniform
/// positions in `domain`, plus Gaussian noise. Inputs are the features
/// `(x/s)^1 .. (x/s)^order` with `s = max(|lo|, |hi|)`; the network's bias
/// supplies the constant term.
pub fn gen_polynomial(order: usize, n_points: usize, domain: (f64, f64), noise_sd: f64, seed: u64) -> Result<Dataset> {
    let (lo, hi) = domain;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::ConfigInvalid(format!("polynomial domain [{lo}, {hi}] is empty")));
    }
    if n_points < order + 1 {
        return Err(Error::ConfigInvalid(format!(
            "polynomial of order {order} needs at least {} points",
            order + 1
        )));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::ConfigInvalid("noise_sd must be >= 0".into()));
    }
    let mut rng = Rng::new(seed);
    let coeffs: Vec<f64> = (0..=order).map(|_| rng.normal()).collect();
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    let mut inputs = Vec::with_capacity(n_points);
    let mut targets = Vec::with_capacity(n_points);
    let mut raw = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let x = rng.uniform_range(lo, hi);
        let u = x / scale;
        let feats: Vec<f64> = (1..=order).map(|k| u.powi(k as i32)).collect();
        let clean = coeffs[0] + coeffs[1..].iter().zip(&feats).map(|(c, f)| c * f).sum::<f64>();
        let y = clean + noise_sd * rng.normal();
        raw.push(x);
        inputs.push(feats);
        targets.push(Target::Values(vec![y]));
    }
    let mut ds = Dataset::new(&format!("poly{order}"), inputs, targets, TargetKind::Regression { dim: 1 })?;
    ds.meta.coefficients = Some(coeffs);
    ds.meta.raw_inputs = Some(raw);
    ds.meta.input_scale = Some(scale);
    Ok(ds)
}

// ---------------------------------------------------------------------------
// 2-D toy classification

/// Band index of a point in the unit square: 0 inside the wobbly inner disc,
/// 1 in the wobbly ring, 2 outside.
pub fn toy_class(x: f64, y: f64) -> usize {
    let (dx, dy) = (x - 0.5, y - 0.5);
    let r = (dx * dx + dy * dy).sqrt() + 0.04 * (5.0 * dy.atan2(dx)).sin();
    if r < 0.2 {
        0
    } else if r < 0.36 {
        1
    } else {
        2
    }
}

/// Balanced three-class points in `[0,1]²`; point `i` belongs to class `i % 3`.
pub fn gen_toy_classification(n_points: usize, seed: u64) -> Result<Dataset> {
    if n_points < 3 {
        return Err(Error::ConfigInvalid("toy classification needs at least 3 points".into()));
    }
    let mut rng = Rng::new(seed);
    let mut inputs = Vec::with_capacity(n_points);
    let mut targets = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let want = i % 3;
        loop {
            let (x, y) = (rng.uniform(), rng.uniform());
            if toy_class(x, y) == want {
                inputs.push(vec![x, y]);
                targets.push(Target::Class(want));
                break;
            }
        }
    }
    Dataset::new("toy2d", inputs, targets, TargetKind::Classification { classes: 3 })
}

// ---------------------------------------------------------------------------
// PPM images

/// Decoded 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::MalformedImage("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    match magic.as_str() {
        "P6" => {}
        "P1" | "P2" | "P3" | "P4" | "P5" | "P7" => {
            return Err(Error::UnsupportedFormat(format!("netpbm {magic}, only binary P6 is supported")))
        }
        _ => return Err(Error::UnsupportedFormat(format!("not a PPM file (magic {magic:?})"))),
    }
    let num = |pos: &mut usize, what: &str| -> Result<usize> {
        let t = token(pos)?;
        t.parse::<usize>()
            .map_err(|_| Error::MalformedImage(format!("bad {what} {t:?}")))
    };
    let width = num(&mut pos, "width")?;
    let height = num(&mut pos, "height")?;
    let maxval = num(&mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedImage("zero image dimension".into()));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}, only 8-bit (255) is supported")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedImage("missing raster separator".into()));
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::MalformedImage("image too large".into()))?;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::MalformedImage(format!(
            "raster has {} bytes, expected {need}",
            raster.len()
        )));
    }
    Ok(RgbImage {
        width,
        height,
        data: raster[..need].to_vec(),
    })
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_ppm(img.width, img.height, &img.data))?;
    Ok(())
}

/// Box-filter an image to a new resolution.
pub fn resample(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    if width == img.width && height == img.height {
        return img.clone();
    }
    let mut data = Vec::with_capacity(width * height * 3);
    for ty in 0..height {
        let y0 = ty * img.height / height;
        let y1 = ((ty + 1) * img.height / height).max(y0 + 1);
        for tx in 0..width {
            let x0 = tx * img.width / width;
            let x1 = ((tx + 1) * img.width / width).max(x0 + 1);
            let mut acc = [0u32; 3];
            for sy in y0..y1 {
                for sx in x0..x1 {
                    let o = (sy * img.width + sx) * 3;
                    for c in 0..3 {
                        acc[c] += img.data[o + c] as u32;
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as u32;
            for a in acc {
                data.push(((a + n / 2) / n) as u8);
            }
        }
    }
    RgbImage { width, height, data }
}

/// Pixel-coordinate → RGB dataset. Pixel `(c, r)` maps to input
/// `((c + ½)/w, (r + ½)/h)`, targets are channel bytes divided by 255.
pub fn image_dataset(img: &RgbImage) -> Result<Dataset> {
    let (w, h) = (img.width, img.height);
    let mut inputs = Vec::with_capacity(w * h);
    let mut targets = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            inputs.push(vec![(c as f64 + 0.5) / w as f64, (r as f64 + 0.5) / h as f64]);
            let o = (r * w + c) * 3;
            targets.push(Target::Values(
                img.data[o..o + 3].iter().map(|&b| b as f64 / 255.0).collect(),
            ));
        }
    }
    let mut ds = Dataset::new("image", inputs, targets, TargetKind::Regression { dim: 3 })?;
    ds.meta.image_size = Some((w, h));
    Ok(ds)
}

/// Load a P6 image as a regression dataset, optionally resampled to a
/// training resolution.
pub fn load_image_regression(path: &Path, resolution: Option<(usize, usize)>) -> Result<Dataset> {
    let img = read_ppm(path)?;
    let img = match resolution {
        Some((w, h)) if w > 0 && h > 0 => resample(&img, w, h),
        Some(_) => return Err(Error::ConfigInvalid("training resolution must be positive".into())),
        None => img,
    };
    image_dataset(&img)
}

/// Deterministic test image with smooth shading, hard-edged shapes and a
/// patch of fine stripes, so reconstruction difficulty varies across pixels
/// and channels.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = Rng::new(seed);
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..5)
        .map(|_| {
            (
                rng.uniform_range(0.15, 0.85),
                rng.uniform_range(0.15, 0.85),
                rng.uniform_range(0.06, 0.18),
                [rng.uniform(), rng.uniform(), rng.uniform()],
            )
        })
        .collect();
    let stripe_freq = rng.uniform_range(18.0, 26.0);
    let mut data = Vec::with_capacity(width * height * 3);
    for r in 0..height {
        for c in 0..width {
            let u = (c as f64 + 0.5) / width as f64;
            let v = (r as f64 + 0.5) / height as f64;
            let mut px = [
                0.25 + 0.5 * u,
                0.3 + 0.4 * (std::f64::consts::PI * v).sin(),
                0.7 - 0.5 * u * v,
            ];
            for &(cx, cy, rad, col) in &discs {
                if (u - cx).powi(2) + (v - cy).powi(2) < rad * rad {
                    px = col;
                }
            }
            // Stripes only in the red channel of the lower-right quadrant.
            if u > 0.55 && v > 0.55 {
                px[0] = 0.5 + 0.5 * (stripe_freq * std::f64::consts::TAU * (u + 0.3 * v)).sin();
            }
            data.extend(px.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    RgbImage { width, height, data }
}

// ---------------------------------------------------------------------------
// IDX

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Raw IDX image tensor `(count, rows, cols)` of bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::MalformedIdx(format!("truncated header ({what})")))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES {
        return Err(Error::MalformedIdx(format!("image magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let count = read_u32(bytes, 4, "count")? as usize;
    let rows = read_u32(bytes, 8, "rows")? as usize;
    let cols = read_u32(bytes, 12, "cols")? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() != need {
        return Err(Error::MalformedIdx(format!("image payload {} bytes, expected {need}", body.len())));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS {
        return Err(Error::MalformedIdx(format!("label magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let count = read_u32(bytes, 4, "count")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::MalformedIdx(format!("label payload {} bytes, expected {count}", body.len())));
    }
    Ok(body.to_vec())
}

pub fn encode_idx_images(img: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.pixels.len());
    for v in [IDX_IMAGES, img.count as u32, img.rows as u32, img.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&img.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = std::fs::File::open(path)?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&read_file(path)?)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read_file(path)?)
}

pub fn write_idx(images_path: &Path, labels_path: &Path, images: &IdxImages, labels: &[u8]) -> Result<()> {
    std::fs::File::create(images_path)?.write_all(&encode_idx_images(images))?;
    std::fs::File::create(labels_path)?.write_all(&encode_idx_labels(labels))?;
    Ok(())
}

/// Stratified subset of an IDX pair: classes are visited round-robin in
/// label order, each drawing from its own seeded shuffle, so per-class counts
/// differ by at most one while every class has data left. Pixels scale to
/// `[0,1]`; the class count is `max label + 1`.
pub fn load_idx_subset(images_path: &Path, labels_path: &Path, n_take: usize, seed: u64) -> Result<Dataset> {
    if n_take == 0 {
        return Err(Error::EmptySubset);
    }
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    idx_subset(&images, &labels, n_take, seed)
}

pub fn idx_subset(images: &IdxImages, labels: &[u8], n_take: usize, seed: u64) -> Result<Dataset> {
    if n_take == 0 {
        return Err(Error::EmptySubset);
    }
    if images.count != labels.len() {
        return Err(Error::LabelImageCountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    if n_take > images.count {
        return Err(Error::ConfigInvalid(format!(
            "requested {n_take} samples but only {} are available",
            images.count
        )));
    }
    let mut rng = Rng::new(seed);
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    for members in by_class.values_mut() {
        rng.shuffle(members);
    }
    let mut cursors: Vec<(u8, std::vec::IntoIter<usize>)> =
        by_class.into_iter().map(|(k, v)| (k, v.into_iter())).collect();
    let mut chosen = Vec::with_capacity(n_take);
    while chosen.len() < n_take {
        for (_, it) in cursors.iter_mut() {
            if chosen.len() == n_take {
                break;
            }
            if let Some(i) = it.next() {
                chosen.push(i);
            }
        }
    }
    rng.shuffle(&mut chosen);
    let classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    let px = images.rows * images.cols;
    let inputs = chosen
        .iter()
        .map(|&i| images.pixels[i * px..(i + 1) * px].iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    let targets = chosen.iter().map(|&i| Target::Class(labels[i] as usize)).collect();
    let mut ds = Dataset::new("idx", inputs, targets, TargetKind::Classification { classes })?;
    ds.meta.image_size = Some((images.cols, images.rows));
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Synthetic handwritten-style digits

/// Stroke skeletons for 0..9 in a unit box (x right, y down). Straight
/// segments and sampled arcs.
fn digit_strokes(d: u8) -> Vec<[(f64, f64); 2]> {
    fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64, n: usize) -> Vec<[(f64, f64); 2]> {
        (0..n)
            .map(|k| {
                let t0 = a0 + (a1 - a0) * k as f64 / n as f64;
                let t1 = a0 + (a1 - a0) * (k + 1) as f64 / n as f64;
                [
                    (cx + rx * t0.cos(), cy + ry * t0.sin()),
                    (cx + rx * t1.cos(), cy + ry * t1.sin()),
                ]
            })
            .collect()
    }
    use std::f64::consts::PI;
    match d {
        0 => arc(0.5, 0.5, 0.28, 0.38, 0.0, 2.0 * PI, 12),
        1 => vec![[(0.5, 0.12), (0.5, 0.88)], [(0.5, 0.12), (0.36, 0.26)]],
        2 => {
            let mut s = arc(0.5, 0.33, 0.25, 0.21, PI, 2.2 * PI, 6);
            s.push([(0.72, 0.45), (0.25, 0.88)]);
            s.push([(0.25, 0.88), (0.78, 0.88)]);
            s
        }
        3 => {
            let mut s = arc(0.48, 0.3, 0.24, 0.18, -0.8 * PI, 0.5 * PI, 6);
            s.extend(arc(0.48, 0.68, 0.26, 0.2, -0.5 * PI, 0.8 * PI, 6));
            s
        }
        4 => vec![
            [(0.62, 0.12), (0.22, 0.62)],
            [(0.22, 0.62), (0.8, 0.62)],
            [(0.62, 0.12), (0.62, 0.88)],
        ],
        5 => {
            let mut s = vec![[(0.74, 0.12), (0.3, 0.12)], [(0.3, 0.12), (0.28, 0.45)]];
            s.extend(arc(0.48, 0.64, 0.26, 0.22, -0.75 * PI, 0.8 * PI, 7));
            s
        }
        6 => {
            let mut s = vec![[(0.66, 0.12), (0.3, 0.55)]];
            s.extend(arc(0.5, 0.67, 0.23, 0.2, 0.0, 2.0 * PI, 10));
            s
        }
        7 => vec![[(0.22, 0.12), (0.78, 0.12)], [(0.78, 0.12), (0.4, 0.88)]],
        8 => {
            let mut s = arc(0.5, 0.3, 0.2, 0.17, 0.0, 2.0 * PI, 9);
            s.extend(arc(0.5, 0.69, 0.25, 0.2, 0.0, 2.0 * PI, 10));
            s
        }
        _ => {
            let mut s = arc(0.5, 0.33, 0.23, 0.2, 0.0, 2.0 * PI, 10);
            s.push([(0.73, 0.33), (0.6, 0.88)]);
            s
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Render `count` 28×28 digit images with random affine jitter, stroke
/// width, and background noise. Distortion strength varies per image, so a
/// minority of samples are much harder than the rest. Labels cycle 0..9.
pub fn synthetic_digits(count: usize, seed: u64) -> (IdxImages, Vec<u8>) {
    const S: usize = 28;
    let mut rng = Rng::new(seed);
    let mut pixels = Vec::with_capacity(count * S * S);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let d = (i % 10) as u8;
        let hard = rng.uniform() < 0.2;
        let amp = if hard { 1.0 } else { 0.35 };
        let rot = amp * 0.45 * (2.0 * rng.uniform() - 1.0);
        let shear = amp * 0.5 * (2.0 * rng.uniform() - 1.0);
        let sx = 1.0 + amp * 0.3 * (2.0 * rng.uniform() - 1.0);
        let sy = 1.0 + amp * 0.3 * (2.0 * rng.uniform() - 1.0);
        let tx = amp * 0.12 * (2.0 * rng.uniform() - 1.0);
        let ty = amp * 0.12 * (2.0 * rng.uniform() - 1.0);
        let width = rng.uniform_range(0.045, 0.09);
        let noise = if hard { 0.25 } else { 0.05 };
        let (c, s) = (rot.cos(), rot.sin());
        let strokes: Vec<[(f64, f64); 2]> = digit_strokes(d)
            .into_iter()
            .map(|seg| {
                seg.map(|(x, y)| {
                    let (x, y) = (x - 0.5, y - 0.5);
                    let (x, y) = (sx * (x + shear * y), sy * y);
                    (c * x - s * y + 0.5 + tx, s * x + c * y + 0.5 + ty)
                })
            })
            .collect();
        for r in 0..S {
            for col in 0..S {
                let p = ((col as f64 + 0.5) / S as f64, (r as f64 + 0.5) / S as f64);
                let dist = strokes
                    .iter()
                    .map(|seg| segment_distance(p, seg[0], seg[1]))
                    .fold(f64::INFINITY, f64::min);
                let ink = (1.0 - (dist - width).max(0.0) / 0.04).clamp(0.0, 1.0);
                let v = (ink + noise * rng.normal().abs()).clamp(0.0, 1.0);
                pixels.push((v * 255.0).round() as u8);
            }
        }
        labels.push(d);
    }
    (
        IdxImages {
            count,
            rows: S,
            cols: S,
            pixels,
        },
        labels,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_seeded_and_scaled() {
        let a = gen_polynomial(6, 64, (-2.0, 2.0), 0.01, 3).unwrap();
        let b = gen_polynomial(6, 64, (-2.0, 2.0), 0.01, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.input_dim(), 6);
        assert!(a.inputs.iter().flatten().all(|v| v.abs() <= 1.0));
        let raw = a.meta.raw_inputs.as_ref().unwrap();
        assert!(raw.iter().all(|x| (-2.0..2.0).contains(x)));
        assert_eq!(a.manifest_line(), "poly6,64,6,regression");
    }

    #[test]
    fn polynomial_targets_follow_coefficients_without_noise() {
        let ds = gen_polynomial(3, 10, (-2.0, 2.0), 0.0, 1).unwrap();
        let c = ds.meta.coefficients.as_ref().unwrap();
        for (x, t) in ds.meta.raw_inputs.as_ref().unwrap().iter().zip(&ds.targets) {
            let u = x / 2.0;
            let y = c[0] + c[1] * u + c[2] * u * u + c[3] * u * u * u;
            let Target::Values(v) = t else { panic!() };
            assert!((v[0] - y).abs() < 1e-14);
        }
    }

    #[test]
    fn polynomial_rejects_too_few_points() {
        assert!(gen_polynomial(6, 6, (-2.0, 2.0), 0.0, 0).is_err());
    }

    #[test]
    fn toy_balanced_in_unit_square() {
        let ds = gen_toy_classification(301, 9).unwrap();
        let c = ds.class_counts();
        assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
        assert!(ds.inputs.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ds, gen_toy_classification(301, 9).unwrap());
        for (x, t) in ds.inputs.iter().zip(&ds.targets) {
            assert_eq!(t, &Target::Class(toy_class(x[0], x[1])));
        }
    }

    #[test]
    fn white_image() {
        let bytes = encode_ppm(2, 2, &[255; 12]);
        let ds = image_dataset(&decode_ppm(&bytes).unwrap()).unwrap();
        assert_eq!(ds.len(), 4);
        assert!(ds.targets.iter().all(|t| t == &Target::Values(vec![1.0, 1.0, 1.0])));
        assert!(ds.inputs.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ppm_round_trip_is_byte_exact() {
        let img = synthetic_image(17, 9, 5);
        let bytes = encode_ppm(img.width, img.height, &img.data);
        let ds = image_dataset(&decode_ppm(&bytes).unwrap()).unwrap();
        assert_eq!(ds.to_ppm().unwrap(), bytes);
    }

    #[test]
    fn ppm_header_comments_and_errors() {
        let mut with_comment = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        with_comment.extend_from_slice(&[1, 2, 3]);
        assert_eq!(decode_ppm(&with_comment).unwrap().data, vec![1, 2, 3]);
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n1 2 3"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\x00"), Err(Error::MalformedImage(_))));
        assert!(matches!(decode_ppm(b"P6\n2"), Err(Error::MalformedImage(_))));
    }

    #[test]
    fn resample_halves() {
        let img = RgbImage {
            width: 2,
            height: 2,
            data: vec![0, 0, 0, 255, 255, 255, 255, 255, 255, 0, 0, 0],
        };
        let small = resample(&img, 1, 1);
        assert_eq!(small.data, vec![128, 128, 128]);
    }

    fn fixture() -> (IdxImages, Vec<u8>) {
        let mut pixels = vec![0u8; 2 * 28 * 28];
        pixels[0] = 255;
        pixels[28 * 28 + 5] = 51;
        (
            IdxImages {
                count: 2,
                rows: 28,
                cols: 28,
                pixels,
            },
            vec![3, 7],
        )
    }

    #[test]
    fn idx_fixture_header() {
        let (img, labels) = fixture();
        let parsed = parse_idx_images(&encode_idx_images(&img)).unwrap();
        assert_eq!((parsed.count, parsed.rows, parsed.cols), (2, 28, 28));
        assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
        let ds = idx_subset(&parsed, &labels, 2, 0).unwrap();
        assert_eq!(ds.input_dim(), 784);
        assert!(ds.inputs.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn idx_errors() {
        let (img, labels) = fixture();
        let mut bad = encode_idx_images(&img);
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::MalformedIdx(_))));
        let mut short = encode_idx_images(&img);
        short.pop();
        assert!(matches!(parse_idx_images(&short), Err(Error::MalformedIdx(_))));
        assert!(matches!(idx_subset(&img, &labels[..1], 1, 0), Err(Error::LabelImageCountMismatch { .. })));
        assert!(matches!(idx_subset(&img, &labels, 0, 0), Err(Error::EmptySubset)));
    }

    #[test]
    fn idx_files_and_stratification() {
        let dir = tempfile::tempdir().unwrap();
        let (img, labels) = synthetic_digits(500, 11);
        let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
        write_idx(&ip, &lp, &img, &labels).unwrap();
        let ds = load_idx_subset(&ip, &lp, 123, 4).unwrap();
        assert_eq!(ds.len(), 123);
        let c = ds.class_counts();
        assert_eq!(c.len(), 10);
        assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
        assert_eq!(ds, load_idx_subset(&ip, &lp, 123, 4).unwrap());
        assert!(matches!(load_idx_subset(&ip, &lp, 0, 4), Err(Error::EmptySubset)));
    }

    #[test]
    fn digits_are_distinct_per_class() {
        let (img, labels) = synthetic_digits(20, 1);
        assert_eq!(labels[..10], [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let px = 784;
        let ink: Vec<u32> = (0..10)
            .map(|i| img.pixels[i * px..(i + 1) * px].iter().map(|&b| b as u32).sum())
            .collect();
        assert!(ink.iter().all(|&v| v > 0));
        assert_ne!(img.pixels[..px], img.pixels[px..2 * px]);
    }
}
