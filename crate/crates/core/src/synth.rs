//! Synthetic tubular scenes: quadratic Bezier curves with width, optional
//! single-level branches, and additive Gaussian noise. Deterministic given
//! the scene seed (ChaCha8 stream, fixed draw order: per-curve branch
//! geometry first, then per-pixel noise row-major).

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::{Element, Tensor};

/// One quadratic Bezier stroke: control points in (x, y) pixel coordinates,
/// rasterized with round caps of diameter `width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSpec {
    pub p0: (f64, f64),
    pub p1: (f64, f64),
    pub p2: (f64, f64),
    pub width: f64,
}

impl CurveSpec {
    pub fn point(&self, t: f64) -> (f64, f64) {
        let u = 1.0 - t;
        (
            u * u * self.p0.0 + 2.0 * u * t * self.p1.0 + t * t * self.p2.0,
            u * u * self.p0.1 + 2.0 * u * t * self.p1.1 + t * t * self.p2.1,
        )
    }

    fn is_degenerate(&self) -> bool {
        self.p0 == self.p1 && self.p1 == self.p2
    }

    fn polyline(&self) -> Vec<(f64, f64)> {
        let est = dist(self.p0, self.p1) + dist(self.p1, self.p2);
        // quarter-pixel steps keep the distance-to-polyline error negligible
        let n = ((est * 4.0).ceil() as usize).max(8);
        (0..=n).map(|i| self.point(i as f64 / n as f64)).collect()
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Full description of one synthetic image: geometry, noise, intensities.
#[derive(Debug, Clone)]
pub struct TubularScene {
    pub seed: u64,
    pub h: usize,
    pub w: usize,
    pub curves: Vec<CurveSpec>,
    pub branch_prob: f64,
    pub noise_sigma: f64,
    pub bg_intensity: f64,
    pub fg_intensity: f64,
}

impl TubularScene {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 {
            return Err(Error::invalid("scene", "empty image extents"));
        }
        if self.curves.is_empty() {
            return Err(Error::invalid("scene", "no curves"));
        }
        for (i, c) in self.curves.iter().enumerate() {
            if !(1.0..=4.0).contains(&c.width) {
                return Err(Error::invalid(
                    "scene",
                    format!("curve {i} width {} outside [1,4]", c.width),
                ));
            }
            for (x, y) in [c.p0, c.p1, c.p2] {
                let inside = x >= 0.0
                    && y >= 0.0
                    && x <= (self.w - 1) as f64
                    && y <= (self.h - 1) as f64;
                if !inside {
                    return Err(Error::invalid(
                        "scene",
                        format!("curve {i} control point ({x}, {y}) outside {}x{}", self.h, self.w),
                    ));
                }
            }
            if c.is_degenerate() {
                return Err(Error::invalid("scene", format!("curve {i} has zero length")));
            }
        }
        if !(0.0..=1.0).contains(&self.branch_prob) {
            return Err(Error::invalid("scene", "branch probability outside [0,1]"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("scene", "noise sigma must be finite and >= 0"));
        }
        for v in [self.bg_intensity, self.fg_intensity] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid("scene", "intensities must lie in [0,1]"));
            }
        }
        Ok(())
    }
}

fn clamp_inside(p: (f64, f64), h: usize, w: usize) -> (f64, f64) {
    (
        p.0.clamp(0.0, (w - 1) as f64),
        p.1.clamp(0.0, (h - 1) as f64),
    )
}

fn point_segment_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = ((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2;
    let t = t.clamp(0.0, 1.0);
    dist(p, (a.0 + t * vx, a.1 + t * vy))
}

fn stamp_polyline(mask: &mut Mask, poly: &[(f64, f64)], width: f64) {
    let r = width / 2.0;
    for seg in poly.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let x0 = ((a.0.min(b.0) - r).floor().max(0.0)) as usize;
        let x1 = ((a.0.max(b.0) + r).ceil() as usize).min(mask.w() - 1);
        let y0 = ((a.1.min(b.1) - r).floor().max(0.0)) as usize;
        let y1 = ((a.1.max(b.1) + r).ceil() as usize).min(mask.h() - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if !mask.get(y, x) && point_segment_dist((x as f64, y as f64), a, b) <= r {
                    mask.set(y, x, true);
                }
            }
        }
    }
}

/// Rasterize the scene: a pixel is foreground iff its center lies within
/// width/2 of some curve's sampled polyline. The image is the two-intensity
/// painting of the mask plus clipped Gaussian noise.
pub fn generate<T: Element>(scene: &TubularScene) -> Result<(Tensor<T>, Mask)> {
    scene.validate()?;
    let (h, w) = (scene.h, scene.w);
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);

    let mut strokes: Vec<(Vec<(f64, f64)>, f64)> = Vec::new();
    for curve in &scene.curves {
        strokes.push((curve.polyline(), curve.width));
        if scene.branch_prob > 0.0 && rng.gen_bool(scene.branch_prob) {
            let t: f64 = rng.gen_range(0.25..0.75);
            let start = curve.point(t);
            let ang: f64 = rng.gen_range(0.0..TAU);
            let len: f64 = rng.gen_range(0.25..0.5) * h.min(w) as f64;
            let end = clamp_inside((start.0 + len * ang.cos(), start.1 + len * ang.sin()), h, w);
            let bend: f64 = rng.gen_range(-0.3..0.3);
            let mid_raw = (
                (start.0 + end.0) / 2.0 - bend * (end.1 - start.1),
                (start.1 + end.1) / 2.0 + bend * (end.0 - start.0),
            );
            let branch = CurveSpec {
                p0: start,
                p1: clamp_inside(mid_raw, h, w),
                p2: end,
                width: (curve.width * 0.75).max(1.0),
            };
            // clamping can collapse a branch that points off the image; skip it
            if dist(branch.p0, branch.p2) > 1.0 {
                strokes.push((branch.polyline(), branch.width));
            }
        }
    }

    let mut mask = Mask::zeros(h, w);
    for (poly, width) in &strokes {
        stamp_polyline(&mut mask, poly, *width);
    }

    let mut pixels = vec![T::from_f64(0.0); h * w];
    for (px, fg) in pixels.iter_mut().zip(mask.data()) {
        let base = if *fg { scene.fg_intensity } else { scene.bg_intensity };
        let v = if scene.noise_sigma > 0.0 {
            let n: f64 = rng.sample(StandardNormal);
            (base + scene.noise_sigma * n).clamp(0.0, 1.0)
        } else {
            base
        };
        *px = T::from_f64(v);
    }
    let image = Tensor::from_vec(&[1, 1, h, w], pixels)?;
    Ok((image, mask))
}

/// Randomized scene family for dataset generation: everything `generate`
/// needs except the concrete control points, which are drawn per item.
#[derive(Debug, Clone)]
pub struct SceneTemplate {
    pub h: usize,
    pub w: usize,
    pub curves_min: usize,
    pub curves_max: usize,
    pub width_min: f64,
    pub width_max: f64,
    pub branch_prob: f64,
    pub noise_sigma: f64,
    pub bg_intensity: f64,
    pub fg_intensity: f64,
}

impl Default for SceneTemplate {
    fn default() -> Self {
        Self {
            h: 64,
            w: 64,
            curves_min: 2,
            curves_max: 4,
            width_min: 1.0,
            width_max: 2.0,
            branch_prob: 0.4,
            noise_sigma: 0.25,
            bg_intensity: 0.25,
            fg_intensity: 0.75,
        }
    }
}

impl SceneTemplate {
    fn validate(&self) -> Result<()> {
        if self.h < 8 || self.w < 8 {
            return Err(Error::invalid("scene template", "image smaller than 8x8"));
        }
        if self.curves_min == 0 || self.curves_min > self.curves_max {
            return Err(Error::invalid("scene template", "bad curve count range"));
        }
        if !(1.0..=4.0).contains(&self.width_min)
            || !(1.0..=4.0).contains(&self.width_max)
            || self.width_min > self.width_max
        {
            return Err(Error::invalid("scene template", "width range outside [1,4]"));
        }
        Ok(())
    }

    /// Draw one concrete scene. The scene's own seed is pulled from the same
    /// stream after the geometry, so branch and noise draws never replay the
    /// values that shaped the curves.
    pub fn sample_scene(&self, seed: u64) -> Result<TubularScene> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let margin = 2.0;
        let (xr, yr) = (
            margin..(self.w - 1) as f64 - margin,
            margin..(self.h - 1) as f64 - margin,
        );
        let min_span = self.h.min(self.w) as f64 / 4.0;
        let n_curves = rng.gen_range(self.curves_min..=self.curves_max);
        let mut curves = Vec::with_capacity(n_curves);
        for _ in 0..n_curves {
            let (p0, p2) = loop {
                let a = (rng.gen_range(xr.clone()), rng.gen_range(yr.clone()));
                let b = (rng.gen_range(xr.clone()), rng.gen_range(yr.clone()));
                if dist(a, b) >= min_span {
                    break (a, b);
                }
            };
            let bend: f64 = rng.gen_range(-0.35..0.35);
            let mid = (
                (p0.0 + p2.0) / 2.0 - bend * (p2.1 - p0.1),
                (p0.1 + p2.1) / 2.0 + bend * (p2.0 - p0.0),
            );
            curves.push(CurveSpec {
                p0,
                p1: clamp_inside(mid, self.h, self.w),
                p2,
                width: rng.gen_range(self.width_min..=self.width_max),
            });
        }
        Ok(TubularScene {
            seed: rng.gen(),
            h: self.h,
            w: self.w,
            curves,
            branch_prob: self.branch_prob,
            noise_sigma: self.noise_sigma,
            bg_intensity: self.bg_intensity,
            fg_intensity: self.fg_intensity,
        })
    }
}

/// Generate `n` items with per-item seeds `seed + i`.
pub fn make_dataset<T: Element>(
    n: usize,
    seed: u64,
    template: &SceneTemplate,
) -> Result<Vec<(Tensor<T>, Mask)>> {
    if n == 0 {
        return Err(Error::invalid("make_dataset", "n must be >= 1"));
    }
    (0..n)
        .map(|i| generate(&template.sample_scene(seed.wrapping_add(i as u64))?))
        .collect()
}

/// Index split used everywhere: even items train, odd items test.
pub fn parity_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    (
        (0..n).step_by(2).collect(),
        (1..n).step_by(2).collect(),
    )
}

/// Serialize a grayscale image as binary PGM (P5, maxval 255).
pub fn pgm_bytes(h: usize, w: usize, gray: &[u8]) -> Result<Vec<u8>> {
    if gray.len() != h * w {
        return Err(Error::shape("pgm", format!("{} bytes vs {h}x{w}", gray.len())));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    Ok(out)
}

/// Quantize a [1,1,H,W] (or [H,W]) tensor in [0,1] to 8-bit gray.
pub fn image_to_gray<T: Element>(image: &Tensor<T>) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = match image.shape() {
        [1, 1, h, w] => (*h, *w),
        [h, w] => (*h, *w),
        s => return Err(Error::shape("image_to_gray", format!("{s:?}"))),
    };
    let gray = image
        .to_f64_vec()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok((h, w, gray))
}

pub fn mask_to_gray(mask: &Mask) -> Vec<u8> {
    mask.data().iter().map(|&fg| if fg { 255u8 } else { 0 }).collect()
}

/// Parse binary PGM (P5, maxval <= 255), ignoring `#` comments.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |detail: &str| Error::format("PGM", detail.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comment lines before each header field
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| bad("bad header integer"))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be 1..=255"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing header terminator"));
    }
    pos += 1;
    let data = &bytes[pos..];
    if data.len() != h * w {
        return Err(bad("payload length does not match extents"));
    }
    Ok((h, w, data.to_vec()))
}

/// Read a PGM file into a [1,1,H,W] tensor scaled to [0,1].
pub fn load_pgm_image<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path)?;
    let (h, w, gray) = parse_pgm(&bytes)?;
    let data = gray.iter().map(|&g| T::from_f64(g as f64 / 255.0)).collect();
    Tensor::from_vec(&[1, 1, h, w], data)
}

fn item_paths(dir: &Path, i: usize) -> [std::path::PathBuf; 4] {
    [
        dir.join(format!("img_{i:04}.dstn")),
        dir.join(format!("msk_{i:04}.dstn")),
        dir.join(format!("img_{i:04}.pgm")),
        dir.join(format!("msk_{i:04}.pgm")),
    ]
}

/// Write a dataset as paired DSTN tensors (training fixtures) and PGM
/// images (inspection): img_0000.dstn, msk_0000.dstn, img_0000.pgm, ...
pub fn save_dataset(dir: impl AsRef<Path>, items: &[(Tensor<f32>, Mask)]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (i, (image, mask)) in items.iter().enumerate() {
        let [img_t, msk_t, img_p, msk_p] = item_paths(dir, i);
        image.save_dstn(&img_t)?;
        let mdata: Vec<f32> = mask.data().iter().map(|&b| b as u8 as f32).collect();
        Tensor::from_vec(&[mask.h(), mask.w()], mdata)?.save_dstn(&msk_t)?;
        let (h, w, gray) = image_to_gray(image)?;
        std::fs::write(&img_p, pgm_bytes(h, w, &gray)?)?;
        std::fs::write(&msk_p, pgm_bytes(mask.h(), mask.w(), &mask_to_gray(mask))?)?;
    }
    Ok(())
}

/// Load a dataset produced by `save_dataset` (DSTN pairs, consecutive from
/// index 0).
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<(Tensor<f32>, Mask)>> {
    let dir = dir.as_ref();
    let mut items = Vec::new();
    loop {
        let [img_t, msk_t, _, _] = item_paths(dir, items.len());
        if !img_t.exists() {
            break;
        }
        let image: Tensor<f32> = Tensor::load_dstn(&img_t)?;
        let mask_tensor: Tensor<f32> = Tensor::load_dstn(&msk_t)?;
        items.push((image, Mask::from_threshold(&mask_tensor, 0.5)?));
    }
    if items.is_empty() {
        return Err(Error::format(
            "dataset",
            format!("no img_0000.dstn under {}", dir.display()),
        ));
    }
    Ok(items)
}
