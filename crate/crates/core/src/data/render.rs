use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Domain, SceneConfig};
use crate::detector::GroundTruthBox;
use crate::error::{Error, Result};

/// Filled shape classes, in class-id order.
pub const SHAPES: [&str; 3] = ["circle", "rectangle", "triangle"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class_id: usize,
    /// Centre in pixels.
    pub cx: f64,
    pub cy: f64,
    /// Extent in pixels.
    pub w: f64,
    pub h: f64,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub top: [u8; 3],
    pub bottom: [u8; 3],
    /// Horizontal bands `(y0, y1, tint)` drawn over the gradient.
    pub bands: Vec<(u32, u32, [u8; 3])>,
}

/// Everything needed to render one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub domain: Domain,
    pub background: Background,
    pub objects: Vec<ObjectSpec>,
}

impl ObjectSpec {
    pub fn to_box(&self, image_size: usize) -> GroundTruthBox {
        let s = image_size as f64;
        GroundTruthBox {
            class_id: self.class_id,
            cx: self.cx / s,
            cy: self.cy / s,
            w: self.w / s,
            h: self.h / s,
        }
    }
}

fn dark_color<R: Rng>(rng: &mut R) -> [u8; 3] {
    [rng.random_range(20..150), rng.random_range(20..150), rng.random_range(20..150)]
}

fn bright_color<R: Rng>(rng: &mut R, background: [u8; 3]) -> [u8; 3] {
    loop {
        let c = [rng.random_range(60..=255), rng.random_range(60..=255), rng.random_range(60..=255)];
        let diff: i32 = c.iter().zip(&background).map(|(&a, &b)| (a as i32 - b as i32).abs()).sum();
        if diff > 150 {
            return c;
        }
    }
}

fn box_overlap(a: &ObjectSpec, b: &ObjectSpec) -> f64 {
    let iw = ((a.cx + a.w / 2.0).min(b.cx + b.w / 2.0) - (a.cx - a.w / 2.0).max(b.cx - b.w / 2.0)).max(0.0);
    let ih = ((a.cy + a.h / 2.0).min(b.cy + b.h / 2.0) - (a.cy - a.h / 2.0).max(b.cy - b.h / 2.0)).max(0.0);
    let inter = iw * ih;
    inter / (a.w * a.h + b.w * b.h - inter)
}

impl SceneSpec {
    /// Draws the scene layout from `seed`. The layout does not depend on
    /// the domain.
    pub fn sample(seed: u64, domain: Domain, cfg: &SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = cfg.image_size as f64;
        let top = dark_color(&mut rng);
        let bottom = dark_color(&mut rng);
        let bands = (0..rng.random_range(0..=2))
            .map(|_| {
                let y0 = rng.random_range(0..cfg.image_size as u32);
                let y1 = (y0 + rng.random_range(2..cfg.image_size as u32 / 4)).min(cfg.image_size as u32);
                (y0, y1, dark_color(&mut rng))
            })
            .collect();
        let mean_bg = [0, 1, 2].map(|i| ((top[i] as u32 + bottom[i] as u32) / 2) as u8);
        let count = rng.random_range(cfg.min_objects..=cfg.max_objects);
        let mut objects: Vec<ObjectSpec> = Vec::with_capacity(count);
        for _ in 0..count {
            for _attempt in 0..30 {
                let w = rng.random_range(cfg.min_size..=cfg.max_size) * size;
                let h = (w * rng.random_range(0.75..1.33)).clamp(cfg.min_size * size, cfg.max_size * size);
                let cand = ObjectSpec {
                    class_id: rng.random_range(0..cfg.num_classes),
                    cx: rng.random_range(w / 2.0..=size - w / 2.0),
                    cy: rng.random_range(h / 2.0..=size - h / 2.0),
                    w,
                    h,
                    color: bright_color(&mut rng, mean_bg),
                };
                if objects.iter().all(|o| box_overlap(o, &cand) < 0.1) {
                    objects.push(cand);
                    break;
                }
            }
        }
        Ok(Self {
            seed,
            domain,
            background: Background { top, bottom, bands },
            objects,
        })
    }

    pub fn boxes(&self, image_size: usize) -> Vec<GroundTruthBox> {
        self.objects.iter().map(|o| o.to_box(image_size)).collect()
    }

    /// Clean rendering, independent of the domain.
    pub fn render_clean(&self, image_size: usize) -> RgbImage {
        let n = image_size as u32;
        let bg = &self.background;
        let mut img = RgbImage::from_fn(n, n, |_, y| {
            let t = y as f64 / (n - 1).max(1) as f64;
            Rgb([0, 1, 2].map(|i| (bg.top[i] as f64 * (1.0 - t) + bg.bottom[i] as f64 * t).round() as u8))
        });
        for &(y0, y1, tint) in &bg.bands {
            for y in y0..y1 {
                for x in 0..n {
                    let p = img.get_pixel_mut(x, y);
                    p.0 = [0, 1, 2].map(|i| ((p.0[i] as u16 + tint[i] as u16) / 2) as u8);
                }
            }
        }
        for o in &self.objects {
            draw_object(&mut img, o);
        }
        img
    }
}

/// Pixel-centre coverage test for each shape.
fn covers(o: &ObjectSpec, px: f64, py: f64) -> bool {
    let (dx, dy) = ((px - o.cx) / (o.w / 2.0), (py - o.cy) / (o.h / 2.0));
    match o.class_id % SHAPES.len() {
        0 => dx * dx + dy * dy <= 1.0,
        1 => dx.abs() <= 1.0 && dy.abs() <= 1.0,
        // apex at the top centre, base along the bottom edge
        _ => (-1.0..=1.0).contains(&dy) && dx.abs() <= (dy + 1.0) / 2.0,
    }
}

fn draw_object(img: &mut RgbImage, o: &ObjectSpec) {
    let n = img.width() as i64;
    let x0 = ((o.cx - o.w / 2.0).floor() as i64).max(0);
    let x1 = ((o.cx + o.w / 2.0).ceil() as i64).min(n);
    let y0 = ((o.cy - o.h / 2.0).floor() as i64).max(0);
    let y1 = ((o.cy + o.h / 2.0).ceil() as i64).min(n);
    for y in y0..y1 {
        for x in x0..x1 {
            if covers(o, x as f64 + 0.5, y as f64 + 0.5) {
                img.put_pixel(x as u32, y as u32, Rgb(o.color));
            }
        }
    }
}

/// Uniform fog at `strength` in `[0, 1]`: contrast shrinks by `0.3 s`
/// around mid-grey, the result is blended toward white with alpha `0.5 s`,
/// and Gaussian noise with sigma `0.03 s` is added. Strength 0 returns the
/// input unchanged.
pub fn apply_fog(img: &RgbImage, strength: f64, seed: u64) -> RgbImage {
    if strength == 0.0 {
        return img.clone();
    }
    let contrast = 1.0 - 0.3 * strength;
    let alpha = 0.5 * strength;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, 0.03 * strength).unwrap();
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in p.0.iter_mut() {
            let v = *c as f64 / 255.0;
            let v = 0.5 + (v - 0.5) * contrast;
            let v = (1.0 - alpha) * v + alpha + noise.sample(&mut rng);
            *c = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out
}

/// A rendered scene and its annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub image: RgbImage,
    pub boxes: Vec<GroundTruthBox>,
}

/// Renders the scene for `seed`; target scenes are fogged afterwards.
pub fn generate_scene(seed: u64, domain: Domain, cfg: &SceneConfig) -> Result<Scene> {
    let spec = SceneSpec::sample(seed, domain, cfg)?;
    let clean = spec.render_clean(cfg.image_size);
    let image = match domain {
        Domain::Source => clean,
        Domain::Target => apply_fog(&clean, cfg.corruption_strength, seed),
    };
    let boxes = spec.boxes(cfg.image_size);
    for b in &boxes {
        b.validate(Some(cfg.num_classes))
            .map_err(|e| Error::Data(format!("generator produced an invalid box: {e}")))?;
    }
    Ok(Scene { spec, image, boxes })
}
