//! Procedural layered scenes rendered into exact integer-disparity stereo pairs.
//!
//! A scene is a background plane plus axis-aligned rectangles, each a
//! fronto-parallel layer at one integer disparity. Textures are functions of
//! integer left-image coordinates, so a layer seen in the right view at
//! column `x` shows exactly the texel the left view shows at `x + d`.

use diffnet::NdArray;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Result, StereoError};
use crate::sample::StereoSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TextureKind {
    Flat,
    Gradient,
    Checker,
    Noise,
}

impl TextureKind {
    pub const ALL: [TextureKind; 4] = [TextureKind::Flat, TextureKind::Gradient, TextureKind::Checker, TextureKind::Noise];
}

#[derive(Clone, Debug, PartialEq)]
pub enum Texture {
    Flat { color: [f32; 3] },
    /// `color0 + t (color1 - color0)` with `t = clamp(gx u + gy v + offset)`.
    Gradient { color0: [f32; 3], color1: [f32; 3], gx: f32, gy: f32, offset: f32 },
    Checker { color0: [f32; 3], color1: [f32; 3], cell: usize },
    /// Hashed value noise of amplitude `amplitude` around `base`: lattice
    /// values every `scale` texels, bilinearly interpolated in between.
    Noise { base: [f32; 3], amplitude: f32, scale: usize, seed: u64 },
}

impl Texture {
    /// Colour at integer texture coordinates (left-image column `u`, row `v`).
    pub fn color(&self, u: i64, v: i64) -> [f32; 3] {
        match self {
            Texture::Flat { color } => *color,
            Texture::Gradient { color0, color1, gx, gy, offset } => {
                let t = (gx * u as f32 + gy * v as f32 + offset).clamp(0.0, 1.0);
                std::array::from_fn(|c| color0[c] + t * (color1[c] - color0[c]))
            }
            Texture::Checker { color0, color1, cell } => {
                let cell = *cell as i64;
                if (u.div_euclid(cell) + v.div_euclid(cell)) % 2 == 0 {
                    *color0
                } else {
                    *color1
                }
            }
            Texture::Noise { base, amplitude, scale, seed } => {
                let s = *scale as i64;
                let (iu, iv) = (u.div_euclid(s), v.div_euclid(s));
                let (fu, fv) = (u.rem_euclid(s) as f32 / s as f32, v.rem_euclid(s) as f32 / s as f32);
                std::array::from_fn(|c| {
                    let lattice = |a: i64, b: i64| {
                        let h = hash3(*seed, a as u64, b as u64 ^ ((c as u64) << 48));
                        (h >> 40) as f32 / (1u64 << 24) as f32
                    };
                    let top = lattice(iu, iv) * (1.0 - fu) + lattice(iu + 1, iv) * fu;
                    let bottom = lattice(iu, iv + 1) * (1.0 - fu) + lattice(iu + 1, iv + 1) * fu;
                    let r = top * (1.0 - fv) + bottom * fv;
                    (base[c] + amplitude * (r - 0.5)).clamp(0.0, 1.0)
                })
            }
        }
    }

    pub fn random(kind: TextureKind, rng: &mut impl Rng) -> Self {
        let mut color = || -> [f32; 3] { std::array::from_fn(|_| rng.gen::<f32>()) };
        match kind {
            TextureKind::Flat => Texture::Flat { color: color() },
            TextureKind::Gradient => {
                let (color0, color1) = (color(), color());
                let gx = rng.gen_range(-0.03..0.03);
                let gy = rng.gen_range(-0.03..0.03);
                Texture::Gradient { color0, color1, gx, gy, offset: rng.gen_range(0.0..1.0) }
            }
            TextureKind::Checker => {
                let (color0, color1) = (color(), color());
                Texture::Checker { color0, color1, cell: rng.gen_range(2..=8) }
            }
            TextureKind::Noise => {
                let base = color();
                Texture::Noise { base, amplitude: rng.gen_range(0.3..0.8), scale: rng.gen_range(1..=4), seed: rng.gen() }
            }
        }
    }
}

fn hash3(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ b)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream seed for item `index` of a seeded collection.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(index))
}

/// Foreground rectangle in left-image coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RectLayer {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
    pub disparity: usize,
    pub texture: Texture,
}

impl RectLayer {
    fn covers(&self, y: usize, u: i64) -> bool {
        y >= self.y0 && y < self.y0 + self.height && u >= self.x0 as i64 && u < (self.x0 + self.width) as i64
    }
}

/// Background plane plus rectangles. Rectangles are painted in order, so
/// later entries occlude earlier ones; [`Scene::new`] sorts them far to near.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub background: Texture,
    pub background_disparity: usize,
    pub rects: Vec<RectLayer>,
}

impl Scene {
    pub fn new(height: usize, width: usize, background: Texture, background_disparity: usize, mut rects: Vec<RectLayer>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(StereoError::InvalidConfig("scene needs a non-empty image".into()));
        }
        for r in &rects {
            if r.height == 0 || r.width == 0 || r.y0 + r.height > height || r.x0 + r.width > width {
                return Err(StereoError::InvalidConfig(format!(
                    "rectangle at ({}, {}) of size {}x{} leaves the {height}x{width} image",
                    r.y0, r.x0, r.height, r.width
                )));
            }
            if r.disparity < background_disparity {
                return Err(StereoError::InvalidConfig(format!(
                    "rectangle disparity {} is behind the background at {background_disparity}",
                    r.disparity
                )));
            }
        }
        rects.sort_by_key(|r| r.disparity);
        Ok(Self { height, width, background, background_disparity, rects })
    }

    /// Front-most layer at left-image texel column `u` of row `y`, viewed
    /// through a camera that sees texel `x + d` at column `x`.
    fn front(&self, y: usize, x: i64, shift: bool) -> (&Texture, usize, i64) {
        for r in self.rects.iter().rev() {
            let u = if shift { x + r.disparity as i64 } else { x };
            if r.covers(y, u) {
                return (&r.texture, r.disparity, u);
            }
        }
        let u = if shift { x + self.background_disparity as i64 } else { x };
        (&self.background, self.background_disparity, u)
    }

    pub fn render(&self) -> StereoSample {
        let (h, w) = (self.height, self.width);
        let mut left = NdArray::zeros(&[3, h, w]);
        let mut right = NdArray::zeros(&[3, h, w]);
        let mut disparity = NdArray::zeros(&[h, w]);
        for y in 0..h {
            for x in 0..w {
                let (tex, d, u) = self.front(y, x as i64, false);
                let c = tex.color(u, y as i64);
                for (k, &v) in c.iter().enumerate() {
                    left.data_mut()[(k * h + y) * w + x] = v;
                }
                disparity.data_mut()[y * w + x] = d as f32;
                let (tex, _, u) = self.front(y, x as i64, true);
                let c = tex.color(u, y as i64);
                for (k, &v) in c.iter().enumerate() {
                    right.data_mut()[(k * h + y) * w + x] = v;
                }
            }
        }
        let valid = NdArray::ones(&[h, w]);
        StereoSample { left, right, disparity, valid }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub max_disparity: usize,
    pub min_layers: usize,
    pub max_layers: usize,
    pub textures: Vec<TextureKind>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 128,
            max_disparity: 32,
            min_layers: 3,
            max_layers: 6,
            textures: TextureKind::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(StereoError::InvalidConfig(m));
        if self.height < 4 || self.width < 4 {
            return err(format!("image {}x{} is too small", self.height, self.width));
        }
        if self.max_disparity == 0 || 2 * self.max_disparity >= self.width {
            return err(format!("max_disparity {} must be in 1..width/2 (width {})", self.max_disparity, self.width));
        }
        if self.min_layers > self.max_layers {
            return err(format!("min_layers {} exceeds max_layers {}", self.min_layers, self.max_layers));
        }
        if self.textures.is_empty() {
            return err("no texture kinds enabled".into());
        }
        Ok(())
    }

    /// Largest disparity the generator draws. The top quarter of the range is
    /// left out: soft-argmin only reaches its last level with a one-hot
    /// distribution, so ground truth stays a full coarse level inside it.
    pub fn disparity_cap(&self) -> usize {
        self.max_disparity - self.max_disparity.div_ceil(4)
    }
}

/// Draws a random scene: a noise-textured background at a small disparity and
/// `min_layers..=max_layers` nearer rectangles textured from `cfg.textures`.
/// The background is always noise so most of every image can be matched.
pub fn random_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = diffnet::rng_from_seed(cfg.seed);
    let (h, w) = (cfg.height, cfg.width);
    let cap = cfg.disparity_cap();
    let texture = |rng: &mut diffnet::Rng| {
        let kind = *cfg.textures.choose(rng).expect("validated non-empty");
        Texture::random(kind, rng)
    };
    let background = Texture::random(TextureKind::Noise, &mut rng);
    let bg_disp = rng.gen_range(0..=cap / 4);
    let n = rng.gen_range(cfg.min_layers..=cfg.max_layers);
    let mut rects = Vec::with_capacity(n);
    for _ in 0..n {
        let rh = rng.gen_range((h / 6).max(1)..=(h / 2).max(1));
        let rw = rng.gen_range((w / 8).max(1)..=(w / 3).max(1));
        rects.push(RectLayer {
            y0: rng.gen_range(0..=h - rh),
            x0: rng.gen_range(0..=w - rw),
            height: rh,
            width: rw,
            disparity: rng.gen_range(bg_disp..=cap),
            texture: texture(&mut rng),
        });
    }
    Scene::new(h, w, background, bg_disp, rects)
}

/// Renders the scene drawn from `cfg`.
pub fn gen_scene(cfg: &SceneConfig) -> Result<StereoSample> {
    Ok(random_scene(cfg)?.render())
}

/// Fixed, lazily rendered collection of scenes: item `i` uses the seed
/// `derive_seed(cfg.seed, i)`.
#[derive(Clone, Debug)]
pub struct SceneSet {
    pub cfg: SceneConfig,
    pub len: usize,
}

impl SceneSet {
    pub fn new(cfg: SceneConfig, len: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, len })
    }

    pub fn get(&self, index: usize) -> Result<StereoSample> {
        let cfg = SceneConfig { seed: derive_seed(self.cfg.seed, index as u64), ..self.cfg.clone() };
        gen_scene(&cfg)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<StereoSample>> + '_ {
        (0..self.len).map(|i| self.get(i))
    }
}
