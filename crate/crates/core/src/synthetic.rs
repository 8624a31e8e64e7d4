//! Procedural high-frame-rate clips: textured sprites moving over a panning
//! textured background, rendered analytically so motion is sub-pixel exact.

use std::f32::consts::TAU;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{FrameClip, Image};
use crate::noise::{add_noise, NoiseParams};
use crate::{io, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ClipSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub sprites: usize,
    /// Upper bound on sprite and camera speed in pixels per frame.
    pub max_speed: f32,
    pub fps: f64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self { height: 64, width: 64, frames: 48, sprites: 4, max_speed: 1.2, fps: 240.0 }
    }
}

#[derive(Clone, Debug)]
struct Texture {
    base: [f32; 3],
    waves: Vec<(f32, f32, f32, [f32; 3])>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, waves: usize) -> Self {
        let base = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
        let waves = (0..waves)
            .map(|_| {
                let period = rng.random_range(3.0f32..24.0);
                let angle = rng.random_range(0.0..TAU);
                let k = TAU / period;
                let amp = [rng.random_range(0.0..0.2), rng.random_range(0.0..0.2), rng.random_range(0.0..0.2)];
                (k * angle.cos(), k * angle.sin(), rng.random_range(0.0..TAU), amp)
            })
            .collect();
        Self { base, waves }
    }

    fn sample(&self, x: f32, y: f32) -> [f32; 3] {
        let mut v = self.base;
        for &(kx, ky, phase, amp) in &self.waves {
            let s = (kx * x + ky * y + phase).sin();
            for c in 0..3 {
                v[c] += amp[c] * s;
            }
        }
        v
    }
}

#[derive(Clone, Debug)]
struct Sprite {
    texture: Texture,
    radius: f32,
    square: bool,
    origin: (f32, f32),
    velocity: (f32, f32),
    accel: (f32, f32),
}

impl Sprite {
    fn position(&self, t: f32) -> (f32, f32) {
        (
            self.origin.0 + self.velocity.0 * t + 0.5 * self.accel.0 * t * t,
            self.origin.1 + self.velocity.1 * t + 0.5 * self.accel.1 * t * t,
        )
    }

    /// Coverage in `[0, 1]` with a one-pixel linear edge ramp.
    fn coverage(&self, dx: f32, dy: f32) -> f32 {
        let d = if self.square { dx.abs().max(dy.abs()) } else { (dx * dx + dy * dy).sqrt() };
        (self.radius + 0.5 - d).clamp(0.0, 1.0)
    }
}

/// A deterministic moving scene.
#[derive(Clone, Debug)]
pub struct Scene {
    spec: ClipSpec,
    background: Texture,
    camera_velocity: (f32, f32),
    sprites: Vec<Sprite>,
}

impl Scene {
    pub fn random(spec: &ClipSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = spec.max_speed;
        let velocity = |rng: &mut ChaCha8Rng, scale: f32| {
            if v <= 0.0 {
                (0.0, 0.0)
            } else {
                (rng.random_range(-v..v) * scale, rng.random_range(-v..v) * scale)
            }
        };
        let background = Texture::random(&mut rng, 6);
        let camera_velocity = velocity(&mut rng, 0.5);
        let sprites = (0..spec.sprites)
            .map(|_| {
                let radius = rng.random_range(3.0..(spec.height.min(spec.width) as f32 / 4.0).max(3.5));
                Sprite {
                    texture: Texture::random(&mut rng, 3),
                    radius,
                    square: rng.random_bool(0.5),
                    origin: (rng.random_range(0.0..spec.width as f32), rng.random_range(0.0..spec.height as f32)),
                    velocity: velocity(&mut rng, 1.0),
                    accel: velocity(&mut rng, 0.02),
                }
            })
            .collect();
        Self { spec: spec.clone(), background, camera_velocity, sprites }
    }

    /// Render the scene at (possibly fractional) frame time `t`.
    pub fn render(&self, t: f32) -> Image {
        let (cx, cy) = (self.camera_velocity.0 * t, self.camera_velocity.1 * t);
        let positions: Vec<_> = self.sprites.iter().map(|s| s.position(t)).collect();
        Image::from_fn(self.spec.height, self.spec.width, |y, x, c| {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let mut v = self.background.sample(px + cx, py + cy)[c];
            for (s, &(sx, sy)) in self.sprites.iter().zip(&positions) {
                let (dx, dy) = (px - sx, py - sy);
                let a = s.coverage(dx, dy);
                if a > 0.0 {
                    v = (1.0 - a) * v + a * s.texture.sample(dx, dy)[c];
                }
            }
            v
        })
        .expect("rendered dimensions are positive")
    }

    pub fn clip(&self) -> FrameClip {
        let frames = (0..self.spec.frames).map(|t| self.render(t as f32)).collect();
        FrameClip::new(frames, self.spec.fps).expect("spec has at least one frame")
    }
}

pub fn generate_clip(spec: &ClipSpec, seed: u64) -> Result<FrameClip> {
    if spec.height == 0 || spec.width == 0 || spec.frames == 0 {
        return Err(Error::Argument(format!("clip spec {spec:?} has an empty dimension")));
    }
    Ok(Scene::random(spec, seed).clip())
}

/// Write `clips` clips as `<dir>/clip_NNNN/frame_NNNN.png` (8-bit, like
/// consumer video). Clip `k` uses seed `seed + k`.
pub fn write_corpus(dir: &Path, spec: &ClipSpec, clips: usize, seed: u64) -> Result<()> {
    for k in 0..clips {
        let clip = generate_clip(spec, seed.wrapping_add(k as u64))?;
        io::write_frames(&dir.join(format!("clip_{k:04}")), "frame_", clip.frames(), false)?;
    }
    Ok(())
}

/// Static-scene bursts: `frames` noisy captures of one still frame each.
pub fn noisy_bursts(
    spec: &ClipSpec,
    params: &NoiseParams,
    bursts: usize,
    frames: usize,
    seed: u64,
) -> Result<Vec<FrameClip>> {
    let still = ClipSpec { max_speed: 0.0, frames: 1, ..spec.clone() };
    (0..bursts)
        .map(|b| {
            let scene = generate_clip(&still, seed.wrapping_add(b as u64))?.frames()[0].clone();
            let frames = (0..frames)
                .map(|t| add_noise(&scene, params, seed.wrapping_mul(31).wrapping_add((b * frames + t) as u64)))
                .collect::<Result<Vec<_>>>()?;
            FrameClip::new(frames, spec.fps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = ClipSpec { height: 16, width: 16, frames: 3, ..ClipSpec::default() };
        let a = generate_clip(&spec, 5).unwrap();
        let b = generate_clip(&spec, 5).unwrap();
        let c = generate_clip(&spec, 6).unwrap();
        assert_eq!(a.frames(), b.frames());
        assert_ne!(a.frames(), c.frames());
    }

    #[test]
    fn zero_speed_is_static() {
        let spec = ClipSpec { height: 12, width: 10, frames: 4, max_speed: 0.0, ..ClipSpec::default() };
        let clip = generate_clip(&spec, 1).unwrap();
        assert!(clip.frames().iter().all(|f| f == &clip.frames()[0]));
    }

    #[test]
    fn moving_scene_changes_over_time() {
        let clip = generate_clip(&ClipSpec { frames: 5, ..ClipSpec::default() }, 2).unwrap();
        assert!(clip.frames()[0].max_abs_diff(&clip.frames()[4]).unwrap() > 0.05);
    }
}
