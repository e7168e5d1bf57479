//! Moving-digit sequence simulation.

use rand::Rng;

use super::sprites::{Patch, Sprite};
use super::{Label, LabeledSequence};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frame::{Frame, Sequence};
use crate::rng::{derive, seeded};

/// Geometry and motion of generated sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub digits: usize,
    /// Speed is drawn uniformly from `[min, max]` pixels per frame.
    pub speed: (f64, f64),
    /// Sprites are box-filtered down by this factor before drawing.
    pub sprite_scale: usize,
}

impl Default for MovingConfig {
    fn default() -> Self {
        Self { frames: 20, height: 64, width: 64, digits: 2, speed: (2.0, 4.0), sprite_scale: 1 }
    }
}

impl MovingConfig {
    /// 32x32 single-digit sequences with half-size sprites.
    pub fn desk() -> Self {
        Self { height: 32, width: 32, digits: 1, sprite_scale: 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::InvalidArgument(format!("sequences need >= 2 frames, got {}", self.frames)));
        }
        if self.digits == 0 {
            return Err(Error::InvalidArgument("at least one digit per sequence".into()));
        }
        let (lo, hi) = self.speed;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("speed range [{lo}, {hi}] is invalid")));
        }
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize || self.frames > u16::MAX as usize {
            return Err(Error::InvalidArgument("dimensions exceed 65535".into()));
        }
        Ok(())
    }
}

/// Straight-line motion with elastic reflection at the frame borders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trajectory {
    /// Top-left corner of the sprite, `(row, col)`.
    pub position: (f64, f64),
    /// Displacement per frame, `(d_row, d_col)`.
    pub velocity: (f64, f64),
    /// Largest admissible top-left coordinate, `(row, col)`.
    pub limit: (f64, f64),
}

fn reflect(mut x: f64, mut v: f64, limit: f64) -> (f64, f64) {
    if limit <= 0.0 {
        return (0.0, v);
    }
    loop {
        if x < 0.0 {
            x = -x;
            v = -v;
        } else if x > limit {
            x = 2.0 * limit - x;
            v = -v;
        } else {
            return (x, v);
        }
    }
}

impl Trajectory {
    pub fn sample<R: Rng + ?Sized>(limit: (f64, f64), speed: (f64, f64), rng: &mut R) -> Self {
        let row = rng.gen::<f64>() * limit.0;
        let col = rng.gen::<f64>() * limit.1;
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let s = if speed.1 > speed.0 { rng.gen_range(speed.0..=speed.1) } else { speed.0 };
        Self { position: (row, col), velocity: (s * angle.sin(), s * angle.cos()), limit }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.0.hypot(self.velocity.1)
    }

    /// Advances one frame.
    pub fn step(&mut self) {
        let (r, vr) = reflect(self.position.0 + self.velocity.0, self.velocity.0, self.limit.0);
        let (c, vc) = reflect(self.position.1 + self.velocity.1, self.velocity.1, self.limit.1);
        self.position = (r, c);
        self.velocity = (vr, vc);
    }

    /// Integer pixel position of the top-left corner.
    pub fn pixel(&self) -> (usize, usize) {
        (self.position.0.round() as usize, self.position.1.round() as usize)
    }
}

fn draw_max(frame: &mut Frame, patch: &Patch, at: (usize, usize)) {
    for r in 0..patch.side {
        for c in 0..patch.side {
            let v = patch.pixels[r * patch.side + c];
            let (fr, fc) = (at.0 + r, at.1 + c);
            if v > frame.get(0, fr, fc) {
                frame.set(0, fr, fc, v);
            }
        }
    }
}

/// Renders `sprites` moving independently; overlaps composite by per-pixel maximum.
pub fn generate_sequence<R: Rng + ?Sized>(
    sprites: &[Sprite],
    config: &MovingConfig,
    rng: &mut R,
) -> Result<LabeledSequence> {
    config.validate()?;
    if sprites.is_empty() {
        return Err(Error::InvalidArgument("generate_sequence needs at least one sprite".into()));
    }
    let patches = sprites.iter().map(|s| s.patch(config.sprite_scale)).collect::<Result<Vec<_>>>()?;
    let side = patches[0].side;
    if side > config.height || side > config.width {
        return Err(Error::InvalidArgument(format!(
            "sprite of side {side} does not fit a {}x{} frame",
            config.height, config.width
        )));
    }
    let limit = ((config.height - side) as f64, (config.width - side) as f64);
    let mut paths: Vec<Trajectory> = patches.iter().map(|_| Trajectory::sample(limit, config.speed, rng)).collect();
    let mut frames = Vec::with_capacity(config.frames);
    for _ in 0..config.frames {
        let mut frame = Frame::blank(config.height, config.width, 1);
        for (patch, path) in patches.iter().zip(&paths) {
            draw_max(&mut frame, patch, path.pixel());
        }
        frames.push(frame);
        paths.iter_mut().for_each(Trajectory::step);
    }
    Ok(LabeledSequence { sequence: Sequence::new(frames)?, label: Label::Normal, corruption: None })
}

pub(crate) fn pick_sprites<R: Rng + ?Sized>(sprites: &[Sprite], n: usize, rng: &mut R) -> Vec<Sprite> {
    (0..n).map(|_| sprites[rng.gen_range(0..sprites.len())].clone()).collect()
}

const STREAM_NORMAL: u64 = 0x4e4f524d;

/// `count` anomaly-free sequences; sequence `i` depends only on `(seed, i)`.
pub fn generate_normal_set(
    sprites: &[Sprite],
    config: &MovingConfig,
    count: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<LabeledSequence>> {
    config.validate()?;
    if sprites.is_empty() && count > 0 {
        return Err(Error::InvalidArgument("no sprites to draw from".into()));
    }
    exec.map_range(count, |i| {
        let mut rng = seeded(derive(seed, STREAM_NORMAL, i as u64));
        let chosen = pick_sprites(sprites, config.digits, &mut rng);
        generate_sequence(&chosen, config, &mut rng)
    })
    .into_iter()
    .collect()
}
