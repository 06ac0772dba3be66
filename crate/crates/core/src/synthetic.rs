//! Ground-truth landmark trajectories standing in for an image encoder.
//!
//! Three motion families: constant-velocity lines, Lissajous curves and
//! pendulum bobs integrated with RK4. Each landmark also carries a covariance
//! that is either fixed, breathes (sinusoidal scale) or rotates (precessing
//! principal axis). Output is seed-deterministic.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{render_heatmap, Heatmap};
use crate::rng;
use crate::state::{cholesky_2x2, Mat2, PoseState, StateSequence};

/// Means are clamped to this box so rendered mass stays in frame.
pub const MU_LIMIT: f64 = 0.9;
/// Linear trajectories are placed to stay inside this box before noise.
const LINEAR_BOX: f64 = 0.8;

/// Covariance eigenvalues at rest are drawn from this range.
pub const BASE_EIGEN_RANGE: (f64, f64) = (1e-3, 0.02);
/// Every generated covariance keeps its eigenvalues inside this range.
pub const EIGEN_BOUNDS: (f64, f64) = (1e-4, 0.05);

const BREATHING_AMPLITUDE: f64 = 0.5;
const BREATHING_PERIOD: f64 = 40.0;
const ROTATION_PERIOD: f64 = 60.0;

/// Pendulum integration step and `g/ℓ`, both dimensionless.
pub const PENDULUM_DT: f64 = 0.05;
pub const PENDULUM_G_OVER_L: f64 = 1.0;

pub const DEFAULT_LINEAR_SPEED: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Linear,
    Lissajous,
    Pendulum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    Fixed,
    Breathing,
    Rotating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub landmarks: usize,
    pub frames: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub covariance: CovarianceMode,
    /// Linear only: upper bound on per-frame displacement of each landmark.
    pub speed: f64,
    /// Square render size for optional heatmap frames.
    pub render: Option<usize>,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Linear,
            landmarks: 1,
            frames: 2,
            seed: 0,
            noise_sigma: 0.0,
            covariance: CovarianceMode::Fixed,
            speed: DEFAULT_LINEAR_SPEED,
            render: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub sequence: StateSequence,
    pub frames: Option<Vec<Heatmap>>,
}

/// One RK4 step of `θ̈ = −(g/ℓ) sin θ` on `(θ, θ̇)`.
pub fn pendulum_rk4_step(state: [f64; 2], dt: f64) -> [f64; 2] {
    let f = |s: [f64; 2]| [s[1], -PENDULUM_G_OVER_L * s[0].sin()];
    let add = |s: [f64; 2], k: [f64; 2], h: f64| [s[0] + h * k[0], s[1] + h * k[1]];
    let k1 = f(state);
    let k2 = f(add(state, k1, dt / 2.0));
    let k3 = f(add(state, k2, dt / 2.0));
    let k4 = f(add(state, k3, dt));
    [
        state[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        state[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// `½θ̇² + (g/ℓ)(1 − cos θ)`.
pub fn pendulum_energy(state: [f64; 2]) -> f64 {
    0.5 * state[1] * state[1] + PENDULUM_G_OVER_L * (1.0 - state[0].cos())
}

fn validate(spec: &TrajectorySpec) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidArgument(m));
    if spec.frames < 2 {
        return bad(format!("need at least 2 frames, got {}", spec.frames));
    }
    if spec.landmarks == 0 {
        return bad("need at least one landmark".into());
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return bad(format!("noise_sigma must be nonnegative, got {}", spec.noise_sigma));
    }
    if !(spec.speed >= 0.0 && spec.speed.is_finite()) {
        return bad(format!("speed must be nonnegative, got {}", spec.speed));
    }
    if spec.kind == TrajectoryKind::Linear {
        let span = spec.speed * (spec.frames - 1) as f64;
        if span > 2.0 * LINEAR_BOX {
            return bad(format!(
                "speed {} over {} frames leaves the [-{LINEAR_BOX}, {LINEAR_BOX}] box",
                spec.speed, spec.frames
            ));
        }
    }
    if spec.render == Some(0) {
        return bad("render size must be positive".into());
    }
    Ok(())
}

struct CovarianceTrack {
    eig: [f64; 2],
    angle: f64,
    phase: f64,
}

impl CovarianceTrack {
    fn sample(rng: &mut rng::Rng) -> Self {
        let (lo, hi) = BASE_EIGEN_RANGE;
        Self {
            eig: [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)],
            angle: rng.gen_range(0.0..PI),
            phase: rng.gen_range(0.0..2.0 * PI),
        }
    }

    fn at(&self, mode: CovarianceMode, t: f64) -> Mat2 {
        let (scale, angle) = match mode {
            CovarianceMode::Fixed => (1.0, self.angle),
            CovarianceMode::Breathing => {
                (1.0 + BREATHING_AMPLITUDE * (2.0 * PI * t / BREATHING_PERIOD + self.phase).sin(), self.angle)
            }
            CovarianceMode::Rotating => (1.0, self.angle + 2.0 * PI * t / ROTATION_PERIOD),
        };
        let (s, c) = angle.sin_cos();
        let (a, b) = (self.eig[0] * scale, self.eig[1] * scale);
        let off = (a - b) * c * s;
        [[a * c * c + b * s * s, off], [off, a * s * s + b * c * c]]
    }
}

fn mean_tracks(spec: &TrajectorySpec, rng: &mut rng::Rng) -> Vec<Vec<[f64; 2]>> {
    let t_max = (spec.frames - 1) as f64;
    (0..spec.landmarks)
        .map(|_| match spec.kind {
            TrajectoryKind::Linear => {
                let dir = rng.gen_range(0.0..2.0 * PI);
                let r = spec.speed * rng.gen::<f64>().sqrt();
                let v = [r * dir.cos(), r * dir.sin()];
                let mut start = [0.0; 2];
                for d in 0..2 {
                    let travel = v[d] * t_max;
                    let lo = -LINEAR_BOX - travel.min(0.0);
                    let hi = LINEAR_BOX - travel.max(0.0);
                    start[d] = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                }
                (0..spec.frames).map(|t| [start[0] + t as f64 * v[0], start[1] + t as f64 * v[1]]).collect()
            }
            TrajectoryKind::Lissajous => {
                let center = [rng.gen_range(-0.3..=0.3), rng.gen_range(-0.3..=0.3)];
                let amp = [rng.gen_range(0.2..=0.5), rng.gen_range(0.2..=0.5)];
                let omega = [rng.gen_range(0.05..=0.15), rng.gen_range(0.05..=0.15)];
                let phase = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
                (0..spec.frames)
                    .map(|t| {
                        let t = t as f64;
                        [
                            center[0] + amp[0] * (omega[0] * t + phase[0]).sin(),
                            center[1] + amp[1] * (omega[1] * t + phase[1]).sin(),
                        ]
                    })
                    .collect()
            }
            TrajectoryKind::Pendulum => {
                let pivot: [f64; 2] = [rng.gen_range(-0.3..=0.3), rng.gen_range(-0.6..=-0.2)];
                let length: f64 = rng.gen_range(0.3..=0.5);
                let mut s: [f64; 2] = [rng.gen_range(-1.0..=1.0), 0.0];
                let mut out = Vec::with_capacity(spec.frames);
                for _ in 0..spec.frames {
                    out.push([pivot[0] + length * s[0].sin(), pivot[1] + length * s[0].cos()]);
                    s = pendulum_rk4_step(s, PENDULUM_DT);
                }
                out
            }
        })
        .collect()
}

/// Generates one trajectory (and its heatmaps when `spec.render` is set).
pub fn generate(spec: &TrajectorySpec) -> Result<Generated> {
    validate(spec)?;
    let label = match spec.kind {
        TrajectoryKind::Linear => "synth/linear",
        TrajectoryKind::Lissajous => "synth/lissajous",
        TrajectoryKind::Pendulum => "synth/pendulum",
    };
    let mut rng = rng::stream(spec.seed, label);
    let means = mean_tracks(spec, &mut rng);
    let covs: Vec<CovarianceTrack> = (0..spec.landmarks).map(|_| CovarianceTrack::sample(&mut rng)).collect();
    let mut noise_rng = rng::stream(spec.seed, "synth/noise");
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");

    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut params = Vec::with_capacity(spec.landmarks * 5);
        for (track, cov) in means.iter().zip(&covs) {
            let mut mu = track[t];
            if spec.noise_sigma > 0.0 {
                mu[0] += noise.sample(&mut noise_rng);
                mu[1] += noise.sample(&mut noise_rng);
            }
            let mu = mu.map(|v| v.clamp(-MU_LIMIT, MU_LIMIT));
            let l = cholesky_2x2(&cov.at(spec.covariance, t as f64))?;
            params.extend_from_slice(&[mu[0], mu[1], l.l11, l.l21, l.l22]);
        }
        frames.push(PoseState::from_vec(params)?);
    }
    let sequence = StateSequence::new(frames)?;
    let frames = match spec.render {
        Some(size) => {
            Some(sequence.frames().iter().map(|s| render_heatmap(s, size, size)).collect::<Result<Vec<_>>>()?)
        }
        None => None,
    };
    Ok(Generated { sequence, frames })
}

/// `count` sequences whose seeds derive from `spec.seed`.
pub fn generate_dataset(spec: &TrajectorySpec, count: usize) -> Result<Vec<StateSequence>> {
    (0..count)
        .map(|i| {
            let child = TrajectorySpec {
                seed: rng::child_seed(spec.seed, "synth/dataset", i as u64),
                render: None,
                ..spec.clone()
            };
            generate(&child).map(|g| g.sequence)
        })
        .collect()
}
