//! Per-coordinate smoothing of keypoint streams.
//!
//! Median and Wiener filters use centered windows that shrink at the ends of
//! the stream. Kalman and EMA filters are causal.

use crate::envsim::{flatten, unflatten, KEYPOINTS};
use crate::error::{Error, Result};

use super::KeypointFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Median,
    Wiener,
    Kalman,
    Ema,
    None,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Median => "median",
            FilterKind::Wiener => "wiener",
            FilterKind::Kalman => "kalman",
            FilterKind::Ema => "ema",
            FilterKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub window: usize,
    pub alpha: f64,
    /// Process noise variance (acceleration noise per step for Kalman).
    pub q: f64,
    /// Measurement noise variance.
    pub r: f64,
}

impl FilterConfig {
    pub fn median() -> Self {
        FilterConfig {
            kind: FilterKind::Median,
            window: 5,
            ..Self::none()
        }
    }

    pub fn wiener() -> Self {
        FilterConfig {
            kind: FilterKind::Wiener,
            window: 7,
            ..Self::none()
        }
    }

    pub fn kalman() -> Self {
        FilterConfig {
            kind: FilterKind::Kalman,
            ..Self::none()
        }
    }

    pub fn ema() -> Self {
        FilterConfig {
            kind: FilterKind::Ema,
            ..Self::none()
        }
    }

    pub fn none() -> Self {
        FilterConfig {
            kind: FilterKind::None,
            window: 1,
            alpha: 0.3,
            q: 1e-4,
            r: 1e-2,
        }
    }

    /// The four smoothing baselines with their default parameters.
    pub fn baselines() -> [FilterConfig; 4] {
        [Self::median(), Self::wiener(), Self::kalman(), Self::ema()]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadParams(format!("{}: {m}", self.kind.name())));
        match self.kind {
            FilterKind::Median | FilterKind::Wiener if self.window == 0 || self.window.is_multiple_of(2) => {
                bad("window must be odd and positive")
            }
            FilterKind::Ema if !(self.alpha > 0.0 && self.alpha <= 1.0) => bad("alpha must lie in (0, 1]"),
            FilterKind::Kalman if !(self.q >= 0.0 && self.r > 0.0) => bad("need q >= 0 and r > 0"),
            _ => Ok(()),
        }
    }
}

/// Filter one scalar series.
pub fn filter_series(cfg: &FilterConfig, xs: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        FilterKind::None => xs.to_vec(),
        FilterKind::Median => median(xs, cfg.window),
        FilterKind::Wiener => wiener(xs, cfg.window),
        FilterKind::Kalman => {
            let mut k = ConstantVelocityKalman::new(cfg.q, cfg.r);
            xs.iter().map(|z| k.update(*z).0).collect()
        }
        FilterKind::Ema => {
            let mut y = xs.first().copied().unwrap_or(0.0);
            xs.iter()
                .map(|x| {
                    y = cfg.alpha * x + (1.0 - cfg.alpha) * y;
                    y
                })
                .collect()
        }
    })
}

/// Filter every coordinate of a keypoint stream independently.
pub fn apply_filter(cfg: &FilterConfig, stream: &[KeypointFrame]) -> Result<Vec<KeypointFrame>> {
    cfg.validate()?;
    if stream.is_empty() {
        return Err(Error::EmptySequence);
    }
    let flat: Vec<[f64; KEYPOINTS * 3]> = stream.iter().map(|f| flatten(&f.keypoints)).collect();
    let mut out = flat.clone();
    let mut column = vec![0.0; stream.len()];
    for c in 0..KEYPOINTS * 3 {
        for (dst, row) in column.iter_mut().zip(&flat) {
            *dst = row[c];
        }
        for (row, y) in out.iter_mut().zip(filter_series(cfg, &column)?) {
            row[c] = y;
        }
    }
    Ok(stream
        .iter()
        .zip(out)
        .map(|(f, row)| KeypointFrame {
            keypoints: unflatten(&row),
            ..f.clone()
        })
        .collect())
}

fn window_bounds(i: usize, n: usize, window: usize) -> (usize, usize) {
    let half = window / 2;
    (i.saturating_sub(half), (i + half + 1).min(n))
}

fn median(xs: &[f64], window: usize) -> Vec<f64> {
    let mut buf = Vec::with_capacity(window);
    (0..xs.len())
        .map(|i| {
            let (lo, hi) = window_bounds(i, xs.len(), window);
            buf.clear();
            buf.extend_from_slice(&xs[lo..hi]);
            buf.sort_by(f64::total_cmp);
            let m = buf.len();
            if m % 2 == 1 {
                buf[m / 2]
            } else {
                0.5 * (buf[m / 2 - 1] + buf[m / 2])
            }
        })
        .collect()
}

/// Local mean/variance shrinkage; the noise power is the mean local
/// variance over the series.
fn wiener(xs: &[f64], window: usize) -> Vec<f64> {
    let stats: Vec<(f64, f64)> = (0..xs.len())
        .map(|i| {
            let (lo, hi) = window_bounds(i, xs.len(), window);
            let w = &xs[lo..hi];
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            (mean, var)
        })
        .collect();
    let noise = stats.iter().map(|s| s.1).sum::<f64>() / stats.len().max(1) as f64;
    xs.iter()
        .zip(&stats)
        .map(|(x, (mean, var))| {
            if *var <= noise || *var == 0.0 {
                *mean
            } else {
                mean + (var - noise) / var * (x - mean)
            }
        })
        .collect()
}

/// Scalar Kalman filter for a random-walk state observed in white noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomWalkKalman {
    pub q: f64,
    pub r: f64,
    pub x: f64,
    pub p: f64,
    pub gain: f64,
    initialized: bool,
}

impl RandomWalkKalman {
    pub fn new(q: f64, r: f64) -> Self {
        RandomWalkKalman {
            q,
            r,
            x: 0.0,
            p: r,
            gain: 0.0,
            initialized: false,
        }
    }

    /// Returns the filtered estimate and the innovation.
    pub fn update(&mut self, z: f64) -> (f64, f64) {
        if !self.initialized {
            self.initialized = true;
            self.x = z;
            self.p = self.r;
            return (z, 0.0);
        }
        let prior = self.p + self.q;
        let innovation = z - self.x;
        self.gain = prior / (prior + self.r);
        self.x += self.gain * innovation;
        self.p = (1.0 - self.gain) * prior;
        (self.x, innovation)
    }

    /// Steady-state gain from the scalar Riccati equation.
    pub fn steady_state_gain(q: f64, r: f64) -> f64 {
        let prior = (q + (q * q + 4.0 * q * r).sqrt()) / 2.0;
        prior / (prior + r)
    }
}

/// Position/velocity Kalman filter with piecewise-constant white
/// acceleration of variance `q` per step and measurement variance `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantVelocityKalman {
    pub q: f64,
    pub r: f64,
    /// State: position, velocity.
    pub x: [f64; 2],
    pub p: [[f64; 2]; 2],
    pub gain: [f64; 2],
    /// Innovation variance of the last update.
    pub s: f64,
    initialized: bool,
}

impl ConstantVelocityKalman {
    pub fn new(q: f64, r: f64) -> Self {
        ConstantVelocityKalman {
            q,
            r,
            x: [0.0; 2],
            p: [[r, 0.0], [0.0, r]],
            gain: [0.0; 2],
            s: r,
            initialized: false,
        }
    }

    /// Returns the filtered position and the innovation.
    pub fn update(&mut self, z: f64) -> (f64, f64) {
        if !self.initialized {
            self.initialized = true;
            self.x = [z, 0.0];
            return (z, 0.0);
        }
        let [[p00, p01], [p10, p11]] = self.p;
        let q = self.q;
        // predict with F = [[1, 1], [0, 1]], Q = q [[1/4, 1/2], [1/2, 1]]
        let x0 = self.x[0] + self.x[1];
        let x1 = self.x[1];
        let a00 = p00 + p01 + p10 + p11 + q / 4.0;
        let a01 = p01 + p11 + q / 2.0;
        let a10 = p10 + p11 + q / 2.0;
        let a11 = p11 + q;
        let s = a00 + self.r;
        let k0 = a00 / s;
        let k1 = a10 / s;
        let innovation = z - x0;
        self.x = [x0 + k0 * innovation, x1 + k1 * innovation];
        self.p = [[(1.0 - k0) * a00, (1.0 - k0) * a01], [a10 - k1 * a00, a11 - k1 * a01]];
        self.gain = [k0, k1];
        self.s = s;
        (self.x[0], innovation)
    }

    /// Steady-state position and velocity gains in closed form (the
    /// alpha-beta filter for this noise model).
    pub fn steady_state_gain(q: f64, r: f64) -> [f64; 2] {
        let lambda = q.sqrt() / r.sqrt();
        let root = (4.0 + lambda - (8.0 * lambda + lambda * lambda).sqrt()) / 4.0;
        let alpha = 1.0 - root * root;
        let beta = 2.0 * (2.0 - alpha) - 4.0 * (1.0 - alpha).sqrt();
        [alpha, beta]
    }
}
