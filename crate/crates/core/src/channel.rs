//! Synthetic clustered-multipath CSI for a uniform planar array.
//!
//! Each draw places one angular cluster around a random direction and sums
//! `P` paths, each with a complex Gaussian gain, a small angular offset and a
//! delay that rotates its phase across subcarriers:
//!
//! `h_n = g · Σ_p α_p · a(θ_p, φ_p) · exp(−j2π f_n τ_p)`
//!
//! The per-user amplitude `g` is drawn uniformly in dB so that the resulting
//! SNRs (and thus CQI indices) spread over the table.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{purpose, substream, Rng};
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Downlink CSI, `N_t` antennas × `N_c` subcarriers, stored antenna-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    n_t: usize,
    n_c: usize,
    data: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn new(n_t: usize, n_c: usize, data: Vec<Complex64>) -> Result<Self> {
        if n_t == 0 || n_c == 0 || data.len() != n_t * n_c {
            return Err(Error::Dimension(format!(
                "channel matrix {n_t}x{n_c} needs {} entries, got {}",
                n_t * n_c,
                data.len()
            )));
        }
        Ok(ChannelMatrix { n_t, n_c, data })
    }

    pub fn zeros(n_t: usize, n_c: usize) -> Self {
        ChannelMatrix {
            n_t,
            n_c,
            data: vec![Complex64::new(0.0, 0.0); n_t * n_c],
        }
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_t, self.n_c)
    }

    /// Entries in antenna-major order (`[antenna * n_c + subcarrier]`).
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, antenna: usize, subcarrier: usize) -> Complex64 {
        self.data[antenna * self.n_c + subcarrier]
    }

    pub fn set(&mut self, antenna: usize, subcarrier: usize, v: Complex64) {
        self.data[antenna * self.n_c + subcarrier] = v;
    }

    /// The channel vector `h_n` of subcarrier `n`.
    pub fn column(&self, n: usize) -> Vec<Complex64> {
        (0..self.n_t).map(|a| self.get(a, n)).collect()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        ChannelMatrix {
            n_t: self.n_t,
            n_c: self.n_c,
            data: self.data.iter().map(|z| z * c).collect(),
        }
    }

    /// `H / ‖H‖_F`.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.frobenius_sq().sqrt();
        (n > 0.0).then(|| self.scaled(1.0 / n))
    }

    /// Rounds every component to `f32`, matching the on-disk precision.
    pub fn quantize_f32(&mut self) {
        for z in &mut self.data {
            *z = Complex64::new(z.re as f32 as f64, z.im as f32 as f64);
        }
    }

    /// Realified features, antenna-major with `(re, im)` pairs.
    pub fn to_real_vec(&self) -> Vec<f64> {
        self.data.iter().flat_map(|z| [z.re, z.im]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_t: usize,
    /// Vertical array elements.
    pub n_v: usize,
    /// Horizontal array elements.
    pub n_h: usize,
    pub n_c: usize,
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    /// Subcarriers per resource block; one is sampled per block.
    pub subcarriers_per_rb: usize,
    pub paths_min: usize,
    pub paths_max: usize,
    /// Cluster centre azimuth drawn from `[-range, range]` degrees.
    pub azimuth_range_deg: f64,
    /// Cluster centre elevation drawn from `[-range, range]` degrees.
    pub elevation_range_deg: f64,
    /// Per-path angular offset around the cluster centre (full width, degrees).
    pub angle_spread_deg: f64,
    /// Path delays are uniform in `[0, delay_spread_s]`.
    pub delay_spread_s: f64,
    /// Path power `∝ exp(−decay · τ / delay_spread)`.
    pub power_decay: f64,
    pub gain_db_min: f64,
    pub gain_db_max: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_t: 32,
            n_v: 4,
            n_h: 8,
            n_c: 52,
            carrier_hz: 3.5e9,
            subcarrier_spacing_hz: 30e3,
            subcarriers_per_rb: 12,
            paths_min: 1,
            paths_max: 6,
            azimuth_range_deg: 60.0,
            elevation_range_deg: 20.0,
            angle_spread_deg: 10.0,
            delay_spread_s: 300e-9,
            power_decay: 3.0,
            gain_db_min: -140.0,
            gain_db_max: -110.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_v * self.n_h != self.n_t {
            return bad(format!(
                "scenario: n_v·n_h = {}·{} must equal n_t = {}",
                self.n_v, self.n_h, self.n_t
            ));
        }
        if self.n_t == 0 || self.n_c == 0 {
            return bad("scenario: n_t and n_c must be positive".into());
        }
        if self.n_t > u16::MAX as usize || self.n_c > u16::MAX as usize {
            return bad("scenario: n_t and n_c must fit in 16 bits".into());
        }
        if self.paths_max == 0 || self.paths_min > self.paths_max {
            return bad(format!(
                "scenario: path count range {}..={} is empty or pathless",
                self.paths_min, self.paths_max
            ));
        }
        if !(self.gain_db_min.is_finite() && self.gain_db_max.is_finite())
            || self.gain_db_min > self.gain_db_max
        {
            return bad("scenario: gain range must be finite and ordered".into());
        }
        let nonneg = [
            self.delay_spread_s,
            self.angle_spread_deg,
            self.azimuth_range_deg,
            self.elevation_range_deg,
            self.power_decay,
            self.subcarrier_spacing_hz,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("scenario: spreads, ranges and spacing must be finite and ≥ 0".into());
        }
        Ok(())
    }

    /// Baseband offset of the `n`-th sampled subcarrier.
    pub fn subcarrier_offset_hz(&self, n: usize) -> f64 {
        n as f64 * self.subcarriers_per_rb as f64 * self.subcarrier_spacing_hz
    }
}

/// Half-wavelength UPA response: vertical ULA ⊗ horizontal ULA.
///
/// `azimuth` and `elevation` in radians; antenna index is `v * n_h + h`.
pub fn steering_vector(n_v: usize, n_h: usize, azimuth: f64, elevation: f64) -> Vec<Complex64> {
    let pv = PI * elevation.sin();
    let ph = PI * elevation.cos() * azimuth.sin();
    let mut a = Vec::with_capacity(n_v * n_h);
    for v in 0..n_v {
        for h in 0..n_h {
            a.push(Complex64::from_polar(1.0, pv * v as f64 + ph * h as f64));
        }
    }
    a
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    pub azimuth: f64,
    pub elevation: f64,
    pub delay_s: f64,
}

/// Assembles `H` from explicit paths and a large-scale amplitude.
pub fn channel_from_paths(cfg: &ScenarioConfig, paths: &[Path], amplitude: f64) -> ChannelMatrix {
    let mut h = ChannelMatrix::zeros(cfg.n_t, cfg.n_c);
    for p in paths {
        let a = steering_vector(cfg.n_v, cfg.n_h, p.azimuth, p.elevation);
        for n in 0..cfg.n_c {
            let rot = Complex64::from_polar(1.0, -2.0 * PI * cfg.subcarrier_offset_hz(n) * p.delay_s);
            let coef = p.gain * rot * amplitude;
            for (i, ai) in a.iter().enumerate() {
                let cur = h.get(i, n);
                h.set(i, n, cur + coef * ai);
            }
        }
    }
    h
}

fn draw_paths(cfg: &ScenarioConfig, rng: &mut Rng) -> Vec<Path> {
    let count = rng.random_range(cfg.paths_min..=cfg.paths_max);
    let deg = PI / 180.0;
    let uniform_sym = |rng: &mut Rng, half: f64| {
        if half > 0.0 {
            rng.random_range(-half..=half)
        } else {
            0.0
        }
    };
    let az0 = uniform_sym(rng, cfg.azimuth_range_deg) * deg;
    let el0 = uniform_sym(rng, cfg.elevation_range_deg) * deg;
    let mut paths = Vec::with_capacity(count);
    let mut total_power = 0.0;
    for _ in 0..count {
        let delay_s = if cfg.delay_spread_s > 0.0 {
            rng.random_range(0.0..=cfg.delay_spread_s)
        } else {
            0.0
        };
        let power = if cfg.delay_spread_s > 0.0 {
            (-cfg.power_decay * delay_s / cfg.delay_spread_s).exp()
        } else {
            1.0
        };
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let gain = Complex64::new(re, im) * (power / 2.0).sqrt();
        total_power += power;
        paths.push(Path {
            gain,
            azimuth: az0 + uniform_sym(rng, cfg.angle_spread_deg / 2.0) * deg,
            elevation: el0 + uniform_sym(rng, cfg.angle_spread_deg / 2.0) * deg,
            delay_s,
        });
    }
    // unit total mean power across the power-delay profile
    let norm = total_power.sqrt();
    for p in &mut paths {
        p.gain /= norm;
    }
    paths
}

/// Draws one channel; pathless or all-zero draws are rejected and redrawn.
pub fn generate_sample(cfg: &ScenarioConfig, rng: &mut Rng) -> ChannelMatrix {
    loop {
        let paths = draw_paths(cfg, rng);
        let gain_db = if cfg.gain_db_max > cfg.gain_db_min {
            rng.random_range(cfg.gain_db_min..=cfg.gain_db_max)
        } else {
            cfg.gain_db_min
        };
        let amplitude = 10f64.powf(gain_db / 20.0);
        if paths.is_empty() {
            continue;
        }
        let h = channel_from_paths(cfg, &paths, amplitude);
        if h.frobenius_sq() > 0.0 && h.is_finite() {
            return h;
        }
    }
}

/// Draws `count` samples; sample `i` uses its own substream of `cfg.seed`.
///
/// Entries are rounded to `f32` so in-memory data equals what is written.
pub fn generate_samples(cfg: &ScenarioConfig, count: usize, exec: Execution) -> Result<Vec<ChannelMatrix>> {
    cfg.validate()?;
    Ok(exec.map(count, |i| {
        let mut rng = substream(cfg.seed, &[purpose::SAMPLE, i as u64]);
        let mut h = generate_sample(cfg, &mut rng);
        h.quantize_f32();
        h
    }))
}
