//! Low-light observation synthesis: `y = a * x + n` with signal-dependent
//! Gaussian noise of variance `k * a * x + read_sigma^2`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::frameio::Sequence;
use crate::synth;

/// Diagonal attenuation: one scalar, or a per-pixel map (single channel
/// broadcast over color, or one value per sample).
#[derive(Clone, Debug, PartialEq)]
pub enum Gain {
    Scalar(f64),
    Map(Frame),
}

impl Gain {
    /// Gain at sample index `i` of a frame with `n` pixels per plane.
    #[inline]
    pub fn at(&self, i: usize, n: usize) -> f64 {
        match self {
            Gain::Scalar(a) => *a,
            Gain::Map(m) if m.channels() == 1 => m.data()[i % n],
            Gain::Map(m) => m.data()[i],
        }
    }

    pub(crate) fn check_against(&self, frame: &Frame) -> Result<()> {
        if let Gain::Map(m) = self {
            if m.width() != frame.width() || m.height() != frame.height() {
                return Err(Error::Shape("gain map size differs from frame".into()));
            }
            if m.channels() != 1 && m.channels() != frame.channels() {
                return Err(Error::Shape("gain map channel count".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeParams {
    /// Scalar attenuation in `(0, 1]`.
    pub gain: f64,
    /// Photon-noise scale `k`.
    pub shot_scale: f64,
    pub read_sigma: f64,
    pub quantize: bool,
    pub seed: u64,
}

impl Default for DegradeParams {
    fn default() -> Self {
        Self { gain: 0.2, shot_scale: 0.005, read_sigma: 0.02, quantize: true, seed: 0 }
    }
}

impl DegradeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gain <= 1.0) {
            return Err(Error::param("degrade.gain", "must lie in (0, 1]"));
        }
        if !(self.shot_scale >= 0.0) {
            return Err(Error::param("degrade.shot_scale", "must be >= 0"));
        }
        if !(self.read_sigma >= 0.0) {
            return Err(Error::param("degrade.read_sigma", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SeedPolicy {
    /// Frame `i` uses `seed + i`, so noise is independent across frames.
    #[default]
    FrameOffset,
    /// Every frame uses the same seed (frozen noise pattern).
    Fixed,
}

pub fn degrade_frame(x: &Frame, p: &DegradeParams) -> Result<Frame> {
    degrade_frame_with_gain(x, &Gain::Scalar(p.gain), p)
}

/// As [`degrade_frame`] with an explicit (possibly per-pixel) gain; `p.gain`
/// is ignored.
pub fn degrade_frame_with_gain(x: &Frame, gain: &Gain, p: &DegradeParams) -> Result<Frame> {
    DegradeParams { gain: 1.0, ..p.clone() }.validate()?;
    gain.check_against(x)?;
    let n = x.pixel_count();
    if let Gain::Map(m) = gain {
        if m.data().iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::param("gain", "gain map values must lie in (0, 1]"));
        }
    } else {
        DegradeParams { gain: gain.at(0, n), ..p.clone() }.validate()?;
    }
    let mut rng = synth::rng(p.seed);
    let noisy = p.shot_scale > 0.0 || p.read_sigma > 0.0;
    let read_var = p.read_sigma * p.read_sigma;
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let a = gain.at(i, n);
            let mut y = a * v;
            if noisy {
                let var = (p.shot_scale * a * v).max(0.0) + read_var;
                y += var.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            let y = y.clamp(0.0, 1.0);
            if p.quantize {
                (y * 255.0).round() / 255.0
            } else {
                y
            }
        })
        .collect();
    Frame::new(x.width(), x.height(), x.channels(), data)
}

pub fn degrade_sequence(seq: &Sequence, p: &DegradeParams, policy: SeedPolicy) -> Result<Sequence> {
    p.validate()?;
    let frames = seq
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let seed = match policy {
                SeedPolicy::FrameOffset => p.seed.wrapping_add(i as u64),
                SeedPolicy::Fixed => p.seed,
            };
            degrade_frame(f, &DegradeParams { seed, ..p.clone() })
                .map_err(|e| e.context(format!("frame {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Sequence::new(frames, seq.frame_rate)
}
