//! Spatial proximal step: histogram matching to an illumination profile,
//! quality-ranked gamma/linear retargeting and non-local means denoising.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::Gain;
use crate::error::{Error, Result};
use crate::frame::{box_filter, Frame};
use crate::quality::QualityScorer;
use crate::solver::SpatialPrior;
use crate::synth;

/// Number of percentile knots; knot `k` sits at percentile `100 k / 32`, so
/// the first and last knots are the minimum and maximum.
pub const PROFILE_POINTS: usize = 33;

const BUNDLED_PROFILE: &str = include_str!("../assets/default.profile.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlluminationProfile {
    #[serde(rename = "percentiles")]
    pub luminance_percentiles: Vec<f64>,
    #[serde(rename = "mean")]
    pub target_mean: f64,
    #[serde(rename = "std")]
    pub target_std: f64,
    #[serde(rename = "count")]
    pub source_count: usize,
}

impl IlluminationProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::param("profile", m.to_string()));
        let q = &self.luminance_percentiles;
        if q.len() != PROFILE_POINTS {
            return bad("percentile vector needs 33 entries");
        }
        if q.iter().any(|v| !(0.0..=1.0).contains(v)) || q.windows(2).any(|w| w[1] < w[0]) {
            return bad("percentiles must be nondecreasing within [0, 1]");
        }
        if self.source_count == 0 {
            return bad("count must be >= 1");
        }
        if !(self.target_mean.is_finite() && self.target_std >= 0.0) {
            return bad("mean and std must be finite");
        }
        Ok(())
    }

    /// The profile shipped with the crate, built from
    /// [`synth::pristine_corpus`].
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_PROFILE, Path::new("<bundled>")).expect("bundled profile is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes") + "\n"
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        p.validate().map_err(|e| e.context(origin.display().to_string()))?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn percentile_knots(sorted: &[f64]) -> Vec<f64> {
    let last = (sorted.len() - 1) as f64;
    (0..PROFILE_POINTS)
        .map(|k| {
            let pos = last * k as f64 / (PROFILE_POINTS - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect()
}

fn sorted_luma(frame: &Frame) -> Vec<f64> {
    let mut l = frame.luma().into_data();
    l.sort_by(f64::total_cmp);
    l
}

pub fn build_profile(corpus: &[Frame]) -> Result<IlluminationProfile> {
    if corpus.is_empty() {
        return Err(Error::param("corpus", "empty"));
    }
    let mut pooled = Vec::new();
    for f in corpus {
        if f.pixel_count() == 0 {
            return Err(Error::param("corpus", "empty frame"));
        }
        pooled.extend(f.luma().into_data());
    }
    pooled.sort_by(f64::total_cmp);
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let var = pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let knots = percentile_knots(&pooled).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(IlluminationProfile {
        luminance_percentiles: knots,
        target_mean: mean,
        target_std: var.sqrt(),
        source_count: corpus.len(),
    })
}

/// Residual form of a spatial step: `enhanced = input + residual`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntraResidual {
    pub residual: Frame,
    pub enhanced: Frame,
}

impl IntraResidual {
    fn from_enhanced(input: &Frame, enhanced: Frame) -> Result<Self> {
        let residual = enhanced.zip_map(input, |e, x| e - x)?;
        Ok(Self { residual, enhanced })
    }
}

/// Monotone piecewise-linear map through `(src[k], dst[k])`. Repeated source
/// knots collapse to one knot carrying the mean of their targets.
struct Remap {
    src: Vec<f64>,
    dst: Vec<f64>,
}

impl Remap {
    fn new(src: &[f64], dst: &[f64]) -> Self {
        let (mut s, mut d) = (Vec::new(), Vec::new());
        let mut i = 0;
        while i < src.len() {
            let mut j = i;
            while j + 1 < src.len() && src[j + 1] == src[i] {
                j += 1;
            }
            s.push(src[i]);
            d.push(dst[i..=j].iter().sum::<f64>() / (j - i + 1) as f64);
            i = j + 1;
        }
        Self { src: s, dst: d }
    }

    fn eval(&self, l: f64) -> f64 {
        let last = self.src.len() - 1;
        if l <= self.src[0] {
            return self.dst[0];
        }
        if l >= self.src[last] {
            return self.dst[last];
        }
        let k = self.src.partition_point(|&s| s <= l) - 1;
        let t = (l - self.src[k]) / (self.src[k + 1] - self.src[k]);
        self.dst[k] + t * (self.dst[k + 1] - self.dst[k])
    }
}

/// Sends the frame's luminance percentiles onto the profile's, scaling color
/// channels by the per-pixel luminance ratio, then blends with the input by
/// `strength`.
pub fn apply_profile(x: &Frame, prof: &IlluminationProfile, strength: f64) -> Result<IntraResidual> {
    prof.validate()?;
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::param("strength", "must lie in [0, 1]"));
    }
    if strength == 0.0 {
        return IntraResidual::from_enhanced(x, x.clone());
    }
    let luma = x.luma();
    let sorted = sorted_luma(x);
    let src = percentile_knots(&sorted);
    let mapped = if src[PROFILE_POINTS - 1] - src[0] < 1e-12 {
        let m = luma.mean();
        if m > 0.0 {
            let g = prof.target_mean / m;
            x.map(|v| (v * g).clamp(0.0, 1.0))
        } else {
            Frame::filled(x.width(), x.height(), x.channels(), prof.target_mean.clamp(0.0, 1.0))
        }
    } else {
        let remap = Remap::new(&src, &prof.luminance_percentiles);
        let n = x.pixel_count();
        let target: Vec<f64> = luma.data().iter().map(|&l| remap.eval(l)).collect();
        let data = (0..x.data().len())
            .map(|i| {
                let (l, t) = (luma.data()[i % n], target[i % n]);
                let v = if x.channels() == 1 {
                    t
                } else if l > 1e-6 {
                    x.data()[i] * t / l
                } else {
                    t
                };
                v.clamp(0.0, 1.0)
            })
            .collect();
        Frame::from_raw(x.width(), x.height(), x.channels(), data)
    };
    let enhanced = if strength == 1.0 { mapped } else { x.zip_map(&mapped, |a, b| a + strength * (b - a))? };
    IntraResidual::from_enhanced(x, enhanced)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl CandidateParams {
    pub const IDENTITY: Self = Self { alpha: 1.0, beta: 1.0, gamma: 1.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be > 0"));
            }
        }
        Ok(())
    }
}

/// `beta * (alpha * x)^gamma` per sample, clamped to `[0, 1]`. Inputs are
/// clamped to `[0, 1]` first; the identity triple returns the input as is.
pub fn gamma_candidate(x: &Frame, p: &CandidateParams) -> Result<Frame> {
    p.validate()?;
    if *p == CandidateParams::IDENTITY {
        return Ok(x.clone());
    }
    Ok(x.map(|v| (p.beta * (p.alpha * v.clamp(0.0, 1.0)).powf(p.gamma)).clamp(0.0, 1.0)))
}

/// Identity triple first, then `n - 1` triples with each entry drawn from
/// `U(lo, hi)`.
pub fn sample_candidates(n: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<CandidateParams>> {
    if n == 0 {
        return Err(Error::param("n", "need at least one candidate"));
    }
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::param("candidate range", format!("invalid range [{lo}, {hi}]")));
    }
    let mut rng = synth::rng(seed);
    let mut draw = || if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut out = vec![CandidateParams::IDENTITY];
    for _ in 1..n {
        let (alpha, beta, gamma) = (draw(), draw(), draw());
        out.push(CandidateParams { alpha, beta, gamma });
    }
    Ok(out)
}

/// Index and value of the smallest score, lowest index on ties.
pub fn argmin_score(scores: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    best
}

pub fn select_by_feedback(candidates: &[Frame], scorer: &dyn QualityScorer) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::param("candidates", "empty list"));
    }
    let scores: Vec<f64> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let s = scorer.score(c).map_err(|e| e.context(format!("candidate {i}")))?;
            if s.is_nan() {
                return Err(Error::Numerical(format!("candidate {i} scored NaN")));
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(argmin_score(&scores).expect("non-empty"))
}

const SEARCH_RADIUS: isize = 3;
const PATCH_RADIUS: isize = 1;

/// Non-local means with a 7x7 search window and 3x3 patches. Patch distance is
/// the mean squared difference over the patch and all channels; weights are
/// `exp(-d / h^2)`. Borders replicate.
pub fn denoise_prox(u_tilde: &Frame, h: f64) -> Result<Frame> {
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::param("h", "must be >= 0"));
    }
    if h == 0.0 {
        return Ok(u_tilde.clone());
    }
    let (w, ht, ch) = (u_tilde.width(), u_tilde.height(), u_tilde.channels());
    let pad = (SEARCH_RADIUS + PATCH_RADIUS) as usize;
    let (pw, ph) = (w + 2 * pad, ht + 2 * pad);
    let padded: Vec<Vec<f64>> = (0..ch)
        .map(|c| {
            let plane = u_tilde.plane(c);
            let mut out = vec![0.0; pw * ph];
            for y in 0..ph {
                let sy = (y as isize - pad as isize).clamp(0, ht as isize - 1) as usize;
                for x in 0..pw {
                    let sx = (x as isize - pad as isize).clamp(0, w as isize - 1) as usize;
                    out[y * pw + x] = plane[sy * w + sx];
                }
            }
            out
        })
        .collect();
    let inv_h2 = 1.0 / (h * h);
    let norm = 1.0 / (((2 * PATCH_RADIUS + 1).pow(2) as usize * ch) as f64);
    let rows: Vec<Vec<f64>> = (0..ht)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; w * ch];
            let mut acc = vec![0.0; ch];
            for x in 0..w {
                let (cx, cy) = ((x + pad) as isize, (y + pad) as isize);
                acc.iter_mut().for_each(|a| *a = 0.0);
                let mut wsum = 0.0;
                for dy in -SEARCH_RADIUS..=SEARCH_RADIUS {
                    for dx in -SEARCH_RADIUS..=SEARCH_RADIUS {
                        let (qx, qy) = (cx + dx, cy + dy);
                        let mut d = 0.0;
                        for p in &padded {
                            for oy in -PATCH_RADIUS..=PATCH_RADIUS {
                                let a = ((cy + oy) as usize) * pw;
                                let b = ((qy + oy) as usize) * pw;
                                for ox in -PATCH_RADIUS..=PATCH_RADIUS {
                                    let diff = p[a + (cx + ox) as usize] - p[b + (qx + ox) as usize];
                                    d += diff * diff;
                                }
                            }
                        }
                        let wt = (-d * norm * inv_h2).exp();
                        wsum += wt;
                        let q = qy as usize * pw + qx as usize;
                        for (a, p) in acc.iter_mut().zip(&padded) {
                            *a += wt * p[q];
                        }
                    }
                }
                for c in 0..ch {
                    row[c * w + x] = acc[c] / wsum;
                }
            }
            row
        })
        .collect();
    let mut data = vec![0.0; w * ht * ch];
    for (y, row) in rows.iter().enumerate() {
        for c in 0..ch {
            data[c * w * ht + y * w..c * w * ht + (y + 1) * w].copy_from_slice(&row[c * w..(c + 1) * w]);
        }
    }
    Ok(Frame::from_raw(w, ht, ch, data))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntraConfig {
    /// Blend between the input (0) and the profile-matched frame (1).
    pub strength: f64,
    /// Candidate count, identity included.
    pub n: usize,
    /// Non-local means filtering parameter.
    pub h: f64,
    pub range_lo: f64,
    pub range_hi: f64,
}

impl Default for IntraConfig {
    fn default() -> Self {
        Self { strength: 1.0, n: 8, h: DEFAULT_H, range_lo: 1.0, range_hi: 1.1 }
    }
}

pub const DEFAULT_H: f64 = 0.08;

impl IntraConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |k: &str, m: &str| Err(Error::ConfigRange { key: k.into(), message: m.into() });
        if !(0.0..=1.0).contains(&self.strength) {
            return range("intra.strength", "must lie in [0, 1]");
        }
        if self.n == 0 {
            return range("intra.n", "must be >= 1");
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return range("intra.h", "must be >= 0");
        }
        if !(self.range_lo > 0.0 && self.range_hi >= self.range_lo && self.range_hi.is_finite()) {
            return range("intra.range_lo", "need 0 < range_lo <= range_hi");
        }
        Ok(())
    }
}

/// Full spatial step on `u_tilde`: profile matching, one relaxation step of
/// size `rho` toward the best-scoring gamma candidate, then denoising.
pub fn intra_prox(
    u_tilde: &Frame,
    prof: &IlluminationProfile,
    scorer: &dyn QualityScorer,
    cfg: &IntraConfig,
    rho: f64,
    seed: u64,
) -> Result<IntraResidual> {
    cfg.validate()?;
    let cands = sample_candidates(cfg.n, cfg.range_lo, cfg.range_hi, seed)?;
    relax_and_denoise(u_tilde, prof, scorer, cfg, rho, &cands)
}

fn relax_and_denoise(
    u_tilde: &Frame,
    prof: &IlluminationProfile,
    scorer: &dyn QualityScorer,
    cfg: &IntraConfig,
    rho: f64,
    cands: &[CandidateParams],
) -> Result<IntraResidual> {
    let mut e = apply_profile(u_tilde, prof, cfg.strength)?.enhanced;
    if cands.len() > 1 {
        let frames: Vec<Frame> = cands.iter().map(|p| gamma_candidate(&e, p)).collect::<Result<_>>()?;
        let (idx, _) = select_by_feedback(&frames, scorer)?;
        if idx != 0 {
            e = e.zip_map(&frames[idx], |v, m| v - rho * (v - m))?;
        }
    }
    let out = denoise_prox(&e, cfg.h)?;
    IntraResidual::from_enhanced(u_tilde, out)
}

/// Smoothed ratio of observed to profile-matched luminance, used as the data
/// term gain when it is not known.
pub fn estimate_gain(y: &Frame, prof: &IlluminationProfile) -> Result<Gain> {
    let matched = apply_profile(y, prof, 1.0)?.enhanced;
    let (w, h) = (y.width(), y.height());
    let num = box_filter(y.luma().data(), w, h, 7);
    let den = box_filter(matched.luma().data(), w, h, 7);
    let a = num.iter().zip(&den).map(|(n, d)| (n / d.max(1e-3)).clamp(1e-3, 1.0)).collect();
    Ok(Gain::Map(Frame::from_plane(w, h, a)))
}

/// [`intra_prox`] as a solver plug-in with its candidate list drawn once.
pub struct IntraProx<'a> {
    pub profile: &'a IlluminationProfile,
    pub scorer: &'a dyn QualityScorer,
    pub cfg: IntraConfig,
    pub rho: f64,
    candidates: Vec<CandidateParams>,
}

impl<'a> IntraProx<'a> {
    pub fn new(
        profile: &'a IlluminationProfile,
        scorer: &'a dyn QualityScorer,
        cfg: IntraConfig,
        rho: f64,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        profile.validate()?;
        let candidates = sample_candidates(cfg.n, cfg.range_lo, cfg.range_hi, seed)?;
        Ok(Self { profile, scorer, cfg, rho, candidates })
    }

    pub fn candidates(&self) -> &[CandidateParams] {
        &self.candidates
    }
}

impl SpatialPrior for IntraProx<'_> {
    fn prox(&self, target: &Frame) -> Result<Frame> {
        Ok(relax_and_denoise(target, self.profile, self.scorer, &self.cfg, self.rho, &self.candidates)?.enhanced)
    }
}
