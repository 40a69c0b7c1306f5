//! Full-reference (PSNR, SSIM) and temporal (warp error, MABD) metrics.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{filter_separable_valid, gaussian_kernel, Frame};
use crate::frameio::Sequence;
use crate::inter::{estimate_flow, estimate_occlusion, warp, FlowConfig};

pub const PSNR_CAP: f64 = 100.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// `10 log10(1 / mse)` for unit dynamic range, capped at 100 dB.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Single-scale SSIM on luma with an 11x11 Gaussian window (sigma 1.5),
/// averaged over the window positions fully inside the frame.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::param("frame", format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")));
    }
    let (la, lb) = (a.luma(), b.luma());
    let (x, y) = (la.data(), lb.data());
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let f = |p: &[f64]| filter_separable_valid(p, w, h, &k).0;
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let (mx, my) = (f(x), f(y));
    let (sxx, syy, sxy) = (f(&prod(x, x)), f(&prod(y, y)), f(&prod(x, y)));
    let (c1, c2) = (K1 * K1, K2 * K2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

fn require_pair(seq: &Sequence, what: &str) -> Result<()> {
    if seq.len() < 2 {
        return Err(Error::param("sequence", format!("{what} needs at least 2 frames")));
    }
    Ok(())
}

/// Mean occlusion-masked squared error between each frame and its
/// flow-aligned predecessor, averaged over pairs, times 100.
pub fn warp_error(seq: &Sequence, cfg: &FlowConfig) -> Result<f64> {
    require_pair(seq, "warp_error")?;
    let frames = seq.frames();
    let per_pair: Vec<f64> = (1..frames.len())
        .into_par_iter()
        .map(|t| {
            let (prev, cur) = (&frames[t - 1], &frames[t]);
            let fwd = estimate_flow(cur, prev, cfg)?;
            let bwd = estimate_flow(prev, cur, cfg)?;
            let (aligned, valid) = warp(prev, &fwd)?;
            let mask = valid.product(&estimate_occlusion(&fwd, &bwd)?);
            let n = cur.pixel_count();
            let (mut num, mut den) = (0.0, 0.0);
            for (i, (a, c)) in aligned.data().iter().zip(cur.data()).enumerate() {
                let m = mask.at(i, n);
                num += m * (a - c).powi(2);
                den += m;
            }
            Ok(if den > 0.0 { num / den } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    Ok(100.0 * per_pair.iter().sum::<f64>() / per_pair.len() as f64)
}

/// Mean absolute change of the per-frame mean luma, times 100.
pub fn mabd(seq: &Sequence) -> Result<f64> {
    require_pair(seq, "mabd")?;
    let b: Vec<f64> = seq.frames().iter().map(|f| f.luma().mean()).collect();
    let total: f64 = b.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(100.0 * total / (b.len() - 1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR/SSIM are present only with a reference; temporal metrics only for
/// sequences of two or more frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub warp_error: Option<f64>,
    pub mabd: Option<f64>,
    pub per_frame: Vec<FrameMetrics>,
}

pub fn report(enhanced: &Sequence, reference: Option<&Sequence>, cfg: &FlowConfig) -> Result<MetricReport> {
    let mut out = MetricReport { psnr: None, ssim: None, warp_error: None, mabd: None, per_frame: Vec::new() };
    if let Some(r) = reference {
        if r.len() != enhanced.len() {
            return Err(Error::Shape(format!("reference has {} frames, output {}", r.len(), enhanced.len())));
        }
        out.per_frame = enhanced
            .frames()
            .par_iter()
            .zip(r.frames())
            .enumerate()
            .map(|(t, (e, c))| Ok(FrameMetrics { frame: t, psnr: psnr(e, c)?, ssim: ssim(e, c)? }))
            .collect::<Result<_>>()?;
        let n = out.per_frame.len() as f64;
        out.psnr = Some(out.per_frame.iter().map(|m| m.psnr).sum::<f64>() / n);
        out.ssim = Some(out.per_frame.iter().map(|m| m.ssim).sum::<f64>() / n);
    }
    if enhanced.len() >= 2 {
        out.warp_error = Some(warp_error(enhanced, cfg)?);
        out.mabd = Some(mabd(enhanced)?);
    }
    Ok(out)
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
        if let (Some(p), Some(q)) = (self.psnr, self.ssim) {
            s.push_str("frame,psnr,ssim\n");
            for m in &self.per_frame {
                let _ = writeln!(s, "{},{:.4},{:.4}", m.frame, m.psnr, m.ssim);
            }
            let _ = writeln!(s, "mean,{p:.4},{q:.4}");
        }
        s.push_str("warp,mabd\n");
        let _ = writeln!(s, "{},{}", opt(self.warp_error), opt(self.mabd));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn seq(frames: Vec<Frame>) -> Sequence {
        Sequence::new(frames, 30.0).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = synth::natural_scene(16, 16, 1);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = a.map(|v| v + 0.01);
        assert!((psnr(&a, &c).unwrap() - 40.0).abs() < 1e-9);
        let d = synth::natural_scene(16, 16, 2);
        assert_eq!(psnr(&a, &d).unwrap(), psnr(&d, &a).unwrap());
        assert!(psnr(&a, &Frame::filled(8, 8, 3, 0.0)).is_err());
    }

    #[test]
    fn ssim_cases() {
        let a = synth::natural_scene(48, 48, 3);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert!(ssim(&a, &a.map(|v| v + 0.1)).unwrap() > 0.9);
        let d = synth::add_gaussian_noise(&a, 0.1, 1);
        assert!((ssim(&a, &d).unwrap() - ssim(&d, &a).unwrap()).abs() < 1e-9);
        let ramp = Frame::from_fn(32, 32, 1, |_, x, y| (x + y) as f64 / 62.0);
        assert!(ssim(&ramp, &ramp.map(|v| 1.0 - v)).unwrap() < 0.2);
        assert!(ssim(&Frame::filled(10, 10, 1, 0.5), &Frame::filled(10, 10, 1, 0.5)).is_err());
    }

    #[test]
    fn temporal_metrics_on_static_sequence() {
        let f = synth::natural_scene(32, 32, 4);
        let s = seq(vec![f; 4]);
        assert!(warp_error(&s, &FlowConfig::default()).unwrap() < 1e-6);
        assert!(mabd(&s).unwrap() < 1e-6);
        assert!(mabd(&seq(vec![Frame::filled(4, 4, 1, 0.5)])).is_err());
    }

    #[test]
    fn static_noise_warp_error() {
        let f = synth::smooth_texture(64, 64, 5, 2.0);
        let frames: Vec<Frame> = (0..6).map(|k| synth::add_gaussian_noise(&f, 0.05, 100 + k)).collect();
        let w = warp_error(&seq(frames), &FlowConfig::default()).unwrap();
        assert!((0.4..=0.6).contains(&w), "{w}");
    }

    #[test]
    fn brightness_jitter_raises_warp_error() {
        let pan = synth::panning_sequence(48, 48, 6, 1, 0, 6);
        let jitter: Vec<Frame> = pan
            .frames()
            .iter()
            .enumerate()
            .map(|(t, f)| f.map(|v| v + if t % 2 == 0 { 0.05 } else { -0.05 }))
            .collect();
        let cfg = FlowConfig::default();
        assert!(warp_error(&seq(jitter), &cfg).unwrap() > warp_error(&pan, &cfg).unwrap());
    }

    #[test]
    fn mabd_cases() {
        let frames: Vec<Frame> = (0..6).map(|t| Frame::filled(8, 8, 3, if t % 2 == 0 { 0.4 } else { 0.5 })).collect();
        assert!((mabd(&seq(frames)).unwrap() - 10.0).abs() < 1e-9);
        let s = seq((0..4).map(|k| synth::crop(&synth::natural_scene(20, 20, k), 0, 0, 16, 16)).collect());
        let shuffled: Vec<Frame> = s
            .frames()
            .iter()
            .map(|f| {
                let n = f.pixel_count();
                let perm: Vec<usize> = (0..n).map(|i| (i * 37 + 11) % n).collect();
                let mut d = vec![0.0; f.data().len()];
                for c in 0..f.channels() {
                    for (i, &p) in perm.iter().enumerate() {
                        d[c * n + i] = f.data()[c * n + p];
                    }
                }
                Frame::new(16, 16, f.channels(), d).unwrap()
            })
            .collect();
        assert!((mabd(&s).unwrap() - mabd(&seq(shuffled)).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn report_contract() {
        let f = synth::natural_scene(24, 24, 9);
        let s = seq(vec![f; 3]);
        let r = report(&s, Some(&s), &FlowConfig::default()).unwrap();
        assert_eq!(r.psnr, Some(100.0));
        assert_eq!(r.ssim, Some(1.0));
        assert!(r.warp_error.unwrap() < 1e-6);
        assert_eq!(r.mabd, Some(0.0));
        let r = report(&s, None, &FlowConfig::default()).unwrap();
        assert!(r.psnr.is_none() && r.per_frame.is_empty());
        assert_eq!(r.to_csv(), "warp,mabd\n0.0000,0.0000\n");
    }

    #[test]
    fn csv_layout() {
        let r = MetricReport {
            psnr: Some(30.0),
            ssim: Some(0.9),
            warp_error: Some(0.5),
            mabd: Some(0.25),
            per_frame: vec![FrameMetrics { frame: 0, psnr: 30.0, ssim: 0.9 }],
        };
        assert_eq!(r.to_csv(), "frame,psnr,ssim\n0,30.0000,0.9000\nmean,30.0000,0.9000\nwarp,mabd\n0.5000,0.2500\n");
    }
}
