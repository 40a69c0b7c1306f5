//! Dense optical flow: coarse-to-fine Horn-Schunck with warping, a
//! photometric L1 refinement, backward warping, forward-backward occlusion,
//! and Middlebury `.flo` I/O.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{downsample2, filter_separable, gaussian_kernel, sample_bilinear, Frame};

use super::MaskMap;

const MIN_SIDE: usize = 16;

/// Per-pixel displacement defined on the grid of the frame it was estimated
/// for: pixel `p` corresponds to `p + (u, v)` in the other frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// `p + flow(p)` lies inside the frame.
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, u: vec![0.0; n], v: vec![0.0; n], valid: vec![true; n] }
    }

    pub fn constant(width: usize, height: usize, du: f64, dv: f64) -> Self {
        let mut f = Self::zeros(width, height);
        f.u.fill(du);
        f.v.fill(dv);
        f.update_validity();
        f
    }

    pub fn from_components(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::Shape("flow component length".into()));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite flow".into()));
        }
        let mut f = Self { width, height, u, v, valid: vec![true; width * height] };
        f.update_validity();
        Ok(f)
    }

    pub fn update_validity(&mut self) {
        let (w, h) = (self.width as f64 - 1.0, self.height as f64 - 1.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                let (tx, ty) = (x as f64 + self.u[i], y as f64 + self.v[i]);
                self.valid[i] = (0.0..=w).contains(&tx) && (0.0..=h).contains(&ty);
            }
        }
    }

    pub fn negated(&self) -> Self {
        let mut f = Self {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|x| -x).collect(),
            v: self.v.iter().map(|x| -x).collect(),
            valid: self.valid.clone(),
        };
        f.update_validity();
        f
    }

    fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::Shape(format!(
                "flow {}x{} vs frame {}x{}",
                self.width,
                self.height,
                frame.width(),
                frame.height()
            )));
        }
        Ok(())
    }

    /// Mean endpoint error against `other` over the centered crop keeping
    /// `keep` of each dimension.
    pub fn endpoint_error(&self, other: &FlowField, keep: f64) -> f64 {
        let (mx, my) = (
            ((1.0 - keep) / 2.0 * self.width as f64).round() as usize,
            ((1.0 - keep) / 2.0 * self.height as f64).round() as usize,
        );
        let (mut sum, mut n) = (0.0, 0usize);
        for y in my..self.height - my {
            for x in mx..self.width - mx {
                let i = y * self.width + x;
                sum += ((self.u[i] - other.u[i]).powi(2) + (self.v[i] - other.v[i]).powi(2)).sqrt();
                n += 1;
            }
        }
        sum / n.max(1) as f64
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.u.iter().zip(&self.v).map(|(a, b)| a.hypot(*b)).sum::<f64>() / self.u.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Horn-Schunck smoothness weight (squared alpha, intensities in `[0,1]`).
    pub lambda_hs: f64,
    /// Jacobi iterations per warp.
    pub hs_iters: usize,
    /// Re-linearizations per pyramid level.
    pub warps: usize,
    pub refine_steps: usize,
    pub refine_step_size: f64,
    /// Weight of the quadratic smoothness term inside refinement.
    pub refine_smoothness: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            lambda_hs: 0.2,
            hs_iters: 100,
            warps: 3,
            refine_steps: 10,
            refine_step_size: 1.0,
            refine_smoothness: 0.1,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |k: &str, m: &str| Err(Error::ConfigRange { key: k.into(), message: m.into() });
        if !(self.lambda_hs > 0.0) {
            return range("flow.lambda_hs", "must be > 0");
        }
        if self.hs_iters == 0 || self.warps == 0 {
            return range("flow.hs_iters", "iterations and warps must be >= 1");
        }
        if !(self.refine_step_size > 0.0) {
            return range("flow.refine_step_size", "must be > 0");
        }
        if !(self.refine_smoothness >= 0.0) {
            return range("flow.refine_smoothness", "must be >= 0");
        }
        Ok(())
    }
}

/// Central-difference gradients with replicate borders.
fn gradients(p: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            gx[y * w + x] = (p[y * w + xr] - p[y * w + xl]) / (xr - xl).max(1) as f64;
            gy[y * w + x] = (p[yd * w + x] - p[yu * w + x]) / (yd - yu).max(1) as f64;
        }
    }
    (gx, gy)
}

fn warp_plane(p: &[f64], w: usize, h: usize, u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out[i] = sample_bilinear(p, w, h, x as f64 + u[i], y as f64 + v[i]);
        }
    }
    out
}

/// Horn-Schunck neighborhood average (edge 1/6, corner 1/12), replicate borders.
fn hs_average(f: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let edge = f[yu * w + x] + f[yd * w + x] + f[y * w + xl] + f[y * w + xr];
            let corner = f[yu * w + xl] + f[yu * w + xr] + f[yd * w + xl] + f[yd * w + xr];
            out[y * w + x] = edge / 6.0 + corner / 12.0;
        }
    }
}

/// Refines `(u, v)` at one pyramid level in place.
fn hs_level(src: &[f64], dst: &[f64], w: usize, h: usize, u: &mut [f64], v: &mut [f64], cfg: &FlowConfig) {
    let n = w * h;
    let (sgx, sgy) = gradients(src, w, h);
    let (mut ub, mut vb) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..cfg.warps {
        let warped = warp_plane(dst, w, h, u, v);
        let (wgx, wgy) = gradients(&warped, w, h);
        let ix: Vec<f64> = (0..n).map(|i| 0.5 * (sgx[i] + wgx[i])).collect();
        let iy: Vec<f64> = (0..n).map(|i| 0.5 * (sgy[i] + wgy[i])).collect();
        let it: Vec<f64> = (0..n).map(|i| warped[i] - src[i]).collect();
        let (u0, v0) = (u.to_vec(), v.to_vec());
        for _ in 0..cfg.hs_iters {
            hs_average(u, w, h, &mut ub);
            hs_average(v, w, h, &mut vb);
            for i in 0..n {
                let (du, dv) = (ub[i] - u0[i], vb[i] - v0[i]);
                let t = (ix[i] * du + iy[i] * dv + it[i])
                    / (cfg.lambda_hs + ix[i] * ix[i] + iy[i] * iy[i]);
                u[i] = ub[i] - ix[i] * t;
                v[i] = vb[i] - iy[i] * t;
            }
        }
    }
}

/// Flow on the `src` grid pointing into `dst`: `dst(p + f(p)) ~ src(p)`.
const PRESMOOTH_SIGMA: f64 = 1.0;

pub fn estimate_flow(src: &Frame, dst: &Frame, cfg: &FlowConfig) -> Result<FlowField> {
    src.check_same_shape(dst, "estimate_flow")?;
    cfg.validate()?;
    let (w, h) = (src.width(), src.height());
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::param("frame", format!("flow needs at least {MIN_SIDE}x{MIN_SIDE} pixels")));
    }
    let k = gaussian_kernel(7, PRESMOOTH_SIGMA);
    let smooth = |f: &Frame| filter_separable(f.luma().data(), w, h, &k);
    let mut pyramid = vec![(smooth(src), smooth(dst), w, h)];
    loop {
        let (s, d, lw, lh) = pyramid.last().unwrap();
        if lw.min(lh) / 2 < MIN_SIDE {
            break;
        }
        let (s2, w2, h2) = downsample2(s, *lw, *lh);
        let (d2, _, _) = downsample2(d, *lw, *lh);
        pyramid.push((s2, d2, w2, h2));
    }
    let (_, _, cw, ch) = pyramid.last().unwrap();
    let (mut u, mut v, mut fw, mut fh) = (vec![0.0; cw * ch], vec![0.0; cw * ch], *cw, *ch);
    for (s, d, lw, lh) in pyramid.iter().rev() {
        if (*lw, *lh) != (fw, fh) {
            // upsample from the coarser grid, doubling displacements
            let (sx, sy) = (fw as f64 / *lw as f64, fh as f64 / *lh as f64);
            let mut nu = vec![0.0; lw * lh];
            let mut nv = vec![0.0; lw * lh];
            for y in 0..*lh {
                for x in 0..*lw {
                    let cx = (x as f64 + 0.5) * sx - 0.5;
                    let cy = (y as f64 + 0.5) * sy - 0.5;
                    nu[y * lw + x] = sample_bilinear(&u, fw, fh, cx, cy) / sx;
                    nv[y * lw + x] = sample_bilinear(&v, fw, fh, cx, cy) / sy;
                }
            }
            u = nu;
            v = nv;
            fw = *lw;
            fh = *lh;
        }
        hs_level(s, d, *lw, *lh, &mut u, &mut v, cfg);
    }
    FlowField::from_components(w, h, u, v)
}

/// Mean absolute difference between `src` and `dst` warped by `flow`
/// (luminance).
pub fn photometric_l1(flow: &FlowField, src: &Frame, dst: &Frame) -> f64 {
    let (s, d) = (src.luma(), dst.luma());
    let warped = warp_plane(d.data(), flow.width, flow.height, &flow.u, &flow.v);
    warped.iter().zip(s.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / warped.len() as f64
}

/// Descent on the photometric L1 objective (Charbonnier-smoothed gradient)
/// plus a quadratic smoothness pull. A step is accepted only if the plain L1
/// objective does not increase; otherwise the step size is halved. The result
/// never has a larger objective than the input.
pub fn refine_flow(
    flow: &FlowField,
    src: &Frame,
    dst: &Frame,
    steps: usize,
    step_size: f64,
    smoothness: f64,
) -> Result<FlowField> {
    flow.check_frame(src)?;
    src.check_same_shape(dst, "refine_flow")?;
    if steps == 0 {
        return Ok(flow.clone());
    }
    let (w, h) = (flow.width, flow.height);
    let (s, d) = (src.luma(), dst.luma());
    let (dgx, dgy) = gradients(d.data(), w, h);
    let objective = |u: &[f64], v: &[f64]| {
        let warped = warp_plane(d.data(), w, h, u, v);
        warped.iter().zip(s.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / warped.len() as f64
    };
    const EPS: f64 = 1e-3;
    let (mut u, mut v) = (flow.u.clone(), flow.v.clone());
    let mut best = objective(&u, &v);
    let mut step = step_size;
    let (mut ub, mut vb) = (vec![0.0; w * h], vec![0.0; w * h]);
    for _ in 0..steps {
        let warped = warp_plane(d.data(), w, h, &u, &v);
        hs_average(&u, w, h, &mut ub);
        hs_average(&v, w, h, &mut vb);
        let mut gu = vec![0.0; w * h];
        let mut gv = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let r = warped[i] - s.data()[i];
                let psi = r / (r * r + EPS * EPS).sqrt();
                let (px, py) = (x as f64 + u[i], y as f64 + v[i]);
                gu[i] = psi * sample_bilinear(&dgx, w, h, px, py) + smoothness * (u[i] - ub[i]);
                gv[i] = psi * sample_bilinear(&dgy, w, h, px, py) + smoothness * (v[i] - vb[i]);
            }
        }
        let mut accepted = false;
        for _ in 0..5 {
            let nu: Vec<f64> = u.iter().zip(&gu).map(|(a, g)| a - step * g).collect();
            let nv: Vec<f64> = v.iter().zip(&gv).map(|(a, g)| a - step * g).collect();
            let obj = objective(&nu, &nv);
            if obj <= best {
                best = obj;
                u = nu;
                v = nv;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    FlowField::from_components(w, h, u, v)
}

/// Backward bilinear warp: `out(p) = frame(p + flow(p))`. Samples landing
/// outside the frame take the nearest border value and are marked 0 in the
/// returned validity mask.
pub fn warp(frame: &Frame, flow: &FlowField) -> Result<(Frame, MaskMap)> {
    flow.check_frame(frame)?;
    let (w, h) = (frame.width(), frame.height());
    let mut data = Vec::with_capacity(frame.data().len());
    for c in 0..frame.channels() {
        data.extend(warp_plane(frame.plane(c), w, h, &flow.u, &flow.v));
    }
    let mut f = flow.clone();
    f.update_validity();
    let valid = MaskMap::from_values(w, h, f.valid.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
    Ok((Frame::from_raw(w, h, frame.channels(), data), valid))
}

/// Forward-backward consistency: 1 where
/// `|f + b(p + f)|^2 <= 0.01 (|f|^2 + |b(p + f)|^2) + 0.5`, else 0.
pub fn estimate_occlusion(f_fwd: &FlowField, f_bwd: &FlowField) -> Result<MaskMap> {
    if f_fwd.width != f_bwd.width || f_fwd.height != f_bwd.height {
        return Err(Error::Shape("occlusion: flow sizes differ".into()));
    }
    let (w, h) = (f_fwd.width, f_fwd.height);
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (fu, fv) = (f_fwd.u[i], f_fwd.v[i]);
            let (tx, ty) = (x as f64 + fu, y as f64 + fv);
            let bu = sample_bilinear(&f_bwd.u, w, h, tx, ty);
            let bv = sample_bilinear(&f_bwd.v, w, h, tx, ty);
            let lhs = (fu + bu).powi(2) + (fv + bv).powi(2);
            let rhs = 0.01 * (fu * fu + fv * fv + bu * bu + bv * bv) + 0.5;
            values.push(if lhs > rhs { 0.0 } else { 1.0 });
        }
    }
    Ok(MaskMap::from_values(w, h, values))
}

const FLO_MAGIC: &[u8; 4] = b"PIEH";

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let mut out = Vec::with_capacity(12 + 8 * flow.u.len());
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for (u, v) in flow.u.iter().zip(&flow.v) {
        out.extend_from_slice(&(*u as f32).to_le_bytes());
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let b = fs::read(path).map_err(|e| Error::io(path, e))?;
    if b.len() < 12 || &b[..4] != FLO_MAGIC {
        return Err(Error::format(path, "missing PIEH magic"));
    }
    let int = |o: usize| i32::from_le_bytes(b[o..o + 4].try_into().unwrap());
    let (w, h) = (int(4), int(8));
    if w <= 0 || h <= 0 {
        return Err(Error::format(path, "bad flow dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    if b.len() != 12 + 8 * w * h {
        return Err(Error::format(path, "flow payload size mismatch"));
    }
    let f = |o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as f64;
    let u = (0..w * h).map(|i| f(12 + 8 * i)).collect();
    let v = (0..w * h).map(|i| f(16 + 8 * i)).collect();
    FlowField::from_components(w, h, u, v).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn translated_pair(w: usize, h: usize, dx: usize, dy_up: usize, seed: u64) -> (Frame, Frame) {
        // dst(p) = src(p - d) with d = (dx, -dy_up)
        let big = synth::smooth_texture(w + 16, h + 16, seed, 2.5);
        let src = synth::crop(&big, 8, 8, w, h);
        let dst = synth::crop(&big, 8 - dx, 8 + dy_up, w, h);
        (src, dst)
    }

    #[test]
    fn identical_frames_have_zero_flow() {
        let f = synth::smooth_texture(48, 40, 1, 2.0);
        let flow = estimate_flow(&f, &f, &FlowConfig::default()).unwrap();
        assert!(flow.mean_magnitude() < 0.05);
    }

    #[test]
    fn textureless_frames_have_zero_flow() {
        let a = Frame::filled(32, 32, 1, 0.4);
        let b = Frame::filled(32, 32, 1, 0.6);
        let flow = estimate_flow(&a, &b, &FlowConfig::default()).unwrap();
        assert!(flow.mean_magnitude() < 1e-9);
    }

    #[test]
    fn recovers_translation() {
        let (src, dst) = translated_pair(96, 96, 3, 2, 7);
        let flow = estimate_flow(&src, &dst, &FlowConfig::default()).unwrap();
        let truth = FlowField::constant(96, 96, 3.0, -2.0);
        let epe = flow.endpoint_error(&truth, 0.8);
        assert!(epe < 0.25, "epe {epe}");
    }

    #[test]
    fn too_small_is_rejected() {
        let f = Frame::filled(15, 30, 1, 0.0);
        assert!(estimate_flow(&f, &f, &FlowConfig::default()).is_err());
    }

    #[test]
    fn warp_identity_and_integer_shift() {
        let f = synth::natural_scene(20, 18, 3);
        let (out, valid) = warp(&f, &FlowField::zeros(20, 18)).unwrap();
        assert_eq!(out, f);
        assert!(valid.values.iter().all(|&v| v == 1.0));
        let (out, valid) = warp(&f, &FlowField::constant(20, 18, 1.0, 0.0)).unwrap();
        for c in 0..3 {
            for y in 0..18 {
                for x in 0..19 {
                    assert_eq!(out.get(c, x, y), f.get(c, x + 1, y));
                }
                assert_eq!(valid.values[y * 20 + 19], 0.0);
                assert_eq!(valid.values[y * 20 + 18], 1.0);
            }
        }
    }

    #[test]
    fn warp_with_estimated_flow_realigns() {
        let (src, dst) = translated_pair(64, 64, 3, 2, 11);
        let flow = estimate_flow(&src, &dst, &FlowConfig::default()).unwrap();
        let (back, valid) = warp(&dst, &flow).unwrap();
        let (mut err, mut n) = (0.0, 0.0);
        for i in 0..src.data().len() {
            err += valid.values[i] * (back.data()[i] - src.data()[i]).abs();
            n += valid.values[i];
        }
        assert!(err / n < 0.02, "{}", err / n);
    }

    #[test]
    fn refine_leaves_optimum_alone() {
        let f = synth::smooth_texture(32, 32, 2, 2.0);
        let zero = FlowField::zeros(32, 32);
        let r = refine_flow(&zero, &f, &f, 10, 1.0, 0.1).unwrap();
        assert!(r.u.iter().chain(&r.v).all(|x| x.abs() < 1e-6));
        assert_eq!(refine_flow(&zero, &f, &f, 0, 1.0, 0.1).unwrap(), zero);
    }

    #[test]
    fn refine_reduces_error_of_perturbed_truth() {
        let (src, dst) = translated_pair(64, 64, 3, 2, 5);
        let truth = FlowField::constant(64, 64, 3.0, -2.0);
        let mut r = synth::rng(3);
        use rand::Rng;
        let u = truth.u.iter().map(|x| x + r.random_range(-0.6..0.6)).collect();
        let v = truth.v.iter().map(|x| x + r.random_range(-0.6..0.6)).collect();
        let perturbed = FlowField::from_components(64, 64, u, v).unwrap();
        let refined = refine_flow(&perturbed, &src, &dst, 10, 1.0, 0.1).unwrap();
        assert!(refined.endpoint_error(&truth, 0.8) < perturbed.endpoint_error(&truth, 0.8));
        assert!(photometric_l1(&refined, &src, &dst) <= photometric_l1(&perturbed, &src, &dst));
    }

    #[test]
    fn occlusion_cases() {
        let f = FlowField::constant(8, 8, 5.0, 0.0);
        let m = estimate_occlusion(&f, &f.negated()).unwrap();
        assert!(m.values.iter().all(|&v| v == 1.0));
        let m = estimate_occlusion(&f, &FlowField::zeros(8, 8)).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        let z = FlowField::zeros(8, 8);
        assert!(estimate_occlusion(&z, &z).unwrap().values.iter().all(|&v| v == 1.0));
        assert!(estimate_occlusion(&z, &FlowField::zeros(9, 8)).is_err());
    }

    #[test]
    fn flo_layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.flo");
        let f = FlowField::from_components(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.25, -3.5], vec![1.0; 6]).unwrap();
        write_flo(&p, &f).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"PIEH");
        assert_eq!(i32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(i32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[12..16].try_into().unwrap()), 0.5);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), 12 + 8 * 6);
        assert_eq!(read_flo(&p).unwrap(), f);
        fs::write(&p, b"XXXX").unwrap();
        assert!(read_flo(&p).is_err());
    }
}
