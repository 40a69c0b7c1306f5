use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::frame::Frame;
use crate::frameio::{FrameWindow, NEIGHBOR_SLOTS};
use crate::solver::TemporalPrior;

use super::flow::{estimate_flow, estimate_occlusion, refine_flow, warp, FlowConfig, FlowField};
use super::MaskMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterConfig {
    /// Temperature of the soft noise gate.
    pub omega: f64,
    /// Soft-shrink threshold applied to the detail layer.
    pub tau: f64,
}

impl Default for InterConfig {
    fn default() -> Self {
        Self { omega: 0.01, tau: 0.01 }
    }
}

impl InterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) {
            return Err(Error::ConfigRange { key: "inter.omega".into(), message: "must be > 0".into() });
        }
        if !(self.tau >= 0.0) {
            return Err(Error::ConfigRange { key: "inter.tau".into(), message: "must be >= 0".into() });
        }
        Ok(())
    }
}

/// Output of the temporal unit in residual form.
#[derive(Clone, Debug, PartialEq)]
pub struct InterResidual {
    pub structure: Frame,
    pub residual: Frame,
    pub enhanced: Frame,
}

/// Fills in both flow lists of a window (neighbor slots 0, 1, 3, 4).
/// Members that are the center frame itself get zero flow.
pub fn align_window(win: &mut FrameWindow<'_>, cfg: &FlowConfig) -> Result<()> {
    let center = win.center();
    let (w, h) = (center.width(), center.height());
    let mut to_center = Vec::with_capacity(4);
    let mut from_center = Vec::with_capacity(4);
    for (k, &slot) in NEIGHBOR_SLOTS.iter().enumerate() {
        let nb = win.members[slot];
        if std::ptr::eq(nb, center) {
            to_center.push(FlowField::zeros(w, h));
            from_center.push(FlowField::zeros(w, h));
            continue;
        }
        let ctx = || format!("neighbor {k}");
        let f = estimate_flow(center, nb, cfg).context_with(ctx)?;
        let f = refine_flow(&f, center, nb, cfg.refine_steps, cfg.refine_step_size, cfg.refine_smoothness)
            .context_with(ctx)?;
        let b = estimate_flow(nb, center, cfg).context_with(ctx)?;
        to_center.push(f);
        from_center.push(b);
    }
    win.flows_to_center = to_center;
    win.flows_from_center = from_center;
    Ok(())
}

/// Occlusion-weighted trimmed mean of the center and its four aligned
/// neighbors. Per sample, participants are the center plus neighbors with
/// positive weight; with at least four participants the minimum and maximum
/// are dropped before the weighted mean.
pub fn structure_from_aligned(center: &Frame, aligned: &[Frame], weights: &[MaskMap]) -> Result<Frame> {
    if aligned.len() != weights.len() {
        return Err(Error::Shape("one weight map per aligned neighbor".into()));
    }
    for a in aligned {
        center.check_same_shape(a, "aligned neighbor")?;
    }
    let n = center.pixel_count();
    let mut buf: Vec<(f64, f64)> = Vec::with_capacity(aligned.len() + 1);
    let data = (0..center.data().len())
        .map(|i| {
            buf.clear();
            buf.push((center.data()[i], 1.0));
            for (a, m) in aligned.iter().zip(weights) {
                let wgt = m.at(i, n);
                if wgt > 0.0 {
                    buf.push((a.data()[i], wgt));
                }
            }
            buf.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
            let kept = if buf.len() >= 4 { &buf[1..buf.len() - 1] } else { &buf[..] };
            let (num, den) = kept.iter().fold((0.0, 0.0), |(s, t), &(v, w)| (s + v * w, t + w));
            num / den
        })
        .collect();
    Ok(Frame::from_raw(center.width(), center.height(), center.channels(), data))
}

/// Aligns each neighbor to the center and fuses them with
/// [`structure_from_aligned`]. Requires `flows_to_center`; the reverse flows,
/// when present, add forward-backward occlusion weighting.
pub fn structure_estimate(win: &FrameWindow<'_>) -> Result<Frame> {
    let (aligned, weights) = aligned_neighbors(win)?;
    structure_from_aligned(win.center(), &aligned, &weights)
}

fn aligned_neighbors(win: &FrameWindow<'_>) -> Result<(Vec<Frame>, Vec<MaskMap>)> {
    if win.flows_to_center.len() != 4 {
        return Err(Error::param("window", "missing neighbor-to-center flows"));
    }
    let mut aligned = Vec::with_capacity(4);
    let mut weights = Vec::with_capacity(4);
    for (k, &slot) in NEIGHBOR_SLOTS.iter().enumerate() {
        let f = &win.flows_to_center[k];
        let (a, valid) = warp(win.members[slot], f)?;
        let wgt = match win.flows_from_center.get(k) {
            Some(b) => valid.product(&estimate_occlusion(f, b)?),
            None => valid,
        };
        aligned.push(a);
        weights.push(wgt);
    }
    Ok((aligned, weights))
}

/// `exp(-(max(x - s, 0))^2 / omega)` per sample.
pub fn noise_mask(x_tilde: &Frame, s: &Frame, omega: f64) -> Result<MaskMap> {
    if !(omega > 0.0) {
        return Err(Error::param("omega", "must be > 0"));
    }
    x_tilde.check_same_shape(s, "noise_mask")?;
    let values = x_tilde
        .data()
        .iter()
        .zip(s.data())
        .map(|(&x, &s)| (-(x - s).max(0.0).powi(2) / omega).exp())
        .collect();
    Ok(MaskMap {
        width: x_tilde.width(),
        height: x_tilde.height(),
        channels: x_tilde.channels(),
        values,
        omega: Some(omega),
    })
}

fn soft_shrink(d: f64, tau: f64) -> f64 {
    d.signum() * (d.abs() - tau).max(0.0)
}

/// `enhanced = s + mask * shrink(x - s, tau)`, returned in residual form
/// against `x_center`.
pub fn detail_compensation(x_center: &Frame, s: &Frame, mask: &MaskMap, tau: f64) -> Result<InterResidual> {
    x_center.check_same_shape(s, "detail_compensation")?;
    if mask.width != s.width() || mask.height != s.height() {
        return Err(Error::Shape("detail mask size".into()));
    }
    if !(tau >= 0.0) {
        return Err(Error::param("tau", "must be >= 0"));
    }
    let n = s.pixel_count();
    let enhanced: Vec<f64> = (0..s.data().len())
        .map(|i| {
            let (x, st) = (x_center.data()[i], s.data()[i]);
            st + mask.at(i, n) * soft_shrink(x - st, tau)
        })
        .collect();
    let enhanced = Frame::from_raw(s.width(), s.height(), s.channels(), enhanced);
    let residual = enhanced.zip_map(x_center, |e, x| e - x)?;
    Ok(InterResidual { structure: s.clone(), residual, enhanced })
}

/// Mask-weighted mean absolute difference between the center and each
/// aligned neighbor, normalized by total mask weight (0 when it is 0).
pub fn temporal_consistency_loss(center: &Frame, aligned: &[Frame], masks: &[MaskMap]) -> Result<f64> {
    if aligned.is_empty() {
        return Err(Error::param("window", "no aligned frames"));
    }
    if aligned.len() != masks.len() {
        return Err(Error::Shape("one mask per aligned frame".into()));
    }
    let n = center.pixel_count();
    let (mut num, mut den) = (0.0, 0.0);
    for (a, m) in aligned.iter().zip(masks) {
        center.check_same_shape(a, "aligned frame")?;
        for (i, (&c, &v)) in center.data().iter().zip(a.data()).enumerate() {
            let w = m.at(i, n);
            num += w * (v - c).abs();
            den += w;
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Full temporal unit: align, fuse structure, gate detail.
pub fn inter_prox(win: &FrameWindow<'_>, cfg: &InterConfig, flow: &FlowConfig) -> Result<InterResidual> {
    cfg.validate()?;
    let mut win = win.clone();
    if win.flows_to_center.len() != 4 {
        align_window(&mut win, flow)?;
    }
    let center = win.center();
    let s = structure_estimate(&win)?;
    let mask = noise_mask(center, &s, cfg.omega)?;
    detail_compensation(center, &s, &mask, cfg.tau)
}

/// [`inter_prox`] as a solver plug-in.
#[derive(Clone, Debug, Default)]
pub struct InterProx {
    pub cfg: InterConfig,
    pub flow: FlowConfig,
}

impl TemporalPrior for InterProx {
    fn prox(&self, window: &FrameWindow<'_>) -> Result<Frame> {
        Ok(inter_prox(window, &self.cfg, &self.flow)?.enhanced)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::synth;

    fn px(v: f64) -> Frame {
        Frame::filled(1, 1, 1, v)
    }

    #[test]
    fn mask_scalar_cases() {
        assert_eq!(noise_mask(&px(0.3), &px(0.5), 0.01).unwrap().values[0], 1.0);
        let m = noise_mask(&px(0.6), &px(0.5), 0.01).unwrap().values[0];
        assert!((m - (-1.0f64).exp()).abs() < 1e-9);
        let m = noise_mask(&px(0.6), &px(0.5), 0.001).unwrap().values[0];
        assert!((m - (-10.0f64).exp()).abs() < 1e-9);
        assert!(noise_mask(&px(0.6), &px(0.5), 0.0).is_err());
        assert!(noise_mask(&px(0.6), &px(0.5), -1.0).is_err());
    }

    proptest! {
        #[test]
        fn mask_monotone(x in -1.0f64..2.0, s in -1.0f64..2.0, d in 0.0f64..0.5,
                         om in 1e-3f64..1.0, k in 1.0f64..10.0) {
            let m = |x: f64, om: f64| noise_mask(&px(x), &px(s), om).unwrap().values[0];
            let base = m(x, om);
            prop_assert!(base > 0.0 || (x - s).max(0.0).powi(2) / om > 700.0);
            prop_assert!(base <= 1.0);
            prop_assert!(m(x + d, om) <= base);
            prop_assert!(m(x, om * k) >= base);
        }
    }

    #[test]
    fn detail_cases() {
        let s = px(0.4);
        let r = detail_compensation(&s, &s, &MaskMap::ones(1, 1), 0.01).unwrap();
        assert_eq!(r.enhanced, s);
        assert_eq!(r.residual.data()[0], 0.0);
        let x = px(0.73);
        let r = detail_compensation(&x, &s, &MaskMap::ones(1, 1), 0.0).unwrap();
        assert!((r.enhanced.data()[0] - 0.73).abs() < 1e-15);
        let r = detail_compensation(&px(0.45), &s, &MaskMap::ones(1, 1), 0.02).unwrap();
        assert!((r.enhanced.data()[0] - 0.43).abs() < 1e-12);
        let back = r.enhanced.zip_map(&r.residual, |e, r| e - r).unwrap();
        assert!((back.data()[0] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn loss_cases() {
        let c = Frame::filled(4, 4, 1, 0.5);
        let same = vec![c.clone(); 4];
        let ones = vec![MaskMap::ones(4, 4); 4];
        assert_eq!(temporal_consistency_loss(&c, &same, &ones).unwrap(), 0.0);
        let zeros = vec![MaskMap::zeros(4, 4); 4];
        let other = vec![Frame::filled(4, 4, 1, 0.9); 4];
        assert_eq!(temporal_consistency_loss(&c, &other, &zeros).unwrap(), 0.0);
        let mut one_off = same.clone();
        one_off[2] = c.map(|v| v + 0.1);
        let l = temporal_consistency_loss(&c, &one_off, &ones).unwrap();
        assert!((l - 0.025).abs() < 1e-12);
        assert!(temporal_consistency_loss(&c, &[], &[]).is_err());
    }

    #[test]
    fn trimmed_mean_and_occluded_neighbor() {
        let c = px(0.5);
        let nb: Vec<Frame> = [0.1, 0.45, 0.55, 0.9].iter().map(|&v| px(v)).collect();
        let ones = vec![MaskMap::ones(1, 1); 4];
        let s = structure_from_aligned(&c, &nb, &ones).unwrap();
        assert!((s.data()[0] - 0.5).abs() < 1e-12);
        // neighbor 3 occluded: four participants {0.1, 0.45, 0.5, 0.55} -> mean of middle two
        let mut w = ones.clone();
        w[3] = MaskMap::zeros(1, 1);
        let s = structure_from_aligned(&c, &nb, &w).unwrap();
        let four = structure_from_aligned(&c, &nb[..3], &ones[..3]).unwrap();
        assert_eq!(s, four);
        assert!((s.data()[0] - 0.475).abs() < 1e-12);
        // only two participants: plain mean
        let mut w2 = vec![MaskMap::zeros(1, 1); 4];
        w2[0] = MaskMap::ones(1, 1);
        let s = structure_from_aligned(&c, &nb, &w2).unwrap();
        assert!((s.data()[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn structure_is_permutation_invariant() {
        let c = synth::natural_scene(8, 8, 1);
        let nb: Vec<Frame> = (0..4).map(|k| synth::add_gaussian_noise(&c, 0.05, k)).collect();
        let ones = vec![MaskMap::ones(8, 8); 4];
        let a = structure_from_aligned(&c, &nb, &ones).unwrap();
        let rev: Vec<Frame> = nb.iter().rev().cloned().collect();
        assert_eq!(a, structure_from_aligned(&c, &rev, &ones).unwrap());
    }

    #[test]
    fn static_window_structure_is_center() {
        let f = synth::natural_scene(24, 24, 2);
        let frames = vec![f.clone(); 5];
        let mut win = FrameWindow::over(&frames, 2).unwrap();
        assert!(structure_estimate(&win).is_err());
        align_window(&mut win, &FlowConfig::default()).unwrap();
        let s = structure_estimate(&win).unwrap();
        let diff = s.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn inter_prox_on_static_clean_is_identity() {
        let f = synth::natural_scene(32, 32, 4);
        let frames = vec![f.clone(); 5];
        let win = FrameWindow::over(&frames, 2).unwrap();
        let r = inter_prox(&win, &InterConfig::default(), &FlowConfig::default()).unwrap();
        let dev = r.enhanced.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-4);
    }

    #[test]
    fn huge_omega_passes_shrunk_detail() {
        let clean = synth::natural_scene(32, 32, 8);
        let frames: Vec<Frame> = (0..5).map(|k| synth::add_gaussian_noise(&clean, 0.03, 40 + k)).collect();
        let mut win = FrameWindow::over(&frames, 2).unwrap();
        align_window(&mut win, &FlowConfig::default()).unwrap();
        let cfg = InterConfig { omega: 1e9, tau: 0.01 };
        let r = inter_prox(&win, &cfg, &FlowConfig::default()).unwrap();
        let s = structure_estimate(&win).unwrap();
        for i in 0..s.data().len() {
            let d = frames[2].data()[i] - s.data()[i];
            let want = s.data()[i] + soft_shrink(d, 0.01);
            assert!((r.enhanced.data()[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn inter_prox_reduces_temporal_inconsistency() {
        let clean = synth::natural_scene(32, 32, 12);
        let frames: Vec<Frame> = (0..7).map(|k| synth::add_gaussian_noise(&clean, 0.05, 70 + k)).collect();
        let out: Vec<Frame> = (0..7)
            .map(|t| {
                let win = FrameWindow::over(&frames, t).unwrap();
                inter_prox(&win, &InterConfig::default(), &FlowConfig::default()).unwrap().enhanced
            })
            .collect();
        let loss = |seq: &[Frame]| {
            let ones = vec![MaskMap::ones(32, 32); 4];
            let nb: Vec<Frame> = [1, 2, 4, 5].iter().map(|&i| seq[i].clone()).collect();
            temporal_consistency_loss(&seq[3], &nb, &ones).unwrap()
        };
        assert!(loss(&out) < loss(&frames));
    }

    #[test]
    fn omega_must_be_positive() {
        let bad = InterConfig { omega: -1.0, tau: 0.01 };
        assert!(bad.validate().unwrap_err().to_string().contains("inter.omega"));
    }
}
