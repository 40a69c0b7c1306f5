//! Scaled-form ADMM splitting `x = u`, `x = v` of
//!
//! ```text
//! min_x  1/2 |y - A x|^2 + lambda_s J_s(x) + lambda_t J_t(x)
//! ```
//!
//! with `A` a diagonal (per-pixel) gain. The `x` step is solved in closed form
//! per pixel; the `u` and `v` steps are delegated to plug-in proximal
//! operators (a single-frame enhancer and a multi-frame fuser). A stage runs a
//! fixed number of inner rounds; stages are unrolled sequentially.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::Gain;
use crate::error::{Error, Result, ResultExt};
use crate::frame::Frame;
use crate::frameio::FrameWindow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    /// Penalty `mu` coupling `x` to the auxiliary variables.
    pub mu: f64,
    /// Descent step `rho` used by the relaxation inside the priors.
    pub rho_step: f64,
    /// Scale applied to the spatial prior's residual.
    pub lambda_s: f64,
    /// Scale applied to the temporal prior's residual.
    pub lambda_t: f64,
    pub inner_iters: usize,
    #[serde(rename = "stages")]
    pub num_stages: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { mu: 1.0, rho_step: 0.5, lambda_s: 1.0, lambda_t: 1.0, inner_iters: 3, num_stages: 2 }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |k: &str, m: &str| Err(Error::ConfigRange { key: k.into(), message: m.into() });
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return range("solver.mu", "must be > 0");
        }
        if !(self.rho_step > 0.0 && self.rho_step <= 1.0) {
            return range("solver.rho_step", "must lie in (0, 1]");
        }
        if !(self.lambda_s >= 0.0) {
            return range("solver.lambda_s", "must be >= 0");
        }
        if !(self.lambda_t >= 0.0) {
            return range("solver.lambda_t", "must be >= 0");
        }
        if self.inner_iters == 0 {
            return range("solver.inner_iters", "must be >= 1");
        }
        if self.num_stages == 0 {
            return range("solver.stages", "must be >= 1");
        }
        Ok(())
    }
}

/// ADMM iterate bundle. Duals are stored scaled (`y / rho`).
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub x: Frame,
    pub u: Frame,
    pub v: Frame,
    pub y_bar: Frame,
    pub z_bar: Frame,
    pub stage: usize,
    pub inner_iter: usize,
}

impl SolverState {
    /// Starts from the observation: `x = u = v = y`, zero duals.
    pub fn from_observation(y: &Frame) -> Self {
        let zero = y.map(|_| 0.0);
        Self {
            x: y.clone(),
            u: y.clone(),
            v: y.clone(),
            y_bar: zero.clone(),
            z_bar: zero,
            stage: 0,
            inner_iter: 0,
        }
    }

    fn reset_duals(&mut self) {
        self.y_bar.data_mut().fill(0.0);
        self.z_bar.data_mut().fill(0.0);
        self.inner_iter = 0;
    }
}

/// The degraded frame and its diagonal gain.
#[derive(Clone, Debug)]
pub struct Observation {
    pub y: Frame,
    pub gain: Gain,
}

/// Per-pixel minimizer of
/// `1/2 (y - a x)^2 + mu/2 (x - xs)^2 + mu/2 (x - xt)^2`:
/// `x = (a y + mu (xs + xt)) / (a^2 + 2 mu)`.
pub fn x_update(y: &Frame, gain: &Gain, xs_tilde: &Frame, xt_tilde: &Frame, mu: f64) -> Result<Frame> {
    y.check_same_shape(xs_tilde, "x_update spatial target")?;
    y.check_same_shape(xt_tilde, "x_update temporal target")?;
    gain.check_against(y)?;
    let n = y.pixel_count();
    let (ys, ss, ts) = (y.data(), xs_tilde.data(), xt_tilde.data());
    let mut out = Vec::with_capacity(ys.len());
    for i in 0..ys.len() {
        let a = gain.at(i, n);
        let denom = a * a + 2.0 * mu;
        if denom == 0.0 {
            return Err(Error::Numerical(format!("x_update: a^2 + 2 mu = 0 at sample {i}")));
        }
        out.push((a * ys[i] + mu * (ss[i] + ts[i])) / denom);
    }
    Frame::new(y.width(), y.height(), y.channels(), out)
}

/// `dual + (x - aux)`.
fn dual_update(dual: &Frame, x_next: &Frame, aux_next: &Frame) -> Result<Frame> {
    x_next.check_same_shape(aux_next, "dual update")?;
    dual.check_same_shape(x_next, "dual update")?;
    let data = dual
        .data()
        .iter()
        .zip(x_next.data().iter().zip(aux_next.data()))
        .map(|(&d, (&x, &a))| d + (x - a))
        .collect();
    Ok(Frame::from_raw(dual.width(), dual.height(), dual.channels(), data))
}

pub fn dual_update_spatial(y_bar: &Frame, x_next: &Frame, u_next: &Frame) -> Result<Frame> {
    dual_update(y_bar, x_next, u_next)
}

pub fn dual_update_temporal(z_bar: &Frame, x_next: &Frame, v_next: &Frame) -> Result<Frame> {
    dual_update(z_bar, x_next, v_next)
}

/// Inputs of the three subproblems.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxTargets {
    /// `u - y_bar`
    pub xs_tilde: Frame,
    /// `v - z_bar`
    pub xt_tilde: Frame,
    /// `y_bar + x`
    pub us_tilde: Frame,
    /// `z_bar + x`
    pub vt_tilde: Frame,
}

pub fn prox_targets(state: &SolverState) -> Result<ProxTargets> {
    Ok(ProxTargets {
        xs_tilde: state.u.zip_map(&state.y_bar, |u, y| u - y)?,
        xt_tilde: state.v.zip_map(&state.z_bar, |v, z| v - z)?,
        us_tilde: state.y_bar.zip_map(&state.x, |y, x| y + x)?,
        vt_tilde: state.z_bar.zip_map(&state.x, |z, x| z + x)?,
    })
}

/// Mean absolute primal residuals `(|x - u|, |x - v|)`.
pub fn residuals(state: &SolverState) -> (f64, f64) {
    let n = state.x.data().len() as f64;
    let r = |other: &Frame| {
        state.x.data().iter().zip(other.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
    };
    (r(&state.u), r(&state.v))
}

/// Single-frame proximal step (the `u` subproblem).
pub trait SpatialPrior: Sync {
    fn prox(&self, target: &Frame) -> Result<Frame>;
}

/// Multi-frame proximal step (the `v` subproblem) over a five-frame window
/// of targets.
pub trait TemporalPrior: Sync {
    fn prox(&self, window: &FrameWindow<'_>) -> Result<Frame>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPrior;

impl SpatialPrior for IdentityPrior {
    fn prox(&self, target: &Frame) -> Result<Frame> {
        Ok(target.clone())
    }
}

impl TemporalPrior for IdentityPrior {
    fn prox(&self, window: &FrameWindow<'_>) -> Result<Frame> {
        Ok(window.center().clone())
    }
}

/// One telemetry row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualRow {
    pub stage: usize,
    pub iter: usize,
    pub r_s: f64,
    pub r_t: f64,
}

/// `target + lambda * (prox(target) - target)`.
fn scaled(target: &Frame, out: Frame, lambda: f64) -> Result<Frame> {
    if lambda == 1.0 {
        return Ok(out);
    }
    target.zip_map(&out, |t, o| t + lambda * (o - t))
}

/// Runs one stage on a single frame. `window_provider` builds the five
/// temporal targets (center at slot 2) from this frame's `v` target.
pub fn run_stage(
    state: &SolverState,
    obs: &Observation,
    cfg: &StageConfig,
    intra: &dyn SpatialPrior,
    inter: &dyn TemporalPrior,
    window_provider: &dyn Fn(&Frame) -> Result<Vec<Frame>>,
) -> Result<(SolverState, Vec<ResidualRow>)> {
    cfg.validate()?;
    let mut st = state.clone();
    st.reset_duals();
    let mut rows = Vec::with_capacity(cfg.inner_iters);
    for it in 0..cfg.inner_iters {
        let stage = st.stage;
        let ctx = || format!("stage {stage} iteration {it}");
        spatial_half(&mut st, obs, cfg, intra).context_with(ctx)?;
        let vt = st.z_bar.zip_map(&st.x, |z, x| z + x)?;
        let members = window_provider(&vt).context_with(ctx)?;
        if members.len() != 5 {
            return Err(Error::Shape(format!("window provider returned {} frames", members.len())));
        }
        let win = FrameWindow::over(&members, 2)?;
        temporal_half(&mut st, &vt, &win, cfg, inter).context_with(ctx)?;
        st.inner_iter = it + 1;
        let (r_s, r_t) = residuals(&st);
        rows.push(ResidualRow { stage: st.stage, iter: it, r_s, r_t });
    }
    st.stage += 1;
    Ok((st, rows))
}

/// `x` update, spatial prior and its dual.
fn spatial_half(st: &mut SolverState, obs: &Observation, cfg: &StageConfig, intra: &dyn SpatialPrior) -> Result<()> {
    let xs = st.u.zip_map(&st.y_bar, |u, y| u - y)?;
    let xt = st.v.zip_map(&st.z_bar, |v, z| v - z)?;
    st.x = x_update(&obs.y, &obs.gain, &xs, &xt, cfg.mu)?;
    let us = st.y_bar.zip_map(&st.x, |y, x| y + x)?;
    let u = intra.prox(&us).map_err(|e| e.context("spatial prior"))?;
    us.check_same_shape(&u, "spatial prior output")?;
    st.u = scaled(&us, u, cfg.lambda_s)?;
    st.y_bar = dual_update_spatial(&st.y_bar, &st.x, &st.u)?;
    Ok(())
}

fn temporal_half(
    st: &mut SolverState,
    vt: &Frame,
    win: &FrameWindow<'_>,
    cfg: &StageConfig,
    inter: &dyn TemporalPrior,
) -> Result<()> {
    let v = inter.prox(win).map_err(|e| e.context("temporal prior"))?;
    vt.check_same_shape(&v, "temporal prior output")?;
    st.v = scaled(vt, v, cfg.lambda_t)?;
    st.z_bar = dual_update_temporal(&st.z_bar, &st.x, &st.v)?;
    Ok(())
}

/// Runs one stage over a whole sequence in lockstep: every frame takes its
/// spatial half-step, then each frame's temporal prior sees the `v` targets
/// of its clamped five-frame neighborhood at the same iteration.
///
/// Rows are averaged over frames. Frame-level work runs on the current rayon
/// pool; results do not depend on the pool size.
pub fn run_stage_sequence(
    states: &mut [SolverState],
    observations: &[Observation],
    cfg: &StageConfig,
    intra: &dyn SpatialPrior,
    inter: &dyn TemporalPrior,
) -> Result<Vec<ResidualRow>> {
    cfg.validate()?;
    if states.len() != observations.len() || states.is_empty() {
        return Err(Error::Shape("one observation per solver state required".into()));
    }
    let stage = states[0].stage;
    states.iter_mut().for_each(SolverState::reset_duals);
    let mut rows = Vec::with_capacity(cfg.inner_iters);
    for it in 0..cfg.inner_iters {
        states
            .par_iter_mut()
            .zip(observations.par_iter())
            .enumerate()
            .try_for_each(|(t, (st, obs))| {
                spatial_half(st, obs, cfg, intra)
                    .map_err(|e| e.context(format!("frame {t} stage {stage} iteration {it}")))
            })?;
        let targets: Vec<Frame> = states
            .iter()
            .map(|st| st.z_bar.zip_map(&st.x, |z, x| z + x))
            .collect::<Result<_>>()?;
        states.par_iter_mut().enumerate().try_for_each(|(t, st)| {
            let win = FrameWindow::over(&targets, t)?;
            temporal_half(st, &targets[t], &win, cfg, inter)
                .map_err(|e| e.context(format!("frame {t} stage {stage} iteration {it}")))
        })?;
        let (mut r_s, mut r_t) = (0.0, 0.0);
        for st in states.iter_mut() {
            st.inner_iter = it + 1;
            let (a, b) = residuals(st);
            r_s += a;
            r_t += b;
        }
        let n = states.len() as f64;
        rows.push(ResidualRow { stage, iter: it, r_s: r_s / n, r_t: r_t / n });
    }
    states.iter_mut().for_each(|st| st.stage += 1);
    Ok(rows)
}

/// Window provider that repeats the target five times (no temporal context).
pub fn static_window(target: &Frame) -> Result<Vec<Frame>> {
    Ok(vec![target.clone(); 5])
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use proptest::prelude::*;

    use super::*;

    fn px(v: f64) -> Frame {
        Frame::filled(1, 1, 1, v)
    }

    #[test]
    fn x_update_scalar_cases() {
        let g = |a| Gain::Scalar(a);
        let x = x_update(&px(0.5), &g(1.0), &px(0.9), &px(0.1), 0.0).unwrap();
        assert_eq!(x.data()[0], 0.5);
        let x = x_update(&px(0.2), &g(1.0), &px(0.5), &px(0.5), 1.0).unwrap();
        assert!((x.data()[0] - 0.4).abs() < 1e-15);
        let x = x_update(&px(0.1), &g(0.25), &px(0.6), &px(0.4), 0.5).unwrap();
        assert!((x.data()[0] - 0.525 / 1.0625).abs() < 1e-15);
        assert!((x.data()[0] - 0.494118).abs() < 1e-6);
    }

    #[test]
    fn x_update_errors() {
        let r = x_update(&px(0.5), &Gain::Scalar(0.0), &px(0.5), &px(0.5), 0.0);
        assert!(matches!(r, Err(Error::Numerical(_))));
        let r = x_update(&px(0.5), &Gain::Scalar(1.0), &Frame::filled(2, 1, 1, 0.0), &px(0.5), 1.0);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn x_update_is_stationary(y in 0.0f64..1.0, a in 0.01f64..1.0, s in -1.0f64..2.0,
                                  t in -1.0f64..2.0, mu in 0.0f64..10.0) {
            let x = x_update(&px(y), &Gain::Scalar(a), &px(s), &px(t), mu).unwrap().data()[0];
            let grad = a * (a * x - y) + mu * (x - s) + mu * (x - t);
            prop_assert!(grad.abs() < 1e-12);
        }
    }

    #[test]
    fn dual_updates() {
        assert_eq!(dual_update_spatial(&px(0.3), &px(0.5), &px(0.5)).unwrap(), px(0.3));
        assert!((dual_update_spatial(&px(0.0), &px(0.7), &px(0.5)).unwrap().data()[0] - 0.2).abs() < 1e-15);
        let once = dual_update_spatial(&px(0.0), &px(0.7), &px(0.5)).unwrap();
        let twice = dual_update_spatial(&once, &px(0.7), &px(0.5)).unwrap();
        assert!((twice.data()[0] - 0.4).abs() < 1e-15);
        assert_eq!(dual_update_temporal(&px(0.1), &px(0.4), &px(0.4)).unwrap(), px(0.1));
        assert!((dual_update_temporal(&px(0.1), &px(0.4), &px(0.6)).unwrap().data()[0] + 0.1).abs() < 1e-15);
        let up = dual_update_temporal(&px(0.25), &px(0.5), &px(0.25)).unwrap();
        let back = dual_update_temporal(&up, &px(0.25), &px(0.5)).unwrap();
        assert_eq!(back, px(0.25));
    }

    #[test]
    fn prox_targets_definitions() {
        let mut st = SolverState::from_observation(&px(0.3));
        let t = prox_targets(&st).unwrap();
        assert_eq!(t.xs_tilde, st.u);
        assert_eq!(t.us_tilde, st.x);
        st.u = px(0.5);
        st.y_bar = px(0.1);
        assert!((prox_targets(&st).unwrap().xs_tilde.data()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn residual_values() {
        let mut st = SolverState::from_observation(&Frame::filled(3, 3, 1, 0.4));
        assert_eq!(residuals(&st), (0.0, 0.0));
        st.u = st.x.map(|v| v - 0.2);
        assert!((residuals(&st).0 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn identity_priors_fix_the_observation() {
        let y = crate::synth::smooth_texture(32, 32, 4, 2.0);
        let obs = Observation { y: y.clone(), gain: Gain::Scalar(1.0) };
        let mut st = SolverState::from_observation(&y);
        // start away from the fixed point
        st.u = y.map(|_| 0.0);
        st.v = y.map(|_| 1.0);
        let cfg = StageConfig { inner_iters: 20, num_stages: 1, ..Default::default() };
        let (out, _) = run_stage(&st, &obs, &cfg, &IdentityPrior, &IdentityPrior, &static_window).unwrap();
        let dev = out.x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-3, "{dev}");
        assert!(residuals(&out).0 < 1e-12);
        assert_eq!(out.stage, 1);
    }

    struct Recorder<'a>(&'a Mutex<Vec<&'static str>>);
    impl SpatialPrior for Recorder<'_> {
        fn prox(&self, t: &Frame) -> Result<Frame> {
            self.0.lock().unwrap().push("intra");
            Ok(t.clone())
        }
    }
    impl TemporalPrior for Recorder<'_> {
        fn prox(&self, w: &FrameWindow<'_>) -> Result<Frame> {
            self.0.lock().unwrap().push("inter");
            Ok(w.center().clone())
        }
    }

    #[test]
    fn two_stage_schedule_alternates() {
        let log = Mutex::new(vec![]);
        let y = px(0.5);
        let obs = Observation { y: y.clone(), gain: Gain::Scalar(1.0) };
        let cfg = StageConfig { inner_iters: 1, num_stages: 2, ..Default::default() };
        let mut st = SolverState::from_observation(&y);
        for _ in 0..cfg.num_stages {
            st = run_stage(&st, &obs, &cfg, &Recorder(&log), &Recorder(&log), &static_window).unwrap().0;
        }
        assert_eq!(*log.lock().unwrap(), vec!["intra", "inter", "intra", "inter"]);
    }

    struct Failing;
    impl SpatialPrior for Failing {
        fn prox(&self, _: &Frame) -> Result<Frame> {
            Err(Error::Numerical("boom".into()))
        }
    }

    #[test]
    fn prior_failure_carries_context() {
        let y = px(0.5);
        let obs = Observation { y: y.clone(), gain: Gain::Scalar(1.0) };
        let st = SolverState::from_observation(&y);
        let err = run_stage(&st, &obs, &StageConfig::default(), &Failing, &IdentityPrior, &static_window)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stage 0 iteration 0") && msg.contains("boom"), "{msg}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn sequence_lockstep_matches_single_frame_for_static_windows() {
        let y = crate::synth::smooth_texture(8, 8, 1, 1.0);
        let obs = vec![Observation { y: y.clone(), gain: Gain::Scalar(0.5) }];
        let cfg = StageConfig::default();
        let mut states = vec![SolverState::from_observation(&y)];
        run_stage_sequence(&mut states, &obs, &cfg, &IdentityPrior, &IdentityPrior).unwrap();
        let (single, _) =
            run_stage(&SolverState::from_observation(&y), &obs[0], &cfg, &IdentityPrior, &IdentityPrior, &static_window)
                .unwrap();
        assert_eq!(states[0], single);
    }

    #[test]
    fn config_validation_names_keys() {
        let bad = StageConfig { mu: 0.0, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("solver.mu"));
        let bad = StageConfig { num_stages: 0, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("solver.stages"));
    }
}
