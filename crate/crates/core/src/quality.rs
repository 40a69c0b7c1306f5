//! No-reference quality scoring from natural-scene statistics.
//!
//! Features follow the usual two-scale MSCN recipe: per scale, a generalized
//! Gaussian fit of the MSCN field and asymmetric generalized Gaussian fits of
//! its four neighbor products. The scoring head is pluggable: a linear
//! regressor, or a Mahalanobis distance to statistics of pristine images.
//! Lower scores are better for both.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::frame::{downsample2, filter_separable, gaussian_kernel, Frame};

pub const FEATURE_COUNT: usize = 36;
pub const FEATURES_PER_SCALE: usize = 18;
/// MSCN stabilizer for `[0,1]` data (the classical `C = 1` on 8-bit data).
pub const MSCN_C: f64 = 1.0 / 255.0;
const MIN_SIDE: usize = 16;
const SHAPE_MIN: f64 = 0.2;
const SHAPE_MAX: f64 = 10.0;
const SHAPE_STEP: f64 = 0.001;

/// Two scales of `[ggd shape, ggd variance]` followed by
/// `[aggd shape, mean, left variance, right variance]` for the H, V, D1, D2
/// neighbor products.
#[derive(Clone, Debug, PartialEq)]
pub struct NssFeatures {
    pub values: [f64; FEATURE_COUNT],
}

/// Locally normalized luminance with a 7x7 Gaussian window (sigma 7/6) and
/// replicate borders.
pub fn mscn(frame_luma: &Frame) -> Frame {
    let luma = frame_luma.luma();
    let (w, h) = (luma.width(), luma.height());
    Frame::from_plane(w, h, mscn_plane(luma.data(), w, h))
}

fn mscn_plane(img: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel(7, 7.0 / 6.0);
    let mu = filter_separable(img, w, h, &k);
    let sq: Vec<f64> = img.iter().map(|v| v * v).collect();
    let mu_sq = filter_separable(&sq, w, h, &k);
    (0..w * h)
        .map(|i| {
            let sigma = (mu_sq[i] - mu[i] * mu[i]).abs().sqrt();
            (img[i] - mu[i]) / (sigma + MSCN_C)
        })
        .collect()
}

/// `ln( G(1/b) G(3/b) / G(2/b)^2 )`, strictly decreasing in `b`.
fn ln_ggd_ratio(b: f64) -> f64 {
    ln_gamma(1.0 / b) + ln_gamma(3.0 / b) - 2.0 * ln_gamma(2.0 / b)
}

fn ratio_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ((SHAPE_MAX - SHAPE_MIN) / SHAPE_STEP).round() as usize + 1;
        (0..n).map(|i| ln_ggd_ratio(SHAPE_MIN + i as f64 * SHAPE_STEP)).collect()
    })
}

/// Shape `b` in `[0.2, 10]` with `ln_ggd_ratio(b) = target`: table bracket,
/// then bisection. Out-of-range targets clamp to the nearest bound.
fn invert_ggd_ratio(target_ln: f64) -> f64 {
    let t = ratio_table();
    if target_ln >= t[0] {
        return SHAPE_MIN;
    }
    if target_ln <= t[t.len() - 1] {
        return SHAPE_MAX;
    }
    // first index whose ratio is <= target (table is decreasing)
    let hi = t.partition_point(|&r| r > target_ln);
    let (mut lo_b, mut hi_b) =
        (SHAPE_MIN + (hi - 1) as f64 * SHAPE_STEP, SHAPE_MIN + hi as f64 * SHAPE_STEP);
    for _ in 0..60 {
        let mid = 0.5 * (lo_b + hi_b);
        if ln_ggd_ratio(mid) > target_ln {
            lo_b = mid;
        } else {
            hi_b = mid;
        }
    }
    0.5 * (lo_b + hi_b)
}

fn degenerate(samples: &[f64]) -> bool {
    samples.iter().all(|v| v.abs() < 1e-12)
}

/// Moment-matching generalized Gaussian fit: `(shape, E[x^2])`.
/// Degenerate input yields the `(2, 0)` sentinel.
pub fn fit_ggd(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() || degenerate(samples) {
        return (2.0, 0.0);
    }
    let n = samples.len() as f64;
    let m1 = samples.iter().map(|v| v.abs()).sum::<f64>() / n;
    let m2 = samples.iter().map(|v| v * v).sum::<f64>() / n;
    (invert_ggd_ratio((m2 / (m1 * m1)).ln()), m2)
}

/// Asymmetric generalized Gaussian fit:
/// `(shape, mean, left variance, right variance)`.
/// Degenerate input yields the `(2, 0, 0, 0)` sentinel.
pub fn fit_aggd(samples: &[f64]) -> (f64, f64, f64, f64) {
    if samples.is_empty() || degenerate(samples) {
        return (2.0, 0.0, 0.0, 0.0);
    }
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for &v in samples {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
        abs_sum += v.abs();
        sq_sum += v * v;
    }
    let n = samples.len() as f64;
    let left_var = if ln > 0 { ls / ln as f64 } else { 0.0 };
    let right_var = if rn > 0 { rs / rn as f64 } else { 0.0 };
    let r_hat = (abs_sum / n).powi(2) / (sq_sum / n);
    // one-sided data: the asymmetry correction tends to 1 in both limits
    let norm = if left_var > 0.0 && right_var > 0.0 {
        let g = (left_var / right_var).sqrt();
        (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2)
    } else {
        1.0
    };
    let shape = invert_ggd_ratio(-(r_hat * norm).ln());
    let scale = (ln_gamma(1.0 / shape) - ln_gamma(3.0 / shape)).exp().sqrt();
    let (bl, br) = (left_var.sqrt() * scale, right_var.sqrt() * scale);
    let mean = (br - bl) * (ln_gamma(2.0 / shape) - ln_gamma(1.0 / shape)).exp();
    (shape, mean, left_var, right_var)
}

fn scale_features(img: &[f64], w: usize, h: usize, out: &mut [f64]) {
    let m = mscn_plane(img, w, h);
    let (shape, var) = fit_ggd(&m);
    out[0] = shape;
    out[1] = var;
    let at = |x: usize, y: usize| m[y * w + x];
    let mut products: [Vec<f64>; 4] = Default::default();
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                products[0].push(at(x, y) * at(x + 1, y));
            }
            if y + 1 < h {
                products[1].push(at(x, y) * at(x, y + 1));
            }
            if x + 1 < w && y + 1 < h {
                products[2].push(at(x, y) * at(x + 1, y + 1));
                products[3].push(at(x + 1, y) * at(x, y + 1));
            }
        }
    }
    for (k, p) in products.iter().enumerate() {
        let (a, mean, lv, rv) = fit_aggd(p);
        out[2 + 4 * k..6 + 4 * k].copy_from_slice(&[a, mean, lv, rv]);
    }
}

/// 36 MSCN statistics: full resolution, then a 2x2 box-decimated copy.
pub fn extract_features(frame: &Frame) -> Result<NssFeatures> {
    if frame.width() < MIN_SIDE || frame.height() < MIN_SIDE {
        return Err(Error::param(
            "frame",
            format!("quality features need at least {MIN_SIDE}x{MIN_SIDE} pixels"),
        ));
    }
    let luma = frame.luma();
    let (w, h) = (luma.width(), luma.height());
    let mut values = [0.0; FEATURE_COUNT];
    scale_features(luma.data(), w, h, &mut values[..FEATURES_PER_SCALE]);
    let (half, hw, hh) = downsample2(luma.data(), w, h);
    scale_features(&half, hw, hh, &mut values[FEATURES_PER_SCALE..]);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite quality feature".into()));
    }
    Ok(NssFeatures { values })
}

/// Anything that can rank frames, lower being better.
pub trait QualityScorer: Sync {
    fn score(&self, frame: &Frame) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Linear { weights: Vec<f64>, bias: f64 },
    /// Covariance of normalized pristine features (row-major) plus a ridge
    /// added to its diagonal before inversion.
    PristineDistance { covariance: Vec<f64>, ridge: f64 },
}

#[derive(Clone, Debug)]
pub struct QualityModel {
    pub kind: ModelKind,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    precision: Option<DMatrix<f64>>,
}

impl PartialEq for QualityModel {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.feature_mean == other.feature_mean
            && self.feature_scale == other.feature_scale
    }
}

const BUNDLED_MODEL: &str = include_str!("../assets/pristine.model");
const SCALE_FLOOR: f64 = 1e-6;
pub const DEFAULT_RIDGE: f64 = 0.05;

impl QualityModel {
    pub fn new(kind: ModelKind, feature_mean: Vec<f64>, feature_scale: Vec<f64>) -> Result<Self> {
        let bad = |m: &str| Err(Error::param("quality model", m.to_string()));
        if feature_mean.len() != FEATURE_COUNT || feature_scale.len() != FEATURE_COUNT {
            return bad("mean and scale need 36 entries");
        }
        if feature_scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("scale entries must be positive");
        }
        let precision = match &kind {
            ModelKind::Linear { weights, bias } => {
                if weights.len() != FEATURE_COUNT || !bias.is_finite() {
                    return bad("linear head needs 36 weights and a finite bias");
                }
                None
            }
            ModelKind::PristineDistance { covariance, ridge } => {
                if covariance.len() != FEATURE_COUNT * FEATURE_COUNT || !(*ridge >= 0.0) {
                    return bad("covariance must be 36x36 and ridge >= 0");
                }
                let cov = DMatrix::from_row_slice(FEATURE_COUNT, FEATURE_COUNT, covariance);
                if (&cov - cov.transpose()).abs().max() > 1e-9 {
                    return bad("covariance must be symmetric");
                }
                let reg = cov + DMatrix::identity(FEATURE_COUNT, FEATURE_COUNT) * *ridge;
                let chol = reg
                    .cholesky()
                    .ok_or_else(|| Error::param("quality model", "covariance + ridge not positive definite"))?;
                Some(chol.inverse())
            }
        };
        Ok(Self { kind, feature_mean, feature_scale, precision })
    }

    /// Distance-to-pristine model from the features of a clean corpus.
    pub fn pristine_from_corpus(corpus: &[Frame], ridge: f64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::param("corpus", "empty"));
        }
        let feats: Vec<NssFeatures> =
            corpus.iter().map(extract_features).collect::<Result<_>>()?;
        let n = feats.len() as f64;
        let mean: Vec<f64> =
            (0..FEATURE_COUNT).map(|i| feats.iter().map(|f| f.values[i]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..FEATURE_COUNT)
            .map(|i| {
                let var = feats.iter().map(|f| (f.values[i] - mean[i]).powi(2)).sum::<f64>() / n;
                var.sqrt().max(SCALE_FLOOR)
            })
            .collect();
        let z: Vec<Vec<f64>> = feats
            .iter()
            .map(|f| (0..FEATURE_COUNT).map(|i| (f.values[i] - mean[i]) / scale[i]).collect())
            .collect();
        let mut cov = vec![0.0; FEATURE_COUNT * FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            for j in i..FEATURE_COUNT {
                let c = z.iter().map(|r| r[i] * r[j]).sum::<f64>() / n;
                cov[i * FEATURE_COUNT + j] = c;
                cov[j * FEATURE_COUNT + i] = c;
            }
        }
        Self::new(ModelKind::PristineDistance { covariance: cov, ridge }, mean, scale)
    }

    /// The model shipped with the crate, built from [`crate::synth::pristine_corpus`].
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_MODEL, Path::new("<bundled>")).expect("bundled quality model is valid")
    }

    pub fn normalize(&self, f: &NssFeatures) -> Vec<f64> {
        (0..FEATURE_COUNT)
            .map(|i| (f.values[i] - self.feature_mean[i]) / self.feature_scale[i])
            .collect()
    }

    pub fn score_features(&self, f: &NssFeatures) -> f64 {
        let z = self.normalize(f);
        match &self.kind {
            ModelKind::Linear { weights, bias } => {
                weights.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + bias
            }
            ModelKind::PristineDistance { .. } => {
                let p = self.precision.as_ref().expect("precision computed at construction");
                let z = DVector::from_vec(z);
                (z.dot(&(p * &z))).max(0.0).sqrt()
            }
        }
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        match &self.kind {
            ModelKind::Linear { weights, bias } => {
                writeln!(s, "kind = linear").unwrap();
                writeln!(s, "mean = {}", join(&self.feature_mean)).unwrap();
                writeln!(s, "scale = {}", join(&self.feature_scale)).unwrap();
                writeln!(s, "weights = {}", join(weights)).unwrap();
                writeln!(s, "bias = {bias:?}").unwrap();
            }
            ModelKind::PristineDistance { covariance, ridge } => {
                writeln!(s, "kind = pristine_distance").unwrap();
                writeln!(s, "ridge = {ridge:?}").unwrap();
                writeln!(s, "mean = {}", join(&self.feature_mean)).unwrap();
                writeln!(s, "scale = {}", join(&self.feature_scale)).unwrap();
                writeln!(s, "covariance = {}", join(covariance)).unwrap();
            }
        }
        s
    }

    /// Parses the `key = values...` text form; `#` starts a comment.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut kind = None;
        let (mut mean, mut scale, mut weights, mut cov) = (None, None, None, None);
        let (mut bias, mut ridge) = (None, None);
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: String| Error::format(origin, format!("line {}: {m}", ln + 1));
            let (key, value) =
                line.split_once('=').ok_or_else(|| bad("expected `key = value`".into()))?;
            let nums = || -> Result<Vec<f64>> {
                value
                    .split_ascii_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number `{t}`"))))
                    .collect()
            };
            let one = || -> Result<f64> {
                match nums()?.as_slice() {
                    [v] => Ok(*v),
                    _ => Err(bad("expected one number".into())),
                }
            };
            match key.trim() {
                "kind" => kind = Some(value.trim().to_string()),
                "mean" => mean = Some(nums()?),
                "scale" => scale = Some(nums()?),
                "weights" => weights = Some(nums()?),
                "covariance" => cov = Some(nums()?),
                "bias" => bias = Some(one()?),
                "ridge" => ridge = Some(one()?),
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::format(origin, format!("missing `{k}`"));
        let kind = match kind.as_deref() {
            Some("linear") => ModelKind::Linear {
                weights: weights.ok_or_else(|| missing("weights"))?,
                bias: bias.ok_or_else(|| missing("bias"))?,
            },
            Some("pristine_distance") => ModelKind::PristineDistance {
                covariance: cov.ok_or_else(|| missing("covariance"))?,
                ridge: ridge.unwrap_or(DEFAULT_RIDGE),
            },
            Some(k) => return Err(Error::format(origin, format!("unknown model kind `{k}`"))),
            None => return Err(missing("kind")),
        };
        Self::new(
            kind,
            mean.ok_or_else(|| missing("mean"))?,
            scale.ok_or_else(|| missing("scale"))?,
        )
        .map_err(|e| Error::format(origin, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl QualityScorer for QualityModel {
    fn score(&self, frame: &Frame) -> Result<f64> {
        Ok(self.score_features(&extract_features(frame)?))
    }
}

pub fn score(frame: &Frame, model: &QualityModel) -> Result<f64> {
    model.score(frame)
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::synth;

    fn laplace(n: usize, seed: u64) -> Vec<f64> {
        let mut r = synth::rng(seed);
        (0..n)
            .map(|_| {
                let u: f64 = r.random_range(-0.5..0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
            .collect()
    }

    fn normal(n: usize, sd: f64, seed: u64) -> Vec<f64> {
        let mut r = synth::rng(seed);
        let d = Normal::new(0.0, sd).unwrap();
        (0..n).map(|_| d.sample(&mut r)).collect()
    }

    #[test]
    fn ratio_inversion_round_trips() {
        for b in [0.3, 0.77, 1.0, 2.0, 3.3, 9.5] {
            assert!((invert_ggd_ratio(ln_ggd_ratio(b)) - b).abs() < 1e-9, "{b}");
        }
        assert_eq!(invert_ggd_ratio(100.0), SHAPE_MIN);
        assert_eq!(invert_ggd_ratio(-100.0), SHAPE_MAX);
    }

    #[test]
    fn ggd_recovers_gaussian_and_laplace() {
        let (b, v) = fit_ggd(&normal(100_000, 1.0, 1));
        assert!((1.9..=2.1).contains(&b), "{b}");
        assert!((v - 1.0).abs() < 0.02);
        let (b, _) = fit_ggd(&laplace(100_000, 2));
        assert!((0.95..=1.05).contains(&b), "{b}");
        assert_eq!(fit_ggd(&[0.0; 200]), (2.0, 0.0));
    }

    #[test]
    fn ggd_error_shrinks_with_samples() {
        let mut wins = 0;
        for t in 0..10 {
            let small = fit_ggd(&laplace(1_000, 100 + t)).0;
            let large = fit_ggd(&laplace(100_000, 200 + t)).0;
            if (large - 1.0).abs() < (small - 1.0).abs() {
                wins += 1;
            }
        }
        assert!(wins >= 9, "{wins}");
    }

    #[test]
    fn aggd_symmetric_and_skewed() {
        let (a, mean, l, r) = fit_aggd(&normal(100_000, 0.5, 3));
        assert!((l / r - 1.0).abs() < 0.05);
        assert!(mean.abs() < 0.02);
        assert!((1.8..=2.2).contains(&a));
        let mut mix = normal(50_000, 0.2, 4);
        mix.extend(normal(50_000, 1.0, 5).into_iter().map(f64::abs));
        let (_, mean, l, r) = fit_aggd(&mix);
        assert!(r > l && mean > 0.0);
        assert_eq!(fit_aggd(&[0.0; 300]), (2.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn mscn_of_constant_is_zero() {
        let m = mscn(&Frame::filled(20, 20, 1, 0.4));
        assert!(m.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn mscn_centered_and_symmetric() {
        let img = synth::natural_scene(64, 64, 11);
        assert!(mscn(&img).mean().abs() < 0.05);
        let cb = Frame::from_fn(32, 32, 1, |_, x, y| if (x + y) % 2 == 0 { 0.8 } else { 0.2 });
        let m = mscn(&cb);
        let mu = m.mean();
        let n = m.data().len() as f64;
        let sd = (m.data().iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
        let skew = m.data().iter().map(|v| ((v - mu) / sd).powi(3)).sum::<f64>() / n;
        assert!(skew.abs() < 0.1, "{skew}");
    }

    #[test]
    fn feature_shape_contract_and_min_size() {
        let f = extract_features(&synth::natural_scene(40, 36, 2)).unwrap();
        assert_eq!(f.values.len(), FEATURE_COUNT);
        assert!(f.values.iter().all(|v| v.is_finite()));
        assert!(extract_features(&Frame::filled(15, 40, 1, 0.3)).is_err());
    }

    #[test]
    fn mirroring_swaps_diagonals() {
        let img = synth::natural_scene(48, 40, 6).luma();
        let mirrored =
            Frame::from_fn(48, 40, 1, |_, x, y| img.get(0, 47 - x, y));
        let a = extract_features(&img).unwrap().values;
        let b = extract_features(&mirrored).unwrap().values;
        for s in 0..2 {
            let o = s * FEATURES_PER_SCALE;
            for i in 0..10 {
                assert!((a[o + i] - b[o + i]).abs() < 1e-9, "scale {s} feature {i}");
            }
            for i in 0..4 {
                assert!((a[o + 10 + i] - b[o + 14 + i]).abs() < 1e-9);
                assert!((a[o + 14 + i] - b[o + 10 + i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noise_flattens_mscn_distribution() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/scene_gray.png");
        let clean = crate::frameio::read_image(&path).unwrap();
        let noisy = synth::add_gaussian_noise(&clean, 0.1, 5);
        let (a, b) = (extract_features(&clean).unwrap(), extract_features(&noisy).unwrap());
        assert!(a.values[0] < 2.0 && b.values[0] > a.values[0] + 0.5, "{} {}", a.values[0], b.values[0]);
    }

    #[test]
    fn self_distance_is_zero() {
        let img = synth::natural_scene(48, 48, 30);
        let m = QualityModel::pristine_from_corpus(std::slice::from_ref(&img), DEFAULT_RIDGE).unwrap();
        assert!(m.score(&img).unwrap().abs() < 1e-9);
    }

    #[test]
    fn zero_weight_linear_is_constant() {
        let m = QualityModel::new(
            ModelKind::Linear { weights: vec![0.0; 36], bias: 4.5 },
            vec![0.0; 36],
            vec![1.0; 36],
        )
        .unwrap();
        for s in 0..3 {
            assert_eq!(m.score(&synth::natural_scene(32, 32, s)).unwrap(), 4.5);
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = QualityModel::pristine_from_corpus(
            &[synth::natural_scene(32, 32, 1), synth::natural_scene(32, 32, 2)],
            0.1,
        )
        .unwrap();
        let back = QualityModel::parse(&m.to_text(), Path::new("t")).unwrap();
        assert_eq!(back, m);
        let img = synth::natural_scene(32, 32, 3);
        assert_eq!(back.score(&img).unwrap(), m.score(&img).unwrap());
    }

    #[test]
    fn corrupt_model_text_is_rejected() {
        assert!(QualityModel::parse("kind = linear\nmean = 1 2\n", Path::new("x")).is_err());
        assert!(QualityModel::parse("kind = bogus\n", Path::new("x")).is_err());
        assert!(QualityModel::parse("garbage", Path::new("x")).is_err());
    }

    #[test]
    fn bundled_model_matches_its_corpus() {
        let rebuilt =
            QualityModel::pristine_from_corpus(&synth::pristine_corpus(), DEFAULT_RIDGE).unwrap();
        assert_eq!(QualityModel::bundled(), rebuilt, "regenerate assets/pristine.model");
    }
}
