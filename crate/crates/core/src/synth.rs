//! Deterministic procedural test content: textures, scenes, pans.
//!
//! Used by the self-test, the bundled quality model and the profile corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::frame::{filter_separable, gaussian_kernel, Frame};
use crate::frameio::Sequence;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn blurred_noise(w: usize, h: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise: Vec<f64> = (0..w * h).map(|_| rng.sample(StandardNormal)).collect();
    if sigma <= 0.0 {
        return noise;
    }
    let size = 2 * (3.0 * sigma).ceil() as usize + 1;
    filter_separable(&noise, w, h, &gaussian_kernel(size, sigma))
}

fn rescale(v: &mut [f64], lo: f64, hi: f64) {
    let (mn, mx) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    let span = (mx - mn).max(1e-12);
    v.iter_mut().for_each(|x| *x = lo + (hi - lo) * (*x - mn) / span);
}

/// Smooth random texture in `[0.1, 0.9]` (Gaussian-blurred white noise).
pub fn smooth_texture(w: usize, h: usize, seed: u64, blur_sigma: f64) -> Frame {
    let mut r = rng(seed);
    let mut v = blurred_noise(w, h, blur_sigma, &mut r);
    rescale(&mut v, 0.1, 0.9);
    Frame::from_plane(w, h, v)
}

/// Piecewise-smooth color scene: a shaded background, random rectangles and
/// discs with soft edges, and a faint multi-scale texture. Values lie in
/// roughly `[0.05, 0.95]`.
pub fn natural_scene(w: usize, h: usize, seed: u64) -> Frame {
    let mut r = rng(seed);
    let n = w * h;
    let mut planes = vec![vec![0.0; n]; 3];
    let base: [f64; 3] = std::array::from_fn(|_| r.random_range(0.25..0.6));
    let (gx, gy) = (r.random_range(-0.3..0.3), r.random_range(-0.3..0.3));
    for (c, plane) in planes.iter_mut().enumerate() {
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] =
                    base[c] + gx * (x as f64 / w as f64 - 0.5) + gy * (y as f64 / h as f64 - 0.5);
            }
        }
    }
    let shapes = 6 + (w * h / 900).min(30);
    for _ in 0..shapes {
        let color: [f64; 3] = {
            let l: f64 = r.random_range(0.08..0.92);
            std::array::from_fn(|_| (l + r.random_range(-0.12..0.12)).clamp(0.02, 0.98))
        };
        let cx = r.random_range(0.0..w as f64);
        let cy = r.random_range(0.0..h as f64);
        let size = r.random_range(3.0..(w.min(h) as f64 / 3.0).max(4.0));
        let disc = r.random_bool(0.5);
        let (ax, ay) = (r.random_range(0.5..1.5) * size, r.random_range(0.5..1.5) * size);
        let shade = r.random_range(-0.004..0.004);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if disc {
                    (dx / ax).powi(2) + (dy / ay).powi(2) <= 1.0
                } else {
                    dx.abs() <= ax && dy.abs() <= ay
                };
                if inside {
                    for (c, plane) in planes.iter_mut().enumerate() {
                        plane[y * w + x] = color[c] + shade * (dx + dy);
                    }
                }
            }
        }
    }
    let edge = gaussian_kernel(5, 0.7);
    let tex: Vec<Vec<f64>> =
        [1.0, 2.5].iter().map(|&s| blurred_noise(w, h, s, &mut r)).collect();
    let mut data = Vec::with_capacity(3 * n);
    for plane in &planes {
        let soft = filter_separable(plane, w, h, &edge);
        for i in 0..n {
            let t = 0.012 * tex[0][i] + 0.02 * tex[1][i];
            data.push((soft[i] + t).clamp(0.02, 0.98));
        }
    }
    Frame::from_raw(w, h, 3, data)
}

/// Crops a `w x h` region whose top-left corner is `(x0, y0)`.
pub fn crop(src: &Frame, x0: usize, y0: usize, w: usize, h: usize) -> Frame {
    Frame::from_fn(w, h, src.channels(), |c, x, y| src.get(c, x0 + x, y0 + y))
}

/// `n` frames panning across a larger scene by `(dx, dy)` whole pixels per frame.
pub fn panning_sequence(w: usize, h: usize, n: usize, dx: usize, dy: usize, seed: u64) -> Sequence {
    let big = natural_scene(w + dx * n + 2, h + dy * n + 2, seed);
    let frames = (0..n).map(|t| crop(&big, 1 + dx * t, 1 + dy * t, w, h)).collect();
    Sequence::new(frames, 30.0).expect("equal shapes")
}

pub fn add_gaussian_noise(frame: &Frame, sigma: f64, seed: u64) -> Frame {
    let mut r = rng(seed);
    let data = frame.data().iter().map(|v| v + sigma * r.sample::<f64, _>(StandardNormal)).collect();
    Frame::from_raw(frame.width(), frame.height(), frame.channels(), data)
}

/// The clean corpus the bundled quality model and illumination profile are
/// built from.
pub fn pristine_corpus() -> Vec<Frame> {
    (0..24).map(|i| natural_scene(96, 96, 1000 + i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = natural_scene(40, 30, 3);
        assert_eq!(a, natural_scene(40, 30, 3));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let t = smooth_texture(32, 32, 1, 2.0);
        assert!(t.data().iter().all(|&v| (0.1 - 1e-12..=0.9 + 1e-12).contains(&v)));
    }

    #[test]
    fn panning_is_an_exact_shift() {
        let s = panning_sequence(20, 16, 3, 2, 1, 9);
        let (a, b) = (&s.frames()[0], &s.frames()[1]);
        assert_eq!(a.get(1, 5, 4), b.get(1, 3, 3));
    }
}
