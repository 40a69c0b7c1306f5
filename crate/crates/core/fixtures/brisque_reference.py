"""Independent reference for the 36 MSCN features and for SSIM.

Regenerate the committed fixtures with

    python3 brisque_reference.py --write

Needs numpy, scipy, Pillow and scikit-image (fixture images and SSIM only).
"""

import argparse
import json
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d
from scipy.optimize import brentq
from scipy.special import gammaln

HERE = Path(__file__).resolve().parent
IMAGES = ["scene_gray.png", "scene_rgb.png"]
LUMA = np.array([0.299, 0.587, 0.114])


def load(name):
    a = np.asarray(Image.open(HERE / name), dtype=np.float64) / 255.0
    return a if a.ndim == 2 else a[..., :3] @ LUMA


def gauss(size, sigma):
    r = size // 2
    k = np.exp(-((np.arange(size) - r) ** 2) / (2 * sigma * sigma))
    return k / k.sum()


def blur(img, k):
    return correlate1d(correlate1d(img, k, axis=1, mode="nearest"), k, axis=0, mode="nearest")


def mscn(img):
    k = gauss(7, 7 / 6)
    mu = blur(img, k)
    sigma = np.sqrt(np.abs(blur(img * img, k) - mu * mu))
    return (img - mu) / (sigma + 1 / 255)


def ln_ratio(b):
    return gammaln(1 / b) + gammaln(3 / b) - 2 * gammaln(2 / b)


def solve_shape(target_ln):
    lo, hi = 0.2, 10.0
    if target_ln >= ln_ratio(lo):
        return lo
    if target_ln <= ln_ratio(hi):
        return hi
    return brentq(lambda b: ln_ratio(b) - target_ln, lo, hi, xtol=1e-14, rtol=1e-14)


def ggd(x):
    m1 = np.mean(np.abs(x))
    m2 = np.mean(x * x)
    return [solve_shape(np.log(m2 / m1**2)), m2]


def aggd(x):
    left, right = x[x < 0], x[x > 0]
    lv = np.mean(left**2) if left.size else 0.0
    rv = np.mean(right**2) if right.size else 0.0
    r_hat = np.mean(np.abs(x)) ** 2 / np.mean(x * x)
    if lv > 0 and rv > 0:
        g = np.sqrt(lv / rv)
        r_hat *= (g**3 + 1) * (g + 1) / (g * g + 1) ** 2
    a = solve_shape(-np.log(r_hat))
    scale = np.sqrt(np.exp(gammaln(1 / a) - gammaln(3 / a)))
    mean = (np.sqrt(rv) - np.sqrt(lv)) * scale * np.exp(gammaln(2 / a) - gammaln(1 / a))
    return [a, mean, lv, rv]


def scale_features(img):
    m = mscn(img)
    feats = ggd(m.ravel())
    products = [
        m[:, :-1] * m[:, 1:],
        m[:-1, :] * m[1:, :],
        m[:-1, :-1] * m[1:, 1:],
        m[:-1, 1:] * m[1:, :-1],
    ]
    for p in products:
        feats += aggd(p.ravel())
    return feats


def features(img):
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    half = img[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return [float(v) for v in scale_features(img) + scale_features(half)]


def ssim_cases(img):
    from skimage.metrics import structural_similarity

    def s(a, b):
        return float(
            structural_similarity(
                a, b, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
            )
        )

    return {"offset_0.1": s(img, img + 0.1), "inverted": s(img, 1 - img), "gamma_1.5": s(img, img**1.5)}


def make_images():
    import skimage.data
    from skimage.transform import downscale_local_mean

    gray = downscale_local_mean(skimage.data.camera().astype(float), (4, 4))
    rgb = downscale_local_mean(skimage.data.astronaut().astype(float), (4, 4, 1))
    Image.fromarray(np.round(gray).astype(np.uint8)).save(HERE / IMAGES[0])
    Image.fromarray(np.round(rgb).astype(np.uint8)).save(HERE / IMAGES[1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--write", action="store_true", help="rewrite images and reference JSON")
    args = ap.parse_args()
    if args.write:
        make_images()
    out = {name: {"features": features(load(name)), "ssim": ssim_cases(load(name))} for name in IMAGES}
    text = json.dumps(out, indent=1) + "\n"
    if args.write:
        (HERE / "reference_vectors.json").write_text(text)
    else:
        print(text)


if __name__ == "__main__":
    main()
