"""The 12-scalar feature vector computed from one boxed image.

Seven feature families: mean/variance, five intensity quantiles, Otsu
foreground pixel count, Canny edge-segment count, radially weighted average
intensity, phase-symmetry blob count, and dark-dot dispersion. Images are
assumed to follow the bright-density convention (higher value = denser).

All functions are pure; feature extraction is embarrassingly parallel
across images.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

__all__ = [
    "FEATURE_NAMES",
    "PhaseSymParams",
    "otsu_threshold",
    "otsu_foreground_count",
    "canny_edge_count",
    "radial_weighted_intensity",
    "phase_symmetry_map",
    "blob_count",
    "dark_dot_dispersion",
    "extract_features",
]

# Canonical feature order; a compatibility contract with saved models and
# the feature CSV header. Do not reorder.
FEATURE_NAMES = (
    "f_mean",
    "f_var",
    "f_q0",
    "f_q10",
    "f_q50",
    "f_q90",
    "f_q100",
    "f_otsu_fg",
    "f_canny_edges",
    "f_radial",
    "f_blobs",
    "f_darkdot",
)

_EIGHT_CONN = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class PhaseSymParams:
    """Log-Gabor filter-bank settings for the phase-symmetry transform."""

    n_scales: int = 5
    n_orientations: int = 6
    min_wavelength: float = 3.0
    scale_multiplier: float = 2.1
    sigma_on_f: float = 0.55
    noise_k: float = 2.0

    def __post_init__(self) -> None:
        if self.n_scales < 1 or self.n_orientations < 1:
            raise ValueError("n_scales and n_orientations must be >= 1")
        for name in ("min_wavelength", "scale_multiplier", "sigma_on_f", "noise_k"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _as_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"image must be 2D, got {img.ndim}D")
    if not np.isfinite(img).all():
        raise ValueError("image contains non-finite values")
    return img


# ---------------------------------------------------------------------------
# Otsu thresholding
# ---------------------------------------------------------------------------

def otsu_threshold(image) -> float:
    """Bin-edge threshold maximizing inter-class variance.

    The histogram has 256 equal bins spanning [min, max]; candidate
    thresholds are the 256 lower bin edges, with foreground = values >=
    threshold. A constant image returns its own value.
    """
    x = _as_image(image).ravel()
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return lo
    edges = lo + (hi - lo) * np.arange(257) / 256.0
    counts, _ = np.histogram(x, bins=edges)
    sums, _ = np.histogram(x, bins=edges, weights=x)
    # Prefix sums give exact class statistics: every pixel in a bin lies
    # entirely on one side of any bin edge.
    n0 = np.concatenate(([0.0], np.cumsum(counts)))[:256]
    s0 = np.concatenate(([0.0], np.cumsum(sums)))[:256]
    n1 = x.size - n0
    s1 = x.sum() - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = s0 / n0
        mu1 = s1 / n1
        between = n0 * n1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = 0.0
    k = int(np.argmax(between))
    return float(edges[k])


def otsu_foreground_count(image) -> int:
    """Pixels at or above the Otsu threshold; 0 for a constant image."""
    x = _as_image(image)
    if x.max() == x.min():
        return 0
    return int(np.count_nonzero(x >= otsu_threshold(x)))


# ---------------------------------------------------------------------------
# Canny edge-segment count
# ---------------------------------------------------------------------------

def _nonmax_suppress(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are >= both neighbors along the gradient direction."""
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")
    center = padded[1 : h + 1, 1 : w + 1]

    def shifted(di: int, dj: int) -> np.ndarray:
        return padded[1 + di : h + 1 + di, 1 + dj : w + 1 + dj]

    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    keep = np.zeros_like(mag, dtype=bool)
    sectors = (
        ((angle < 22.5) | (angle >= 157.5), (0, -1), (0, 1)),
        ((angle >= 22.5) & (angle < 67.5), (-1, 1), (1, -1)),
        ((angle >= 67.5) & (angle < 112.5), (-1, 0), (1, 0)),
        ((angle >= 112.5) & (angle < 157.5), (-1, -1), (1, 1)),
    )
    for mask, a, b in sectors:
        keep |= mask & (center >= shifted(*a)) & (center >= shifted(*b))
    return keep & (mag > 0)


def canny_edge_count(image) -> int:
    """Number of 8-connected edge segments after Canny detection.

    Gaussian presmooth (sigma 1.4), Sobel gradients, non-maximum
    suppression, hysteresis with high = 90th percentile of nonzero gradient
    magnitudes and low = 0.4 * high.
    """
    img = _as_image(image)
    smoothed = ndimage.gaussian_filter(img, sigma=1.4, truncate=3.0, mode="nearest")
    gx = ndimage.sobel(smoothed, axis=1, mode="nearest")
    gy = ndimage.sobel(smoothed, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    nonzero = mag[mag > 0]
    if nonzero.size == 0:
        return 0
    high = np.percentile(nonzero, 90)
    low = 0.4 * high

    kept = _nonmax_suppress(mag, gx, gy)
    strong = kept & (mag >= high)
    if not strong.any():
        return 0
    weak = kept & (mag >= low)
    labels, _ = ndimage.label(weak, structure=_EIGHT_CONN)
    segment_ids = np.unique(labels[strong])
    return int(np.count_nonzero(segment_ids))


# ---------------------------------------------------------------------------
# Radially weighted average intensity
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _radial_weights(shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    d = np.hypot(yy - cy, xx - cx)
    return 1.0 / (1.0 + d)


def radial_weighted_intensity(image) -> float:
    """Weighted mean intensity with weight 1/(1 + distance from center)."""
    img = _as_image(image)
    w = _radial_weights(img.shape)
    return float((w * img).sum() / w.sum())


# ---------------------------------------------------------------------------
# Phase symmetry / blob detection
# ---------------------------------------------------------------------------

# Ratio of orientation step to the angular Gaussian sigma; the classic
# filter-bank default.
_D_THETA_ON_SIGMA = 1.3
_SYM_EPSILON = 1e-4
# Sigmoid weighting that suppresses responses confined to a single scale
# (e.g. the spurious large-scale symmetry at the midpoint of a feature
# pair); standard frequency-spread cutoff/gain.
_SPREAD_CUTOFF = 0.5
_SPREAD_GAIN = 10.0


@lru_cache(maxsize=4)
def _log_gabor_bank(shape: tuple[int, int], p: PhaseSymParams):
    """Radial (per scale) and angular (per orientation) transfer functions."""
    h, w = shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.hypot(fx, fy)
    radius[0, 0] = 1.0  # dodge log(0); the DC gain is zeroed below
    theta = np.arctan2(-fy, fx)
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    radials = []
    log_sigma = np.log(p.sigma_on_f)
    for s in range(p.n_scales):
        f0 = 1.0 / (p.min_wavelength * p.scale_multiplier**s)
        g = np.exp(-np.log(radius / f0) ** 2 / (2.0 * log_sigma**2))
        g[0, 0] = 0.0
        radials.append(g)

    sigma_theta = (np.pi / p.n_orientations) / _D_THETA_ON_SIGMA
    spreads = []
    for o in range(p.n_orientations):
        phi = o * np.pi / p.n_orientations
        ds = sin_t * np.cos(phi) - cos_t * np.sin(phi)
        dc = cos_t * np.cos(phi) + sin_t * np.sin(phi)
        dtheta = np.abs(np.arctan2(ds, dc))
        spreads.append(np.exp(-(dtheta**2) / (2.0 * sigma_theta**2)))
    return radials, spreads


def phase_symmetry_map(image, params: PhaseSymParams = PhaseSymParams()) -> np.ndarray:
    """Contrast- and rotation-invariant local-symmetry measure in [0, 1).

    Per orientation, quadrature log-Gabor responses (e, o) accumulate the
    symmetry energy sum_s(|e| - |o|), weighted by the frequency-spread
    sigmoid and clamped at a noise threshold T; the pooled result is
    normalized by the total amplitude sum(sqrt(e^2 + o^2)) + eps. T sums
    per-scale noise levels noise_k * median(amplitude at that scale) /
    0.6745, so the binarized map is invariant to positive rescaling of the
    image and weak single-scale responses (filter tails, pair midpoints)
    are suppressed to exactly zero.
    """
    img = _as_image(image)
    h, w = img.shape
    if h != w:
        raise ValueError(f"phase symmetry requires a square image, got {img.shape}")
    radials, spreads = _log_gabor_bank((h, w), params)
    spectrum = np.fft.fft2(img)

    responses = [
        [np.fft.ifft2(spectrum * (radial * spread)) for spread in spreads]
        for radial in radials
    ]
    amplitudes = [[np.abs(eo) for eo in row] for row in responses]
    threshold = sum(
        params.noise_k * np.median(np.stack(row)) / 0.6745 for row in amplitudes
    )

    numerator = np.zeros((h, w))
    denominator = np.zeros((h, w))
    for o in range(params.n_orientations):
        energy = np.zeros((h, w))
        sum_amp = np.zeros((h, w))
        max_amp = np.zeros((h, w))
        for s in range(params.n_scales):
            eo = responses[s][o]
            energy += np.abs(eo.real) - np.abs(eo.imag)
            sum_amp += amplitudes[s][o]
            max_amp = np.maximum(max_amp, amplitudes[s][o])
        if params.n_scales > 1:
            spread_frac = (sum_amp / (max_amp + _SYM_EPSILON) - 1.0) / (params.n_scales - 1)
        else:
            spread_frac = np.ones((h, w))
        weight = 1.0 / (1.0 + np.exp(_SPREAD_GAIN * (_SPREAD_CUTOFF - spread_frac)))
        numerator += np.maximum(weight * energy - threshold, 0.0)
        denominator += sum_amp
    return numerator / (denominator + _SYM_EPSILON)


def blob_count(image, params: PhaseSymParams = PhaseSymParams()) -> int:
    """Locally symmetric areas: Otsu-binarized symmetry map components.

    8-connected foreground components with area >= 4 px are counted.
    """
    sym = phase_symmetry_map(image, params)
    if sym.max() == sym.min():
        return 0
    fg = sym >= otsu_threshold(sym)
    labels, n = ndimage.label(fg, structure=_EIGHT_CONN)
    if n == 0:
        return 0
    areas = np.bincount(labels.ravel())[1:]
    return int(np.count_nonzero(areas >= 4))


# ---------------------------------------------------------------------------
# Dark dot dispersion
# ---------------------------------------------------------------------------

def dark_dot_dispersion(image, densest_high: bool = True) -> float:
    """Spread of the densest connected spots after Gaussian smoothing.

    The image is smoothed with a sigma=2 Gaussian and binarized at the
    95%-quantile; connected regions are dots, each dot's center is the mean
    of its pixel coordinates, and the dispersion is the mean squared
    distance of centers from their centroid. Fewer than two dots give 0.

    ``densest_high=False`` flips polarity for raw-micrograph-convention
    data where density is dark.
    """
    img = _as_image(image)
    if not densest_high:
        img = -img
    smoothed = ndimage.gaussian_filter(img, sigma=2.0, truncate=3.0, mode="nearest")
    if smoothed.max() == smoothed.min():
        return 0.0
    threshold = np.quantile(smoothed, 0.95)
    fg = smoothed >= threshold
    labels, n = ndimage.label(fg, structure=_EIGHT_CONN)
    if n <= 1:
        return 0.0
    centers = np.asarray(ndimage.center_of_mass(fg, labels, range(1, n + 1)))
    centroid = centers.mean(axis=0)
    return float(np.mean(np.sum((centers - centroid) ** 2, axis=1)))


# ---------------------------------------------------------------------------
# Full vector
# ---------------------------------------------------------------------------

def extract_features(image, params: PhaseSymParams = PhaseSymParams()) -> np.ndarray:
    """Compute the canonical 12-entry feature vector (FEATURE_NAMES order)."""
    img = _as_image(image)
    flat = img.ravel()
    quantiles = np.quantile(flat, [0.0, 0.1, 0.5, 0.9, 1.0])
    return np.array(
        [
            flat.mean(),
            flat.var(),
            quantiles[0],
            quantiles[1],
            quantiles[2],
            quantiles[3],
            quantiles[4],
            float(otsu_foreground_count(img)),
            float(canny_edge_count(img)),
            radial_weighted_intensity(img),
            float(blob_count(img, params)),
            dark_dot_dispersion(img),
        ],
        dtype=np.float64,
    )
