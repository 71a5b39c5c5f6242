"""Ground-truth-labeled synthetic particle / non-particle image generator.

Each image is a 2D projection of a 3D template volume pushed through four
stages: (i) structural noise to a target SNR, (ii) contrast transfer
function of a defocused bright-field microscope, (iii) shot/digitization
noise to a second SNR, (iv) Butterworth low-pass. SNR is the ratio of
signal variance to added-noise variance, with the signal variance measured
batch-wide on the clean particle projections so empty (void) images
receive the same absolute noise as everything else.

Determinism: every image draws from its own RNG substream (seed XOR image
index), so parallel generation is bit-identical to serial.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .imgio import ImageStack, LabelTable, NON_PARTICLE, PARTICLE

__all__ = [
    "Volume",
    "CtfParams",
    "SimConfig",
    "TEMPLATE_KINDS",
    "NON_PARTICLE_KINDS",
    "make_template",
    "rotation_matrix_zyz",
    "random_orientation",
    "project",
    "add_noise_to_snr",
    "electron_wavelength",
    "ctf_value",
    "apply_ctf",
    "butterworth_transfer",
    "butterworth_lowpass",
    "simulate_dataset",
]

NON_PARTICLE_KINDS = ("plate", "cylinder", "sphere", "void")
TEMPLATE_KINDS = ("particle",) + NON_PARTICLE_KINDS

_SEED_MASK = (1 << 64) - 1


@dataclass
class Volume:
    """Cubic density volume; values are non-negative, higher = denser."""

    data: np.ndarray  # (side, side, side) float32
    voxel_size: float = 2.0

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or len(set(self.data.shape)) != 1:
            raise ValueError(f"volume must be cubic, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("volume contains non-finite values")
        if self.data.size and self.data.min() < 0:
            raise ValueError("volume densities must be non-negative")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")

    @property
    def side(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class CtfParams:
    """Bright-field contrast transfer function parameters.

    voltage in kV, defocus in um (underfocus positive), spherical
    aberration cs in mm, amplitude contrast as a fraction in [0, 1),
    pixel size in Angstrom.
    """

    voltage: float = 300.0
    defocus: float = 2.0
    cs: float = 2.0
    amplitude_contrast: float = 0.07
    pixel_size: float = 2.0

    def __post_init__(self) -> None:
        if not self.voltage > 0:
            raise ValueError("voltage must be positive")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")
        if not 0.0 <= self.amplitude_contrast < 1.0:
            raise ValueError("amplitude_contrast must lie in [0, 1)")

    @property
    def wavelength(self) -> float:
        """Relativistic electron wavelength in Angstrom."""
        return electron_wavelength(self.voltage * 1e3)


@dataclass(frozen=True)
class SimConfig:
    box: int = 128
    pixel_size: float = 2.0
    n_particles: int = 0
    n_nonparticles: int = 0
    mix: str = "all"
    snr_structural: float = 1.4
    snr_shot: float = 0.05
    butterworth_pass: float = 50.0
    butterworth_stop: float = 20.0
    ctf: CtfParams = field(default_factory=CtfParams)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.box < 32:
            raise ValueError("box must be at least 32 pixels")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")
        if self.n_particles < 0 or self.n_nonparticles < 0:
            raise ValueError("image counts must be non-negative")
        if self.n_particles + self.n_nonparticles < 1:
            raise ValueError("dataset must contain at least one image")
        if self.mix not in NON_PARTICLE_KINDS + ("all",):
            raise ValueError(f"mix must be one of {NON_PARTICLE_KINDS + ('all',)}")
        if not (self.snr_structural > 0 and self.snr_shot > 0):
            raise ValueError("SNR targets must be positive")
        if not self.butterworth_pass > self.butterworth_stop:
            raise ValueError("butterworth_pass must exceed butterworth_stop (in Angstrom)")


# ---------------------------------------------------------------------------
# Template volumes
# ---------------------------------------------------------------------------

def make_template(kind: str, side: int, seed: int = 0) -> Volume:
    """Build a template volume with interior density 1.0.

    particle: seeded union of 12 overlapping solid spheres (radii 8-20% of
    the side) packed inside a centered ball of radius 40% of the side - a
    compact, asymmetric, internally structured stand-in density. plate:
    slab of thickness 10%. cylinder: radius 20%, length 70%. sphere: ball
    of radius 30%. void: all zero.
    """
    if kind not in TEMPLATE_KINDS:
        raise ValueError(f"unknown template kind {kind!r}")
    if side < 32:
        raise ValueError("template side must be at least 32 voxels")
    c = (side - 1) / 2.0
    zz, yy, xx = np.mgrid[0:side, 0:side, 0:side].astype(np.float64)
    data = np.zeros((side, side, side), dtype=np.float32)

    if kind == "void":
        pass
    elif kind == "plate":
        data[np.abs(zz - c) <= 0.05 * side] = 1.0
    elif kind == "cylinder":
        in_radius = (xx - c) ** 2 + (yy - c) ** 2 <= (0.2 * side) ** 2
        data[in_radius & (np.abs(zz - c) <= 0.35 * side)] = 1.0
    elif kind == "sphere":
        r2 = (xx - c) ** 2 + (yy - c) ** 2 + (zz - c) ** 2
        data[r2 <= (0.3 * side) ** 2] = 1.0
    else:  # particle
        rng = np.random.default_rng(seed & _SEED_MASK)
        envelope = 0.4 * side
        for _ in range(12):
            radius = rng.uniform(0.08, 0.20) * side
            # uniform center inside the ball of radius envelope - radius
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            dist = (envelope - radius) * rng.random() ** (1.0 / 3.0)
            cz, cy, cx = c + dist * direction
            r2 = (xx - cx) ** 2 + (yy - cy) ** 2 + (zz - cz) ** 2
            data[r2 <= radius**2] = 1.0
    return Volume(data=data)


# ---------------------------------------------------------------------------
# Orientation and projection
# ---------------------------------------------------------------------------

def rotation_matrix_zyz(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rotation matrix Rz(alpha) @ Ry(beta) @ Rz(gamma) acting on (x, y, z)."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    cg, sg = math.cos(gamma), math.sin(gamma)
    rz_a = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ry_b = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rz_g = np.array([[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]])
    return rz_a @ ry_b @ rz_g


def _matrix_to_zyz(r: np.ndarray) -> tuple[float, float, float]:
    beta = math.atan2(math.hypot(r[0, 2], r[1, 2]), r[2, 2])
    if math.hypot(r[0, 2], r[1, 2]) < 1e-12:
        # Gimbal: only alpha+gamma is determined; put it all in alpha.
        alpha = math.atan2(r[1, 0], r[0, 0]) if r[2, 2] > 0 else math.atan2(-r[1, 0], -r[0, 0])
        return alpha, beta, 0.0
    alpha = math.atan2(r[1, 2], r[0, 2])
    gamma = math.atan2(r[2, 1], -r[2, 0])
    return alpha, beta, gamma


def random_orientation(rng: np.random.Generator) -> tuple[float, float, float]:
    """Haar-uniform rotation as ZYZ Euler angles, via a uniform quaternion."""
    u1, u2, u3 = rng.random(3)
    qw = math.sqrt(1 - u1) * math.sin(2 * math.pi * u2)
    qx = math.sqrt(1 - u1) * math.cos(2 * math.pi * u2)
    qy = math.sqrt(u1) * math.sin(2 * math.pi * u3)
    qz = math.sqrt(u1) * math.cos(2 * math.pi * u3)
    r = np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ]
    )
    return _matrix_to_zyz(r)


@njit(cache=True)
def _project_rotated(vol, m, out):  # pragma: no cover - exercised via project()
    """Trilinear-resample vol under inverse rotation m and sum along z."""
    n = vol.shape[0]
    c = (n - 1) / 2.0
    for i in range(n):
        for j in range(n):
            x = j - c
            y = i - c
            acc = 0.0
            for k in range(n):
                z = k - c
                sx = m[0, 0] * x + m[0, 1] * y + m[0, 2] * z + c
                sy = m[1, 0] * x + m[1, 1] * y + m[1, 2] * z + c
                sz = m[2, 0] * x + m[2, 1] * y + m[2, 2] * z + c
                if sx < 0.0 or sy < 0.0 or sz < 0.0 or sx > n - 1 or sy > n - 1 or sz > n - 1:
                    continue
                x0 = int(math.floor(sx))
                y0 = int(math.floor(sy))
                z0 = int(math.floor(sz))
                x1 = min(x0 + 1, n - 1)
                y1 = min(y0 + 1, n - 1)
                z1 = min(z0 + 1, n - 1)
                fx = sx - x0
                fy = sy - y0
                fz = sz - z0
                c00 = vol[z0, y0, x0] * (1 - fx) + vol[z0, y0, x1] * fx
                c01 = vol[z0, y1, x0] * (1 - fx) + vol[z0, y1, x1] * fx
                c10 = vol[z1, y0, x0] * (1 - fx) + vol[z1, y0, x1] * fx
                c11 = vol[z1, y1, x0] * (1 - fx) + vol[z1, y1, x1] * fx
                acc += (c00 * (1 - fy) + c01 * fy) * (1 - fz) + (c10 * (1 - fy) + c11 * fy) * fz
            out[i, j] = acc


def project(vol: Volume, orientation: tuple[float, float, float]) -> np.ndarray:
    """Rotate by the ZYZ Euler triple (trilinear, out-of-bounds 0) and sum
    along z. The output box equals the volume side."""
    alpha, beta, gamma = (float(a) for a in orientation)
    r = rotation_matrix_zyz(alpha, beta, gamma)
    out = np.zeros((vol.side, vol.side), dtype=np.float64)
    # Sampling applies the inverse rotation to output coordinates.
    _project_rotated(vol.data, np.ascontiguousarray(r.T), out)
    return out


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

def add_noise_to_snr(image, target_snr: float, signal_variance: float, rng) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise of variance signal_variance/target_snr.

    The signal variance is supplied by the caller (batch-level), so empty
    images receive the same absolute noise as structured ones.
    """
    if not target_snr > 0:
        raise ValueError("target_snr must be positive")
    if signal_variance < 0:
        raise ValueError("signal_variance must be non-negative")
    img = np.asarray(image, dtype=np.float64)
    sigma = math.sqrt(signal_variance / target_snr)
    return img + rng.normal(0.0, sigma, size=img.shape)


# ---------------------------------------------------------------------------
# Contrast transfer function
# ---------------------------------------------------------------------------

def electron_wavelength(voltage_volts: float) -> float:
    """Relativistic electron wavelength in Angstrom for voltage in volts."""
    if not voltage_volts > 0:
        raise ValueError("voltage must be positive")
    return 12.2643 / math.sqrt(voltage_volts * (1.0 + 0.97845e-6 * voltage_volts))


def ctf_value(f, p: CtfParams):
    """CTF(f) = -(sqrt(1 - A^2) sin(chi) + A cos(chi)) at |f| in 1/Angstrom,
    with chi(f) = pi lambda dz f^2 - (pi/2) Cs lambda^3 f^4 (underfocus
    positive)."""
    f = np.asarray(f, dtype=np.float64)
    lam = p.wavelength
    dz = p.defocus * 1e4  # um -> A
    cs = p.cs * 1e7  # mm -> A
    chi = math.pi * lam * dz * f**2 - (math.pi / 2.0) * cs * lam**3 * f**4
    a = p.amplitude_contrast
    return -(math.sqrt(1.0 - a * a) * np.sin(chi) + a * np.cos(chi))


def apply_ctf(image, p: CtfParams) -> np.ndarray:
    """Multiply the image spectrum pointwise by the CTF; returns the real part."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ValueError(f"apply_ctf requires a square image, got {img.shape}")
    n = img.shape[0]
    freq = np.fft.fftfreq(n, d=p.pixel_size)
    radius = np.hypot(freq[:, None], freq[None, :])
    return np.fft.ifft2(np.fft.fft2(img) * ctf_value(radius, p)).real


# ---------------------------------------------------------------------------
# Butterworth low-pass
# ---------------------------------------------------------------------------

_BW_EPS = 0.882
_BW_A = 10.624


def _butterworth_constants(pass_a: float, stop_a: float) -> tuple[float, float]:
    f_pass = 1.0 / pass_a
    f_stop = 1.0 / stop_a
    order = (
        2.0
        * math.log10(_BW_EPS / math.sqrt(_BW_A**2 - 1.0))
        / math.log10(f_pass / f_stop)
    )
    f_rad = f_pass / _BW_EPS ** (2.0 / order)
    return order, f_rad


def butterworth_transfer(f, pass_a: float, stop_a: float):
    """H(f) = 1/sqrt(1 + (f/f_rad)^n); gain 1/sqrt(1+eps^2) at the pass
    radius 1/pass_a and 1/a at the stop radius 1/stop_a."""
    if not pass_a > stop_a:
        raise ValueError("pass radius (A) must exceed stop radius (A)")
    order, f_rad = _butterworth_constants(pass_a, stop_a)
    f = np.asarray(f, dtype=np.float64)
    return 1.0 / np.sqrt(1.0 + (f / f_rad) ** order)


def butterworth_lowpass(image, pass_a: float, stop_a: float, pixel_size: float) -> np.ndarray:
    """Fourier low-pass between the pass/stop radii given in Angstrom."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("butterworth_lowpass expects a 2D image")
    if not stop_a > 2.0 * pixel_size:
        raise ValueError(
            f"stop band {stop_a} A must lie inside Nyquist (> {2.0 * pixel_size} A)"
        )
    ny = np.fft.fftfreq(img.shape[0], d=pixel_size)
    nx = np.fft.fftfreq(img.shape[1], d=pixel_size)
    radius = np.hypot(ny[:, None], nx[None, :])
    return np.fft.ifft2(np.fft.fft2(img) * butterworth_transfer(radius, pass_a, stop_a)).real


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

def _image_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng((seed ^ index) & _SEED_MASK)


def simulate_dataset(cfg: SimConfig) -> tuple[ImageStack, LabelTable]:
    """Generate the labeled stack: particles first, then non-particles.

    Per image: pick a template (non-particles uniform over the four kinds
    when mix="all"), project at a Haar-uniform orientation, then add
    structural noise, modulate with the CTF, add shot noise, and low-pass.
    After the CTF stage the image is negated so dense regions stay bright
    (the CTF's first lobe is negative); the toolkit convention is higher
    value = higher density.
    """
    ctf = CtfParams(
        voltage=cfg.ctf.voltage,
        defocus=cfg.ctf.defocus,
        cs=cfg.ctf.cs,
        amplitude_contrast=cfg.ctf.amplitude_contrast,
        pixel_size=cfg.pixel_size,
    )
    templates = {"particle": make_template("particle", cfg.box, seed=cfg.seed)}
    needed = NON_PARTICLE_KINDS if cfg.mix == "all" else (cfg.mix,)
    if cfg.n_nonparticles:
        for kind in needed:
            templates[kind] = make_template(kind, cfg.box, seed=cfg.seed)

    n_total = cfg.n_particles + cfg.n_nonparticles
    labels = LabelTable(
        labels={
            i: (PARTICLE if i < cfg.n_particles else NON_PARTICLE) for i in range(n_total)
        }
    )

    # Pass 1: clean projections; each image's substream draws its template
    # choice and orientation, and is kept for the later noise draws.
    stack = np.empty((n_total, cfg.box, cfg.box), dtype=np.float32)
    projections = np.empty_like(stack)
    rngs = []
    for i in range(n_total):
        rng = _image_rng(cfg.seed, i)
        if i < cfg.n_particles:
            template = templates["particle"]
        elif cfg.mix == "all":
            template = templates[NON_PARTICLE_KINDS[rng.integers(4)]]
        else:
            template = templates[cfg.mix]
        projections[i] = project(template, random_orientation(rng))
        rngs.append(rng)

    if cfg.n_particles:
        signal_variance = float(
            np.mean([projections[i].astype(np.float64).var() for i in range(cfg.n_particles)])
        )
    else:
        signal_variance = float(
            np.mean([p.astype(np.float64).var() for p in projections])
        )

    # Pass 2: the four pipeline stages.
    for i in range(n_total):
        img = projections[i].astype(np.float64)
        img = add_noise_to_snr(img, cfg.snr_structural, signal_variance, rngs[i])
        img = -apply_ctf(img, ctf)  # negation restores bright-density contrast
        img = add_noise_to_snr(img, cfg.snr_shot, signal_variance, rngs[i])
        img = butterworth_lowpass(
            img, cfg.butterworth_pass, cfg.butterworth_stop, cfg.pixel_size
        )
        stack[i] = img.astype(np.float32)

    return ImageStack(data=stack, pixel_size=cfg.pixel_size), labels
