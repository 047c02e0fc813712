"""Synthetic enlarged-spleen phantoms with analytic ground truth.

Each phantom is a smoothly deformed ellipsoid (the spleen) on a uniform
background, plus optional distractor blobs, a low-order multiplicative
bias field, and additive Gaussian noise. The mask is the analytic spleen
indicator sampled at voxel centers, before bias and noise.

Volumes are calibrated in cubic centimeters: the base ellipsoid is scaled
so the deformed shape's analytic volume equals ``target_volume_cc``
(the radial perturbation is renormalized by angular quadrature).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volio import ContrastMode, Mask, Volume, write_mvol

VOLUME_CC_MIN = 368.0
VOLUME_CC_MAX = 5670.0
VOLUME_CC_MEAN = 1881.0
VOLUME_CC_STD = 1219.0


class PhantomError(Exception):
    pass


class VolumeRangeError(PhantomError):
    """target_volume_cc outside the cohort range without an override."""


class InfeasibleGeometryError(PhantomError):
    """The spleen cannot fit in the grid with the required margin."""


@dataclass
class PhantomConfig:
    grid_size: int = 64
    spacing_mm: float = 4.0
    target_volume_cc: float = VOLUME_CC_MEAN
    contrast_mode: ContrastMode = ContrastMode.T2
    bias_strength: float = 0.2
    noise_sigma: float = 0.05
    distractor_count: int = 3
    seed: int = 0
    deform_amplitude: float = 0.12
    anisotropy: float = 0.1
    allow_volume_override: bool = False

    def __post_init__(self):
        self.contrast_mode = ContrastMode(self.contrast_mode)
        if self.grid_size < 8:
            raise ValueError(f"grid_size too small: {self.grid_size}")
        if self.spacing_mm <= 0:
            raise ValueError("spacing_mm must be positive")
        if not (0.0 <= self.bias_strength <= 1.0):
            raise ValueError("bias_strength must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.distractor_count < 0:
            raise ValueError("distractor_count must be >= 0")
        if not (0.0 <= self.deform_amplitude <= 0.15):
            raise ValueError("deform_amplitude must be in [0, 0.15]")
        if not (0.0 <= self.anisotropy <= 0.3):
            raise ValueError("anisotropy must be in [0, 0.3]")
        if not self.allow_volume_override and not (
            VOLUME_CC_MIN <= self.target_volume_cc <= VOLUME_CC_MAX
        ):
            raise VolumeRangeError(
                f"target_volume_cc={self.target_volume_cc} outside "
                f"[{VOLUME_CC_MIN}, {VOLUME_CC_MAX}]"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["contrast_mode"] = self.contrast_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        return cls(**d)


@dataclass
class PhantomScan:
    volume: Volume
    mask: Mask
    analytic_volume_cc: float
    config: PhantomConfig


def feasible_max_volume_cc(grid_size: int, spacing_mm: float,
                           deform_amplitude: float = 0.12,
                           anisotropy: float = 0.1) -> float:
    """Largest target volume guaranteed to fit for any RNG draw.

    Bounds the worst case: the longest semi-axis stretched by the maximum
    anisotropy ratio and radial perturbation must keep a 2.75-voxel margin
    to every face (the extra quarter voxel absorbs the volume-renormalization
    scale, which can exceed 1 when the perturbation shrinks the mean radius),
    while the other two ratios shrink the volume.
    """
    half_extent = (grid_size / 2.0 - 2.75) * spacing_mm
    a_max = half_extent / (1.0 + deform_amplitude) / (1.0 + anisotropy)
    ratio_min = (1.0 - anisotropy) ** 2
    return (4.0 / 3.0) * np.pi * a_max**3 * ratio_min / 1000.0


def _unit_sphere_quadrature(n_theta: int = 64, n_phi: int = 128):
    theta = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    phi = (np.arange(n_phi) + 0.5) * 2.0 * np.pi / n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    u = np.stack([np.cos(tt), np.sin(tt) * np.sin(pp), np.sin(tt) * np.cos(pp)], axis=-1)
    w = np.sin(tt)
    return u.reshape(-1, 3), (w / w.sum()).reshape(-1)


def _radial_perturbation(u: np.ndarray, freqs: np.ndarray, phases: np.ndarray,
                         amps: np.ndarray) -> np.ndarray:
    """Low-frequency sinusoidal field on unit directions u (..., 3)."""
    out = np.zeros(u.shape[:-1])
    for k in range(len(amps)):
        out = out + amps[k] * np.sin(u @ freqs[k] + phases[k])
    return out


def generate_phantom(config: PhantomConfig) -> PhantomScan:
    """Generate one phantom scan; bit-identical for identical config."""
    rng = np.random.default_rng(np.uint64(config.seed))
    g, sp = config.grid_size, config.spacing_mm

    # Ellipsoid shape: semi-axis ratios and deformation field, then a global
    # scale chosen so the deformed analytic volume equals the target.
    ratios = 1.0 + rng.uniform(-config.anisotropy, config.anisotropy, size=3)
    n_modes = 2
    freqs = rng.uniform(1.5, 3.0, size=(n_modes, 3)) * rng.choice([-1.0, 1.0], size=(n_modes, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_modes)
    if config.deform_amplitude > 0:
        raw = rng.uniform(0.5, 1.0, size=n_modes)
        amps = config.deform_amplitude * raw / raw.sum()
    else:
        amps = np.zeros(n_modes)

    u_quad, w_quad = _unit_sphere_quadrature()
    delta_quad = _radial_perturbation(u_quad, freqs, phases, amps)
    volume_factor = float(np.sum(w_quad * (1.0 + delta_quad) ** 3))

    target_mm3 = config.target_volume_cc * 1000.0
    base = (target_mm3 / ((4.0 / 3.0) * np.pi * np.prod(ratios) * volume_factor)) ** (1.0 / 3.0)
    semi_axes = base * ratios  # mm, (z, y, x)

    delta_max = float(np.max(np.abs(delta_quad))) if config.deform_amplitude > 0 else 0.0
    reach = semi_axes * (1.0 + delta_max)
    half_extent = (g / 2.0 - 2.0) * sp
    if np.any(reach > half_extent):
        raise InfeasibleGeometryError(
            f"spleen reach {reach.max():.1f} mm exceeds the "
            f"{half_extent:.1f} mm half extent of a {g}^3 grid at {sp} mm "
            f"(target {config.target_volume_cc} cc)"
        )

    # Voxelize at voxel centers in normalized ellipsoid coordinates.
    coords = (np.arange(g) + 0.5) * sp - g * sp / 2.0
    zz, yy, xx = np.meshgrid(coords, coords, coords, indexing="ij")
    un = np.stack([zz / semi_axes[0], yy / semi_axes[1], xx / semi_axes[2]], axis=-1)
    rho = np.linalg.norm(un, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        u_hat = np.where(rho[..., None] > 0, un / np.maximum(rho, 1e-12)[..., None], 0.0)
    delta = _radial_perturbation(u_hat, freqs, phases, amps)
    mask_arr = (rho <= 1.0 + delta).astype(np.uint8)

    # Intensities: T2-like spleen bright, T1-like spleen dark.
    if config.contrast_mode is ContrastMode.T2:
        bg_val, fg_val = 0.25, 0.80
    else:
        bg_val, fg_val = 0.80, 0.25
    contrast = abs(fg_val - bg_val)
    img = np.full((g, g, g), bg_val, dtype=np.float64)
    img[mask_arr == 1] = fg_val

    # Distractor blobs outside the spleen, opposite polarity half the time.
    if config.distractor_count > 0:
        dist_mm = ndimage.distance_transform_edt(1 - mask_arr, sampling=(sp, sp, sp))
        for _ in range(config.distractor_count):
            r_mm = rng.uniform(1.5, 3.5) * sp
            opposite = rng.random() < 0.5
            for _attempt in range(100):
                c_idx = rng.uniform(3.0, g - 3.0, size=3)
                c_mm = (c_idx + 0.5) * sp - g * sp / 2.0
                near = tuple(np.clip(np.round(c_idx).astype(int), 0, g - 1))
                if dist_mm[near] > r_mm + 2.0 * sp:
                    blob = (zz - c_mm[0]) ** 2 + (yy - c_mm[1]) ** 2 + (xx - c_mm[2]) ** 2 <= r_mm**2
                    blob &= mask_arr == 0
                    val = bg_val - (fg_val - bg_val) * 0.5 if opposite else fg_val
                    img[blob] = max(val, 0.02)
                    break

    # Multiplicative quadratic bias field with peak deviation +-bias_strength.
    if config.bias_strength > 0:
        nz, ny, nx = (zz / (g * sp / 2.0), yy / (g * sp / 2.0), xx / (g * sp / 2.0))
        terms = [np.ones_like(nz), nz, ny, nx, nz * ny, nz * nx, ny * nx,
                 nz**2, ny**2, nx**2]
        coef = rng.normal(size=len(terms))
        coef[0] = 0.0
        q = sum(c * t for c, t in zip(coef, terms))
        peak = np.max(np.abs(q))
        if peak > 0:
            img = img * (1.0 + config.bias_strength * q / peak)

    # Additive Gaussian noise, scaled by the nominal contrast, applied last.
    if config.noise_sigma > 0:
        img = img + rng.normal(0.0, config.noise_sigma * contrast, size=img.shape)

    spacing = (sp, sp, sp)
    return PhantomScan(
        volume=Volume(img.astype(np.float32), spacing, config.contrast_mode),
        mask=Mask(mask_arr, spacing),
        analytic_volume_cc=float(config.target_volume_cc),
        config=config,
    )


def _split_counts(n: int, mode_split: tuple[int, int]) -> int:
    """Number of T1 scans out of n for a T1:T2 ratio."""
    a, b = mode_split
    return int(round(n * a / (a + b)))


def sample_cohort(n_train: int, n_test: int, mode_split: tuple[int, int] = (24, 21),
                  seed: int = 0, grid_size: int = 64, spacing_mm: float = 4.0,
                  bias_strength: float = 0.2, noise_sigma: float = 0.05,
                  distractor_count: int = 3) -> tuple[list[PhantomScan], dict]:
    """Draw a train/test cohort with clipped-normal target volumes.

    Volumes follow a normal (mean 1881 cc, std 1219 cc) clipped to the
    cohort range and additionally to the largest volume guaranteed to fit
    the configured grid. Contrast modes are assigned per the T1:T2 ratio
    within each split. Returns the scans plus a JSON-ready manifest.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    master = np.random.default_rng(np.uint64(seed))
    total = n_train + n_test
    vol_hi = min(VOLUME_CC_MAX, feasible_max_volume_cc(grid_size, spacing_mm))
    volumes = np.clip(
        master.normal(VOLUME_CC_MEAN, VOLUME_CC_STD, size=total), VOLUME_CC_MIN, vol_hi
    )
    scan_seeds = master.integers(0, 2**63, size=total, dtype=np.uint64)

    t1_train = _split_counts(n_train, mode_split)
    t1_test = _split_counts(n_test, mode_split)
    entries, scans = [], []
    for i in range(total):
        in_train = i < n_train
        j = i if in_train else i - n_train
        t1_cut = t1_train if in_train else t1_test
        contrast = ContrastMode.T1 if j < t1_cut else ContrastMode.T2
        cfg = PhantomConfig(
            grid_size=grid_size, spacing_mm=spacing_mm,
            target_volume_cc=float(volumes[i]), contrast_mode=contrast,
            bias_strength=bias_strength, noise_sigma=noise_sigma,
            distractor_count=distractor_count, seed=int(scan_seeds[i]),
        )
        scans.append(generate_phantom(cfg))
        entries.append({
            "id": f"scan-{i:03d}",
            "split": "train" if in_train else "test",
            "contrast": contrast.value,
            "target_volume_cc": float(volumes[i]),
            "config": cfg.to_dict(),
        })
    manifest = {
        "seed": int(seed),
        "n_train": int(n_train),
        "n_test": int(n_test),
        "grid_size": int(grid_size),
        "scans": entries,
    }
    return scans, manifest


def write_cohort(scans: list[PhantomScan], manifest: dict, out_dir) -> Path:
    """Write scans as MVOL pairs plus manifest.json; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for scan, entry in zip(scans, manifest["scans"]):
        vol_name = f"{entry['id']}_vol.mvol"
        mask_name = f"{entry['id']}_mask.mvol"
        write_mvol(scan.volume, out / vol_name)
        write_mvol(scan.mask, out / mask_name)
        entry["volume"] = vol_name
        entry["mask"] = mask_name
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_manifest(path) -> dict:
    manifest = json.loads(Path(path).read_text())
    manifest["_dir"] = str(Path(path).parent)
    return manifest


def regenerate_scan(entry: dict) -> PhantomScan:
    """Rebuild a scan from its manifest entry (phantoms are pure functions)."""
    return generate_phantom(PhantomConfig.from_dict(entry["config"]))
