"""
Datagen service - benchmark sequence generation and dataset persistence
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from inode_lab.core.config import settings
from inode_lab.core.exceptions import (
    DataGenerationError,
    FormatError,
    IntegrationError,
    MissingArtifactError,
)
from inode_lab.core.storage import read_container, write_container
from inode_lab.models.dataset import Dataset
from inode_lab.numerics.odeint import integrate
from inode_lab.schemas.dataset import SPLITS, DatasetManifest, GenConfig
from inode_lab.schemas.solver import SolverSpec, TimeGrid

logger = logging.getLogger(__name__)

LV_SUBSTEPS = 20
DATASET_SUFFIX = ".inode"
MANIFEST_NAME = "manifest.json"


def seed_stream(seed: int, split: str) -> list[int]:
    """Entropy for a split; splits never share a stream."""
    return [int(seed), SPLITS.index(split)]


def _rng(cfg: GenConfig, split: str) -> np.random.Generator:
    return np.random.default_rng(seed_stream(cfg.seed, split))


def _grid(cfg: GenConfig, split: str) -> TimeGrid:
    return TimeGrid(t0=cfg.t0, dt=cfg.dt, n_points=cfg.length(split))


def _make_dataset(
    name: str,
    cfg: GenConfig,
    split: str,
    clean: np.ndarray,
    params: np.ndarray,
    param_names: Tuple[str, ...],
    rng: np.random.Generator,
) -> Dataset:
    noise = rng.standard_normal(clean.shape)
    return Dataset(
        name=name,
        observations=clean + cfg.sigma * noise,
        grid=_grid(cfg, split),
        true_params=params,
        param_names=param_names,
        noise_sigma=cfg.sigma,
        split=split,
        seed=cfg.seed,
        config=cfg.model_dump(),
    )


def sinusoid_signal(a: np.ndarray, f: np.ndarray, phi: np.ndarray, t: np.ndarray) -> np.ndarray:
    """a*sin(f*t + phi), one row per sequence."""
    return a[:, None] * np.sin(f[:, None] * t[None, :] + phi[:, None])


def gen_sinusoid(cfg: GenConfig, split: str = "train") -> Dataset:
    rng = _rng(cfg, split)
    n = cfg.count(split)
    t = _grid(cfg, split).times()
    a = rng.uniform(1.0, 3.0, n)
    f = rng.uniform(0.5, 1.0, n)
    phi = rng.uniform(0.0, 1.0, n)
    clean = sinusoid_signal(a, f, phi, t)[:, :, None]
    params = np.stack([a, f, phi], axis=1)
    return _make_dataset("sinusoid", cfg, split, clean, params, ("a", "f", "phi"), rng)


def gen_sinusoid_with_content(cfg: GenConfig, split: str = "train") -> Dataset:
    """Sinusoid plus a constant second channel b that never enters the dynamics."""
    rng = _rng(cfg, split)
    n = cfg.count(split)
    t = _grid(cfg, split).times()
    a = rng.uniform(1.0, 3.0, n)
    f = rng.uniform(0.5, 1.0, n)
    phi = rng.uniform(0.0, 1.0, n)
    b = rng.uniform(-1.0, 1.0, n)
    wave = sinusoid_signal(a, f, phi, t)
    content = np.repeat(b[:, None], t.size, axis=1)
    clean = np.stack([wave, content], axis=2)
    params = np.stack([a, f, phi, b], axis=1)
    return _make_dataset("sinusoid_content", cfg, split, clean, params, ("a", "f", "phi", "b"), rng)


def lotka_volterra_field(alpha: np.ndarray, gamma: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Predator-prey vector field for a batch of states [N, 2]."""
    alpha = np.asarray(alpha, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)

    def field(x: np.ndarray) -> np.ndarray:
        x1, x2 = x[..., 0], x[..., 1]
        dx1 = alpha * x1 - x1 * x2 / 2.0
        dx2 = x1 * x2 / 5.0 - gamma * x2
        return np.stack([dx1, dx2], axis=-1)

    return field


def lotka_volterra_invariant(x: np.ndarray, alpha: float, gamma: float) -> np.ndarray:
    """First integral V = x1/5 - gamma*ln x1 + x2/2 - alpha*ln x2 along states [..., 2]."""
    x1, x2 = x[..., 0], x[..., 1]
    return x1 / 5.0 - gamma * np.log(x1) + x2 / 2.0 - alpha * np.log(x2)


def simulate_lotka_volterra(
    alpha: np.ndarray, gamma: np.ndarray, x0: np.ndarray, grid: TimeGrid
) -> np.ndarray:
    """Noiseless trajectories [N, N_t, 2] with RK4 at 1/20 of the grid spacing."""
    spec = SolverSpec(kind="rk4", dt=grid.dt / LV_SUBSTEPS)
    try:
        states = integrate(lotka_volterra_field(alpha, gamma), x0, grid, spec)
    except IntegrationError:
        # Slow path: locate the first failing sequence.
        for n in range(x0.shape[0]):
            try:
                integrate(lotka_volterra_field(alpha[n: n + 1], gamma[n: n + 1]), x0[n: n + 1], grid, spec)
            except IntegrationError as exc:
                raise DataGenerationError(exc.message, sequence_index=n) from exc
        raise
    traj = np.transpose(states, (1, 0, 2))
    bad = np.flatnonzero(~np.all(np.isfinite(traj), axis=(1, 2)))
    if bad.size:
        raise DataGenerationError("non-finite trajectory", sequence_index=int(bad[0]))
    return traj


def gen_lotka_volterra(cfg: GenConfig, split: str = "train") -> Dataset:
    rng = _rng(cfg, split)
    n = cfg.count(split)
    alpha = rng.uniform(0.1, 0.4, n)
    gamma = rng.uniform(0.1, 0.4, n)
    x0 = rng.uniform(2.0, 10.0, (n, 2))
    clean = simulate_lotka_volterra(alpha, gamma, x0, _grid(cfg, split))
    params = np.column_stack([alpha, gamma, x0])
    return _make_dataset(
        "lotka_volterra", cfg, split, clean, params, ("alpha", "gamma", "x1_0", "x2_0"), rng
    )


GENERATORS: Dict[str, Callable[[GenConfig, str], Dataset]] = {
    "sinusoid": gen_sinusoid,
    "sinusoid_content": gen_sinusoid_with_content,
    "lotka_volterra": gen_lotka_volterra,
}


def generate_splits(kind: str, cfg: GenConfig) -> Dict[str, Dataset]:
    generator = GENERATORS[kind]
    out = {}
    for split in SPLITS:
        out[split] = generator(cfg, split)
        logger.info(
            "Generated %s/%s: %d sequences x %d frames x %d dims",
            kind, split, out[split].n_seq, out[split].n_t, out[split].dim,
        )
    return out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_dataset(ds: Dataset, path: Path | str) -> Path:
    header = {
        "dataset": ds.name,
        "n_seq": ds.n_seq,
        "n_t": ds.n_t,
        "dim": ds.dim,
        "dt": ds.grid.dt,
        "t0": ds.grid.t0,
        "sigma": ds.noise_sigma,
        "seed": ds.seed,
        "split": ds.split,
        "param_names": list(ds.param_names),
        "config": ds.config,
    }
    return write_container(
        path,
        kind="dataset",
        version=settings.DATASET_FORMAT_VERSION,
        header=header,
        arrays={"observations": ds.observations, "true_params": ds.true_params},
    )


def load_dataset(path: Path | str) -> Dataset:
    header, arrays = read_container(path, kind="dataset", version=settings.DATASET_FORMAT_VERSION)
    try:
        obs = arrays["observations"]
        params = arrays["true_params"]
        expected = (int(header["n_seq"]), int(header["n_t"]), int(header["dim"]))
        if obs.shape != expected:
            raise FormatError(f"{path}: observation shape disagrees with header", expected=expected, found=obs.shape)
        return Dataset(
            name=header["dataset"],
            observations=obs,
            grid=TimeGrid(t0=float(header.get("t0", 0.0)), dt=float(header["dt"]), n_points=expected[1]),
            true_params=params,
            param_names=tuple(header.get("param_names", ())),
            noise_sigma=float(header["sigma"]),
            split=header["split"],
            seed=int(header["seed"]),
            config=header.get("config", {}),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: header is missing key {exc}") from exc


def write_dataset_directory(
    kind: str,
    cfg: GenConfig,
    out_dir: Path | str,
    t_in: Optional[int] = None,
    t_inv: Optional[int] = None,
) -> DatasetManifest:
    """Generate all splits into ``out_dir`` plus a manifest describing them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for split, ds in generate_splits(kind, cfg).items():
        filename = f"{split}{DATASET_SUFFIX}"
        save_dataset(ds, out_dir / filename)
        files[split] = filename
    manifest = DatasetManifest(
        kind=kind,
        gen=cfg,
        files=files,
        seed_streams={split: seed_stream(cfg.seed, split) for split in SPLITS},
        train_n_t=cfg.n_t,
        t_in=t_in,
        t_inv=t_inv,
    )
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest.model_dump(), indent=2, sort_keys=True), encoding="utf-8"
    )
    return manifest


def read_manifest(data_dir: Path | str) -> DatasetManifest:
    path = Path(data_dir) / MANIFEST_NAME
    if not path.is_file():
        raise MissingArtifactError(f"dataset manifest not found: {path}")
    return DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))


def load_split(data_dir: Path | str, split: str) -> Dataset:
    manifest = read_manifest(data_dir)
    if split not in manifest.files:
        raise MissingArtifactError(f"split '{split}' not listed in {data_dir}/{MANIFEST_NAME}")
    return load_dataset(Path(data_dir) / manifest.files[split])
