"""Tier datasets (M3, M2, M1, MF) and the chained four-stage cascade.

Stage 1 maps noise to the coarsest tier.  Stage k > 1 is an
image-to-image generator trained on paired (tier k-1, tier k) versions of
the same source image, and its discriminator sees that tier's real images
against the stage's own fakes.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import ops
from .checkpoint import load_checkpoint, restore_state, save_checkpoint, state_to_checkpoint
from .errors import PreconditionError, ShapeError, TrainingDiverged
from .imageio import denormalize, encode_pnm, load_pgm_ppm, normalize, save_pgm
from .losslog import write_loss_csv
from .models import build_discriminator, build_generator, spec_digest
from .tensor import no_grad
from .training import NoiseSpec, TrainConfig, generate, sample_noise, train_gan

logger = logging.getLogger(__name__)

DEFAULT_FACTORS = (8, 4, 2)
UNTRAINED, TRAINED, DIVERGED, PARTIAL = "untrained", "trained", "diverged", "partial"


def tier_names(factors: Sequence[int]) -> List[str]:
    """Coarsest first: ``(8, 4, 2)`` -> ``["M3", "M2", "M1", "MF"]``."""
    n = len(factors)
    return [f"M{n - i}" for i in range(n)] + ["MF"]


def degrade(images: np.ndarray, factor: int) -> np.ndarray:
    """Nearest down- then up-sampling: block-constant at the original size."""
    with no_grad():
        return ops.upsample_nearest(ops.downsample_nearest(images, factor), factor).data


@dataclass
class ManifestEntry:
    index: int
    tier: str
    factor: int
    source: str
    checksum: str


@dataclass
class TierDataset:
    names: List[str]
    factors: List[int]  # per name; 1 for MF
    tiers: Dict[str, np.ndarray]  # name -> (N, 1, H, W) float32
    manifest: List[ManifestEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tiers["MF"])

    @property
    def size(self):
        return self.tiers["MF"].shape[2:]


def pixel_checksum(img: np.ndarray) -> str:
    return hashlib.sha256(encode_pnm(denormalize(img))).hexdigest()


def build_tier_datasets(images, factors: Sequence[int] = DEFAULT_FACTORS,
                        sources: Optional[Sequence[str]] = None) -> TierDataset:
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[1] != 1:
        raise ShapeError(f"expected (N, 1, H, W) images, got {images.shape}")
    factors = [int(f) for f in factors]
    if any(a <= b for a, b in zip(factors, factors[1:])) or (factors and factors[-1] < 2):
        raise ValueError(f"tier factors must be strictly decreasing and >= 2, got {factors}")
    h, w = images.shape[2:]
    for f in factors:
        if h % f or w % f:
            raise ShapeError(f"tier factor {f} does not divide image size {h}x{w}")
    names = tier_names(factors)
    tiers = {name: degrade(images, f) for name, f in zip(names, factors)}
    tiers["MF"] = images.copy()
    per_name = factors + [1]
    sources = list(sources) if sources is not None else [f"image{i:04d}" for i in range(len(images))]
    manifest = [
        ManifestEntry(i, name, f, sources[i], pixel_checksum(tiers[name][i]))
        for name, f in zip(names, per_name)
        for i in range(len(images))
    ]
    return TierDataset(names, per_name, tiers, manifest)


def laplacian_energy(img: np.ndarray) -> float:
    """Mean absolute 4-neighbour Laplacian with edge replication."""
    x = np.asarray(img, dtype=np.float64)
    x = x.reshape(x.shape[-2:])
    p = np.pad(x, 1, mode="edge")
    lap = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * x
    return float(np.abs(lap).mean())


# ---------------------------------------------------------------------------
# workdir layout
# ---------------------------------------------------------------------------

def write_tiers(dataset: TierDataset, workdir) -> None:
    workdir = Path(workdir)
    for name in dataset.names:
        d = workdir / "tiers" / name
        d.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(dataset.tiers[name]):
            save_pgm(denormalize(img), d / f"{i:04d}.pgm")
    lines = ["index\ttier\tfactor\tsource\tchecksum"]
    lines += [f"{e.index}\t{e.tier}\t{e.factor}\t{e.source}\t{e.checksum}" for e in dataset.manifest]
    (workdir / "manifest.tsv").write_text("\n".join(lines) + "\n")


def read_tiers(workdir, factors: Sequence[int] = DEFAULT_FACTORS) -> TierDataset:
    workdir = Path(workdir)
    names = tier_names(factors)
    tiers = {}
    for name in names:
        d = workdir / "tiers" / name
        files = sorted(d.glob("*.pgm")) if d.is_dir() else []
        if not files:
            raise PreconditionError(f"tier {name} is missing under {d}")
        tiers[name] = np.stack([normalize(load_pgm_ppm(f)) for f in files])
    counts = {len(v) for v in tiers.values()}
    if len(counts) != 1:
        raise PreconditionError(f"tiers have differing image counts: { {k: len(v) for k, v in tiers.items()} }")
    manifest = []
    mpath = workdir / "manifest.tsv"
    if mpath.exists():
        for line in mpath.read_text().splitlines()[1:]:
            i, tier, f, src, ck = line.split("\t")
            manifest.append(ManifestEntry(int(i), tier, int(f), src, ck))
    return TierDataset(names, list(factors) + [1], tiers, manifest)


def stage_dir(workdir, k: int) -> Path:
    return Path(workdir) / "stages" / f"stage{k}"


# ---------------------------------------------------------------------------
# cascade
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CascadeConfig:
    factors: tuple = DEFAULT_FACTORS
    generator_variant: str = "latent_upsample"
    noise_distribution: str = "normal"
    leaky_alpha: float = 0.2

    @property
    def n_stages(self) -> int:
        return len(self.factors) + 1

    def noise_spec(self, size) -> NoiseSpec:
        if self.generator_variant == "latent_upsample":
            return NoiseSpec("latent_vector", distribution=self.noise_distribution)
        return NoiseSpec("image_field", (1,) + tuple(size), self.noise_distribution)

    def stage_specs(self, k: int, size):
        stage = "first" if k == 1 else "refine"
        g = build_generator(stage, self.generator_variant, tuple(size), alpha=self.leaky_alpha)
        d = build_discriminator(tuple(size), alpha=self.leaky_alpha)
        return g, d


@dataclass
class CascadeState:
    workdir: Path
    cascade: CascadeConfig
    size: tuple
    status: Dict[int, str]

    @property
    def n_stages(self) -> int:
        return self.cascade.n_stages

    def checkpoint_path(self, k: int) -> Path:
        return stage_dir(self.workdir, k) / "checkpoint.bin"

    def require_trained(self, upto: Optional[int] = None) -> None:
        for k in range(1, (upto or self.n_stages) + 1):
            if self.status.get(k) != TRAINED:
                raise PreconditionError(f"stage {k} is {self.status.get(k, UNTRAINED)}, not trained")


def cascade_status(workdir, cascade: CascadeConfig, size) -> CascadeState:
    status = {}
    for k in range(1, cascade.n_stages + 1):
        path = stage_dir(workdir, k) / "checkpoint.bin"
        status[k] = load_checkpoint(path).tag if path.exists() else UNTRAINED
    return CascadeState(Path(workdir), cascade, tuple(size), status)


def stage_pairs(dataset: TierDataset, k: int):
    """(generator inputs or None, discriminator reals) for stage ``k``."""
    names = dataset.names
    target = dataset.tiers[names[k - 1]]
    inputs = None if k == 1 else dataset.tiers[names[k - 2]]
    return inputs, target


def stage_seed(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, k]))


def train_stage(dataset: TierDataset, k: int, config: TrainConfig, workdir,
                cascade: CascadeConfig = CascadeConfig(), stop_after: Optional[int] = None) -> str:
    """Train (or resume) stage ``k`` and return its resulting status."""
    from .training import init_state

    state_now = cascade_status(workdir, cascade, dataset.size)
    if k < 1 or k > cascade.n_stages:
        raise PreconditionError(f"stage {k} does not exist (1..{cascade.n_stages})")
    if k > 1:
        state_now.require_trained(k - 1)
    if state_now.status[k] == TRAINED:
        return TRAINED

    g_spec, d_spec = cascade.stage_specs(k, dataset.size)
    out = stage_dir(workdir, k)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path, csv_path = out / "checkpoint.bin", out / "losses.csv"

    if state_now.status[k] == PARTIAL:
        state = restore_state(load_checkpoint(ckpt_path, spec_digest(g_spec, d_spec)), g_spec, d_spec)
        logger.info("stage %d: resuming from epoch %d", k, state.epoch)
    else:
        state = init_state(g_spec, d_spec, config, stage_seed(config.seed, k))

    def persist(st, tag=None):
        save_checkpoint(state_to_checkpoint(st, tag), ckpt_path)
        write_loss_csv(st.history, csv_path)

    def on_epoch_end(st):
        if st.status == TRAINED or st.epoch % config.checkpoint_every == 0:
            persist(st)

    inputs, target = stage_pairs(dataset, k)
    try:
        state = train_gan(g_spec, d_spec, target, config, inputs=inputs, state=state,
                          noise=cascade.noise_spec(dataset.size), stop_after=stop_after,
                          on_epoch_end=on_epoch_end, on_diverged=lambda st: persist(st, DIVERGED))
    except TrainingDiverged as exc:
        exc.stage = k
        logger.error("stage %d diverged: %s", k, exc)
        return DIVERGED
    persist(state)
    return state.status


def train_tier_cascade(dataset: TierDataset, config: TrainConfig, workdir,
                       cascade: CascadeConfig = CascadeConfig(), stop_after: Optional[int] = None) -> CascadeState:
    """Train every stage in order, halting at the first divergence."""
    if len(dataset.names) != cascade.n_stages:
        raise ShapeError(f"dataset has {len(dataset.names)} tiers, cascade expects {cascade.n_stages}")
    for k in range(1, cascade.n_stages + 1):
        status = train_stage(dataset, k, config, workdir, cascade, stop_after)
        if status != TRAINED:
            break
    return cascade_status(workdir, cascade, dataset.size)


def load_stage_generator(state: CascadeState, k: int):
    g_spec, d_spec = state.cascade.stage_specs(k, state.size)
    ckpt = load_checkpoint(state.checkpoint_path(k), spec_digest(g_spec, d_spec))
    return restore_state(ckpt, g_spec, d_spec).g


def generate_cascade(state: CascadeState, n: int, seed: int, intermediates: bool = False):
    """Run noise through every stage.

    Returns ``n`` arrays of shape (1, H, W), or with ``intermediates`` a list
    of per-sample lists holding each stage's output, coarsest first.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    for k in range(1, state.n_stages + 1):
        if state.status.get(k) != TRAINED:
            raise PreconditionError(f"stage {k} is {state.status.get(k, UNTRAINED)}; cannot generate")
    rng = np.random.default_rng(seed)
    z = sample_noise(state.cascade.noise_spec(state.size), n, rng)
    x = z
    outputs = []
    for k in range(1, state.n_stages + 1):
        x = generate(load_stage_generator(state, k), x)
        outputs.append(x)
    if intermediates:
        return [[o[i].copy() for o in outputs] for i in range(n)]
    return [outputs[-1][i].copy() for i in range(n)]
