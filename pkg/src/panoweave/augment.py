"""Observation replacement for navigation-trajectory datasets.

An :class:`EnvRegistry` maps (scan, viewpoint) to one or more generated
panorama environment directories; the sampler deterministically replaces
a fraction of each trajectory's viewpoints with registry entries, with
optional scan-subset gating for scaling experiments.  Input datasets are
never mutated: the output is a separate manifest pairing each trajectory
with its replacement bitmask and resolved environment paths, plus a
stats document.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from panoweave.engine import validate_environment
from panoweave.hashing import derive_seed, stable_digest

log = logging.getLogger(__name__)

MODE_BERNOULLI = "bernoulli"
MODE_EXACT_COUNT = "exact_count"
VARIANT_FIRST = "first"
VARIANT_UNIFORM = "uniform_random"
SPLITS = ("train", "val_seen", "val_unseen", "test")

VIEWS_PER_PANORAMA = 36


class RegistryError(ValueError):
    pass


class EnvRegistry:
    """Panorama environments keyed by (scan, viewpoint); multiple variants
    per viewpoint are allowed (one list entry each)."""

    def __init__(self) -> None:
        self.entries: dict[tuple[str, str], list[Path]] = {}
        self.manifest_path: Path | None = None

    def add(self, scan_id: str, viewpoint_id: str, env_dir: str | Path) -> None:
        self.entries.setdefault((scan_id, viewpoint_id), []).append(Path(env_dir))

    def variants(self, scan_id: str, viewpoint_id: str) -> list[Path]:
        return self.entries.get((scan_id, viewpoint_id), [])

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self.entries

    @property
    def n_viewpoints(self) -> int:
        return len(self.entries)

    @property
    def n_environments(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def expected_view_image_count(self) -> int:
        """Total discretized view images implied by the registry (36 per
        panorama)."""
        return self.n_environments * VIEWS_PER_PANORAMA

    def scans(self) -> set[str]:
        return {scan for scan, _ in self.entries}

    @classmethod
    def load(cls, manifest_path: str | Path, validate: bool = True) -> "EnvRegistry":
        """Read a registry manifest (one JSON object per line: scan_id,
        viewpoint_id, path).  With ``validate``, every referenced directory
        must exist and pass the environment coverage check."""
        manifest_path = Path(manifest_path)
        registry = cls()
        registry.manifest_path = manifest_path
        root = manifest_path.parent
        with open(manifest_path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    body = json.loads(line)
                    scan = str(body["scan_id"])
                    vp = str(body["viewpoint_id"])
                    env_dir = Path(body["path"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise RegistryError(f"{manifest_path}:{line_no}: {exc}") from exc
                if not env_dir.is_absolute():
                    env_dir = root / env_dir
                if validate:
                    problems = validate_environment(env_dir)
                    if problems:
                        raise RegistryError(
                            f"{manifest_path}:{line_no}: {env_dir} invalid: {problems}"
                        )
                registry.add(scan, vp, env_dir)
        return registry

    def write_manifest(self, manifest_path: str | Path) -> Path:
        manifest_path = Path(manifest_path)
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        lines = []
        for (scan, vp), paths in sorted(self.entries.items()):
            for p in paths:
                lines.append(
                    json.dumps(
                        {"scan_id": scan, "viewpoint_id": vp, "path": str(p)},
                        sort_keys=True,
                        separators=(",", ":"),
                    )
                )
        manifest_path.write_text("\n".join(lines) + ("\n" if lines else ""))
        return manifest_path


@dataclass(frozen=True)
class TrajectorySample:
    instruction: str
    scan_id: str
    path: tuple[str, ...]
    split: str = "train"
    sample_id: str | None = None

    def __post_init__(self) -> None:
        if not self.path:
            raise ValueError("trajectory path must be non-empty")
        for a, b in zip(self.path, self.path[1:]):
            if a == b:
                raise ValueError(f"consecutive duplicate viewpoint {a!r} in path")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")

    @property
    def traj_id(self) -> str:
        """A stable identifier: the explicit id when the dataset provides
        one, otherwise a content digest."""
        if self.sample_id:
            return self.sample_id
        return stable_digest(
            self.instruction, self.scan_id, list(self.path), self.split
        ).hex()[:12]

    @classmethod
    def from_json_line(cls, line: str, line_no: int = 0) -> "TrajectorySample":
        try:
            body = json.loads(line)
            return cls(
                instruction=str(body["instruction"]),
                scan_id=str(body["scan"]),
                path=tuple(str(v) for v in body["path"]),
                split=str(body.get("split", "train")),
                sample_id=str(body["id"]) if "id" in body else None,
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"trajectory line {line_no}: {exc}") from exc

    def to_json_line(self) -> str:
        body = {
            "instruction": self.instruction,
            "scan": self.scan_id,
            "path": list(self.path),
            "split": self.split,
        }
        if self.sample_id:
            body["id"] = self.sample_id
        return json.dumps(body, sort_keys=True, separators=(",", ":"))


def load_trajectories(path: str | Path) -> list[TrajectorySample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                out.append(TrajectorySample.from_json_line(line, line_no))
    return out


@dataclass(frozen=True)
class AugmentConfig:
    ratio_m: float
    mode: str = MODE_BERNOULLI
    scan_subset: frozenset[str] | None = None
    seed: int = 0
    variant_choice: str = VARIANT_FIRST

    def __post_init__(self) -> None:
        if not 0.0 <= self.ratio_m <= 1.0:
            raise ValueError(f"ratio_m must be in [0, 1], got {self.ratio_m}")
        if self.mode not in (MODE_BERNOULLI, MODE_EXACT_COUNT):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.variant_choice not in (VARIANT_FIRST, VARIANT_UNIFORM):
            raise ValueError(f"unknown variant_choice {self.variant_choice!r}")
        if self.scan_subset is not None:
            object.__setattr__(self, "scan_subset", frozenset(self.scan_subset))


@dataclass
class ReplacementPlan:
    bitmask: list[bool]
    env_paths: list[Path]  # one entry per replaced position, in path order
    skipped_missing: int  # draws that wanted replacement but had no registry entry

    @property
    def bitmask_str(self) -> str:
        return "".join("1" if b else "0" for b in self.bitmask)


def sample_replacements(
    traj: TrajectorySample, config: AugmentConfig, registry: EnvRegistry
) -> ReplacementPlan:
    """Deterministic replacement decisions for one trajectory.

    The RNG is seeded from hash(config.seed, trajectory identity), so a
    fixed config replays exactly and bumping the seed resamples.
    Trajectories outside the scan subset get an empty bitmask; viewpoints
    without a registry entry are never replaced and count as skipped.
    """
    n = len(traj.path)
    plan = ReplacementPlan(bitmask=[False] * n, env_paths=[], skipped_missing=0)
    if config.scan_subset is not None and traj.scan_id not in config.scan_subset:
        return plan
    if config.ratio_m == 0.0:
        return plan

    rng = np.random.default_rng(derive_seed(config.seed, "traj", traj.traj_id))
    available = [registry.variants(traj.scan_id, vp) for vp in traj.path]

    if config.mode == MODE_BERNOULLI:
        draws = rng.random(n) < config.ratio_m
        for i, wanted in enumerate(draws):
            if not wanted:
                continue
            if available[i]:
                plan.bitmask[i] = True
            else:
                plan.skipped_missing += 1
    else:
        k = math.floor(config.ratio_m * n)
        eligible = [i for i in range(n) if available[i]]
        take = min(k, len(eligible))
        plan.skipped_missing = k - take
        if take:
            chosen = rng.choice(len(eligible), size=take, replace=False)
            for j in chosen:
                plan.bitmask[eligible[int(j)]] = True

    for i, replaced in enumerate(plan.bitmask):
        if not replaced:
            continue
        variants = available[i]
        if config.variant_choice == VARIANT_UNIFORM and len(variants) > 1:
            pick = int(rng.integers(len(variants)))
        else:
            pick = 0
        plan.env_paths.append(variants[pick])
    return plan


def select_scan_subset(all_scans: Sequence[str], n: int, seed: int) -> frozenset[str]:
    """A uniformly random n-subset of scans, deterministic under the seed."""
    scans = sorted(set(all_scans))
    if not 0 <= n <= len(scans):
        raise ValueError(f"subset size {n} out of range [0, {len(scans)}]")
    if n == len(scans):
        return frozenset(scans)
    rng = np.random.default_rng(derive_seed(seed, "scan-subset", n))
    picked = rng.choice(len(scans), size=n, replace=False)
    return frozenset(scans[int(i)] for i in picked)


@dataclass
class AugmentStats:
    n_trajectories: int = 0
    n_viewpoints: int = 0
    n_replaced: int = 0
    skipped_missing: int = 0
    per_scan: dict = field(default_factory=dict)

    @property
    def global_ratio(self) -> float:
        return self.n_replaced / self.n_viewpoints if self.n_viewpoints else 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_trajectories": self.n_trajectories,
                "n_viewpoints": self.n_viewpoints,
                "n_replaced": self.n_replaced,
                "skipped_missing": self.skipped_missing,
                "global_ratio": self.global_ratio,
                "per_scan": {
                    scan: dict(stats) for scan, stats in sorted(self.per_scan.items())
                },
            },
            sort_keys=True,
            indent=2,
        )


def augment_dataset(
    trajectories: Iterable[TrajectorySample],
    config: AugmentConfig,
    registry: EnvRegistry,
    manifest_path: str | Path,
    stats_path: str | Path | None = None,
) -> AugmentStats:
    """Write the replacement manifest (one line per trajectory, input
    order preserved) and return aggregate stats.  Inputs are read-only."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    stats = AugmentStats()
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            plan = sample_replacements(traj, config, registry)
            fh.write(
                json.dumps(
                    {
                        "traj_id": traj.traj_id,
                        "scan_id": traj.scan_id,
                        "bitmask": plan.bitmask_str,
                        "env_paths": [str(p) for p in plan.env_paths],
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )
            stats.n_trajectories += 1
            stats.n_viewpoints += len(traj.path)
            stats.n_replaced += sum(plan.bitmask)
            stats.skipped_missing += plan.skipped_missing
            scan_stats = stats.per_scan.setdefault(
                traj.scan_id, {"viewpoints": 0, "replaced": 0}
            )
            scan_stats["viewpoints"] += len(traj.path)
            scan_stats["replaced"] += sum(plan.bitmask)
    for scan_stats in stats.per_scan.values():
        scan_stats["ratio"] = (
            scan_stats["replaced"] / scan_stats["viewpoints"]
            if scan_stats["viewpoints"]
            else 0.0
        )
    if stats_path is not None:
        Path(stats_path).parent.mkdir(parents=True, exist_ok=True)
        Path(stats_path).write_text(stats.to_json() + "\n")
    return stats
