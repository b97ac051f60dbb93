"""File formats and run configuration.

Image stacks travel in two bit-exact-roundtrip encodings: a binary ``.mts``
file (magic ``MTS1``, little-endian u32 header ``n, rows, cols``, then
``n*rows*cols`` little-endian float32 values, row-major per frame) and a
directory of per-frame ``frame_%04d.csv`` files.  Chain output goes to a
tracks CSV (``sample,track,frame,a,sx,sy,vx,vy``), a parameter-samples CSV
(one column per component), and a line-delimited JSON diagnostics file.
Run configuration is a flat JSON object; unknown keys are rejected.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .model import ImageStack, ModelParams, Track

__all__ = ["read_stack", "write_stack", "read_stack_mts", "write_stack_mts",
           "read_stack_csvdir", "write_stack_csvdir",
           "write_tracks_csv", "read_tracks_csv",
           "write_params_csv", "read_params_csv",
           "write_diagnostics_jsonl", "read_diagnostics_jsonl",
           "RunConfig", "load_config"]

_MAGIC = b"MTS1"
_HEADER = struct.Struct("<III")


# -- image stacks -----------------------------------------------------------

def write_stack_mts(path, y: ImageStack) -> None:
    frames = np.ascontiguousarray(y.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(y.n_frames, y.rows, y.cols))
        fh.write(frames.tobytes())


def read_stack_mts(path) -> ImageStack:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise DataFormatError(f"{path}: bad magic {raw[:4]!r}", code="magic")
    if len(raw) < 4 + _HEADER.size:
        raise DataFormatError(f"{path}: truncated header", code="truncated")
    n, rows, cols = _HEADER.unpack_from(raw, 4)
    if n < 1 or rows < 1 or cols < 1:
        raise DataFormatError(f"{path}: bad dimensions {(n, rows, cols)}", code="dims")
    payload = raw[4 + _HEADER.size:]
    expected = 4 * n * rows * cols
    if len(payload) < expected:
        raise DataFormatError(
            f"{path}: payload holds {len(payload)} bytes, header needs {expected}",
            code="truncated")
    if len(payload) > expected:
        raise DataFormatError(f"{path}: {len(payload) - expected} trailing bytes",
                              code="dims")
    frames = np.frombuffer(payload, dtype="<f4").reshape(n, rows, cols)
    return ImageStack(frames.astype(float))


def write_stack_csvdir(path, y: ImageStack) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    frames = np.asarray(y.frames, dtype="<f4")     # match binary precision
    for t in range(y.n_frames):
        np.savetxt(path / f"frame_{t:04d}.csv", frames[t], delimiter=",", fmt="%.9g")


def read_stack_csvdir(path) -> ImageStack:
    path = Path(path)
    files = sorted(path.glob("frame_[0-9][0-9][0-9][0-9].csv"))
    if not files:
        raise DataFormatError(f"{path}: no frame_%04d.csv files", code="truncated")
    for t, f in enumerate(files):
        if f.name != f"frame_{t:04d}.csv":
            raise DataFormatError(f"{path}: frame files not consecutive at {f.name}",
                                  code="dims")
    frames = []
    for f in files:
        arr = np.loadtxt(f, delimiter=",", dtype="<f4", ndmin=2)
        if frames and arr.shape != frames[0].shape:
            raise DataFormatError(f"{f}: frame shape {arr.shape} differs from "
                                  f"{frames[0].shape}", code="dims")
        frames.append(arr)
    return ImageStack(np.stack(frames).astype(float))


def write_stack(path, y: ImageStack) -> None:
    """Dispatch on suffix: ``.mts`` is binary, anything else is a CSV directory."""
    if str(path).endswith(".mts"):
        write_stack_mts(path, y)
    else:
        write_stack_csvdir(path, y)


def read_stack(path) -> ImageStack:
    if Path(path).is_dir():
        return read_stack_csvdir(path)
    return read_stack_mts(path)


# -- tracks, parameters, diagnostics ------------------------------------------

TRACK_COLUMNS = ("sample", "track", "frame", "a", "sx", "sy", "vx", "vy")


def write_tracks_csv(path, sampled_tracks) -> None:
    """One row per (sample, track, frame).

    sampled_tracks is a sequence of track lists, one per recorded sample; a
    single snapshot is written as ``[tracks]``.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACK_COLUMNS)
        for s, tracks in enumerate(sampled_tracks):
            for tr in tracks:
                for k in range(tr.length):
                    a, sx, sy, vx, vy = tr.states[k]
                    w.writerow([s, tr.label, tr.tb + k,
                                f"{a:.17g}", f"{sx:.17g}", f"{sy:.17g}",
                                f"{vx:.17g}", f"{vy:.17g}"])


def read_tracks_csv(path) -> list[list[Track]]:
    """Inverse of write_tracks_csv (labels and state values round-trip)."""
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(header) != TRACK_COLUMNS:
            raise DataFormatError(f"{path}: expected header {','.join(TRACK_COLUMNS)}",
                                  code="schema")
        for line in r:
            if len(line) != len(TRACK_COLUMNS):
                raise DataFormatError(f"{path}: row with {len(line)} fields",
                                      code="schema")
            rows.append((int(line[0]), int(line[1]), int(line[2]),
                         *(float(v) for v in line[3:])))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    by_key: dict[tuple[int, int], list] = {}
    for row in rows:
        by_key.setdefault((row[0], row[1]), []).append(row)
    n_samples = 1 + max((s for s, _ in by_key), default=-1)
    out: list[list[Track]] = [[] for _ in range(n_samples)]
    for (s, label), group in sorted(by_key.items()):
        frames = [g[2] for g in group]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise DataFormatError(f"{path}: track {label} of sample {s} has "
                                  "non-consecutive frames", code="schema")
        states = np.array([g[3:] for g in group])
        out[s].append(Track(frames[0], states, label))
    return out


def write_params_csv(path, names, rows) -> None:
    """Parameter draws, one column per component plus a leading iteration index."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("iter",) + tuple(names))
        for i, row in enumerate(rows):
            w.writerow([i] + [f"{v:.17g}" for v in row])


def read_params_csv(path):
    """Returns (names, (n, p) array); inverse of write_params_csv."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if not header or header[0] != "iter":
            raise DataFormatError(f"{path}: expected leading iter column", code="schema")
        rows = [[float(v) for v in line[1:]] for line in r]
    return tuple(header[1:]), np.asarray(rows, dtype=float).reshape(len(rows), len(header) - 1)


def write_diagnostics_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_diagnostics_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for k, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{k + 1}: bad JSON ({exc})",
                                      code="schema") from exc
    return out


# -- run configuration --------------------------------------------------------

_MODEL_KEYS = ("n_frames", "rows", "cols", "pixel_pitch", "psf_width", "frame_dt",
               "birth_mean_intensity", "birth_mean_x", "birth_mean_y",
               "birth_var_intensity", "birth_var_position", "birth_var_velocity",
               "drive_var_intensity", "drive_var_x", "drive_var_y",
               "survival_prob", "birth_rate", "background", "noise_var")


@dataclass
class RunConfig:
    """Flat run configuration; JSON file keys and CLI flags share these names."""

    # model
    n_frames: int = 20
    rows: int = 64
    cols: int = 64
    pixel_pitch: float = 1.0
    psf_width: float = 1.0
    frame_dt: float = 1.0
    birth_mean_intensity: float = 30.0
    birth_mean_x: float = 0.0
    birth_mean_y: float = 0.0
    birth_var_intensity: float = 4.0
    birth_var_position: float = 25.0
    birth_var_velocity: float = 3.0
    drive_var_intensity: float = 0.5
    drive_var_x: float = 0.3
    drive_var_y: float = 0.7
    survival_prob: float = 0.95
    birth_rate: float = 0.3
    background: float = 0.0
    noise_var: float = 1.0
    # sampler
    n1: int = 100
    n2: int = 1
    n3: int = 0
    iterations: int = 1000
    burn_in: float = 0.25
    seed: int | None = None
    move_probs: tuple = (0.25, 0.25, 0.25, 0.25)
    proposal_prior_weight: float = 0.1
    csmc_particles: int = 15
    gamma_rule: str = "paper-min"
    # learning
    learn_blocks: tuple = ("discrete", "dynamics", "observation")
    obs_tied: bool = False
    obs_fit_background: bool = True
    prior_alpha0: float = 0.01
    prior_beta0: float = 0.01
    prior_mu0: float = 0.0
    prior_n0: float = 0.01
    birth_rate_prior_beta0: float = 100.0
    # evaluation
    ospa_p: float = 1.0
    ospa_c: float = 10.0
    # paths
    input: str | None = None
    output_dir: str | None = None
    truth: str | None = None
    chains: int = 1

    def __post_init__(self):
        if self.seed is not None:
            seed = int(self.seed)
            if not 0 <= seed < 2**64:
                raise ConfigError("seed must be a 64-bit unsigned integer")
            self.seed = seed
        self.move_probs = tuple(float(p) for p in self.move_probs)
        if len(self.move_probs) != 4 or any(p < 0 for p in self.move_probs) \
                or sum(self.move_probs) <= 0:
            raise ConfigError("move_probs must be 4 nonnegative weights")
        self.learn_blocks = tuple(self.learn_blocks)
        for b in self.learn_blocks:
            if b not in ("discrete", "dynamics", "observation"):
                raise ConfigError(f"unknown learn block {b!r}")
        if self.iterations < 1 or self.n1 < 0 or self.n2 < 0 or self.n3 < 0:
            raise ConfigError("iterations must be >= 1 and loop counts >= 0")
        if not 0.0 <= self.burn_in < 1.0:
            raise ConfigError("burn_in must lie in [0, 1)")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if self.gamma_rule not in ("paper-min", "max"):
            if not self.gamma_rule.startswith("fixed:"):
                raise ConfigError(f"unknown gamma rule {self.gamma_rule!r}")
            try:
                float(self.gamma_rule.split(":", 1)[1])
            except ValueError as exc:
                raise ConfigError(f"bad fixed gamma value in {self.gamma_rule!r}") from exc

    def model_params(self) -> ModelParams:
        try:
            return ModelParams(**{k: getattr(self, k) for k in _MODEL_KEYS})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sampler_config(self):
        from .birth import ProposalConfig
        from .params import PriorConfig
        from .pgibbs import CsmcConfig
        from .sampler import SamplerConfig
        try:
            overrides = {"birth_rate": {"beta0": self.birth_rate_prior_beta0}}
            return SamplerConfig(
                move_probs=self.move_probs,
                proposal=ProposalConfig(prior_weight=self.proposal_prior_weight,
                                        gamma_rule=self.gamma_rule),
                csmc=CsmcConfig(n_particles=self.csmc_particles),
                prior=PriorConfig(alpha0=self.prior_alpha0, beta0=self.prior_beta0,
                                  mu0=self.prior_mu0, n0=self.prior_n0,
                                  overrides=overrides),
                burn_in=self.burn_in,
                learn=self.learn_blocks,
                obs_tied=self.obs_tied,
                obs_fit_background=self.obs_fit_background,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def load_config(path=None, overrides=None) -> RunConfig:
    """Config file merged with overrides (overrides win); both optional."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        values.update(data)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - _FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
