"""Command-line pipeline.

Subcommands: ``simulate`` draws ground truth and an image stack; ``track``
runs the sampler with fixed, known parameters (no parameter scans); ``learn``
runs the full sampler including parameter updates; ``evaluate`` scores sampled
tracks against truth with OSPA; ``export`` turns a run directory into summary
tables and a replicated image stack.

Every flag mirrors a RunConfig field and overrides the ``--config`` JSON file.
Exit codes: 0 success, 2 configuration error, 3 data-format error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, NumericalError
from .io import (RunConfig, load_config, read_diagnostics_jsonl, read_params_csv,
                 read_stack, read_tracks_csv, write_diagnostics_jsonl,
                 write_params_csv, write_stack_mts, write_tracks_csv)
from .metrics import (PARAM_COLUMNS, OspaParams, alive_positions,
                      greedy_nn_tracker, ospa_frame, param_row)
from .model import ImageStack, ModelParams, render_frame, sample_images, \
    sample_prior_tracks
from .sampler import burn_in_slice, init_chain, run_chain

_TUPLE_KEYS = {"move_probs", "learn_blocks"}
_BOOL_KEYS = {"obs_tied", "obs_fit_background"}
_INT_KEYS = {"n_frames", "rows", "cols", "n1", "n2", "n3", "iterations", "seed",
             "csmc_particles", "chains"}
_STR_KEYS = {"gamma_rule", "input", "output_dir", "truth"}


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(sub):
    sub.add_argument("--config", metavar="JSON", help="run configuration file")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "seed":
            continue                      # added per subcommand (required varies)
        if f.name in _TUPLE_KEYS:
            sub.add_argument(flag, metavar="CSV",
                             help=f"comma-separated {f.name}")
        elif f.name in _BOOL_KEYS:
            sub.add_argument(flag, type=_parse_bool, metavar="BOOL")
        elif f.name in _INT_KEYS:
            sub.add_argument(flag, type=int)
        elif f.name in _STR_KEYS:
            sub.add_argument(flag)
        else:
            sub.add_argument(flag, type=float)


def _overrides(args) -> dict:
    out = {}
    for f in dataclasses.fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is None:
            continue
        if f.name == "move_probs":
            val = tuple(float(v) for v in val.split(","))
        elif f.name == "learn_blocks":
            val = tuple(v.strip() for v in val.split(",") if v.strip())
        out[f.name] = val
    return out


def _config_from(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


def _out_dir(cfg) -> Path:
    if not cfg.output_dir:
        raise ConfigError("an output directory is required (--output-dir)")
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dump_config(cfg, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataclasses.asdict(cfg), fh, sort_keys=True, indent=1)
        fh.write("\n")


# -- simulate -----------------------------------------------------------------

def _cmd_simulate(args) -> int:
    cfg = _config_from(args)
    out = _out_dir(cfg)
    params = cfg.model_params()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    truth = sample_prior_tracks(params, rng)
    y = sample_images(truth, params, rng)
    write_stack_mts(out / "observed.mts", y)
    write_tracks_csv(out / "truth_tracks.csv", [truth])
    write_params_csv(out / "truth_params.csv", PARAM_COLUMNS, [param_row(params)])
    _dump_config(cfg, out / "config.json")
    print(f"simulate: {len(truth)} tracks over {params.n_frames} frames -> {out}")
    return 0


# -- track / learn --------------------------------------------------------------

def _stack_params(cfg, y: ImageStack) -> ModelParams:
    """Model parameters with geometry taken from the stack itself."""
    values = {k: getattr(cfg, k) for k in
              ("pixel_pitch", "psf_width", "frame_dt",
               "birth_mean_intensity", "birth_mean_x", "birth_mean_y",
               "birth_var_intensity", "birth_var_position", "birth_var_velocity",
               "drive_var_intensity", "drive_var_x", "drive_var_y",
               "survival_prob", "birth_rate", "background", "noise_var")}
    try:
        return ModelParams(n_frames=y.n_frames, rows=y.rows, cols=y.cols, **values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _run_single_chain(cfg: RunConfig, seed_seq, input_path, out: Path) -> dict:
    y = read_stack(input_path)
    params = _stack_params(cfg, y)
    rng = np.random.default_rng(seed_seq)
    scfg = cfg.sampler_config()
    state = init_chain(y, params, scfg, rng)
    loops = (cfg.n1, cfg.n2, cfg.n3)
    tracks_log = []
    params_log = []
    diag_log = []
    for tracks, theta, _, diag in run_chain(y, state, loops, cfg.iterations,
                                            scfg, rng):
        tracks_log.append(tracks)
        params_log.append(param_row(theta))
        diag_log.append(diag)
    out.mkdir(parents=True, exist_ok=True)
    write_tracks_csv(out / "tracks.csv", tracks_log)
    write_params_csv(out / "params.csv", PARAM_COLUMNS, params_log)
    write_diagnostics_jsonl(out / "diagnostics.jsonl", diag_log)
    _dump_config(cfg, out / "config.json")
    return diag_log[-1]


def _chain_worker(cfg_values, entropy, spawn_key, input_path, out_dir):
    cfg = RunConfig(**cfg_values)
    ss = np.random.SeedSequence(entropy=entropy, spawn_key=tuple(spawn_key))
    return _run_single_chain(cfg, ss, input_path, Path(out_dir))


def _cmd_sample(args, *, learn: bool) -> int:
    cfg = _config_from(args)
    if not cfg.input:
        raise ConfigError("an input stack is required (--input)")
    if not learn:
        cfg = dataclasses.replace(cfg, n3=0)
    elif cfg.n3 < 1:
        cfg = dataclasses.replace(cfg, n3=1)
    out = _out_dir(cfg)
    root = np.random.SeedSequence(cfg.seed)
    if cfg.chains == 1:
        last = _run_single_chain(cfg, root, cfg.input, out)
        print(f"{'learn' if learn else 'track'}: {cfg.iterations} iterations, "
              f"final K={last['K']}, log_joint={last['log_joint']:.1f} -> {out}")
        return 0
    children = root.spawn(cfg.chains)
    cfg_values = dataclasses.asdict(cfg)
    with ProcessPoolExecutor(max_workers=cfg.chains) as pool:
        futs = [pool.submit(_chain_worker, cfg_values, child.entropy,
                            child.spawn_key, cfg.input, str(out / f"chain_{k:02d}"))
                for k, child in enumerate(children)]
        lasts = [f.result() for f in futs]
    for k, last in enumerate(lasts):
        print(f"chain {k:02d}: final K={last['K']}, log_joint={last['log_joint']:.1f}")
    return 0


# -- evaluate -------------------------------------------------------------------

def _n_frames_of(samples) -> int:
    return max((tr.end for tracks in samples for tr in tracks), default=0)


def _mean_ospa(samples, truth, n_frames, q, geom) -> np.ndarray:
    out = np.zeros(n_frames)
    for tracks in samples:
        for t in range(n_frames):
            out[t] += ospa_frame(alive_positions(tracks, t, geom),
                                 alive_positions(truth, t, geom), q)
    return out / max(len(samples), 1)


def _cmd_evaluate(args) -> int:
    cfg = _config_from(args)
    if not args.tracks or not cfg.truth:
        raise ConfigError("evaluate needs --tracks and --truth")
    out = _out_dir(cfg)
    samples = read_tracks_csv(args.tracks)
    if not samples:
        # a header-only file is a valid run whose samples were all empty;
        # the per-sample mean then reduces to a single empty configuration
        samples = [[]]
    truth = read_tracks_csv(cfg.truth)[0]
    q = OspaParams(cfg.ospa_p, cfg.ospa_c)
    first = burn_in_slice(len(samples), cfg.burn_in)
    first = min(first, len(samples) - 1)
    n_frames = max(_n_frames_of(samples), _n_frames_of([truth]))
    y = read_stack(cfg.input) if cfg.input else None
    # only in-view positions count toward the per-frame point sets
    geom = _stack_params(cfg, y) if y is not None else cfg.model_params()
    mean = _mean_ospa(samples[first:], truth, n_frames, q, geom)
    columns = ["frame", "ospa"]
    table = [np.arange(n_frames), mean]
    if y is not None:
        baseline = greedy_nn_tracker(y, geom)
        table.append(_mean_ospa([baseline], truth, n_frames, q, geom))
        columns.append("ospa_baseline")
    with open(out / "ospa.csv", "w") as fh:
        fh.write(",".join(columns) + "\n")
        for t in range(n_frames):
            fh.write(",".join(f"{col[t]:.9g}" for col in table) + "\n")
    msg = f"evaluate: mean OSPA {mean.mean():.3f}"
    if cfg.input:
        msg += f" (baseline {table[2].mean():.3f})"
    print(msg + f" -> {out / 'ospa.csv'}")
    return 0


# -- export ---------------------------------------------------------------------

def _cmd_export(args) -> int:
    cfg = _config_from(args)
    run = Path(args.run_dir) if args.run_dir else None
    if run is None:
        raise ConfigError("export needs --run-dir")
    out = _out_dir(cfg)
    run_cfg = load_config(run / "config.json")
    diags = read_diagnostics_jsonl(run / "diagnostics.jsonl")
    names, draws = read_params_csv(run / "params.csv")
    samples = read_tracks_csv(run / "tracks.csv")
    if not diags or not len(draws):
        raise DataFormatError(f"{run}: empty run", code="schema")

    with open(out / "trace.csv", "w") as fh:
        fh.write("iter,log_joint,K\n")
        for rec in diags:
            fh.write(f"{rec['iter']},{rec['log_joint']:.9g},{rec['K']}\n")

    first = burn_in_slice(len(draws), run_cfg.burn_in)
    first = min(first, len(draws) - 1)
    kept = draws[first:]
    with open(out / "param_summary.csv", "w") as fh:
        fh.write("component,mean,std\n")
        for k, name in enumerate(names):
            fh.write(f"{name},{kept[:, k].mean():.9g},{kept[:, k].std():.9g}\n")
    with open(out / "param_hist.csv", "w") as fh:
        fh.write("component,bin_left,bin_right,count\n")
        for k, name in enumerate(names):
            counts, edges = np.histogram(kept[:, k], bins=40)
            for j, c in enumerate(counts):
                fh.write(f"{name},{edges[j]:.9g},{edges[j + 1]:.9g},{c}\n")

    # replicated stack from the highest post-burn-in log_joint sample
    lj = np.array([rec["log_joint"] for rec in diags])
    best = first + int(np.argmax(lj[first:]))
    best_tracks = samples[best] if best < len(samples) else []
    row = dict(zip(names, draws[best]))
    geom = {k: getattr(run_cfg, k) for k in
            ("n_frames", "rows", "cols", "pixel_pitch", "psf_width", "frame_dt")}
    theta = ModelParams(**geom,
                        **{k: row[k] for k in names
                           if k not in ("background_mean", "noise_var_mean")},
                        background=row["background_mean"],
                        noise_var=row["noise_var_mean"])
    frames = np.stack([render_frame([tr.state_at(t) for tr in best_tracks
                                     if tr.alive_at(t)], t, theta)
                       for t in range(theta.n_frames)])
    write_stack_mts(out / "replicated.mts", ImageStack(frames))
    print(f"export: sample {best} replicated, tables -> {out}")
    return 0


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcmctrack",
        description="Multi-target tracking on image stacks by MCMC.")
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="draw ground truth and images")
    _add_config_flags(sim)
    sim.add_argument("--seed", type=int, required=True)
    sim.set_defaults(func=_cmd_simulate)

    trk = subs.add_parser("track", help="sample tracks with known parameters")
    _add_config_flags(trk)
    trk.add_argument("--seed", type=int, required=True)
    trk.set_defaults(func=lambda a: _cmd_sample(a, learn=False))

    lrn = subs.add_parser("learn", help="sample tracks and parameters jointly")
    _add_config_flags(lrn)
    lrn.add_argument("--seed", type=int, required=True)
    lrn.set_defaults(func=lambda a: _cmd_sample(a, learn=True))

    ev = subs.add_parser("evaluate", help="score sampled tracks against truth")
    _add_config_flags(ev)
    ev.add_argument("--seed", type=int)
    ev.add_argument("--tracks", help="tracks.csv from a run")
    ev.set_defaults(func=_cmd_evaluate)

    ex = subs.add_parser("export", help="summary tables and replicated stack")
    _add_config_flags(ex)
    ex.add_argument("--seed", type=int)
    ex.add_argument("--run-dir", help="directory written by track/learn")
    ex.set_defaults(func=_cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data format error [{exc.code}]: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
