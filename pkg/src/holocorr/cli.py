"""Command-line interface.

Usage::

    holocorr run CONFIG            # key = value file, or a manifest from an earlier run
    holocorr ACTION key=value ...  # same keys given inline

Exit status: 0 success, 2 configuration error, 3 numeric failure,
4 size cap exceeded.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .correspondence import (
    DEFAULT_TREE_CAP,
    PolyCorrespondence,
    iterate_backward_array,
    load_correspondence,
    semigroup_z2_half_z2,
    squaring,
)
from .errors import CapExceededError, HoloCorrError, NumericalError, ValidationError
from .ergostats import birkhoff_average, correlation_report, dumps_report
from .finite import (
    check_average_mixing_equivalence,
    check_hierarchy,
    check_main_theorem,
    invariant_measures,
    is_ergodic,
    load_instance,
)
from .funcspec import parse_function_spec
from .measures import (
    WeightedPointCloud,
    dumps_cloud,
    estimate_ds_measure,
    load_cloud,
    sample_annulus_measure,
    sample_circle_measure,
)
from .render import encode_pgm, density_image

ACTIONS = ("degrees", "preimage", "measure", "correlate", "birkhoff", "mixing-report", "finite-check", "render")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAP = 0, 2, 3, 4

DEFAULTS = {
    "seed": "0",
    "start": "3",
    "depth": "25",
    "samples": "100000",
    "horizon": "30",
    "cap": str(DEFAULT_TREE_CAP),
    "n": "1",
    "workers": "1",
    "phi": "stereo:0,0,1",
    "psi": "const:1",
    "size": "256",
    "center": "0",
    "radius": "2.5",
    "walk_samples": "256",
}

EXTENSIONS = {
    "degrees": ".txt",
    "preimage": ".txt",
    "measure": ".cloud",
    "correlate": ".json",
    "birkhoff": ".json",
    "mixing-report": ".json",
    "finite-check": ".json",
    "render": ".pgm",
}

BUILTINS = {"builtin:squaring": squaring, "builtin:semigroup": semigroup_z2_half_z2}


class ConfigError(ValidationError):
    pass


# ---------------------------------------------------------------------------
# configuration


def parse_config_text(text: str) -> dict:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            manifest = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest is not valid JSON: {exc}") from None
        if "config" not in manifest:
            raise ConfigError("manifest has no 'config' section")
        return {str(k): str(v) for k, v in manifest["config"].items()}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, _, value = (s.strip() for s in line.partition("="))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def parse_pairs(pairs) -> dict:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"argument {item!r} is not key=value")
        key, _, value = item.partition("=")
        out[key.strip()] = value.strip()
    return out


def resolve_config(raw: dict) -> dict:
    cfg = dict(DEFAULTS)
    if raw.get("action") in ("correlate", "mixing-report"):
        cfg["samples"] = "2000"
    cfg.update(raw)
    action = cfg.get("action")
    if action not in ACTIONS:
        raise ConfigError(f"unknown or missing action {action!r}; expected one of {', '.join(ACTIONS)}")
    cfg.setdefault("output", f"holocorr_{action.replace('-', '_')}{EXTENSIONS[action]}")
    return cfg


def _int(cfg, key, minimum=None) -> int:
    try:
        v = int(cfg[key])
    except (KeyError, ValueError):
        raise ConfigError(f"{key} must be an integer, got {cfg.get(key)!r}") from None
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {v}")
    return v


def _float(cfg, key) -> float:
    try:
        return float(cfg[key])
    except (KeyError, ValueError):
        raise ConfigError(f"{key} must be a number, got {cfg.get(key)!r}") from None


def _complex(cfg, key) -> complex:
    text = cfg.get(key, "").replace(" ", "")
    if text in ("inf", "infinity"):
        return complex(np.inf, 0)
    try:
        return complex(text.replace("i", "j"))
    except ValueError:
        raise ConfigError(f"{key} must be a complex number, got {cfg.get(key)!r}") from None


def _correspondence(cfg) -> PolyCorrespondence:
    path = cfg.get("correspondence")
    if not path:
        raise ConfigError("this action needs a 'correspondence' file")
    if path in BUILTINS:
        return BUILTINS[path]()
    try:
        return load_correspondence(path)
    except OSError as exc:
        raise ConfigError(f"cannot read correspondence file: {exc}") from None


def _function(cfg, key):
    return parse_function_spec(cfg[key])


def _measure(cfg, corr) -> WeightedPointCloud:
    """Cloud for correlation actions: a file, a reference sampler, or an estimate."""
    seed = _int(cfg, "seed")
    source = cfg.get("cloud", "estimate")
    if source in ("annulus", "circle", "circle-stratified", "estimate"):
        samples = _int(cfg, "samples", minimum=1)
        if source == "annulus":
            return sample_annulus_measure(samples, seed=seed)
        if source.startswith("circle"):
            return sample_circle_measure(samples, seed=seed, stratified=source == "circle-stratified")
        return estimate_ds_measure(corr, _complex(cfg, "start"), _int(cfg, "depth", 0), samples,
                                   seed=seed, workers=_int(cfg, "workers", 1))
    try:
        return load_cloud(source)
    except OSError as exc:
        raise ConfigError(f"cannot read cloud file: {exc}") from None


# ---------------------------------------------------------------------------
# actions; each returns (artifact bytes, summary text)


def _json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def act_degrees(cfg):
    corr = _correspondence(cfg)
    text = f"d = {corr.topological_degree}\nd_f = {corr.forward_degree}\n"
    return text.encode(), text.strip()


def act_preimage(cfg):
    corr = _correspondence(cfg)
    pts = iterate_backward_array(corr, np.array([_complex(cfg, "point" if "point" in cfg else "start")]),
                                 _int(cfg, "n", 0), cap=_int(cfg, "cap", 1))[0]
    lines = ["inf" if not np.isfinite(p) else f"{p.real:.17g} {p.imag:.17g}" for p in pts]
    return ("\n".join(lines) + "\n").encode(), f"{len(pts)} preimages"


def act_measure(cfg):
    corr = _correspondence(cfg)
    samples = _int(cfg, "samples", minimum=1)
    cloud = estimate_ds_measure(corr, _complex(cfg, "start"), _int(cfg, "depth", 0), samples,
                                seed=_int(cfg, "seed"), workers=_int(cfg, "workers", 1))
    return dumps_cloud(cloud).encode(), f"{len(cloud)} points, invariance residual {cloud.meta['invariance_residual']:.4g}"


def _report(cfg):
    corr = _correspondence(cfg)
    mu = _measure(cfg, corr)
    return correlation_report(
        corr, mu, _function(cfg, "phi"), _function(cfg, "psi"),
        n_max=_int(cfg, "horizon", 1), cap=_int(cfg, "cap", 1),
        tolerance=_float(cfg, "tolerance") if "tolerance" in cfg else None,
        samples=_int(cfg, "walk_samples", 1), seed=_int(cfg, "seed"),
        workers=_int(cfg, "workers", 1),
    )


def act_correlate(cfg):
    rep = _report(cfg)
    out = {"series": rep.series, "stderr": rep.stderr, "target": rep.target,
           "horizon": rep.horizon, "provenance": rep.provenance,
           "phi": cfg["phi"], "psi": cfg["psi"]}
    return _json(out), f"I_{rep.horizon} = {rep.series[-1]:.6g}, target {rep.target:.6g}"


def act_mixing_report(cfg):
    rep = _report(cfg)
    rep.provenance.update(phi=cfg["phi"], psi=cfg["psi"])
    v = rep.verdicts
    summary = (f"horizon {rep.horizon}, tolerance {rep.tolerance:.3g}: mixing {v['mixing']}, "
               f"weak mixing {v['weak_mixing']}, ergodic {v['ergodic']}")
    return dumps_report(rep).encode(), summary


def act_birkhoff(cfg):
    corr = _correspondence(cfg)
    n = _int(cfg, "n", 1)
    avgs = birkhoff_average(corr, _function(cfg, "phi"), _complex(cfg, "start"), n,
                            cap=_int(cfg, "cap", 1), seed=_int(cfg, "seed"))
    out = {"partial_averages": avgs, "phi": cfg["phi"], "start": cfg["start"], "n": n, "seed": _int(cfg, "seed")}
    return _json(out), f"average after {n} steps: {avgs[-1]:.6g}"


def act_finite_check(cfg):
    path = cfg.get("instance")
    if not path:
        raise ConfigError("finite-check needs an 'instance' file")
    try:
        fc, mu = load_instance(path)
    except OSError as exc:
        raise ConfigError(f"cannot read instance file: {exc}") from None
    if mu is None:
        extremes = invariant_measures(fc)
        if len(extremes) != 1:
            raise ConfigError("instance has several extreme invariant measures; give 'mu' in the file")
        mu = extremes[0].mu
    mix, wm, erg, hier_ok = check_hierarchy(fc, mu)
    main = check_main_theorem(fc, mu)
    out = {
        "m": fc.m,
        "d": fc.d,
        "mu": [float(x) for x in mu],
        "ergodic": erg,
        "mixing": mix,
        "weak_mixing": wm,
        "hierarchy_consistent": hier_ok,
        "product_ergodic": main[1],
        "product_weak_mixing": main[2],
        "main_theorem_consistent": main[3],
        "average_mixing_equivalence": check_average_mixing_equivalence(fc, mu),
        "ergodic_enumerated": is_ergodic(fc, mu, method="auto"),
    }
    summary = (f"ergodic = {str(erg).lower()}, weak_mixing = {str(wm).lower()}, mixing = {str(mix).lower()}, "
               f"main theorem {'consistent' if main[3] else 'INCONSISTENT'}")
    return _json(out), summary


def act_render(cfg):
    path = cfg.get("cloud")
    if not path:
        raise ConfigError("render needs a 'cloud' file")
    try:
        cloud = load_cloud(path)
    except OSError as exc:
        raise ConfigError(f"cannot read cloud file: {exc}") from None
    img = density_image(cloud, size=_int(cfg, "size", 1), center=_complex(cfg, "center"), radius=_float(cfg, "radius"))
    return encode_pgm(img), f"{img.shape[1]}x{img.shape[0]} image"


HANDLERS = {
    "degrees": act_degrees,
    "preimage": act_preimage,
    "measure": act_measure,
    "correlate": act_correlate,
    "birkhoff": act_birkhoff,
    "mixing-report": act_mixing_report,
    "finite-check": act_finite_check,
    "render": act_render,
}


def run(raw: dict, manifest_path=None, stdout=None) -> int:
    """Execute one configured action, write its artifact and manifest, return an exit status."""
    stdout = stdout or sys.stdout
    action = raw.get("action", "?")
    try:
        cfg = resolve_config(raw)
        t0 = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            data, summary = HANDLERS[cfg["action"]](cfg)
        wall = time.perf_counter() - t0
        out_path = Path(cfg["output"])
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_bytes(data)
        manifest = {
            "config": {k: cfg[k] for k in sorted(cfg)},
            "version": __version__,
            "wall_time_seconds": wall,
            "outputs": {str(out_path): hashlib.sha256(data).hexdigest()},
            "warnings": [str(w.message) for w in caught],
        }
        mpath = Path(manifest_path) if manifest_path else out_path.with_name(out_path.name + ".manifest.json")
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        print(summary, file=stdout)
        return EXIT_OK
    except CapExceededError as exc:
        print(f"holocorr: {action}: cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    except NumericalError as exc:
        print(f"holocorr: {action}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, HoloCorrError) as exc:
        print(f"holocorr: {action}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = argparse.ArgumentParser(prog="holocorr", description="Ergodic statistics of holomorphic correspondences.")
    parser.add_argument("--version", action="version", version=f"holocorr {__version__}")
    parser.add_argument("--manifest", help="where to write the run manifest")
    parser.add_argument("command", help="'run' or one of: " + ", ".join(ACTIONS))
    parser.add_argument("args", nargs="*", help="CONFIG for 'run', else key=value pairs")
    ns = parser.parse_args(argv)
    try:
        if ns.command == "run":
            if len(ns.args) != 1:
                raise ConfigError("'run' takes exactly one config file")
            try:
                text = Path(ns.args[0]).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            raw = parse_config_text(text)
            raw.update(parse_pairs(ns.args[1:]))
        else:
            raw = parse_pairs(ns.args)
            raw["action"] = ns.command
    except ConfigError as exc:
        print(f"holocorr: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(raw, manifest_path=ns.manifest)


if __name__ == "__main__":
    sys.exit(main())
