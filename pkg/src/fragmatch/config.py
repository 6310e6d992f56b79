"""Simulation config files: INI sections of ``key = value`` lines.

Example::

    [layout]
    kind = grid            ; or "files"
    scale = 0.1
    layout_seed = 20220401
    ; kind = files reads these CSVs (paths relative to the config file):
    ; wards = wards.csv                region, users
    ; subdivisions = subdivisions.csv  id, region, lat, lon, population, border_fraction
    ; facilities = facilities.csv      id, region, lat, lon, cap0..cap5[, alpha]

    [applicants]
    kappa = 0.0824, 0.1024, 0.0345, 0.0313, 0.0125, 0.0058
    ; or: reference_applicants = 515, 640, 216, 196, 78, 36
    ;     reference_users = 6253

    [utility]
    beta = 3.945
    form = log
    metric = time
    time_offset = 5
    minutes_per_km = 6
    alpha_mode = pool      ; or "explicit"
    alpha_pool = 9.1, 10.2, 10.7

    [priority]
    m4 = locals            ; or "master"

    [simulation]
    seed = 0
    runs = 100
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import replace
from pathlib import Path

from .behavior import DistanceMetric, UtilityForm
from .errors import InputError
from .io import typed_rows
from .market import AGES
from .synth import AlphaMode, Facility, GenConfig, PriorityMode, Subdivision, grid_city

GRID_KEYS = {
    "subdivisions_per_side": int, "capacity_ratio": float, "capacity_spread": float, "age_spread": float,
    "alpha_mean": float, "alpha_sd": float, "pool_size": int, "ward_km": float,
}


def _floats(text: str, path: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace("\n", ",").split(",") if v.strip())
    except ValueError:
        raise InputError(f"{key}: expected a comma-separated list of numbers", path=path) from None


def _get(cp: configparser.ConfigParser, section: str, key: str, kind, path: str, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return kind(raw)
    except ValueError:
        raise InputError(f"[{section}] {key}: invalid value {raw!r}", path=path) from None


def config_hash(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _file_layout(cp: configparser.ConfigParser, base: Path, path: str) -> dict:
    def table(key: str) -> Path:
        if not cp.has_option("layout", key):
            raise InputError(f"[layout] {key} is required for kind = files", path=path)
        return base / cp.get("layout", key)

    wards = {c.int("region"): c.int("users") for c in typed_rows(table("wards"), ("region", "users"))}
    subs = tuple(
        Subdivision(c.int("id"), c.int("region"), c.float("lat"), c.float("lon"), c.float("population"),
                    c.float("border_fraction", 0.0))
        for c in typed_rows(table("subdivisions"), ("id", "region", "lat", "lon", "population"), ("border_fraction",))
    )
    caps = tuple(f"cap{a}" for a in AGES)
    facs = tuple(
        Facility(c.int("id"), c.int("region"), c.float("lat"), c.float("lon"),
                 tuple(c.int(k) for k in caps), c.optional_float("alpha"))
        for c in typed_rows(table("facilities"), ("id", "region", "lat", "lon", *caps), ("alpha",))
    )
    return {"subdivisions": subs, "facilities": facs, "ward_users": wards}


def load_config(path: Path | str) -> GenConfig:
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as err:
        raise InputError(f"cannot open: {err.strerror}", path=str(path)) from None
    except configparser.Error as err:
        raise InputError(str(err).splitlines()[0], path=str(path)) from None
    p = str(path)
    for section in ("layout", "applicants", "utility", "priority", "simulation"):
        if not cp.has_section(section):
            cp.add_section(section)

    seed = _get(cp, "simulation", "seed", int, p, 0)
    runs = _get(cp, "simulation", "runs", int, p, 100)
    m4 = PriorityMode(_get(cp, "priority", "m4", str, p, "locals"))
    kind = _get(cp, "layout", "kind", str, p, "grid")
    if kind == "grid":
        extra = {k: _get(cp, "layout", k, t, p) for k, t in GRID_KEYS.items() if cp.has_option("layout", k)}
        cfg = grid_city(
            _get(cp, "layout", "scale", float, p, 0.1), _get(cp, "layout", "layout_seed", int, p, 20220401),
            seed=seed, runs=runs, m4_priority=m4, **extra,
        )
    elif kind == "files":
        cfg = GenConfig(**_file_layout(cp, path.parent, p), alpha_pool=(0.0,), seed=seed, runs=runs, m4_priority=m4)
    else:
        raise InputError(f"[layout] kind must be grid or files, not {kind!r}", path=p)

    changes: dict = {}
    if cp.has_option("applicants", "kappa"):
        changes["kappa"] = _floats(cp.get("applicants", "kappa"), p, "kappa")
    elif cp.has_option("applicants", "reference_applicants"):
        counts = _floats(cp.get("applicants", "reference_applicants"), p, "reference_applicants")
        users = _get(cp, "applicants", "reference_users", float, p)
        if not users:
            raise InputError("[applicants] reference_users must be positive", path=p)
        changes["kappa"] = tuple(c / users for c in counts)
    for key, kind_ in (("beta", float), ("time_offset", float), ("minutes_per_km", float)):
        if cp.has_option("utility", key):
            changes[key] = _get(cp, "utility", key, kind_, p)
    try:
        if cp.has_option("utility", "form"):
            changes["form"] = UtilityForm(cp.get("utility", "form"))
        if cp.has_option("utility", "metric"):
            changes["metric"] = DistanceMetric(cp.get("utility", "metric"))
        if cp.has_option("utility", "alpha_mode"):
            changes["alpha_mode"] = AlphaMode(cp.get("utility", "alpha_mode"))
    except ValueError as err:
        raise InputError(f"[utility] {err}", path=p) from None
    if cp.has_option("utility", "alpha_pool"):
        changes["alpha_pool"] = _floats(cp.get("utility", "alpha_pool"), p, "alpha_pool")
    elif kind == "files" and changes.get("alpha_mode", cfg.alpha_mode) is AlphaMode.POOL:
        raise InputError("[utility] alpha_pool is required in pool mode", path=p)
    meta = dict(cfg.meta, config=p)
    return replace(cfg, meta=meta, **changes)
