"""File formats: long-format datasets, site tables, posterior samples and manifests."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .mcmc import GEV_FIELDS, PosteriorSamples

DATA_HEADER = ["site_id", "x", "y", "t", "value"]
EARTH_RADIUS_KM = 6371.0


def fmt(x) -> str:
    """Round-trip exact text for a float."""
    return format(float(x), ".17g")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def project_lonlat(coords: np.ndarray) -> np.ndarray:
    """Equirectangular projection of (lon, lat) degrees to km about the mean latitude."""
    coords = np.asarray(coords, dtype=float)
    lat0 = np.deg2rad(np.mean(coords[:, 1]))
    x = EARTH_RADIUS_KM * np.deg2rad(coords[:, 0]) * np.cos(lat0)
    y = EARTH_RADIUS_KM * np.deg2rad(coords[:, 1])
    return np.column_stack([x, y])


def _float(text: str, path, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{path}:{line}: column {column!r} is not a number: {text!r}") from None
    if not np.isfinite(v):
        raise DataError(f"{path}:{line}: column {column!r} is not finite ({text!r}); missing data is not supported")
    return v


def read_dataset(path):
    """Read a dense long-format CSV.

    Returns ``(y, sites, site_ids, times)`` with ``y`` of shape (T, n); sites
    and times keep their order of first appearance.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DATA_HEADER:
            raise DataError(f"{path}:1: header must be {','.join(DATA_HEADER)}")
        sites: dict[str, tuple[float, float]] = {}
        times: dict[int, int] = {}
        values: dict[tuple[str, int], float] = {}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise DataError(f"{path}:{line}: expected 5 fields, found {len(row)}")
            sid = row[0].strip()
            x = _float(row[1], path, line, "x")
            yv = _float(row[2], path, line, "y")
            t_raw = _float(row[3], path, line, "t")
            if t_raw != int(t_raw):
                raise DataError(f"{path}:{line}: t must be an integer")
            t = int(t_raw)
            val = _float(row[4], path, line, "value")
            if sid in sites and sites[sid] != (x, yv):
                raise DataError(f"{path}:{line}: site {sid!r} has inconsistent coordinates")
            sites.setdefault(sid, (x, yv))
            times.setdefault(t, len(times))
            if (sid, t) in values:
                raise DataError(f"{path}:{line}: duplicate value for site {sid!r} at t={t}")
            values[(sid, t)] = val
    if not values:
        raise DataError(f"{path}: no data rows")
    ids = list(sites)
    ts = list(times)
    y = np.empty((len(ts), len(ids)))
    for i, sid in enumerate(ids):
        for k, t in enumerate(ts):
            if (sid, t) not in values:
                raise DataError(f"{path}: missing value for site {sid!r} at t={t} (data must be dense)")
            y[k, i] = values[(sid, t)]
    return y, np.array([sites[s] for s in ids]), ids, ts


def write_dataset(path, y: np.ndarray, sites: np.ndarray, site_ids=None, times=None):
    y = np.asarray(y, dtype=float)
    T, n = y.shape
    site_ids = [f"s{i + 1}" for i in range(n)] if site_ids is None else list(site_ids)
    times = list(range(1, T + 1)) if times is None else list(times)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATA_HEADER)
        for i in range(n):
            for k in range(T):
                w.writerow([site_ids[i], fmt(sites[i, 0]), fmt(sites[i, 1]), times[k], fmt(y[k, i])])


def read_sites(path) -> np.ndarray:
    """Read a site table with columns x,y (an optional site_id column is ignored)."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "y"} <= set(reader.fieldnames):
            raise DataError(f"{path}:1: site table needs x and y columns")
        rows = [(_float(r["x"], path, i, "x"), _float(r["y"], path, i, "y"))
                for i, r in enumerate(reader, start=2)]
    if not rows:
        raise DataError(f"{path}: site table is empty")
    return np.array(rows)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------------------
# Posterior samples
# ---------------------------------------------------------------------------

def _sample_columns(s: PosteriorSamples):
    n = s.mu.shape[1]
    cols = ["alpha", "tau", "q", "delta"]
    cols += [f"{f}_{i}" for f in GEV_FIELDS for i in range(n)]
    if s.gamma is not None:
        J, L = s.gamma.shape[1:]
        cols += [f"gamma_{j}_{l}" for j in range(J) for l in range(L)]
        cols += [f"pi_{j}" for j in range(J)]
    if s.gp is not None:
        for f in GEV_FIELDS:
            cols += [f"gp_{f}_beta_{k}" for k in range(3)] + [f"gp_{f}_variance", f"gp_{f}_range"]
    return cols


def _sample_matrix(s: PosteriorSamples) -> np.ndarray:
    D = len(s)
    parts = [s.alpha[:, None], s.tau[:, None], s.q[:, None], s.delta[:, None].astype(float),
             s.mu, s.log_sigma, s.xi]
    if s.gamma is not None:
        parts += [s.gamma.reshape(D, -1), s.pi]
    if s.gp is not None:
        for f in GEV_FIELDS:
            g = s.gp[f]
            parts += [g["beta"], g["variance"][:, None], g["range"][:, None]]
    return np.hstack(parts)


def write_samples(path, s: PosteriorSamples):
    """Samples CSV (one row per stored draw) plus a JSON sidecar with the metadata."""
    path = Path(path)
    rows = ([i] + list(r) for i, r in enumerate(_sample_matrix(s)))
    write_rows(path, ["draw"] + _sample_columns(s), rows)
    meta = {
        "kind": s.kind,
        "sites": s.sites.tolist(),
        "knots": s.knots.tolist(),
        "J": None if s.gamma is None else int(s.gamma.shape[1]),
        "gp": s.gp is not None,
        "smoothness": None if s.gp is None else float(s.gp["mu"]["smoothness"][0]),
        "acceptance": {k: float(v) for k, v in sorted(s.acceptance.items())},
        "config": s.config,
    }
    with open(sidecar(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def read_samples(path) -> PosteriorSamples:
    path = Path(path)
    try:
        meta = json.loads(sidecar(path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read sample metadata {sidecar(path)}: {exc}") from exc
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read samples {path}: {exc}") from exc
    sites = np.asarray(meta["sites"], dtype=float)
    knots = np.asarray(meta["knots"], dtype=float)
    n, L = len(sites), len(knots)
    D = data.shape[0]
    c = 1
    take = lambda k: data[:, c:c + k]
    alpha, tau, q = data[:, 1], data[:, 2], data[:, 3]
    c = 5
    fields = {}
    for f in GEV_FIELDS:
        fields[f] = take(n).copy()
        c += n
    gamma = pi = None
    if meta["J"] is not None:
        J = meta["J"]
        gamma = take(J * L).reshape(D, J, L).copy()
        c += J * L
        pi = take(J).copy()
        c += J
    gp = None
    if meta["gp"]:
        gp = {}
        for f in GEV_FIELDS:
            beta = take(3).copy()
            c += 3
            gp[f] = {"beta": beta, "variance": data[:, c].copy(), "range": data[:, c + 1].copy(),
                     "smoothness": np.full(D, meta["smoothness"])}
            c += 2
    if c != data.shape[1]:
        raise DataError(f"{path}: column count does not match its metadata")
    return PosteriorSamples(meta["kind"], sites, knots, alpha, tau, q, fields["mu"],
                            fields["log_sigma"], fields["xi"], gamma, pi, gp,
                            meta.get("acceptance", {}), meta.get("config", {}))


def write_manifest(path, manifest: dict):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
