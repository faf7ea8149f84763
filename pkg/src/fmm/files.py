"""CSV readers and writers for every artifact the CLI exchanges.

Floats are written with 17 significant digits so files round-trip exactly
and identical runs produce byte-identical output. Metadata lines start with
``#`` and hold ``key=value`` pairs separated by ``;``.
"""
from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np

from .mcmc import ModelFit, ModelSpec
from .warp import WarpField, WarpParams


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return "nan"
    return format(x, ".17g")


def _meta_line(meta: dict) -> str:
    return "# " + ";".join(f"{k}={v}" for k, v in meta.items()) + "\n"


def parse_meta_line(line: str) -> dict:
    body = line.lstrip("#").strip()
    out = {}
    for part in body.split(";"):
        if "=" in part:
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_rows(path, header, rows, meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if meta:
            fh.write(_meta_line(meta))
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    return path


def read_rows(path):
    """Return ``(meta, header, rows)`` with rows as lists of strings."""
    meta = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        lines = fh.readlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            meta.update(parse_meta_line(line))
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    return meta, header, [row for row in reader]


def write_track(path, times, positions):
    return write_rows(path, ["time", "x", "y"], ((t, p[0], p[1]) for t, p in zip(times, positions)))


def write_warp_set(directory, warps) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for w in warps:
        name = f"warp_{w.id}.csv"
        write_rows(directory / name, ["t", "w", "dwdt"], zip(w.grid_times, w.values, w.derivative))
        sw, pw = (w.params.sigma_w, w.params.phi_w) if w.params else (0.0, 0.0)
        index.append((w.id, sw, pw, name))
    return write_rows(directory / "index.csv", ["id", "sigma_w", "phi_w", "file"], index)


def read_warp_set(directory) -> list[WarpField]:
    directory = Path(directory)
    _, _, rows = read_rows(directory / "index.csv")
    warps = []
    for wid, sw, pw, name in rows:
        _, _, data = read_rows(directory / name)
        arr = np.array(data, dtype=float)
        params = WarpParams(float(sw), float(pw)) if float(sw) > 0 and float(pw) > 0 else None
        warps.append(WarpField(wid, arr[:, 0], arr[:, 1], params, arr[:, 2]))
    return warps


def fit_filename(spec: ModelSpec) -> str:
    return f"fit_{spec.kernel_family}_{spec.warp_id}.csv"


def write_fit(directory, fit: ModelFit) -> Path:
    meta = {
        "family": fit.spec.kernel_family,
        "warp_id": fit.spec.warp_id,
        "l": fit.spec.l,
        "j": fit.spec.j,
        "seed": fit.seed,
        "n_iter": fit.n_iter,
        "mu0_x": fmt(fit.mu0[0]),
        "mu0_y": fmt(fit.mu0[1]),
    }
    meta.update({f"acc_{k}": fmt(v) for k, v in fit.acceptance.items()})
    meta.update({k: (fmt(v) if isinstance(v, float) else v) for k, v in fit.meta.items()})
    iters = fit.iterations if fit.iterations is not None else np.arange(fit.n_draws)
    rows = zip(iters, fit.draws[:, 0], fit.draws[:, 1], fit.draws[:, 2], fit.loglik, fit.logprior)
    return write_rows(Path(directory) / fit_filename(fit.spec),
                      ["iter", "phi", "sigma2_s", "sigma_ratio", "loglik", "logprior"], rows, meta)


def read_fit(path) -> ModelFit:
    meta, _, rows = read_rows(path)
    arr = np.array(rows, dtype=float)
    spec = ModelSpec(meta["family"], meta["warp_id"], int(meta["l"]), int(meta["j"]))
    acc = {k[4:]: float(v) for k, v in meta.items() if k.startswith("acc_")}
    extra = {k: v for k, v in meta.items()
             if k not in {"family", "warp_id", "l", "j", "seed", "n_iter", "mu0_x", "mu0_y"}
             and not k.startswith("acc_")}
    if "m_knots" in extra:
        extra["m_knots"] = int(extra["m_knots"])
    mu0 = np.array([float(meta["mu0_x"]), float(meta["mu0_y"])])
    return ModelFit(spec, arr[:, 1:4].copy(), arr[:, 4].copy(), arr[:, 5].copy(), acc,
                    meta.get("seed"), int(meta["n_iter"]), mu0, extra, arr[:, 0].astype(int))


def write_bma(directory, result, warps_by_id=None) -> list[Path]:
    directory = Path(directory)
    warps_by_id = warps_by_id or {}
    rows = []
    for spec, p in zip(result.specs, result.model_probs):
        w = warps_by_id.get(spec.warp_id)
        sw, pw = (w.params.sigma_w, w.params.phi_w) if w is not None and w.params else (0.0, 0.0)
        rows.append((spec.kernel_family, spec.warp_id, sw, pw, p))
    a = write_rows(directory / "model_probs.csv", ["l", "warp_id", "sigma_w", "phi_w", "prob"], rows,
                   {"n_rj_iter": result.n_rj_iter})
    b = write_rows(directory / "kernel_probs.csv", ["family", "prob"], result.kernel_probs.items())
    c = write_rows(directory / "model_chain.csv", ["iter", "model", "family", "warp_id"],
                   ((k, m, result.specs[m].kernel_family, result.specs[m].warp_id)
                    for k, m in enumerate(result.model_chain)))
    return [a, b, c]


def read_model_chain(path) -> np.ndarray:
    _, _, rows = read_rows(path)
    return np.array([int(r[1]) for r in rows], dtype=int)


def write_paths(directory, paths, std=None, prefix: str = "") -> list[Path]:
    """Path draws and pointwise summaries, optionally in raw units."""
    from .ingest import destandardize

    directory = Path(directory)
    draws = paths.draws
    t = paths.query_times
    if std is not None:
        draws = destandardize(draws.reshape(-1, 2), std).reshape(draws.shape)
        t = std.time_from_unit(t)
    rows = ((r, t[q], draws[r, q, 0], draws[r, q, 1]) for r in range(draws.shape[0]) for q in range(t.size))
    a = write_rows(directory / f"{prefix}paths.csv", ["draw", "t", "x", "y"], rows)
    lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
    mean = draws.mean(axis=0)
    b = write_rows(directory / f"{prefix}path_summary.csv",
                   ["t", "mean_x", "lo_x", "hi_x", "mean_y", "lo_y", "hi_y"],
                   zip(t, mean[:, 0], lo[:, 0], hi[:, 0], mean[:, 1], lo[:, 1], hi[:, 1]))
    return [a, b]


def read_paths(path):
    """Return ``(query_times, draws)`` from a ``paths.csv`` file."""
    _, _, rows = read_rows(path)
    arr = np.array(rows, dtype=float)
    draw_ids = arr[:, 0].astype(int)
    R = draw_ids.max() + 1
    q = arr.shape[0] // R
    return arr[:q, 1].copy(), arr[:, 2:4].reshape(R, q, 2)


def write_variogram(path, vg) -> Path:
    env = vg.envelope if vg.envelope is not None else np.full((vg.bins, 2), np.nan)
    rows = zip(vg.lag_centers, vg.semivariance, vg.counts, env[:, 0], env[:, 1])
    return write_rows(path, ["lag", "semivariance", "count", "lo", "hi"], rows,
                      {"bins": vg.bins, "max_lag": fmt(vg.max_lag), "estimator": "matheron"})


def write_basis_dump(path, basis) -> Path:
    meta = {"family": basis.kernel.family, "phi": fmt(basis.kernel.phi), "warp_id": basis.warp_id,
            "n": basis.H.shape[0], "m": basis.H.shape[1]}
    return write_rows(path, [f"k{j}" for j in range(basis.H.shape[1])], basis.H, meta)


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, files, config: dict, timings: dict) -> Path:
    directory = Path(directory)
    lines = [f"config {k}={v}" for k, v in config.items()]
    lines += [f"stage {k} seconds={v:.3f}" for k, v in timings.items()]
    for f in sorted(Path(f) for f in files):
        lines.append(f"file {f.relative_to(directory).as_posix()} sha256={sha256(f)}")
    path = directory / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
