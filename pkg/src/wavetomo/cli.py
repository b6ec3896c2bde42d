"""Config-driven experiment runner.

Every subcommand reads one JSON config, writes CSV/JSON outputs plus a
manifest listing a content hash per file, and exits 0 on success, 2 on
configuration problems, 3 on numerical ones.  All numerics knobs live in
the config; the only flags are --config, --output and --threads, so a
config plus a seed reproduces a run byte for byte (the manifest's wall
time is the one exception, and it lives outside the data files).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    KINDS,
    ConfigError,
    build_directions,
    build_grid,
    build_inversion,
    build_medium,
    build_tau,
    config_hash,
    load_config,
)
from .fields import Bump, ZeroField, sum_fields
from .forward import FLOAT_FMT, SolverError, forward_data, solve_u, solve_v, extract_traces
from .functionals import (
    FunctionalError,
    carleman_check,
    stability_directions,
    thm_ab_functional,
    thm_abc_functional,
    thm_q_functional,
    write_stability_csv,
)
from .geometry import Direction, RegionError, make_grid
from .inverse import (
    InversionError,
    reconstruct_ab,
    reconstruct_abc,
    reconstruct_q,
)
from .media import (
    CoefficientSet,
    MediumError,
    compute_q,
    solve_psi,
    with_prescribed_q,
)

log = logging.getLogger("wavetomo.cli")


# ---------------------------------------------------------------------------
# small output helpers


def _write_text(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def _write_json(path: Path, payload) -> Path:
    return _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _export_fields(path: Path, grid, named: dict[str, np.ndarray]) -> Path:
    """Slab samples of coefficient fields as one flat CSV."""
    axes = [f"x{i + 1}" for i in range(grid.n)] + ["t"]
    shape = grid.spatial_shape + (grid.nt,)
    mesh = np.broadcast_to(grid.points()[..., None, :], shape + (grid.n,))
    cols = [mesh[..., i].ravel() for i in range(grid.n)]
    cols.append(np.broadcast_to(grid.t_axis, shape).ravel())
    names = list(named)
    cols += [np.asarray(named[nm]).ravel() for nm in names]
    header = ",".join(axes + names)
    data = np.column_stack(cols)
    lines = [header] + [",".join(FLOAT_FMT % v for v in row) for row in data]
    return _write_text(path, "\n".join(lines) + "\n")


def _slab_eval(f, grid) -> np.ndarray:
    shape = grid.spatial_shape + (grid.nt,)
    x = np.broadcast_to(grid.points()[..., None, :], shape + (grid.n,))
    t = np.broadcast_to(grid.t_axis, shape)
    return np.asarray(f.eval(x, t), dtype=float)


# ---------------------------------------------------------------------------
# runners; each returns (files, manifest_extra, exit_code)


def run_forward(cfg, out: Path, threads: int):
    grid = build_grid(cfg)
    medium = build_medium(cfg.get("medium"), grid.n, grid.T)
    dirs = build_directions(cfg, ["+e1"])
    tau = build_tau(cfg, grid)
    ds = forward_data(
        medium, dirs, grid, tau_values=tau, threads=threads, method=cfg.get("method")
    )
    files = ds.save(out)
    return files, {"background": ds.all_background}, 0


def _draw_bumps(rng, fields, amplitude, pert, T, n):
    """One random perturbation: a bump per field, ball-respecting."""
    rx = pert.get("radius_x", 0.4)
    rt = pert.get("radius_t", 0.4)
    box = pert.get("center_box", min(0.5, 1.0 - rx))
    if box + rx > 1.0 + 1e-12:
        raise ConfigError("perturbation.center_box + radius_x leaves the unit ball")
    if 2 * rt > T:
        raise ConfigError("perturbation.radius_t exceeds half the time window")
    specs = []
    for f in fields:
        center = [float(rng.uniform(-box, box)) for _ in range(n)]
        ct = float(rng.uniform(rt, T - rt))
        amp = float(amplitude * rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0]))
        specs.append(
            {
                "field": f,
                "center_x": center,
                "center_t": ct,
                "radius_x": rx,
                "radius_t": rt,
                "amplitude": amp,
            }
        )
    return specs


def _stability_summary(reports):
    ratios = [r.ratio for r in reports if r.ratio is not None]
    if ratios:
        spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
        stats = {
            "ratio_min": min(ratios),
            "ratio_max": max(ratios),
            "spread": spread,
        }
    else:
        stats = {"ratio_min": None, "ratio_max": None, "spread": None}
    per_amp = {}
    for r in reports:
        per_amp.setdefault(r.amplitude, []).append(r.ratio)
    stats["per_amplitude"] = {
        str(a): {
            "n": len(v),
            "ratio_mean": (
                float(np.mean([x for x in v if x is not None]))
                if any(x is not None for x in v)
                else None
            ),
        }
        for a, v in sorted(per_amp.items(), key=lambda kv: kv[0])
    }
    return stats


def run_stability(cfg, out: Path, threads: int):
    kind = cfg["kind"]
    problem = kind.split("-", 1)[1]
    grid = build_grid(cfg)
    n, T = grid.n, grid.T
    base = build_medium(cfg.get("medium"), n, T)
    base_specs = [s.to_json() for s in (base.specs or ())]
    pert = cfg["perturbation"]
    if problem == "q":
        dirs = build_directions(cfg, ["+e1"])
    else:
        dirs = build_directions(cfg, [d.label for d in stability_directions(problem, n)])
    tau = build_tau(cfg, grid)
    rng = np.random.default_rng(cfg.get("seed", 0))

    ds_base = forward_data(base, dirs, grid, tau_values=tau, threads=threads,
                           method=cfg.get("method"))
    psi_base = solve_psi(base, grid) if problem == "abc" else None
    q_base = compute_q(base)

    reports = []
    for amp in pert["amplitudes"]:
        for draw in range(pert["draws"]):
            specs = _draw_bumps(rng, pert["fields"], amp, pert, T, n)
            if problem == "ab":
                # share the potential exactly: the perturbed medium realizes
                # the base's q through its c
                med2 = CoefficientSet.from_bumps(n, base_specs + specs, T=T)
                med2 = with_prescribed_q(med2.a, med2.b, q_base)
            else:
                med2 = CoefficientSet.from_bumps(n, base_specs + specs, T=T)
            ds2 = forward_data(med2, dirs, grid, tau_values=tau, threads=threads,
                               method=cfg.get("method"))
            if problem == "q":
                rep = thm_q_functional(q_base, compute_q(med2), ds_base, ds2, amplitude=amp)
            elif problem == "ab":
                rep = thm_ab_functional(
                    base.a, base.b, med2.a, med2.b, ds_base, ds2, amplitude=amp
                )
            else:
                psi2 = solve_psi(med2, grid)
                rep = thm_abc_functional(
                    base, med2, ds_base, ds2, psi_base, psi2, amplitude=amp
                )
            rep.detail["draw"] = specs
            reports.append(rep)
            log.info(
                "%s amplitude %g draw %d: ratio %s", kind, amp, draw,
                "n/a" if rep.ratio is None else f"{rep.ratio:.4f}",
            )

    files = [
        _write_text(out / f"stability_{problem}.csv", ""),
        _write_json(out / "reports.json", [r.to_dict() for r in reports]),
        _write_json(out / "summary.json", _stability_summary(reports)),
    ]
    write_stability_csv(reports, out / f"stability_{problem}.csv")
    return files, {"n_reports": len(reports)}, 0


def run_carleman(cfg, out: Path, threads: int):
    grid = build_grid(cfg)
    medium = build_medium(cfg.get("medium"), grid.n, grid.T)
    sec = cfg["carleman"]
    tf = sec["test_function"]
    w = Bump(
        n=grid.n,
        center_x=tuple(tf["center_x"]),
        center_t=tf["center_t"],
        radius_x=tf["radius_x"],
        radius_t=tf["radius_t"],
        amplitude=tf.get("amplitude", 1.0),
    )
    omega = Direction.from_label(sec.get("omega", "+e1"))
    report = carleman_check(
        w, medium, omega, sec.get("tau", 0.0), cfg["sigmas"], grid
    )
    files = [out / "carleman.csv", out / "carleman.json"]
    report.save_csv(files[0])
    report.save_json(files[1])
    return files, {"single_constant": report.single_constant}, 0


def run_invert(cfg, out: Path, threads: int):
    kind = cfg["kind"]
    problem = kind.split("-", 1)[1]
    grid = build_grid(cfg)
    n, T = grid.n, grid.T
    truth = build_medium(cfg["truth"], n, T)
    if problem == "q":
        dirs = build_directions(cfg, ["+e1"])
    else:
        dirs = build_directions(cfg, [d.label for d in stability_directions(problem, n)])
    tau = build_tau(cfg, grid)
    observed = forward_data(truth, dirs, grid, tau_values=tau, threads=threads,
                            method=cfg.get("method"))
    icfg = build_inversion(cfg, problem, threads)

    if problem == "q":
        res = reconstruct_q(
            truth.a, truth.b, observed, icfg, grid, truth=compute_q(truth)
        )
        fields = {
            "q_recovered": _slab_eval(compute_q(res.coeffs), grid),
            "q_truth": _slab_eval(compute_q(truth), grid),
        }
    elif problem == "ab":
        res = reconstruct_ab(
            compute_q(truth), observed, icfg, grid, truth=(truth.a, truth.b)
        )
        fields = {"a_recovered": _slab_eval(res.coeffs.a, grid),
                  "a_truth": _slab_eval(truth.a, grid)}
        for i in range(n):
            fields[f"b{i + 1}_recovered"] = _slab_eval(res.coeffs.b[i], grid)
            fields[f"b{i + 1}_truth"] = _slab_eval(truth.b[i], grid)
    else:
        psi = solve_psi(truth, grid)
        res = reconstruct_abc(observed, psi, icfg, grid, truth=truth)
        from .media import curl_eta

        ce_r, ce_t = curl_eta(res.coeffs), curl_eta(truth)
        shape = grid.spatial_shape + (grid.nt,)
        x = np.broadcast_to(grid.points()[..., None, :], shape + (grid.n,))
        t = np.broadcast_to(grid.t_axis, shape)
        fields = {
            "c_recovered": np.asarray(res.coeffs.c.eval(x, t), dtype=float),
            "c_truth": np.asarray(truth.c.eval(x, t), dtype=float),
        }
        comps_r, comps_t = ce_r.components(x, t), ce_t.components(x, t)
        for k, lab in enumerate(ce_r.labels):
            tag = lab.replace("(", "").replace(")", "").replace(",", "_")
            fields[f"{tag}_recovered"] = comps_r[k]
            fields[f"{tag}_truth"] = comps_t[k]

    files = [out / "result.json", out / "history.csv", out / "fields.csv"]
    res.save_json(files[0])
    res.save_history_csv(files[1])
    _export_fields(files[2], grid, fields)
    code = 3 if res.stop == "stalled" else 0
    extra = {"stop": res.stop, "rel_error": res.rel_error}
    return files, extra, code


_CONV_COLS = ("u", "u_t", "u_tt", "v", "v_t")


def run_convergence(cfg, out: Path, threads: int):
    grid0 = build_grid(cfg)
    if grid0.n != 1:
        raise ConfigError("the convergence study runs on the line only")
    T = grid0.T
    margin = cfg["grid"].get("margin", T + 2.0)
    hs = sorted(cfg["resolutions"], reverse=True)
    medium_sec = cfg.get("medium")
    omega = build_directions(cfg, ["+e1"])[0]
    dtau = cfg.get("tau", {}).get("dtau", 0.2)

    levels = []
    x_min = None
    for h in hs:
        grid = make_grid(n=1, T=T, h=h, margin=margin)
        if x_min is None:
            x_min = grid.x_min
        elif grid.x_min != x_min:
            raise ConfigError(
                "resolutions do not share a lattice origin; pick h values and a "
                "margin so every h divides the spatial extent"
            )
        medium = build_medium(medium_sec, 1, T)
        u = solve_u(medium, omega, 0.0, grid)
        v = solve_v(medium, omega, 0.0, grid)
        tr = extract_traces(u, v)
        tau = build_tau({"tau": {"dtau": dtau}}, grid)
        ds0 = forward_data(CoefficientSet.zero(1), [omega], grid, tau_values=tau,
                           threads=threads)
        ds1 = forward_data(medium, [omega], grid, tau_values=tau, threads=threads)
        func = thm_q_functional(compute_q(CoefficientSet.zero(1)), compute_q(medium),
                                ds0, ds1)
        levels.append({"h": h, "grid": grid, "traces": tr, "rhs": func.rhs})

    def common_diff(lc, lf):
        """Sup difference of trace columns on the shared spatial lattice."""
        ratio = round(lc["h"] / lf["h"])
        (lo_c, hi_c), (lo_f, hi_f) = lc["traces"].window[0], lf["traces"].window[0]
        i0 = max(lo_c, math.ceil(lo_f / ratio))
        i1 = min(hi_c, hi_f // ratio)
        out = {}
        for col in _CONV_COLS:
            cc = lc["traces"].columns[col]
            ff = lf["traces"].columns[col]
            ic = np.arange(i0, i1 + 1)
            d = cc[ic - lo_c] - ff[ic * ratio - lo_f]
            out[col] = float(np.max(np.abs(d))) if d.size else 0.0
        return out

    rows = []
    diffs = [common_diff(levels[k], levels[k + 1]) for k in range(len(levels) - 1)]
    rho = hs[0] / hs[1]
    for col in _CONV_COLS:
        e = [d[col] for d in diffs]
        for k in range(len(e) - 1):
            if e[k] == 0.0 and e[k + 1] == 0.0:
                order = "exact"
            elif e[k + 1] == 0.0:
                order = "inf"
            else:
                order = "%.4f" % (math.log(e[k] / e[k + 1]) / math.log(rho))
            rows.append((col, hs[k], hs[k + 1], hs[k + 2], e[k], e[k + 1], order))
    fr = [abs(levels[k]["rhs"] - levels[k + 1]["rhs"]) for k in range(len(levels) - 1)]
    for k in range(len(fr) - 1):
        if fr[k] == 0.0 and fr[k + 1] == 0.0:
            order = "exact"
        elif fr[k + 1] == 0.0:
            order = "inf"
        else:
            order = "%.4f" % (math.log(fr[k] / fr[k + 1]) / math.log(rho))
        rows.append(("functional_q_rhs", hs[k], hs[k + 1], hs[k + 2], fr[k], fr[k + 1], order))

    lines = ["quantity,h_coarse,h_mid,h_fine,err_coarse,err_fine,order"]
    for q, h0, h1, h2, e0, e1, o in rows:
        lines.append(
            f"{q},{FLOAT_FMT % h0},{FLOAT_FMT % h1},{FLOAT_FMT % h2},"
            f"{FLOAT_FMT % e0},{FLOAT_FMT % e1},{o}"
        )
    files = [
        _write_text(out / "convergence.csv", "\n".join(lines) + "\n"),
        _write_json(out / "convergence.json", {
            "resolutions": hs,
            "functional_rhs": [lv["rhs"] for lv in levels],
        }),
    ]
    return files, {"resolutions": hs}, 0


_RUNNERS = {
    "forward": run_forward,
    "stability-q": run_stability,
    "stability-ab": run_stability,
    "stability-abc": run_stability,
    "carleman": run_carleman,
    "invert-q": run_invert,
    "invert-ab": run_invert,
    "invert-abc": run_invert,
    "convergence": run_convergence,
}


# ---------------------------------------------------------------------------
# entry point


def _setup_logging():
    name = os.environ.get("WAVETOMO_LOG", "error").lower()
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(name)
    if level is None:
        print(f"warning: WAVETOMO_LOG={name!r} not in error/info/debug", file=sys.stderr)
        level = logging.ERROR
    logging.basicConfig(level=level, format="%(name)s: %(message)s")


def _write_manifest(out: Path, cfg, files, extra, t0) -> None:
    hashes = {str(p.relative_to(out)): _sha256(p) for p in sorted(set(files))}
    manifest = {
        "kind": cfg["kind"],
        "config_hash": config_hash(cfg),
        "seed": cfg.get("seed", 0),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "wavetomo": __version__,
        },
        "wall_time_s": round(time.time() - t0, 3),
        "files": hashes,
        **extra,
    }
    _write_json(out / "manifest.json", manifest)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wavetomo",
        description="config-driven experiments: forward probing, stability "
        "functionals, the weighted wedge inequality, and twin inversions",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--output", help="output directory (default from config)")
        p.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    _setup_logging()

    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    if cfg["kind"] != args.command:
        print(
            f"config error: config kind {cfg['kind']!r} does not match "
            f"subcommand {args.command!r}",
            file=sys.stderr,
        )
        return 2

    out = Path(args.output or cfg.get("output") or f"runs/{cfg['kind']}")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    try:
        files, extra, code = _RUNNERS[cfg["kind"]](cfg, out, max(1, args.threads))
    except (ConfigError, MediumError, FunctionalError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (SolverError, InversionError, RegionError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    _write_manifest(out, cfg, files, extra, t0)
    if code != 0:
        print(f"run finished with numerical trouble: {extra}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
