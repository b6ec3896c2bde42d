"""The four renderers and the summary assembler.

Each renderer reads one run directory, draws one figure, and returns
the markdown lines of its summary section.  Summary numbers are cited
verbatim from the source files — CSV cells as the exact strings on
disk, JSON values re-serialized by the json module — so the tables can
be diffed against the data without tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .reading import ReportError, Table, cite, load_manifest, read_json, read_table

PLOT_KINDS = ("convergence", "carleman", "stability", "reconstruction")

# which plot a run kind gets
_RUN_TO_PLOT = {
    "convergence": "convergence",
    "carleman": "carleman",
    "stability-q": "stability",
    "stability-ab": "stability",
    "stability-abc": "stability",
    "invert-q": "reconstruction",
    "invert-ab": "reconstruction",
    "invert-abc": "reconstruction",
}


@dataclass
class ReportSpec:
    """What to render: a run directory, plot kinds, and an image format."""

    input_dir: Path
    kinds: tuple[str, ...]
    fmt: str = "png"

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        if self.fmt not in ("png", "svg"):
            raise ReportError(f"unknown image format {self.fmt!r} (png or svg)")
        bad = [k for k in self.kinds if k not in PLOT_KINDS]
        if bad:
            raise ReportError(
                f"unknown plot kinds {bad}; available: {', '.join(PLOT_KINDS)}"
            )
        if not self.kinds:
            raise ReportError("no plot kinds requested")


def infer_kinds(manifest: dict) -> tuple[str, ...]:
    run_kind = manifest.get("kind")
    plot = _RUN_TO_PLOT.get(run_kind)
    if plot is None:
        raise ReportError(
            f"no plot kind for run kind {run_kind!r}; "
            f"pass --kinds to choose from: {', '.join(PLOT_KINDS)}"
        )
    return (plot,)


# ---------------------------------------------------------------------------
# markdown helpers


def _md_table(header: list[str], rows: list[list[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |",
             "| " + " | ".join("---" for _ in header) + " |"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return lines


def _section(title: str, image: Path, body: list[str]) -> list[str]:
    return [f"## {title}", "", f"![{image.stem}]({image.name})", ""] + body + [""]


# ---------------------------------------------------------------------------
# renderers; each returns the summary lines for its section


def _render_convergence(run_dir: Path, image: Path) -> list[str]:
    tab = read_table(run_dir, "convergence.csv")
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    quantities = sorted(set(tab.column("quantity")), key=tab.column("quantity").index)
    for q in quantities:
        rows = [r for r in tab.rows if r[tab.header.index("quantity")] == q]
        pts = {}
        for r in rows:
            get = lambda col: float(r[tab.header.index(col)])
            pts[get("h_coarse")] = get("err_coarse")
            pts[get("h_mid")] = get("err_fine")
        hs = sorted(h for h, e in pts.items() if e > 0)
        errs = [pts[h] for h in hs]
        if len(hs) >= 2:
            slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
            label = f"{q} (slope {slope:.2f})"
        else:
            label = f"{q} (exact)"
        if hs:
            ax.loglog(hs, errs, marker="o", label=label)
    ax.set_xlabel("mesh size h")
    ax.set_ylabel("trace error vs finest run")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(image)
    plt.close(fig)
    return _section("Convergence", image,
                    _md_table(tab.header, tab.rows))


def _render_carleman(run_dir: Path, image: Path) -> list[str]:
    tab = read_table(run_dir, "carleman.csv")
    blob = read_json(run_dir, "carleman.json")
    sig = tab.floats("sigma")
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ax.loglog(sig, tab.floats("lhs"), marker="o", label="lhs")
    ax.loglog(sig, tab.floats("rhs"), marker="s", label="rhs")
    ax.set_xlabel("weight exponent sigma")
    ax.set_ylabel("weighted energy")
    c = blob.get("constant")
    flag = "one constant" if blob.get("single_constant") else "no single constant"
    title = f"wedge inequality sweep ({flag}"
    title += f", C = {c:.3g})" if c is not None else ")"
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(image)
    plt.close(fig)
    body = _md_table(tab.header, tab.rows) + [
        "",
        f"- constant: {cite(blob['constant'])}",
        f"- single_constant: {cite(blob['single_constant'])}",
        f"- sigma0: {cite(blob['sigma0'])}",
        f"- monotone_tail: {cite(blob['monotone_tail'])}",
    ]
    return _section("Wedge inequality sweep", image, body)


def _render_stability(run_dir: Path, image: Path) -> list[str]:
    matches = sorted(Path(run_dir).glob("stability_*.csv"))
    if not matches:
        raise ReportError(f"stability_*.csv not found in {run_dir}")
    tab = read_table(run_dir, matches[0].name)
    summary = read_json(run_dir, "summary.json")
    amps = tab.floats("amplitude")
    ratios = tab.floats("ratio")
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ax.loglog(amps, ratios, linestyle="none", marker="o", alpha=0.6)
    for key, style in (("ratio_min", ":"), ("ratio_max", "--")):
        val = summary.get(key)
        if val:
            ax.axhline(val, linestyle=style, color="gray", linewidth=1,
                       label=f"{key} = {val:.3g}")
    ax.set_xlabel("perturbation amplitude")
    ax.set_ylabel("lhs / rhs")
    spread = summary.get("spread")
    ax.set_title(f"stability ratios over draws (spread {spread:.3g})"
                 if spread else "stability ratios over draws")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(image)
    plt.close(fig)

    body = [
        f"- ratio_min: {cite(summary['ratio_min'])}",
        f"- ratio_max: {cite(summary['ratio_max'])}",
        f"- spread: {cite(summary['spread'])}",
        "",
    ]
    per = summary.get("per_amplitude", {})
    if per:
        rows = [[amp, cite(stats["n"]), cite(stats["ratio_mean"])]
                for amp, stats in sorted(per.items(), key=lambda kv: float(kv[0]))]
        body += _md_table(["amplitude", "draws", "ratio_mean"], rows) + [""]
    body += _md_table(tab.header, tab.rows)
    return _section("Stability sweep", image, body)


def _render_reconstruction(run_dir: Path, image: Path) -> list[str]:
    fields = read_table(run_dir, "fields.csv")
    history = read_table(run_dir, "history.csv")
    result = read_json(run_dir, "result.json")

    pairs = [c[: -len("_recovered")] for c in fields.header if c.endswith("_recovered")]
    pairs = [p for p in pairs if f"{p}_truth" in fields.header]
    one_dim = "x2" not in fields.header

    n_panels = len(pairs) + 1
    fig, axes = plt.subplots(1, n_panels, figsize=(4.0 * n_panels, 3.6))
    axes = np.atleast_1d(axes)

    t = np.array(fields.floats("t"))
    for k, name in enumerate(pairs):
        ax = axes[k]
        rec = np.array(fields.floats(f"{name}_recovered"))
        tru = np.array(fields.floats(f"{name}_truth"))
        if one_dim:
            x = np.array(fields.floats("x1"))
            # the time slice where the truth is largest
            t_star = t[np.argmax(np.abs(tru))] if np.any(tru) else t[len(t) // 2]
            sel = t == t_star
            order = np.argsort(x[sel])
            ax.plot(x[sel][order], tru[sel][order], label="truth")
            ax.plot(x[sel][order], rec[sel][order], "--", label="recovered")
            ax.set_xlabel(f"x at t = {t_star:g}")
            ax.legend(fontsize=8)
        else:
            ax.plot(tru, rec, linestyle="none", marker=".", alpha=0.4)
            lim = max(1e-12, np.max(np.abs(tru)), np.max(np.abs(rec)))
            ax.plot([-lim, lim], [-lim, lim], color="gray", linewidth=1)
            ax.set_xlabel("truth")
            ax.set_ylabel("recovered")
        ax.set_title(name)
        ax.grid(True, alpha=0.3)

    ax = axes[-1]
    ax.semilogy(history.floats("iter"), history.floats("misfit"), marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel("misfit")
    rel = result.get("rel_error")
    ax.set_title(f"stop: {result.get('stop')}"
                 + (f", rel err {rel:.2e}" if rel is not None else ""))
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(image)
    plt.close(fig)

    body = [
        f"- problem: {cite(result['problem'])}",
        f"- stop: {cite(result['stop'])}",
        f"- n_iterations: {cite(result['n_iterations'])}",
        f"- misfit0: {cite(result['misfit0'])}",
        f"- misfit: {cite(result['misfit'])}",
        f"- rel_error: {cite(result['rel_error'])}",
        "",
        "Final iteration:",
        "",
    ]
    body += _md_table(history.header, history.rows[-1:])
    return _section("Reconstruction", image, body)


_RENDERERS = {
    "convergence": _render_convergence,
    "carleman": _render_carleman,
    "stability": _render_stability,
    "reconstruction": _render_reconstruction,
}


def render(spec: ReportSpec, out_dir: Path) -> list[Path]:
    """Render every requested kind; returns the written files."""
    manifest = load_manifest(spec.input_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    lines = [
        "# Run report",
        "",
        f"- source: `{spec.input_dir.name}`",
        f"- run kind: {cite(manifest.get('kind'))}",
        f"- seed: {cite(manifest.get('seed'))}",
        "",
    ]
    for kind in spec.kinds:
        image = out / f"{kind}.{spec.fmt}"
        lines += _RENDERERS[kind](spec.input_dir, image)
        written.append(image)
    summary = out / "summary.md"
    summary.write_text("\n".join(lines).rstrip() + "\n")
    written.append(summary)
    return written
