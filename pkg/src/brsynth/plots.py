"""SVG figures: level-set contours, sampled classes and trajectory overlays."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "brsynth"
plt.rcParams["svg.fonttype"] = "none"

CLASS_STYLE = {0: ("black", "r1"), 1: ("0.6", "r2")}


def _finish(fig, run_id: str | None) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    text = buf.getvalue()
    if run_id:
        head, sep, rest = text.partition("?>")
        text = f"{head}{sep}\n<!-- run-id: {run_id} -->{rest}" if sep else f"<!-- run-id: {run_id} -->\n{text}"
    return text


def level_set_svg(contours, axes=("x1", "x2"), bounds=None, samples=None, classes=None,
                  trajectories=None, terminal=None, title: str = "", run_id: str | None = None,
                  reference=None) -> str:
    """Contours of ``w = 1`` (``gid=contour-N``) plus optional overlays.

    ``samples``/``classes``: initial conditions coloured by success class
    (0 = inner radius, 1 = outer radius).  ``trajectories``: list of (P, 2)
    arrays.  ``terminal``: (N, 2) terminal states.  ``reference``: list of
    polylines drawn dashed (e.g. an analytic set boundary).
    """
    fig, ax = plt.subplots(figsize=(5, 5))
    if samples is not None and len(samples):
        samples = np.asarray(samples)
        classes = np.zeros(len(samples), int) if classes is None else np.asarray(classes)
        for cls in sorted(CLASS_STYLE, reverse=True):
            sel = classes == cls
            if sel.any():
                color, lab = CLASS_STYLE[cls]
                ax.plot(samples[sel, 0], samples[sel, 1], ".", ms=2, color=color, label=lab,
                        gid=f"class-{cls}")
    for i, tr in enumerate(trajectories or []):
        tr = np.asarray(tr)
        ax.plot(tr[:, 0], tr[:, 1], "-", lw=0.6, color="tab:blue", alpha=0.7, gid=f"trajectory-{i}")
    if terminal is not None and len(terminal):
        terminal = np.asarray(terminal)
        ax.plot(terminal[:, 0], terminal[:, 1], "x", ms=3, color="tab:red", gid="terminal")
    for i, c in enumerate(reference or []):
        c = np.asarray(c)
        ax.plot(c[:, 0], c[:, 1], "--", lw=1.0, color="tab:green", gid=f"reference-{i}")
    for i, c in enumerate(contours or []):
        c = np.asarray(c)
        ax.plot(c[:, 0], c[:, 1], "-", lw=1.5, color="tab:orange", gid=f"contour-{i}")
    if bounds is not None:
        ax.set_xlim(*bounds[0])
        ax.set_ylim(*bounds[1])
    ax.set_xlabel(axes[0])
    ax.set_ylabel(axes[1])
    if title:
        ax.set_title(title)
    ax.set_aspect("auto")
    fig.tight_layout()
    return _finish(fig, run_id)


def sweep_svg(ks, values, reference: float | None = None, run_id: str | None = None) -> str:
    """Bound p*_k against k, with an optional reference volume line."""
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(ks, values, "o-", gid="bounds")
    if reference is not None:
        ax.axhline(reference, ls="--", color="tab:green", gid="reference")
    ax.set_xlabel("k")
    ax.set_ylabel("upper bound on BRS volume")
    fig.tight_layout()
    return _finish(fig, run_id)
