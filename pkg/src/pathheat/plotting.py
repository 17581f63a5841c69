"""PNG figures drawn from the CSV tables the runner writes."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {"figure.figsize": (6.4, 4.0), "figure.dpi": 110, "axes.grid": True,
         "grid.alpha": 0.3, "axes.spines.top": False, "axes.spines.right": False,
         "font.size": 10, "savefig.bbox": "tight"}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path.name


def eps_convergence(table, limit, path, title=""):
    """Log-log plot of ``|I(eps) - limit|`` with a slope-1 guide."""
    eps = np.array([e for e, _ in table])
    err = np.abs(np.array([v for _, v in table]) - limit)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keep = err > 0
        ax.loglog(eps[keep], err[keep], "o-", label="|I(eps) - limit|")
        if keep.any():
            ref = err[keep][0] * eps[keep] / eps[keep][0]
            ax.loglog(eps[keep], ref, "k--", lw=0.8, label="slope 1")
        ax.set_xlabel("eps")
        ax.set_ylabel("error")
        ax.set_title(title or "regularization error")
        ax.legend()
        return _save(fig, path)


def residual_scatter(rows, path):
    """``|residual|`` against ``t`` per spec; ``rows`` are dicts with spec, t, residual."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name in sorted({r["spec"] for r in rows}):
            pts = [(r["t"], max(abs(r["residual"]), 1e-18)) for r in rows if r["spec"] == name]
            ax.semilogy(*zip(*pts), "o", ms=4, label=name)
        ax.set_xlabel("t")
        ax.set_ylabel("|residual|")
        if rows:
            ax.legend()
        return _save(fig, path)


def value_sweep(rows, path):
    """``u(t, c eta)`` against ``t`` for each path scale ``c``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for c in sorted({r["scale"] for r in rows}):
            pts = sorted((r["t"], r["u"]) for r in rows if r["scale"] == c)
            ax.plot(*zip(*pts), label=f"scale {c:g}")
        ax.set_xlabel("t")
        ax.set_ylabel("u(t, eta)")
        ax.legend(fontsize=8)
        return _save(fig, path)


def ks_bars(rows, critical, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = [r["x"] for r in rows]
        ax.bar(range(len(x)), [r["ks"] for r in rows], color="tab:blue")
        ax.axhline(critical, color="tab:red", ls="--", label="critical value")
        ax.set_xticks(range(len(x)), [f"{v:.2f}" for v in x])
        ax.set_xlabel("probe x")
        ax.set_ylabel("KS statistic")
        ax.legend()
        return _save(fig, path)


def convergence(rows, path, x="N", y="rmse_rel", group=None, ylabel=None):
    """Log-log convergence lines, one per ``group`` value."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keys = sorted({r[group] for r in rows}) if group else [None]
        for key in keys:
            sel = [r for r in rows if group is None or r[group] == key]
            vals = [(r[x], r[y]) for r in sel if r[y] > 0]
            if vals:
                ax.loglog(*zip(*vals), "o-", label=key)
        ax.set_xlabel(x)
        ax.set_ylabel(ylabel or y)
        if group:
            ax.legend(fontsize=8)
        return _save(fig, path)


def martingale_bars(rows, path):
    """Deviation ``E u(t, .) - u(0, .)`` with three-standard-error bars."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name in sorted({r["solver"] for r in rows}):
            sel = [r for r in rows if r["solver"] == name]
            ax.errorbar([r["t"] for r in sel], [r["deviation"] for r in sel],
                        yerr=[3 * r["se"] for r in sel], fmt="o", capsize=3, label=name)
        ax.axhline(0.0, color="k", lw=0.8)
        ax.set_xlabel("t")
        ax.set_ylabel("deviation")
        ax.legend()
        return _save(fig, path)
