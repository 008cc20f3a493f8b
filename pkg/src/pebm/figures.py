"""Figure rendering for the CLI report paths.

Each CSV product has a sibling PNG; matplotlib is imported lazily so that
library use and --no-figures runs never touch a rendering backend.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


_STRESS_COMPONENTS = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]


def trajectory_figure(times, cauchy, xi, path):
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True,
                                   height_ratios=[2, 1])
    for i, j in _STRESS_COMPONENTS:
        ax1.plot(times, cauchy[:, i, j], label=f"T{i + 1}{j + 1}", lw=1.2)
    ax1.set_ylabel("Cauchy stress [MPa]")
    ax1.legend(ncol=3, fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.plot(times, xi, color="k", lw=1.0)
    ax2.set_xlabel("t [s]")
    ax2.set_ylabel("inelastic increment")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def convergence_figure(series, path):
    """Log-log max-error-vs-dt plot for a list of ErrorSeries."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    by_integ = {}
    for s in series:
        by_integ.setdefault(s.integrator, []).append((s.dt, s.max_error))
    for integ, pts in sorted(by_integ.items()):
        pts.sort()
        dts = [p[0] for p in pts]
        errs = [p[1] for p in pts]
        ax.loglog(dts, errs, "o-", label=integ)
    ax.set_xlabel("dt [s]")
    ax.set_ylabel("max Cauchy-stress error [MPa]")
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def grid_figure(f11_values, f12_values, values, title, path,
                log_scale=False):
    """Filled-contour map over the (F12, F11) increment grid."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    V = np.ma.masked_invalid(np.asarray(values, dtype=float))
    if log_scale:
        V = np.ma.masked_less_equal(V, 0.0)
        from matplotlib.colors import LogNorm
        pcm = ax.pcolormesh(f12_values, f11_values, V, norm=LogNorm(),
                            shading="nearest")
    else:
        pcm = ax.pcolormesh(f12_values, f11_values, V, shading="nearest")
    fig.colorbar(pcm, ax=ax)
    ax.set_xlabel("F12")
    ax.set_ylabel("F11")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def audit_figure(report, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    n = len(report.stress_deviations)
    ax.semilogy(range(1, n + 1), report.stress_deviations, "o",
                label="stress deviation")
    ax.semilogy(range(1, n + 1), report.internal_deviations, "s",
                label="internal-variable deviation")
    ax.axhline(report.control_additive, color="r", ls="--", lw=1,
               label="control: diagonal-shift correction")
    ax.axhline(report.control_shift, color="m", ls=":", lw=1,
               label="control: non-equivariant shift")
    ax.set_xlabel("random reference change #")
    ax.set_ylabel("max relative deviation")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def roundoff_figure(report, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    xp = np.asarray(report.xi_primes)
    for k in range(len(xp)):
        label = dict(label="naive form") if k == 0 else {}
        ax.loglog([xp[k]] * report.naive_deviation.shape[1],
                  report.naive_deviation[k], "r.", alpha=0.5, **label)
        label = dict(label="stable form") if k == 0 else {}
        ax.loglog([xp[k]] * report.stable_deviation.shape[1],
                  report.stable_deviation[k], "b.", alpha=0.5, **label)
    ax.set_xlabel("xi'")
    ax.set_ylabel("relative deviation from the xi' -> 0 limit")
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
