"""Report figures rendered next to the delimited result tables.

Small matplotlib helpers in one place so every command draws with the
same look. The Agg backend is forced: figures go to files, never to a
display.
"""

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

plt.rcParams.update(
    {
        "figure.dpi": 130,
        "font.size": 9,
        "axes.labelsize": 9,
        "axes.titlesize": 10,
        "legend.fontsize": 8,
        "xtick.labelsize": 8,
        "ytick.labelsize": 8,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "lines.linewidth": 1.4,
    }
)


def size(scale=1.0, width_in=6.4):
    w = width_in * scale
    return [w, w * _GOLDEN]


def save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_simulation(records, zbar, path, title="rolling-horizon evaluation"):
    """Per-roll stage cost, running average, and the horizon trace."""
    rolls = [r.roll for r in records]
    costs = [r.stage_cost for r in records]
    cum = [r.cum_avg for r in records]
    taus = [r.tau for r in records]
    fig, ax = plt.subplots(figsize=size())
    ax.plot(rolls, costs, color="#888", alpha=0.6, label="stage cost")
    ax.plot(rolls, cum, color="#b22", label="running average")
    ax.axhline(zbar, color="#b22", linestyle=":", alpha=0.7)
    ax.set_xlabel("roll")
    ax.set_ylabel("cost")
    ax.set_title(title)
    if len(set(taus)) > 1:
        twin = ax.twinx()
        twin.step(rolls, taus, where="mid", color="#26c", alpha=0.6, label="horizon")
        twin.set_ylabel("forecast horizon", color="#26c")
        twin.grid(False)
    ax.legend(loc="best")
    return save(fig, path)


def plot_horizon_map(hmap, path, samples=None):
    """Fitted state-to-horizon pieces over the scanned points."""
    fig, ax = plt.subplots(figsize=size())
    if samples:
        ax.scatter([s.phi1 for s in samples], [s.tau_star for s in samples],
                   s=14, color="#555", alpha=0.7, label="scan points", zorder=3)
    top = max((s.phi1 for s in samples), default=0.0) if samples else 0.0
    for piece in hmap.pieces:
        hi = piece.hi if math.isfinite(piece.hi) else max(top, piece.lo * 1.25 + 1000.0)
        xs = np.linspace(piece.lo, hi, 32)
        ax.plot(xs, piece.theta0 + piece.theta1 * xs, color="#b22")
    ax.set_xlabel("hydro energy potential")
    ax.set_ylabel("sufficient horizon")
    ax.set_title(f"horizon map (weighted R^2 = {hmap.r2_avg:.3f})")
    if samples:
        ax.legend(loc="best")
    return save(fig, path)


def plot_bound_curve(gammas, horizons, path, kappa=None, epsilon=None):
    """Sufficient-horizon growth against the discount factor."""
    fig, ax = plt.subplots(figsize=size())
    ax.semilogy(gammas, np.maximum(horizons, 1e-3), marker="o", color="#26c")
    ax.set_xlabel("discount factor")
    ax.set_ylabel("sufficient horizon")
    bits = []
    if kappa is not None:
        bits.append(f"cost bound {kappa:g}")
    if epsilon is not None:
        bits.append(f"tolerance {epsilon:g}")
    ax.set_title("horizon bound" + (f" ({', '.join(bits)})" if bits else ""))
    return save(fig, path)


def plot_training(report, path, title="training progress"):
    """Lower-bound trace with the sampled forward costs behind it."""
    fig, ax = plt.subplots(figsize=size())
    it = np.arange(1, len(report.lower_bounds) + 1)
    if report.forward_costs.size:
        fx = np.arange(1, len(report.forward_costs) + 1)
        ax.plot(fx, report.forward_costs, color="#999", alpha=0.5, label="forward path cost")
    ax.plot(it, report.lower_bounds, color="#b22", label="lower bound")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.set_title(f"{title} ({report.reason} after {report.iterations} iterations)")
    ax.legend(loc="best")
    return save(fig, path)
