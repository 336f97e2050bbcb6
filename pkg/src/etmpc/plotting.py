"""Figure rendering for the report paths.

Every CSV-emitting command can drop a PNG next to its output: trajectories
for ``simulate``, the active-set-size histogram for ``batch``, and the
flop/bit sweeps for ``analyze``.  matplotlib is imported lazily so library
use never pays for it.
"""

from __future__ import annotations

from fractions import Fraction

__all__ = [
    "save_trajectory_figure",
    "save_qa_histogram",
    "save_sweep_figure",
]

_RC = {
    "figure.figsize": (7.0, 4.2),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.fontsize": 9,
}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    plt.rcParams.update(_RC)
    return plt


def save_trajectory_figure(trajectory, path: str) -> str:
    """States, inputs, and event markers over time."""
    plt = _pyplot()
    ks = [s.k for s in trajectory.steps]
    fig, (ax_x, ax_u) = plt.subplots(2, 1, sharex=True, figsize=(7.0, 5.4))
    states = trajectory.states
    for j in range(states.shape[1]):
        ax_x.plot(range(states.shape[0]), states[:, j], lw=1.0)
    ev = [s.k for s in trajectory.steps if s.e]
    for k in ev:
        ax_x.axvline(k, color="crimson", alpha=0.25, lw=0.8)
    ax_x.set_ylabel("states")
    ax_x.set_title(
        f"{trajectory.variant}: {len(trajectory.steps)} steps, "
        f"{trajectory.total_events} events"
    )
    inputs = trajectory.inputs
    for j in range(inputs.shape[1]):
        ax_u.step(ks, inputs[:, j], where="post", lw=1.0)
    ax_u.set_ylabel("inputs")
    ax_u.set_xlabel("step k")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_qa_histogram(report, mN: int, path: str) -> str:
    """Per-variant histogram of active-set sizes over a batch."""
    plt = _pyplot()
    fig, ax = plt.subplots()
    variants = list(report.aggregates)
    width = 0.8 / max(1, len(variants))
    xs = list(range(mN + 1))
    for i, v in enumerate(variants):
        hist = report.aggregates[v].q_active_hist
        ax.bar(
            [x + i * width for x in xs],
            [hist.get(x, 0) for x in xs],
            width=width,
            label=v,
        )
    ax.set_xlabel("active constraints per event (bounded by mN = %d)" % mN)
    ax.set_ylabel("events")
    ax.set_title(f"{report.problem_name}: {report.count} runs, seed {report.seed}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_sweep_figure(reports, path: str) -> str:
    """Local flops and downlink bits for each variant across active-set sizes.

    The flop panel also shows the (1 + 18/79) * flops_mat line, the proven
    ceiling on the A1 total.
    """
    plt = _pyplot()
    by_variant: dict[str, list] = {}
    for r in reports:
        by_variant.setdefault(r.variant, []).append(r)
    for v in by_variant:
        by_variant[v].sort(key=lambda r: r.dims.q_active)

    fig, (ax_f, ax_b) = plt.subplots(1, 2, figsize=(9.5, 4.0))
    bound = 1 + Fraction(18, 79)
    for v, rs in by_variant.items():
        qa = [r.dims.q_active for r in rs]
        ax_f.plot(qa, [r.flops for r in rs], label=v, lw=1.2)
        ax_b.plot(qa, [r.bits for r in rs], label=v, lw=1.2)
    a1 = by_variant.get("A1", [])
    if a1:
        qa = [r.dims.q_active for r in a1]
        ax_f.plot(qa, [float(bound) * r.flops_mat for r in a1],
                  "k--", lw=1.0, label="(1+18/79) flops_mat")
    ax_f.set_xlabel("active constraints")
    ax_f.set_ylabel("local flops per event")
    ax_b.set_xlabel("active constraints")
    ax_b.set_ylabel("downlink bits per event")
    ax_f.legend()
    ax_b.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
