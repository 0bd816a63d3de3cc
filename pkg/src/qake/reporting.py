"""Delimited output and figure rendering for the command-line tools.

Sweeps and benches always emit CSV; when a figure path is given the same
data is rendered with matplotlib alongside the delimited output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

KEYRATE_COLUMNS = ("loss_db", "p_det", "key_length", "key_rate", "f_p1",
                   "eps_sec", "eps_sec_int", "eps_rob", "eps_ea", "eps_ms",
                   "eps_ks", "eps_sp", "h_prime", "e_ph_tol", "feasible")


def keyrate_rows(results, n_pulses: float):
    rows = []
    for r in results:
        rep = r.report
        rows.append({
            "loss_db": f"{r.loss_db:.6g}",
            "p_det": f"{r.p_det:.6g}",
            "key_length": r.key_length,
            "key_rate": f"{r.key_length / n_pulses:.6g}",
            "f_p1": f"{r.f_p1:.4f}",
            "eps_sec": f"{rep.eps_sec:.6g}",
            "eps_sec_int": f"{rep.eps_sec_int:.6g}",
            "eps_rob": f"{r.eps_rob:.6g}",
            "eps_ea": f"{rep.eps_ea:.6g}",
            "eps_ms": f"{rep.eps_ms:.6g}",
            "eps_ks": f"{rep.eps_ks:.6g}",
            "eps_sp": f"{rep.eps_sp:.6g}",
            "h_prime": f"{rep.h_prime:.6g}",
            "e_ph_tol": f"{rep.e_ph_tol:.6g}",
            "feasible": int(r.feasible),
        })
    return rows


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for row in rows:
            w.writerow(row)


def kv_block(mapping) -> str:
    """Flat key=value text block, one entry per line."""
    return "".join(f"{k}={v}\n" for k, v in mapping.items())


def render_keyrate_figure(results, n_pulses: float, path, variant: str) -> None:
    """Key length versus channel loss, log-scaled, written to file."""
    losses = [r.loss_db for r in results]
    lengths = [max(r.key_length, 0) for r in results]
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.plot(losses, lengths, "o-", color="#0067B3", label=variant)
    ax.set_yscale("log")
    ax.set_xlabel("channel loss (dB)")
    ax.set_ylabel("key length (bits)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    positive = [v for v in lengths if v > 0]
    if positive:
        ax.set_ylim(bottom=max(min(positive) / 3, 1))
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_ec_figure(outcomes, path) -> None:
    """Leakage distribution of a reconciliation bench, written to file."""
    leaks = [o.leakage_bits / 9504.0 for o in outcomes]
    rounds = [o.rounds_used for o in outcomes]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.5, 3.6))
    ax1.hist(leaks, bins=24, color="#0067B3")
    ax1.set_xlabel("leakage fraction of block")
    ax1.set_ylabel("trials")
    ax1.grid(alpha=0.3)
    ax2.hist(rounds, bins=range(1, 8), color="#8ACB33", align="left", rwidth=0.8)
    ax2.set_xlabel("rounds used")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_attack_figure(stats, path, strategy: str) -> None:
    labels = [f"({a},{b})" for (a, b) in stats.freq]
    counts = [stats.freq[k] for k in stats.freq]
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.bar(labels, counts, color="#FF9300")
    ax.set_xlabel("(F_A, F_B)")
    ax.set_ylabel("trials")
    ax.set_title(strategy)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
