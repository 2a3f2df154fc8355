"""Figure rendering for run and sweep reports (written next to the CSVs)."""

from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .runner import RunRecord, SweepRow


def plot_allocations(record: RunRecord, path: str) -> str:
    res = record.result
    labels = record.scenario.load_network().aggregator_labels
    idx = np.arange(len(labels))
    fig, ax1 = plt.subplots(figsize=(9, 4))
    ax1.bar(idx, res.p, color="steelblue", label="allocation $p_k$")
    ax1.set_ylabel("allocation (pu)")
    ax1.set_xticks(idx)
    ax1.set_xticklabels(labels, rotation=60, fontsize=8)
    ax2 = ax1.twinx()
    ax2.plot(idx, res.c, "k.-", label="unit cost $c_k$")
    ax2.set_ylabel("unit cost")
    ax1.set_title(f"Scenario {record.scenario.kind}, C={record.config.fairness_weight}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_components(record: RunRecord, path: str) -> str:
    res = record.result
    labels = record.scenario.load_network().aggregator_labels
    idx = np.arange(len(labels))
    comps = [("energy+loss", res.breakdown.energy_loss, "lightskyblue"),
             ("congestion", res.breakdown.congestion, "seagreen"),
             ("voltage", res.breakdown.voltage, "gold"),
             ("fairness", res.breakdown.fairness, "purple")]
    fig, ax = plt.subplots(figsize=(9, 4))
    pos = np.zeros(len(idx))
    neg = np.zeros(len(idx))
    for name, values, color in comps:
        base = np.where(values >= 0, pos, neg)
        ax.bar(idx, values, bottom=base, color=color, label=name)
        pos += np.maximum(values, 0)
        neg += np.minimum(values, 0)
    ax.plot(idx, res.c, "k.-", label="total $c_k$")
    ax.set_xticks(idx)
    ax.set_xticklabels(labels, rotation=60, fontsize=8)
    ax.set_ylabel("unit cost components")
    ax.legend(fontsize=8, ncol=5)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_trace(record: RunRecord, path: str) -> str:
    trace = record.result.trace
    if not trace:
        return ""
    its = [t[0] for t in trace]
    dps = [t[1] for t in trace]
    slacks = [t[3] for t in trace]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(its, np.maximum(dps, 1e-16), label=r"$\|\Delta p\|_1$")
    ax.semilogy(its, np.maximum(np.abs(slacks), 1e-16), label="max |slack|")
    ax.set_xlabel("iteration")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_sweep(rows: list[SweepRow], path: str) -> str:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    jains = [r.jain for r in rows]
    ax1.plot(jains, [r.total_welfare for r in rows], "o-")
    ax1.set_xlabel("Jain index")
    ax1.set_ylabel("total welfare")
    ax2.plot(jains, [r.price_of_fairness for r in rows], "o-")
    ax2.set_xlabel("Jain index")
    ax2.set_ylabel("price of fairness")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_linearization(record: RunRecord, path: str) -> str:
    rep = record.linearization
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(np.arange(1, len(rep.voltage_error) + 1),
                np.maximum(rep.voltage_error, 1e-16), "o-", label="|dV|")
    ax.semilogy(np.arange(1, len(rep.flow_error) + 1),
                np.maximum(rep.flow_error, 1e-16), "s-", label="|dP|")
    ax.set_xlabel("node / line")
    ax.set_ylabel("abs error (pu)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_run_figures(record: RunRecord, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    out = [plot_allocations(record, os.path.join(out_dir, "allocations.png")),
           plot_components(record, os.path.join(out_dir, "dlmp_components.png"))]
    p = plot_trace(record, os.path.join(out_dir, "trace.png"))
    if p:
        out.append(p)
    return out
