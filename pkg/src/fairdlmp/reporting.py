"""Result persistence: delimited output files and the machine-readable summary.

Numbers are written with 12 significant digits, '.' decimal separator,
LF line endings, so identical runs produce byte-identical files. The
per-aggregator price column is reconstructed as the exact float sum of
the stored (quantized) component columns, widening the format only when
12 digits would not round-trip, so the decomposition identity holds on
the stored values themselves.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .runner import RunRecord, SweepRow


def fmt(value: float) -> str:
    """12-significant-digit decimal rendering."""
    return f"{float(value):.12g}"


def fmt_roundtrip(value: float) -> str:
    """Shortest rendering from 12 digits upward that parses back exactly."""
    for digits in range(12, 18):
        s = f"{float(value):.{digits}g}"
        if float(s) == float(value):
            return s
    return repr(float(value))


def quantize(value: float) -> float:
    return float(fmt(value))


def _write(path: str, lines: list[str]) -> str:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


def emit_aggregator_table(record: RunRecord, path: str) -> str:
    """Per-aggregator allocation, price, and DLMP component columns."""
    res = record.result
    sc = record.scenario
    net = sc.load_network()
    lines = ["label,node,p,c,c_V,c_C,c_EL,c_F,G"]
    for i, (label, node) in enumerate(zip(net.aggregator_labels, net.aggregator_nodes)):
        comps = [quantize(res.breakdown.voltage[i]), quantize(res.breakdown.congestion[i]),
                 quantize(res.breakdown.energy_loss[i]), quantize(res.breakdown.fairness[i])]
        total = comps[0] + comps[1] + comps[2] + comps[3]
        lines.append(",".join([
            label, str(int(node)), fmt(res.p[i]), fmt_roundtrip(total),
            fmt(comps[0]), fmt(comps[1]), fmt(comps[2]), fmt(comps[3]),
            str(int(sc.group_sizes[int(node)])),
        ]))
    return _write(path, lines)


def emit_trace(record: RunRecord, path: str) -> str:
    lines = ["iteration,dp_l1,augmented_lagrangian,max_slack,jain"]
    for it, dp, la, slack, jain in record.result.trace:
        dp_s = fmt(dp) if np.isfinite(dp) else "inf"
        jain_s = fmt(jain) if np.isfinite(jain) else "nan"
        lines.append(f"{it},{dp_s},{fmt(la)},{fmt(slack)},{jain_s}")
    return _write(path, lines)


def emit_linearization_report(record: RunRecord, path: str) -> str:
    """Per-node/line predicted-vs-actual rows for the validate command."""
    rep = record.linearization
    lines = ["quantity,id,predicted,actual,abs_error"]
    for i in range(len(rep.predicted_voltage)):
        lines.append(f"V,{i + 1},{fmt(rep.predicted_voltage[i])},"
                     f"{fmt(rep.actual_voltage[i])},{fmt(rep.voltage_error[i])}")
    for i in range(len(rep.predicted_flow)):
        lines.append(f"P,{i + 1},{fmt(rep.predicted_flow[i])},"
                     f"{fmt(rep.actual_flow[i])},{fmt(rep.flow_error[i])}")
    for i in range(len(rep.predicted_loss)):
        lines.append(f"LP,{i + 1},{fmt(rep.predicted_loss[i])},"
                     f"{fmt(rep.actual_loss[i])},{fmt(rep.loss_error[i])}")
    return _write(path, lines)


def emit_sweep(rows: list[SweepRow], path: str) -> str:
    lines = ["fairness_weight,jain,total_welfare,price_of_fairness,converged,iterations"]
    for row in rows:
        lines.append(",".join([
            fmt(row.fairness_weight), fmt(row.jain), fmt(row.total_welfare),
            fmt(row.price_of_fairness), str(int(row.converged)), str(row.iterations),
        ]))
    return _write(path, lines)


def parse_sweep(path: str) -> list[SweepRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            C, jain, w, pof, conv, iters = line.strip().split(",")
            rows.append(SweepRow(fairness_weight=float(C), jain=float(jain),
                                 total_welfare=float(w), price_of_fairness=float(pof),
                                 converged=bool(int(conv)), iterations=int(iters)))
    return rows


def emit_summary(record: RunRecord, path: str) -> str:
    res = record.result
    cfg = dataclasses.asdict(record.config)
    payload = {
        "scenario_digest": record.scenario_digest,
        "scenario_kind": record.scenario.kind,
        "seed": record.scenario.seed,
        "config": cfg,
        "parameter_ranges": record.scenario.parameter_ranges,
        "iterations": res.iterations,
        "converged": res.converged,
        "termination": res.termination,
        "jain": res.jain,
        "total_welfare": res.total_welfare,
        "objective": res.objective,
        "slacks": res.slacks,
        "duals": {"lambda": res.duals["lambda"], "gamma": res.duals["gamma"],
                  "max_alpha_lower": float(np.max(res.duals["alpha_lower"])),
                  "max_alpha_upper": float(np.max(res.duals["alpha_upper"])),
                  "max_beta": float(np.max(res.duals["beta"]))},
        "max_linearization_voltage_error": record.linearization.max_voltage_error,
        "duration_s": record.duration_s,
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def emit_results(record: RunRecord, out_dir: str,
                 sweep_rows: list[SweepRow] | None = None) -> dict[str, str]:
    """Write the full result bundle for one run; returns name -> path."""
    os.makedirs(out_dir, exist_ok=True)
    written = {
        "aggregators": emit_aggregator_table(record, os.path.join(out_dir, "aggregators.csv")),
        "trace": emit_trace(record, os.path.join(out_dir, "trace.csv")),
        "linearization": emit_linearization_report(
            record, os.path.join(out_dir, "linearization_error.csv")),
        "summary": emit_summary(record, os.path.join(out_dir, "summary.json")),
    }
    if sweep_rows is not None:
        written["sweep"] = emit_sweep(sweep_rows, os.path.join(out_dir, "sweep.csv"))
    return written
