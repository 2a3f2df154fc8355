"""Deterministic scenario generation for the bundled 37-node feeder.

Three stock scenario kinds:
  I   - every aggregator has 10 prosumers, no PV.
  II  - as I, but 20 prosumers at the aggregators on nodes 12, 25, 27, 36.
  III - as I, but prosumers at nodes 23, 26, 31 carry PV generation.

Prosumer parameters are drawn from a Philox-backed generator with one
substream per (seed, node, prosumer index), so adding prosumers or
aggregators never perturbs existing draws. Parameter ranges
(a ~ U[1,4], b ~ U[0.5,2], g ~ U[0,0.05] pu) are package defaults and
are NOT calibrated against any published setup; they are echoed into
every output so results stay traceable.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .agents import Aggregator, Prosumer
from .network import RadialNetwork, bundled_feeder_path, parse_feeder

DOUBLED_NODES = (12, 25, 27, 36)   # scenario II
PV_NODES = (23, 26, 31)            # scenario III

DEFAULTS = {
    "group_size": 10,
    "a_range": (1.0, 4.0),
    "b_range": (0.5, 2.0),
    "g_range": (0.0, 0.05),
    "c0": 3.0,
    "eta": 1e-2,
    "fairness_weight": 0.0,
    "power_factor": 0.95,
    "procurement_fraction": 0.95,  # P0 = fraction * import at the flat-price pre-solve
}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    """Fully materialized market scenario: feeder + agents + run configuration."""

    kind: str
    seed: int
    feeder: str                           # bundled feeder name or file path
    group_sizes: dict[int, int]           # node -> prosumer count
    prosumers: dict[int, list[tuple[float, float, float]]]  # node -> (a, b, g)
    c0: float
    eta: float
    fairness_weight: float
    power_factor: float
    P0: float | None = None               # None -> derived from the pre-solve
    procurement_fraction: float = 0.95
    epsilon: float | None = None          # None -> feeder value
    line_limit_scale: float = 1.0
    parameter_ranges: dict = field(default_factory=dict)

    def digest(self) -> str:
        payload = {
            "kind": self.kind, "seed": self.seed, "feeder": self.feeder,
            "group_sizes": {str(k): v for k, v in sorted(self.group_sizes.items())},
            "prosumers": {str(k): v for k, v in sorted(self.prosumers.items())},
            "c0": self.c0, "eta": self.eta, "fairness_weight": self.fairness_weight,
            "power_factor": self.power_factor, "P0": self.P0,
            "procurement_fraction": self.procurement_fraction,
            "epsilon": self.epsilon, "line_limit_scale": self.line_limit_scale,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def load_network(self) -> RadialNetwork:
        path = self.feeder
        if not path.endswith(".feeder") and "/" not in path:
            path = bundled_feeder_path(path)
        net = parse_feeder(path)
        if self.epsilon is not None or self.line_limit_scale != 1.0:
            from dataclasses import replace
            net = replace(net,
                          epsilon=self.epsilon if self.epsilon is not None else net.epsilon,
                          p_limit=net.p_limit * self.line_limit_scale,
                          q_limit=net.q_limit * self.line_limit_scale)
        return net

    def build_aggregators(self, net: RadialNetwork) -> list[Aggregator]:
        aggs = []
        for node, label in zip(net.aggregator_nodes, net.aggregator_labels):
            params = self.prosumers[int(node)]
            aggs.append(Aggregator(node=int(node), label=label,
                                   prosumers=[Prosumer(a, b, g) for a, b, g in params]))
        return aggs

    def tan_phi(self, n_aggregators: int) -> np.ndarray:
        return np.full(n_aggregators, math.tan(math.acos(self.power_factor)))

    def to_json(self) -> str:
        d = asdict(self)
        d["group_sizes"] = {str(k): v for k, v in d["group_sizes"].items()}
        d["prosumers"] = {str(k): v for k, v in d["prosumers"].items()}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        d = json.loads(text)
        d["group_sizes"] = {int(k): v for k, v in d["group_sizes"].items()}
        d["prosumers"] = {int(k): [tuple(t) for t in v] for k, v in d["prosumers"].items()}
        d["parameter_ranges"] = {k: tuple(v) if isinstance(v, list) else v
                                 for k, v in d.get("parameter_ranges", {}).items()}
        return cls(**d)


def _substream(seed: int, node: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(node, index))
    return np.random.Generator(np.random.Philox(ss))


def generate_scenario(kind: str, seed: int, overrides: dict | None = None) -> Scenario:
    """Deterministic scenario from (kind, seed); overrides replace config defaults."""
    kind = kind.upper().strip()
    if kind not in ("I", "II", "III"):
        raise ScenarioError(f"unknown scenario kind {kind!r}")
    cfg = dict(DEFAULTS)
    overrides = dict(overrides or {})
    feeder = overrides.pop("feeder", "ieee37_modified")
    P0 = overrides.pop("P0", None)
    epsilon = overrides.pop("epsilon", None)
    line_limit_scale = overrides.pop("line_limit_scale", 1.0)
    unknown = set(overrides) - set(cfg)
    if unknown:
        raise ScenarioError(f"unknown overrides: {sorted(unknown)}")
    cfg.update(overrides)
    if cfg["group_size"] < 1:
        raise ScenarioError("group_size must be >= 1")

    path = feeder if ("/" in feeder or feeder.endswith(".feeder")) else bundled_feeder_path(feeder)
    net = parse_feeder(path)

    group_sizes = {}
    prosumers = {}
    for node in net.aggregator_nodes:
        node = int(node)
        g_count = cfg["group_size"]
        if kind == "II" and node in DOUBLED_NODES:
            g_count = 2 * cfg["group_size"]
        group_sizes[node] = g_count
        has_pv = kind == "III" and node in PV_NODES
        rows = []
        for i in range(g_count):
            rng = _substream(seed, node, i)
            a = float(rng.uniform(*cfg["a_range"]))
            b = float(rng.uniform(*cfg["b_range"]))
            g = float(rng.uniform(*cfg["g_range"])) if has_pv else 0.0
            rows.append((a, b, g))
        prosumers[node] = rows

    return Scenario(
        kind=kind, seed=seed, feeder=feeder,
        group_sizes=group_sizes, prosumers=prosumers,
        c0=cfg["c0"], eta=cfg["eta"], fairness_weight=cfg["fairness_weight"],
        power_factor=cfg["power_factor"], P0=P0,
        procurement_fraction=cfg["procurement_fraction"],
        epsilon=epsilon, line_limit_scale=line_limit_scale,
        parameter_ranges={"a": cfg["a_range"], "b": cfg["b_range"], "g": cfg["g_range"],
                          "verified_against_publication": False},
    )
