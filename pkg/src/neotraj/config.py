"""Run configuration: one JSON document covering every tunable.

Defaults mirror the planner's main parameter table (M, D, S, v_max,
duration bounds, replan/foreseeing intervals, cost weights) plus the
documented artifact defaults.  Unknown keys in a config file are
rejected so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields


@dataclass
class RunConfig:
    # trajectory parameterization
    m_pieces: int = 3
    dims: int = 2
    s_order: int = 3
    # limits and duration bounds
    v_max: float = 1.0
    a_max: float = 2.0
    t_min: float = 0.5
    t_max: float = 5.0
    # objective
    weights: tuple[float, float, float, float] = (1.0, 1.0, 10000.0, 1.0)
    kappa: int = 16
    d_safe: float = 0.4
    # solver
    history: int = 8
    max_iterations: int = 200
    g_tol: float = 1e-5
    f_tol: float = 1e-8
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_steps: int = 40
    # world
    resolution: float = 0.1
    # replanning framework
    replan_interval: float = 1.0
    foresee: float = 1.0
    latency: float = 0.0
    use_wall_time: bool = False
    lookahead: float = 6.0
    goal_tolerance: float = 0.5
    timeout: float = 90.0
    drone_radius: float = 0.3
    kp: float = 8.0
    kv: float = 5.0
    tick_rate: float = 60.0
    # perception
    n_rays: int = 64
    fov_deg: float = 87.0
    max_range: float = 5.0
    # initializers
    cruise_fraction: float = 0.7
    deform_amplitude: float = 1.5

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self) -> None:
        if isinstance(self.weights, list):
            self.weights = tuple(self.weights)
        if len(self.weights) != 4 or any(w < 0 for w in self.weights):
            raise ValueError("weights must be four nonnegative numbers")
        if not 0 < self.t_min < self.t_max:
            raise ValueError("need 0 < t_min < t_max")
        if self.m_pieces < 1 or self.dims < 1:
            raise ValueError("m_pieces and dims must be >= 1")
        if self.replan_interval <= 0 or self.foresee < 0:
            raise ValueError("replan_interval must be > 0 and foresee >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d
