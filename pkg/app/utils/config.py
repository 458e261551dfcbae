from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from app.services.estimation_service import CALIBRATION_SHOT_RATIO, grid_size

OUT_ROOT = os.getenv("SLOPPY_OUT_ROOT", "runs")

FIG3_K = (0.322, 0.785, 0.934)
DOMAIN_DEG = (0.0, 22.5)
STOCHASTIC_COMMANDS = {"sweep-fig3", "simulate", "calibrate", "estimate"}

# not written to meta.json
_LOCATION_KEYS = {"out"}


@dataclass
class RunConfig:
    """Every CLI flag with its default; flat JSON files use the same keys."""

    k: Optional[List[float]] = None
    theta1_deg: float = 10.0
    theta2_deg: Optional[List[float]] = None
    grid_step_deg: float = 2.5
    theta1_grid_deg: Optional[List[float]] = None
    shots: int = 10_000
    calibration_shots: Optional[int] = None
    exact_calibration: bool = False
    trials: int = 300
    replicas: int = 500
    seed: Optional[int] = None
    model: str = "ideal"
    objective: str = "lsq"
    t_h: float = 1.0
    t_v: float = 1.0 / 3.0
    visibility: float = 1.0
    rescaling: bool = True
    workers: int = 1
    calibration: Optional[str] = None
    counts: Optional[str] = None
    out: Optional[str] = None

    # ---------- loading ----------

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], source: str = "<config>") -> RunConfig:
        known = {f.name for f in fields(cls)}
        values: Dict[str, Any] = {}
        for raw_key, value in data.items():
            key = raw_key.replace("-", "_")
            if key not in known:
                raise ValueError(f"{source}: unknown config key '{raw_key}'")
            values[key] = value
        cfg = cls(**values)
        cfg._coerce(source)
        return cfg

    @classmethod
    def from_file(cls, path: str) -> RunConfig:
        """Flat JSON object, or a run's meta.json (its `config` record is used)."""
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValueError(f"{p}: config file not found") from None
        except json.JSONDecodeError as e:
            raise ValueError(f"{p}: not valid JSON ({e.msg} at line {e.lineno})") from None
        if isinstance(data, dict) and isinstance(data.get("config"), dict):
            data = data["config"]
        if not isinstance(data, dict):
            raise ValueError(f"{p}: expected a JSON object")
        return cls.from_mapping(data, source=str(p))

    def merged(self, overrides: Mapping[str, Any]) -> RunConfig:
        data = self.to_dict(include_location=True)
        data.update(overrides)
        return RunConfig.from_mapping(data, source="flags")

    def _coerce(self, source: str) -> None:
        def as_list(name: str) -> None:
            v = getattr(self, name)
            if v is None:
                return
            if isinstance(v, (int, float)):
                v = [v]
            try:
                setattr(self, name, [float(x) for x in v])
            except (TypeError, ValueError):
                raise ValueError(f"{source}: '{name}' must be a number or a list of numbers") from None

        for name in ("k", "theta2_deg", "theta1_grid_deg"):
            as_list(name)
        try:
            for name in ("theta1_deg", "grid_step_deg", "t_h", "t_v", "visibility"):
                setattr(self, name, float(getattr(self, name)))
            for name in ("shots", "trials", "replicas", "workers"):
                setattr(self, name, int(getattr(self, name)))
            for name in ("seed", "calibration_shots"):
                if getattr(self, name) is not None:
                    setattr(self, name, int(getattr(self, name)))
        except (TypeError, ValueError) as e:
            raise ValueError(f"{source}: {e}") from None
        if isinstance(self.rescaling, str):
            if self.rescaling.lower() not in ("on", "off", "true", "false"):
                raise ValueError(f"{source}: 'rescaling' must be on or off, got {self.rescaling!r}")
            self.rescaling = self.rescaling.lower() in ("on", "true")
        self.rescaling = bool(self.rescaling)
        self.exact_calibration = bool(self.exact_calibration)

    # ---------- derived values ----------

    def k_values(self, command: str) -> List[float]:
        if self.k is not None:
            return list(self.k)
        if command == "info":
            return sorted(set(np.round(np.linspace(0.0, 1.0, 11), 10).tolist()) | set(FIG3_K))
        if command == "sweep-fig3":
            return list(FIG3_K)
        return [FIG3_K[-1]]

    def theta2_values(self, command: str) -> List[float]:
        if self.theta2_deg is not None:
            return list(self.theta2_deg)
        if command == "sweep-fig3":
            return self.uniform_deg()
        return [5.0]

    def theta1_grid(self) -> List[float]:
        return list(self.theta1_grid_deg) if self.theta1_grid_deg is not None else self.uniform_deg()

    def uniform_deg(self) -> List[float]:
        lo, hi = DOMAIN_DEG
        return np.linspace(lo, hi, grid_size(lo, hi, self.grid_step_deg)).tolist()

    def calibration_shots_per_node(self) -> Optional[int]:
        if self.exact_calibration:
            return None
        # 5 s calibration vs 0.1 s estimation acquisitions
        return self.calibration_shots if self.calibration_shots is not None else CALIBRATION_SHOT_RATIO * self.shots

    def out_dir(self, command: str) -> Path:
        return Path(self.out) if self.out else Path(OUT_ROOT) / command

    # ---------- validation ----------

    def validate(self, command: str) -> None:
        lo, hi = DOMAIN_DEG
        grid_size(lo, hi, self.grid_step_deg)
        for K in self.k_values(command):
            if not (math.isfinite(K) and 0.0 <= K <= 1.0):
                raise ValueError(f"K must lie in [0, 1], got {K}")
        angles = [self.theta1_deg, *self.theta2_values(command)]
        if self.theta1_grid_deg is not None:
            angles += list(self.theta1_grid_deg)
        for a in angles:
            if not (math.isfinite(a) and lo <= a <= hi):
                raise ValueError(f"Angles must lie in [{lo}, {hi}] degrees, got {a}")
        for name in ("shots", "trials", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.replicas < 0 or self.replicas == 1:
            raise ValueError(f"replicas must be 0 or >= 2, got {self.replicas}")
        if command == "sweep-fig3" and self.trials < 2:
            raise ValueError(f"trials must be >= 2, got {self.trials}")
        if self.calibration_shots is not None and self.calibration_shots < 1:
            raise ValueError(f"calibration_shots must be >= 1, got {self.calibration_shots}")
        if self.model not in ("ideal", "optics"):
            raise ValueError(f"model must be 'ideal' or 'optics', got {self.model!r}")
        if self.objective not in ("lsq", "mle"):
            raise ValueError(f"objective must be 'lsq' or 'mle', got {self.objective!r}")
        for name in ("t_h", "t_v", "visibility"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

        needs_seed = command in STOCHASTIC_COMMANDS
        if command == "calibrate" and self.exact_calibration:
            needs_seed = False
        if command == "estimate" and self.replicas == 0:
            needs_seed = False
        if needs_seed and self.seed is None:
            raise ValueError(f"'{command}' is stochastic and needs --seed")
        if command == "estimate":
            for name in ("calibration", "counts"):
                if not getattr(self, name):
                    raise ValueError(f"'estimate' needs --{name} FILE")

    def to_dict(self, include_location: bool = False) -> Dict[str, Any]:
        data = asdict(self)
        if not include_location:
            for key in _LOCATION_KEYS:
                data.pop(key, None)
        return data
