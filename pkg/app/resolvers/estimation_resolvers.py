# app/resolvers/estimation_resolvers.py
from __future__ import annotations

from typing import Any, Dict, Optional

import numpy as np
from graphql import GraphQLError

# ⬇️ role checks
from app.utils.authz import require_role

from app.services.estimation_service import CountTable, ExactForwardModel, estimate, sample_counts
from app.services.protocol_service import OUTCOMES, MeasurementStrength, PhasePair

# per-request cap on bootstrap replicas
MAX_API_REPLICAS = 2000


class EstimationQuery:
    @staticmethod
    def resolve_simulate_counts(
        _parent, info, theta1Deg: float, theta2Deg: float, k: float, shots: int, seed: int
    ) -> Dict[str, Any]:
        """simulateCounts(theta1Deg, theta2Deg, k, shots, seed)"""
        require_role(info, {"analyst"})
        try:
            counts = sample_counts(PhasePair.from_degrees(theta1Deg, theta2Deg), MeasurementStrength(k), shots, seed)
        except ValueError as e:
            raise GraphQLError(f"simulateCounts failed: {e}")
        return {"k": counts.K, "shots": counts.shots, "seed": counts.seed, **counts.as_dict()}

    @staticmethod
    def resolve_estimate_phases(
        _parent,
        info,
        counts: Dict[str, int],
        k: float,
        seed: Optional[int] = None,
        replicas: int = 0,
        objective: str = "lsq",
    ) -> Dict[str, Any]:
        """estimatePhases(counts, k, seed, replicas=0, objective="lsq") against the exact model"""
        require_role(info, {"analyst"})
        if replicas > MAX_API_REPLICAS:
            raise GraphQLError(f"estimatePhases failed: replicas must be <= {MAX_API_REPLICAS}")
        try:
            table = CountTable(np.array([counts[o] for o in OUTCOMES]), k)
            result = estimate(table, ExactForwardModel(k), objective=objective, replicas=replicas, seed=seed)
        except (ValueError, RuntimeError) as e:
            raise GraphQLError(f"estimatePhases failed: {e}")

        t1, t2 = result.degrees
        return {
            "theta1Deg": t1,
            "theta2Deg": t2,
            "covariance": np.asarray(result.covariance).tolist(),
            "objective": result.objective,
            "objectiveValue": result.objective_value,
            "degenerate": result.degenerate_flag,
            "bootstrapReplicas": result.bootstrap_replicas,
        }
