# app/resolvers/information_resolvers.py
from __future__ import annotations

import math
from typing import Any, Dict, List, Optional

from graphql import GraphQLError

from app.services.information_service import (
    CovarianceBound,
    InfoMatrix,
    classical_fim,
    crb,
    qfim,
    qfim_closed_form,
    sloppiness,
)
from app.services.protocol_service import (
    OUTCOMES,
    MeasurementStrength,
    OutcomeDistribution,
    PhasePair,
    circuit_distribution,
    outcome_distribution,
)


def finite_or_none(x: float) -> Optional[float]:
    return x if math.isfinite(x) else None


def outcomes_payload(dist: OutcomeDistribution) -> List[Dict[str, Any]]:
    return [
        {"outcome": o, "amplitude": float(a), "probability": float(p)}
        for o, a, p in zip(OUTCOMES, dist.amplitudes, dist.probabilities)
    ]


def info_payload(m: InfoMatrix) -> Dict[str, Any]:
    return {"kind": m.kind, "m11": m.m11, "m12": m.m12, "m22": m.m22, "determinant": m.determinant}


def bound_payload(b: CovarianceBound) -> Dict[str, Any]:
    return {
        "shots": b.shots,
        "var1": finite_or_none(b.var1),
        "var2": finite_or_none(b.var2),
        "cov": finite_or_none(b.cov),
        "correlation": finite_or_none(b.correlation),
        "unbounded": b.unbounded,
    }


class InformationQuery:
    """Deterministic model and information queries; open to every role."""

    @staticmethod
    def resolve_measurement_strength(_parent, _info, k: float) -> Dict[str, float]:
        try:
            s = MeasurementStrength(k)
        except ValueError as e:
            raise GraphQLError(f"measurementStrength failed: {e}")
        return {"k": s.K, "kappa": s.kappa, "lambda": s.lam}

    @staticmethod
    def resolve_outcome_distribution(
        _parent, _info, theta1Deg: float, theta2Deg: float, k: float, path: str = "closed"
    ) -> List[Dict[str, Any]]:
        """outcomeDistribution(theta1Deg, theta2Deg, k, path="closed"|"circuit")"""
        builders = {"closed": outcome_distribution, "circuit": circuit_distribution}
        if path not in builders:
            raise GraphQLError(f"outcomeDistribution failed: path must be one of {sorted(builders)}")
        try:
            dist = builders[path](PhasePair.from_degrees(theta1Deg, theta2Deg), MeasurementStrength(k))
        except ValueError as e:
            raise GraphQLError(f"outcomeDistribution failed: {e}")
        return outcomes_payload(dist)

    @staticmethod
    def resolve_fisher_information(_parent, _info, theta1Deg: float, theta2Deg: float, k: float) -> Dict[str, Any]:
        try:
            return info_payload(classical_fim(PhasePair.from_degrees(theta1Deg, theta2Deg), MeasurementStrength(k)))
        except ValueError as e:
            raise GraphQLError(f"fisherInformation failed: {e}")

    @staticmethod
    def resolve_quantum_fisher_information(
        _parent, _info, k: float, theta1Deg: float = 10.0, theta2Deg: float = 5.0
    ) -> Dict[str, Any]:
        try:
            return info_payload(qfim(PhasePair.from_degrees(theta1Deg, theta2Deg), MeasurementStrength(k)))
        except (ValueError, RuntimeError) as e:
            raise GraphQLError(f"quantumFisherInformation failed: {e}")

    @staticmethod
    def resolve_cramer_rao_bound(_parent, _info, k: float, shots: int) -> Dict[str, Any]:
        """Quantum bound Q^-1 / N."""
        try:
            return bound_payload(crb(qfim_closed_form(MeasurementStrength(k)), shots))
        except ValueError as e:
            raise GraphQLError(f"cramerRaoBound failed: {e}")

    @staticmethod
    def resolve_sloppiness(_parent, _info, k: float) -> Dict[str, Any]:
        try:
            r = sloppiness(qfim_closed_form(MeasurementStrength(k)))
        except ValueError as e:
            raise GraphQLError(f"sloppiness failed: {e}")
        return {
            "stiffValue": r.stiff_value,
            "sloppyValue": r.sloppy_value,
            "stiffDir": list(r.stiff_dir),
            "sloppyDir": list(r.sloppy_dir),
            "determinant": r.determinant,
            "conditionNumber": finite_or_none(r.condition_number),
        }
