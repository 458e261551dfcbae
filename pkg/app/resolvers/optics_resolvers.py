# app/resolvers/optics_resolvers.py
from __future__ import annotations

from typing import Any, Dict

from graphql import GraphQLError

from app.resolvers.information_resolvers import finite_or_none, outcomes_payload
from app.services.optics_service import PPBSModel, imperfect_distribution, ppbs_coincidence_map
from app.services.protocol_service import MeasurementStrength, PhasePair


class OpticsQuery:
    @staticmethod
    def resolve_imperfect_distribution(
        _parent,
        _info,
        theta1Deg: float,
        theta2Deg: float,
        k: float,
        tH: float = 1.0,
        tV: float = 1.0 / 3.0,
        visibility: float = 1.0,
        rescaling: bool = True,
    ) -> Dict[str, Any]:
        """imperfectDistribution(theta1Deg, theta2Deg, k, tH, tV, visibility, rescaling)"""
        try:
            model = PPBSModel(tH, tV, visibility, rescaling)
            result = imperfect_distribution(
                PhasePair.from_degrees(theta1Deg, theta2Deg), MeasurementStrength(k), model
            )
        except (ValueError, RuntimeError) as e:
            raise GraphQLError(f"imperfectDistribution failed: {e}")

        comp = ppbs_coincidence_map(model).compensation
        return {
            "outcomes": outcomes_payload(result.distribution),
            "successProbability": result.success_probability,
            "branchWeight": None if result.branch is None else result.branch.weight,
            "compensation": None if comp is None else {
                "system": list(comp.system),
                "meter": list(comp.meter),
                "scale": comp.scale,
                "residual": finite_or_none(comp.residual),
                "exact": comp.exact,
            },
        }
