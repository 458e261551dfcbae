from __future__ import annotations

import os

from ariadne import QueryType, gql, make_executable_schema
from ariadne.asgi import GraphQL
from fastapi import FastAPI
from fastapi.responses import RedirectResponse

from app.middleware.auth_middleware import AuthMiddleware
from app.resolvers.auth_resolvers import AuthQuery                  # login
from app.resolvers.estimation_resolvers import EstimationQuery      # seeded simulation + estimator
from app.resolvers.information_resolvers import InformationQuery    # model, FI / QFIM, bounds
from app.resolvers.optics_resolvers import OpticsQuery              # PPBS gate model
from app.utils.logger import SLOPPY_DEBUG

# Load GraphQL schema
schema_path = os.path.join(os.path.dirname(__file__), "schema.graphql")
with open(schema_path, encoding="utf-8") as f:
    type_defs = gql(f.read())

query = QueryType()

# ---------- Model & information ----------
query.set_field("measurementStrength", InformationQuery.resolve_measurement_strength)
query.set_field("outcomeDistribution", InformationQuery.resolve_outcome_distribution)
query.set_field("fisherInformation", InformationQuery.resolve_fisher_information)
query.set_field("quantumFisherInformation", InformationQuery.resolve_quantum_fisher_information)
query.set_field("cramerRaoBound", InformationQuery.resolve_cramer_rao_bound)
query.set_field("sloppiness", InformationQuery.resolve_sloppiness)

# ---------- Optics ----------
query.set_field("imperfectDistribution", OpticsQuery.resolve_imperfect_distribution)

# ---------- Estimation (analyst) ----------
query.set_field("simulateCounts", EstimationQuery.resolve_simulate_counts)
query.set_field("estimatePhases", EstimationQuery.resolve_estimate_phases)

# ---------- Auth (JWT) ----------
query.set_field("login", AuthQuery.resolve_login)

schema = make_executable_schema(type_defs, query)
app = FastAPI(title="sloppy-phase")
app.add_middleware(AuthMiddleware)


# Inject user/role into GraphQL context (from AuthMiddleware)
def _context_value_fn(request, _data=None):
    user = getattr(request.state, "user", None) or {"role": "anonymous"}
    return {"request": request, "user": user, "role": user.get("role")}


app.mount("/graphql", GraphQL(schema, debug=SLOPPY_DEBUG, context_value=_context_value_fn))


# ---------- Convenience routes ----------
@app.get("/", include_in_schema=False)
def root():
    return RedirectResponse(url="/graphql")


@app.get("/health")
def health():
    return {"status": "ok"}
