from __future__ import annotations

from typing import Iterable

from graphql import GraphQLError


def _role(info) -> str:
    return (info.context.get("role") or "anonymous").lower()


def require_role(info, allowed: Iterable[str]) -> None:
    if _role(info) not in {r.lower() for r in allowed}:
        raise GraphQLError("Forbidden", extensions={"code": "FORBIDDEN"})
