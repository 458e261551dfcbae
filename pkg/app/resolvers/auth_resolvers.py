# app/resolvers/auth_resolvers.py
from __future__ import annotations

from graphql import GraphQLError

from app.services.auth_service import generate_jwt_token


class AuthQuery:
    @staticmethod
    def resolve_login(_parent, _info, username: str, role: str) -> str:
        try:
            return generate_jwt_token(username, role)
        except ValueError as e:
            raise GraphQLError(str(e))
