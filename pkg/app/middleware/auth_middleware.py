# app/middleware/auth_middleware.py
from __future__ import annotations

import jwt
from starlette.middleware.base import BaseHTTPMiddleware
from starlette.requests import Request

from app.services.auth_service import decode_jwt_token
from app.utils.logger import get_logger

logger = get_logger(__name__)

ANONYMOUS = {"role": "anonymous"}


def user_from_header(auth: str) -> dict:
    """Claims from `Authorization: Bearer <jwt>`; anything else is anonymous."""
    if not auth.lower().startswith("bearer "):
        return dict(ANONYMOUS)
    try:
        return decode_jwt_token(auth.split(" ", 1)[1].strip())
    except jwt.PyJWTError as e:
        logger.debug("rejected bearer token: %s", e)
        return dict(ANONYMOUS)


class AuthMiddleware(BaseHTTPMiddleware):
    async def dispatch(self, request: Request, call_next):
        request.state.user = user_from_header(request.headers.get("Authorization", ""))
        return await call_next(request)
