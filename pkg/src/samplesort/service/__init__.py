"""HTTP service layer: FastAPI app plus the pydantic request/response models."""

from .app import app, create_app

__all__ = ["app", "create_app"]
