from .app import create_app
from .state import SessionState

__all__ = ["create_app", "SessionState"]
