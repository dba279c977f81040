from .gateway import create_app
from .stub_vlm import create_stub_app

__all__ = ["create_app", "create_stub_app"]
