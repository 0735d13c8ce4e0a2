"""HTTP shim exposing image classifiers through the rlab classify protocol."""

from .app import create_app
from .models import DummyModel, ReferenceModel, load_model

__version__ = "0.1.0"
