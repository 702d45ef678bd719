"""Multi-target normal behaviour models for wind turbine SCADA channels."""

__version__ = "0.1.0"

from ._backend import get_backend, set_backend  # noqa: E402
from .model_core import ModelFormatError, ModelVersionError, load_model, save_model  # noqa: E402

# importing the family modules registers them with the model file reader
from . import knn, mlp, trees  # noqa: E402,F401

__all__ = ["get_backend", "set_backend", "load_model", "save_model", "ModelFormatError",
           "ModelVersionError", "__version__"]
