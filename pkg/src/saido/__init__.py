"""Scene-aware expert adapters with importance-guided gradient projection for continual detection."""

from .harness import RunConfig, RunReport, emit_report, load_config, run_openworld, run_protocol, train_protocol
from .idom import IdomConfig, ImportanceState, transform_gradient
from .metrics import AccuracyMatrix, aa, af, new_acc
from .model import Detector, LoraAdapter
from .scene import SceneLibrary, identify

__version__ = "0.1.0"
