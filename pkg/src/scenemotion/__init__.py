"""Scene-wide joint motion forecasting with waypoint-cluster interaction analysis."""

__version__ = "0.1.0"

from .forecast import Forecast, load_forecasts, save_forecasts
from .interaction import dbscan, interaction_report
from .metrics import eval_scenes, evaluate
from .model import ModelConfig, SceneMotion, load_model, prepare_batch, save_model
from .scenario import AgentTrack, MapPolyline, TrafficLightRecord, TrafficScenario, load_scenarios, rigid_transform, save_scenarios
from .synthetic import GeneratorConfig, generate_synthetic
from .training import TrainConfig, bivariate_nll, fit, total_loss
from .views import ViewConfig, build_view

__all__ = [
    "AgentTrack", "Forecast", "GeneratorConfig", "MapPolyline", "ModelConfig", "SceneMotion", "TrafficLightRecord",
    "TrafficScenario", "TrainConfig", "ViewConfig", "bivariate_nll", "build_view", "dbscan", "eval_scenes",
    "evaluate", "fit", "generate_synthetic", "interaction_report", "load_forecasts", "load_model",
    "load_scenarios", "prepare_batch", "rigid_transform", "save_forecasts", "save_model", "save_scenarios",
    "total_loss",
]
