"""Counter-Dyna: model-based PPO for heat-pump control with counterfactual building-model rollouts."""

from .building_sim import BuildingEnv, EnvConfig, PlantParams
from .config import ExperimentConfig, dump_config, load_config
from .dyna import DynaSchedule, run_counter_dyna, run_model_free
from .exogenous import ExogenousSeries, synthesize_series
from .kpi import ComfortBand, KpiLedger, RewardWeights
from .ppo import PolicyValueNets, PpoHyper
from .surrogate import CsmHyper

__all__ = [
    "BuildingEnv", "ComfortBand", "CsmHyper", "DynaSchedule", "EnvConfig", "ExogenousSeries", "ExperimentConfig",
    "KpiLedger", "PlantParams", "dump_config", "PolicyValueNets", "PpoHyper", "RewardWeights", "load_config", "run_counter_dyna",
    "run_model_free", "synthesize_series",
]
