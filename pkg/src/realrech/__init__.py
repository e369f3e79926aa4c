"""Bayesian volatility models with recurrent-network intercepts and realized measures."""
from .models import MODEL_IDS, ParamVector, run_filter, simulate
from .smc import ParticleSystem, SmcConfig, VolatilityTarget, data_anneal, likelihood_anneal

__all__ = ["MODEL_IDS", "ParamVector", "run_filter", "simulate", "ParticleSystem", "SmcConfig",
           "VolatilityTarget", "data_anneal", "likelihood_anneal"]
__version__ = "0.1.0"
