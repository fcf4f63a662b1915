"""
Services for the shape-guided editing engine
"""
from .denoiser_service import Denoiser
from .training_service import TrainingService
from .edit_service import EditService
from .benchmark_service import BenchmarkService

__all__ = ["Denoiser", "TrainingService", "EditService", "BenchmarkService"]
