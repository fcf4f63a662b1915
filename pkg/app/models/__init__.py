"""
Domain types for the shape-guided editing engine
"""
from .attention import ConstraintMode, ObjectMask
from .denoiser import AttentionSite, DenoiserConfig
from .edit import EditRequest, EditResult, InversionTrajectory
from .prompt import PromptPair, TokenizedPrompt, Vocabulary
from .run_config import RunConfig

__all__ = [
    "ConstraintMode", "ObjectMask", "AttentionSite", "DenoiserConfig", "EditRequest", "EditResult",
    "InversionTrajectory", "PromptPair", "TokenizedPrompt", "Vocabulary", "RunConfig",
]
