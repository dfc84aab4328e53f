"""Psychometric validation of Likert questionnaires administered to language models."""
from ._kernels import BACKEND
from .core import (
    MISSING,
    Item,
    Key,
    LikertScale,
    Questionnaire,
    ResponseMatrix,
    ScoredMatrix,
    load_questionnaire,
    load_response_csv,
    score_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "MISSING",
    "Item",
    "Key",
    "LikertScale",
    "Questionnaire",
    "ResponseMatrix",
    "ScoredMatrix",
    "load_questionnaire",
    "load_response_csv",
    "score_matrix",
]
