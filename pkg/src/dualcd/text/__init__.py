from .backends import EchoRefiner, HashingEmbedder, OpenAIChatRefiner, OpenAIEmbedder, make_embedder, make_refiner, network_calls
from .cache import JsonlCache
from .features import (
    EmbeddingVector,
    RefinedText,
    TextPipeline,
    TextualFeatureSet,
    build_textual_features,
    clustering_quality,
    embed_text,
    pool_student_features,
    pool_students,
    refine_entity,
)
from .prompts import PromptBundle, concept_bundle, exercise_bundle

__all__ = [
    "EchoRefiner", "HashingEmbedder", "OpenAIChatRefiner", "OpenAIEmbedder", "make_embedder", "make_refiner",
    "network_calls", "JsonlCache", "EmbeddingVector", "RefinedText", "TextPipeline", "TextualFeatureSet",
    "build_textual_features", "clustering_quality", "embed_text", "pool_student_features", "pool_students",
    "refine_entity", "PromptBundle", "concept_bundle", "exercise_bundle",
]
