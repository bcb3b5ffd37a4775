"""Training-free retrieval-augmented navigation planning.

The pipeline: annotate a camera frame with candidate actions, retrieve
diverse demonstrations from an experiential memory, build a fictitious
multi-turn conversation for a chat-vision model, parse its structured
answer into robot commands, execute them, and score the run.
"""

from .core import (
    AnnotatedFrame,
    Command,
    CommandKind,
    ControllerGains,
    Frame,
    FrameSource,
    GoalKind,
    GoalMarker,
    Label,
    LabelKind,
    Pitch,
    PlanAnswer,
    RingSpec,
    RunConfig,
    Setup,
    command,
    config_from_json,
    split_rng,
    validate_config,
)

__all__ = [
    "AnnotatedFrame",
    "Command",
    "CommandKind",
    "ControllerGains",
    "Frame",
    "FrameSource",
    "GoalKind",
    "GoalMarker",
    "Label",
    "LabelKind",
    "Pitch",
    "PlanAnswer",
    "RingSpec",
    "RunConfig",
    "Setup",
    "command",
    "config_from_json",
    "split_rng",
    "validate_config",
]

__version__ = "0.1.0"
