"""Image-to-event translation on a toy scale: fields, a contrast-threshold
event model with a brute-force oracle, pseudo-flow tools, loss kernels, a
small reverse-mode autodiff and an unsupervised domain adaptation demo."""

from .errors import DimensionError, DomainError, EvBridgeError, UsageError, ValidationError
from .events import (ContrastThreshold, EventHistogram, EventStream, SignedEventCount, count_events,
                     histogram_from_stream, initial_event_guess, log_intensity_change, pseudo_flow_counts,
                     two_frame_oracle)
from .fields import ScalarField, VectorField, dot_field, log_transform, spatial_gradient
from .losses import LossReport, ScheduleState, compose_losses, schedule_next

__version__ = "0.1.0"

__all__ = [
    "ContrastThreshold", "DimensionError", "DomainError", "EvBridgeError", "EventHistogram", "EventStream",
    "LossReport", "ScalarField", "ScheduleState", "SignedEventCount", "UsageError", "ValidationError",
    "VectorField", "compose_losses", "count_events", "dot_field", "histogram_from_stream",
    "initial_event_guess", "log_intensity_change", "log_transform", "pseudo_flow_counts", "schedule_next",
    "spatial_gradient", "two_frame_oracle",
]
