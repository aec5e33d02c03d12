"""Coarse-to-fine manipulation core: canonical views, the two-round planner wire protocol,
datasets and the benchmark."""

from ._core import (
    DEFAULT_WINDOW,
    INITIAL_STATE_SENTINEL,
    KEYPOINT_PIXEL_TOLERANCE,
    VIEWS,
    WIRE_VERSION,
    ConfigError,
    DataError,
    Error,
    InvalidArgument,
    OutOfBoundsError,
    ParseError,
    ProtocolViolation,
    UnknownProgressError,
    Views,
    build_dataset,
    evaluate,
    load_views,
    make_keypoint,
    parse_round1_query,
    parse_round1_response,
    parse_round2_query,
    parse_round2_response,
    project_canonical,
    resolve_config,
    round2_query,
    store_views,
    validate_plan,
    validate_round2_response,
    world_to_pixel,
)

__version__ = "0.1.0"
