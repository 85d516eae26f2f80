import dataclasses
import hashlib
import json
import logging
from pathlib import Path

from snap_recovery.exceptions import Misconfigured


logger = logging.getLogger(__name__)


def validate_config(config, valid_settings, required_settings=()):
    if not isinstance(config, dict):
        raise Misconfigured(f"Expected config to be a JSON object, got '{type(config).__name__}'")
    for setting in config.keys():
        if setting not in valid_settings:
            raise Misconfigured(f"Unknown setting '{setting}'")
    for required_setting in required_settings:
        if required_setting not in config:
            raise Misconfigured(f"Missing required setting '{required_setting}'")


def load_settings(path=None):
    """
    Load a JSON config document; no path means an empty document (all defaults)
    """
    if path is None:
        return {}
    path = Path(path)
    try:
        with path.open(encoding='utf-8') as f:
            config = json.load(f)
    except json.JSONDecodeError as e:
        raise Misconfigured(f"Config '{path}' is not valid JSON: {e}") from e
    if not isinstance(config, dict):
        raise Misconfigured(f"Config '{path}' must hold a JSON object")
    logger.debug(f"Loaded settings from {path}: {sorted(config)}")
    return config


def parse_dataclass(cls, config):
    """
    Build a frozen config dataclass from a dict, rejecting unknown settings

    Lists are turned into tuples so that JSON round-trips compare equal to
    instances built in code.
    """
    config = dict(config or {})
    valid = {field.name for field in dataclasses.fields(cls)}
    validate_config(config, valid)
    for key, value in config.items():
        if isinstance(value, list):
            config[key] = tuple(value)
    try:
        return cls(**config)
    except TypeError as e:
        raise Misconfigured(f"{cls.__name__}: {e}") from e


def dataclass_to_dict(instance):
    d = dataclasses.asdict(instance)
    for key, value in d.items():
        if isinstance(value, tuple):
            d[key] = list(value)
    return d


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))


def config_hash(config):
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()
