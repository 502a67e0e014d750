"""Experiment configuration files.

A config is a YAML document with nested sections (gridworld, experts, data,
uniq, dwbc, eval) plus top-level name / methods / seeds. Parsing is strict:
unknown keys, wrong types and out-of-range values are hard errors that carry
the offending line number, so a bad config fails before any compute starts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import yaml
from yaml.nodes import MappingNode, ScalarNode, SequenceNode

from uniq_mdp.gridworld import GridworldSpec
from uniq_mdp.training import UniqConfig

KNOWN_METHODS = ("uniq", "bc-mix", "bc-un", "bc-safe", "iq-mix", "iq-un", "dwbc")


class ConfigError(ValueError):
    """Invalid config file; str() renders as path:line: message."""

    def __init__(self, message: str, path: str = "<config>", line: int | None = None):
        self.message = message
        self.path = path
        self.line = line
        super().__init__(message)

    def __str__(self) -> str:
        where = self.path if self.line is None else f"{self.path}:{self.line}"
        return f"{where}: {self.message}"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs: the environment, the two experts,
    dataset sizes, the method list and per-method hyperparameters."""

    gridworld: GridworldSpec
    name: str = "experiment"
    lambda_cost: float = 8.0
    temperature: float = 0.05
    horizon: int = 60
    cost_threshold: float = 0.5
    n_safe: int = 400
    n_undesired: int = 1600
    n_un: int = 200
    pool_unconstrained: int = 0  # 0: sized from n_undesired below
    pool_constrained: int = 0  # 0: sized from n_safe below
    methods: tuple[str, ...] = KNOWN_METHODS
    uniq: UniqConfig = UniqConfig()
    dwbc_eta: float = 0.5
    dwbc_lr: float = 1.0
    dwbc_steps: int = 20_000
    dwbc_pu_clamp: bool = False
    dwbc_d_clip: float = 0.1
    eval_episodes: int = 100
    eval_horizon: int = 0  # 0: same as the data horizon
    eval_seed_base: int = 1000
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.n_safe < 1 or self.n_undesired < 0 or self.n_un < 1:
            raise ValueError("need n_safe >= 1, n_undesired >= 0, n_un >= 1")
        if self.eval_episodes < 20:
            raise ValueError("eval_episodes must be >= 20")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("duplicate seeds")
        unknown = [m for m in self.methods if m not in KNOWN_METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown} (known: {list(KNOWN_METHODS)})")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("duplicate methods")

    # pool sizes leave slack so labeling and subsampling never run dry
    def unconstrained_pool(self) -> int:
        return self.pool_unconstrained or max(2200, int(self.n_undesired * 1.4))

    def constrained_pool(self) -> int:
        return self.pool_constrained or max(600, self.n_safe + 100)

    def episode_horizon(self) -> int:
        return self.eval_horizon or self.horizon

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["gridworld"] = dataclasses.asdict(self.gridworld)
        out["uniq"] = dataclasses.asdict(self.uniq)
        for key in ("goal_cells", "hazard_cells", "start_cells"):
            out["gridworld"][key] = [list(c) for c in out["gridworld"][key]]
        out["methods"] = list(self.methods)
        out["seeds"] = list(self.seeds)
        return out

    def digest(self) -> str:
        payload = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def _line(node) -> int:
    return node.start_mark.line + 1


def _scalar_value(node: ScalarNode):
    # quoted scalars keep their string identity; plain ones re-parse
    if node.tag.endswith(":str"):
        return node.value
    return yaml.safe_load(node.value or "null")


class _Section:
    """One mapping node with consumed-key tracking for unknown-key errors."""

    def __init__(self, node: MappingNode | None, path: str, name: str):
        self.path = path
        self.name = name
        self.entries: dict[str, tuple[ScalarNode, object]] = {}
        if node is None:
            return
        if not isinstance(node, MappingNode):
            raise ConfigError(f"section {name!r} must be a mapping", path, _line(node))
        for key_node, value_node in node.value:
            if not isinstance(key_node, ScalarNode):
                raise ConfigError("keys must be plain scalars", path, _line(key_node))
            key = str(key_node.value)
            if key in self.entries:
                raise ConfigError(f"duplicate key {key!r}", path, _line(key_node))
            self.entries[key] = (key_node, value_node)
        self._pending = set(self.entries)

    def take(self, key: str):
        if key not in self.entries:
            return None
        self._pending.discard(key)
        return self.entries[key][1]

    def finish(self) -> None:
        if getattr(self, "_pending", None):
            key = sorted(self._pending)[0]
            key_node = self.entries[key][0]
            where = f"in section {self.name!r}" if self.name else "at top level"
            raise ConfigError(f"unknown key {key!r} {where}", self.path, _line(key_node))


def _want_scalar(node, path: str, key: str):
    if not isinstance(node, ScalarNode):
        raise ConfigError(f"expected a scalar for {key!r}", path, _line(node))
    return _scalar_value(node)


def _as_int(node, path: str, key: str, lo: int | None = None) -> int:
    value = _want_scalar(node, path, key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer for {key!r}, got {node.value!r}", path, _line(node))
    if lo is not None and value < lo:
        raise ConfigError(f"{key!r} must be >= {lo}, got {value}", path, _line(node))
    return int(value)


def _as_float(node, path: str, key: str) -> float:
    value = _want_scalar(node, path, key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number for {key!r}, got {node.value!r}", path, _line(node))
    return float(value)


def _as_bool(node, path: str, key: str) -> bool:
    value = _want_scalar(node, path, key)
    if not isinstance(value, bool):
        raise ConfigError(f"expected true/false for {key!r}, got {node.value!r}", path, _line(node))
    return value


def _as_str(node, path: str, key: str) -> str:
    value = _want_scalar(node, path, key)
    if not isinstance(value, str):
        raise ConfigError(f"expected a string for {key!r}, got {node.value!r}", path, _line(node))
    return value


def _as_cells(node, path: str, key: str) -> tuple[tuple[int, int], ...]:
    if not isinstance(node, SequenceNode):
        raise ConfigError(f"{key!r} must be a list of [x, y] pairs", path, _line(node))
    cells = []
    for item in node.value:
        if not isinstance(item, SequenceNode) or len(item.value) != 2:
            raise ConfigError(f"each entry of {key!r} must be an [x, y] pair", path, _line(item))
        x = _as_int(item.value[0], path, key)
        y = _as_int(item.value[1], path, key)
        cells.append((x, y))
    return tuple(cells)


def _as_int_list(node, path: str, key: str) -> tuple[int, ...]:
    if not isinstance(node, SequenceNode):
        raise ConfigError(f"{key!r} must be a list of integers", path, _line(node))
    return tuple(_as_int(item, path, key) for item in node.value)


def _as_str_list(node, path: str, key: str) -> tuple[str, ...]:
    if not isinstance(node, SequenceNode):
        raise ConfigError(f"{key!r} must be a list of strings", path, _line(node))
    return tuple(_as_str(item, path, key) for item in node.value)


def _parse_gridworld(node, path: str) -> GridworldSpec:
    if node is None:
        raise ConfigError("missing required section 'gridworld'", path)
    sec = _Section(node, path, "gridworld")
    kwargs = {}
    for key in ("width", "height"):
        got = sec.take(key)
        if got is None:
            raise ConfigError(f"gridworld needs {key!r}", path, _line(node))
        kwargs[key] = _as_int(got, path, key, lo=1)
    goal = sec.take("goal_cells")
    if goal is None:
        raise ConfigError("gridworld needs 'goal_cells'", path, _line(node))
    kwargs["goal_cells"] = _as_cells(goal, path, "goal_cells")
    for key, conv in (
        ("goal_reward", _as_float),
        ("hazard_cost", _as_float),
        ("slip_prob", _as_float),
        ("discount", _as_float),
    ):
        got = sec.take(key)
        if got is not None:
            kwargs[key] = conv(got, path, key)
    for key in ("hazard_cells", "start_cells"):
        got = sec.take(key)
        if got is not None:
            kwargs[key] = _as_cells(got, path, key)
    for key in ("n_random_hazards", "layout_seed"):
        got = sec.take(key)
        if got is not None:
            kwargs[key] = _as_int(got, path, key, lo=0)
    sec.finish()
    try:
        return GridworldSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid gridworld: {exc}", path, _line(node)) from exc


_UNIQ_FIELDS = {
    "steps": ("int", 1),
    "lr_q": ("float", None),
    "lr_policy": ("float", None),
    "gamma": ("float", None),
    "ratio_steps": ("int", 1),
    "ratio_lr": ("float", None),
    "wbc_weight_cap": ("float", None),
    "occupancy_weighting": ("str", None),
    "sampled_actions": ("bool", None),
    "batch_size": ("int", 1),
    "checkpoint_every": ("int", 1),
}


def _parse_uniq(node, path: str) -> UniqConfig:
    sec = _Section(node, path, "uniq")
    kwargs = {}
    for key, (kind, lo) in _UNIQ_FIELDS.items():
        got = sec.take(key)
        if got is None:
            continue
        if kind == "int":
            kwargs[key] = _as_int(got, path, key, lo=lo)
        elif kind == "float":
            kwargs[key] = _as_float(got, path, key)
        elif kind == "bool":
            kwargs[key] = _as_bool(got, path, key)
        else:
            kwargs[key] = _as_str(got, path, key)
    sec.finish()
    try:
        return UniqConfig(**kwargs)
    except ValueError as exc:
        line = None if node is None else _line(node)
        raise ConfigError(f"invalid uniq section: {exc}", path, line) from exc


def parse_experiment_config(text: str, path: str = "<config>") -> ExperimentConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = None if mark is None else mark.line + 1
        raise ConfigError(f"not valid YAML: {getattr(exc, 'problem', exc)}", path, line) from exc
    if root is None:
        raise ConfigError("empty config", path)
    top = _Section(root, path, "")

    kwargs: dict = {"gridworld": _parse_gridworld(top.take("gridworld"), path)}
    got = top.take("name")
    if got is not None:
        kwargs["name"] = _as_str(got, path, "name")

    experts = _Section(top.take("experts"), path, "experts")
    for key, field in (("lambda_cost", "lambda_cost"), ("temperature", "temperature")):
        got = experts.take(key)
        if got is not None:
            kwargs[field] = _as_float(got, path, key)
    experts.finish()

    data = _Section(top.take("data"), path, "data")
    for key, lo in (
        ("horizon", 1),
        ("n_safe", 1),
        ("n_undesired", 0),
        ("n_un", 1),
        ("pool_unconstrained", 1),
        ("pool_constrained", 1),
    ):
        got = data.take(key)
        if got is not None:
            kwargs[key] = _as_int(got, path, key, lo=lo)
    got = data.take("cost_threshold")
    if got is not None:
        kwargs["cost_threshold"] = _as_float(got, path, "cost_threshold")
    data.finish()

    kwargs["uniq"] = _parse_uniq(top.take("uniq"), path)

    dwbc = _Section(top.take("dwbc"), path, "dwbc")
    for key, field, kind in (
        ("eta", "dwbc_eta", "float"),
        ("lr", "dwbc_lr", "float"),
        ("steps", "dwbc_steps", "int"),
        ("pu_clamp", "dwbc_pu_clamp", "bool"),
        ("d_clip", "dwbc_d_clip", "float"),
    ):
        got = dwbc.take(key)
        if got is None:
            continue
        if kind == "float":
            kwargs[field] = _as_float(got, path, key)
        elif kind == "int":
            kwargs[field] = _as_int(got, path, key, lo=1)
        else:
            kwargs[field] = _as_bool(got, path, key)
    dwbc.finish()

    evl = _Section(top.take("eval"), path, "eval")
    for key, field in (("episodes", "eval_episodes"), ("horizon", "eval_horizon"), ("seed_base", "eval_seed_base")):
        got = evl.take(key)
        if got is not None:
            kwargs[field] = _as_int(got, path, key, lo=0 if field == "eval_seed_base" else 1)
    evl.finish()

    got = top.take("methods")
    if got is not None:
        methods = _as_str_list(got, path, "methods")
        bad = [m for m in methods if m not in KNOWN_METHODS]
        if bad:
            raise ConfigError(
                f"unknown method {bad[0]!r} (known: {', '.join(KNOWN_METHODS)})",
                path, _line(got),
            )
        kwargs["methods"] = methods
    got = top.take("seeds")
    if got is not None:
        kwargs["seeds"] = _as_int_list(got, path, "seeds")
    top.finish()

    try:
        return ExperimentConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc), path) from exc


def load_experiment_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
    return parse_experiment_config(text, str(path))
