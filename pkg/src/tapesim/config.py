"""Simulation configuration: parsing, validation, defaults, arrival rates.

Configs are flat ``key = value`` text documents (``#`` starts a comment).
Every optional key has a documented default; CLI overrides replace file
keys one-for-one before validation. The resulting SimConfig is immutable
and safe to share between any number of readers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum

SECONDS_PER_DAY = 86400.0
SECONDS_PER_YEAR = 365.0 * SECONDS_PER_DAY


class ConfigError(ValueError):
    """Base class for configuration problems."""


class ConfigParseError(ConfigError):
    """Document is malformed or a mandatory key is missing."""


class ConfigValidationError(ConfigError):
    """A parsed value violates an invariant; names the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class Protocol(str, Enum):
    REDUNDANT = "redundant"
    FAILURE = "failure"


class DrivePlacement(str, Enum):
    TOP_RIGHT = "top_right"
    CENTER = "center"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class SimConfig:
    """Complete parameter set for one simulation run.

    Sizes are MB, rates MB/s, times seconds unless the name says otherwise.
    """

    # Library geometry and hardware
    num_cartridges: int
    vertical_dim: int
    cartridge_capacity_mb: float
    num_robots: int
    num_drives: int
    robot_xph: float
    drive_rate_mbps: float

    # Drive mechanics
    mean_load_time_s: float = 18.0
    mean_position_time_s: float = 50.0
    drive_fail_prob: float = 0.0
    max_retries: int = 10

    # Workload
    fill_ratio: float = 1.0
    object_size_shape: float = 1.0
    object_size_scale_mb: float = 5000.0
    object_size_fixed_mb: float | None = None
    aotr: float = 1.0
    objects_touched_per_day: float | None = None
    num_users: int = 1
    collocation_threshold_mb: float = 0.0

    # Redundancy and retrieval protocol
    code_n: int = 1
    code_k: int = 1
    dispatch_count: int | None = None
    protocol: Protocol = Protocol.REDUNDANT
    failure_threshold_steps: int = 300
    systematic: bool = True
    decode_penalty_s: float = 0.0

    # Array layout
    num_libraries: int = 1

    # Simulation control
    step_seconds: float = 1.0
    sim_duration_hours: float = 24.0
    rng_seed: int = 20240601
    balanced_robots: bool = True
    deferred_dismount: bool = True
    drive_placement: DrivePlacement = DrivePlacement.TOP_RIGHT
    drive_positions: tuple[tuple[int, int], ...] = field(default=())

    # -- derived quantities -------------------------------------------------

    @property
    def grid_rows(self) -> int:
        return self.vertical_dim

    @property
    def grid_cols(self) -> int:
        return self.num_cartridges // self.vertical_dim

    @property
    def fragments_dispatched(self) -> int:
        """Fragments placed on queues per object under the active protocol."""
        if self.protocol is Protocol.FAILURE:
            return self.code_k
        return self.dispatch_count if self.dispatch_count is not None else self.code_n

    @property
    def mean_object_size_mb(self) -> float:
        """Mean object size; Weibull mean unless a fixed size is configured."""
        if self.object_size_fixed_mb is not None:
            return self.object_size_fixed_mb
        return self.object_size_scale_mb * math.gamma(1.0 + 1.0 / self.object_size_shape)

    @property
    def fragment_size_mb_per_object_mb(self) -> float:
        return 1.0 / self.code_k

    @property
    def horizon_steps(self) -> int:
        return int(round(self.sim_duration_hours * 3600.0 / self.step_seconds))

    @property
    def steps_per_hour(self) -> float:
        return 3600.0 / self.step_seconds

    @property
    def mean_motion_seconds(self) -> float:
        """Calibration target: one motion is a quarter of a full exchange."""
        return 3600.0 / (4.0 * self.robot_xph)

    @property
    def min_exchange_seconds(self) -> float:
        """Wear cap: a robot rated at xph cannot exchange faster than this."""
        return 3600.0 / self.robot_xph

    @property
    def total_capacity_pb(self) -> float:
        return self.num_cartridges * self.cartridge_capacity_mb / 1e9

    def __post_init__(self):
        if not self.drive_positions:
            object.__setattr__(
                self,
                "drive_positions",
                default_drive_positions(
                    self.grid_rows, self.grid_cols, self.num_drives, self.drive_placement
                ),
            )
        validate_config(self)

    def with_overrides(self, **kwargs) -> "SimConfig":
        return replace(self, **kwargs)


def default_drive_positions(
    rows: int, cols: int, num_drives: int, placement: DrivePlacement
) -> tuple[tuple[int, int], ...]:
    """Generate drive cells for the non-explicit placement policies.

    top_right fills column-major from the top-right corner; center fills a
    block around the grid midpoint.
    """
    if rows <= 0 or cols <= 0 or num_drives <= 0:
        return ()
    cells: list[tuple[int, int]] = []
    if placement is DrivePlacement.CENTER:
        order = sorted(
            ((r, c) for r in range(rows) for c in range(cols)),
            key=lambda rc: ((rc[0] - (rows - 1) / 2) ** 2 + (rc[1] - (cols - 1) / 2) ** 2, rc),
        )
        cells = order[:num_drives]
    else:
        for c in range(cols - 1, -1, -1):
            for r in range(rows):
                cells.append((r, c))
                if len(cells) == num_drives:
                    return tuple(cells)
    return tuple(cells[:num_drives])


def validate_config(cfg: SimConfig) -> None:
    """Raise ConfigValidationError on the first violated invariant."""

    def positive(name, value, kind=(int, float)):
        if not isinstance(value, kind) or value <= 0:
            raise ConfigValidationError(name, f"must be positive, got {value!r}")

    positive("num_cartridges", cfg.num_cartridges, int)
    positive("vertical_dim", cfg.vertical_dim, int)
    positive("cartridge_capacity_mb", cfg.cartridge_capacity_mb)
    positive("num_robots", cfg.num_robots, int)
    positive("num_drives", cfg.num_drives, int)
    positive("robot_xph", cfg.robot_xph)
    positive("drive_rate_mbps", cfg.drive_rate_mbps)
    positive("object_size_shape", cfg.object_size_shape)
    positive("object_size_scale_mb", cfg.object_size_scale_mb)
    positive("aotr", cfg.aotr)
    positive("num_users", cfg.num_users, int)
    positive("code_n", cfg.code_n, int)
    positive("code_k", cfg.code_k, int)
    positive("num_libraries", cfg.num_libraries, int)
    positive("step_seconds", cfg.step_seconds)
    positive("sim_duration_hours", cfg.sim_duration_hours)
    positive("failure_threshold_steps", cfg.failure_threshold_steps, int)
    positive("max_retries", cfg.max_retries, int)

    if cfg.mean_load_time_s < 0:
        raise ConfigValidationError("mean_load_time_s", "must be nonnegative")
    if cfg.mean_position_time_s < 0:
        raise ConfigValidationError("mean_position_time_s", "must be nonnegative")
    if cfg.decode_penalty_s < 0:
        raise ConfigValidationError("decode_penalty_s", "must be nonnegative")
    if cfg.collocation_threshold_mb < 0:
        raise ConfigValidationError("collocation_threshold_mb", "must be nonnegative")
    if cfg.object_size_fixed_mb is not None and cfg.object_size_fixed_mb <= 0:
        raise ConfigValidationError("object_size_fixed_mb", "must be positive when set")
    if cfg.objects_touched_per_day is not None and cfg.objects_touched_per_day <= 0:
        raise ConfigValidationError("objects_touched_per_day", "must be positive when set")
    if not 0 < cfg.fill_ratio <= 1:
        raise ConfigValidationError("fill_ratio", f"must be in (0, 1], got {cfg.fill_ratio}")
    if not 0 <= cfg.drive_fail_prob < 1:
        raise ConfigValidationError("drive_fail_prob", f"must be in [0, 1), got {cfg.drive_fail_prob}")
    if cfg.rng_seed < 0 or cfg.rng_seed >= 2**64:
        raise ConfigValidationError("rng_seed", "must fit in 64 unsigned bits")

    if cfg.num_cartridges % cfg.vertical_dim != 0:
        raise ConfigValidationError(
            "vertical_dim",
            f"num_cartridges={cfg.num_cartridges} is not divisible by "
            f"vertical_dim={cfg.vertical_dim}; the rack must be rectangular",
        )

    if cfg.code_n < cfg.code_k:
        raise ConfigValidationError(
            "code_n", f"code_n={cfg.code_n} must be >= code_k={cfg.code_k}"
        )
    s = cfg.dispatch_count
    if s is not None and not cfg.code_k <= s <= cfg.code_n:
        raise ConfigValidationError(
            "dispatch_count",
            f"must satisfy code_k <= dispatch_count <= code_n, got {s} with "
            f"(n={cfg.code_n}, k={cfg.code_k})",
        )

    rows, cols = cfg.grid_rows, cfg.grid_cols
    if len(cfg.drive_positions) != cfg.num_drives:
        raise ConfigValidationError(
            "drive_positions",
            f"expected {cfg.num_drives} cells, got {len(cfg.drive_positions)}",
        )
    seen = set()
    for pos in cfg.drive_positions:
        r, c = pos
        if not (0 <= r < rows and 0 <= c < cols):
            raise ConfigValidationError(
                "drive_positions", f"cell {pos} outside the {rows}x{cols} grid"
            )
        if pos in seen:
            raise ConfigValidationError("drive_positions", f"duplicate cell {pos}")
        seen.add(pos)
    if cfg.num_drives >= rows * cols:
        raise ConfigValidationError(
            "num_drives", "drives occupy every cell; no room for cartridges"
        )

    if cfg.mean_motion_seconds < cfg.step_seconds:
        raise ConfigValidationError(
            "step_seconds",
            f"step_seconds={cfg.step_seconds} exceeds the mean motion time "
            f"{cfg.mean_motion_seconds:.4g}s (3600 / (4 * robot_xph)); one "
            "motion must span at least one step",
        )

    # The workload must fit the filled capacity: expected requested volume,
    # including coded redundancy overhead n/k, over the whole horizon.
    lam_step = derive_arrival_rate(cfg)
    expected_volume_mb = (
        lam_step * cfg.horizon_steps * cfg.mean_object_size_mb * cfg.code_n / cfg.code_k
    )
    stored_mb = cfg.fill_ratio * cfg.num_cartridges * cfg.cartridge_capacity_mb
    if expected_volume_mb > stored_mb:
        raise ConfigValidationError(
            "fill_ratio",
            f"workload implies {expected_volume_mb:.3e} MB requested over the "
            f"run but only {stored_mb:.3e} MB are stored",
        )


def derive_arrival_rate(cfg: SimConfig, period_seconds: float = SECONDS_PER_YEAR) -> float:
    """Object request rate per simulation step.

    When objects_touched_per_day is set it wins outright. Otherwise the rate
    comes from the stored volume: NoC * C_t * fill * AOTR * k / (n * mu_o)
    objects per accrual period (default one year), converted to per-step.
    """
    if period_seconds <= 0:
        raise ValueError("period_seconds must be positive")
    if cfg.objects_touched_per_day is not None:
        return cfg.objects_touched_per_day * cfg.step_seconds / SECONDS_PER_DAY
    mu_o = cfg.mean_object_size_mb
    if mu_o <= 0:
        raise ValueError("mean object size must be positive")
    per_period = (
        cfg.num_cartridges
        * cfg.cartridge_capacity_mb
        * cfg.fill_ratio
        * cfg.aotr
        * cfg.code_k
        / (cfg.code_n * mu_o)
    )
    return per_period * cfg.step_seconds / period_seconds


# -- flat key/value document handling ---------------------------------------

_MANDATORY = (
    "num_cartridges",
    "vertical_dim",
    "cartridge_capacity_mb",
    "num_robots",
    "num_drives",
    "robot_xph",
    "drive_rate_mbps",
)

_BOOL_TRUE = {"true", "yes", "on", "1"}
_BOOL_FALSE = {"false", "no", "off", "0"}


def _parse_bool(key, raw):
    low = raw.strip().lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise ConfigParseError(f"{key}: expected a boolean, got {raw!r}")


def _parse_positions(key, raw):
    cells = []
    for chunk in raw.replace(";", " ").split():
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ConfigParseError(f"{key}: expected 'row,col' entries, got {chunk!r}")
        try:
            cells.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ConfigParseError(f"{key}: non-integer coordinate in {chunk!r}") from None
    return tuple(cells)


def _converters():
    conv = {}
    for f in fields(SimConfig):
        if f.name == "drive_positions":
            conv[f.name] = _parse_positions
        elif f.name == "protocol":
            conv[f.name] = lambda key, raw: Protocol(raw.strip().lower())
        elif f.name == "drive_placement":
            conv[f.name] = lambda key, raw: DrivePlacement(raw.strip().lower())
        elif f.type in ("int", "int | None"):
            conv[f.name] = lambda key, raw: int(raw)
        elif f.type in ("float", "float | None"):
            conv[f.name] = lambda key, raw: float(raw)
        elif f.type == "bool":
            conv[f.name] = _parse_bool
        else:
            conv[f.name] = lambda key, raw: raw
    return conv


_CONVERTERS = _converters()


def parse_document(text: str) -> dict[str, str]:
    """Split a flat key=value document into a raw string mapping."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigParseError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in raw:
            raise ConfigParseError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def config_from_mapping(raw: dict[str, str]) -> SimConfig:
    known = {f.name for f in fields(SimConfig)}
    for key in raw:
        if key not in known:
            raise ConfigParseError(f"unknown configuration key {key!r}")
    for key in _MANDATORY:
        if key not in raw:
            raise ConfigParseError(f"missing mandatory key {key!r}")
    kwargs = {}
    for key, value in raw.items():
        try:
            kwargs[key] = _CONVERTERS[key](key, value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigParseError(f"{key}: {exc}") from None
    return SimConfig(**kwargs)


def parse_config(text: str, overrides: dict[str, str] | None = None) -> SimConfig:
    """Parse a configuration document, applying overrides key-for-key."""
    raw = parse_document(text)
    if overrides:
        raw.update(overrides)
    return config_from_mapping(raw)


def load_config(path, overrides: dict[str, str] | None = None) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


_GEOMETRY_FIELDS = {"num_cartridges", "vertical_dim", "num_drives", "drive_placement"}


def is_config_field(name: str) -> bool:
    return name in {f.name for f in fields(SimConfig)}


def convert_field(name: str, raw: str):
    """Convert one raw string the same way the document parser would."""
    if not is_config_field(name):
        raise ConfigValidationError(name, "not a configuration field")
    return _CONVERTERS[name](name, raw)


def with_param(cfg: SimConfig, name: str, value) -> SimConfig:
    """Replace one field, regenerating drive cells when geometry changes."""
    if name not in {f.name for f in fields(SimConfig)}:
        raise ConfigValidationError(name, "not a configuration field")
    kwargs = {name: value}
    if name in _GEOMETRY_FIELDS:
        kwargs["drive_positions"] = ()
    return replace(cfg, **kwargs)


def serialize_config(cfg: SimConfig) -> str:
    """Render a config with every key explicit; parse() round-trips it."""
    lines = []
    for f in fields(SimConfig):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if f.name == "drive_positions":
            rendered = "; ".join(f"{r},{c}" for r, c in value)
        elif isinstance(value, Enum):
            rendered = value.value
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"
