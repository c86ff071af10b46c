"""Ground-truth attractor trajectories and the figure-eight proxy.

Trajectories are stored as ``(T+1, 2)`` float64 arrays wrapped in
:class:`Trajectory`.  The linear point attractor uses its exact exponential
map; van der Pol is stepped with classical RK4.
"""
from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INIT_LO = -3.0
INIT_HI = 3.0


class DomainError(ValueError):
    """Input outside an operation's domain (non-finite, empty range, ...)."""


class DivergenceError(ArithmeticError):
    """Integration produced a non-finite state."""


class TrajectoryParseError(ValueError):
    def __init__(self, path, line: int | None, reason: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {reason}")
        self.path = path
        self.line = line


class Kind(str, enum.Enum):
    POINT = "point"
    CYCLIC = "cyclic"
    IMPORTED = "imported"
    FIGURE_EIGHT = "figure-eight"


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass
class Trajectory:
    points: np.ndarray
    dt: float = 1.0
    kind: Kind = Kind.IMPORTED

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.points) < 1:
            raise DomainError("trajectory needs at least one point")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, k) -> np.ndarray:
        return self.points[k]


@dataclass(frozen=True)
class PointAttractorConfig:
    alpha: float = -1.0
    steps: int = 100
    dt: float = 0.05

    def __post_init__(self):
        if not (self.alpha < 0 and self.steps >= 1 and self.dt > 0):
            raise DomainError(f"invalid point-attractor config {self}")


@dataclass(frozen=True)
class VanDerPolConfig:
    mu: float = 0.1
    steps: int = 200
    dt: float = 0.1
    substeps: int = 4  # RK4 steps per output sample

    def __post_init__(self):
        if not (self.steps >= 1 and self.dt > 0 and self.substeps >= 1):
            raise DomainError(f"invalid van der Pol config {self}")


@dataclass(frozen=True)
class FigureEightConfig:
    amplitude: float = 2.0
    loops: float = 3.0
    steps: int = 560
    noise_std: float = 0.05


@dataclass
class SeededSampler:
    """PCG64 stream; identical seed gives an identical sample stream."""

    seed: int
    algorithm: str = field(default="PCG64", init=False)

    def __post_init__(self):
        self.rng = np.random.Generator(np.random.PCG64(self.seed))

    @classmethod
    def from_key(cls, *key: int) -> "SeededSampler":
        """Stream keyed by a tuple of non-negative integers (hashed via SeedSequence)."""
        return cls(derive_seed(*key))


def derive_seed(*key: int) -> int:
    """64-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1, np.uint64)[0])


def _init_array(init) -> np.ndarray:
    p = init.as_array() if isinstance(init, Point2) else np.asarray(init, dtype=np.float64)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise DomainError(f"initial point must be two finite numbers, got {init!r}")
    return p


def gen_point_attractor(cfg: PointAttractorConfig, init) -> Trajectory:
    """Exact solution of x' = alpha x, y' = -y sampled every ``dt``."""
    p0 = _init_array(init)
    k = np.arange(cfg.steps + 1, dtype=np.float64)
    pts = np.empty((cfg.steps + 1, 2))
    # closed form per index rather than repeated multiplication: no drift
    pts[:, 0] = p0[0] * np.exp(cfg.alpha * k * cfg.dt)
    pts[:, 1] = p0[1] * np.exp(-1.0 * k * cfg.dt)
    return Trajectory(pts, cfg.dt, Kind.POINT)


def _vdp_field(mu: float, x: float, y: float) -> tuple[float, float]:
    return y, mu * (1.0 - x * x) * y - x


def gen_van_der_pol(cfg: VanDerPolConfig, init) -> Trajectory:
    """RK4 integration of x' = y, y' = mu (1 - x^2) y - x.

    Samples are ``dt`` apart; each interval is covered by ``substeps`` RK4 steps.
    """
    x, y = (float(v) for v in _init_array(init))
    mu, h = cfg.mu, cfg.dt / cfg.substeps
    pts = np.empty((cfg.steps + 1, 2))
    pts[0] = x, y
    for k in range(1, cfg.steps + 1):
        for _ in range(cfg.substeps):
            k1x, k1y = _vdp_field(mu, x, y)
            k2x, k2y = _vdp_field(mu, x + 0.5 * h * k1x, y + 0.5 * h * k1y)
            k3x, k3y = _vdp_field(mu, x + 0.5 * h * k2x, y + 0.5 * h * k2y)
            k4x, k4y = _vdp_field(mu, x + h * k3x, y + h * k3y)
            x = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            y = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            if not (math.isfinite(x) and math.isfinite(y)):
                raise DivergenceError(f"van der Pol state non-finite at step {k} (dt={cfg.dt} too large?)")
        pts[k] = x, y
    return Trajectory(pts, cfg.dt, Kind.CYCLIC)


def sample_initials(n: int, lo: float, hi: float, sampler: SeededSampler) -> np.ndarray:
    """``n`` points with each coordinate uniform in [lo, hi]; shape (n, 2)."""
    if not lo < hi:
        raise DomainError(f"empty sampling range [{lo}, {hi}]")
    if n < 0:
        raise DomainError(f"negative sample count {n}")
    return sampler.rng.uniform(lo, hi, size=(n, 2))


def gen_figure_eight(amplitude: float = 2.0, loops: float = 3.0, steps: int = 560,
                     noise_std: float = 0.0, sampler: SeededSampler | None = None) -> Trajectory:
    """Noisy Lissajous figure-eight standing in for a hand-drawn pattern."""
    if steps < 2:
        raise DomainError("figure-eight needs at least 2 steps")
    if noise_std < 0:
        raise DomainError("noise_std must be non-negative")
    t = np.arange(steps, dtype=np.float64)
    phase = 2.0 * np.pi * t * loops / steps
    pts = np.column_stack([amplitude * np.sin(2.0 * phase), amplitude * np.sin(phase)])
    if noise_std > 0:
        if sampler is None:
            raise DomainError("noisy figure-eight needs a sampler")
        pts = pts + sampler.rng.normal(0.0, noise_std, size=pts.shape)
    return Trajectory(pts, 1.0, Kind.FIGURE_EIGHT)


# --------------------------------------------------------------------------
# uniform access used by training / evaluation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Attractor:
    """Bundles an attractor kind with its generator config."""

    kind: Kind
    point: PointAttractorConfig = PointAttractorConfig()
    vdp: VanDerPolConfig = VanDerPolConfig()
    eight: FigureEightConfig = FigureEightConfig()

    @property
    def steps(self) -> int:
        """Number of transitions in a trajectory (points minus one)."""
        if self.kind is Kind.POINT:
            return self.point.steps
        if self.kind is Kind.CYCLIC:
            return self.vdp.steps
        return self.eight.steps - 1

    def ground_truth(self, init) -> Trajectory:
        if self.kind is Kind.POINT:
            return gen_point_attractor(self.point, init)
        if self.kind is Kind.CYCLIC:
            return gen_van_der_pol(self.vdp, init)
        if self.kind is Kind.FIGURE_EIGHT:
            # no flow through arbitrary initials exists; the clean curve is the reference
            e = self.eight
            return gen_figure_eight(e.amplitude, e.loops, e.steps, 0.0)
        raise DomainError(f"no generator for {self.kind}")

    def training_set(self, n: int, sampler: SeededSampler) -> list[Trajectory]:
        if self.kind is Kind.FIGURE_EIGHT:
            e = self.eight
            return [gen_figure_eight(e.amplitude, e.loops, e.steps, e.noise_std, sampler)
                    for _ in range(n)]
        return [self.ground_truth(p) for p in sample_initials(n, INIT_LO, INIT_HI, sampler)]

    def describe(self) -> dict:
        if self.kind is Kind.POINT:
            c = self.point
            return {"kind": "point", "alpha": c.alpha, "steps": c.steps, "dt": c.dt,
                    "integrator": "exact-exponential"}
        if self.kind is Kind.CYCLIC:
            c = self.vdp
            return {"kind": "cyclic", "mu": c.mu, "steps": c.steps, "dt": c.dt, "integrator": "rk4",
                    "substeps": c.substeps}
        e = self.eight
        return {"kind": "figure-eight", "amplitude": e.amplitude, "loops": e.loops,
                "steps": e.steps, "noise_std": e.noise_std}


def attractor(kind: str | Kind) -> Attractor:
    return Attractor(Kind(kind))


# --------------------------------------------------------------------------
# trajectory files: "x,y" per line, optional "# dt=<f> kind=<name>" header
# --------------------------------------------------------------------------

def save_trajectory(traj: Trajectory, path) -> None:
    path = Path(path)
    lines = [f"# dt={traj.dt!r} kind={Kind(traj.kind).value}"]
    lines += [f"{x:.17g},{y:.17g}" for x, y in traj.points]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise TrajectoryParseError(path, None, "file not found") from None
    dt = 1.0
    points = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                key, _, value = token.partition("=")
                if key == "dt":
                    try:
                        dt = float(value)
                    except ValueError:
                        raise TrajectoryParseError(path, lineno, f"bad dt {value!r}") from None
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TrajectoryParseError(path, lineno, f"expected 'x,y', got {line!r}")
        try:
            x, y = float(parts[0]), float(parts[1])
        except ValueError:
            raise TrajectoryParseError(path, lineno, f"malformed number in {line!r}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise TrajectoryParseError(path, lineno, f"non-finite value in {line!r}")
        points.append((x, y))
    if not points:
        raise TrajectoryParseError(path, None, "no points")
    return Trajectory(np.array(points), dt, Kind.IMPORTED)
