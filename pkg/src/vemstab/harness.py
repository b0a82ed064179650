"""Experiment driver: p-sweeps, degenerating sequences, rate studies and
table output."""

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidArgument, VemError
from .exactbasis import exact_basis, exact_stiffness_B, fit_rate, interpolation_rate_study
from .femstokes import FemSpace, h1_error, l2_error, solve_stokes
from .geometry import FAMILIES, Polygon, build_polygon, element_sequence, regularity_report, subtriangulate
from .spectra import deflated_gen_eig, spectral_condition
from .vemspace import BOUNDARY_TERMS, STAB_KINDS, DofLayout, constant_dofs, discrete_form_A, projector_pack

log = logging.getLogger(__name__)

REFINE_CAP = 4
P_DEFAULT_CAP = 5
P_HARD_CAP = 9


@dataclass
class ExperimentConfig:
    element: str = "flatten:1"  # "family:index" or a path to a polygon JSON file
    family: str | None = None
    index: int | None = None
    p: int = 3
    p_max: int | None = None
    stab: str = "both"
    boundary_term: str = "dofsum"
    refine: int | str = "auto"
    auto_refine_tol: float = 0.005
    refine_cap: int = REFINE_CAP
    quad_safety: int = 0
    format: str = "csv"
    out: str | None = None
    cache_dir: str | None = None
    jobs: int = 1
    allow_high_p: bool = False

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def validate(self):
        if self.p < 2:
            raise ConfigError("p must be >= 2")
        top = self.p_max if self.p_max is not None else self.p
        if top > P_HARD_CAP:
            raise ConfigError(f"p above {P_HARD_CAP} is not supported")
        if top > P_DEFAULT_CAP and not self.allow_high_p:
            raise ConfigError(f"p above {P_DEFAULT_CAP} needs allow_high_p (expensive and ill-conditioned)")
        if top > P_DEFAULT_CAP:
            log.warning("p up to %d requested: expect long FEM solves and condition numbers near 1e14", top)
        if self.stab not in STAB_KINDS + ("both",):
            raise ConfigError(f"stab must be one of {STAB_KINDS + ('both',)}")
        if self.boundary_term not in BOUNDARY_TERMS:
            raise ConfigError(f"boundary_term must be one of {BOUNDARY_TERMS}")
        if self.refine != "auto":
            try:
                self.refine = int(self.refine)
            except (TypeError, ValueError) as exc:
                raise ConfigError("refine must be a non-negative integer or 'auto'") from exc
            if self.refine < 0:
                raise ConfigError("refine must be >= 0")
        if not 0 < self.auto_refine_tol < 1:
            raise ConfigError("auto_refine_tol must lie in (0, 1)")
        if self.quad_safety < 0:
            raise ConfigError("quad_safety must be >= 0")
        if self.refine_cap < 0:
            raise ConfigError("refine_cap must be >= 0")
        if self.format not in ("csv", "markdown"):
            raise ConfigError("format must be csv or markdown")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.family is not None and self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        return self

    @property
    def stabs(self):
        return STAB_KINDS if self.stab == "both" else (self.stab,)

    @property
    def p_values(self):
        """Degrees to sweep; empty when p_max < p."""
        top = self.p_max if self.p_max is not None else self.p
        return list(range(self.p, top + 1))


@dataclass
class TableRow:
    element: str
    p: int
    stab: str
    lambda_min: float
    lambda_max: float
    cond_A: float
    cond_B: float
    fem_refine_used: int
    wall_time: float
    refine_cap_hit: bool = False
    rho_star: float | None = None
    residual: float = 0.0

    def check(self):
        for name in ("lambda_min", "lambda_max", "cond_A", "cond_B"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise VemError(f"row {self.element} p={self.p} {self.stab}: {name}={v} is not finite and positive")
        if self.residual > 1e-8:
            raise VemError(f"row {self.element} p={self.p} {self.stab}: eigen residual {self.residual:.2e} above 1e-8")
        return self


COLUMNS = [f.name for f in fields(TableRow)]


def resolve_element(spec):
    """(id, Polygon) from ``family:index`` or a polygon JSON path."""
    if isinstance(spec, Polygon):
        return spec.key, spec
    spec = str(spec)
    if ":" in spec and spec.split(":", 1)[0] in FAMILIES:
        fam, idx = spec.split(":", 1)
        try:
            return spec, element_sequence(fam, int(idx))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"element {spec!r} is neither family:index nor an existing file")
    try:
        poly = Polygon.from_json(path.read_text())
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad polygon file {spec}: {exc}") from exc
    return path.stem, poly


@dataclass
class Measurement:
    spectra: dict
    cond_A: dict
    cond_B: float
    level: int
    cap_hit: bool
    history: list = field(default_factory=list)


def _measure_level(layout, pack, ker, stabs, boundary_term, level, cache_dir, quad_extra=0):
    phi = exact_basis(layout, refine=level, cache_dir=cache_dir, quad_extra=quad_extra)
    B = exact_stiffness_B(phi)
    spectra, condA = {}, {}
    for s in stabs:
        A = discrete_form_A(layout, pack, s, boundary_term)
        spectra[s] = deflated_gen_eig(A, B, ker)
        condA[s] = spectral_condition(A, ker)
    return spectra, condA, spectral_condition(B, ker)


def measure(
    polygon, p, stabs=STAB_KINDS, boundary_term="dofsum", refine="auto", tol=0.005, cap=REFINE_CAP, cache_dir=None, start=1, quad_extra=0
):
    """Extremal eigenvalues and condition numbers for one element and degree.

    With ``refine="auto"`` the FEM level increases from `start` until every
    extremal eigenvalue moves by less than `tol` (relative) between
    consecutive levels, or `cap` is reached (``cap_hit`` is then set).
    """
    layout = DofLayout(polygon, p)
    pack = projector_pack(layout)
    ker = constant_dofs(layout)
    if refine != "auto":
        sp_, cA, cB = _measure_level(layout, pack, ker, stabs, boundary_term, int(refine), cache_dir, quad_extra)
        return Measurement(sp_, cA, cB, int(refine), False, [(int(refine), sp_)])
    history = []
    prev = None
    level = min(start, cap)
    while True:
        sp_, cA, cB = _measure_level(layout, pack, ker, stabs, boundary_term, level, cache_dir, quad_extra)
        history.append((level, sp_))
        if prev is not None:
            change = max(
                max(abs(sp_[s].lambda_min / prev[s].lambda_min - 1), abs(sp_[s].lambda_max / prev[s].lambda_max - 1))
                for s in stabs
            )
            log.info("p=%d level %d: max relative change %.3e", p, level, change)
            if change < tol:
                return Measurement(sp_, cA, cB, level, False, history)
        if level >= cap:
            return Measurement(sp_, cA, cB, level, True, history)
        prev = sp_
        level += 1


def _task(args):
    elem_id, polygon, p, cfg, rho = args
    t0 = time.perf_counter()
    m = measure(polygon, p, cfg.stabs, cfg.boundary_term, cfg.refine, cfg.auto_refine_tol, cfg.refine_cap, cfg.cache_dir, quad_extra=cfg.quad_safety)
    wall = time.perf_counter() - t0
    rows = []
    for s in cfg.stabs:
        r = m.spectra[s]
        rows.append(
            TableRow(elem_id, p, s, r.lambda_min, r.lambda_max, m.cond_A[s], m.cond_B, m.level, wall, m.cap_hit, rho, r.residual).check()
        )
    return rows


class PartialRun(VemError):
    """Some rows failed; `rows` holds the ones that completed."""

    def __init__(self, message, rows):
        super().__init__(message)
        self.rows = rows


def _safe_task(t):
    try:
        return _task(t), None
    except VemError as exc:
        return [], f"{t[0]} p={t[2]}: {type(exc).__name__}: {exc}"


def _run(tasks, cfg):
    rows, failures = [], []
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_safe_task, tasks))
    else:
        results = [_safe_task(t) for t in tasks]
    for out, err in results:
        rows.extend(out)
        if err:
            failures.append(err)
    order = {s: i for i, s in enumerate(STAB_KINDS)}
    rows.sort(key=lambda r: (r.element, r.p, order[r.stab]))
    if failures:
        raise PartialRun("; ".join(failures), rows)
    return rows


def run_pspan(cfg):
    """One row per (p, stab) on a single element."""
    cfg.validate()
    elem_id, poly = resolve_element(cfg.element)
    tasks = [(elem_id, poly, p, cfg, None) for p in cfg.p_values]
    return _run(tasks, cfg)


def run_sequence(cfg):
    """Rows for indices 1..5 of a degenerating family at fixed p, with rho_star."""
    cfg.validate()
    if cfg.family is None:
        raise ConfigError("sequence needs a family")
    indices = [cfg.index] if cfg.index is not None else list(range(1, 6))
    tasks = []
    for i in indices:
        try:
            poly = element_sequence(cfg.family, i)
        except InvalidArgument as exc:
            raise ConfigError(str(exc)) from exc
        tasks.append((f"{cfg.family}:{i}", poly, cfg.p, cfg, regularity_report(poly).rho_star))
    rank = {f"{cfg.family}:{i}": i for i in indices}

    def by_index(rows):
        rows.sort(key=lambda r: (rank[r.element], r.p, STAB_KINDS.index(r.stab)))
        return rows

    try:
        return by_index(_run(tasks, cfg))
    except PartialRun as exc:
        by_index(exc.rows)
        raise


# --------------------------------------------------------------------------
# rate studies

_PI = np.pi


def smooth_field(x):
    X, Y = x[:, 0], x[:, 1]
    return np.column_stack([np.sin(_PI * X) * np.sin(_PI * Y) + X**2, np.cos(_PI * X) * np.cos(_PI * Y)])


def smooth_field_grad(x):
    X, Y = x[:, 0], x[:, 1]
    g = np.zeros((len(x), 2, 2))
    g[:, 0, 0] = _PI * np.cos(_PI * X) * np.sin(_PI * Y) + 2 * X
    g[:, 0, 1] = _PI * np.sin(_PI * X) * np.cos(_PI * Y)
    g[:, 1, 0] = -_PI * np.sin(_PI * X) * np.cos(_PI * Y)
    g[:, 1, 1] = -_PI * np.cos(_PI * X) * np.sin(_PI * Y)
    return g


UNIT_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
REGULAR_PENTAGON = [[-0.5, 0.0], [0.5, 0.0], [1.0, 1.0], [0.0, 2.0], [-1.0, 1.0]]


@dataclass
class RateRow:
    study: str
    shape: str
    p: int
    slope: float
    r2: float
    errors: list


def run_interp_rates(cfg=None, shapes=("square", "pentagon"), degrees=(2, 3), levels=5, size=0.1):
    """Interpolation-error slopes on similarity-shrinking squares and pentagons."""
    refs = {"square": build_polygon(UNIT_SQUARE), "pentagon": build_polygon(REGULAR_PENTAGON)}
    out = []
    for shape in shapes:
        for p in degrees:
            r = interpolation_rate_study(refs[shape], smooth_field, smooth_field_grad, p, levels=levels, size=size)
            out.append(RateRow("interpolation_h1", shape, p, r.slope, r.r2, r.errors.tolist()))
    return out


def _stokes_data():
    """Manufactured solution with nonzero divergence and zero-mean pressure on the unit square."""

    def f(x):
        X, Y = x[:, 0], x[:, 1]
        s, c = np.sin, np.cos
        lap = np.column_stack([-2 * _PI**2 * s(_PI * X) * s(_PI * Y) + 2, -2 * _PI**2 * c(_PI * X) * c(_PI * Y)])
        grad_p = np.column_stack([-_PI * s(_PI * X) * c(_PI * Y), -_PI * c(_PI * X) * s(_PI * Y)])
        return -lap - grad_p

    def g(x):
        return 2 * x[:, 0]

    return f, g


def run_fem_selfcheck(levels=(1, 2, 3, 4)):
    """Taylor-Hood convergence rates (H1 and L2 velocity errors) on the unit square."""
    sq = build_polygon(UNIT_SQUARE)
    f, g = _stokes_data()
    hs, e1, e0 = [], [], []
    for lev in levels:
        space = FemSpace(subtriangulate(sq, lev, method="fan"))
        u = solve_stokes(space, f, g, smooth_field, f_degree=8, g_degree=6)
        hs.append(np.sqrt(2.0) / 2**lev)
        e1.append(h1_error(u, smooth_field_grad, 8))
        e0.append(l2_error(u, smooth_field, 8))
    r1, r0 = fit_rate(np.array(hs), np.array(e1)), fit_rate(np.array(hs), np.array(e0))
    return [
        RateRow("taylor_hood_h1", "square", 2, r1.slope, r1.r2, list(e1)),
        RateRow("taylor_hood_l2", "square", 2, r0.slope, r0.r2, list(e0)),
    ]


# --------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4e}"
    if v is None:
        return ""
    return str(v)


def format_rows(rows, fmt="csv"):
    if not rows:
        return ""
    cols = list(asdict(rows[0]).keys())
    recs = [asdict(r) for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for rec in recs:
            w.writerow([repr(rec[c]) if isinstance(rec[c], float) else rec[c] for c in cols])
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        for rec in recs:
            lines.append("| " + " | ".join(_fmt(rec[c]) for c in cols) + " |")
        return "\n".join(lines) + "\n"
    raise InvalidArgument(f"unknown format {fmt!r}")
