"""Benchmark harness: configuration, sweeps over levels and strategies, table output."""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

from .analysis import (
    ErrorReport,
    divergence_free_check,
    error_norms,
    infsup_constants,
    preconditioned_spectrum,
    spectrum_rows,
    with_orders,
    write_csv,
)
from .assembly import ProblemConfig, StokesSystem, assemble_system
from .cases import CASES, Case
from .krylov import INNER_TOL, OUTER_TOL, STOP_NORMS, STRATEGIES, solve_stokes, write_residuals
from .spaces import build_pair

SPECTRUM_PRECONDITIONERS = {
    "No precond.": (None, None),
    "Ideal(A,Q)": ("exact", "exact"),
    "Ideal(A)+Diag(Q)": ("exact", "jacobi"),
    "Diag(A,Q)": ("jacobi", "jacobi"),
}


class ConfigError(ValueError):
    pass


@dataclass
class CaseConfig:
    case: str
    k_prime: int = 2
    levels: list[int] = field(default_factory=lambda: [8, 16])
    nu: float = 1.0
    c_pen: float | None = None  # default 5 (k' + 1)
    strategies: list[str] = field(default_factory=lambda: ["Ideal(A,Q)"])
    outer_tol: float = OUTER_TOL
    inner_tol: float = INNER_TOL
    stop_norm: str = "euclidean"
    max_iter: int = 20_000
    spectra: bool = False
    infsup: bool = False
    divcheck: bool = False

    def __post_init__(self) -> None:
        if self.case not in CASES:
            raise ConfigError(f"unknown case {self.case!r}; expected one of {', '.join(CASES)}")
        if self.k_prime < 1:
            raise ConfigError("k_prime must be >= 1")
        if not self.levels:
            raise ConfigError("levels must be nonempty")
        if any(n < 2 for n in self.levels):
            raise ConfigError("every level needs at least 2 elements per direction")
        if not self.strategies:
            raise ConfigError("no strategies")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}")
        for name in ("outer_tol", "inner_tol"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.stop_norm not in STOP_NORMS:
            raise ConfigError(f"stop_norm must be one of {STOP_NORMS}")
        if self.nu <= 0:
            raise ConfigError("nu must be positive")

    @property
    def penalty(self) -> float:
        return 5.0 * (self.k_prime + 1) if self.c_pen is None else self.c_pen

    @property
    def tag(self) -> str:
        return f"{self.case}_k{self.k_prime}"


_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _split_list(text: str) -> list[str]:
    # commas inside parentheses belong to strategy names such as Ideal(A,Q)
    return [t.strip() for t in re.split(r",(?![^()]*\))", text) if t.strip()]


def parse_config(text: str) -> CaseConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    known = {f.name: f for f in fields(CaseConfig)}
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in ("k_prime", "max_iter"):
                values[key] = int(val)
            elif key == "levels":
                values[key] = [int(v) for v in _split_list(val)]
            elif key == "strategies":
                values[key] = _split_list(val)
            elif key in ("nu", "outer_tol", "inner_tol"):
                values[key] = float(val)
            elif key == "c_pen":
                values[key] = None if val.lower() in ("", "default", "none") else float(val)
            elif key in ("spectra", "infsup", "divcheck"):
                values[key] = _BOOL[val.lower()]
            else:
                values[key] = val
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    if "case" not in values:
        raise ConfigError("missing required key 'case'")
    return CaseConfig(**values)


def load_config(path: str | Path) -> CaseConfig:
    return parse_config(Path(path).read_text())


@dataclass
class RunRecord:
    case: str
    k_prime: int
    strategy: str
    n_elem: int
    h: float
    iterations: int
    converged: bool
    wall_seconds: float
    inner_top: float | None = None
    inner_bottom: float | None = None
    h1_velocity: float | None = None
    l2_velocity: float | None = None
    l2_pressure: float | None = None
    max_div: float | None = None
    div_scale: float | None = None


@dataclass
class RunOutput:
    config: CaseConfig
    records: list[RunRecord]
    errors: list[ErrorReport]
    infsup: list[dict]
    limits: list[dict]
    files: list[Path]

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.records)


def build_case(config: CaseConfig) -> Case:
    return CASES[config.case](config.nu)


def build_system(config: CaseConfig, n_elem: int, case: Case | None = None) -> StokesSystem:
    case = build_case(config) if case is None else case
    pc = ProblemConfig(
        nu=config.nu, c_pen=config.c_pen, dirichlet=case.dirichlet, body_force=case.body_force
    )
    return assemble_system(build_pair(config.k_prime, n_elem), case.gmap, pc)


def slug(name: str) -> str:
    return re.sub(r"_+", "_", re.sub(r"[^A-Za-z0-9]+", "_", name)).strip("_")


def _run_level(config: CaseConfig, case: Case, n: int, dump_spectrum: bool):
    system = build_system(config, n, case)
    records, histories = [], {}
    for strategy in config.strategies:
        u, p, rep = solve_stokes(
            system,
            strategy,
            tol=config.outer_tol,
            inner_tol=config.inner_tol,
            max_iter=config.max_iter,
            track_euclidean=True,
            stop=config.stop_norm,
        )
        rec = RunRecord(
            config.case, config.k_prime, strategy, n, 1.0 / n, rep.iterations, rep.converged,
            rep.wall_time, rep.inner_top, rep.inner_bottom,
        )
        if case.exact is not None:
            err = error_norms(u, p, case.exact, system.pair, system.gmap)
            rec.h1_velocity, rec.l2_velocity, rec.l2_pressure = err.h1_velocity, err.l2_velocity, err.l2_pressure
        if config.divcheck:
            chk = divergence_free_check(u, system.pair, system.gmap)
            rec.max_div, rec.div_scale = chk.max_div, chk.scale
        records.append(rec)
        histories[strategy] = rep.euclidean
    infsup = None
    if config.infsup:
        inf = infsup_constants(system)
        infsup = {"n_elem": n, "c_pen": config.penalty, "beta0": inf.beta0, "cb": inf.cb,
                  "beta0_sq": inf.beta0_sq, "cb_sq": inf.cb_sq}
    limits, spectra = [], []
    if config.spectra or dump_spectrum:
        for label, (ma, mq) in SPECTRUM_PRECONDITIONERS.items():
            spec = preconditioned_spectrum(system, ma, mq)
            lim = spec.limits
            limits.append({"n_elem": n, "preconditioner": label, "neg_min": lim.neg_min,
                           "neg_max": lim.neg_max, "pos_min": lim.pos_min, "pos_max": lim.pos_max})
            if dump_spectrum:
                spectra.extend(spectrum_rows(spec, label))
    return records, histories, infsup, limits, spectra


def markdown_table(rows: list[dict]) -> str:
    """Aligned GitHub-style table."""
    if not rows:
        return ""
    keys = list(rows[0])

    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return f"{v:.4e}" if v != 0 and (abs(v) < 1e-2 or abs(v) >= 1e4) else f"{v:.4f}"
        return str(v)

    cells = [[fmt(r.get(k)) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    line = lambda items: "| " + " | ".join(s.ljust(w) for s, w in zip(items, widths)) + " |"
    out = [line(keys), "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    out += [line(c) for c in cells]
    return "\n".join(out) + "\n"


def _emit(out: Path, stem: str, rows: list, emit: str, files: list[Path]) -> None:
    if not rows:
        return
    if emit in ("csv", "both"):
        files.append(write_csv(out / f"{stem}.csv", rows))
    if emit in ("md", "both"):
        dict_rows = [r if isinstance(r, dict) else {f.name: getattr(r, f.name) for f in fields(r)} for r in rows]
        path = out / f"{stem}.md"
        path.write_text(markdown_table(dict_rows))
        files.append(path)


def run(
    config: CaseConfig,
    out_dir: str | Path | None = None,
    emit: str = "both",
    dump_residuals: bool = False,
    dump_spectrum: bool = False,
    threads: int = 1,
) -> RunOutput:
    """Run every (level, strategy) pair; write tables when ``out_dir`` is given."""
    if not config.strategies:
        raise ConfigError("no strategies")
    if emit not in ("csv", "md", "both"):
        raise ValueError("emit must be csv, md or both")
    case = build_case(config)
    levels = sorted(config.levels)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda n: _run_level(config, case, n, dump_spectrum), levels))
    else:
        results = [_run_level(config, case, n, dump_spectrum) for n in levels]

    records = [r for res in results for r in res[0]]
    infsup = [res[2] for res in results if res[2] is not None]
    limits = [row for res in results for row in res[3]]
    errors: list[ErrorReport] = []
    if case.exact is not None:
        first = config.strategies[0]
        errors = with_orders(
            [
                ErrorReport(r.h, r.h1_velocity, r.l2_velocity, r.l2_pressure)
                for r in records
                if r.strategy == first
            ]
        )

    files: list[Path] = []
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _emit(out, f"iters_{config.tag}", records, emit, files)
        _emit(out, f"errors_{config.tag}", errors, emit, files)
        _emit(out, f"infsup_{config.tag}", infsup, emit, files)
        _emit(out, f"limits_{config.tag}", limits, emit, files)
        if dump_spectrum:
            for n, res in zip(levels, results):
                if res[4]:
                    files.append(write_csv(out / f"spectrum_{config.tag}_h{n}.csv", res[4]))
        if dump_residuals:
            for n, res in zip(levels, results):
                for strategy, hist in res[1].items():
                    suffix = f"_h{n}" if len(levels) > 1 else ""
                    path = out / f"residuals_{slug(strategy)}{suffix}.dat"
                    write_residuals(path, hist)
                    files.append(path)
    return RunOutput(config, records, errors, infsup, limits, files)
