"""
Experiment orchestration: validated run configuration, mode dispatch, and CSV/JSON output.
"""
import concurrent.futures
import json
import logging
import pathlib
from enum import Enum
from typing import Callable, Iterable, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from . import container
from .counting import Regime, classify_regime, count_report, solution_count_sequence
from .dense_oracle import DEFAULT_KERNEL_TOL, DEFAULT_MAX_DIM, build_dense_hamiltonian, ground_energy, kernel_dimension
from .exact_solver import (
    DEFAULT_RANK_TOL,
    appendix_construction_check,
    product_state_energy,
    product_state_solve,
    propagate_solutions,
)
from .mps_engine import StopRule, TauSchedule, ground_search
from .projectors import ChainSpec, sample_chain

logger = logging.getLogger(__name__)

CSV_HEADER = "# frustra-csv v1"
PRODUCT_RESIDUAL_TOL = 1e-10

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_INVALID_CONFIG = 2


class Mode(str, Enum):
    COUNT = "count"
    PHASE_DIAGRAM = "phase-diagram"
    SOLVE_EXACT = "solve-exact"
    PRODUCT = "product"
    TEBD = "tebd"
    ORACLE_CHECK = "oracle-check"
    APPENDIX_VERIFY = "appendix-verify"


_PER_SEED_MODES = frozenset({Mode.SOLVE_EXACT, Mode.PRODUCT, Mode.ORACLE_CHECK})


class ExperimentConfig(BaseModel):
    """
    One harness run. `n` is the chain length (n_max for count mode); every seed in
    `seeds` is an independent master seed.
    """
    mode: Mode
    d: Optional[int] = Field(default=None, ge=2)
    r: Optional[int] = Field(default=None, ge=1)
    n: Optional[int] = Field(default=None, ge=1)
    chi_list: list[int] = [8]
    seeds: list[int] = [0]
    taus: tuple[float, ...] = (0.5, 0.1, 0.02)
    max_sweeps: int = Field(default=5000, ge=1)
    stop_tol: float = Field(default=1e-9, gt=0)
    rank_tol: float = Field(default=DEFAULT_RANK_TOL, gt=0)
    field: Literal["complex", "real"] = "complex"
    format: Literal["csv", "json"] = "csv"
    out: Optional[pathlib.Path] = None
    d_max: int = Field(default=6, ge=2)
    workers: int = Field(default=1, ge=1)
    second_order: bool = False

    @field_validator("chi_list")
    @classmethod
    def _positive_chi(cls, chi_list: list[int]) -> list[int]:
        if not chi_list or any(chi < 1 for chi in chi_list):
            raise ValueError("chi list needs at least one bond dimension >= 1")
        return chi_list

    @field_validator("seeds")
    @classmethod
    def _seed_range(cls, seeds: list[int]) -> list[int]:
        if not seeds or any(not 0 <= s < 2**64 for s in seeds):
            raise ValueError("seeds must be a non-empty list of integers in [0, 2^64)")
        return seeds

    @model_validator(mode="after")
    def _mode_parameters(self) -> "ExperimentConfig":
        if self.mode is Mode.PHASE_DIAGRAM:
            return self
        if self.d is None or self.r is None or self.n is None:
            raise ValueError(f"mode {self.mode.value} needs --d, --r and --n")
        if self.r > self.d * self.d:
            raise ValueError(f"rank {self.r} exceeds two-site dimension {self.d * self.d}")
        if self.mode is not Mode.COUNT and self.n < 2:
            raise ValueError(f"mode {self.mode.value} needs a chain of at least 2 sites")
        if self.mode is Mode.PRODUCT and self.r >= self.d:
            raise ValueError(f"product mode needs r < d, got r={self.r}, d={self.d}")
        if self.mode is Mode.APPENDIX_VERIFY and 4 * self.r > self.d * self.d:
            raise ValueError(f"appendix-verify needs 4r <= d², got d={self.d}, r={self.r}")
        if self.mode is Mode.ORACLE_CHECK and self.d**self.n > DEFAULT_MAX_DIM:
            raise ValueError(f"oracle-check needs d^n <= {DEFAULT_MAX_DIM}, got {self.d**self.n}")
        TauSchedule(taus=self.taus)
        return self

    def chain(self, seed: int) -> ChainSpec:
        return ChainSpec(n_sites=self.n, local_dim=self.d, rank=self.r, seed=seed, field=self.field)

    def output_dir(self) -> pathlib.Path:
        if self.out is None:
            return container.get_output_dir()
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out

    @property
    def cell_count(self) -> int:
        """Independent units of work: one per seed, or per (chi, seed) for tebd."""
        if self.mode is Mode.TEBD:
            return len(self.chi_list) * len(self.seeds)
        if self.mode in _PER_SEED_MODES:
            return len(self.seeds)
        return 1

    @property
    def container_format(self) -> container.Format:
        return "json" if self.format == "json" else "binary"


class RunResult(BaseModel):
    exit_code: int = EXIT_OK
    artifacts: list[pathlib.Path] = []
    columns: list[str] = []
    summary: list[list] = []
    message: str = ""


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


def write_table(path: pathlib.Path, columns: Sequence[str], rows: Iterable[Sequence], fmt: str = "csv") -> pathlib.Path:
    """
    Write rows as a versioned CSV (floats in shortest round-trip form) or as a JSON list of records.

    The suffix of `path` is replaced to match the format.
    """
    rows = list(rows)
    if fmt == "json":
        path = path.with_suffix(".json")
        records = [{c: (v.value if isinstance(v, Enum) else v) for c, v in zip(columns, row)} for row in rows]
        path.write_text(json.dumps(container.json_safe(records), indent=2, allow_nan=False), encoding="utf-8")
    else:
        path = path.with_suffix(".csv")
        lines = [CSV_HEADER, ",".join(columns)] + [",".join(_cell(v) for v in row) for row in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Wrote %d rows to %s", len(rows), path)
    return path


def _parallel_map(fn: Callable, items: Sequence, workers: int, on_cell: Callable[[], None]) -> list:
    """Map in a process pool; results come back in input order. on_cell fires once per finished item."""
    results = []
    if workers <= 1 or len(items) <= 1:
        for item in items:
            results.append(fn(item))
            on_cell()
        return results
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
        for result in executor.map(fn, items):
            results.append(result)
            on_cell()
    return results


def phase_diagram_rows(d_max: int) -> list[tuple]:
    if d_max < 2:
        raise ValueError(f"d_max must be >= 2, got {d_max}")
    rows = []
    for d in range(2, d_max + 1):
        for r in range(1, d * d + 1):
            regime = classify_regime(d, r)
            relation = ">" if 4 * r > d * d else ("=" if 4 * r == d * d else "<")
            first = count_report(d, r, 2).first_frustrated_length if regime is Regime.FRUSTRATED else None
            rows.append((d, r, regime, relation, first))
    return rows


PHASE_COLUMNS = ["d", "r", "regime", "four_r_vs_d2", "first_frustrated_length"]


def emit_phase_diagram(d_max: int, out_dir: pathlib.Path, fmt: str = "csv") -> pathlib.Path:
    """Regime grid over 2 <= d <= d_max, 1 <= r <= d²."""
    return write_table(out_dir / f"phase_diagram_dmax{d_max}", PHASE_COLUMNS, phase_diagram_rows(d_max), fmt)


def _stem(config: ExperimentConfig, prefix: str) -> str:
    return f"{prefix}_d{config.d}_r{config.r}_n{config.n}"


def _run_count(config: ExperimentConfig, out_dir: pathlib.Path, on_cell: Callable[[], None]) -> RunResult:
    report = count_report(config.d, config.r, config.n)
    path = out_dir / f"count_d{config.d}_r{config.r}_n{config.n}.json"
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    rows = [[n, str(v)] for n, v in enumerate(report.d_sequence)]
    return RunResult(
        artifacts=[path],
        columns=["n", "D_n"],
        summary=rows,
        message=f"{report.regime.value}; first frustrated length: {report.first_frustrated_length}",
    )


def _run_phase_diagram(config: ExperimentConfig, out_dir: pathlib.Path, on_cell: Callable[[], None]) -> RunResult:
    path = emit_phase_diagram(config.d_max, out_dir, config.format)
    rows = phase_diagram_rows(config.d_max)
    return RunResult(artifacts=[path], columns=PHASE_COLUMNS, summary=[[_cell(v) for v in row] for row in rows])


SOLVE_COLUMNS = ["n", "s_n", "D_n", "rank_C", "sigma_gap"]


def _solve_cell(args: tuple[ExperimentConfig, int, pathlib.Path]) -> tuple[int, list[pathlib.Path], int]:
    config, seed, out_dir = args
    chain = config.chain(seed)
    stack = propagate_solutions(chain, sample_chain(chain), rank_tol=config.rank_tol)
    stem = f"{_stem(config, 'solve')}_seed{seed}"
    suffix = ".json" if config.container_format == "json" else ".frustra"
    stack_path = container.save_solution_stack(out_dir / f"{stem}_stack{suffix}", stack, config.container_format)
    rows = [(1, config.d, config.d, 0, None)] + [(s.n, s.s_n, s.d_n, s.rank_c, s.sigma_gap) for s in stack.steps]
    table_path = write_table(out_dir / stem, SOLVE_COLUMNS, rows, config.format)
    return seed, [stack_path, table_path], stack.count


def _run_solve_exact(config: ExperimentConfig, out_dir: pathlib.Path, on_cell: Callable[[], None]) -> RunResult:
    cells = _parallel_map(_solve_cell, [(config, s, out_dir) for s in config.seeds], config.workers, on_cell)
    artifacts = [p for _, paths, _ in cells for p in paths]
    d_n = solution_count_sequence(config.d, config.r, config.n)[-1]
    summary = [[seed, count, d_n] for seed, _, count in cells]
    return RunResult(artifacts=artifacts, columns=["seed", "s_N", "D_N"], summary=summary)


def _product_cell(args: tuple[ExperimentConfig, int, pathlib.Path]) -> tuple[int, float, pathlib.Path]:
    config, seed, out_dir = args
    chain = config.chain(seed)
    bonds = sample_chain(chain)
    vectors = product_state_solve(chain, bonds)
    residual = product_state_energy(bonds, vectors)
    suffix = ".json" if config.container_format == "json" else ".frustra"
    path = container.write_container(
        out_dir / f"{_stem(config, 'product')}_seed{seed}{suffix}",
        "product_state",
        {"chain": chain.model_dump(), "residual_energy": residual},
        {f"site_{k}": v for k, v in enumerate(vectors, start=1)},
        config.container_format,
    )
    return seed, residual, path


def _run_product(config: ExperimentConfig, out_dir: pathlib.Path, on_cell: Callable[[], None]) -> RunResult:
    cells = _parallel_map(_product_cell, [(config, s, out_dir) for s in config.seeds], config.workers, on_cell)
    rows = [(seed, residual, residual < PRODUCT_RESIDUAL_TOL) for seed, residual, _ in cells]
    columns = ["seed", "residual_energy", "ok"]
    summary_path = write_table(out_dir / f"{_stem(config, 'product')}_summary", columns, rows, config.format)
    failed = [seed for seed, _, ok in rows if not ok]
    for seed in failed:
        logger.warning("seed %d: product state residual energy above %.0e", seed, PRODUCT_RESIDUAL_TOL)
    return RunResult(
        exit_code=EXIT_VERIFICATION_FAILED if failed else EXIT_OK,
        artifacts=[path for *_, path in cells] + [summary_path],
        columns=columns,
        summary=[list(row) for row in rows],
    )


TRACE_COLUMNS = ["sweep", "tau", "energy", "trunc_err", "S_min", "S_max"]


def _tebd_cell(args: tuple[ExperimentConfig, int, int, pathlib.Path]) -> tuple[int, int, float, int, bool, str, list[pathlib.Path]]:
    config, chi, seed, out_dir = args
    chain = config.chain(seed)
    state, trace = ground_search(
        chain,
        sample_chain(chain),
        schedule=TauSchedule(taus=config.taus),
        chi_max=chi,
        stop=StopRule(rel_tol=config.stop_tol, max_sweeps=config.max_sweeps),
        second_order=config.second_order,
    )
    stem = f"{_stem(config, 'tebd')}_chi{chi}_seed{seed}"
    rows = [(t.sweep, t.tau, t.energy, t.trunc_err, t.s_min, t.s_max) for t in trace.rows]
    trace_path = write_table(out_dir / stem, TRACE_COLUMNS, rows, config.format)
    suffix = ".json" if config.container_format == "json" else ".frustra"
    state_path = container.save_mps(out_dir / f"{stem}_state{suffix}", state, config.container_format)
    return chi, seed, trace.final_energy, len(trace.rows) - 1, trace.converged, trace.reason, [trace_path, state_path]


def _run_tebd(config: ExperimentConfig, out_dir: pathlib.Path, on_cell: Callable[[], None]) -> RunResult:
    items = [(config, chi, seed, out_dir) for chi in config.chi_list for seed in config.seeds]
    cells = _parallel_map(_tebd_cell, items, config.workers, on_cell)
    columns = ["chi", "seed", "final_energy", "sweeps", "converged", "reason"]
    rows = [cell[:6] for cell in cells]
    summary_path = write_table(out_dir / f"{_stem(config, 'tebd')}_summary", columns, rows, config.format)
    return RunResult(
        artifacts=[p for cell in cells for p in cell[6]] + [summary_path],
        columns=columns,
        summary=[list(row) for row in rows],
    )


def generic_count(d: int, r: int, n: int) -> int:
    """D_n while the sequence stays positive, 0 from the first nonpositive entry on."""
    counts = solution_count_sequence(d, r, n)
    return 0 if any(v <= 0 for v in counts) else counts[-1]


ORACLE_COLUMNS = ["seed", "s_N", "D_N", "dense_kernel", "ground_energy", "match"]


def _oracle_cell(args: tuple[ExperimentConfig, int]) -> tuple[int, int, int, int, float, bool]:
    config, seed = args
    chain = config.chain(seed)
    bonds = sample_chain(chain)
    stack = propagate_solutions(chain, bonds, rank_tol=config.rank_tol)
    h = build_dense_hamiltonian(chain, bonds)
    kernel = kernel_dimension(h)
    energy = ground_energy(h)
    expected = generic_count(config.d, config.r, config.n)
    if classify_regime(config.d, config.r) is Regime.FRUSTRATED and expected == 0 and energy <= 10 * DEFAULT_KERNEL_TOL:
        logger.warning("seed %d: frustrated instance has ground energy %.3e, not above %.0e", seed, energy, 10 * DEFAULT_KERNEL_TOL)
    return seed, stack.count, expected, kernel, energy, stack.count == kernel == expected


def _run_oracle_check(config: ExperimentConfig, out_dir: pathlib.Path, on_cell: Callable[[], None]) -> RunResult:
    rows = _parallel_map(_oracle_cell, [(config, s) for s in config.seeds], config.workers, on_cell)
    path = write_table(out_dir / _stem(config, "oracle"), ORACLE_COLUMNS, rows, config.format)
    matches = sum(1 for row in rows if row[-1])
    return RunResult(
        exit_code=EXIT_OK if matches == len(rows) else EXIT_VERIFICATION_FAILED,
        artifacts=[path],
        columns=ORACLE_COLUMNS,
        summary=[list(row) for row in rows],
        message=f"{matches}/{len(rows)} matches",
    )


APPENDIX_COLUMNS = ["n", "rank_C", "expected_rank", "s_n", "D_n", "partial_gamma_ok"]


def _run_appendix_verify(config: ExperimentConfig, out_dir: pathlib.Path, on_cell: Callable[[], None]) -> RunResult:
    report = appendix_construction_check(config.d, config.r, config.n, rank_tol=config.rank_tol)
    rows = [(s.n, s.rank_c, s.expected_rank, s.s_n, s.d_n, s.partial_gamma_ok) for s in report.steps]
    path = write_table(out_dir / _stem(config, "appendix"), APPENDIX_COLUMNS, rows, config.format)
    for failure in report.failures:
        logger.error("appendix check: %s", failure)
    return RunResult(
        exit_code=EXIT_OK if report.passed else EXIT_VERIFICATION_FAILED,
        artifacts=[path],
        columns=APPENDIX_COLUMNS,
        summary=[list(row) for row in rows],
        message="passed" if report.passed else f"{len(report.failures)} failures",
    )


_DISPATCH = {
    Mode.COUNT: _run_count,
    Mode.PHASE_DIAGRAM: _run_phase_diagram,
    Mode.SOLVE_EXACT: _run_solve_exact,
    Mode.PRODUCT: _run_product,
    Mode.TEBD: _run_tebd,
    Mode.ORACLE_CHECK: _run_oracle_check,
    Mode.APPENDIX_VERIFY: _run_appendix_verify,
}


def run(config: ExperimentConfig, on_cell: Optional[Callable[[], None]] = None) -> RunResult:
    """
    Execute one configured experiment and write its artifacts.

    Args:
        config: Validated experiment configuration
        on_cell: Called after each of the config.cell_count units of work completes

    Returns:
        RunResult whose exit_code is 0 on success and 1 when a verification check failed

    Raises:
        OSError: If the output directory cannot be written
    """
    out_dir = config.output_dir()
    logger.info("Running %s into %s", config.mode.value, out_dir)
    on_cell = on_cell or (lambda: None)
    result = _DISPATCH[config.mode](config, out_dir, on_cell)
    if config.mode not in _PER_SEED_MODES and config.mode is not Mode.TEBD:
        on_cell()
    return result
