"""Marching-on-in-time solution of the lag systems.

For lag matrices ``A^l`` and loads ``b^n`` the space-time system is block
lower triangular, and forward substitution reads

    A^0 x^n = b^n - sum_{l=1}^{n-1} A^l x^{n-l},   n = 1, ..., N.

The lag-0 matrix is factorised once and reused for every step.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockLagSystem, RhsTimeSeries

log = logging.getLogger(__name__)


class SolveError(RuntimeError):
    """A step solve failed; ``step`` is the offending time index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class SolverMethod(str, enum.Enum):
    DIRECT = "direct"
    CG = "cg"


@dataclass(frozen=True)
class StepSolverConfig:
    method: SolverMethod = SolverMethod.DIRECT
    tol: float = 1e-12
    max_iter: int = 1000
    reuse_factorization: bool = True
    growth_factor: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "method", SolverMethod(self.method))
        if self.method is SolverMethod.CG and not self.tol > 0:
            raise ValueError("iterative solves need tol > 0")


@dataclass
class DensityHistory:
    """Coefficients ``x^n`` (rows, ``n = 0..N``; row 0 is the zero initial state).

    ``blocks`` lists ``(name, size)`` for coupled systems, e.g.
    ``[("phi", n_phi), ("psi", n_psi)]``.
    """

    coefficients: np.ndarray
    dt: float
    operator_id: str
    basis: str = "p0"
    mesh_digest: str = ""
    blocks: list = field(default_factory=list)
    residuals: np.ndarray | None = None
    flags: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.coefficients.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def block(self, name: str) -> np.ndarray:
        start = 0
        for nm, size in self.blocks:
            if nm == name:
                return self.coefficients[:, start : start + size]
            start += size
        raise KeyError(name)

    def header(self, extra: dict | None = None) -> dict:
        h = {
            "operator": self.operator_id,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "n_dof": int(self.coefficients.shape[1]),
            "basis": self.basis,
            "mesh": self.mesh_digest,
            "blocks": [[n, int(s)] for n, s in self.blocks],
            "flags": self.flags,
        }
        if extra:
            h.update(extra)
        return h

    def to_csv(self, path, extra_header: dict | None = None) -> None:
        """Write ``step,dof,value`` rows plus a JSON header next to the CSV."""
        path = Path(path)
        header = self.header(extra_header)
        path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))
        with path.open("w", newline="") as fh:
            fh.write(f"# config_hash={header.get('config_hash', '')}\n")
            w = csv.writer(fh)
            w.writerow(["step", "dof", "value"])
            for n in range(1, self.n_steps + 1):
                for i, v in enumerate(self.coefficients[n]):
                    w.writerow([n, i, repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "DensityHistory":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        coef = np.zeros((header["n_steps"] + 1, header["n_dof"]))
        with path.open() as fh:
            rows = (line for line in fh if not line.startswith("#"))
            reader = csv.reader(rows)
            next(reader)
            for step, dof, val in reader:
                coef[int(step), int(dof)] = float(val)
        return cls(
            coef, header["dt"], header["operator"], header["basis"], header["mesh"],
            [tuple(b) for b in header["blocks"]], flags=header.get("flags", []),
        )

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.coefficients).tobytes()).hexdigest()[:16]


def _factorize(A0: sp.spmatrix, cfg: StepSolverConfig):
    A0 = sp.csc_matrix(A0)
    if cfg.method is SolverMethod.DIRECT:
        try:
            lu = spla.splu(A0)
        except RuntimeError as exc:  # singular factor
            raise SolveError(f"lag-0 factorisation failed ({exc})", 1) from exc
        return lu.solve

    def solve(b):
        x, info = spla.cg(A0, b, rtol=cfg.tol, maxiter=cfg.max_iter)
        if info != 0:
            raise SolveError("conjugate gradients did not converge", -1)
        return x

    return solve


def march(system, rhs: RhsTimeSeries, cfg: StepSolverConfig | None = None) -> DensityHistory:
    """Forward substitution through the block lower triangular system."""
    cfg = cfg or StepSolverConfig()
    N = rhs.n_steps
    ndof = system.shape[0]
    if rhs.samples.shape[1] != ndof:
        raise ValueError(f"rhs has {rhs.samples.shape[1]} dofs, system {ndof}")
    A0 = system.matrix(0)
    solve = _factorize(A0, cfg)
    H = np.zeros((ndof, N + 1))
    res = np.zeros(N + 1)
    for n in range(1, N + 1):
        b = rhs.load(n) - system.history(H, n)
        try:
            x = solve(b)
        except SolveError as exc:
            raise SolveError(str(exc), n) from exc
        if not np.all(np.isfinite(x)):
            raise SolveError("non-finite solution", n)
        H[:, n] = x
        nb_ = np.linalg.norm(b)
        res[n] = np.linalg.norm(A0 @ x - b) / nb_ if nb_ > 0 else 0.0
    flags = growth_flags(H, cfg.growth_factor)
    for f in flags:
        log.warning(f)
    blocks = []
    if isinstance(system, BlockLagSystem):
        blocks = [("phi", system.sizes[0]), ("psi", system.sizes[1])]
    mesh_digest = getattr(system, "meta", {}).get("mesh", "") if hasattr(system, "meta") else ""
    if isinstance(system, BlockLagSystem):
        mesh_digest = system.blocks[(0, 0)].meta.get("mesh", "")
    basis = {"single_layer": "p0", "horn_adjoint_dl": "p0"}.get(system.operator_id, "p1")
    return DensityHistory(
        np.ascontiguousarray(H.T), rhs_dt(system), system.operator_id, basis, mesh_digest,
        blocks, res, flags,
    )


def growth_flags(H: np.ndarray, factor: float) -> list:
    """Flag late-time growth: last quarter norms exceeding ``factor`` times the rest."""
    norms = np.linalg.norm(H, axis=0)
    N = len(norms) - 1
    if N < 8:
        return []
    cut = N - N // 4
    early = norms[: cut + 1].max()
    late = norms[cut + 1 :].max()
    if early > 0 and late > factor * early:
        return [f"late-time growth: max |x| {late:.3e} after step {cut} vs {early:.3e} before"]
    return []


def rhs_dt(system) -> float:
    if isinstance(system, BlockLagSystem):
        return system.blocks[(0, 0)].meta["dt"]
    return system.meta["dt"]


def march_dtn(blocks: BlockLagSystem, rhs: RhsTimeSeries, cfg: StepSolverConfig | None = None) -> DensityHistory:
    """March the coupled Dirichlet-to-Neumann system (``phi`` and ``psi`` per step)."""
    if not isinstance(blocks, BlockLagSystem):
        raise TypeError("march_dtn expects the block system from assemble_dtn_blocks")
    return march(blocks, rhs, cfg)


def apply_spacetime(system, X: np.ndarray) -> np.ndarray:
    """Rows ``(A x)^n = sum_{l=0}^{n-1} A^l x^{n-l}`` for ``n = 1..N`` (row 0 zero)."""
    N = X.shape[0] - 1
    H = np.ascontiguousarray(X.T)
    A0 = system.matrix(0)
    out = np.zeros_like(X)
    for n in range(1, N + 1):
        out[n] = A0 @ X[n] + system.history(H, n)
    return out


def energy_functional(system, psi: DensityHistory | np.ndarray, rhs: RhsTimeSeries) -> float:
    """``E(x) = 1/2 x^T A x - x^T b`` over the full space-time vectors."""
    X = psi.coefficients if isinstance(psi, DensityHistory) else np.asarray(psi)
    AX = apply_spacetime(system, X)
    B = np.zeros_like(X)
    for n in range(1, X.shape[0]):
        B[n] = rhs.load(n)
    return float(0.5 * np.sum(X * AX) - np.sum(X * B))


def dense_spacetime_matrix(system, n_steps: int) -> np.ndarray:
    """Fully assembled block lower triangular matrix (small problems only)."""
    nd = system.shape[0]
    big = np.zeros((n_steps * nd, n_steps * nd))
    lags = [system.matrix(l).toarray() for l in range(n_steps)]
    for n in range(n_steps):
        for m in range(n + 1):
            big[n * nd : (n + 1) * nd, m * nd : (m + 1) * nd] = lags[n - m]
    return big
