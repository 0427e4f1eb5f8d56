"""Quasi-policy KKT residual and its Jacobian for mixed-hierarchy games.

Robots are processed leaves first.  For every robot with a leader, its own
KKT rows ``K_j`` are linearized with respect to its block ``y_j`` and its
leaders' strategies.  The implicit function theorem then gives an affine
approximation of its best response::

    pi_j(x_L) ~= x_j - delta_j + sum_l P_{j,l} (x_l - x_l(w))

where ``delta_j`` is the ``x_j`` part of the follower's Newton correction
``M^{-1} K_j`` and ``P_{j,l}`` the ``x_j`` rows of ``-M^{-1} A``.  Leaders
use these maps in their own stationarity and policy-constraint rows.

Within one evaluation the matrices ``P`` (and the row selector
``Z = M^{-T} E``) are treated as constants, while ``delta_j = Z^T K_j(w)``
stays a live function of ``w``.  The returned Jacobian is the exact
Jacobian of that frozen map, so games with quadratic costs and linear
constraints are solved by a single Newton step.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .expr import DimensionMismatch
from .game import MixedHierarchyGame, VariableLayout

__all__ = [
    "SingularPolicySystem",
    "NonFiniteResidual",
    "PolicyLinearization",
    "KKTEvaluation",
    "KKTSystem",
    "assemble",
    "frozen_residual",
    "linearize_policy",
    "build_leaf_kkt",
    "build_nonleaf_kkt",
    "consensus_gap",
    "write_diagnostic_csv",
    "DIAGNOSTIC_COLUMNS",
]

CONDITION_LIMIT = 1e12
REGULARIZATION = 1e-8


class SingularPolicySystem(np.linalg.LinAlgError):
    """A follower's KKT matrix is singular, so its best response has no local linearization."""

    def __init__(self, robot: int, condition: float, iterate: np.ndarray | None = None):
        super().__init__(f"policy system of robot {robot} is singular (condition estimate {condition:.3e})")
        self.robot = robot
        self.condition = condition
        self.iterate = iterate


class NonFiniteResidual(FloatingPointError):
    """NaN or Inf appeared in the residual or its Jacobian."""

    def __init__(self, rows: list[int], provenance: list[str]):
        shown = "; ".join(provenance[:5])
        more = f" and {len(rows) - 5} more" if len(rows) > 5 else ""
        super().__init__(f"non-finite values in rows: {shown}{more}")
        self.rows = rows
        self.provenance = provenance


@dataclass
class PolicyLinearization:
    """Affine best-response approximation of one follower at a base point.

    Attributes
    ----------
    robot : int
        Follower index ``j``.
    base_point : ndarray
        Values of ``y_j`` at linearization.
    base_leaders : dict
        Leader strategies ``x_l`` at linearization, keyed by leader index.
    base_strategy : ndarray
        ``x_j`` at linearization.
    offset : ndarray
        ``delta_j``, the ``x_j`` rows of ``M^{-1} K_j`` at the base point.
    blocks : dict
        ``P_{j,l}`` of shape ``(n_j, n_l)`` per leader ``l``.
    selector : ndarray
        ``Z = M^{-T} E_{x_j}`` of shape ``(|y_j|, n_j)``.
    """

    robot: int
    base_point: np.ndarray
    base_leaders: dict
    base_strategy: np.ndarray
    offset: np.ndarray
    blocks: dict
    selector: np.ndarray
    condition: float
    min_pivot: float
    regularized: bool = False

    def __call__(self, leaders: Mapping[int, np.ndarray]) -> np.ndarray:
        """Evaluate the affine policy at leader strategies ``leaders``."""
        out = self.base_strategy - self.offset
        for l, P in self.blocks.items():
            out = out + P @ (np.asarray(leaders[l], dtype=float) - self.base_leaders[l])
        return out

    def affine_form(self) -> tuple[np.ndarray, dict]:
        """Constant term ``c`` and blocks so that ``pi(x_L) = c + sum_l P_l x_l``."""
        c = self.base_strategy - self.offset
        for l, P in self.blocks.items():
            c = c - P @ self.base_leaders[l]
        return c, dict(self.blocks)


@dataclass
class KKTEvaluation:
    """Residual, Jacobian and per-iteration policy cache at one iterate."""

    point: np.ndarray
    residual: np.ndarray
    jacobian: sp.csr_matrix | None
    policies: dict
    offsets: dict
    min_pivot: float = np.inf
    max_condition: float = 1.0

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.residual))


class _RobotIndex:
    """Static index maps used to scatter one robot's rows and Jacobian entries."""

    def __init__(self, layout: VariableLayout, game: MixedHierarchyGame, i: int):
        start = layout.robot[i].start
        self.start = start
        self.size = layout.robot_size(i)
        self.n = layout.dims[i]
        self.followers = layout.followers[i]
        self.leaders = layout.leaders[i]
        self.x_cols = np.arange(layout.x[i].start, layout.x[i].stop)
        self.lam_cols = np.arange(layout.lam[i].start, layout.lam[i].stop)
        self.lam_rows = self.lam_cols - start
        self.pred_rows = {j: np.arange(layout.pred[(i, j)].start, layout.pred[(i, j)].stop) - start for j in self.followers}
        self.psi_rows = {j: np.arange(layout.psi[(i, j)].start, layout.psi[(i, j)].stop) - start for j in self.followers}
        self.x_rows = self.x_cols - start

        fn = game.functions[i]
        view = layout.view_indices(i)
        self.grad_rows = np.concatenate([self.x_rows] + [self.pred_rows[j] for j in self.followers])
        cg = fn.cost_gradient
        self.cg_rows = self.grad_rows[cg.rows]
        self.cg_cols = view[cg.cols]
        lg = fn.lagrangian_gradient
        lg_cols = np.concatenate([self.x_cols, self.lam_cols])
        self.lg_rows = self.x_rows[lg.rows]
        self.lg_cols = lg_cols[lg.cols]
        g = fn.constraint
        self.g_rows = self.lam_rows[g.rows]
        self.g_cols = self.x_cols[g.cols]
        self.leader_cols = {
            l: np.arange(layout.x[l].start, layout.x[l].stop) for l in self.leaders
        }


def _structure(game: MixedHierarchyGame) -> dict:
    layout = game.layout
    cached = getattr(layout, "_kkt_index", None)
    if cached is None:
        cached = {i: _RobotIndex(layout, game, i) for i in game.graph.robots}
        layout._kkt_index = cached
    return cached


class KKTSystem:
    """Residual and quasi-policy Jacobian evaluators for one game.

    Parameters
    ----------
    game : MixedHierarchyGame
    regularize : bool
        If a follower's KKT matrix is ill conditioned, retry with ``mu * I``
        added to its primal stationarity diagonal instead of failing.
    condition_limit : float
        Condition estimate above which a policy system counts as singular.
    """

    def __init__(
        self,
        game: MixedHierarchyGame,
        regularize: bool = False,
        condition_limit: float = CONDITION_LIMIT,
        mu: float = REGULARIZATION,
    ):
        self.game = game
        self.layout = game.layout
        self.index = _structure(game)
        self.regularize = regularize
        self.condition_limit = condition_limit
        self.mu = mu

    @property
    def size(self) -> int:
        return self.layout.size

    # ------------------------------------------------------------------
    def evaluate(self, w: np.ndarray, jacobian: bool = True) -> KKTEvaluation:
        """Rebuild all follower policies at ``w`` and evaluate ``F`` (and ``dF``)."""
        return self._assemble(w, None, jacobian)

    def evaluate_frozen(self, w: np.ndarray, policies: Mapping[int, PolicyLinearization], jacobian: bool = True) -> KKTEvaluation:
        """Evaluate the map obtained by holding the given policy matrices fixed."""
        return self._assemble(w, dict(policies), jacobian)

    def residual(self, w: np.ndarray) -> np.ndarray:
        return self._assemble(w, None, False).residual

    def frozen_residual(self, w: np.ndarray, policies: Mapping[int, PolicyLinearization]) -> np.ndarray:
        return self._assemble(w, dict(policies), False).residual

    # ------------------------------------------------------------------
    def _assemble(self, w, policies, want_jac: bool) -> KKTEvaluation:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.size,):
            raise DimensionMismatch(f"expected iterate of length {self.size}, got shape {w.shape}")
        game = self.game
        fresh = policies is None
        if fresh:
            policies = {}
        values: dict[int, np.ndarray] = {}
        jacs: dict[int, sp.csr_matrix] = {}
        offsets: dict[int, np.ndarray] = {}
        sensitivities: dict[int, sp.csr_matrix] = {}
        min_pivot = np.inf
        max_cond = 1.0
        for i in game.order:
            val, jac = self._robot_rows(i, w, policies, values, offsets, sensitivities, want_jac)
            values[i] = val
            if want_jac:
                jacs[i] = jac
            if game.sets.has_leader(i):
                if fresh:
                    if not want_jac:
                        val, jac = self._robot_rows(i, w, policies, values, offsets, sensitivities, True)
                        values[i] = val
                    pol = self._linearize(i, w, jac)
                    policies[i] = pol
                    min_pivot = min(min_pivot, pol.min_pivot)
                    max_cond = max(max_cond, pol.condition)
                pol = policies[i]
                offsets[i] = pol.selector.T @ val
                if fresh:
                    pol.offset = offsets[i].copy()
                if want_jac:
                    sensitivities[i] = sp.csr_matrix(pol.selector.T) @ jacs[i]
        residual = np.concatenate([values[i] for i in game.graph.robots])
        jacobian = None
        if want_jac:
            jacobian = sp.vstack([jacs[i] for i in game.graph.robots], format="csr")
        self._check_finite(residual, jacobian)
        return KKTEvaluation(w.copy(), residual, jacobian, policies, offsets, min_pivot, max_cond)

    def _check_finite(self, residual, jacobian):
        bad = np.flatnonzero(~np.isfinite(residual))
        if bad.size == 0 and jacobian is not None and not np.all(np.isfinite(jacobian.data)):
            coo = jacobian.tocoo()
            bad = np.unique(coo.row[~np.isfinite(coo.data)])
        if bad.size:
            rows = [int(r) for r in bad]
            raise NonFiniteResidual(rows, [self.layout.describe(r) for r in rows])

    def _robot_rows(self, i, w, policies, values, offsets, sensitivities, want_jac):
        """Residual rows of robot ``i`` and, optionally, their Jacobian (rows x full ``w``)."""
        game = self.game
        lay = self.layout
        idx = self.index[i]
        p = game.param_values
        fn = game.functions[i]
        view = w[lay.view_indices(i)]
        xi = w[lay.x[i]]
        lam = w[lay.lam[i]]
        out = np.zeros(idx.size)
        r_idx: list[np.ndarray] = []
        c_idx: list[np.ndarray] = []
        v_idx: list[np.ndarray] = []
        extra: list[sp.spmatrix] = []

        def put(rows, cols, vals):
            r_idx.append(np.asarray(rows, dtype=np.intp).ravel())
            c_idx.append(np.asarray(cols, dtype=np.intp).ravel())
            v_idx.append(np.asarray(vals, dtype=float).ravel())

        def put_block(row_ids, col_ids, block):
            rr, cc = np.meshgrid(row_ids, col_ids, indexing="ij")
            put(rr, cc, block)

        # cost gradient, own and follower-copy stationarity
        if want_jac:
            g_val, g_jac = fn.cost_gradient.value_and_jacobian_values(view, p)
            put(idx.cg_rows, idx.cg_cols, g_jac)
        else:
            g_val = fn.cost_gradient.value(view, p)
        out[idx.grad_rows] += g_val

        # constraint terms
        if idx.lam_rows.size:
            z = np.concatenate([xi, lam])
            if want_jac:
                lg_val, lg_jac = fn.lagrangian_gradient.value_and_jacobian_values(z, p)
                put(idx.lg_rows, idx.lg_cols, -lg_jac)
                c_val, c_jac = fn.constraint.value_and_jacobian_values(xi, p)
                put(idx.g_rows, idx.g_cols, c_jac)
            else:
                lg_val = fn.lagrangian_gradient.value(z, p)
                c_val = fn.constraint.value(xi, p)
            out[idx.x_rows] -= lg_val
            out[idx.lam_rows] = c_val

        # policy terms
        for j in idx.followers:
            pol = policies[j]
            psi_cols = np.arange(lay.psi[(i, j)].start, lay.psi[(i, j)].stop)
            pred_cols = np.arange(lay.pred[(i, j)].start, lay.pred[(i, j)].stop)
            xj_cols = np.arange(lay.x[j].start, lay.x[j].stop)
            psi = w[psi_cols]
            # leader's own stationarity: P_{j,i}^T psi_ij
            P = pol.blocks[i]
            out[idx.x_rows] += P.T @ psi
            if want_jac:
                put_block(idx.x_rows, psi_cols, P.T)
            # copy stationarity: -psi_ij on its own block, P_{j,k}^T psi_ij on intermediate copies
            out[idx.pred_rows[j]] -= psi
            if want_jac:
                put(idx.pred_rows[j], psi_cols, -np.ones(len(psi_cols)))
            # policy constraint: x_{i->j} - pi_j(args)
            rows_c = idx.psi_rows[j]
            val = w[pred_cols] - w[xj_cols] + offsets[j]
            if want_jac:
                put(rows_c, pred_cols, np.ones(len(pred_cols)))
                put(rows_c, xj_cols, -np.ones(len(xj_cols)))
                extra.append((rows_c, sensitivities[j]))
            for k, Pk in pol.blocks.items():
                if k not in lay.sets.all_followers[i]:
                    continue  # actual leader strategies: argument minus base vanishes
                kpred = np.arange(lay.pred[(i, k)].start, lay.pred[(i, k)].stop)
                kx = np.arange(lay.x[k].start, lay.x[k].stop)
                val = val - Pk @ (w[kpred] - w[kx])
                out[idx.pred_rows[k]] += Pk.T @ psi
                if want_jac:
                    put_block(rows_c, kpred, -Pk)
                    put_block(rows_c, kx, Pk)
                    put_block(idx.pred_rows[k], psi_cols, Pk.T)
            out[rows_c] = val

        if not want_jac:
            return out, None
        rows = np.concatenate(r_idx) if r_idx else np.zeros(0, dtype=np.intp)
        cols = np.concatenate(c_idx) if c_idx else np.zeros(0, dtype=np.intp)
        vals = np.concatenate(v_idx) if v_idx else np.zeros(0)
        jac = sp.csr_matrix((vals, (rows, cols)), shape=(idx.size, self.size))
        for rows_c, S in extra:
            pad = sp.csr_matrix(
                (np.ones(len(rows_c)), (rows_c, np.arange(len(rows_c)))), shape=(idx.size, len(rows_c))
            )
            jac = jac + pad @ S
        jac.sum_duplicates()
        return out, jac.tocsr()

    def _linearize(self, j: int, w: np.ndarray, jac: sp.csr_matrix) -> PolicyLinearization:
        lay = self.layout
        idx = self.index[j]
        ys = lay.robot[j]
        M = jac[:, ys.start: ys.stop].toarray()
        leaders = idx.leaders
        lcols = np.concatenate([idx.leader_cols[l] for l in leaders])
        A = jac[:, lcols].toarray()
        regularized = False
        lu, piv, cond, pivot = _factor(M)
        if cond > self.condition_limit:
            if not self.regularize:
                raise SingularPolicySystem(j, cond, w.copy())
            primal = np.concatenate([idx.x_rows] + [idx.pred_rows[k] for k in idx.followers])
            M = M.copy()
            M[primal, primal] += self.mu
            lu, piv, cond, pivot = _factor(M)
            regularized = True
            if cond > self.condition_limit:
                raise SingularPolicySystem(j, cond, w.copy())
        E = np.zeros((idx.size, idx.n))
        E[idx.x_rows, np.arange(idx.n)] = 1.0
        Z = la.lu_solve((lu, piv), E, trans=1)
        P_all = -(Z.T @ A)
        blocks = {}
        off = 0
        for l in leaders:
            nl = lay.dims[l]
            blocks[l] = P_all[:, off: off + nl]
            off += nl
        return PolicyLinearization(
            robot=j,
            base_point=w[ys].copy(),
            base_leaders={l: w[lay.x[l]].copy() for l in leaders},
            base_strategy=w[lay.x[j]].copy(),
            offset=np.zeros(idx.n),  # set by the caller from the live rows
            blocks=blocks,
            selector=Z,
            condition=cond,
            min_pivot=pivot,
            regularized=regularized,
        )


def _factor(M: np.ndarray):
    """Pivoted LU with a 1-norm condition estimate and the smallest pivot magnitude."""
    if not np.all(np.isfinite(M)):
        return None, None, np.inf, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(M, check_finite=False)
    pivot = float(np.min(np.abs(np.diag(lu)))) if M.size else np.inf
    if pivot == 0.0:
        return lu, piv, np.inf, 0.0
    anorm = np.linalg.norm(M, 1)
    rcond, info = la.lapack.dgecon(lu, anorm, norm="1")
    cond = np.inf if rcond <= 0.0 else 1.0 / rcond
    return lu, piv, cond, pivot


def assemble(game: MixedHierarchyGame, w: np.ndarray, jacobian: bool = True, regularize: bool = False) -> KKTEvaluation:
    """Evaluate ``F(w)`` and its quasi-policy Jacobian with policies rebuilt at ``w``."""
    return KKTSystem(game, regularize=regularize).evaluate(w, jacobian=jacobian)


def frozen_residual(game: MixedHierarchyGame, w: np.ndarray, policies: Mapping[int, PolicyLinearization]) -> np.ndarray:
    """``F`` with the policy matrices of ``policies`` held fixed; offsets stay live."""
    return KKTSystem(game).frozen_residual(w, policies)


def linearize_policy(game: MixedHierarchyGame, j: int, w: np.ndarray, regularize: bool = False) -> PolicyLinearization:
    """Affine best response of follower ``j`` at ``w`` (its own followers are linearized first)."""
    if not game.sets.has_leader(j):
        raise ValueError(f"robot {j} has no leader, so it has no policy")
    ev = assemble(game, w, jacobian=True, regularize=regularize)
    return ev.policies[j]


def build_leaf_kkt(game: MixedHierarchyGame, i: int, w: np.ndarray) -> np.ndarray:
    """Rows ``[grad_x (f_i - lam^T g_i); g_i]`` of a robot without followers."""
    if game.layout.followers[i]:
        raise ValueError(f"robot {i} has followers; use build_nonleaf_kkt")
    system = KKTSystem(game)
    val, _ = system._robot_rows(i, np.asarray(w, dtype=float), {}, {}, {}, {}, False)
    return val


def build_nonleaf_kkt(
    game: MixedHierarchyGame, i: int, w: np.ndarray, policies: Mapping[int, PolicyLinearization] | None = None
) -> np.ndarray:
    """Rows of robot ``i``: own and copy stationarity, policy constraints, own constraints.

    Without ``policies`` the followers' policies are rebuilt at ``w``.
    """
    system = KKTSystem(game)
    ev = system.evaluate(w, jacobian=False) if policies is None else system.evaluate_frozen(w, policies, jacobian=False)
    return ev.residual[game.layout.robot[i]]


def consensus_gap(layout: VariableLayout, w: np.ndarray) -> float:
    """Largest ``||x_{i->j} - x_j||_inf`` over all leader/follower pairs (0 without followers)."""
    w = np.asarray(w)
    gap = 0.0
    for (i, j), s in layout.pred.items():
        if s.stop > s.start:
            gap = max(gap, float(np.max(np.abs(w[s] - w[layout.x[j]]))))
    return gap


DIAGNOSTIC_COLUMNS = ("iter", "residual_norm", "step_size", "consensus_gap", "min_pivot")


def write_diagnostic_csv(path, rows: Iterable[Mapping], columns: Iterable[str] = DIAGNOSTIC_COLUMNS) -> None:
    """Per-iteration diagnostics, one header row, values written with ``repr`` precision."""
    columns = list(columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
