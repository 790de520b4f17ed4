"""Global minimization of the regularized distortion objective.

The mesh objective is the quadrature sum of squared pointwise
distortion over all elements,

    F(x) = sum_E sum_q w_q |det G| N0(x; xi_q)**2,

where ``G`` is the frame of the equilateral reference simplex, so each
term integrates over the reference element.  For an ideal mesh
``N0 = 1`` everywhere and ``F`` equals the total reference volume,
which is also its global lower bound; any non-positive jacobian
determinant makes ``F`` infinite.  Node positions are advanced with a
matrix-free Newton iteration:

* analytic gradient of ``F`` with respect to the free coordinates,
  including the chain-rule coupling through a spatially varying
  metric,
* Hessian-vector products by central differencing of that gradient,
* truncated preconditioned conjugate gradients with a
  negative-curvature exit, preconditioned by a Jacobi diagonal that is
  assembled exactly from graph-colored difference probes,
* a backtracking line search that only accepts finite-to-finite steps
  satisfying an Armijo decrease, so the iterates are monotone and an
  initially valid mesh can never leave the valid set.

Constrained coordinates (fixed nodes and the frozen axes of sliding
nodes) are excluded from the unknown vector and are therefore
preserved bit for bit.
"""

import time
from dataclasses import dataclass, field as _field

import numpy as np

from . import distortion as dt
from . import simplex as sx
from .exceptions import (ConfigurationError, InvalidMeshError,
                         OutOfDomainError)

__all__ = [
    "OptimizerConfig",
    "OptimizeResult",
    "ValidityReport",
    "objective",
    "objective_and_gradient",
    "gradient",
    "hess_vec",
    "hessian_diagonal",
    "optimize",
    "verify_validity",
]

_ARMIJO_C1 = 1e-4
_FD_SCALE = 1e-5


@dataclass(frozen=True)
class OptimizerConfig:
    """Termination and discretization knobs for :func:`optimize`.

    Parameters
    ----------
    rms_tol : float
        Stop when the root-mean-square of the free-coordinate gradient
        falls to this value or below.
    step_tol : float
        Stop when the accepted (or smallest attempted) step has
        root-mean-square displacement at or below this value.
    max_newton_iters : int
        Maximum number of outer Newton iterations.
    max_pcg_iters : int
        Cap on conjugate-gradient iterations per Newton solve.
    pcg_rel_tol : float
        Relative residual reduction requested from the inner solve.
    n_1d : int or None
        Quadrature points per direction; ``None`` selects ``3 * degree``.
    objective : str
        ``"size-shape"`` (default) or ``"shape"``.
    """

    rms_tol: float = 1e-4
    step_tol: float = 1e-4
    max_newton_iters: int = 200
    max_pcg_iters: int = 200
    pcg_rel_tol: float = 1e-2
    n_1d: int | None = None
    objective: str = "size-shape"

    def __post_init__(self):
        if self.rms_tol <= 0.0 or self.step_tol <= 0.0:
            raise ConfigurationError("tolerances must be positive")
        if self.max_newton_iters < 0:
            raise ConfigurationError("max_newton_iters must be >= 0")
        if self.max_pcg_iters < 1:
            raise ConfigurationError("max_pcg_iters must be >= 1")
        if self.pcg_rel_tol <= 0.0:
            raise ConfigurationError("pcg_rel_tol must be positive")
        if self.objective not in dt.OBJECTIVE_KINDS:
            raise ConfigurationError(
                f"unknown objective kind {self.objective!r}")
        if self.n_1d is not None and self.n_1d < 1:
            raise ConfigurationError("n_1d must be >= 1")


@dataclass
class OptimizeResult:
    """Outcome of :func:`optimize`.

    ``trace`` holds one row per visited iterate with keys
    ``iteration``, ``objective``, ``grad_rms``, ``step`` and
    ``wallclock_ms``; the ``step`` entry is the displacement RMS of the
    move that produced the row's iterate (zero for the initial row).
    ``final_step`` is the displacement RMS at termination: the last
    accepted move, or the size of the remaining candidate step when the
    run stopped because steps shrank to the tolerance without a new
    iterate being accepted.
    """

    mesh: object
    converged: bool
    reason: str
    n_iterations: int
    trace: list = _field(default_factory=list)
    final_step: float = 0.0

    @property
    def objective(self) -> float:
        return self.trace[-1]["objective"]

    @property
    def grad_rms(self) -> float:
        return self.trace[-1]["grad_rms"]


@dataclass(frozen=True)
class ValidityReport:
    """Sign check of the signed density on a dense sample set.

    Samples combine the degree ``n_1d`` lattice (element corners and
    edges included) with the interior quadrature points of the same
    order.  ``min_sigma`` holds the per-element minimum of the signed
    density over the samples.  The metric factor of the density is
    strictly positive, so the invalid list is the same with or without
    a metric field: an element is invalid exactly where ``det(Dphi)``
    is non-positive.
    """

    n_samples: int
    min_sigma: np.ndarray
    invalid_elements: tuple

    @property
    def ok(self) -> bool:
        return not self.invalid_elements


def _rms(v) -> float:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(v * v)))


def _cofactor(jac):
    """Cofactor matrices of a (..., d, d) stack, d in {1, 2, 3}."""
    d = jac.shape[-1]
    out = np.empty_like(jac)
    if d == 1:
        out[..., 0, 0] = 1.0
        return out
    if d == 2:
        out[..., 0, 0] = jac[..., 1, 1]
        out[..., 0, 1] = -jac[..., 1, 0]
        out[..., 1, 0] = -jac[..., 0, 1]
        out[..., 1, 1] = jac[..., 0, 0]
        return out
    for r in range(3):
        r1, r2 = [i for i in range(3) if i != r]
        for c in range(3):
            c1, c2 = [i for i in range(3) if i != c]
            minor = (jac[..., r1, c1] * jac[..., r2, c2]
                     - jac[..., r1, c2] * jac[..., r2, c1])
            out[..., r, c] = minor if (r + c) % 2 == 0 else -minor
    return out


class _IdentityPreconditioner:
    def apply(self, r):
        return r.copy()


class _BlockJacobi:
    """Per-node inverse of the symmetrized Hessian diagonal blocks.

    Nodes are batched by their number of free axes so the inversion and
    the application are vectorized eigendecompositions.  Blocks are
    floored to positive definite: non-positive eigenvalues are raised
    to a small fraction of the block's largest one, and fully
    non-positive blocks fall back to the identity.
    """

    def __init__(self, blocks, node_of, axis_of, dof_pos, n_free):
        by_width = {}
        for node in np.unique(node_of):
            rows = dof_pos[node]
            axes = np.flatnonzero(rows >= 0)
            by_width.setdefault(axes.size, []).append((node, axes))
        self._groups = []
        for width, entries in by_width.items():
            idx = np.array([dof_pos[node][axes] for node, axes in entries])
            sub = np.array([blocks[node][np.ix_(axes, axes)]
                            for node, axes in entries])
            sub = 0.5 * (sub + np.swapaxes(sub, 1, 2))
            w, v = np.linalg.eigh(sub)
            w_max = w[:, -1]
            usable = w_max > 0.0
            floor = np.where(usable, 1e-8 * np.abs(w_max), 1.0)
            w = np.maximum(w, floor[:, None])
            inv = np.einsum("mik,mk,mjk->mij", v, 1.0 / w, v)
            inv[~usable] = np.eye(width)
            self._groups.append((idx, inv))

    def apply(self, r):
        out = np.empty_like(r)
        for idx, inv in self._groups:
            out[idx] = np.einsum("mij,mj->mi", inv, r[idx])
        return out


class _Workspace:
    """Mutable evaluation state bound to one mesh instance.

    Holds the tables that do not change while nodes move: basis values
    and reference-frame gradients at the quadrature points, the free
    coordinate mask, and the node coloring used for diagonal probes.
    ``set_x`` writes a free-coordinate vector back into the bound mesh.
    """

    def __init__(self, mesh, field, config: OptimizerConfig):
        self.mesh = mesh
        self.field = field
        self.config = config
        self.dim = mesh.dim
        self.kind = config.objective
        n_1d = config.n_1d if config.n_1d is not None else 3 * mesh.degree
        self.rule = sx.quadrature(mesh.dim, max(n_1d, 1))
        basis = sx.lagrange_basis(mesh.dim, mesh.degree)
        self.shape = basis.eval(self.rule.points)
        self.dshape = basis.grad(self.rule.points)
        frame = sx.equilateral_jacobian(mesh.dim)
        self.ginv = frame.inverse
        self.det_ginv = float(np.linalg.det(frame.inverse))
        self.det_frame = abs(float(frame.det))
        self.gtab = self.dshape @ self.ginv
        self.mask = mesh.free_mask()
        lo, hi = mesh.bounding_box()
        extent = float(np.linalg.norm(hi - lo))
        self.fd_step = _FD_SCALE * (extent if extent > 0.0 else 1.0)
        self._groups = None
        flat = np.flatnonzero(self.mask.ravel())
        self.node_of = flat // self.dim
        self.axis_of = flat % self.dim
        self.dof_pos = np.full((mesh.n_nodes, self.dim), -1, dtype=int)
        self.dof_pos[self.node_of, self.axis_of] = np.arange(flat.size)
        order = max(3 * mesh.degree, 1)
        lattice = sx.simplex_multiindices(mesh.dim, order) / float(order)
        check_points = np.vstack([lattice, sx.quadrature(mesh.dim,
                                                         order).points])
        self.check_dshape = basis.grad(check_points)

    def densely_valid(self) -> bool:
        """Jacobian positivity on the lattice-plus-quadrature sample set.

        The objective's quadrature points are interior, so an element
        can fold near a corner or an edge without the objective
        noticing; accepted line-search iterates are additionally held
        to this denser criterion.
        """
        jac = np.einsum("end,qnk->eqdk", self.mesh.element_coords(),
                        self.check_dshape)
        return bool(np.all(np.linalg.det(jac) > 0.0))

    def get_x(self) -> np.ndarray:
        return self.mesh.nodes[self.mask]

    def set_x(self, x) -> None:
        self.mesh.nodes[self.mask] = x

    def evaluate(self, need_grad: bool):
        """Objective and, optionally, its free-coordinate gradient.

        Returns ``(F, g)``; ``F`` is ``inf`` and ``g`` is ``None``
        whenever any quadrature sample has a non-positive signed
        density or the metric cannot be evaluated.
        """
        mesh = self.mesh
        d = self.dim
        coords = mesh.element_coords()
        jac = np.einsum("end,qnk->eqdk", coords, self.dshape)
        a = jac @ self.ginv
        phys = np.einsum("end,qn->eqd", coords, self.shape)
        n_e, n_q = phys.shape[:2]
        try:
            if need_grad:
                m, dm = self.field.eval_with_grad_many(
                    phys.reshape(-1, d), clamp=True)
                dm = dm.reshape(n_e, n_q, d, d, d)
            else:
                m = self.field.eval_many(phys.reshape(-1, d), clamp=True)
                dm = None
        except OutOfDomainError:
            return np.inf, None
        m = m.reshape(n_e, n_q, d, d)

        det_m = np.linalg.det(m)
        sqrt_det_m = np.sqrt(det_m)
        sigma = np.linalg.det(a) * sqrt_det_m
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0.0):
            return np.inf, None

        s2 = np.einsum("eqac,eqab,eqbc->eq", a, m, a)
        if self.kind == "size-shape":
            u = 0.5 * (1.0 + sigma ** -2)
            vfac = u ** (2.0 / d)
            dvds = -(2.0 / d) * u ** (2.0 / d - 1.0) * sigma ** -3
        else:
            vfac = sigma ** (-2.0 / d)
            dvds = -(2.0 / d) * sigma ** (-2.0 / d - 1.0)
        n0 = (s2 / d) * vfac
        value = self.det_frame * float(
            np.einsum("q,eq->", self.rule.weights, n0 * n0))
        if not need_grad:
            return value, None

        # dS^2: geometric part through A = J Ginv, plus the coupling
        # through M evaluated at the moving physical point.
        ma = m @ a
        ds2 = 2.0 * np.einsum("eqac,qic->eqia", ma, self.gtab)
        has_dm = dm is not None and bool(np.any(dm))
        if has_dm:
            quad_form = np.einsum("eqrc,eqars,eqsc->eqa", a, dm, a,
                                  optimize=True)
            ds2 += np.einsum("qi,eqa->eqia", self.shape, quad_form)

        # dsigma: cofactor rule for det(J), log-derivative of
        # sqrt(det M) for the metric part.
        cof = _cofactor(jac)
        dsig = self.det_ginv * np.einsum(
            "eq,eqac,qic->eqia", sqrt_det_m, cof, self.dshape,
            optimize=True)
        if has_dm:
            minv = np.linalg.inv(m)
            trm = np.einsum("eqrs,eqasr->eqa", minv, dm, optimize=True)
            dsig += 0.5 * np.einsum("eq,eqa,qi->eqia", sigma, trm,
                                    self.shape, optimize=True)

        dn0 = ((vfac / d)[..., None, None] * ds2
               + ((s2 / d) * dvds)[..., None, None] * dsig)
        local = self.det_frame * np.einsum(
            "q,eq,eqia->eia", self.rule.weights, 2.0 * n0, dn0,
            optimize=True)
        grad_nodes = np.zeros((mesh.n_nodes, d))
        np.add.at(grad_nodes, mesh.elements, local)
        return value, grad_nodes[self.mask]

    def hess_vec_at(self, x, v):
        """Central-difference Hessian action on ``v`` at state ``x``.

        The probe length shrinks until both displaced states are valid;
        returns ``None`` if no valid probe length is found.
        """
        v = np.asarray(v, dtype=float)
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return np.zeros_like(x)
        h = self.fd_step / nv
        try:
            for _ in range(12):
                self.set_x(x + h * v)
                _, g_plus = self.evaluate(True)
                if g_plus is not None:
                    self.set_x(x - h * v)
                    _, g_minus = self.evaluate(True)
                    if g_minus is not None:
                        return (g_plus - g_minus) / (2.0 * h)
                h *= 0.5
        finally:
            self.set_x(x)
        return None

    def dof_groups(self):
        """Free-coordinate groups safe to probe together.

        Two coordinates have a non-zero Hessian cross term only when
        their nodes share an element, so a greedy node coloring of the
        element-sharing graph, split further by coordinate axis, makes
        the diagonal extraction from each probe exact.
        """
        if self._groups is None:
            mesh = self.mesh
            neighbors = [set() for _ in range(mesh.n_nodes)]
            for row in mesh.elements:
                row = [int(i) for i in row]
                for i in row:
                    neighbors[i].update(row)
            color = np.full(mesh.n_nodes, -1, dtype=int)
            for node in range(mesh.n_nodes):
                used = {color[nb] for nb in neighbors[node]
                        if color[nb] >= 0}
                c = 0
                while c in used:
                    c += 1
                color[node] = c
            flat = np.flatnonzero(self.mask.ravel())
            groups = []
            if flat.size:
                key = color[flat // self.dim] * self.dim + flat % self.dim
                for k in range(int(key.max()) + 1):
                    members = np.flatnonzero(key == k)
                    if members.size:
                        groups.append(members)
            self._groups = groups
        return self._groups

    def jacobi_diagonal(self, x):
        """Hessian diagonal from colored probes, floored to positive."""
        diag = np.zeros(x.size)
        for group in self.dof_groups():
            probe = np.zeros(x.size)
            probe[group] = 1.0
            hv = self.hess_vec_at(x, probe)
            if hv is None:
                return np.ones(x.size)
            diag[group] = hv[group]
        positive = diag > 0.0
        if not positive.any():
            return np.ones(x.size)
        fill = float(np.median(diag[positive]))
        return np.where(positive, diag, fill)

    def build_preconditioner(self, x):
        """Nodal block-Jacobi preconditioner from the colored probes.

        A probe along one axis of a color class also reveals, for every
        probed node, the Hessian couplings to that node's other axes
        (same-color nodes share no element, so their contributions
        vanish).  The nodal blocks are symmetrized and eigenvalue
        floored so the preconditioner stays positive definite near
        indefinite or wall-adjacent states.
        """
        n = x.size
        blocks = np.zeros((self.mesh.n_nodes, self.dim, self.dim))
        for group in self.dof_groups():
            probe = np.zeros(n)
            probe[group] = 1.0
            hv = self.hess_vec_at(x, probe)
            if hv is None:
                return _IdentityPreconditioner()
            for j in group:
                node = self.node_of[j]
                axis = self.axis_of[j]
                rows = self.dof_pos[node]
                for b in range(self.dim):
                    if rows[b] >= 0:
                        blocks[node, b, axis] = hv[rows[b]]
        return _BlockJacobi(blocks, self.node_of, self.axis_of,
                            self.dof_pos, n)

    def newton_direction(self, x, g, precond, radius):
        """Truncated PCG solve of ``H p = -g``, capped at ``radius``.

        Negative curvature and trust-boundary crossings both exit to
        the boundary point along the current search direction, so the
        returned step never exceeds the radius even when the Hessian is
        indefinite or nearly singular.
        """
        p = np.zeros_like(x)
        r = -g
        z = precond.apply(r)
        direction = z.copy()
        rz = float(r @ z)
        tol = self.config.pcg_rel_tol * float(np.linalg.norm(r))

        def to_boundary(p, direction):
            dd = float(direction @ direction)
            if dd == 0.0:
                return p
            pd = float(p @ direction)
            pp = float(p @ p)
            disc = max(pd * pd - dd * (pp - radius * radius), 0.0)
            tau = (-pd + np.sqrt(disc)) / dd
            return p + tau * direction

        for k in range(self.config.max_pcg_iters):
            hd = self.hess_vec_at(x, direction)
            if hd is None:
                break
            curv = float(direction @ hd)
            if curv <= 0.0:
                p = to_boundary(p, direction) if k > 0 else \
                    to_boundary(np.zeros_like(x), direction)
                break
            alpha = rz / curv
            p_next = p + alpha * direction
            if float(np.linalg.norm(p_next)) >= radius:
                p = to_boundary(p, direction)
                break
            p = p_next
            r = r - alpha * hd
            if float(np.linalg.norm(r)) <= tol:
                break
            z = precond.apply(r)
            rz_next = float(r @ z)
            direction = z + (rz_next / rz) * direction
            rz = rz_next
        if not np.all(np.isfinite(p)) or float(g @ p) >= 0.0:
            p = -precond.apply(g)
            norm = float(np.linalg.norm(p))
            if norm > radius:
                p *= radius / norm
        return p


def objective(mesh, field, config: OptimizerConfig | None = None) -> float:
    """Distortion objective ``F`` of a mesh; ``inf`` when invalid."""
    ws = _Workspace(mesh, field, config or OptimizerConfig())
    return ws.evaluate(False)[0]


def objective_and_gradient(mesh, field,
                           config: OptimizerConfig | None = None):
    """Objective and free-coordinate gradient; gradient is ``None``
    when the mesh is invalid."""
    ws = _Workspace(mesh, field, config or OptimizerConfig())
    return ws.evaluate(True)


def gradient(mesh, field, config: OptimizerConfig | None = None):
    """Analytic gradient over free coordinates, ordered like
    ``mesh.nodes[mesh.free_mask()]``.

    Raises
    ------
    InvalidMeshError
        If the objective is infinite at the given state.
    """
    _, g = objective_and_gradient(mesh, field, config)
    if g is None:
        raise InvalidMeshError("gradient undefined on an invalid mesh")
    return g


def hess_vec(mesh, field, v, config: OptimizerConfig | None = None):
    """Hessian-vector product by central differencing of the gradient."""
    ws = _Workspace(mesh.copy(), field, config or OptimizerConfig())
    hv = ws.hess_vec_at(ws.get_x(), v)
    if hv is None:
        raise InvalidMeshError(
            "curvature probe failed: state is invalid or touches "
            "invalidity in every probe direction")
    return hv


def hessian_diagonal(mesh, field, config: OptimizerConfig | None = None):
    """Jacobi diagonal of the objective Hessian over free coordinates."""
    ws = _Workspace(mesh.copy(), field, config or OptimizerConfig())
    return ws.jacobi_diagonal(ws.get_x())


def optimize(mesh, field, config: OptimizerConfig | None = None
             ) -> OptimizeResult:
    """Minimize the distortion objective over the free coordinates.

    The input mesh is left untouched; the result carries an optimized
    copy.  Accepted iterates have strictly decreasing objective values
    and every intermediate state is valid, so a valid input can never
    be driven into inversion.

    Parameters
    ----------
    mesh : HighOrderMesh
        Initial configuration; must be valid at the objective
        quadrature points.
    field : metric field
        Target metric, evaluated with clamping so trial states slightly
        outside a discrete field's background keep a finite objective.
    config : OptimizerConfig, optional

    Returns
    -------
    OptimizeResult

    Raises
    ------
    InvalidMeshError
        If the initial mesh already has non-positive jacobian
        determinants; the offending element indices are attached.
    """
    config = config or OptimizerConfig()
    work = mesh.copy()
    ws = _Workspace(work, field, config)

    _, sigma, _ = dt.pointwise_distortion_samples(
        work, field, ws.rule, kind=config.objective, clamp=True)
    bad = np.flatnonzero(~np.all(sigma > 0.0, axis=1))
    if bad.size:
        raise InvalidMeshError(
            "initial mesh has non-positive jacobian determinants at "
            "quadrature points", elements=[int(b) for b in bad])

    t_start = time.perf_counter()
    trace = []
    x = ws.get_x()
    n_free = max(x.size, 1)
    lo, hi = work.bounding_box()
    extent = float(np.linalg.norm(hi - lo)) or 1.0
    radius = 0.5 * extent
    radius_floor = config.step_tol * np.sqrt(n_free)
    radius_cap = 10.0 * extent

    def record(value, grad_rms, step, iteration):
        trace.append({
            "iteration": iteration,
            "objective": value,
            "grad_rms": grad_rms,
            "step": step,
            "wallclock_ms": (time.perf_counter() - t_start) * 1e3,
        })

    value, grad = ws.evaluate(True)
    if grad is None:
        raise InvalidMeshError(
            "initial mesh has an infinite objective")
    grad_rms = _rms(grad)
    record(value, grad_rms, 0.0, 0)

    iterations = 0
    converged = False
    reason = "max-iterations"
    final_step = 0.0
    precond = None
    if grad_rms <= config.rms_tol:
        converged = True
        reason = "gradient"
    else:
        while iterations < config.max_newton_iters:
            if precond is None:
                precond = ws.build_preconditioner(x)
            p = ws.newton_direction(x, grad, precond, radius)
            p_norm = float(np.linalg.norm(p))
            p_rms = _rms(p)
            if p_rms <= config.step_tol:
                # The trust-region-limited Newton candidate has shrunk
                # to the step tolerance; no larger move remains to try.
                converged = True
                reason = "step"
                final_step = p_rms
                break
            slope = float(grad @ p)
            alpha = 1.0
            accepted = False
            while p_rms > 0.0 and alpha * p_rms > config.step_tol:
                ws.set_x(x + alpha * p)
                trial = ws.evaluate(False)[0]
                if (np.isfinite(trial)
                        and trial <= value + _ARMIJO_C1 * alpha * slope
                        and ws.densely_valid()):
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # No acceptable step at this radius; shrink and retry
                # with the same gradient, or stop once the radius
                # itself is at the step tolerance.
                ws.set_x(x)
                radius *= 0.25
                if radius <= radius_floor:
                    converged = True
                    reason = "step"
                    final_step = alpha * p_rms
                    break
                continue

            x = x + alpha * p
            ws.set_x(x)
            precond = None
            iterations += 1
            step_rms = alpha * p_rms
            final_step = step_rms
            value, grad = ws.evaluate(True)
            if grad is None:
                raise InvalidMeshError(
                    "objective became invalid at an accepted iterate")
            grad_rms = _rms(grad)
            record(value, grad_rms, step_rms, iterations)

            if alpha == 1.0 and p_norm >= 0.8 * radius:
                radius = min(2.0 * radius, radius_cap)
            elif alpha < 1.0:
                radius = max(2.0 * alpha * p_norm, 0.25 * radius,
                             radius_floor)
            if grad_rms <= config.rms_tol:
                converged = True
                reason = "gradient"
                break
            if step_rms <= config.step_tol:
                converged = True
                reason = "step"
                break

    return OptimizeResult(mesh=work, converged=converged, reason=reason,
                          n_iterations=iterations, trace=trace,
                          final_step=final_step)


def optimize_continuation(mesh, field, config: OptimizerConfig | None = None,
                          exponents=(0.25, 0.5, 0.75, 1.0)
                          ) -> OptimizeResult:
    """Minimize against a ramp of metric powers ending at the target.

    Descent from a mesh far from the adapted configuration can jam
    against the validity barrier when the target is stiff: nodes that
    must migrate through compressed regions are blocked by the elements
    ahead of them.  Ramping the metric through ``M**t`` (identity at
    ``t = 0``) keeps every stage mildly conditioned and lets the mesh
    follow the deformation gradually.  Each stage runs the plain
    minimizer; the returned result is the final full-metric stage, so
    its trace satisfies the usual monotonicity contract.
    """
    from .metric import MetricPower

    exponents = tuple(exponents)
    if not exponents or exponents[-1] != 1.0:
        raise ConfigurationError("exponent ramp must end at 1.0")
    work = mesh
    result = None
    for t in exponents:
        stage_field = field if t == 1.0 else MetricPower(field, t)
        result = optimize(work, stage_field, config)
        work = result.mesh
    return result


def verify_validity(mesh, field=None,
                    n_1d: int | None = None) -> ValidityReport:
    """Check signed-density positivity on a dense per-element sample set.

    Samples are the nodes of the degree ``n_1d`` lattice (closed, so
    corners and edges are covered) together with the interior points of
    the matching quadrature rule; the default order is ``3 * degree``.
    With ``field`` given the reported minima are of the full signed
    density; without it the metric factor is taken as one.  Either way
    the invalid list is identical, because the metric factor is
    strictly positive.
    """
    order = n_1d if n_1d is not None else 3 * mesh.degree
    order = max(int(order), 1)
    lattice = sx.simplex_multiindices(mesh.dim, order) / float(order)
    points = np.vstack([lattice, sx.quadrature(mesh.dim, order).points])
    basis = sx.lagrange_basis(mesh.dim, mesh.degree)
    coords = mesh.element_coords()
    jac = np.einsum("end,qnk->eqdk", coords, basis.grad(points))
    sigma = np.linalg.det(jac) * abs(
        float(np.linalg.det(sx.equilateral_jacobian(mesh.dim).inverse)))
    if field is not None:
        phys = np.einsum("end,qn->eqd", coords, basis.eval(points))
        m = field.eval_many(phys.reshape(-1, mesh.dim), clamp=True)
        det_m = np.linalg.det(m.reshape(sigma.shape + (mesh.dim, mesh.dim)))
        sigma = sigma * np.sqrt(det_m)
    min_sigma = sigma.min(axis=1)
    invalid = tuple(int(e) for e in np.flatnonzero(min_sigma <= 0.0))
    return ValidityReport(n_samples=len(points), min_sigma=min_sigma,
                          invalid_elements=invalid)
