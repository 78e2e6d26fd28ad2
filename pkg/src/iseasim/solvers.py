"""Transceiver power-allocation solvers.

Four designs are provided, matching the two objectives (aggregation MSE,
minimum received inter-class Mahalanobis distance) under the two channel
structures (quasi-static TDM slot, frequency-selective FDM subcarriers):

* tdm_mse_optimal : threshold structure; weak devices transmit full power,
  strong devices invert the channel against a common receive scale.  The
  threshold is found by scanning every candidate prefix of the devices
  sorted by effective link strength u_k = h_k sqrt(P_k) / nu_k.
* tdm_md_optimal  : capped water-filling on c_k = h_k b_k with a common cap;
  segment stationary points tau_j = (sum u^2 + noise_eq) / (sum u) are
  compared exhaustively.  Requires homogeneous per-device estimate
  variances (the closed form does not extend; use brute_force_oracle).
* fdm_mse_dual    : dual decomposition; per-subcarrier scalar root for the
  receive power r_n by bisection, per-device multipliers by projected
  subgradient plus a monotone fixed-point polish.
* fdm_md_optimal  : same two-layer scheme on the auxiliary ratio z_n.

All quantities are real magnitudes.  `moments` fields hold the second
moments nu^2 of the transmitted estimates, `est_vars` the per-device
estimate variances sigma_hat^2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import TransceiverDesign
from .validation import ValidationError, as_matrix, as_vector, check_finite

# Fixed bisection brackets.  Using constant brackets and a constant
# iteration count keeps every root bit-identical no matter how instances
# are batched; 64 halvings of the log-domain bracket [1e-30, 1e30] pin
# roots to full float64 relative precision (well under the documented
# 200-iteration cap).
BISECT_ITERS = 64
LOG_LO = -30.0
LOG_HI = 30.0
TINY = 1e-300


@dataclass(frozen=True)
class TdmInstance:
    """Per-slot TDM problem data (the slot repeats across the frame).

    gains, budgets, moments (nu^2) and est_vars (sigma_hat^2) are length-K;
    noise_var may be zero; delta is the scalar discriminative prior of the
    transmitted feature element.
    """

    gains: np.ndarray
    budgets: np.ndarray
    moments: np.ndarray
    est_vars: np.ndarray
    noise_var: float
    delta: float = 0.0

    def __post_init__(self):
        gains = as_vector(self.gains, "gains")
        K = gains.shape[0]
        budgets = as_vector(self.budgets, "budgets", length=K)
        moments = as_vector(self.moments, "moments", length=K)
        est_vars = as_vector(self.est_vars, "est_vars", length=K)
        for name, arr in (("gains", gains), ("budgets", budgets),
                          ("moments", moments), ("est_vars", est_vars)):
            check_finite(arr, name)
            if np.any(arr <= 0):
                raise ValidationError(f"{name} must be strictly positive")
        if not np.isfinite(self.noise_var) or self.noise_var < 0:
            raise ValidationError(f"noise_var must be >= 0, got {self.noise_var}")
        if not np.isfinite(self.delta) or self.delta < 0:
            raise ValidationError(f"delta must be >= 0, got {self.delta}")
        for arr in (gains, budgets, moments, est_vars):
            arr.setflags(write=False)
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "budgets", budgets)
        object.__setattr__(self, "moments", moments)
        object.__setattr__(self, "est_vars", est_vars)
        object.__setattr__(self, "noise_var", float(self.noise_var))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def num_devices(self) -> int:
        return self.gains.shape[0]


@dataclass(frozen=True)
class FdmInstance:
    """FDM problem data: K devices across N subcarriers with one joint
    power constraint per device."""

    gains: np.ndarray
    budgets: np.ndarray
    moments: np.ndarray
    est_vars: np.ndarray
    noise_var: float
    delta: np.ndarray = None

    def __post_init__(self):
        gains = as_matrix(self.gains, "gains")
        K, N = gains.shape
        budgets = as_vector(self.budgets, "budgets", length=K)
        moments = as_matrix(self.moments, "moments", shape=(K, N))
        est_vars = as_matrix(self.est_vars, "est_vars", shape=(K, N))
        delta = self.delta
        delta = np.zeros(N) if delta is None else as_vector(delta, "delta", length=N)
        for name, arr in (("gains", gains), ("budgets", budgets),
                          ("moments", moments), ("est_vars", est_vars)):
            check_finite(arr, name)
            if np.any(arr <= 0):
                raise ValidationError(f"{name} must be strictly positive")
        check_finite(delta, "delta")
        if np.any(delta < 0):
            raise ValidationError("delta must be nonnegative")
        if not np.isfinite(self.noise_var) or self.noise_var <= 0:
            raise ValidationError(f"noise_var must be > 0, got {self.noise_var}")
        for arr in (gains, budgets, moments, est_vars, delta):
            arr.setflags(write=False)
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "budgets", budgets)
        object.__setattr__(self, "moments", moments)
        object.__setattr__(self, "est_vars", est_vars)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "noise_var", float(self.noise_var))

    @property
    def num_devices(self) -> int:
        return self.gains.shape[0]

    @property
    def num_subcarriers(self) -> int:
        return self.gains.shape[1]


@dataclass
class SolveReport:
    """Solver outcome: the design, its objective value, iteration count,
    and the KKT residual (max of relative power overuse, complementary
    slackness, stationarity of the recovered coefficients and of the
    scalar root equations)."""

    design: TransceiverDesign
    objective: float
    iterations: int
    kkt_residual: float
    converged: bool
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "converged": self.converged,
            "tx": self.design.tx.tolist(),
            "rx": self.design.rx.tolist(),
            "scheme": self.design.scheme,
            "extras": self.extras,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# shared objective helpers
# ---------------------------------------------------------------------------

def _arrays(inst):
    """Canonical (gains, budgets, moments, est_vars, noise, delta, scheme)
    view with 2-D per-subcarrier arrays for both instance kinds."""
    if isinstance(inst, TdmInstance):
        return (inst.gains[:, None], inst.budgets, inst.moments[:, None],
                inst.est_vars[:, None], inst.noise_var,
                np.array([inst.delta]), "tdm")
    if isinstance(inst, FdmInstance):
        return (inst.gains, inst.budgets, inst.moments, inst.est_vars,
                inst.noise_var, inst.delta, "fdm")
    raise ValidationError(f"unsupported instance type {type(inst).__name__}")


def rx_mse_optimal(inst, tx) -> np.ndarray:
    """Per-subcarrier receive coefficient minimizing the aggregation MSE
    for fixed transmit magnitudes:
    a_n = sum |h b| shat^2 / (sum |h b|^2 shat^2 + noise)."""
    g, _, _, sv, noise, _, _ = _arrays(inst)
    hb = g * np.asarray(tx, dtype=np.float64)
    num = np.sum(hb * sv, axis=0)
    den = np.sum(hb * hb * sv, axis=0) + noise
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def mse_min_over_rx(inst, tx) -> float:
    """Aggregation MSE of a transmit design under its MSE-optimal receive
    coefficients: sum_n [sum shat^2 - (sum hb shat^2)^2 /
    (sum (hb)^2 shat^2 + noise)]."""
    g, _, _, sv, noise, _, _ = _arrays(inst)
    hb = g * np.asarray(tx, dtype=np.float64)
    num = np.sum(hb * sv, axis=0) ** 2
    den = np.sum(hb * hb * sv, axis=0) + noise
    per_n = np.sum(sv, axis=0) - np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(np.sum(per_n))


def design_mse(inst, design: TransceiverDesign) -> float:
    """Aggregation MSE of a design at its own receive coefficients."""
    g, _, _, sv, noise, _, _ = _arrays(inst)
    misalign = design.rx[None, :] * g * design.tx - 1.0
    return float(np.sum(misalign * misalign * sv)
                 + np.sum(design.rx ** 2) * noise)


def design_md(inst, tx_or_design) -> float:
    """Total received minimum inter-class Mahalanobis distance
    sum_n delta_n (sum hb)^2 / (sum (hb)^2 shat^2 + noise); independent of
    the receive coefficients."""
    g, _, _, sv, noise, delta, _ = _arrays(inst)
    tx = tx_or_design.tx if isinstance(tx_or_design, TransceiverDesign) else tx_or_design
    hb = g * np.asarray(tx, dtype=np.float64)
    num = delta * np.sum(hb, axis=0) ** 2
    den = np.sum(hb * hb * sv, axis=0) + noise
    return float(np.sum(np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)))


def _make_design(inst, tx, rx) -> TransceiverDesign:
    _, budgets, moments, _, _, _, scheme = _arrays(inst)
    return TransceiverDesign(tx=np.asarray(tx, dtype=np.float64),
                             rx=np.asarray(rx, dtype=np.float64),
                             scheme=scheme, power_budgets=budgets,
                             moments=moments)


# ---------------------------------------------------------------------------
# TDM closed forms
# ---------------------------------------------------------------------------

def tdm_mse_optimal(inst: TdmInstance) -> SolveReport:
    """Threshold-structured MSE-optimal per-slot design.

    Every candidate threshold index is evaluated: the k weakest devices
    (by u_k = h sqrt(P)/nu) transmit full power, the rest invert against
    the candidate receive scale, and the candidate with the least realized
    MSE wins.  Inversion is clamped to the power box, so every candidate
    is feasible regardless of which ordering assumption holds.
    """
    h = inst.gains
    nu = np.sqrt(inst.moments)
    sv = inst.est_vars
    b_full = np.sqrt(inst.budgets) / nu
    u = h * b_full
    order = np.argsort(u, kind="stable")
    best = None
    for j in range(1, inst.num_devices + 1):
        prefix = order[:j]
        num = np.sum(h[prefix] * sv[prefix] * b_full[prefix])
        den = np.sum((h[prefix] * b_full[prefix]) ** 2 * sv[prefix]) + inst.noise_var
        if den <= 0 or num <= 0:
            continue
        a = num / den
        b = np.minimum(b_full, 1.0 / (a * h))
        mse = float(np.sum((a * h * b - 1.0) ** 2 * sv) + a * a * inst.noise_var)
        if best is None or mse < best[0]:
            best = (mse, a, b, j)
    mse, a, b, k_star = best
    design = _make_design(inst, b[:, None], [a])
    # a is a fixed point of the MSE-optimal receive rule at the returned b.
    a_opt = rx_mse_optimal(inst, b[:, None])[0]
    kkt = abs(a - a_opt) / max(a_opt, TINY)
    full_mask = b >= b_full * (1.0 - 1e-12)
    return SolveReport(
        design=design, objective=mse, iterations=inst.num_devices,
        kkt_residual=float(kkt), converged=bool(kkt <= 1e-6),
        extras={"threshold_index": int(k_star), "a_star": float(a),
                "order": order.tolist(), "full_power": full_mask.tolist()},
    )


def _tdm_md_cap_value(u_sorted, cap, noise_eq):
    c = np.minimum(u_sorted, cap)
    s1 = np.sum(c)
    return s1 * s1 / (np.sum(c * c) + noise_eq) if s1 > 0 else 0.0


def tdm_md_optimal(inst: TdmInstance) -> SolveReport:
    """Capped water-filling maximizing the per-slot received MD.

    Valid only when all devices share one estimate variance (the
    reformulation onto c_k = h_k b_k requires it); heterogeneous instances
    must go through brute_force_oracle.
    """
    if inst.delta <= 0:
        raise ValidationError("tdm_md_optimal requires delta > 0")
    sv = inst.est_vars
    spread = (sv.max() - sv.min()) / sv.max()
    if spread > 1e-9:
        raise ValidationError(
            "tdm_md_optimal requires homogeneous est_vars across devices "
            f"(relative spread {spread:.3g}); use brute_force_oracle for "
            "heterogeneous instances"
        )
    h = inst.gains
    nu = np.sqrt(inst.moments)
    b_full = np.sqrt(inst.budgets) / nu
    u = h * b_full
    order = np.argsort(u, kind="stable")
    us = u[order]
    noise_eq = inst.noise_var / sv[0]
    K = us.shape[0]
    best_val, best_tau = None, None
    for j in range(1, K + 1):
        a_j = np.sum(us[:j])
        b_j = np.sum(us[:j] ** 2)
        tau_j = (b_j + noise_eq) / a_j if a_j > 0 else us[j - 1]
        lo = us[j - 1]
        hi = us[j] if j < K else np.inf
        tau = min(max(tau_j, lo), hi) if np.isfinite(hi) else max(tau_j, lo)
        val = _tdm_md_cap_value(us, tau, noise_eq)
        # ties break toward the smaller cap
        if best_val is None or val > best_val or (val == best_val and tau < best_tau):
            best_val, best_tau = val, tau
    c = np.minimum(u, best_tau)
    b = c / h
    rx = rx_mse_optimal(inst, b[:, None])
    design = _make_design(inst, b[:, None], rx)
    objective = design_md(inst, design)
    # first-order certificate: nudging the cap must not improve the value
    kkt = 0.0
    for bump in (1.0 - 1e-7, 1.0 + 1e-7):
        gain = _tdm_md_cap_value(us, best_tau * bump, noise_eq) - best_val
        kkt = max(kkt, gain / max(best_val, TINY))
    return SolveReport(
        design=design, objective=objective, iterations=K,
        kkt_residual=float(max(kkt, 0.0)), converged=bool(max(kkt, 0.0) <= 1e-6),
        extras={"tau": float(best_tau), "order": order.tolist()},
    )


# ---------------------------------------------------------------------------
# FDM dual decomposition (batched internals)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualOptions:
    """Tolerances and budgets for the dual solvers.

    eps_lambda / eps_power give the stopping rule of the subgradient
    phase (max dual change, max relative power violation); the polish
    phase then runs a fixed number of alternating exact root solves so
    results do not depend on how instances are batched.
    """

    eps_lambda: float = 1e-6
    eps_power: float = 1e-4
    max_iters: int = 150
    step_scale: float = 0.1
    polish_sweeps: int = 120
    kkt_tol: float = 1e-6


def _bisect_fixed(f, shape):
    """Vectorized log-domain bisection with a fixed iteration count.

    f must be elementwise decreasing in its positive argument; returns the
    root of f = 0 inside [10**LOG_LO, 10**LOG_HI] (clamped to an endpoint
    when the root falls outside; callers mask nonexistent roots).
    """
    lo = np.full(shape, LOG_LO)
    hi = np.full(shape, LOG_HI)
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        pos = f(10.0 ** mid) > 0.0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 10.0 ** (0.5 * (lo + hi))


class _DualCore:
    """Batched dual-decomposition engine shared by the MSE and MD
    objectives.  Arrays: gains/moments/est_vars (B, K, N), budgets (B, K),
    noise (B,), delta (B, N)."""

    def __init__(self, gains, budgets, moments, est_vars, noise, delta=None):
        self.g = gains
        self.budgets = budgets
        self.mom = moments
        self.sv = est_vars
        self.noise = noise
        self.delta = delta
        self.B, self.K, self.N = gains.shape

    # -- per-subcarrier scalar roots ------------------------------------

    def solve_aux_mse(self, lam):
        """Root r_n of  sum_k lam nu^2 h^2 shat^4 / (r h^2 shat^2 +
        lam nu^2)^2 = noise;  r_n = 0 when the left side at zero already
        falls below the noise power.  A zero multiplier makes the left
        side diverge as r -> 0+, so any lam_k = 0 guarantees a root."""
        lam3 = lam[:, :, None]
        c1 = lam3 * self.mom * self.g ** 2 * self.sv ** 2
        d1 = self.g ** 2 * self.sv
        d2 = lam3 * self.mom
        noise = self.noise[:, None]

        def f(r):
            den = r[:, None, :] * d1 + d2
            terms = np.where(den > 0, c1 / np.where(den > 0, den, 1.0) ** 2, 0.0)
            return np.sum(terms, axis=1) - noise

        f0 = np.sum(np.where(d2 > 0, c1 / np.where(d2 > 0, d2, 1.0) ** 2, 0.0),
                    axis=1) - noise
        has_root = (f0 > 0) | np.any(lam == 0, axis=1)[:, None]
        root = _bisect_fixed(f, (self.B, self.N))
        return np.where(has_root, root, 0.0)

    def recover_b_mse(self, lam, r):
        a = np.sqrt(r)[:, None, :]
        num = a * self.g * self.sv
        den = a * a * self.g ** 2 * self.sv + lam[:, :, None] * self.mom
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    def solve_aux_md(self, lam):
        """Root (in z^2) of  sum_k lam h^2 nu^2 / (lam nu^2 + delta h^2
        shat^2 z^2)^2 = noise / delta  per subcarrier with delta > 0."""
        lam3 = lam[:, :, None]
        c1 = lam3 * self.g ** 2 * self.mom
        d2 = lam3 * self.mom
        d1 = self.delta[:, None, :] * self.g ** 2 * self.sv
        delta_pos = self.delta > 0
        rhs = np.where(delta_pos,
                       self.noise[:, None] / np.where(delta_pos, self.delta, 1.0),
                       np.inf)

        def f(y):
            den = d2 + d1 * y[:, None, :]
            terms = np.where(den > 0, c1 / np.where(den > 0, den, 1.0) ** 2, 0.0)
            return np.sum(terms, axis=1) - rhs

        f0 = np.sum(np.where(d2 > 0, c1 / np.where(d2 > 0, d2, 1.0) ** 2, 0.0),
                    axis=1) - rhs
        has_root = (f0 > 0) | np.any(lam == 0, axis=1)[:, None]
        root = _bisect_fixed(f, (self.B, self.N))
        return np.where(has_root & delta_pos, root, 0.0)

    def recover_b_md(self, lam, y):
        z = np.sqrt(y)[:, None, :]
        delta = self.delta[:, None, :]
        num = delta * self.g * z
        den = lam[:, :, None] * self.mom + delta * self.sv * self.g ** 2 * y[:, None, :]
        b = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        # keep a subcarrier only if its penalized value beats shutting it
        # off (the stationary point is not the inner argmax otherwise)
        hb = self.g * b
        gain = self.delta * np.sum(hb, axis=1) ** 2
        loss = np.sum(hb * hb * self.sv, axis=1) + self.noise[:, None]
        value = np.where(loss > 0, gain / np.where(loss > 0, loss, 1.0), 0.0) \
            - np.sum(lam[:, :, None] * self.mom * b * b, axis=1)
        return np.where((value > 0)[:, None, :], b, 0.0)

    # -- per-device multipliers ------------------------------------------

    def power_used(self, b):
        return np.sum(self.mom * b * b, axis=2)

    def _b_shape(self, c1, c2, lam):
        """Per-device constrained optimum b_kn = c1 / (c2 + lam nu^2),
        capped so transient unconstrained iterates cannot overflow when
        squared."""
        den = c2 + lam[:, :, None] * self.mom
        b = np.where(den > 0, c1 / np.where(den > 0, den, 1.0), 0.0)
        return np.minimum(b, 1e120)

    def _lambda_for(self, c1, c2):
        """Multiplier per device meeting its power budget with equality
        for the b-shape above (power use strictly decreases in the own
        multiplier); devices inside their budget at zero get zero."""

        def used_at(lam):
            return self.power_used(self._b_shape(c1, c2, lam))

        active = used_at(np.zeros((self.B, self.K))) > self.budgets

        def f(lam):
            return used_at(lam) - self.budgets

        root = _bisect_fixed(f, (self.B, self.K))
        return np.where(active, root, 0.0)

    # -- monotone primal refinements ---------------------------------------

    def rx_update(self, b):
        """MSE-minimizing receive scale for fixed transmit magnitudes."""
        hb = self.g * b
        num = np.sum(hb * self.sv, axis=1)
        den = np.sum(hb * hb * self.sv, axis=1) + self.noise[:, None]
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    def z_update(self, b):
        """Quadratic-transform auxiliary of the MD ratio."""
        hb = self.g * b
        num = np.sum(hb, axis=1)
        den = np.sum(hb * hb * self.sv, axis=1) + self.noise[:, None]
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    def _coeffs(self, kind, aux):
        a3 = aux[:, None, :]
        if kind == "mse":
            c1 = a3 * self.g * self.sv
            c2 = a3 * a3 * self.g ** 2 * self.sv
        else:
            d3 = self.delta[:, None, :]
            c1 = d3 * self.g * a3
            c2 = d3 * self.sv * self.g ** 2 * a3 * a3
        return c1, c2

    def objective(self, kind, b, rx=None):
        hb = self.g * b
        den = np.sum(hb * hb * self.sv, axis=1) + self.noise[:, None]
        safe = np.where(den > 0, den, 1.0)
        if kind == "mse":
            num = np.sum(hb * self.sv, axis=1) ** 2
            per = np.sum(self.sv, axis=1) - np.where(den > 0, num / safe, 0.0)
            return np.sum(per, axis=1)
        num = self.delta * np.sum(hb, axis=1) ** 2
        return np.sum(np.where(den > 0, num / safe, 0.0), axis=1)

    def _step(self, kind, aux):
        c1, c2 = self._coeffs(kind, aux)
        lam = self._lambda_for(c1, c2)
        b = self._b_shape(c1, c2, lam)
        return lam, b

    def polish(self, kind, b, sweeps):
        """Alternate the closed-form auxiliary update (receive scale for
        the MSE objective, quadratic-transform ratio for the MD objective)
        with the exact per-device power-constrained transmit update.  Both
        alternations move their objective monotonically, so the iteration
        cannot cycle; a fixed sweep count keeps results batch-invariant.

        Linearly convergent tails (subcarriers near the on/off boundary)
        are collapsed by periodic Aitken extrapolation of the auxiliary,
        accepted only when it does not worsen the objective.  Returns
        (lam, aux, b) with b exactly optimal for the returned aux and lam.
        """
        upd = self.rx_update if kind == "mse" else self.z_update
        better = np.less if kind == "mse" else np.greater
        aux = upd(b)
        aux_prev = aux
        for sweep in range(1, sweeps + 1):
            _, b = self._step(kind, aux)
            aux_next = upd(b)
            if sweep % 12 == 0:
                d1 = aux - aux_prev
                d2 = aux_next - aux
                num = np.sum(d2 * d1, axis=1)
                den = np.sum(d1 * d1, axis=1)
                rho = np.clip(np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0),
                              0.0, 0.999)
                aux_acc = np.maximum(aux_next + d2 * (rho / (1.0 - rho))[:, None], 0.0)
                _, b_acc = self._step(kind, aux_acc)
                take = better(self.objective(kind, b_acc),
                              self.objective(kind, b))
                aux_next = np.where(take[:, None], upd(b_acc), aux_next)
            aux_prev = aux
            aux = aux_next
        lam, b = self._step(kind, aux)
        return lam, aux, b

    # -- main loop --------------------------------------------------------

    def run(self, kind, opts: DualOptions, use_stop_rule: bool = True):
        """Projected-subgradient dual phase (per-subcarrier scalar roots,
        closed-form recovery) followed by a monotone primal refinement
        from two deterministic starting points; the better endpoint wins
        elementwise.  use_stop_rule=False disables the early-out so that
        batched instances cannot influence one another."""
        solve_aux = self.solve_aux_mse if kind == "mse" else self.solve_aux_md
        recover = self.recover_b_mse if kind == "mse" else self.recover_b_md

        lam = np.ones((self.B, self.K))
        iters = 0
        b_dual = None
        for t in range(1, opts.max_iters + 1):
            aux = solve_aux(lam)
            b_dual = recover(lam, aux)
            viol = (self.power_used(b_dual) - self.budgets) / self.budgets
            step = opts.step_scale / math.sqrt(t)
            new_lam = np.maximum(0.0, lam + step * np.clip(viol, -1.0, 1.0))
            moved = float(np.max(np.abs(new_lam - lam))) if lam.size else 0.0
            lam = new_lam
            iters = t
            if use_stop_rule and moved <= opts.eps_lambda \
                    and float(np.max(np.maximum(viol, 0.0))) <= opts.eps_power:
                break

        b_equal = np.sqrt(self.budgets[:, :, None] / (self.N * self.mom))
        candidates = [b_equal]
        if b_dual is not None:
            # scale the dual endpoint into the feasible set before refining
            used = self.power_used(b_dual)
            over = used > self.budgets
            scale = np.where(over, np.sqrt(self.budgets / np.maximum(used, TINY)), 1.0)
            candidates.append(b_dual * scale[:, :, None])

        best = None
        for b0 in candidates:
            lam_c, aux_c, b_c = self.polish(kind, b0, opts.polish_sweeps)
            val = self.objective(kind, b_c)
            if best is None:
                best = (lam_c, aux_c, b_c, val)
            else:
                lam_b, aux_b, b_b, val_b = best
                take = val < val_b if kind == "mse" else val > val_b
                best = (np.where(take[:, None], lam_c, lam_b),
                        np.where(take[:, None], aux_c, aux_b),
                        np.where(take[:, None, None], b_c, b_b),
                        np.where(take, val, val_b))
        lam, aux, b, _ = best

        # fold rounding dust back inside the budgets
        used = self.power_used(b)
        over = used > self.budgets
        scale = np.where(over, np.sqrt(self.budgets / np.maximum(used, TINY)), 1.0)
        b = b * scale[:, :, None]
        used = np.minimum(self.power_used(b), self.budgets)

        slack_rel = (self.budgets - used) / self.budgets
        overuse = np.max(np.maximum(-slack_rel, 0.0), axis=1)
        compl = np.max(lam / (1.0 + lam) * np.abs(slack_rel), axis=1)
        aux_new = (self.rx_update if kind == "mse" else self.z_update)(b)
        aux_scale = np.maximum(np.max(np.abs(aux_new), axis=1), TINY)
        aux_resid = np.max(np.abs(aux - aux_new), axis=1) / aux_scale
        kkt = np.maximum(np.maximum(overuse, compl), aux_resid)
        return lam, aux, b, kkt, iters


def _stack(inst: FdmInstance):
    return (inst.gains[None], inst.budgets[None], inst.moments[None],
            inst.est_vars[None], np.array([inst.noise_var]),
            inst.delta[None])


def fdm_mse_dual(inst: FdmInstance, *, eps_lambda=1e-6, eps_power=1e-4,
                 max_iters=150, step_scale=0.1, polish_sweeps=120) -> SolveReport:
    """MSE-minimizing FDM design by dual decomposition.

    The outer loop updates the per-device multipliers by projected
    subgradient with diminishing step step_scale/sqrt(t) and stops when
    the dual variables settle within eps_lambda and relative power
    violations fall below eps_power; a fixed-length alternating polish
    then drives the joint KKT system to root-solver accuracy before the
    transmit coefficients are recovered in closed form.
    """
    opts = DualOptions(eps_lambda=eps_lambda, eps_power=eps_power,
                       max_iters=max_iters, step_scale=step_scale,
                       polish_sweeps=polish_sweeps)
    core = _DualCore(*_stack(inst))
    lam, a, b, kkt, iters = core.run("mse", opts)
    tx = b[0]
    rx = a[0]
    design = _make_design(inst, tx, rx)
    objective = design_mse(inst, design)
    kkt_val = float(kkt[0])
    dual_value = _dual_value_mse(inst, lam[0], rx * rx)
    return SolveReport(
        design=design, objective=objective, iterations=iters,
        kkt_residual=kkt_val, converged=bool(kkt_val <= opts.kkt_tol),
        extras={"duals": lam[0].tolist(), "rx_power": (rx * rx).tolist(),
                "dual_value": dual_value,
                "duality_gap": objective - dual_value},
    )


def _dual_value_mse(inst: FdmInstance, lam, r) -> float:
    """Dual objective sum_n phi_n(r_n; lam) - sum_k lam_k P_k."""
    g, _, mom, sv, noise, _, _ = _arrays(inst)
    lam2 = lam[:, None]
    den = r[None, :] * g * g * sv + lam2 * mom
    terms = np.where(den > 0, lam2 * mom * sv / np.where(den > 0, den, 1.0), 0.0)
    phi = np.sum(terms, axis=0) + r * noise
    return float(np.sum(phi) - np.sum(lam * inst.budgets))


def fdm_md_optimal(inst: FdmInstance, *, eps_lambda=1e-6, eps_power=1e-4,
                   max_iters=150, step_scale=0.1, polish_sweeps=120) -> SolveReport:
    """MD-maximizing FDM design via the same two-layer dual scheme.

    The inner layer solves the z_n consistency root per subcarrier (zero
    power lands on subcarriers whose discriminative prior is zero); the
    outer layer updates the multipliers to meet the power budgets.  The
    receive coefficients do not affect the MD and are set to the
    MSE-minimizing rule so the design can still be decoded.
    """
    if np.all(inst.delta <= 0):
        raise ValidationError("fdm_md_optimal requires delta > 0 on some subcarrier")
    opts = DualOptions(eps_lambda=eps_lambda, eps_power=eps_power,
                       max_iters=max_iters, step_scale=step_scale,
                       polish_sweeps=polish_sweeps)
    core = _DualCore(*_stack(inst))
    lam, z, b, kkt, iters = core.run("md", opts)
    tx = b[0]
    rx = rx_mse_optimal(inst, tx)
    design = _make_design(inst, tx, rx)
    objective = design_md(inst, design)
    consistency = _z_consistency(inst, tx, z[0])
    kkt_val = float(max(kkt[0], consistency))
    return SolveReport(
        design=design, objective=objective, iterations=iters,
        kkt_residual=kkt_val, converged=bool(kkt_val <= opts.kkt_tol),
        extras={"duals": lam[0].tolist(), "z": z[0].tolist(),
                "z_consistency": consistency},
    )


def _z_consistency(inst: FdmInstance, tx, z) -> float:
    """Residual of z_n = sum|h b| / (sum |h b|^2 shat^2 + noise), relative
    to the largest auxiliary (subcarriers shut off by the solver carry
    vanishing z and must not dominate the check)."""
    g, _, _, sv, noise, _, _ = _arrays(inst)
    hb = g * tx
    num = np.sum(hb, axis=0)
    den = np.sum(hb * hb * sv, axis=0) + noise
    z_chk = num / den
    scale = max(float(np.max(z_chk)), float(np.max(z)), TINY)
    return float(np.max(np.abs(z - z_chk)) / scale)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def baseline_equal(inst) -> TransceiverDesign:
    """Uniform power split: |b_kn| = sqrt(P_k / (N nu_kn^2)), receive
    coefficients per the MSE-minimizing rule."""
    _, budgets, moments, _, _, _, _ = _arrays(inst)
    N = moments.shape[1]
    tx = np.sqrt(budgets[:, None] / (N * moments))
    return _make_design(inst, tx, rx_mse_optimal(inst, tx))


def baseline_channel_inversion(inst) -> TransceiverDesign:
    """Channel inversion capped by the uniform split:
    |b_kn| = min(sqrt(P_k / (N nu_kn^2)), 1/h_kn)."""
    g, budgets, moments, _, _, _, _ = _arrays(inst)
    N = moments.shape[1]
    cap = np.sqrt(budgets[:, None] / (N * moments))
    tx = np.minimum(cap, 1.0 / g)
    return _make_design(inst, tx, rx_mse_optimal(inst, tx))


# ---------------------------------------------------------------------------
# brute-force validation oracle
# ---------------------------------------------------------------------------

def _golden_min(fun, lo, hi, iters=44):
    """Deterministic golden-section minimization on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    return x, fun(x)


def _params_to_tx(params, budgets, moments):
    """Map box parameters in [0,1] to feasible transmit magnitudes.

    N = 1: one power-use share s_k per device.
    N = 2: (s_k, t_k) with t_k splitting the used power across the two
    subcarriers.  params has shape (..., D) with D = K or 2K.
    """
    K, N = moments.shape
    params = np.asarray(params, dtype=np.float64)
    if N == 1:
        s = params[..., :K]
        power = s * budgets
        return np.sqrt(power / moments[:, 0])[..., :, None]
    s = params[..., 0::2]
    t = params[..., 1::2]
    p1 = s * t * budgets
    p2 = s * (1.0 - t) * budgets
    b1 = np.sqrt(p1 / moments[:, 0])
    b2 = np.sqrt(p2 / moments[:, 1])
    return np.stack([b1, b2], axis=-1)


def brute_force_oracle(inst, objective: str, grid_resolution: int = 9,
                       refine_sweeps: int = 60) -> SolveReport:
    """Exhaustive grid search plus coordinate-descent refinement.

    Supports instances with at most 6 free transmit coefficients and at
    most two subcarriers.  Receive coefficients are eliminated through the
    MSE-minimizing rule (the MD objective never depends on them), so the
    search space is the per-device power usage and split.
    """
    if objective not in ("mse", "md"):
        raise ValidationError(f"objective must be 'mse' or 'md', got {objective!r}")
    g, budgets, moments, sv, noise, delta, _ = _arrays(inst)
    K, N = g.shape
    if K * N > 6:
        raise ValidationError(
            f"brute_force_oracle supports at most 6 free coefficients, got {K * N}"
        )
    if N > 2:
        raise ValidationError("brute_force_oracle supports at most 2 subcarriers")
    if objective == "md" and np.all(delta <= 0):
        raise ValidationError("md objective requires delta > 0 somewhere")

    def value(tx):
        hb = g * tx
        den = np.sum(hb * hb * sv, axis=-2) + noise
        safe = np.where(den > 0, den, 1.0)
        if objective == "mse":
            num = np.sum(hb * sv, axis=-2) ** 2
            per = np.sum(sv, axis=-2) - np.where(den > 0, num / safe, 0.0)
            return np.sum(per, axis=-1)
        num = delta * np.sum(hb, axis=-2) ** 2
        return -np.sum(np.where(den > 0, num / safe, 0.0), axis=-1)

    dims = K if N == 1 else 2 * K
    axis = np.linspace(0.0, 1.0, grid_resolution)
    mesh = np.meshgrid(*([axis] * dims), indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    vals = value(_params_to_tx(grid, budgets, moments))
    order = np.argsort(vals, kind="stable")
    starts = grid[order[:5]]

    best_p, best_v = None, None
    evals = int(vals.size)
    for start in starts:
        p = start.copy()
        v = float(value(_params_to_tx(p, budgets, moments)))
        for _ in range(refine_sweeps):
            improved = False
            for d in range(dims):
                def along(x, d=d, p=p):
                    q = p.copy()
                    q[d] = x
                    return float(value(_params_to_tx(q, budgets, moments)))
                x, vx = _golden_min(along, 0.0, 1.0)
                if vx < v - 1e-15 * max(1.0, abs(v)):
                    p[d] = x
                    v = vx
                    improved = True
            if not improved:
                break
        if best_v is None or v < best_v:
            best_p, best_v = p, v
    tx = _params_to_tx(best_p, budgets, moments)
    rx = rx_mse_optimal(inst, tx)
    design = _make_design(inst, tx, rx)
    obj = -best_v if objective == "md" else best_v
    return SolveReport(design=design, objective=float(obj), iterations=evals,
                       kkt_residual=0.0, converged=True,
                       extras={"method": "grid+coordinate-descent",
                               "grid_resolution": grid_resolution})


# ---------------------------------------------------------------------------
# random instances and the oracle validation suite
# ---------------------------------------------------------------------------

def _log_uniform(rng, lo, hi, size=None):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size=size))


def random_tdm_instance(rng, num_devices: int,
                        homogeneous_vars: bool = False) -> TdmInstance:
    """Seeded random per-slot instance with moderate dynamic ranges."""
    K = num_devices
    sv = (np.full(K, _log_uniform(rng, 0.05, 2.0))
          if homogeneous_vars else _log_uniform(rng, 0.05, 2.0, K))
    return TdmInstance(
        gains=rng.rayleigh(scale=np.sqrt(0.5), size=K) + 0.05,
        budgets=_log_uniform(rng, 0.3, 3.0, K),
        moments=_log_uniform(rng, 0.3, 3.0, K),
        est_vars=sv,
        noise_var=float(_log_uniform(rng, 0.01, 1.0)),
        delta=float(_log_uniform(rng, 0.1, 10.0)),
    )


def random_fdm_instance(rng, num_devices: int, num_subcarriers: int) -> FdmInstance:
    K, N = num_devices, num_subcarriers
    return FdmInstance(
        gains=rng.rayleigh(scale=np.sqrt(0.5), size=(K, N)) + 0.05,
        budgets=_log_uniform(rng, 0.3, 3.0, K),
        moments=_log_uniform(rng, 0.3, 3.0, (K, N)),
        est_vars=_log_uniform(rng, 0.05, 2.0, (K, N)),
        noise_var=float(_log_uniform(rng, 0.01, 1.0)),
        delta=_log_uniform(rng, 0.1, 10.0, N),
    )


def oracle_validation_suite(n_instances: int, seed: int) -> list:
    """Cross-check every solver against the brute-force oracle on random
    small instances, plus the structural invariants (feasibility, TDM
    design equivalence under homogeneous variances, FDM objective
    dominance).  Returns (name, passed, detail) triples."""
    rng = np.random.default_rng(seed)
    checks = []

    def rel_gap(a, b):
        return abs(a - b) / max(abs(b), TINY)

    worst = {"tdm_mse": 0.0, "tdm_md": 0.0, "fdm_mse": 0.0, "fdm_md": 0.0}
    worst_kkt = 0.0
    worst_equiv = 0.0
    dominance_ok = True
    for i in range(n_instances):
        K = int(rng.integers(1, 4))
        inst_t = random_tdm_instance(rng, K, homogeneous_vars=True)
        rep = tdm_mse_optimal(inst_t)
        oracle = brute_force_oracle(inst_t, "mse", grid_resolution=17)
        worst["tdm_mse"] = max(worst["tdm_mse"],
                               rel_gap(rep.objective, oracle.objective))
        rep_md = tdm_md_optimal(inst_t)
        oracle_md = brute_force_oracle(inst_t, "md", grid_resolution=17)
        worst["tdm_md"] = max(worst["tdm_md"],
                              rel_gap(rep_md.objective, oracle_md.objective))
        worst_equiv = max(
            worst_equiv,
            rel_gap(design_mse(inst_t, rep_md.design), rep.objective),
            rel_gap(design_md(inst_t, rep.design), rep_md.objective),
        )

        N = int(rng.integers(1, 3))
        inst_f = random_fdm_instance(rng, K, N)
        rep_c = fdm_mse_dual(inst_f)
        oracle_c = brute_force_oracle(inst_f, "mse")
        worst["fdm_mse"] = max(worst["fdm_mse"],
                               rel_gap(rep_c.objective, oracle_c.objective))
        rep_d = fdm_md_optimal(inst_f)
        oracle_d = brute_force_oracle(inst_f, "md")
        worst["fdm_md"] = max(worst["fdm_md"],
                              rel_gap(rep_d.objective, oracle_d.objective))
        worst_kkt = max(worst_kkt, rep_c.kkt_residual, rep_d.kkt_residual)
        if design_mse(inst_f, rep_c.design) > design_mse(inst_f, rep_d.design) * (1 + 1e-6):
            dominance_ok = False
        if design_md(inst_f, rep_d.design) < design_md(inst_f, rep_c.design) * (1 - 1e-6):
            dominance_ok = False

    for name in ("tdm_mse", "tdm_md", "fdm_mse", "fdm_md"):
        checks.append((f"{name} matches oracle within 1e-3", worst[name] <= 1e-3,
                       f"worst relative gap {worst[name]:.3e}"))
    checks.append(("dual solver KKT residuals below 1e-6", worst_kkt <= 1e-6,
                   f"worst residual {worst_kkt:.3e}"))
    checks.append(("TDM designs equivalent under homogeneous variances",
                   worst_equiv <= 1e-6, f"worst relative gap {worst_equiv:.3e}"))
    checks.append(("FDM dominance (MSE and MD ordering)", dominance_ok,
                   f"{n_instances} instances"))
    return checks


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

SOLVER_NAMES = ("tdm_mse", "tdm_md", "fdm_mse", "fdm_md", "equal",
                "channel_inversion")


def solve(inst, solver: str, **options) -> SolveReport:
    """Run a solver by name and return a SolveReport (baselines are
    wrapped with their realized MSE as the objective)."""
    if solver == "tdm_mse":
        return tdm_mse_optimal(inst)
    if solver == "tdm_md":
        return tdm_md_optimal(inst)
    if solver == "fdm_mse":
        return fdm_mse_dual(inst, **options)
    if solver == "fdm_md":
        return fdm_md_optimal(inst, **options)
    if solver in ("equal", "channel_inversion"):
        design = (baseline_equal(inst) if solver == "equal"
                  else baseline_channel_inversion(inst))
        return SolveReport(design=design, objective=design_mse(inst, design),
                           iterations=0, kkt_residual=0.0, converged=True,
                           extras={})
    raise ValidationError(f"unknown solver {solver!r}; expected one of {SOLVER_NAMES}")
