"""Small Levenberg-Marquardt driver shared by the pose refiners.

Works on opaque state through callbacks so both the PnP solver (state =
pose, residuals against measured pixels) and the multi-view refiner
(state = pose, residuals against per-view reference projections with a
behind-camera penalty in the objective) reuse the same logic.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LMResult:
    state: object
    objective: float
    iterations: int
    converged: bool
    # objective value after every *accepted* step, starting value included
    history: list = field(default_factory=list)


def levenberg_marquardt(state, residuals_and_jacobian, apply_step, objective=None,
                        max_iterations=100, gradient_tol=1e-9, step_tol=1e-10,
                        initial_damping=1e-3):
    """Minimize 0.5*|r(state)|^2 (or a custom objective) over a local chart.

    Args:
        state: initial state, never mutated.
        residuals_and_jacobian: state -> (r (K,), J (K, D)).
        apply_step: (state, delta (D,)) -> new state.
        objective: optional state -> float used for step acceptance; defaults
            to sum of squared residuals. May return inf to veto a step.
        max_iterations: cap on linearizations.
        gradient_tol: stop when the gradient infinity-norm drops below this.
        step_tol: stop when the accepted step norm drops below this.
        initial_damping: Marquardt lambda multiplying diag(J^T J).

    Returns:
        LMResult whose history is non-increasing by construction.
    """

    def _obj(s):
        if objective is not None:
            return float(objective(s))
        r, _ = residuals_and_jacobian(s)
        return float(r @ r)

    cost = _obj(state)
    history = [cost]
    if not np.isfinite(cost):
        return LMResult(state, cost, 0, False, history)

    lam = initial_damping
    converged = False
    it = 0
    while it < max_iterations:
        it += 1
        r, J = residuals_and_jacobian(state)
        g = J.T @ r
        if np.max(np.abs(g)) < gradient_tol:
            converged = True
            break
        H = J.T @ J
        diag = np.clip(np.diag(H), 1e-12, None)

        accepted = False
        for _ in range(25):
            A = H + lam * np.diag(diag)
            try:
                delta = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                delta = np.linalg.lstsq(A, -g, rcond=None)[0]
            trial = apply_step(state, delta)
            trial_cost = _obj(trial)
            if np.isfinite(trial_cost) and trial_cost < cost:
                state = trial
                cost = trial_cost
                history.append(cost)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
            if lam > 1e14:
                break
        if not accepted:
            converged = True  # damping exhausted: local minimum to tolerance
            break
        if np.linalg.norm(delta) < step_tol:
            converged = True
            break

    return LMResult(state, cost, it, converged, history)
