"""Iteration parameters lambda_q, delta_q, ell_q, tau_q and their constraint report."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = ["Constraint", "ParamSchedule", "ScheduleError", "schedule_params", "desk_schedule"]


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    name: str
    ok: bool
    detail: str


@dataclass
class ParamSchedule:
    a: float
    b: float
    beta: float
    alpha: float
    T_tilde: float
    q: int
    mode: str
    lam_q: int
    lam_q1: int
    lam_q2: int
    lam2: int
    delta_q: float
    delta_q1: float
    delta_q2: float
    ell: float
    tau: float
    tau_next: float
    N0: int | None
    b0: float
    alpha0: float
    M: float | None
    constraints: list = field(default_factory=list)

    def lam(self, q):
        return _lam(self.a, self.b, q)

    def delta(self, q):
        return _delta(self.a, self.b, self.beta, q)

    @property
    def failing(self):
        return [c for c in self.constraints if not c.ok]

    @property
    def i_max(self):
        return int(math.floor(self.T_tilde / self.tau))

    def as_dict(self):
        d = {k: getattr(self, k) for k in (
            "a", "b", "beta", "alpha", "T_tilde", "q", "mode", "lam_q", "lam_q1", "lam_q2",
            "lam2", "delta_q", "delta_q1", "delta_q2", "ell", "tau", "tau_next", "N0", "b0",
            "alpha0", "M")}
        d["constraints"] = {c.name: {"ok": c.ok, "detail": c.detail} for c in self.constraints}
        return d


def _lam(a, b, q):
    return int(math.ceil(a ** (b**q)))


def _delta(a, b, beta, q):
    return _lam(a, b, 2) ** (3 * beta) * _lam(a, b, q) ** (-2 * beta)


def _ell_tau(a, b, beta, alpha, q):
    lq = _lam(a, b, q)
    dq, dq1 = _delta(a, b, beta, q), _delta(a, b, beta, q + 1)
    ell = math.sqrt(dq1) / (math.sqrt(dq) * lq ** (1 + 1.5 * alpha))
    tau = ell ** (2 * alpha) / (math.sqrt(dq) * lq)
    return ell, tau


def _n0(lam1, ell, alpha):
    """Least N0 >= 1 with lam1^{-(N0-alpha)} ell^{-(N0+alpha)} <= lam1^{-(1-alpha)}."""
    L1, Ll = math.log(lam1), math.log(ell)
    if L1 + Ll <= 0:
        return None
    return max(1, int(math.ceil((L1 - alpha * Ll) / (L1 + Ll) - 1e-12)))


def schedule_params(a, b, beta, alpha, T_tilde=0.25, q=1, mode="desk", M=None) -> ParamSchedule:
    """Evaluate the schedule at level q.

    alpha0 is taken from the exponent balance of delta_{q+1}^{1/2} delta_q^{1/2} lambda_q /
    lambda_{q+1} against delta_{q+2} lambda_{q+1}^{-8 alpha}, constants dropped:
    alpha0 = (b-1)(1 - beta(2b+1)) / (8b).
    """
    if not a > 1 or not b > 1:
        raise ValueError("need a > 1 and b > 1")
    if not 0 < beta < 1 / 3:
        raise ValueError("need 0 < beta < 1/3")
    if not 0 < alpha < 1:
        raise ValueError("need alpha in (0, 1)")
    if mode not in ("desk", "paper-strict"):
        raise ValueError("mode must be 'desk' or 'paper-strict'")
    lq, lq1, lq2 = _lam(a, b, q), _lam(a, b, q + 1), _lam(a, b, q + 2)
    ell, tau = _ell_tau(a, b, beta, alpha, q)
    _, tau_next = _ell_tau(a, b, beta, alpha, q + 1)
    b0 = min(1 + (1 - 3 * beta) / (2 * beta), 2.0)
    alpha0 = (b - 1) * (1 - beta * (2 * b + 1)) / (8 * b)
    n0 = _n0(lq1, ell, alpha)

    cons = []

    def add(name, ok, detail):
        cons.append(Constraint(name, bool(ok), detail))

    add("b in (1, b0)", 1 < b < b0, f"b = {b:.6g}, b0 = {b0:.6g}")
    amin = min(alpha0, beta * (b - 1) / 3)
    add("alpha < min(alpha0, beta(b-1)/3)", alpha < amin, f"alpha = {alpha:.6g}, bound = {amin:.6g}")
    with_overflow = beta / alpha * math.log(50)
    add("a > 50^(beta/alpha)", math.log(a) > with_overflow,
        f"log a = {math.log(a):.6g}, log bound = {with_overflow:.6g}")
    if M is None:
        add("a > M^(2/alpha)", False, "M not supplied")
    else:
        lb = 2 / alpha * math.log(M) if M > 0 else -math.inf
        add("a > M^(2/alpha)", math.log(a) > lb, f"log a = {math.log(a):.6g}, log bound = {lb:.6g}")
    add("a > 3/T_tilde", a > 3 / T_tilde, f"a = {a:.6g}, 3/T_tilde = {3 / T_tilde:.6g}")
    add("T_tilde in (0, 1/4]", 0 < T_tilde <= 0.25, f"T_tilde = {T_tilde:.6g}")
    add("ell in (lam^-13/10, lam^-1)", lq ** (-1.3) < ell < 1.0 / lq,
        f"ell = {ell:.6g}, interval = ({lq ** -1.3:.6g}, {1.0 / lq:.6g})")
    add("N0 exists", n0 is not None, f"N0 = {n0}")
    add("20 tau_{q+1} < tau_q", 20 * tau_next < tau, f"tau_q = {tau:.6g}, tau_(q+1) = {tau_next:.6g}")
    add("i_max >= 2", T_tilde / tau >= 2, f"T_tilde / tau = {T_tilde / tau:.6g}")

    sched = ParamSchedule(a=a, b=b, beta=beta, alpha=alpha, T_tilde=T_tilde, q=q, mode=mode,
                          lam_q=lq, lam_q1=lq1, lam_q2=lq2, lam2=_lam(a, b, 2),
                          delta_q=_delta(a, b, beta, q), delta_q1=_delta(a, b, beta, q + 1),
                          delta_q2=_delta(a, b, beta, q + 2), ell=ell, tau=tau, tau_next=tau_next,
                          N0=n0, b0=b0, alpha0=alpha0, M=M, constraints=cons)
    if mode == "paper-strict" and sched.failing:
        c = sched.failing[0]
        raise ScheduleError(f"paper-strict schedule violates '{c.name}': {c.detail}")
    return sched


def desk_schedule(lam_q, lam_q1, beta, alpha, T_tilde=None, q=1, mode="desk", M=None,
                  tau_ratio=None):
    """Back-solve (a, b) so that lambda_q and lambda_{q+1} equal the requested integers.

    If tau_ratio is given, T_tilde is set to tau_ratio * tau_q.
    """
    b = math.log(lam_q1) / math.log(lam_q)
    a = lam_q ** (1.0 / b**q)
    a *= 1 - 1e-12
    if T_tilde is None:
        T_tilde = 0.25
    s = schedule_params(a, b, beta, alpha, T_tilde, q, "desk", M)
    if tau_ratio is not None:
        s = schedule_params(a, b, beta, alpha, tau_ratio * s.tau, q, "desk", M)
    if (s.lam_q, s.lam_q1) != (lam_q, lam_q1):
        raise ScheduleError(f"back-solved schedule gives ({s.lam_q}, {s.lam_q1}), "
                            f"requested ({lam_q}, {lam_q1})")
    if mode == "paper-strict":
        return schedule_params(a, b, beta, alpha, s.T_tilde, q, mode, M)
    return s
