"""Protocol, channel, detector and security parameters, plus pattern synthesis.

The parameter set mirrors a 4-intensity sending-or-not-sending protocol over
an asymmetric pair of fibre arms meeting at a middle interference node.  The
not-sending intensity is aliased to the dimmest test intensity ``w`` on each
side (finite extinction ratio), so each transmitter has four distinct levels:
s, u, v, w.

Transmission patterns are synthesised by fair sampling: exact per-class
counts via largest-remainder rounding, then a seeded uniform shuffle.  This
removes sampling fluctuations from the pulse-pair distribution.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ProtocolParams",
    "LinkBudget",
    "DetectorParams",
    "SecurityParams",
    "EncodedPattern",
    "ConstraintCheck",
    "ValidationReport",
    "PatternError",
    "CLASS_NAMES",
    "Z_SEND",
    "Z_NOSEND",
    "X_U",
    "X_V",
    "X_W",
    "validate_params",
    "fair_sampled_classes",
    "synthesize_pattern",
    "transmissivities",
    "load_params_file",
]

# Per-side slot class codes used throughout the simulator.
Z_SEND, Z_NOSEND, X_U, X_V, X_W = 0, 1, 2, 3, 4
CLASS_NAMES = ("Zs", "Zn", "Xu", "Xv", "Xw")


class PatternError(ValueError):
    """Raised when a pattern cannot represent the requested probabilities."""


@dataclass(frozen=True)
class SideParams:
    """One transmitter's intensities and probabilities."""

    s: float        # signal intensity, photons/pulse
    u: float        # brightest decoy
    v: float        # middle decoy
    w: float        # dimmest decoy, aliased to the not-sending level
    p_z: float      # probability of the code basis
    send_prob: float  # probability of sending given the code basis
    p_u: float      # decoy probabilities conditioned on the test basis
    p_v: float
    p_w: float

    def class_probs(self) -> np.ndarray:
        """Unconditional probabilities of the five slot classes."""
        p_x = 1.0 - self.p_z
        return np.array([
            self.p_z * self.send_prob,
            self.p_z * (1.0 - self.send_prob),
            p_x * self.p_u,
            p_x * self.p_v,
            p_x * self.p_w,
        ])

    def intensity_of(self) -> np.ndarray:
        """Mean photon number per class (not-sending emits the w level)."""
        return np.array([self.s, self.w, self.u, self.v, self.w])


@dataclass(frozen=True)
class ProtocolParams:
    """Full two-transmitter encoding configuration."""

    alice: SideParams
    bob: SideParams
    phase_slices_m: int = 16
    clock_rate_hz: float = 1.0e9
    duty_cycle: float = 0.5

    @property
    def protocol_rate_hz(self) -> float:
        """Protocol pulse-pair rate: clock rate times duty cycle."""
        return self.clock_rate_hz * self.duty_cycle

    def phase_window_rad(self) -> float:
        """Half-width of each accepted phase-matching window, 2*pi/M."""
        return 2.0 * math.pi / self.phase_slices_m

    def matched_fraction(self) -> float:
        """Fraction of uniform phase pairs accepted by the matching rule.

        Two windows (around 0 and around pi) of full width 4*pi/M each.
        """
        return min(1.0, 4.0 / self.phase_slices_m)


@dataclass(frozen=True)
class LinkBudget:
    """Per-arm fibre losses and lengths."""

    length_ac_km: float
    length_bc_km: float
    loss_ac_db: float
    loss_bc_db: float
    attenuation_coeff_db_per_km: float | None = None

    def __post_init__(self):
        if min(self.length_ac_km, self.length_bc_km) < 0:
            raise ValueError("fibre lengths must be non-negative")
        if min(self.loss_ac_db, self.loss_bc_db) < 0:
            raise ValueError("fibre losses must be non-negative")

    @property
    def total_loss_db(self) -> float:
        return self.loss_ac_db + self.loss_bc_db

    @property
    def total_length_km(self) -> float:
        return self.length_ac_km + self.length_bc_km


@dataclass(frozen=True)
class DetectorParams:
    """Threshold single-photon detector behind the interference node."""

    efficiency: float
    dark_rate_hz: float
    deadtime_s: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.dark_rate_hz < 0 or self.deadtime_s < 0:
            raise ValueError("dark rate and deadtime must be non-negative")

    def dark_prob_per_gate(self, clock_rate_hz: float) -> float:
        """Dark-count probability per detection gate."""
        p = self.dark_rate_hz / clock_rate_hz
        if not 0.0 <= p < 1.0:
            raise ValueError("dark probability per gate must lie in [0, 1)")
        return p

    def dark_prob_per_use(self, protocol_rate_hz: float) -> float:
        """Dark-count probability per protocol channel use (per detector)."""
        p = self.dark_rate_hz / protocol_rate_hz
        if not 0.0 <= p < 1.0:
            raise ValueError("dark probability per use must lie in [0, 1)")
        return p


@dataclass(frozen=True)
class SecurityParams:
    """Failure probabilities and error-correction inefficiency.

    ``chernoff_xi`` is the per-estimate failure probability for every
    Chernoff interval in the decoy analysis.  The three epsilons enter the
    finite-size correction term only.
    """

    eps_cor: float = 1e-10
    eps_pa: float = 1e-10
    eps_hat: float = 1e-10
    f_ec: float = 1.05
    chernoff_xi: float = 1e-5

    def __post_init__(self):
        for name in ("eps_cor", "eps_pa", "eps_hat", "chernoff_xi"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.f_ec < 1.0:
            raise ValueError("f_ec must be >= 1")


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    passed: bool
    kind: str          # "structural" or "tolerance"
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[ConstraintCheck, ...]
    tolerance: float

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def hard_failures(self) -> tuple[ConstraintCheck, ...]:
        return tuple(c for c in self.checks if not c.passed and c.kind == "structural")

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "tolerance": self.tolerance,
            "checks": [
                {"name": c.name, "passed": c.passed, "kind": c.kind, "detail": c.detail}
                for c in self.checks
            ],
        }


def asymmetry_condition_sides(params: ProtocolParams) -> tuple[float, float]:
    """LHS and RHS of the asymmetric-encoding security condition.

    v_A / v_B  ==  [eps_A (1-eps_B) s_A e^-s_A] / [eps_B (1-eps_A) s_B e^-s_B]
    """
    a, b = params.alice, params.bob
    lhs = a.v / b.v
    rhs = (a.send_prob * (1.0 - b.send_prob) * a.s * math.exp(-a.s)) / (
        b.send_prob * (1.0 - a.send_prob) * b.s * math.exp(-b.s)
    )
    return lhs, rhs


def validate_params(params: ProtocolParams, tolerance: float = 0.02) -> ValidationReport:
    """Check structural invariants and the asymmetric security condition.

    Structural violations (negative intensities, probabilities not summing
    to one, ...) are hard failures.  The security condition is compared as
    a relative deviation |LHS/RHS - 1| <= tolerance.
    """
    checks: list[ConstraintCheck] = []

    def structural(name: str, ok: bool, detail: str = ""):
        checks.append(ConstraintCheck(name, bool(ok), "structural", detail))

    for label, side in (("A", params.alice), ("B", params.bob)):
        structural(
            f"intensities_nonneg_{label}",
            min(side.s, side.u, side.v, side.w) >= 0.0,
            f"s={side.s} u={side.u} v={side.v} w={side.w}",
        )
        structural(f"signal_positive_{label}", side.s > 0.0, f"s={side.s}")
        structural(
            f"decoy_ordering_{label}",
            side.u > side.v > side.w,
            f"require u > v > w, got {side.u} > {side.v} > {side.w}",
        )
        structural(
            f"basis_probability_{label}",
            0.0 <= side.p_z <= 1.0 and 0.0 <= side.send_prob <= 1.0,
            f"p_z={side.p_z} send_prob={side.send_prob}",
        )
        decoy_sum = side.p_u + side.p_v + side.p_w
        structural(
            f"decoy_probabilities_{label}",
            math.isclose(decoy_sum, 1.0, rel_tol=0.0, abs_tol=1e-9)
            and min(side.p_u, side.p_v, side.p_w) >= 0.0,
            f"p_u+p_v+p_w={decoy_sum}",
        )
    structural("phase_slices", params.phase_slices_m >= 2,
               f"M={params.phase_slices_m}")
    structural("duty_cycle", 0.0 < params.duty_cycle <= 1.0,
               f"duty={params.duty_cycle}")
    structural("clock_rate", params.clock_rate_hz > 0.0,
               f"clock={params.clock_rate_hz}")

    if all(c.passed for c in checks):
        lhs, rhs = asymmetry_condition_sides(params)
        deviation = abs(lhs / rhs - 1.0)
        checks.append(ConstraintCheck(
            "asymmetric_security_condition",
            deviation <= tolerance,
            "tolerance",
            f"v_A/v_B={lhs:.6g} vs rhs={rhs:.6g}, relative deviation {deviation:.4%}",
        ))
    return ValidationReport(checks=tuple(checks), tolerance=tolerance)


@dataclass(frozen=True)
class EncodedPattern:
    """One transmitter's fair-sampled slot sequence.

    ``classes`` holds one int8 code per protocol slot (see CLASS_NAMES);
    ``phases`` the per-slot global phase in [0, 2*pi).  Reference slots are
    interleaved among protocol slots according to ``duty_cycle`` (1:1 for
    duty 0.5) and carry no encoding.
    """

    classes: np.ndarray
    phases: np.ndarray
    duty_cycle: float
    seed: int

    @property
    def n_protocol_slots(self) -> int:
        return int(self.classes.size)

    @property
    def n_total_slots(self) -> int:
        return int(round(self.n_protocol_slots / self.duty_cycle))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.classes, minlength=5)


def largest_remainder_counts(probs: np.ndarray, n: int) -> np.ndarray:
    """Integer class counts summing to n, deviating < 1 from probs * n.

    Floor each target then hand the remaining slots to the largest
    fractional parts (ties broken by class index).
    """
    target = np.asarray(probs, dtype=float) * n
    counts = np.floor(target).astype(int)
    remainder = n - counts.sum()
    if remainder > 0:
        order = np.argsort(-(target - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def fair_sampled_classes(side: SideParams, n_protocol_slots: int,
                         seed: int) -> np.ndarray:
    """Exact-count class codes for one side, seeded uniform shuffle.

    Raises PatternError when a class with nonzero probability would round
    to zero slots.
    """
    if n_protocol_slots <= 0:
        raise PatternError("n_protocol_slots must be positive")
    probs = side.class_probs()
    counts = largest_remainder_counts(probs, n_protocol_slots)
    starved = (probs > 0.0) & (counts == 0)
    if np.any(starved):
        names = [CLASS_NAMES[i] for i in np.nonzero(starved)[0]]
        raise PatternError(
            f"{n_protocol_slots} slots cannot represent classes {names} "
            f"with probabilities {probs[starved]}"
        )
    rng = np.random.default_rng(seed)
    classes = np.repeat(np.arange(5, dtype=np.int8), counts)
    rng.shuffle(classes)
    return classes


def synthesize_pattern(side: SideParams, n_protocol_slots: int, seed: int,
                       duty_cycle: float = 0.5) -> EncodedPattern:
    """Fair-sample a transmission pattern for one side.

    Exact class counts (largest-remainder rounding of probability * n),
    seeded uniform shuffle, and a uniformly random global phase per slot.
    """
    classes = fair_sampled_classes(side, n_protocol_slots, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_protocol_slots).astype(np.float32)
    return EncodedPattern(classes=classes, phases=phases,
                          duty_cycle=duty_cycle, seed=seed)


def transmissivities(link: LinkBudget, det: DetectorParams) -> dict[str, float]:
    """Arm, channel and total transmissivities from dB losses.

    eta = 10^(-loss_db/10) per arm; eta_channel is their product and
    eta_total additionally includes the detector efficiency.
    """
    eta_a = 10.0 ** (-link.loss_ac_db / 10.0)
    eta_b = 10.0 ** (-link.loss_bc_db / 10.0)
    eta_channel = eta_a * eta_b
    return {
        "eta_a": eta_a,
        "eta_b": eta_b,
        "eta_channel": eta_channel,
        "eta_total": eta_channel * det.efficiency,
    }


# ---------------------------------------------------------------------------
# Parameter file I/O.  The JSON object is flat; protocol keys follow the
# conventional table naming (s_A, u_A, ..., p_z_A, eps_A, p_u_A, ...,
# phase_slices_M, clock_rate_hz, duty_cycle).  Optional link / detector /
# security keys ride along in the same object; see README for the schema.
# ---------------------------------------------------------------------------

_PROTOCOL_KEYS = [
    "s_A", "u_A", "v_A", "w_A", "s_B", "u_B", "v_B", "w_B",
    "p_z_A", "p_z_B", "eps_A", "eps_B",
    "p_u_A", "p_v_A", "p_w_A", "p_u_B", "p_v_B", "p_w_B",
    "phase_slices_M", "clock_rate_hz", "duty_cycle",
]


def params_from_dict(raw: dict) -> ProtocolParams:
    missing = [k for k in _PROTOCOL_KEYS if k not in raw]
    if missing:
        raise KeyError(f"parameter file is missing keys: {missing}")
    alice = SideParams(
        s=raw["s_A"], u=raw["u_A"], v=raw["v_A"], w=raw["w_A"],
        p_z=raw["p_z_A"], send_prob=raw["eps_A"],
        p_u=raw["p_u_A"], p_v=raw["p_v_A"], p_w=raw["p_w_A"],
    )
    bob = SideParams(
        s=raw["s_B"], u=raw["u_B"], v=raw["v_B"], w=raw["w_B"],
        p_z=raw["p_z_B"], send_prob=raw["eps_B"],
        p_u=raw["p_u_B"], p_v=raw["p_v_B"], p_w=raw["p_w_B"],
    )
    return ProtocolParams(
        alice=alice, bob=bob,
        phase_slices_m=int(raw["phase_slices_M"]),
        clock_rate_hz=float(raw["clock_rate_hz"]),
        duty_cycle=float(raw["duty_cycle"]),
    )


def link_from_dict(raw: dict) -> LinkBudget | None:
    keys = ("length_ac_km", "length_bc_km", "loss_ac_db", "loss_bc_db")
    if not all(k in raw for k in keys):
        return None
    return LinkBudget(
        length_ac_km=raw["length_ac_km"], length_bc_km=raw["length_bc_km"],
        loss_ac_db=raw["loss_ac_db"], loss_bc_db=raw["loss_bc_db"],
        attenuation_coeff_db_per_km=raw.get("attenuation_coeff_db_per_km"),
    )


def detector_from_dict(raw: dict) -> DetectorParams | None:
    if "detector_efficiency" not in raw:
        return None
    return DetectorParams(
        efficiency=raw["detector_efficiency"],
        dark_rate_hz=raw.get("dark_rate_hz", 0.0),
        deadtime_s=raw.get("deadtime_s", 0.0),
    )


def security_from_dict(raw: dict) -> SecurityParams:
    return SecurityParams(
        eps_cor=raw.get("eps_cor", 1e-10),
        eps_pa=raw.get("eps_pa", 1e-10),
        eps_hat=raw.get("eps_hat", 1e-10),
        f_ec=raw.get("f_ec", 1.05),
        chernoff_xi=raw.get("chernoff_xi", 1e-5),
    )


def load_params_file_from_dict(raw: dict) -> dict:
    """Split a flat parameter object into its typed parts.

    Returns a dict with keys "protocol", "link", "detector", "security" and
    "extras" (visibility, misalignment_sigma_rad when present).  Link and
    detector sections are optional in the file.
    """
    return {
        "protocol": params_from_dict(raw),
        "link": link_from_dict(raw),
        "detector": detector_from_dict(raw),
        "security": security_from_dict(raw),
        "extras": {
            "visibility": raw.get("visibility", 0.97),
            "misalignment_sigma_rad": raw.get("misalignment_sigma_rad", 0.0),
        },
        "raw": raw,
    }


def load_params_file(path: str | Path) -> dict:
    """Load a parameter JSON file into its typed parts."""
    return load_params_file_from_dict(json.loads(Path(path).read_text()))
