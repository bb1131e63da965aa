"""Measurement objects: unsharp Pauli POVMs, Kraus operators, Alice's measurement.

Outcome ``b = 0`` of an unsharp observable ``eta * sigma`` is the effect
``(I + eta*sigma)/2``. Input ``y = 0`` selects the Z observable and ``y = 1``
the X observable.

In the optical implementation each branch's two parties are read out by four
detectors; the documented outcome-pair ordering is::

    D1 -> (b1, b2) = (0, 0)
    D2 -> (0, 1)
    D3 -> (1, 1)
    D4 -> (1, 0)
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .linalg import I2, SX, SY, SZ, dagger, kron_all, psd_sqrt_2x2
from .network import NetworkConfig

DETECTOR_OUTCOMES = {"D1": (0, 0), "D2": (0, 1), "D3": (1, 1), "D4": (1, 0)}

AXES = {"Z": SZ, "X": SX}
INPUT_AXIS = ("Z", "X")

# Basis rotations U with U^dag sigma_Z U = sigma_axis.
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
Y_ROTATION = np.array([[1, -1j], [-1j, 1]], dtype=complex) / math.sqrt(2)


@dataclass(frozen=True)
class BinaryPovm:
    effect0: np.ndarray
    effect1: np.ndarray

    def effect(self, b: int) -> np.ndarray:
        return self.effect1 if b else self.effect0


@dataclass(frozen=True)
class KrausPair:
    m0: np.ndarray
    m1: np.ndarray

    def op(self, b: int) -> np.ndarray:
        return self.m1 if b else self.m0

    def povm(self) -> BinaryPovm:
        return BinaryPovm(dagger(self.m0) @ self.m0, dagger(self.m1) @ self.m1)


def _check_eta(eta: float) -> float:
    eta = float(eta)
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"sharpness eta={eta} outside [0, 1]")
    return eta


def unsharp_povm(eta: float, direction) -> BinaryPovm:
    """Two-outcome POVM ``(I +/- eta * r.sigma)/2`` along a unit Bloch vector ``r``."""
    eta = _check_eta(eta)
    r = np.asarray(direction, dtype=float)
    norm = float(np.linalg.norm(r))
    if abs(norm - 1.0) > 1e-12:
        raise ValueError(f"direction must be a unit vector, |r| = {norm}")
    sigma = r[0] * SX + r[1] * SY + r[2] * SZ
    return BinaryPovm(0.5 * (I2 + eta * sigma), 0.5 * (I2 - eta * sigma))


def unsharp_pauli(eta: float, axis: str) -> BinaryPovm:
    if axis not in AXES:
        raise ValueError(f"axis must be 'Z' or 'X', got {axis!r}")
    eta = _check_eta(eta)
    sigma = AXES[axis]
    return BinaryPovm(0.5 * (I2 + eta * sigma), 0.5 * (I2 - eta * sigma))


def party_povm(setting, y: int) -> BinaryPovm:
    """POVM used by a branch party with the given settings on input ``y``."""
    if y == 0:
        return unsharp_pauli(setting.eta_z, "Z")
    return unsharp_pauli(setting.eta_x, "X")


def kraus_from_povm(p: BinaryPovm) -> KrausPair:
    """Lueders instrument: each Kraus operator is the PSD root of its effect."""
    return KrausPair(psd_sqrt_2x2(p.effect0), psd_sqrt_2x2(p.effect1))


def rotate_povm(p: BinaryPovm, u) -> BinaryPovm:
    """Effects ``U^dag E U``: measure ``p`` after rotating the system by ``U``."""
    u = np.asarray(u, dtype=complex)
    ud = dagger(u)
    return BinaryPovm(ud @ p.effect0 @ u, ud @ p.effect1 @ u)


def hwp_to_eta(angle: float) -> float:
    """Sharpness ``cos(2*angle)`` realised by the meter preparation angle."""
    return math.cos(2.0 * angle)


def eta_to_hwp(eta: float) -> float:
    return 0.5 * math.acos(_check_eta(eta))


def _check_hwp(angle: float) -> float:
    angle = float(angle)
    if not 0.0 <= angle <= math.pi / 4 + 1e-15:
        raise ValueError(f"wave-plate angle {angle} outside [0, pi/4]")
    return angle


def cnot_unitary() -> np.ndarray:
    """CNOT on (system, meter), system is the control; ordering system (x) meter."""
    p0 = np.diag([1, 0]).astype(complex)
    p1 = np.diag([0, 1]).astype(complex)
    return kron_all(p0, I2) + kron_all(p1, SX)


def meter_rotation(angle: float) -> np.ndarray:
    """Real rotation taking |0> to cos(a)|0> + sin(a)|1>."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _meter_block(u: np.ndarray, out: int, inp: int) -> np.ndarray:
    """System operator ``<out_m| U |inp_m>`` for ``U`` on system (x) meter."""
    return u.reshape(2, 2, 2, 2)[:, out, :, inp]


def cnot_kraus(angle: float) -> KrausPair:
    """Kraus pair of the meter-coupling circuit: prepare meter, CNOT, read meter."""
    angle = _check_hwp(angle)
    u = cnot_unitary() @ kron_all(I2, meter_rotation(angle))
    return KrausPair(_meter_block(u, 0, 0), _meter_block(u, 1, 0))


def sagnac_unitary(angle: float) -> np.ndarray:
    """Two-qubit unitary of the interferometric implementation (system (x) meter)."""
    c, s = math.cos(angle), math.sin(angle)
    ket = np.eye(2, dtype=complex)

    def op(i, j):
        return np.outer(ket[i], ket[j])

    return (
        kron_all(c * op(0, 0) + s * op(1, 1), op(0, 0))
        + kron_all(-s * op(0, 1) + c * op(1, 0), op(0, 1))
        + kron_all(s * op(0, 0) + c * op(1, 1), op(1, 0))
        + kron_all(c * op(0, 1) - s * op(1, 0), op(1, 1))
    )


def sagnac_kraus(angle: float) -> KrausPair:
    """Kraus pair read off the interferometer unitary with the meter starting in |0>.

    ``M0 = cos(a)|0><0| + sin(a)|1><1|`` and ``M1 = sin(a)|0><0| + cos(a)|1><1|``;
    together they realise ``unsharp_pauli(cos(2a), "Z")``.
    """
    angle = _check_hwp(angle)
    u = sagnac_unitary(angle)
    return KrausPair(_meter_block(u, 0, 0), _meter_block(u, 1, 0))


def alice_observable(theta: float, x: int) -> np.ndarray:
    return math.cos(theta) * SZ + (-1) ** x * math.sin(theta) * SX


def alice_projector(theta: float, x: int, a_k: int) -> np.ndarray:
    """Sharp projector Alice applies to one branch qubit."""
    return 0.5 * (I2 + (-1) ** a_k * alice_observable(theta, x))


@dataclass(frozen=True)
class CentralMeasurement:
    """Alice's measurement in factorised form: per-branch projectors + parity wiring.

    ``projectors[k][x][a_k]`` is the projector on branch ``k``'s qubit.
    """

    projectors: tuple

    @property
    def m(self) -> int:
        return len(self.projectors)

    @staticmethod
    def wire(a_bits) -> int:
        out = 0
        for bit in a_bits:
            out ^= int(bit)
        return out

    def effect(self, x: int, a: int) -> np.ndarray:
        dim = 2**self.m
        total = np.zeros((dim, dim), dtype=complex)
        for bits in itertools.product((0, 1), repeat=self.m):
            if self.wire(bits) != a:
                continue
            total += kron_all(*(self.projectors[k][x][bits[k]] for k in range(self.m)))
        return total


def central_measurement(config: NetworkConfig) -> CentralMeasurement:
    proj = tuple(
        tuple(tuple(alice_projector(config.theta, x, ak) for ak in (0, 1)) for x in (0, 1))
        for _ in range(config.m)
    )
    return CentralMeasurement(proj)


def central_effect(config: NetworkConfig, x: int, a: int) -> np.ndarray:
    """Full ``2**m``-dimensional effect on Alice's qubits (branch 0 leftmost)."""
    return central_measurement(config).effect(x, a)
