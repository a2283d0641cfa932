"""Planar angle arithmetic and SE(2) composition helpers."""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(a):
    """Wrap an angle (scalar or ndarray) into (-pi, pi]."""
    w = (np.asarray(a, dtype=float) + np.pi) % TWO_PI - np.pi
    if w.ndim == 0:
        return np.pi if w == -np.pi else float(w)
    w[w == -np.pi] = np.pi
    return w


def rot2(psi: float) -> np.ndarray:
    """2x2 rotation matrix for a heading angle."""
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s], [s, c]])


def se2_compose(a, b) -> np.ndarray:
    """Compose two planar poses (x, y, psi): world pose of b expressed in a's frame."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[2]), np.sin(a[2])
    return np.array([
        a[0] + c * b[0] - s * b[1],
        a[1] + s * b[0] + c * b[1],
        wrap_angle(a[2] + b[2]),
    ])


def se2_between(a, b) -> np.ndarray:
    """Relative pose of b in a's frame, i.e. inverse(a) composed with b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[2]), np.sin(a[2])
    dx, dy = b[0] - a[0], b[1] - a[1]
    return np.array([c * dx + s * dy, -s * dx + c * dy, wrap_angle(b[2] - a[2])])


def se2_inverse(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a[2]), np.sin(a[2])
    return np.array([-(c * a[0] + s * a[1]), -(-s * a[0] + c * a[1]), wrap_angle(-a[2])])
