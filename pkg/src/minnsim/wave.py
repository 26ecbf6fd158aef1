"""Diffractive propagation between metasurface layers.

A stacked metasurface is a sequence of planar element grids; propagation
between consecutive layers uses a Rayleigh-Sommerfeld-style coupling
coefficient, and each layer applies a trainable unit-modulus phase response
per element. The composition collapses to a single end-to-end transfer
matrix that is differentiable in all phases.
"""

import numpy as np

from . import tensor as tc
from .tensor import Tensor

SPEED_OF_LIGHT = 299_792_458.0

# 28 GHz defaults: half-wavelength element pitch, five-wavelength layer gaps
DEFAULT_WAVELENGTH = SPEED_OF_LIGHT / 28e9
DEFAULT_PITCH_WAVELENGTHS = 0.5
DEFAULT_SPACING_WAVELENGTHS = 5.0


class GeometryError(ValueError):
    """Element or grid placement violates the propagation geometry."""


class ElementGrid:
    """Planar rows x cols grid of radiating elements.

    Args:
        rows, cols: element counts, >= 1.
        pitch: distance between adjacent element centers, meters.
        element_area: radiating area per element, m^2 (at most pitch^2).
        origin: 3-D position of the grid center, meters.
        normal: plane normal (normalized internally).
    """

    def __init__(self, rows, cols, pitch, element_area=None, origin=(0.0, 0.0, 0.0),
                 normal=(0.0, 0.0, 1.0)):
        if rows < 1 or cols < 1:
            raise GeometryError(f"grid needs at least one element, got {rows}x{cols}")
        if pitch <= 0:
            raise GeometryError(f"pitch must be positive, got {pitch}")
        if element_area is None:
            element_area = pitch * pitch
        if element_area > pitch * pitch * (1 + 1e-12):
            raise GeometryError(f"element_area {element_area} exceeds pitch^2 {pitch * pitch}")
        n = np.asarray(normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise GeometryError("normal must be a nonzero vector")
        self.rows = int(rows)
        self.cols = int(cols)
        self.pitch = float(pitch)
        self.element_area = float(element_area)
        self.origin = np.asarray(origin, dtype=float)
        self.normal = n / norm

    @property
    def n_elements(self):
        return self.rows * self.cols

    def positions(self):
        """(n_elements, 3) element centers, row-major order."""
        n = self.normal
        ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(ref, n)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        r = (np.arange(self.rows) - (self.rows - 1) / 2.0) * self.pitch
        c = (np.arange(self.cols) - (self.cols - 1) / 2.0) * self.pitch
        rr, cc = np.meshgrid(r, c, indexing="ij")
        return self.origin + cc.reshape(-1, 1) * u + rr.reshape(-1, 1) * v

    def to_dict(self):
        return {
            "rows": self.rows, "cols": self.cols, "pitch": self.pitch,
            "element_area": self.element_area,
            "origin": [float(x) for x in self.origin],
            "normal": [float(x) for x in self.normal],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _coupling_kernel(delta, src_area, src_normal, wavelength):
    # one code path for scalars and pairwise stacks keeps results bit-identical
    d = np.sqrt((delta * delta).sum(axis=-1))
    cos_chi = (delta * src_normal).sum(axis=-1) / d
    amplitude = src_area * cos_chi / d
    return amplitude * (1.0 / (2.0 * np.pi * d) - 1j / wavelength) * np.exp(2j * np.pi * d / wavelength)


def coupling_coefficient(src_pos, src_area, src_normal, dst_pos, wavelength):
    """Complex coupling between a source element and a destination point.

    w = (A cos(chi) / d) * (1/(2 pi d) - j/lambda) * exp(j 2 pi d / lambda)
    with d the source-destination distance and chi the angle between that
    direction and the source normal.
    """
    if wavelength <= 0:
        raise GeometryError(f"wavelength must be positive, got {wavelength}")
    delta = np.asarray(dst_pos, dtype=float) - np.asarray(src_pos, dtype=float)
    if (delta == 0).all():
        raise GeometryError("source and destination elements coincide")
    return complex(_coupling_kernel(delta, src_area, np.asarray(src_normal, dtype=float), wavelength))


def propagation_matrix(src, dst, wavelength):
    """Constant |dst| x |src| matrix of pairwise coupling coefficients."""
    sp = src.positions()
    dp = dst.positions()
    if _planes_coincide(src, dst):
        raise GeometryError("source and destination grids lie in the same plane")
    delta = dp[:, None, :] - sp[None, :, :]          # (|dst|, |src|, 3)
    if np.any((delta == 0).all(axis=2)):
        raise GeometryError("grids share an element position")
    return _coupling_kernel(delta, src.element_area, src.normal, wavelength)


def _planes_coincide(a, b):
    if abs(abs(np.dot(a.normal, b.normal)) - 1.0) > 1e-9:
        return False
    return abs(np.dot(b.origin - a.origin, a.normal)) < 1e-12


class SimStack:
    """Stacked metasurface: ordered element grids plus per-layer phase vectors.

    The phase vectors are trainable real tensors (one entry per element,
    interpreted mod 2 pi). Inter-layer propagation matrices depend only on
    geometry and are cached on first use.
    """

    def __init__(self, layers, layer_spacing, wavelength=DEFAULT_WAVELENGTH, phases=None):
        if not layers:
            raise GeometryError("a stack needs at least one layer")
        if layer_spacing <= 0:
            raise GeometryError(f"layer_spacing must be positive, got {layer_spacing}")
        if wavelength <= 0:
            raise GeometryError(f"wavelength must be positive, got {wavelength}")
        self.layers = list(layers)
        self.layer_spacing = float(layer_spacing)
        self.wavelength = float(wavelength)
        if phases is None:
            phases = [np.zeros(g.n_elements) for g in self.layers]
        self.phases = []
        for k, ph in enumerate(phases):
            ph = ph if isinstance(ph, Tensor) else Tensor(np.asarray(ph, dtype=float), requires_grad=True)
            if ph.shape != (self.layers[k].n_elements,):
                raise GeometryError(
                    f"layer {k} has {self.layers[k].n_elements} elements but {ph.size} phases")
            self.phases.append(ph)
        self._prop = None

    @classmethod
    def uniform(cls, n_layers, rows, cols, wavelength=DEFAULT_WAVELENGTH,
                pitch=None, layer_spacing=None, first_layer_origin=(0.0, 0.0, 0.0),
                normal=(0.0, 0.0, 1.0), rng=None):
        """Build a stack of identical square grids along the normal direction."""
        pitch = wavelength * DEFAULT_PITCH_WAVELENGTHS if pitch is None else pitch
        layer_spacing = wavelength * DEFAULT_SPACING_WAVELENGTHS if layer_spacing is None else layer_spacing
        nvec = np.asarray(normal, dtype=float)
        nvec = nvec / np.linalg.norm(nvec)
        origin = np.asarray(first_layer_origin, dtype=float)
        grids = [ElementGrid(rows, cols, pitch, origin=origin + k * layer_spacing * nvec, normal=nvec)
                 for k in range(n_layers)]
        phases = None
        if rng is not None:
            phases = [rng.uniform(0.0, 2.0 * np.pi, rows * cols) for _ in range(n_layers)]
        return cls(grids, layer_spacing, wavelength, phases=phases)

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def total_phase_count(self):
        return sum(g.n_elements for g in self.layers)

    def propagation_matrices(self):
        if self._prop is None:
            self._prop = [propagation_matrix(self.layers[k], self.layers[k + 1], self.wavelength)
                          for k in range(self.n_layers - 1)]
        return self._prop

    def set_phases(self, flat):
        """Load phases from one flat real vector (layer order, row-major)."""
        flat = np.asarray(flat, dtype=float).reshape(-1)
        if flat.size != self.total_phase_count:
            raise GeometryError(f"expected {self.total_phase_count} phases, got {flat.size}")
        off = 0
        for ph in self.phases:
            ph.data[...] = flat[off:off + ph.size]
            off += ph.size

    def to_dict(self):
        return {
            "layers": [g.to_dict() for g in self.layers],
            "layer_spacing": self.layer_spacing,
            "wavelength": self.wavelength,
        }

    @classmethod
    def from_dict(cls, d):
        return cls([ElementGrid.from_dict(g) for g in d["layers"]],
                   d["layer_spacing"], d["wavelength"])


def sim_transfer(stack, phase_override=None):
    """End-to-end transfer matrix of a stack, |last| x |first|, as a Tensor.

    Each layer applies diag(exp(j theta_k)); consecutive layers are joined
    by their propagation matrices. ``phase_override`` replaces the stored
    phase tensors (a list, one entry per layer); entries may carry a
    leading batch dimension, which yields a batched (B, |last|, |first|)
    transfer matrix.
    """
    phases = stack.phases if phase_override is None else phase_override
    props = stack.propagation_matrices()
    responses = [tc.exp_j_theta(ph if isinstance(ph, Tensor) else Tensor(ph)) for ph in phases]

    def as_row(r):
        return tc.reshape(r, (1, -1) if r.ndim == 1 else (r.shape[0], 1, r.shape[-1]))

    def as_col(r):
        return tc.reshape(r, (-1, 1) if r.ndim == 1 else (r.shape[0], r.shape[-1], 1))

    if stack.n_layers == 1:
        return tc.mul(Tensor(np.eye(stack.layers[0].n_elements)), as_row(responses[0]))
    out = tc.mul(Tensor(props[0]), as_row(responses[0]))        # P_{1->2} diag(resp_1)
    out = tc.mul(as_col(responses[1]), out)
    for k in range(2, stack.n_layers):
        out = tc.matmul(Tensor(props[k - 1]), out)
        out = tc.mul(as_col(responses[k]), out)
    return out


def energy_detect(field):
    """Received power per receptor element, |field_c|^2 (real, differentiable)."""
    field = field if isinstance(field, Tensor) else Tensor(field)
    return tc.abs2(field)


def predicted_class(powers):
    """Index of the receptor with the highest power; ties go to the lowest index."""
    powers = powers.data if isinstance(powers, Tensor) else np.asarray(powers)
    return int(np.argmax(powers)) if powers.ndim == 1 else np.argmax(powers, axis=-1)
