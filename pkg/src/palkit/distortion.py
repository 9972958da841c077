"""Progressive-lens displacement fields and derived per-pixel distortion maps.

Coordinate conventions
----------------------
A gaze direction is expressed in tangent-plane coordinates (x, y): the
intersection of the view ray with the plane z = 1 one unit in front of the
eye, so straight ahead is (0, 0).  A displacement field maps every grid
point (x, y) to its apparent position (x_d, y_d) = (x + dx, y + dy) when
seen through the lens; dx/dy are stored as offsets, not absolute displaced
coordinates.

Grids are row-major with shape (height_px, width_px).  Row 0 is the top of
the visual field (y = +domain_half_extent), column 0 the left edge
(x = -domain_half_extent).  Nodes span the domain inclusively on both axes.
The right-eye convention is used throughout: the nasal side is -x.

Field files use the PALDSTF1 layout: 8-byte magic ``PALDSTF1``, u32 width,
u32 height, f64 domain half extent (all little-endian), then width*height
(dx, dy) pairs of little-endian f32, row-major, top row first.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LensSpec",
    "DistortionField",
    "DecompositionMaps",
    "FieldDecodeError",
    "OutOfDomainError",
    "synth_pal_field",
    "angular_displacement",
    "displacement_map",
    "decompose",
    "sample_bilinear",
    "sample_bilinear_masked",
    "encode_field",
    "decode_field",
    "write_pfm",
    "read_pfm",
]

MAGIC = b"PALDSTF1"

# Distance from spectacle plane to the eye's centre of rotation, used to
# convert millimetres on the lens into tangent units.  12 mm vertex distance
# plus a nominal 13 mm from cornea to rotation centre gives 25 mm.
EYE_ROTATION_OFFSET_MM = 13.0

# Sigmoid steepness such that the 10%-90% power progression spans one
# corridor length in tangent units.
_CORRIDOR_STEEPNESS = 2.0 * math.log(9.0)

# Shape-factor scale: plus lenses displace more than minus lenses of equal
# magnitude (thickness/base-curve asymmetry).  b = base_curve / (100*(n-1)).
_SHAPE_FACTOR_DENOM = 100.0

# Couplings of the lateral-astigmatism term into the displacement vector.
# The cross term is what makes skew and rotation nonzero off the corridor.
_ASTIG_DIRECT = 0.5
_ASTIG_CROSS = 0.25


class FieldDecodeError(ValueError):
    """Raised when a PALDSTF1 payload cannot be decoded.

    ``offset`` is the byte position of the first offending datum.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class OutOfDomainError(ValueError):
    """Raised when a sample point falls outside the field domain."""


@dataclass(frozen=True)
class LensSpec:
    """Prescription and geometry parameters of one progressive lens.

    Powers are in diopters, lengths in millimetres, the pantoscopic angle
    in degrees.  ``addition_power`` must be >= 0, ``corridor_length_mm``
    > 0 and ``refractive_index`` > 1.
    """

    sphere_power: float
    addition_power: float
    corridor_length_mm: float = 14.0
    base_curve: float = 5.28
    refractive_index: float = 1.5
    pantoscopic_angle_deg: float = 7.5
    vertex_distance_mm: float = 12.0
    nasal_inset_mm: float = 2.5

    def __post_init__(self):
        values = [
            self.sphere_power, self.addition_power, self.corridor_length_mm,
            self.base_curve, self.refractive_index, self.pantoscopic_angle_deg,
            self.vertex_distance_mm, self.nasal_inset_mm,
        ]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("lens spec contains non-finite values")
        if self.addition_power < 0:
            raise ValueError("addition_power must be >= 0")
        if self.corridor_length_mm <= 0:
            raise ValueError("corridor_length_mm must be > 0")
        if self.refractive_index <= 1:
            raise ValueError("refractive_index must be > 1")


@dataclass(frozen=True)
class DistortionField:
    """Gridded displacement offsets over tangent-plane coordinates."""

    width_px: int
    height_px: int
    domain_half_extent: float
    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError("field grid must have at least one cell per axis")
        if not (self.domain_half_extent > 0):
            raise ValueError("domain_half_extent must be > 0")
        shape = (self.height_px, self.width_px)
        for name, grid in (("dx", self.dx), ("dy", self.dy)):
            if grid.shape != shape:
                raise ValueError(f"{name} has shape {grid.shape}, expected {shape}")
            if not np.all(np.isfinite(grid)):
                raise ValueError(f"{name} contains non-finite entries")

    def grid_coords(self):
        """Return (x, y) coordinate grids matching the dx/dy layout."""
        return _grid_coords(self.width_px, self.height_px, self.domain_half_extent)

    def displaced_coords(self):
        """Return the displaced coordinate grids (x_d, y_d)."""
        x, y = self.grid_coords()
        return x + self.dx, y + self.dy


@dataclass(frozen=True)
class DecompositionMaps:
    """Per-pixel distortion maps derived from a displacement field.

    Cells with a degenerate Jacobian (det <= 0) hold NaN in the four
    derivative-based maps and are flagged in ``degenerate_mask``;
    ``displacement_deg`` is always finite.
    """

    displacement_deg: np.ndarray
    magnification: np.ndarray
    aspect: np.ndarray
    skew_deg: np.ndarray
    rotation_deg: np.ndarray
    degenerate_mask: np.ndarray = field(repr=False, default=None)

    @property
    def degenerate_count(self):
        return 0 if self.degenerate_mask is None else int(self.degenerate_mask.sum())

    def as_dict(self):
        return {
            "displacement_deg": self.displacement_deg,
            "magnification": self.magnification,
            "aspect": self.aspect,
            "skew_deg": self.skew_deg,
            "rotation_deg": self.rotation_deg,
        }


def _grid_coords(width, height, half_extent):
    if width > 1:
        xs = np.linspace(-half_extent, half_extent, width)
    else:
        xs = np.zeros(1)
    if height > 1:
        ys = np.linspace(half_extent, -half_extent, height)
    else:
        ys = np.zeros(1)
    return np.meshgrid(xs, ys)


def synth_pal_field(spec, width_px, height_px, domain_half_extent=1.0):
    """Synthesise a parametric progressive-lens displacement field.

    The local power P(x, y) follows a sigmoid corridor from the distance
    prescription (top) to distance + addition (bottom), with the near zone
    centre shifted toward the nasal side (-x for the right eye).  Image
    displacement is the local prismatic deviation (power times decentration
    from the umbilical line), with a shape-factor asymmetry so plus powers
    displace more than minus, plus a lateral astigmatism term growing with
    distance from the corridor.

    Parameters
    ----------
    spec : LensSpec
    width_px, height_px : int
        Grid resolution; must be >= 1.
    domain_half_extent : float
        Half-width of the tangent-plane domain, symmetric per axis.

    Returns
    -------
    DistortionField
        Deterministic field for the given spec and grid.
    """
    if width_px < 1 or height_px < 1:
        raise ValueError("zero-size grid")
    if not (domain_half_extent > 0) or not math.isfinite(domain_half_extent):
        raise ValueError("domain_half_extent must be finite and > 0")

    x, y = _grid_coords(width_px, height_px, domain_half_extent)

    z_mm = spec.vertex_distance_mm + EYE_ROTATION_OFFSET_MM
    z_m = z_mm / 1000.0
    corridor_tan = spec.corridor_length_mm / z_mm
    inset_tan = spec.nasal_inset_mm / z_mm
    y_mid = -math.tan(math.radians(spec.pantoscopic_angle_deg))
    k = _CORRIDOR_STEEPNESS / corridor_tan

    # Power progression 0 -> 1 from distance (top) to near (bottom) zone.
    sig = 1.0 / (1.0 + np.exp(np.clip(k * (y - y_mid), -500, 500)))
    power = spec.sphere_power + spec.addition_power * sig
    dpower_dy = -spec.addition_power * k * sig * (1.0 - sig)

    shape_factor = spec.base_curve / (_SHAPE_FACTOR_DENOM * (spec.refractive_index - 1.0))
    power_eff = power * (1.0 + shape_factor * power)

    # Umbilical line, drifting nasally with the power progression.
    x_c = -inset_tan * sig
    rho_x = (x - x_c) * z_m
    rho_y = (y - y_mid) * z_m

    # Minkwitz-style surface astigmatism: grows with the power gradient
    # along the corridor and the lateral offset from it (diopters).
    astig = 2.0 * dpower_dy * (x - x_c)

    dx = power_eff * rho_x + _ASTIG_DIRECT * astig * rho_x
    dy = power_eff * rho_y - _ASTIG_CROSS * astig * rho_x

    return DistortionField(width_px, height_px, float(domain_half_extent), dx, dy)


def angular_displacement(x, y, x_d, y_d):
    """Angular displacement, in degrees, between a grid point and its image.

    Both points are tangent-plane coordinates; the result is the angle
    between the 3D view rays (x, y, 1) and (x_d, y_d, 1).  The arccos
    argument is clamped to [-1, 1] to absorb rounding at zero displacement.
    Accepts scalars or arrays.
    """
    num = x_d * x + y_d * y + 1.0
    den = np.sqrt((x_d * x_d + y_d * y_d + 1.0) * (x * x + y * y + 1.0))
    cosang = np.clip(num / den, -1.0, 1.0)
    return np.degrees(np.arccos(cosang))


def displacement_map(fld):
    """Elementwise angular displacement of a field, in degrees."""
    x, y = fld.grid_coords()
    return angular_displacement(x, y, x + fld.dx, y + fld.dy)


def decompose(fld):
    """Decompose a field into displacement/magnification/aspect/skew/rotation.

    The Jacobian J of (x, y) -> (x_d, y_d) is estimated with central finite
    differences in the interior and one-sided differences at the borders,
    then factored as J = R(theta) * U with U upper-triangular and positive
    diagonal (a, b), off-diagonal s.  Outputs per cell: rotation theta in
    degrees, magnification sqrt(a*b), aspect a/b, skew atan(s/b) in degrees.
    Cells where det J <= 0 are flagged (NaN) and counted.

    Requires at least a 3x3 grid so central differences have neighbours.
    """
    if fld.width_px < 3 or fld.height_px < 3:
        raise ValueError("decompose needs width_px and height_px >= 3")

    x, y = fld.grid_coords()
    xd, yd = fld.displaced_coords()
    xs = x[0, :]
    ys = y[:, 0]

    dxd_dy, dxd_dx = np.gradient(xd, ys, xs)
    dyd_dy, dyd_dx = np.gradient(yd, ys, xs)

    j11, j12 = dxd_dx, dxd_dy
    j21, j22 = dyd_dx, dyd_dy

    a = np.hypot(j11, j21)
    theta = np.arctan2(j21, j11)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(a > 0, j11 / np.where(a > 0, a, 1.0), 1.0)
        s = np.where(a > 0, j21 / np.where(a > 0, a, 1.0), 0.0)
        u12 = c * j12 + s * j22
        b = c * j22 - s * j12

        degenerate = ~((a > 0) & (b > 0))
        magnification = np.where(degenerate, np.nan, np.sqrt(np.abs(a * b)))
        aspect = np.where(degenerate, np.nan, a / np.where(b != 0, b, 1.0))
        skew_deg = np.where(degenerate, np.nan,
                            np.degrees(np.arctan(u12 / np.where(b != 0, b, 1.0))))
        rotation_deg = np.where(degenerate, np.nan, np.degrees(theta))

    return DecompositionMaps(
        displacement_deg=angular_displacement(x, y, xd, yd),
        magnification=magnification,
        aspect=aspect,
        skew_deg=skew_deg,
        rotation_deg=rotation_deg,
        degenerate_mask=degenerate,
    )


def _bilinear(grid, half_extent, x, y):
    h, w = grid.shape
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = (np.abs(x) <= half_extent) & (np.abs(y) <= half_extent) \
        & np.isfinite(x) & np.isfinite(y)

    # Fractional indices; row 0 is y = +half_extent.
    u = (x + half_extent) / (2 * half_extent) * (w - 1) if w > 1 else np.zeros_like(x)
    v = (half_extent - y) / (2 * half_extent) * (h - 1) if h > 1 else np.zeros_like(y)
    u = np.clip(u, 0, w - 1)
    v = np.clip(v, 0, h - 1)
    j0 = np.clip(np.floor(u).astype(int), 0, max(w - 2, 0))
    i0 = np.clip(np.floor(v).astype(int), 0, max(h - 2, 0))
    j1 = np.minimum(j0 + 1, w - 1)
    i1 = np.minimum(i0 + 1, h - 1)
    fu = u - j0
    fv = v - i0

    vals = (grid[i0, j0] * (1 - fu) * (1 - fv)
            + grid[i0, j1] * fu * (1 - fv)
            + grid[i1, j0] * (1 - fu) * fv
            + grid[i1, j1] * fu * fv)
    return vals, inside


def sample_bilinear(grid, half_extent, x, y):
    """Bilinear interpolation of a map grid at tangent coordinates (x, y).

    Raises OutOfDomainError if any query point lies outside
    [-half_extent, +half_extent] on either axis.
    """
    vals, inside = _bilinear(grid, half_extent, x, y)
    if not np.all(inside):
        raise OutOfDomainError(
            f"sample point outside domain half-extent {half_extent}")
    return vals if vals.ndim else float(vals)


def sample_bilinear_masked(grid, half_extent, x, y):
    """Vectorised bilinear sampling returning (values, in_domain_mask).

    Out-of-domain entries hold undefined values and must be masked by the
    caller; this is the skip-frame path used by exposure accumulation.
    """
    return _bilinear(grid, half_extent, x, y)


def encode_field(fld):
    """Serialise a field to the PALDSTF1 byte layout (lossless for f32 data)."""
    header = MAGIC + struct.pack(
        "<IId", fld.width_px, fld.height_px, fld.domain_half_extent)
    pairs = np.empty((fld.height_px, fld.width_px, 2), dtype="<f4")
    pairs[..., 0] = fld.dx
    pairs[..., 1] = fld.dy
    return header + pairs.tobytes()


def decode_field(data):
    """Decode PALDSTF1 bytes into a DistortionField.

    Raises FieldDecodeError naming the byte offset on bad magic, truncated
    payloads, or non-finite values.
    """
    if len(data) < 8 or data[:8] != MAGIC:
        raise FieldDecodeError("bad magic, expected PALDSTF1", 0)
    if len(data) < 24:
        raise FieldDecodeError("truncated header", len(data))
    width, height, half_extent = struct.unpack_from("<IId", data, 8)
    if width < 1 or height < 1:
        raise FieldDecodeError("zero-size grid", 8)
    if not (half_extent > 0) or not math.isfinite(half_extent):
        raise FieldDecodeError("invalid domain half extent", 16)
    expected = 24 + 8 * width * height
    if len(data) < expected:
        raise FieldDecodeError("truncated payload", len(data))
    if len(data) > expected:
        raise FieldDecodeError("trailing bytes after payload", expected)
    pairs = np.frombuffer(data, dtype="<f4", offset=24).reshape(height, width, 2)
    finite = np.isfinite(pairs)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise FieldDecodeError("non-finite value", 24 + 4 * bad)
    dx = pairs[..., 0].astype(np.float64)
    dy = pairs[..., 1].astype(np.float64)
    return DistortionField(int(width), int(height), float(half_extent), dx, dy)


def write_pfm(grid, path):
    """Write a 2D map grid as a grayscale PFM (little-endian, scale -1.0).

    PFM scanlines run bottom-to-top, so the top-row-first grid is flipped
    on write.
    """
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 2:
        raise ValueError("PFM export expects a 2D grid")
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(grid).astype("<f4").tobytes())


def read_pfm(path):
    """Read a grayscale PFM written by write_pfm; returns a top-row-first grid."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag != b"Pf":
            raise ValueError(f"not a grayscale PFM: header {tag!r}")
        w, h = (int(t) for t in f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(4 * w * h), dtype="<f4" if scale < 0 else ">f4")
    if data.size != w * h:
        raise ValueError("truncated PFM payload")
    return np.flipud(data.reshape(h, w)).astype(np.float64)
