//! Hyperbolic plane primitives: Möbius maps on the upper half plane H,
//! the Cayley transform to the unit disk U, boundary angular shifts of
//! isometries, and universal-cover lifts of affine maps and rotations.
//!
//! Conventions used throughout the crate:
//! * A Möbius map is stored as a real matrix [a b; c d] with det = 1
//!   acting by z ↦ (az + b)/(cz + d).
//! * The Cayley map is U(z) = (i - z)/(i + z), sending i ↦ 0 and ∞ ↦ -1.
//! * The angular shift of an isometry T between boundary points v, w of
//!   the disk (|v| = |w| = 1) is
//!       ash(T, v, w) = 2 [Arg(1 - σ w̄) - Arg(1 - σ v̄)],   σ = T⁻¹(0),
//!   i.e. the change of the angular distance from v to w under T,
//!   realized on the continuous branch with |ash| < 2π.
//! * A lift of a disk-rotation by α acts on the real line as φ ↦ φ + α.
//!   The lift of an affine map A(a,b): z ↦ a(z + b) is the unique
//!   continuous increasing lift fixing π (A fixes the boundary point ∞,
//!   which the Cayley map sends to -1 = e^{iπ}).

use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

/// Full angle 2π; phase functions live on ℝ and wind in multiples of this.
pub const TAU: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("Möbius map must have positive determinant, got {0}")]
    NonPositiveDeterminant(f64),
    #[error("affine map requires a > 0, got {0}")]
    NonPositiveScale(f64),
    #[error("degenerate map: boundary evaluation point σ has |σ| = {0} ≥ 1")]
    DegenerateMap(f64),
    #[error("point expected strictly inside the unit disk, got |w| = {0}")]
    NotInteriorPoint(f64),
    #[error("point expected on the unit circle, got |w| = {0}")]
    NotBoundaryPoint(f64),
}

/// A point of the closed upper half plane plus the boundary point at infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HalfPlanePoint {
    Finite(Complex64),
    Infinity,
}

impl HalfPlanePoint {
    pub fn real(x: f64) -> Self {
        HalfPlanePoint::Finite(Complex64::new(x, 0.0))
    }
}

/// Orientation-preserving Möbius map of the upper half plane,
/// normalized to determinant 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobiusMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl MobiusMap {
    /// Builds z ↦ (az+b)/(cz+d); requires ad - bc > 0, normalizes det to 1.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, GeometryError> {
        let det = a * d - b * c;
        if !(det > 0.0) || !det.is_finite() {
            return Err(GeometryError::NonPositiveDeterminant(det));
        }
        let s = det.sqrt();
        Ok(MobiusMap {
            a: a / s,
            b: b / s,
            c: c / s,
            d: d / s,
        })
    }

    pub fn identity() -> Self {
        MobiusMap {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
        }
    }

    /// The affine isometry A(a, b): z ↦ a(z + b), a > 0.
    pub fn affine(a: f64, b: f64) -> Result<Self, GeometryError> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(GeometryError::NonPositiveScale(a));
        }
        let s = a.sqrt();
        Ok(MobiusMap {
            a: s,
            b: s * b,
            c: 0.0,
            d: 1.0 / s,
        })
    }

    /// Rotation of the disk by angle α about 0, conjugated to the half plane
    /// (fixes i). Q(π) is the half-turn z ↦ -1/z.
    pub fn rotation(alpha: f64) -> Self {
        let (s, c) = (alpha / 2.0).sin_cos();
        MobiusMap {
            a: c,
            b: s,
            c: -s,
            d: c,
        }
    }

    /// Projective evaluation; correct on the open half plane, the real
    /// boundary and ∞ (pole of the map ↦ ∞).
    pub fn apply(&self, z: HalfPlanePoint) -> HalfPlanePoint {
        match z {
            HalfPlanePoint::Infinity => {
                if self.c == 0.0 {
                    HalfPlanePoint::Infinity
                } else {
                    HalfPlanePoint::real(self.a / self.c)
                }
            }
            HalfPlanePoint::Finite(z) => {
                let den = self.c * z + self.d;
                if den.norm_sqr() == 0.0 {
                    HalfPlanePoint::Infinity
                } else {
                    HalfPlanePoint::Finite((self.a * z + self.b) / den)
                }
            }
        }
    }

    /// Composition "self first, then next" (matrix product M(next)·M(self)).
    pub fn then(&self, next: &MobiusMap) -> MobiusMap {
        MobiusMap {
            a: next.a * self.a + next.b * self.c,
            b: next.a * self.b + next.b * self.d,
            c: next.c * self.a + next.d * self.c,
            d: next.c * self.b + next.d * self.d,
        }
    }

    /// Inverse map; with det = 1 this is [d -b; -c a].
    pub fn inverse(&self) -> MobiusMap {
        MobiusMap {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    /// σ = (Cayley image of) T⁻¹(0): the disk point whose angular-shift
    /// kernel represents this map on the boundary circle.
    pub fn boundary_kernel_point(&self) -> Result<Complex64, GeometryError> {
        // T⁻¹(0 on the circle) in half-plane coordinates is the boundary
        // point mapped from the disk origin preimage; equivalently take the
        // Cayley image of T⁻¹(i).
        let z = match self.inverse().apply(HalfPlanePoint::Finite(Complex64::i())) {
            HalfPlanePoint::Finite(z) => cayley(HalfPlanePoint::Finite(z)),
            HalfPlanePoint::Infinity => Complex64::new(-1.0, 0.0),
        };
        if z.norm() >= 1.0 {
            return Err(GeometryError::DegenerateMap(z.norm()));
        }
        Ok(z)
    }
}

/// Cayley transform H → U, z ↦ (i - z)/(i + z); ∞ ↦ -1.
pub fn cayley(z: HalfPlanePoint) -> Complex64 {
    match z {
        HalfPlanePoint::Infinity => Complex64::new(-1.0, 0.0),
        HalfPlanePoint::Finite(z) => {
            let i = Complex64::i();
            (i - z) / (i + z)
        }
    }
}

/// Inverse Cayley transform U → H, w ↦ i(1 - w)/(1 + w); -1 ↦ ∞.
pub fn cayley_inverse(w: Complex64) -> HalfPlanePoint {
    let den = Complex64::new(1.0, 0.0) + w;
    if den.norm_sqr() == 0.0 {
        HalfPlanePoint::Infinity
    } else {
        HalfPlanePoint::Finite(Complex64::i() * (Complex64::new(1.0, 0.0) - w) / den)
    }
}

/// Angular shift ash(T, v, w) of the isometry T between boundary points
/// v, w of the disk. Continuous in (T, v, w) wherever defined; principal
/// branch with |ash| < 2π; ash(id, ·, ·) = 0.
pub fn angular_shift(t: &MobiusMap, v: Complex64, w: Complex64) -> Result<f64, GeometryError> {
    check_boundary(v)?;
    check_boundary(w)?;
    let sigma = t.boundary_kernel_point()?;
    // |σ| < 1 and |v| = |w| = 1 keep both factors in the right half plane,
    // so each Arg below lies in (-π/2, π/2) and the result is continuous.
    let one = Complex64::new(1.0, 0.0);
    Ok(2.0 * ((one - sigma * w.conj()).arg() - (one - sigma * v.conj()).arg()))
}

/// The same angular shift computed from the equivalent single-argument
/// closed form 2 Arg[(w - σ) v / (w (v - σ))]; used to cross-check the
/// two-term form (they agree to rounding error).
pub fn angular_shift_alternate(
    t: &MobiusMap,
    v: Complex64,
    w: Complex64,
) -> Result<f64, GeometryError> {
    check_boundary(v)?;
    check_boundary(w)?;
    let sigma = t.boundary_kernel_point()?;
    Ok(2.0 * ((w - sigma) * v / (w * (v - sigma))).arg())
}

fn check_boundary(w: Complex64) -> Result<(), GeometryError> {
    let r = w.norm();
    if (r - 1.0).abs() > 1e-9 {
        return Err(GeometryError::NotBoundaryPoint(r));
    }
    Ok(())
}

/// Truncated expansion of ash(T, v, w) in the half-plane displacement z
/// defined by T(i + z) = i (small z = nearly the identity):
/// order 1: 0;  order 2: -Re[(w̄ - v̄) z];
/// order 3: Re[(w̄ - v̄)(-z - i(2 + v̄ + w̄) z²/4)].
/// The remainder satisfies |ash - expansion| ≤ c |w - v| |z|^order
/// for |z| ≤ 1/3 (and for all z when v = -1).
pub fn angular_shift_expansion(z: Complex64, v: Complex64, w: Complex64, order: u8) -> f64 {
    let dvw = w.conj() - v.conj();
    match order {
        0 | 1 => 0.0,
        2 => -(dvw * z).re,
        _ => {
            let quad = Complex64::i() * (Complex64::new(2.0, 0.0) + v.conj() + w.conj()) * z * z
                / 4.0;
            (dvw * (-z - quad)).re
        }
    }
}

/// Lift of the affine map A(a, b) acting on phase functions: the unique
/// continuous increasing map φ ↦ φ∗A with φ∗A ≡ (boundary action of A)
/// mod 2π and π∗A = π. Exactly 2π-quasiperiodic: (φ + 2π)∗A = φ∗A + 2π.
pub fn lifted_apply_affine(a: f64, b: f64, phi: f64) -> Result<f64, GeometryError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(GeometryError::NonPositiveScale(a));
    }
    // σ = U(A⁻¹(i)) = U(i/a - b); |σ| < 1 always for a finite affine map.
    let sigma = cayley(HalfPlanePoint::Finite(Complex64::new(-b, 1.0 / a)));
    let one = Complex64::new(1.0, 0.0);
    // ash(A, -1, e^{iφ}) with the conjugate e^{-iφ} taken on an exact
    // 2π-periodic branch so quasiperiodicity holds to rounding error.
    let rem = phi - TAU * (phi / TAU).round();
    let w_conj = Complex64::from_polar(1.0, -rem);
    let shift = 2.0 * ((one - sigma * w_conj).arg() - (one + sigma).arg());
    Ok(phi + shift)
}

/// Lift of the rotation by α: exact translation of the phase line.
pub fn lifted_apply_rotation(alpha: f64, phi: f64) -> f64 {
    phi + alpha
}

/// Möbius transport on the disk: T(w, z; z0) = S(w, z)/S(w, z0) where
/// S(w, z) = (z - w)/(1 - w̄ z). For |w| < 1 and |z| = |z0| = 1 the result
/// lies on the unit circle; T(w, z0; z0) = 1.
pub fn disk_transport(
    w: Complex64,
    z: Complex64,
    z0: Complex64,
) -> Result<Complex64, GeometryError> {
    let r = w.norm();
    if r >= 1.0 {
        return Err(GeometryError::NotInteriorPoint(r));
    }
    check_boundary(z)?;
    check_boundary(z0)?;
    let s = |p: Complex64| (p - w) / (Complex64::new(1.0, 0.0) - w.conj() * p);
    Ok(s(z) / s(z0))
}
