//! Coordinate types and conversions between Cartesian and modified polar
//! (azimuth, elevation, inverse-range) representations.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Source location in modified polar form.
///
/// `inverse_range == 0` is a legal value and encodes a source at infinity,
/// for which only the bearing is meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceMpr {
    pub azimuth: f64,
    pub elevation: f64,
    pub inverse_range: f64,
}

impl SourceMpr {
    /// Builds a source, wrapping azimuth into (−π, π].
    pub fn new(azimuth: f64, elevation: f64, inverse_range: f64) -> Result<Self> {
        if !(azimuth.is_finite() && elevation.is_finite() && inverse_range.is_finite()) {
            return Err(Error::InvalidInput("non-finite MPR component".into()));
        }
        if elevation.abs() > FRAC_PI_2 {
            return Err(Error::InvalidInput(format!(
                "elevation {elevation} outside [-pi/2, pi/2]"
            )));
        }
        if inverse_range < 0.0 {
            return Err(Error::InvalidInput(format!(
                "negative inverse range {inverse_range}"
            )));
        }
        Ok(Self {
            azimuth: wrap_angle(azimuth),
            elevation,
            inverse_range,
        })
    }

    /// Source at `range` meters along the given bearing.
    pub fn from_range(azimuth: f64, elevation: f64, range: f64) -> Result<Self> {
        if !(range > 0.0) {
            return Err(Error::InvalidInput(format!("range {range} must be positive")));
        }
        Self::new(azimuth, elevation, 1.0 / range)
    }

    pub fn bearing(&self) -> UnitBearing {
        mpr_to_unit(self.azimuth, self.elevation)
    }

    /// Range in meters; infinite for a far-field source.
    pub fn range(&self) -> f64 {
        1.0 / self.inverse_range
    }
}

/// Unit direction vector pointing from the origin toward the source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitBearing(Vector3<f64>);

impl UnitBearing {
    /// Normalizes `v`; fails on the zero vector.
    pub fn from_vector(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain("cannot normalize a zero or non-finite vector".into()));
        }
        Ok(Self(v / n))
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_vector(self) -> Vector3<f64> {
        self.0
    }

    /// Azimuth and elevation of this direction, with azimuth 0 at the poles.
    pub fn angles(&self) -> (f64, f64) {
        direction_angles(&self.0)
    }
}

/// A point in the local Cartesian frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianPoint(pub Vector3<f64>);

impl CartesianPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Shortest signed angular difference `a − b`, in (−π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

pub fn mpr_to_unit(azimuth: f64, elevation: f64) -> UnitBearing {
    let (sp, cp) = azimuth.sin_cos();
    let (st, ct) = elevation.sin_cos();
    UnitBearing(Vector3::new(ct * cp, ct * sp, st))
}

pub fn mpr_to_cartesian(u: &SourceMpr) -> Result<CartesianPoint> {
    if !(u.inverse_range > 0.0) {
        return Err(Error::Domain(
            "far-field source (inverse range 0) has no Cartesian image".into(),
        ));
    }
    Ok(CartesianPoint(
        mpr_to_unit(u.azimuth, u.elevation).into_vector() / u.inverse_range,
    ))
}

pub fn cartesian_to_mpr(p: &CartesianPoint) -> Result<SourceMpr> {
    let r = p.0.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain("origin has no MPR representation".into()));
    }
    let (azimuth, elevation) = direction_angles(&p.0);
    Ok(SourceMpr {
        azimuth,
        elevation,
        inverse_range: 1.0 / r,
    })
}

/// Azimuth/elevation of a (not necessarily unit) vector; scale-invariant.
pub(crate) fn direction_angles(v: &Vector3<f64>) -> (f64, f64) {
    let horiz = v.x.hypot(v.y);
    let elevation = v.z.atan2(horiz);
    // atan2(±0, −0) returns ±π, so the pole is caught explicitly.
    let azimuth = if horiz == 0.0 {
        0.0
    } else {
        wrap_angle(v.y.atan2(v.x))
    };
    (azimuth, elevation)
}
