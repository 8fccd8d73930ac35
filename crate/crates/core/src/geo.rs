//! WGS84 geodetic, ECEF and local East-North-Up frames.
//!
//! Angles are radians everywhere in this module. The optimizer works in ECEF;
//! ENU is used for reporting errors about a reference point.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// WGS84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// First eccentricity squared, `f (2 - f)`.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

const MAX_GEODETIC_ITERATIONS: usize = 20;
const LAT_TOL: f64 = 1e-12;
const HEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticCoord {
    pub latitude: f64,
    pub longitude: f64,
    pub height: f64,
}

impl GeodeticCoord {
    /// Validates latitude and wraps longitude into (-pi, pi].
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Result<Self> {
        if !(latitude.is_finite() && longitude.is_finite() && height.is_finite()) {
            return Err(Error::NonFinite("geodetic coordinate"));
        }
        if latitude.abs() > PI / 2.0 {
            return Err(Error::InvalidParameter(format!(
                "latitude {latitude} outside [-pi/2, pi/2]"
            )));
        }
        Ok(Self {
            latitude,
            longitude: normalize_longitude(longitude),
            height,
        })
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, height: f64) -> Result<Self> {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), height)
    }
}

fn normalize_longitude(lon: f64) -> f64 {
    let mut l = lon.rem_euclid(2.0 * PI);
    if l > PI {
        l -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; guard the exact boundary anyway
    if l <= -PI {
        l += 2.0 * PI;
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcefCoord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefCoord {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnuCoord {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl EnuCoord {
    pub fn new(east: f64, north: f64, up: f64) -> Self {
        Self { east, north, up }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.east, self.north, self.up)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Local tangent frame anchored at a geodetic origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRef {
    origin: GeodeticCoord,
    ecef_to_enu: Matrix3<f64>,
    origin_ecef: Vector3<f64>,
}

impl FrameRef {
    pub fn new(origin: GeodeticCoord) -> Self {
        let (sl, cl) = origin.latitude.sin_cos();
        let (so, co) = origin.longitude.sin_cos();
        #[rustfmt::skip]
        let ecef_to_enu = Matrix3::new(
            -so,       co,      0.0,
            -sl * co, -sl * so, cl,
            cl * co,   cl * so, sl,
        );
        Self {
            origin,
            ecef_to_enu,
            origin_ecef: geodetic_to_ecef(origin).to_vector(),
        }
    }

    /// Frame anchored at the geodetic point under an ECEF position.
    pub fn at_ecef(e: EcefCoord) -> Result<Self> {
        Ok(Self::new(ecef_to_geodetic(e)?))
    }

    pub fn origin(&self) -> GeodeticCoord {
        self.origin
    }

    pub fn origin_ecef(&self) -> Vector3<f64> {
        self.origin_ecef
    }

    /// Rotation taking ECEF vectors into ENU.
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.ecef_to_enu
    }

    /// Rotate a free vector (no translation) from ENU into ECEF.
    pub fn enu_vector_to_ecef(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.ecef_to_enu.transpose() * v
    }

    pub fn ecef_vector_to_enu(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.ecef_to_enu * v
    }
}

pub fn geodetic_to_ecef(g: GeodeticCoord) -> EcefCoord {
    let (sl, cl) = g.latitude.sin_cos();
    let (so, co) = g.longitude.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sl * sl).sqrt();
    EcefCoord::new(
        (n + g.height) * cl * co,
        (n + g.height) * cl * so,
        (n * (1.0 - WGS84_E2) + g.height) * sl,
    )
}

/// Fixed-point latitude iteration. Longitude is defined as 0 on the polar axis.
pub fn ecef_to_geodetic(e: EcefCoord) -> Result<GeodeticCoord> {
    if !(e.x.is_finite() && e.y.is_finite() && e.z.is_finite()) {
        return Err(Error::NonFinite("ecef coordinate"));
    }
    let p = e.x.hypot(e.y);
    if p == 0.0 && e.z == 0.0 {
        return Err(Error::InvalidParameter(
            "ecef_to_geodetic undefined at the Earth's center".into(),
        ));
    }
    let longitude = if p == 0.0 { 0.0 } else { e.y.atan2(e.x) };

    let height_at = |lat: f64| {
        let (s, c) = lat.sin_cos();
        p * c + e.z * s - WGS84_A * (1.0 - WGS84_E2 * s * s).sqrt()
    };

    let mut lat = e.z.atan2(p * (1.0 - WGS84_E2));
    let mut h = height_at(lat);
    for _ in 0..MAX_GEODETIC_ITERATIONS {
        let s = lat.sin();
        let n = WGS84_A / (1.0 - WGS84_E2 * s * s).sqrt();
        let next_lat = (e.z + WGS84_E2 * n * s).atan2(p);
        let next_h = height_at(next_lat);
        let converged = (next_lat - lat).abs() < LAT_TOL && (next_h - h).abs() < HEIGHT_TOL;
        lat = next_lat;
        h = next_h;
        if converged {
            return GeodeticCoord::new(lat, longitude, h);
        }
    }
    Err(Error::GeodeticNonConvergence {
        iterations: MAX_GEODETIC_ITERATIONS,
    })
}

pub fn ecef_to_enu(e: EcefCoord, frame: &FrameRef) -> EnuCoord {
    EnuCoord::from_vector(&(frame.ecef_to_enu * (e.to_vector() - frame.origin_ecef)))
}

pub fn enu_to_ecef(l: EnuCoord, frame: &FrameRef) -> EcefCoord {
    EcefCoord::from_vector(&(frame.ecef_to_enu.transpose() * l.to_vector() + frame.origin_ecef))
}
