//! Geohash codec and great-circle distance.
//!
//! Geohash cells come from alternating longitude/latitude bisection starting
//! with longitude, packed 5 bits per base-32 character. A coordinate lying
//! exactly on a bisection midpoint goes to the upper half.

use crate::error::{Error, Result};

/// Mean Earth radius in meters, used by every distance in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub const MAX_PRECISION: usize = 12;

const BASE32: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

fn base32_index(ch: u8) -> Option<u8> {
    BASE32.iter().position(|&c| c == ch).map(|i| i as u8)
}

pub fn check_coordinates(lat: f64, lon: f64) -> Result<()> {
    if (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
        Ok(())
    } else {
        Err(Error::CoordinateRange { lat, lon })
    }
}

/// Encode a coordinate into a geohash of `precision` characters.
pub fn geohash_encode(lat: f64, lon: f64, precision: usize) -> Result<String> {
    check_coordinates(lat, lon)?;
    if !(1..=MAX_PRECISION).contains(&precision) {
        return Err(Error::Precision(precision));
    }
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut out = String::with_capacity(precision);
    let mut even = true;
    for _ in 0..precision {
        let mut idx = 0u8;
        for _ in 0..5 {
            idx <<= 1;
            if even {
                let mid = (lon_lo + lon_hi) / 2.0;
                if lon >= mid {
                    idx |= 1;
                    lon_lo = mid;
                } else {
                    lon_hi = mid;
                }
            } else {
                let mid = (lat_lo + lat_hi) / 2.0;
                if lat >= mid {
                    idx |= 1;
                    lat_lo = mid;
                } else {
                    lat_hi = mid;
                }
            }
            even = !even;
        }
        out.push(BASE32[idx as usize] as char);
    }
    Ok(out)
}

/// Level-8 geohash; callers have already validated the coordinate.
pub(crate) fn geohash8(lat: f64, lon: f64) -> String {
    geohash_encode(lat, lon, 8).expect("coordinates validated upstream")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        other.lat_min >= self.lat_min
            && other.lat_max <= self.lat_max
            && other.lon_min >= self.lon_min
            && other.lon_max <= self.lon_max
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.lat_min + self.lat_max) / 2.0, (self.lon_min + self.lon_max) / 2.0)
    }

    /// (east-west width, north-south height) in meters, measured at the box center.
    pub fn size_m(&self) -> (f64, f64) {
        let (lat_c, _) = self.center();
        let width = haversine_m((lat_c, self.lon_min), (lat_c, self.lon_max));
        let height = haversine_m((self.lat_min, self.lon_min), (self.lat_max, self.lon_min));
        (width, height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeohashCell {
    pub code: String,
    pub precision: usize,
    pub bbox: BoundingBox,
}

impl GeohashCell {
    pub fn center(&self) -> (f64, f64) {
        self.bbox.center()
    }
}

pub fn geohash_decode(code: &str) -> Result<GeohashCell> {
    if code.is_empty() {
        return Err(Error::EmptyGeohash);
    }
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut even = true;
    for (position, ch) in code.chars().enumerate() {
        let idx = u8::try_from(ch)
            .ok()
            .and_then(base32_index)
            .ok_or(Error::GeohashChar { ch, position })?;
        for shift in (0..5).rev() {
            let bit = (idx >> shift) & 1 == 1;
            if even {
                let mid = (lon_lo + lon_hi) / 2.0;
                if bit {
                    lon_lo = mid;
                } else {
                    lon_hi = mid;
                }
            } else {
                let mid = (lat_lo + lat_hi) / 2.0;
                if bit {
                    lat_lo = mid;
                } else {
                    lat_hi = mid;
                }
            }
            even = !even;
        }
    }
    Ok(GeohashCell {
        code: code.to_string(),
        precision: code.chars().count(),
        bbox: BoundingBox { lat_min: lat_lo, lat_max: lat_hi, lon_min: lon_lo, lon_max: lon_hi },
    })
}

/// Haversine distance in meters between two (lat, lon) points in degrees.
pub fn haversine_m(p1: (f64, f64), p2: (f64, f64)) -> f64 {
    let (lat1, lon1) = (p1.0.to_radians(), p1.1.to_radians());
    let (lat2, lon2) = (p2.0.to_radians(), p2.1.to_radians());
    let s_lat = ((lat2 - lat1) / 2.0).sin();
    let s_lon = ((lon2 - lon1) / 2.0).sin();
    // Sorted so the result does not depend on argument order.
    let (ca, cb) = {
        let (a, b) = (lat1.cos(), lat2.cos());
        if a <= b { (a, b) } else { (b, a) }
    };
    let h = (s_lat * s_lat + ca * cb * s_lon * s_lon).min(1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

/// Offset a point by (north, east) meters on the local tangent plane.
pub fn offset_m(lat: f64, lon: f64, north_m: f64, east_m: f64) -> (f64, f64) {
    let m_per_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let new_lat = (lat + north_m / m_per_deg).clamp(-90.0, 90.0);
    let cos_lat = lat.to_radians().cos().max(1e-12);
    let mut new_lon = lon + east_m / (m_per_deg * cos_lat);
    if new_lon > 180.0 {
        new_lon -= 360.0;
    } else if new_lon < -180.0 {
        new_lon += 360.0;
    }
    (new_lat, new_lon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_precision_one_is_s() {
        // lon 0 >= mid 0 -> 1, lat 0 >= 0 -> 1, lon 0 < 90 -> 0, lat 0 < 45 -> 0,
        // lon 0 < 45 -> 0: 11000 = 24 = 's'.
        assert_eq!(geohash_encode(0.0, 0.0, 1).unwrap(), "s");
    }

    #[test]
    fn known_reference_code() {
        assert_eq!(geohash_encode(57.64911, 10.40744, 11).unwrap(), "u4pruydqqvj");
    }

    #[test]
    fn decode_s_box() {
        let cell = geohash_decode("s").unwrap();
        assert_eq!(
            cell.bbox,
            BoundingBox { lat_min: 0.0, lat_max: 45.0, lon_min: 0.0, lon_max: 45.0 }
        );
        assert_eq!(cell.precision, 1);
    }

    #[test]
    fn precision_eight_cell_at_equator() {
        let cell = geohash_decode(&geohash_encode(0.0001, 0.0001, 8).unwrap()).unwrap();
        let (w, h) = cell.bbox.size_m();
        assert!((w - 38.0).abs() / 38.0 < 0.05, "width {w}");
        assert!((h - 19.0).abs() / 19.0 < 0.05, "height {h}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(geohash_encode(91.0, 0.0, 8), Err(Error::CoordinateRange { .. })));
        assert!(matches!(geohash_encode(0.0, 0.0, 0), Err(Error::Precision(0))));
        assert!(matches!(geohash_encode(0.0, 0.0, 13), Err(Error::Precision(13))));
        match geohash_decode("u4pa") {
            Err(Error::GeohashChar { ch, position }) => {
                assert_eq!(ch, 'a');
                assert_eq!(position, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(geohash_decode(""), Err(Error::EmptyGeohash)));
    }

    #[test]
    fn haversine_closed_forms() {
        assert_eq!(haversine_m((12.5, -3.0), (12.5, -3.0)), 0.0);
        // R * pi / 180
        let one_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let d = haversine_m((0.0, 0.0), (0.0, 1.0));
        assert!((d - one_deg).abs() < 1e-6);
        assert!((d - 111_194.93).abs() < 0.01);
        let half = haversine_m((0.0, 0.0), (0.0, 180.0));
        assert!((half - 20_015_086.8).abs() < 0.1, "{half}");
    }

    #[test]
    fn offset_moves_expected_distance() {
        let (lat, lon) = offset_m(40.0, -74.0, 30.0, 40.0);
        let d = haversine_m((40.0, -74.0), (lat, lon));
        assert!((d - 50.0).abs() < 0.01, "{d}");
    }

    fn coord() -> impl Strategy<Value = (f64, f64)> {
        (-90.0f64..=90.0, -180.0f64..=180.0)
    }

    proptest! {
        #[test]
        fn haversine_symmetric_and_triangle(a in coord(), b in coord(), c in coord()) {
            prop_assert_eq!(haversine_m(a, b), haversine_m(b, a));
            prop_assert_eq!(haversine_m(a, a), 0.0);
            let ab = haversine_m(a, b);
            let bc = haversine_m(b, c);
            let ac = haversine_m(a, c);
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-6);
        }

        #[test]
        fn prefix_and_refinement(p in coord(), precision in 1usize..12) {
            let coarse = geohash_encode(p.0, p.1, precision).unwrap();
            let fine = geohash_encode(p.0, p.1, precision + 1).unwrap();
            prop_assert!(fine.starts_with(&coarse));
            let outer = geohash_decode(&coarse).unwrap().bbox;
            let inner = geohash_decode(&fine).unwrap().bbox;
            prop_assert!(outer.contains_box(&inner));
            prop_assert!(inner.contains(p.0, p.1));
        }
    }
}
