//! Geodetic coordinates and distances between smartphones and the hypocentre.
//!
//! Surface separation uses the haversine great-circle distance on a sphere of
//! mean radius 6371 km; the hypocentral distance combines it with depth by
//! Pythagoras. At the regional scales handled here (a few hundred km) the
//! difference from an ellipsoidal or ECEF treatment is far below the wave
//! speed uncertainty in the model.

use thiserror::Error;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90] degrees")]
    LatitudeOutOfRange(f64),
    #[error("coordinate is not finite")]
    NonFiniteCoordinate,
    #[error("depth {0} km must be finite and non-negative")]
    InvalidDepth(f64),
}

/// A point on the Earth's surface in degrees.
///
/// Construction normalises the longitude into `(-180, 180]` and rejects
/// latitudes outside `[-90, 90]`, so a `GeoPoint` is always valid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        if !lat_deg.is_finite() || !lon_deg.is_finite() {
            return Err(GeoError::NonFiniteCoordinate);
        }
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(GeoError::LatitudeOutOfRange(lat_deg));
        }
        let mut lon = lon_deg - 360.0 * ((lon_deg + 180.0) / 360.0).floor();
        if lon <= -180.0 {
            lon = 180.0;
        }
        Ok(Self { lat: lat_deg, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Earthquake source: epicentre plus depth below the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypocentre {
    epicentre: GeoPoint,
    depth_km: f64,
}

impl Hypocentre {
    pub fn new(epicentre: GeoPoint, depth_km: f64) -> Result<Self, GeoError> {
        if !depth_km.is_finite() || depth_km < 0.0 {
            return Err(GeoError::InvalidDepth(depth_km));
        }
        Ok(Self {
            epicentre,
            depth_km,
        })
    }

    pub fn epicentre(&self) -> GeoPoint {
        self.epicentre
    }

    pub fn depth_km(&self) -> f64 {
        self.depth_km
    }
}

/// Great-circle distance between two surface points, in km.
pub fn epicentral_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Straight-line distance from a surface point to the hypocentre, in km:
/// surface separation and depth combined by Pythagoras.
pub fn hypocentral_distance(p: GeoPoint, h: &Hypocentre) -> f64 {
    let surface = epicentral_distance(p, h.epicentre);
    (surface * surface + h.depth_km * h.depth_km).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn identical_points_have_zero_distance() {
        assert_eq!(epicentral_distance(p(0.0, 0.0), p(0.0, 0.0)), 0.0);
        assert_eq!(epicentral_distance(p(37.2, 37.1), p(37.2, 37.1)), 0.0);
    }

    #[test]
    fn one_degree_on_a_meridian() {
        // 6371 * pi / 180 = 111.1949... km
        let d = epicentral_distance(p(0.0, 0.0), p(1.0, 0.0));
        assert_abs_diff_eq!(d, 111.195, epsilon = 1e-3);
    }

    #[test]
    fn longitude_is_normalised() {
        assert_eq!(p(0.0, 190.0).lon(), -170.0);
        assert_eq!(p(0.0, -180.0).lon(), 180.0);
        assert_eq!(p(0.0, 540.0).lon(), 180.0);
        assert_eq!(p(0.0, 180.0).lon(), 180.0);
    }

    #[test]
    fn latitude_bounds_are_enforced() {
        assert_eq!(
            GeoPoint::new(90.5, 0.0),
            Err(GeoError::LatitudeOutOfRange(90.5))
        );
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn hypocentral_reduces_to_depth_at_epicentre() {
        let h = Hypocentre::new(p(10.0, 20.0), 10.0).unwrap();
        assert_abs_diff_eq!(hypocentral_distance(p(10.0, 20.0), &h), 10.0);
        let h0 = Hypocentre::new(p(10.0, 20.0), 0.0).unwrap();
        assert_eq!(hypocentral_distance(p(10.0, 20.0), &h0), 0.0);
    }

    #[test]
    fn hypocentral_reduces_to_surface_at_zero_depth() {
        let h = Hypocentre::new(p(0.0, 0.0), 0.0).unwrap();
        assert_abs_diff_eq!(hypocentral_distance(p(1.0, 0.0), &h), 111.195, epsilon = 1e-3);
    }

    #[test]
    fn negative_depth_is_rejected() {
        assert_eq!(
            Hypocentre::new(p(0.0, 0.0), -1.0),
            Err(GeoError::InvalidDepth(-1.0))
        );
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(
            lat1 in -90.0..90.0f64, lon1 in -180.0..180.0f64,
            lat2 in -90.0..90.0f64, lon2 in -180.0..180.0f64,
        ) {
            let a = p(lat1, lon1);
            let b = p(lat2, lon2);
            prop_assert_eq!(epicentral_distance(a, b), epicentral_distance(b, a));
        }

        #[test]
        fn triangle_inequality(
            lat1 in -90.0..90.0f64, lon1 in -180.0..180.0f64,
            lat2 in -90.0..90.0f64, lon2 in -180.0..180.0f64,
            lat3 in -90.0..90.0f64, lon3 in -180.0..180.0f64,
        ) {
            let a = p(lat1, lon1);
            let b = p(lat2, lon2);
            let c = p(lat3, lon3);
            let ab = epicentral_distance(a, b);
            let bc = epicentral_distance(b, c);
            let ac = epicentral_distance(a, c);
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn hypocentral_bounds(
            lat in -90.0..90.0f64, lon in -180.0..180.0f64,
            depth in 0.0..700.0f64,
        ) {
            let phone = p(lat, lon);
            let h = Hypocentre::new(p(0.0, 0.0), depth).unwrap();
            let surface = epicentral_distance(phone, h.epicentre());
            let d = hypocentral_distance(phone, &h);
            prop_assert!(d >= surface.max(depth) - 1e-9);
            prop_assert!(d <= surface + depth + 1e-9);
        }

        #[test]
        fn monotone_in_depth(
            lat in -90.0..90.0f64, lon in -180.0..180.0f64,
            depth in 0.0..100.0f64, extra in 0.1..100.0f64,
        ) {
            let phone = p(lat, lon);
            let shallow = Hypocentre::new(p(0.0, 0.0), depth).unwrap();
            let deep = Hypocentre::new(p(0.0, 0.0), depth + extra).unwrap();
            prop_assert!(hypocentral_distance(phone, &deep) > hypocentral_distance(phone, &shallow) - 1e-12);
        }
    }
}
