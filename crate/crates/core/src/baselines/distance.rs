use serde::{Deserialize, Serialize};

const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Horizontal distance metric for the spatial baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    /// Equirectangular degrees: longitude shrunk by `cos` of the mean latitude.
    #[default]
    Degrees,
    HaversineKm,
}

impl Distance {
    pub fn between(self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let (lat1, lon1) = a;
        let (lat2, lon2) = b;
        match self {
            Distance::Degrees => {
                let k = (0.5 * (lat1 + lat2)).to_radians().cos();
                (lat2 - lat1).hypot((lon2 - lon1) * k)
            }
            Distance::HaversineKm => {
                let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
                let dp = p2 - p1;
                let dl = (lon2 - lon1).to_radians();
                let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
                2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
            }
        }
    }
}
