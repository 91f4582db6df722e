use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::Vec2;
use crate::planner::State;

/// Constant-speed lane change. The lateral offset moves linearly from
/// `lateral_start` to `lateral_end` while the longitudinal position runs
/// from `station_start` to `station_end`, and is held outside that window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneChangeReference {
    pub speed: f64,
    pub lateral_start: f64,
    pub lateral_end: f64,
    pub station_start: f64,
    pub station_end: f64,
}

impl LaneChangeReference {
    pub fn validate(&self) -> Result<()> {
        if !self.speed.is_finite() || self.speed < 0.0 {
            return Err(Error::InvalidParameter(format!("reference speed {} is invalid", self.speed)));
        }
        if !(self.station_start < self.station_end) {
            return Err(Error::InvalidParameter(format!(
                "lane change window [{}, {}] is empty",
                self.station_start, self.station_end
            )));
        }
        Ok(())
    }

    pub fn lateral(&self, station: f64) -> f64 {
        let s = ((station - self.station_start) / (self.station_end - self.station_start)).clamp(0.0, 1.0);
        self.lateral_start + s * (self.lateral_end - self.lateral_start)
    }

    /// Reference positions for steps `0..=horizon`, starting at longitudinal
    /// position `start`.
    pub fn positions(&self, start: f64, dt: f64, horizon: usize) -> Vec<Vec2> {
        (0..=horizon)
            .map(|t| {
                let s = start + self.speed * dt * t as f64;
                Vec2::new(s, self.lateral(s))
            })
            .collect()
    }

    /// Full reference states; velocities are forward differences of the
    /// positions, the last one repeated.
    pub fn states(&self, start: f64, dt: f64, horizon: usize) -> Vec<State> {
        let p = self.positions(start, dt, horizon);
        let velocity = |t: usize| if t < horizon { (p[t + 1] - p[t]) / dt } else { Vec2::new(self.speed, 0.0) };
        (0..=horizon)
            .map(|t| {
                let v = velocity(if t == horizon && t > 0 { t - 1 } else { t });
                State::new(p[t][0], p[t][1], v[0], v[1])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> LaneChangeReference {
        LaneChangeReference { speed: 15.0, lateral_start: 0.0, lateral_end: 3.5, station_start: 15.0, station_end: 50.0 }
    }

    #[test]
    fn lateral_profile_is_clamped_and_linear() {
        let r = reference();
        assert_eq!(r.lateral(0.0), 0.0);
        assert_eq!(r.lateral(15.0), 0.0);
        assert!((r.lateral(32.5) - 1.75).abs() < 1e-12);
        assert_eq!(r.lateral(80.0), 3.5);
    }

    #[test]
    fn positions_advance_at_constant_speed() {
        let p = reference().positions(0.0, 0.5, 9);
        assert_eq!(p.len(), 10);
        assert_eq!(p[0], Vec2::zeros());
        assert_eq!(p[9][0], 67.5);
        assert_eq!(p[9][1], 3.5);
    }

    #[test]
    fn velocities_are_finite_differences() {
        let s = reference().states(0.0, 0.5, 9);
        for t in 0..9 {
            assert!((s[t][0] + 0.5 * s[t][2] - s[t + 1][0]).abs() < 1e-12);
            assert!((s[t][1] + 0.5 * s[t][3] - s[t + 1][1]).abs() < 1e-12);
        }
        assert_eq!(s[9][2], 15.0);
        assert!(s[9][3].abs() < 1e-12);
    }

    #[test]
    fn empty_window_is_rejected() {
        let mut r = reference();
        r.station_end = r.station_start;
        assert!(r.validate().is_err());
    }
}
