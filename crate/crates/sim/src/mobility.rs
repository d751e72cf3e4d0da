//! Piecewise-linear movement between waypoints.

use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_us: u64,
    pub x: f64,
    pub y: f64,
}

/// Positions hold still before the first and after the last waypoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<Waypoint>,
}

impl Trajectory {
    pub fn new(points: Vec<Waypoint>) -> Result<Self, SimError> {
        if points.is_empty() {
            return Err(SimError::Config("trajectory needs at least one waypoint".into()));
        }
        if points.windows(2).any(|w| w[0].t_us >= w[1].t_us) {
            return Err(SimError::Config("waypoint times must increase strictly".into()));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(SimError::Config("waypoint coordinates must be finite".into()));
        }
        Ok(Trajectory { points })
    }

    pub fn fixed(x: f64, y: f64) -> Self {
        Trajectory {
            points: vec![Waypoint { t_us: 0, x, y }],
        }
    }

    pub fn points(&self) -> &[Waypoint] {
        &self.points
    }

    pub fn position(&self, t_us: u64) -> (f64, f64) {
        let pts = &self.points;
        let idx = pts.partition_point(|p| p.t_us <= t_us);
        if idx == 0 {
            return (pts[0].x, pts[0].y);
        }
        if idx == pts.len() {
            let last = pts[pts.len() - 1];
            return (last.x, last.y);
        }
        let (a, b) = (pts[idx - 1], pts[idx]);
        let f = (t_us - a.t_us) as f64 / (b.t_us - a.t_us) as f64;
        (a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
    }

    /// Velocity in metres per microsecond on the segment starting at `t_us`.
    fn velocity(&self, t_us: u64) -> (f64, f64) {
        let pts = &self.points;
        let idx = pts.partition_point(|p| p.t_us <= t_us);
        if idx == 0 || idx == pts.len() {
            return (0.0, 0.0);
        }
        let (a, b) = (pts[idx - 1], pts[idx]);
        let dt = (b.t_us - a.t_us) as f64;
        ((b.x - a.x) / dt, (b.y - a.y) / dt)
    }
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// First instant in `[0, until_us]` at which the two trajectories are within
/// `range_m`, solved exactly per linear segment.
pub fn range_entry(a: &Trajectory, b: &Trajectory, range_m: f64, until_us: u64) -> Option<u64> {
    let mut cuts: Vec<u64> = a
        .points
        .iter()
        .chain(&b.points)
        .map(|p| p.t_us)
        .filter(|t| *t < until_us)
        .chain([0, until_us])
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    for seg in cuts.windows(2) {
        let (t0, t1) = (seg[0], seg[1]);
        let (pa, pb) = (a.position(t0), b.position(t0));
        let (va, vb) = (a.velocity(t0), b.velocity(t0));
        let (rx, ry) = (pa.0 - pb.0, pa.1 - pb.1);
        let (vx, vy) = (va.0 - vb.0, va.1 - vb.1);
        let c = rx * rx + ry * ry - range_m * range_m;
        if c <= 0.0 {
            return Some(t0);
        }
        // Solve |r + v s|^2 = R^2 for the smallest s >= 0.
        let qa = vx * vx + vy * vy;
        let qb = 2.0 * (rx * vx + ry * vy);
        if qa == 0.0 || qb >= 0.0 {
            continue;
        }
        let disc = qb * qb - 4.0 * qa * c;
        if disc < 0.0 {
            continue;
        }
        let s = (-qb - disc.sqrt()) / (2.0 * qa);
        let t = t0 as f64 + s.max(0.0);
        if t <= t1 as f64 {
            // Tolerate float noise before rounding up to the microsecond grid.
            let t = (t - 1e-3).ceil().max(t0 as f64) as u64;
            return Some(t.min(t1));
        }
    }
    let end = until_us;
    (distance(a.position(end), b.position(end)) <= range_m).then_some(end)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(t_s: u64, x: f64, y: f64) -> Waypoint {
        Waypoint {
            t_us: t_s * 1_000_000,
            x,
            y,
        }
    }

    #[test]
    fn interpolates_and_holds() {
        let tr = Trajectory::new(vec![wp(10, 0.0, 0.0), wp(20, 10.0, 0.0)]).unwrap();
        assert_eq!(tr.position(0), (0.0, 0.0));
        assert_eq!(tr.position(15_000_000), (5.0, 0.0));
        assert_eq!(tr.position(99_000_000), (10.0, 0.0));
    }

    #[test]
    fn rejects_bad_waypoints() {
        assert!(Trajectory::new(vec![]).is_err());
        assert!(Trajectory::new(vec![wp(5, 0.0, 0.0), wp(5, 1.0, 0.0)]).is_err());
        assert!(Trajectory::new(vec![wp(0, f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn range_entry_times() {
        let still = Trajectory::fixed(0.0, 0.0);
        assert_eq!(range_entry(&still, &Trajectory::fixed(1.0, 0.0), 30.0, 60_000_000), Some(0));
        assert_eq!(range_entry(&still, &Trajectory::fixed(1000.0, 0.0), 30.0, 60_000_000), None);
        // Walks from 100 m to 0 m over 100 s: enters 30 m range at 70 s.
        let walker = Trajectory::new(vec![wp(0, 100.0, 0.0), wp(100, 0.0, 0.0)]).unwrap();
        assert_eq!(range_entry(&still, &walker, 30.0, 200_000_000), Some(70_000_000));
        assert_eq!(range_entry(&still, &walker, 30.0, 50_000_000), None);
        // Passes by at 40 m: never in range.
        let passer = Trajectory::new(vec![wp(0, -100.0, 40.0), wp(100, 100.0, 40.0)]).unwrap();
        assert_eq!(range_entry(&still, &passer, 30.0, 200_000_000), None);
        // Jumps between waypoints 1 s apart from 50 m to 10 m.
        let jumper = Trajectory::new(vec![wp(10, 50.0, 0.0), wp(11, 10.0, 0.0)]).unwrap();
        assert_eq!(range_entry(&still, &jumper, 30.0, 20_000_000), Some(10_500_000));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn path() -> impl Strategy<Value = Trajectory> {
            prop::collection::vec((1u64..60, -80.0f64..80.0, -80.0f64..80.0), 1..5).prop_map(|steps| {
                let mut t = 0;
                let points = steps
                    .into_iter()
                    .map(|(dt, x, y)| {
                        t += dt;
                        wp(t, x, y)
                    })
                    .collect();
                Trajectory::new(points).unwrap()
            })
        }

        proptest! {
            #[test]
            fn range_entry_is_the_first_in_range_instant(a in path(), b in path()) {
                let until = 300_000_000;
                let d = |t: u64| distance(a.position(t), b.position(t));
                match range_entry(&a, &b, 30.0, until) {
                    Some(t) => {
                        prop_assert!(d(t) <= 30.0 + 1e-6, "{} at {}", d(t), t);
                        // Sampled check that nothing earlier was in range.
                        for k in 0..1000u64 {
                            let s = t * k / 1000;
                            prop_assert!(s == t || d(s) > 30.0 - 1e-6, "{} at {}", d(s), s);
                        }
                    }
                    None => {
                        for k in 0..=3000u64 {
                            prop_assert!(d(until * k / 3000) > 30.0);
                        }
                    }
                }
            }
        }
    }
}
