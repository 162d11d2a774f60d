use super::geometry::{wrap_angle, Vec2};
use super::LaneId;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Radius of the tube around a path inside which projections are accepted.
pub const CORRIDOR_RADIUS: f64 = 50.0;

/// Traffic-signal phase attached to a lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalPhase {
    Green,
    Yellow,
    Red,
}

/// Arc-length coordinates of a point relative to a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc-length of the nearest path point. Extends linearly past both ends.
    pub s: f64,
    /// Signed lateral offset, left positive.
    pub d: f64,
    /// Path heading at `s`.
    pub heading: f64,
}

/// A polyline lane centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathDef", into = "PathDef")]
pub struct Path {
    lane_id: LaneId,
    waypoints: Vec<Vec2>,
    signal: Option<SignalPhase>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PathDef {
    lane_id: LaneId,
    waypoints: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    signal: Option<SignalPhase>,
}

impl TryFrom<PathDef> for Path {
    type Error = Error;
    fn try_from(def: PathDef) -> Result<Self> {
        let pts = def.waypoints.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        Path::new(def.lane_id, pts, def.signal)
    }
}

impl From<Path> for PathDef {
    fn from(p: Path) -> Self {
        PathDef {
            lane_id: p.lane_id,
            waypoints: p.waypoints.iter().map(|w| [w.x, w.y]).collect(),
            signal: p.signal,
        }
    }
}

impl Path {
    pub fn new(lane_id: LaneId, waypoints: Vec<Vec2>, signal: Option<SignalPhase>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidPath(format!(
                "lane {lane_id} needs at least two waypoints"
            )));
        }
        let mut cumulative = Vec::with_capacity(waypoints.len());
        cumulative.push(0.0);
        for (i, w) in waypoints.windows(2).enumerate() {
            if !(w[0].x.is_finite() && w[0].y.is_finite() && w[1].x.is_finite() && w[1].y.is_finite()) {
                return Err(Error::InvalidPath(format!("lane {lane_id} has non-finite waypoints")));
            }
            let len = (w[1] - w[0]).norm();
            if len <= 1e-9 {
                return Err(Error::InvalidPath(format!(
                    "lane {lane_id}: waypoints {i} and {} coincide",
                    i + 1
                )));
            }
            cumulative.push(cumulative[i] + len);
        }
        Ok(Self {
            lane_id,
            waypoints,
            signal,
            cumulative,
        })
    }

    pub fn straight(lane_id: LaneId, from: Vec2, to: Vec2) -> Result<Self> {
        Self::new(lane_id, vec![from, to], None)
    }

    pub fn with_signal(mut self, signal: Option<SignalPhase>) -> Self {
        self.signal = signal;
        self
    }

    pub fn lane_id(&self) -> LaneId {
        self.lane_id
    }

    pub fn signal(&self) -> Option<SignalPhase> {
        self.signal
    }

    pub fn waypoints(&self) -> &[Vec2] {
        &self.waypoints
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segments(&self) -> usize {
        self.waypoints.len() - 1
    }

    fn segment_dir(&self, i: usize) -> (Vec2, f64) {
        let d = self.waypoints[i + 1] - self.waypoints[i];
        let len = self.cumulative[i + 1] - self.cumulative[i];
        (d * (1.0 / len), len)
    }

    /// Nearest-point projection without the corridor check. The first and
    /// last segments are extended as rays so points beyond the ends get
    /// negative or overlong arc-lengths.
    pub fn project_point(&self, p: Vec2) -> Projection {
        let n = self.segments();
        let mut best: Option<(f64, Projection)> = None;
        for i in 0..n {
            let (dir, len) = self.segment_dir(i);
            let rel = p - self.waypoints[i];
            let mut t = rel.dot(dir);
            if i > 0 {
                t = t.max(0.0);
            }
            if i + 1 < n {
                t = t.min(len);
            }
            let foot = self.waypoints[i] + dir * t;
            let dist = (p - foot).norm();
            let cand = Projection {
                s: self.cumulative[i] + t,
                d: dir.cross(p - foot).signum() * dist,
                heading: dir.y.atan2(dir.x),
            };
            if best.as_ref().is_none_or(|(bd, _)| dist < *bd - 1e-12) {
                best = Some((dist, cand));
            }
        }
        best.unwrap().1
    }

    /// Projection onto the path; fails outside the corridor tube.
    pub fn project(&self, p: Vec2) -> Result<Projection> {
        let proj = self.project_point(p);
        if proj.d.abs() > CORRIDOR_RADIUS {
            return Err(Error::OutOfCorridor {
                lane: self.lane_id,
                distance: proj.d.abs(),
                radius: CORRIDOR_RADIUS,
            });
        }
        Ok(proj)
    }

    fn locate(&self, s: f64) -> usize {
        let n = self.segments();
        match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) | Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Point at arc-length `s`, extrapolating past the ends.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let i = self.locate(s);
        let (dir, _) = self.segment_dir(i);
        self.waypoints[i] + dir * (s - self.cumulative[i])
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let (dir, _) = self.segment_dir(self.locate(s));
        dir.y.atan2(dir.x)
    }

    /// Intersections of the infinite line `origin + t * dir` (unit `dir`)
    /// with the path, as `(s_on_path, t_on_line)` sorted by `s`.
    pub fn line_intersections(&self, origin: Vec2, dir: Vec2) -> Vec<(f64, f64)> {
        let n = self.segments();
        let mut hits = Vec::new();
        for i in 0..n {
            let (sdir, len) = self.segment_dir(i);
            let denom = sdir.cross(dir);
            if denom.abs() < 1e-9 {
                continue;
            }
            let w = origin - self.waypoints[i];
            // waypoint + sdir * a = origin + dir * t
            let a = w.cross(dir) / denom;
            let t = w.cross(sdir) / denom;
            let lo = if i == 0 { f64::NEG_INFINITY } else { 0.0 };
            let hi = if i + 1 == n { f64::INFINITY } else { len };
            if a >= lo && a < hi {
                hits.push((self.cumulative[i] + a, t));
            }
        }
        hits.sort_by(|x, y| x.0.total_cmp(&y.0));
        hits
    }

    /// Heading error of `heading` against the path tangent at `s`.
    pub fn heading_error(&self, s: f64, heading: f64) -> f64 {
        wrap_angle(heading - self.heading_at(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x_axis() -> Path {
        Path::straight(LaneId(0), Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)).unwrap()
    }

    #[test]
    fn on_path_origin() {
        let p = x_axis().project(Vec2::new(0.0, 0.0)).unwrap();
        assert_eq!((p.s, p.d), (0.0, 0.0));
    }

    #[test]
    fn left_is_positive() {
        let p = x_axis().project(Vec2::new(10.0, 2.0)).unwrap();
        assert!((p.s - 10.0).abs() < 1e-12 && (p.d - 2.0).abs() < 1e-12);
        let p = x_axis().project(Vec2::new(10.0, -2.0)).unwrap();
        assert!((p.d + 2.0).abs() < 1e-12);
    }

    #[test]
    fn beyond_corridor() {
        let err = x_axis().project(Vec2::new(10.0, 60.0)).unwrap_err();
        assert!(matches!(err, Error::OutOfCorridor { .. }));
    }

    #[test]
    fn coincident_waypoints_rejected() {
        let r = Path::new(LaneId(3), vec![Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)], None);
        assert!(matches!(r, Err(Error::InvalidPath(_))));
    }

    #[test]
    fn polyline_corner() {
        let p = Path::new(
            LaneId(1),
            vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)],
            None,
        )
        .unwrap();
        let q = p.project(Vec2::new(9.0, 5.0)).unwrap();
        assert!((q.s - 15.0).abs() < 1e-12);
        assert!((q.d - 1.0).abs() < 1e-12);
        assert!((p.point_at(15.0) - Vec2::new(10.0, 5.0)).norm() < 1e-12);
        assert!((p.point_at(-5.0) - Vec2::new(-5.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn crossing_line() {
        let hits = x_axis().line_intersections(Vec2::new(42.0, -20.0), Vec2::new(0.0, 1.0));
        assert_eq!(hits.len(), 1);
        assert!((hits[0].0 - 42.0).abs() < 1e-12 && (hits[0].1 - 20.0).abs() < 1e-12);
    }
}
