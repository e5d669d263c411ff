//! Timestamped pose sequences and their resampling.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::geometry::{wrap_angle, Pose2D, Vec2};
use crate::DEFAULT_TICK_S;

/// Timestamps closer than this are treated as the same instant.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("trajectory is empty")]
    Empty,
    #[error("point {index} is not finite")]
    NonFinite { index: usize },
    #[error("timestamps not strictly increasing at point {index} ({prev} -> {next})")]
    NonMonotone { index: usize, prev: f64, next: f64 },
    #[error("sampling period must be positive and finite, got {0}")]
    BadPeriod(f64),
    #[error("trajectory span {span} s is shorter than the requested period {dt} s")]
    TooShort { span: f64, dt: f64 },
    #[error("time {t} lies outside the trajectory span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose2D,
}

impl TimedPose {
    pub fn new(t: f64, x: f64, y: f64, heading: f64) -> Self {
        Self {
            t,
            pose: Pose2D::new(x, y, heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        self.pose.position()
    }
}

/// Interpolates linearly in position and along the shortest arc in heading.
/// A heading difference of exactly π is taken counter-clockwise.
pub fn interpolate(a: &TimedPose, b: &TimedPose, t: f64) -> TimedPose {
    let s = (t - a.t) / (b.t - a.t);
    let p = a.position().lerp(b.position(), s);
    let dh = wrap_angle(b.pose.heading() - a.pose.heading());
    TimedPose {
        t,
        pose: Pose2D::new(p.x, p.y, a.pose.heading() + s * dh),
    }
}

/// Non-empty, strictly time-ordered sequence of poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<TimedPose>,
    dt: f64,
}

impl Trajectory {
    /// Builds a trajectory; the nominal period is the mean sample gap
    /// (the canonical tick for a single point).
    pub fn new(points: Vec<TimedPose>) -> Result<Self, TrajectoryError> {
        let dt = if points.len() >= 2 {
            (points[points.len() - 1].t - points[0].t) / (points.len() - 1) as f64
        } else {
            DEFAULT_TICK_S
        };
        Self::with_dt(points, dt)
    }

    pub fn with_dt(points: Vec<TimedPose>, dt: f64) -> Result<Self, TrajectoryError> {
        if points.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        for (index, p) in points.iter().enumerate() {
            if !p.t.is_finite() || !p.pose.is_finite() {
                return Err(TrajectoryError::NonFinite { index });
            }
        }
        for (i, w) in points.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(TrajectoryError::NonMonotone {
                    index: i + 1,
                    prev: w[0].t,
                    next: w[1].t,
                });
            }
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(TrajectoryError::BadPeriod(dt));
        }
        Ok(Self { points, dt })
    }

    /// Convenience constructor from `[t, x, y, heading]` rows.
    pub fn from_rows(rows: &[[f64; 4]]) -> Result<Self, TrajectoryError> {
        Self::new(
            rows.iter()
                .map(|r| TimedPose::new(r[0], r[1], r[2], r[3]))
                .collect(),
        )
    }

    pub fn to_rows(&self) -> Vec<[f64; 4]> {
        self.points
            .iter()
            .map(|p| [p.t, p.pose.x, p.pose.y, p.pose.heading()])
            .collect()
    }

    pub fn points(&self) -> &[TimedPose] {
        &self.points
    }

    pub fn into_points(self) -> Vec<TimedPose> {
        self.points
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> &TimedPose {
        &self.points[0]
    }

    pub fn last(&self) -> &TimedPose {
        &self.points[self.points.len() - 1]
    }

    pub fn start_time(&self) -> f64 {
        self.first().t
    }

    pub fn end_time(&self) -> f64 {
        self.last().t
    }

    pub fn span(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.points.iter().map(|p| p.position()).collect()
    }

    /// Pose at time `t`. Queries within [`TIME_EPS`] of a sample return that
    /// sample unchanged.
    pub fn pose_at(&self, t: f64) -> Result<TimedPose, TrajectoryError> {
        let idx = self.points.partition_point(|p| p.t < t - TIME_EPS);
        if idx < self.points.len() && (self.points[idx].t - t).abs() <= TIME_EPS {
            return Ok(self.points[idx]);
        }
        if idx == 0 || idx == self.points.len() {
            return Err(TrajectoryError::OutOfSpan {
                t,
                start: self.start_time(),
                end: self.end_time(),
            });
        }
        Ok(interpolate(&self.points[idx - 1], &self.points[idx], t))
    }

    /// Samples at the given times, all of which must lie inside the span.
    pub fn sample_at(&self, times: &[f64], dt: f64) -> Result<Trajectory, TrajectoryError> {
        let points = times
            .iter()
            .map(|&t| self.pose_at(t).map(|p| TimedPose { t, ..p }))
            .collect::<Result<Vec<_>, _>>()?;
        Trajectory::with_dt(points, dt)
    }

    /// Resamples onto `start + k·dt` for every such time inside the span.
    pub fn resample(&self, dt: f64) -> Result<Trajectory, TrajectoryError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(TrajectoryError::BadPeriod(dt));
        }
        let span = self.span();
        if span + TIME_EPS < dt {
            return Err(TrajectoryError::TooShort { span, dt });
        }
        let n = (span / dt + TIME_EPS).floor() as usize + 1;
        let start = self.start_time();
        let points = (0..n)
            .map(|k| self.pose_at(start + k as f64 * dt))
            .collect::<Result<Vec<_>, _>>()?;
        Trajectory::with_dt(points, dt)
    }

    /// Keeps only samples with `t > after`, prefixed by `anchor`.
    pub fn anchored_after(&self, anchor: TimedPose) -> Result<Trajectory, TrajectoryError> {
        let mut points = vec![anchor];
        points.extend(
            self.points
                .iter()
                .filter(|p| p.t > anchor.t + TIME_EPS)
                .copied(),
        );
        Trajectory::with_dt(points, self.dt)
    }
}

impl Serialize for Trajectory {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<[f64; 4]>::deserialize(d)?;
        Trajectory::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Decomposes `point` in `frame` as `(longitudinal, lateral)`; lateral is
/// positive to the left of the frame heading.
pub fn lateral_longitudinal(point: Pose2D, frame: Pose2D) -> (f64, f64) {
    frame.to_local(point.position())
}
