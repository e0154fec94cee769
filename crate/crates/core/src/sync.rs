//! Frame timestamping and navigation interpolation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_degrees, Attitude, Point2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("cutting rate {fc} fps does not divide video rate {fv} fps (ratio {ratio:.6})")]
    NonDivisorRate { fv: f64, fc: f64, ratio: f64 },
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("time {t} outside track range [{first}, {last}]")]
    OutOfTrackRange { t: f64, first: f64, last: f64 },
    #[error("invalid track: {0}")]
    InvalidTrack(String),
}

/// Relative tolerance on the `fv / fc` integrality check.
pub const RATE_RATIO_TOLERANCE: f64 = 1e-6;

/// Returns `fv / fc` when the cutting rate divides the video rate, so every
/// extracted frame coincides with a recorded one.
pub fn validate_frame_rates(fv: f64, fc: f64) -> Result<u32, SyncError> {
    if !(fv > 0.0 && fc > 0.0) || !fv.is_finite() || !fc.is_finite() {
        return Err(SyncError::InvalidTiming(format!(
            "frame rates must be positive, got fv={fv} fc={fc}"
        )));
    }
    let ratio = fv / fc;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > RATE_RATIO_TOLERANCE * ratio {
        return Err(SyncError::NonDivisorRate { fv, fc, ratio });
    }
    Ok(k as u32)
}

/// Clock the anchor frame's time was read from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSource {
    #[default]
    Utc,
    /// GPS time runs ahead of UTC by the leap offset.
    Gps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTiming {
    pub fv: f64,
    pub fc: f64,
    pub anchor_frame: i64,
    pub anchor_utc: f64,
    #[serde(default = "default_leap_offset")]
    pub leap_offset: f64,
    #[serde(default)]
    pub anchor_source: TimeSource,
}

fn default_leap_offset() -> f64 {
    18.0
}

impl VideoTiming {
    pub fn new(
        fv: f64,
        fc: f64,
        anchor_frame: i64,
        anchor_utc: f64,
        leap_offset: f64,
        anchor_source: TimeSource,
    ) -> Result<Self, SyncError> {
        let t = Self {
            fv,
            fc,
            anchor_frame,
            anchor_utc,
            leap_offset,
            anchor_source,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<u32, SyncError> {
        if !(self.leap_offset >= 0.0) {
            return Err(SyncError::InvalidTiming(format!(
                "leap offset must be non-negative, got {}",
                self.leap_offset
            )));
        }
        validate_frame_rates(self.fv, self.fc)
    }
}

/// UTC time of an extracted frame, counted from the anchor frame at the
/// cutting rate.
pub fn frame_timestamp(timing: &VideoTiming, frame_idx: i64) -> f64 {
    let t = timing.anchor_utc + (frame_idx - timing.anchor_frame) as f64 / timing.fc;
    match timing.anchor_source {
        TimeSource::Utc => t,
        TimeSource::Gps => t - timing.leap_offset,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavFix {
    pub timestamp_utc: f64,
    pub position: Point2,
    pub depth: f64,
    pub attitude: Attitude,
}

/// Navigation state at an arbitrary time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub position: Point2,
    pub depth: f64,
    pub attitude: Attitude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsTrack {
    fixes: Vec<NavFix>,
}

impl GpsTrack {
    pub fn new(fixes: Vec<NavFix>) -> Result<Self, SyncError> {
        if fixes.len() < 2 {
            return Err(SyncError::InvalidTrack(format!(
                "need at least 2 fixes, got {}",
                fixes.len()
            )));
        }
        if let Some(w) = fixes.windows(2).find(|w| !(w[1].timestamp_utc > w[0].timestamp_utc)) {
            return Err(SyncError::InvalidTrack(format!(
                "timestamps not strictly increasing at {}",
                w[1].timestamp_utc
            )));
        }
        Ok(Self { fixes })
    }

    pub fn fixes(&self) -> &[NavFix] {
        &self.fixes
    }

    pub fn time_range(&self) -> (f64, f64) {
        (self.fixes[0].timestamp_utc, self.fixes[self.fixes.len() - 1].timestamp_utc)
    }
}

fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a + f * (b - a)
}

/// Interpolates along the shorter arc between two headings.
pub fn lerp_heading(a: f64, b: f64, f: f64) -> f64 {
    let diff = (b - a + 540.0).rem_euclid(360.0) - 180.0;
    normalize_degrees(a + f * diff)
}

/// Linear interpolation of position, depth, roll and pitch; yaw follows the
/// shortest arc.
pub fn interpolate_track(track: &GpsTrack, t: f64) -> Result<NavState, SyncError> {
    let (first, last) = track.time_range();
    if !(t >= first && t <= last) {
        return Err(SyncError::OutOfTrackRange { t, first, last });
    }
    let fixes = track.fixes();
    let i = fixes.partition_point(|f| f.timestamp_utc <= t);
    let (a, b) = if i == 0 {
        (&fixes[0], &fixes[1])
    } else if i >= fixes.len() {
        let last = &fixes[fixes.len() - 1];
        return Ok(NavState {
            position: last.position,
            depth: last.depth,
            attitude: last.attitude,
        });
    } else {
        (&fixes[i - 1], &fixes[i])
    };
    if t == a.timestamp_utc {
        return Ok(NavState {
            position: a.position,
            depth: a.depth,
            attitude: a.attitude,
        });
    }
    let f = (t - a.timestamp_utc) / (b.timestamp_utc - a.timestamp_utc);
    Ok(NavState {
        position: Point2::new(lerp(a.position.x, b.position.x, f), lerp(a.position.y, b.position.y, f)),
        depth: lerp(a.depth, b.depth, f),
        attitude: Attitude {
            roll: lerp(a.attitude.roll, b.attitude.roll, f),
            pitch: lerp(a.attitude.pitch, b.attitude.pitch, f),
            yaw: lerp_heading(a.attitude.yaw, b.attitude.yaw, f),
        },
    })
}
