//! Point induction-loop detectors, sampled once per simulation step.

use serde::{Deserialize, Serialize};

/// One vehicle's front-bumper trajectory across a sampling interval, in the
/// detector lane's coordinates. Fronts move linearly from `start` to `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pass {
    pub start: f64,
    pub end: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReading {
    pub detector: usize,
    pub interval_start: u64,
    /// Percent of the interval during which the loop was covered, in [0, 100].
    pub occupancy: f64,
    /// Vehicle fronts crossing the loop during the interval.
    pub flow: u32,
    pub time_since_last_detection: f64,
}

/// Raw interval measurement, before the detection clock is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub occupancy: f64,
    pub flow: u32,
    pub occupied: bool,
}

/// Time window within `[0, dt]` during which a vehicle body covers `position`.
fn cover_window(position: f64, pass: &Pass, dt: f64) -> Option<(f64, f64)> {
    let (lo, hi) = (position, position + pass.length);
    if pass.end <= pass.start {
        return (lo..=hi).contains(&pass.start).then_some((0.0, dt));
    }
    let span = pass.end - pass.start;
    let t0 = ((lo - pass.start) / span * dt).max(0.0);
    let t1 = ((hi - pass.start) / span * dt).min(dt);
    (t1 > t0 || (t1 == t0 && (lo..=hi).contains(&pass.start))).then_some((t0, t1))
}

/// Occupancy and flow at a point detector for one interval of length `dt`.
pub fn sample(position: f64, passes: &[Pass], dt: f64) -> Sample {
    let mut windows: Vec<(f64, f64)> = passes.iter().filter_map(|p| cover_window(position, p, dt)).collect();
    windows.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut covered = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for (s, e) in windows.iter().copied() {
        current = match current {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                covered += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = current {
        covered += ce - cs;
    }

    let flow = passes.iter().filter(|p| p.start < position && position <= p.end).count() as u32;
    Sample { occupancy: (100.0 * covered / dt).clamp(0.0, 100.0), flow, occupied: !windows.is_empty() }
}

/// Detection clocks for every loop of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorBank {
    since_detection: Vec<f64>,
}

impl DetectorBank {
    /// A fresh bank reads as if nothing has been detected for a long time.
    pub fn new(detectors: usize) -> Self {
        Self { since_detection: vec![f64::INFINITY; detectors] }
    }

    pub fn record(&mut self, detector: usize, interval_start: u64, sample: Sample, dt: f64) -> LoopReading {
        let clock = &mut self.since_detection[detector];
        *clock = if sample.occupied { 0.0 } else { *clock + dt };
        LoopReading { detector, interval_start, occupancy: sample.occupancy, flow: sample.flow, time_since_last_detection: *clock }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_lane_reads_zero() {
        let s = sample(90.0, &[], 1.0);
        assert_eq!((s.occupancy, s.flow, s.occupied), (0.0, 0, false));
    }

    #[test]
    fn standing_vehicle_fully_occupies() {
        let s = sample(90.0, &[Pass { start: 92.0, end: 92.0, length: 5.0 }], 1.0);
        assert_eq!((s.occupancy, s.flow), (100.0, 0));
    }

    #[test]
    fn crossing_at_ten_metres_per_second() {
        // Front passes the loop at t = 0.5 s and the rear clears it at t = 1 s.
        let s = sample(90.0, &[Pass { start: 85.0, end: 95.0, length: 5.0 }], 1.0);
        assert!((s.occupancy - 50.0).abs() < 1e-12);
        assert_eq!(s.flow, 1);
    }

    #[test]
    fn overlapping_vehicles_do_not_double_count() {
        let passes = [Pass { start: 92.0, end: 92.0, length: 5.0 }, Pass { start: 85.0, end: 95.0, length: 5.0 }];
        assert_eq!(sample(90.0, &passes, 1.0).occupancy, 100.0);
    }

    #[test]
    fn clock_resets_on_detection() {
        let mut bank = DetectorBank::new(1);
        let empty = Sample { occupancy: 0.0, flow: 0, occupied: false };
        let hit = Sample { occupancy: 40.0, flow: 1, occupied: true };
        assert_eq!(bank.record(0, 0, hit, 1.0).time_since_last_detection, 0.0);
        assert_eq!(bank.record(0, 1, empty, 1.0).time_since_last_detection, 1.0);
        assert_eq!(bank.record(0, 2, empty, 1.0).time_since_last_detection, 2.0);
        assert_eq!(bank.record(0, 3, hit, 1.0).time_since_last_detection, 0.0);
    }

    proptest! {
        #[test]
        fn occupancy_bounded(start in 0.0f64..200.0, speed in 0.0f64..20.0, len in 1.0f64..10.0) {
            let s = sample(100.0, &[Pass { start, end: start + speed, length: len }], 1.0);
            prop_assert!((0.0..=100.0).contains(&s.occupancy));
        }

        #[test]
        fn occupancy_monotone_in_dwell(speed_slow in 0.5f64..5.0, extra in 0.0f64..10.0) {
            // Both fronts cross the loop at mid-interval; slower means longer dwell.
            let fast = speed_slow + extra;
            let slow_pass = Pass { start: 100.0 - speed_slow / 2.0, end: 100.0 + speed_slow / 2.0, length: 5.0 };
            let fast_pass = Pass { start: 100.0 - fast / 2.0, end: 100.0 + fast / 2.0, length: 5.0 };
            let slow = sample(100.0, &[slow_pass], 1.0).occupancy;
            let quick = sample(100.0, &[fast_pass], 1.0).occupancy;
            prop_assert!(slow + 1e-9 >= quick);
        }
    }
}
