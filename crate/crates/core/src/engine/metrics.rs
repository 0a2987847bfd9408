//! Run metrics and safety audits.

use serde::{Deserialize, Serialize};

/// Length of one reporting interval, s.
pub const INTERVAL: f64 = 300.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    /// Start of the interval, seconds after warmup.
    pub start: f64,
    pub avg_delay_per_vehicle: f64,
    pub vehicles_served: u64,
    pub total_travel_time: f64,
}

/// Counters for conditions that must never occur, plus a few diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCounts {
    /// Bumper-to-bumper gap at or below zero after a step.
    pub collisions: u64,
    /// Stop bar crossed while the approach showed red.
    pub red_light_violations: u64,
    /// Conventional vehicle-steps spent in a reserved lane.
    pub reserved_lane_violations: u64,
    /// Speed outside `[0, 1.1 × limit]`.
    pub speed_violations: u64,
    /// Step displacement above `v_max·dt + a_max·dt²/2`.
    pub teleport_violations: u64,
    /// Generated ≠ in network + exited.
    pub conservation_violations: u64,
    /// Commanded acceleration above the car-following value.
    pub advisory_violations: u64,
    /// Served vehicles whose delay is below -1 s.
    pub negative_delays: u64,
    /// Displacements clipped to keep a minimum gap behind the leader.
    pub leader_guard_activations: u64,
    /// Displacements clipped to keep a vehicle behind a red stop bar.
    pub red_guard_activations: u64,
    /// Left-turners that reached their diverge outside the right-most lane.
    pub missed_turns: u64,
    pub lane_changes: u64,
}

impl AuditCounts {
    /// True when no hard invariant was violated.
    pub fn clean(&self) -> bool {
        self.collisions == 0
            && self.red_light_violations == 0
            && self.reserved_lane_violations == 0
            && self.speed_violations == 0
            && self.teleport_violations == 0
            && self.conservation_violations == 0
            && self.advisory_violations == 0
            && self.negative_delays == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Mean of (traversal time − free-flow time) over vehicles served, s.
    pub avg_delay_per_vehicle: f64,
    pub vehicles_served: u64,
    /// Vehicle-hours spent in the system during the analysis window, on the
    /// mainline or waiting at an entry.
    pub total_travel_time: f64,
    /// The entry-queue part of `total_travel_time`.
    pub entry_queue_time: f64,
    pub vehicles_generated: u64,
    /// Vehicles still on the mainline or waiting to enter at the end.
    pub vehicles_remaining: u64,
    pub reserved_count: usize,
    pub intervals: Vec<IntervalMetrics>,
    pub audits: AuditCounts,
}

impl RunMetrics {
    /// One row per reporting interval followed by a `total` row.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scope", "start", "avg_delay_s", "vehicles_served", "total_travel_time_vh"])?;
        for i in &self.intervals {
            w.write_record([
                "interval".to_string(),
                i.start.to_string(),
                i.avg_delay_per_vehicle.to_string(),
                i.vehicles_served.to_string(),
                i.total_travel_time.to_string(),
            ])?;
        }
        w.write_record([
            "total".to_string(),
            String::new(),
            self.avg_delay_per_vehicle.to_string(),
            self.vehicles_served.to_string(),
            self.total_travel_time.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Accumulates metrics over the post-warmup window.
#[derive(Debug, Clone)]
pub(crate) struct MetricsAccumulator {
    warmup: f64,
    end: f64,
    delay_sum: f64,
    served: u64,
    tt_seconds: f64,
    queue_seconds: f64,
    intervals: Vec<(f64, u64, f64)>,
}

impl MetricsAccumulator {
    pub fn new(warmup: f64, duration: f64) -> Self {
        let n = (duration / INTERVAL).ceil().max(1.0) as usize;
        Self {
            warmup,
            end: warmup + duration,
            delay_sum: 0.0,
            served: 0,
            tt_seconds: 0.0,
            queue_seconds: 0.0,
            intervals: vec![(0.0, 0, 0.0); n],
        }
    }

    // A step ending at `t_end` belongs to the window when it ends inside
    // `(warmup, warmup + duration]`.
    fn slot(&self, t_end: f64) -> Option<usize> {
        let eps = 1e-9;
        if t_end <= self.warmup + eps || t_end > self.end + eps {
            return None;
        }
        let k = ((t_end - self.warmup - eps) / INTERVAL).floor() as usize;
        Some(k.min(self.intervals.len() - 1))
    }

    pub fn record_step(&mut self, t_end: f64, dt: f64, on_mainline: usize, queued: usize) {
        if let Some(k) = self.slot(t_end) {
            let q = queued as f64 * dt;
            let s = on_mainline as f64 * dt + q;
            self.tt_seconds += s;
            self.queue_seconds += q;
            self.intervals[k].2 += s;
        }
    }

    pub fn record_exit(&mut self, t_exit: f64, delay: f64) {
        if let Some(k) = self.slot(t_exit) {
            self.delay_sum += delay;
            self.served += 1;
            self.intervals[k].0 += delay;
            self.intervals[k].1 += 1;
        }
    }

    pub fn finish(&self) -> RunMetrics {
        let avg = |sum: f64, n: u64| if n == 0 { 0.0 } else { sum / n as f64 };
        RunMetrics {
            avg_delay_per_vehicle: avg(self.delay_sum, self.served),
            vehicles_served: self.served,
            total_travel_time: self.tt_seconds / 3600.0,
            entry_queue_time: self.queue_seconds / 3600.0,
            intervals: self
                .intervals
                .iter()
                .enumerate()
                .map(|(k, &(d, n, tt))| IntervalMetrics {
                    start: k as f64 * INTERVAL,
                    avg_delay_per_vehicle: avg(d, n),
                    vehicles_served: n,
                    total_travel_time: tt / 3600.0,
                })
                .collect(),
            ..RunMetrics::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_boundaries() {
        let mut m = MetricsAccumulator::new(900.0, 3600.0);
        m.record_exit(900.0, 5.0); // before the window
        m.record_exit(900.1, 4.0);
        m.record_exit(1200.0, 2.0); // last instant of the first interval
        m.record_exit(1200.1, 6.0);
        m.record_exit(4500.0, 1.0);
        m.record_exit(4500.1, 100.0); // after
        m.record_step(900.1, 0.1, 36, 5);
        let r = m.finish();
        assert_eq!(r.vehicles_served, 4);
        assert!((r.avg_delay_per_vehicle - 13.0 / 4.0).abs() < 1e-12);
        assert_eq!(r.intervals.len(), 12);
        assert_eq!(r.intervals[0].vehicles_served, 2);
        assert_eq!(r.intervals[1].vehicles_served, 1);
        assert_eq!(r.intervals[11].vehicles_served, 1);
        assert!((r.total_travel_time - 4.1 / 3600.0).abs() < 1e-12);
        assert!((r.entry_queue_time - 0.5 / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn empty_window_is_zero() {
        let r = MetricsAccumulator::new(0.0, 600.0).finish();
        assert_eq!(r.vehicles_served, 0);
        assert_eq!(r.avg_delay_per_vehicle, 0.0);
        assert_eq!(r.intervals.len(), 2);
        assert!(r.audits.clean());
    }
}
