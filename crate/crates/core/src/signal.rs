//! Fixed-time coordinated signal plans and SPaT queries.
//!
//! A plan describes the mainline approach only. Local time inside the cycle is
//! `(t - offset) mod cycle`; the plan holds exactly one green interval, so the
//! green window of every cycle is a single half-open interval.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DURATION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseState {
    Green,
    Yellow,
    Red,
}

impl PhaseState {
    pub fn is_green(self) -> bool {
        self == PhaseState::Green
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseInterval {
    pub state: PhaseState,
    pub duration: f64,
}

impl PhaseInterval {
    pub fn new(state: PhaseState, duration: f64) -> Self {
        Self { state, duration }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("cycle length must be positive, got {0}")]
    NonPositiveCycle(f64),
    #[error("interval {index} has non-positive duration {duration}")]
    NonPositiveInterval { index: usize, duration: f64 },
    #[error("interval durations sum to {sum} but the cycle is {cycle}")]
    CycleMismatch { sum: f64, cycle: f64 },
    #[error("plan must contain exactly one green interval, found {0}")]
    GreenCount(usize),
}

/// A green window `[start, end)` in absolute simulation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenWindow {
    pub start: f64,
    pub end: f64,
}

impl GreenWindow {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Fixed-time plan for the mainline approach of one intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlan", into = "RawPlan")]
pub struct SignalPlan {
    cycle: f64,
    offset: f64,
    intervals: Vec<PhaseInterval>,
    // Local-time bounds of the single green interval.
    green_start: f64,
    green_end: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPlan {
    cycle: f64,
    offset: f64,
    intervals: Vec<PhaseInterval>,
}

impl TryFrom<RawPlan> for SignalPlan {
    type Error = SignalError;

    fn try_from(raw: RawPlan) -> Result<Self, Self::Error> {
        SignalPlan::new(raw.cycle, raw.offset, raw.intervals)
    }
}

impl From<SignalPlan> for RawPlan {
    fn from(plan: SignalPlan) -> Self {
        RawPlan {
            cycle: plan.cycle,
            offset: plan.offset,
            intervals: plan.intervals,
        }
    }
}

impl SignalPlan {
    pub fn new(cycle: f64, offset: f64, intervals: Vec<PhaseInterval>) -> Result<Self, SignalError> {
        if !(cycle > 0.0) || !cycle.is_finite() {
            return Err(SignalError::NonPositiveCycle(cycle));
        }
        for (index, interval) in intervals.iter().enumerate() {
            if !(interval.duration > 0.0) {
                return Err(SignalError::NonPositiveInterval {
                    index,
                    duration: interval.duration,
                });
            }
        }
        let sum: f64 = intervals.iter().map(|i| i.duration).sum();
        if (sum - cycle).abs() > DURATION_EPS * cycle.max(1.0) {
            return Err(SignalError::CycleMismatch { sum, cycle });
        }
        let greens = intervals.iter().filter(|i| i.state.is_green()).count();
        if greens != 1 {
            return Err(SignalError::GreenCount(greens));
        }

        let mut green_start = 0.0;
        let mut green_end = 0.0;
        let mut cursor = 0.0;
        for interval in &intervals {
            if interval.state.is_green() {
                green_start = cursor;
                green_end = cursor + interval.duration;
            }
            cursor += interval.duration;
        }

        Ok(Self {
            cycle,
            offset,
            intervals,
            green_start,
            green_end,
        })
    }

    /// Conventional three-interval plan: green, yellow, then red for the rest
    /// of the cycle.
    pub fn green_yellow_red(cycle: f64, offset: f64, green: f64, yellow: f64) -> Result<Self, SignalError> {
        let red = cycle - green - yellow;
        Self::new(
            cycle,
            offset,
            vec![
                PhaseInterval::new(PhaseState::Green, green),
                PhaseInterval::new(PhaseState::Yellow, yellow),
                PhaseInterval::new(PhaseState::Red, red),
            ],
        )
    }

    /// A plan that is green for the whole cycle.
    pub fn always_green(cycle: f64) -> Self {
        Self::new(cycle, 0.0, vec![PhaseInterval::new(PhaseState::Green, cycle)])
            .expect("single green interval is a valid plan")
    }

    pub fn cycle(&self) -> f64 {
        self.cycle
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn intervals(&self) -> &[PhaseInterval] {
        &self.intervals
    }

    pub fn green_duration(&self) -> f64 {
        self.green_end - self.green_start
    }

    /// Green share of the cycle, `g / C`.
    pub fn green_ratio(&self) -> f64 {
        self.green_duration() / self.cycle
    }

    fn local_time(&self, t: f64) -> f64 {
        let local = (t - self.offset).rem_euclid(self.cycle);
        // rem_euclid can round up to exactly `cycle` for tiny negative inputs.
        if local >= self.cycle {
            0.0
        } else {
            local
        }
    }

    pub fn phase_state(&self, t: f64) -> PhaseState {
        let local = self.local_time(t);
        let mut cursor = 0.0;
        for interval in &self.intervals {
            cursor += interval.duration;
            if local < cursor {
                return interval.state;
            }
        }
        // Only reachable through rounding at the very end of the cycle.
        self.intervals.last().map(|i| i.state).unwrap_or(PhaseState::Red)
    }

    /// Seconds remaining in the current interval at time `t`.
    pub fn time_to_phase_end(&self, t: f64) -> f64 {
        let local = self.local_time(t);
        let mut cursor = 0.0;
        for interval in &self.intervals {
            cursor += interval.duration;
            if local < cursor {
                return cursor - local;
            }
        }
        0.0
    }

    /// Seconds since the current green began, or `None` when not green.
    pub fn green_elapsed(&self, t: f64) -> Option<f64> {
        let local = self.local_time(t);
        (local >= self.green_start && local < self.green_end).then(|| local - self.green_start)
    }

    fn is_always_green(&self) -> bool {
        self.green_duration() >= self.cycle
    }

    /// Earliest green window whose end lies after `t`. When `t` is inside a
    /// green interval the window starts at `t` itself. A plan that is green
    /// for the whole cycle has one unbounded window.
    pub fn next_green_window(&self, t: f64) -> GreenWindow {
        if self.is_always_green() {
            return GreenWindow { start: t, end: f64::INFINITY };
        }
        let local = self.local_time(t);
        let cycle_start = t - local;
        if local < self.green_start {
            GreenWindow {
                start: cycle_start + self.green_start,
                end: cycle_start + self.green_end,
            }
        } else if local < self.green_end {
            GreenWindow {
                start: t,
                end: cycle_start + self.green_end,
            }
        } else {
            let next = cycle_start + self.cycle;
            GreenWindow {
                start: next + self.green_start,
                end: next + self.green_end,
            }
        }
    }

    /// Green windows in chronological order starting from `t`, clipped so the
    /// first one never starts before `t`.
    pub fn green_windows_from(&self, t: f64) -> impl Iterator<Item = GreenWindow> + '_ {
        let first = self.next_green_window(t);
        let full_start = first.end - self.green_duration();
        let count = if self.is_always_green() { 1 } else { usize::MAX };
        (0u32..).take(count).map(move |k| {
            if k == 0 {
                first
            } else {
                let shift = f64::from(k) * self.cycle;
                GreenWindow {
                    start: full_start + shift,
                    end: first.end + shift,
                }
            }
        })
    }
}
