//! With/without comparison tables.

use serde::{Deserialize, Serialize};

use super::{HarnessError, ResultRow};
use crate::engine::ReservedLaneMode;
use crate::reservation::LosClass;

/// Off-mode and treatment statistics at one market penetration.
///
/// Reductions are relative to the off-mode mean at mp = 0; the paired
/// differences average per-seed `100·(treatment − off)/off`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub testbed: String,
    pub los: LosClass,
    pub treatment: ReservedLaneMode,
    pub mp: f64,
    pub seeds: usize,
    pub treatment_reserved_count: usize,
    pub off_delay_mean: f64,
    pub off_delay_std: f64,
    pub off_served_mean: f64,
    pub off_served_std: f64,
    pub off_tt_mean: f64,
    pub off_tt_std: f64,
    pub treatment_delay_mean: f64,
    pub treatment_delay_std: f64,
    pub treatment_served_mean: f64,
    pub treatment_served_std: f64,
    pub treatment_tt_mean: f64,
    pub treatment_tt_std: f64,
    pub off_tt_reduction_pct: f64,
    pub treatment_tt_reduction_pct: f64,
    pub off_delay_reduction_pct: f64,
    pub treatment_delay_reduction_pct: f64,
    pub off_served_increase_pct: f64,
    pub treatment_served_increase_pct: f64,
    pub paired_tt_diff_pct: f64,
    pub paired_delay_diff_pct: f64,
    pub paired_served_diff_pct: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn pct(from: f64, to: f64) -> f64 {
    if from == 0.0 {
        0.0
    } else {
        100.0 * (to - from) / from
    }
}

/// Builds one comparison row per mp for the `testbed`/`los` slice, pairing
/// `treatment` runs with off-mode runs of the same seed.
pub fn compare(
    rows: &[ResultRow],
    testbed: &str,
    los: LosClass,
    treatment: ReservedLaneMode,
) -> Result<Vec<ComparisonRow>, HarnessError> {
    let slice: Vec<&ResultRow> = rows.iter().filter(|r| r.testbed == testbed && r.los == los).collect();
    let of_mode = |mp: f64, mode: ReservedLaneMode| -> Vec<&ResultRow> {
        let mut v: Vec<&ResultRow> = slice.iter().copied().filter(|r| r.mp == mp && r.reserved_mode == mode).collect();
        v.sort_by_key(|r| r.seed);
        v
    };
    let mut mps: Vec<f64> = slice.iter().map(|r| r.mp).collect();
    mps.sort_by(f64::total_cmp);
    mps.dedup();

    let baseline = of_mode(0.0, ReservedLaneMode::Off);
    if baseline.is_empty() {
        return Err(HarnessError::IncompleteMatrix(format!(
            "no off-mode runs at mp = 0 for {testbed}/{los}"
        )));
    }
    let base = |f: fn(&ResultRow) -> f64| mean_std(&baseline.iter().map(|r| f(r)).collect::<Vec<_>>()).0;
    let (base_delay, base_served, base_tt) = (base(delay), base(served), base(tt));

    let mut out = Vec::with_capacity(mps.len());
    for mp in mps {
        let off = of_mode(mp, ReservedLaneMode::Off);
        let treat = of_mode(mp, treatment);
        let seeds = |v: &[&ResultRow]| v.iter().map(|r| r.seed).collect::<Vec<_>>();
        if off.is_empty() || seeds(&off) != seeds(&treat) {
            return Err(HarnessError::IncompleteMatrix(format!(
                "{testbed}/{los} mp = {mp}: off seeds {:?}, {treatment} seeds {:?}",
                seeds(&off),
                seeds(&treat)
            )));
        }
        let stat = |v: &[&ResultRow], f: fn(&ResultRow) -> f64| mean_std(&v.iter().map(|r| f(r)).collect::<Vec<_>>());
        let paired = |f: fn(&ResultRow) -> f64| {
            let d: Vec<f64> = off.iter().zip(&treat).map(|(o, t)| pct(f(o), f(t))).collect();
            mean_std(&d).0
        };
        let (od, ods) = stat(&off, delay);
        let (os, oss) = stat(&off, served);
        let (ot, ots) = stat(&off, tt);
        let (td, tds) = stat(&treat, delay);
        let (ts, tss) = stat(&treat, served);
        let (tt_, tts) = stat(&treat, tt);
        out.push(ComparisonRow {
            testbed: testbed.to_string(),
            los,
            treatment,
            mp,
            seeds: off.len(),
            treatment_reserved_count: treat[0].reserved_count,
            off_delay_mean: od,
            off_delay_std: ods,
            off_served_mean: os,
            off_served_std: oss,
            off_tt_mean: ot,
            off_tt_std: ots,
            treatment_delay_mean: td,
            treatment_delay_std: tds,
            treatment_served_mean: ts,
            treatment_served_std: tss,
            treatment_tt_mean: tt_,
            treatment_tt_std: tts,
            off_tt_reduction_pct: -pct(base_tt, ot),
            treatment_tt_reduction_pct: -pct(base_tt, tt_),
            off_delay_reduction_pct: -pct(base_delay, od),
            treatment_delay_reduction_pct: -pct(base_delay, td),
            off_served_increase_pct: pct(base_served, os),
            treatment_served_increase_pct: pct(base_served, ts),
            paired_tt_diff_pct: paired(tt),
            paired_delay_diff_pct: paired(delay),
            paired_served_diff_pct: paired(served),
        });
    }
    Ok(out)
}

fn delay(r: &ResultRow) -> f64 {
    r.avg_delay_s
}
fn served(r: &ResultRow) -> f64 {
    r.vehicles_served as f64
}
fn tt(r: &ResultRow) -> f64 {
    r.total_travel_time_vh
}

/// Smallest mp at which the treatment's mean travel time beats off mode.
pub fn crossover(rows: &[ComparisonRow]) -> Option<f64> {
    rows.iter().find(|r| r.treatment_tt_mean < r.off_tt_mean).map(|r| r.mp)
}
