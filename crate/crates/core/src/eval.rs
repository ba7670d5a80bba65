//! Odometry error metrics: relative translation (percent) and rotation
//! (deg/m) errors averaged over every sub-trajectory of 100 m to 800 m.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geom::{rotation_angle, Pose3};

/// Sub-trajectory lengths in meters.
pub const LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Round-off allowance when matching travelled distance to a length.
const DISTANCE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("trajectories differ in length: {est} estimated vs {gt} ground-truth poses")]
    LengthMismatch { est: usize, gt: usize },
    #[error("empty trajectory")]
    Empty,
}

/// Error statistics for one sub-trajectory length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LengthError {
    pub length: f64,
    /// Percent.
    pub t_rel: f64,
    /// Degrees per meter.
    pub r_rel: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub sequence: String,
    /// Percent, averaged over all sub-trajectories.
    pub t_rel: f64,
    /// Degrees per meter.
    pub r_rel: f64,
    pub per_length: Vec<LengthError>,
    /// Distance between final estimated and true positions, meters.
    pub final_err: f64,
    /// Ground-truth path length, meters.
    pub length: f64,
    pub duration: f64,
    /// Number of sub-trajectories averaged.
    pub segments: usize,
}

impl ErrorReport {
    /// True when the trajectory was too short for any sub-trajectory.
    pub fn is_short(&self) -> bool {
        self.segments == 0
    }
}

/// Prefix sums of consecutive position deltas.
pub fn cumulative_distance(poses: &[Pose3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(poses.len());
    let mut acc = 0.0;
    for (i, p) in poses.iter().enumerate() {
        if i > 0 {
            acc += (p.translation - poses[i - 1].translation).norm();
        }
        out.push(acc);
    }
    out
}

/// Relative errors over the standard lengths.
pub fn relative_errors(est: &[Pose3], gt: &[Pose3]) -> Result<ErrorReport, EvalError> {
    relative_errors_with(est, gt, &LENGTHS)
}

/// Relative errors over the given sub-trajectory lengths. Every frame is a
/// start frame; a sub-trajectory ends at the first frame whose travelled
/// distance reaches the start's plus the length.
pub fn relative_errors_with(est: &[Pose3], gt: &[Pose3], lengths: &[f64]) -> Result<ErrorReport, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if gt.is_empty() {
        return Err(EvalError::Empty);
    }
    let dist = cumulative_distance(gt);
    let n = gt.len();

    let mut per_length = Vec::new();
    let (mut t_sum, mut r_sum, mut total) = (0.0, 0.0, 0usize);
    for &len in lengths {
        let (mut t_acc, mut r_acc, mut count) = (0.0, 0.0, 0usize);
        let mut last = 0;
        for first in 0..n {
            let target = dist[first] + len;
            last = last.max(first);
            while last < n && dist[last] < target - DISTANCE_SLACK {
                last += 1;
            }
            if last == n {
                break;
            }
            let delta_gt = gt[first].between(&gt[last]);
            let delta_est = est[first].between(&est[last]);
            let err = delta_est.between(&delta_gt);
            t_acc += err.translation.norm() / len;
            r_acc += rotation_angle(&err.rotation) / len;
            count += 1;
        }
        if count > 0 {
            per_length.push(LengthError {
                length: len,
                t_rel: 100.0 * t_acc / count as f64,
                r_rel: (r_acc / count as f64).to_degrees(),
                count,
            });
            t_sum += t_acc;
            r_sum += r_acc;
            total += count;
        }
    }

    let (t_rel, r_rel) = if total > 0 {
        (100.0 * t_sum / total as f64, (r_sum / total as f64).to_degrees())
    } else {
        (0.0, 0.0)
    };
    Ok(ErrorReport {
        sequence: String::new(),
        t_rel,
        r_rel,
        per_length,
        final_err: (est[n - 1].translation - gt[n - 1].translation).norm(),
        length: dist[n - 1],
        duration: 0.0,
        segments: total,
    })
}

/// CSV and aligned-text tables with one row per sequence plus an average
/// row. Reports without any sub-trajectory are listed but left out of the
/// average.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub csv: String,
    pub table: String,
    pub average_t_rel: f64,
    pub average_r_rel: f64,
}

pub const CSV_HEADER: &str = "sequence,length_m,duration_s,t_rel_pct,r_rel_degpm,final_err_m";

pub fn summarize(reports: &[ErrorReport]) -> Summary {
    let valid: Vec<&ErrorReport> = reports.iter().filter(|r| !r.is_short()).collect();
    let mean = |f: &dyn Fn(&ErrorReport) -> f64| -> f64 {
        if valid.is_empty() {
            f64::NAN
        } else {
            valid.iter().map(|r| f(r)).sum::<f64>() / valid.len() as f64
        }
    };
    let avg_len = mean(&|r| r.length);
    let avg_dur = mean(&|r| r.duration);
    let avg_t = mean(&|r| r.t_rel);
    let avg_r = mean(&|r| r.r_rel);
    let avg_final = mean(&|r| r.final_err);

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in reports {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.sequence, r.length, r.duration, r.t_rel, r.r_rel, r.final_err
        );
    }
    let _ = writeln!(csv, "average,{avg_len},{avg_dur},{avg_t},{avg_r},{avg_final}");

    let mut table = format!(
        "{:<16} {:>10} {:>10} {:>10} {:>12} {:>12}\n",
        "sequence", "length(m)", "time(s)", "t_rel(%)", "r_rel(deg/m)", "final(m)"
    );
    for r in reports {
        let mark = if r.is_short() { "*" } else { "" };
        let _ = writeln!(
            table,
            "{:<16} {:>10.1} {:>10.1} {:>10.3} {:>12.4} {:>12.2}",
            format!("{}{mark}", r.sequence),
            r.length,
            r.duration,
            r.t_rel,
            r.r_rel,
            r.final_err
        );
    }
    let _ = writeln!(
        table,
        "{:<16} {:>10.1} {:>10.1} {:>10.3} {:>12.4} {:>12.2}",
        "average", avg_len, avg_dur, avg_t, avg_r, avg_final
    );
    if valid.len() != reports.len() {
        table.push_str("* shorter than 100 m; excluded from the average\n");
    }
    Summary {
        csv,
        table,
        average_t_rel: avg_t,
        average_r_rel: avg_r,
    }
}
