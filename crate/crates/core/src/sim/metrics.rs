use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EpisodeResult, LANE_TOLERANCE};
use crate::dynamics::VehicleState;
use crate::uncertainty::Mode;

/// First time from which every `(vehicle, target y)` stays within the lane
/// tolerance through the last state.
pub fn navigation_time(states: &[Vec<VehicleState<f64>>], targets: &[(usize, f64)], dt: f64) -> Option<f64> {
    let off = |t: usize| targets.iter().any(|&(k, y)| (states[t][k].y - y).abs() >= LANE_TOLERANCE);
    match (0..states.len()).rev().find(|&t| off(t)) {
        None => Some(0.0),
        Some(t) if t + 1 < states.len() => Some((t + 1) as f64 * dt),
        Some(_) => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub mode: Mode,
    pub episodes: usize,
    pub success_rate: f64,
    /// Mean over successful episodes.
    pub navigation_time: Option<f64>,
    pub mean_velocity: f64,
    pub mean_heading: f64,
    pub collision_episodes: usize,
    pub backup_activations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub title: String,
    pub rows: Vec<ModeMetrics>,
}

impl MetricTable {
    pub fn row(&self, mode: Mode) -> Option<&ModeMetrics> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Aligned plain-text table with one column per mode.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let header: Vec<String> = self.rows.iter().map(|r| r.mode.name().to_string()).collect();
        let fields: [(&str, fn(&ModeMetrics) -> String); 6] = [
            ("Episodes", |r| r.episodes.to_string()),
            ("Success rate", |r| format!("{:.2}", r.success_rate)),
            ("Navigation time (s)", |r| {
                r.navigation_time.map_or_else(|| "-".into(), |v| format!("{v:.2}"))
            }),
            ("Averaged velocity (m/s)", |r| format!("{:.4}", r.mean_velocity)),
            ("Averaged heading angle (rad)", |r| format!("{:.4}", r.mean_heading)),
            ("Backup activations", |r| format!("{:.1}", r.backup_activations)),
        ];
        let label_w = fields.iter().map(|f| f.0.len()).max().unwrap_or(0);
        let cells: Vec<Vec<String>> = fields.iter().map(|(_, f)| self.rows.iter().map(f).collect()).collect();
        let col_w: Vec<usize> = (0..self.rows.len())
            .map(|c| cells.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let _ = write!(out, "{:label_w$}", "");
        for (h, w) in header.iter().zip(&col_w) {
            let _ = write!(out, "  {h:>w$}");
        }
        out.push('\n');
        for ((label, _), row) in fields.iter().zip(&cells) {
            let _ = write!(out, "{label:label_w$}");
            for (v, w) in row.iter().zip(&col_w) {
                let _ = write!(out, "  {v:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// One row per mode present in `results`, in the order MUACP, TCM, SEM.
pub fn compute_metrics(title: &str, results: &[EpisodeResult]) -> MetricTable {
    let rows = Mode::ALL
        .iter()
        .filter_map(|&mode| {
            let eps: Vec<&EpisodeResult> = results.iter().filter(|r| r.mode == mode).collect();
            if eps.is_empty() {
                return None;
            }
            let successes = eps.iter().filter(|r| r.success).count();
            let nav: Vec<f64> = eps.iter().filter(|r| r.success).filter_map(|r| r.navigation_time).collect();
            let vel: Vec<f64> = eps.iter().map(|r| r.mean_velocity_measured()).collect();
            let head: Vec<f64> = eps.iter().map(|r| r.mean_heading_measured()).collect();
            let backups: Vec<f64> = eps.iter().map(|r| r.backup_activations as f64).collect();
            Some(ModeMetrics {
                mode,
                episodes: eps.len(),
                success_rate: successes as f64 / eps.len() as f64,
                navigation_time: (!nav.is_empty()).then(|| mean(&nav)),
                mean_velocity: mean(&vel),
                mean_heading: mean(&head),
                collision_episodes: eps.iter().filter(|r| !r.collisions.is_empty()).count(),
                backup_activations: mean(&backups),
            })
        })
        .collect();
    MetricTable {
        title: title.to_string(),
        rows,
    }
}
