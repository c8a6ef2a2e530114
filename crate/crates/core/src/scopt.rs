//! Greedy skip-connection placement over the HE cost matrix, and the
//! linear schedule that fades skips out during training.

use std::fmt::Write as _;

use serde::Serialize;

use crate::hecost::{analyze, HeError, HeProfile};
use crate::netgraph::{GraphError, NetworkGraph, SkipEdge};

#[derive(Debug, thiserror::Error)]
pub enum ScoptError {
    #[error("graph has no layers to connect")]
    EmptyGraph,
    #[error("graph already has {0} skip connections; strip them first")]
    HasSkips(usize),
    #[error("removal schedule needs at least one epoch")]
    ZeroEpochs,
    #[error("budget must be a non-negative number, got {0}")]
    Budget(f64),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Placement {
    pub i: usize,
    pub j: usize,
    pub cost: f64,
}

#[derive(Clone, Debug)]
pub struct PlacementPlan {
    pub placements: Vec<Placement>,
    pub total_cost: f64,
    pub graph: NetworkGraph,
}

impl PlacementPlan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,cost\n");
        for p in &self.placements {
            let _ = writeln!(s, "{},{},{}", p.i, p.j, p.cost);
        }
        s
    }
}

/// Limits on [`place_skips`]. A placement that would push the total past
/// `budget` ends the search, unless fewer than `min_skips` are placed yet.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlacementLimits {
    pub budget: Option<f64>,
    pub min_skips: usize,
}

/// Starting at layer 0, connects layer `i` to the cheapest later layer `j`
/// (smallest `j` on ties) and continues from `j + 1`. The cost matrix is
/// recomputed on the grown graph after every placement. Rows without a
/// finite entry are skipped.
pub fn place_skips(graph: &NetworkGraph, profile: &HeProfile, limits: PlacementLimits) -> Result<PlacementPlan, ScoptError> {
    if let Some(b) = limits.budget {
        if !(b >= 0.0) {
            return Err(ScoptError::Budget(b));
        }
    }
    let existing = graph.skips().len();
    if existing > 0 {
        return Err(ScoptError::HasSkips(existing));
    }
    let n = graph.layers().len();
    if n < 2 {
        return Err(ScoptError::EmptyGraph);
    }
    let mut g = graph.clone();
    let mut matrix = analyze(&g, profile)?.cost_matrix();
    let mut placements = Vec::new();
    let mut total = 0.0;
    let mut i = 0;
    while i + 1 < n {
        let mut best: Option<(usize, f64)> = None;
        for (j, &c) in matrix.row(i).iter().enumerate().skip(i + 1) {
            if c.is_finite() && best.is_none_or(|(_, b)| c < b) {
                best = Some((j, c));
            }
        }
        let Some((j, cost)) = best else {
            i += 1;
            continue;
        };
        if let Some(budget) = limits.budget {
            if total + cost > budget && placements.len() >= limits.min_skips {
                break;
            }
        }
        g = g.with_skip(SkipEdge { i, j, a: 1.0 })?.0;
        placements.push(Placement { i, j, cost });
        total += cost;
        matrix = analyze(&g, profile)?.cost_matrix();
        i = j + 1;
    }
    Ok(PlacementPlan {
        placements,
        total_cost: total,
        graph: g,
    })
}

/// Skip scales for epochs `1..=n`: `a_E = 1 - E/n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemovalSchedule {
    pub n: usize,
    pub scales: Vec<f64>,
}

impl RemovalSchedule {
    /// Scale in force during epoch `e`; 1 before the schedule starts and 0
    /// once it has run out.
    pub fn at(&self, e: usize) -> f64 {
        match e {
            0 => 1.0,
            e if e <= self.n => self.scales[e - 1],
            _ => 0.0,
        }
    }

    /// Fine-tuning epochs after the skips reach zero.
    pub fn extra_epochs(&self) -> usize {
        self.n / 4
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,a\n");
        for (e, a) in self.scales.iter().enumerate() {
            let _ = writeln!(s, "{},{a}", e + 1);
        }
        s
    }
}

pub fn removal_schedule(n: usize) -> Result<RemovalSchedule, ScoptError> {
    if n == 0 {
        return Err(ScoptError::ZeroEpochs);
    }
    let scales = (1..=n).map(|e| 1.0 - e as f64 / n as f64).collect();
    Ok(RemovalSchedule { n, scales })
}

/// Sets every skip's scale to `a`, which must lie in `[0, 1]`.
pub fn apply_skip_scale(graph: &NetworkGraph, a: f64) -> Result<NetworkGraph, ScoptError> {
    Ok(graph.apply_skip_scale(a)?)
}
