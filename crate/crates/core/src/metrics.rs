//! Run metrics and their JSON/CSV renderings.

use std::ops::Range;

use serde::Serialize;

use crate::config::Strategy;
use crate::entity::CellTypeId;
use crate::topology::{LinkId, NodeId};

/// One row of the per-timestep CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StepRow {
    pub t: u64,
    pub detections_cum: u64,
    pub introduced_cum: u64,
    pub deficient_nodes: u32,
    pub notification_packets: u64,
    pub checks: u32,
    pub redundant_checks: u32,
    pub max_cells_per_node: u32,
    pub min_cells_per_node: u32,
}

pub const CSV_HEADER: &str = "t,detections_cum,introduced_cum,deficient_nodes,notification_packets,checks,redundant_checks,max_cells_per_node,min_cells_per_node";

/// Notification packets that crossed one link during one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LinkCount {
    pub t: u64,
    pub link: LinkId,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub duration: u64,
    pub node_count: usize,
    pub intrusion_types: u16,
    /// Types that have at least one node checker.
    pub checker_types: Vec<CellTypeId>,
    pub coverage_window: u64,

    pub packets_generated: u64,
    pub introduced: u64,
    pub detected: u64,
    pub infections_created: u64,
    pub infections_cleared: u64,
    pub infections_active: u64,

    /// Check timestamps, indexed `node * intrusion_types + type_index`.
    pub coverage: Vec<Vec<u64>>,
    pub notification_packets: Vec<LinkCount>,
    pub notification_total: u64,
    pub max_notifications_per_direction: u32,
    /// Management traffic: notification packets, or centralized
    /// report/command units.
    pub control_bandwidth: u64,
    pub centralized_moves: u64,
    pub deficiency_series: Vec<u32>,
    /// Cells per node, row-major by timestep.
    pub entity_histogram: Vec<u32>,
    pub rows: Vec<StepRow>,
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a> {
    strategy: &'a str,
    seed: u64,
    duration: u64,
    nodes: usize,
    intrusion_types: u16,
    detection_rate: f64,
    intrusions_introduced: u64,
    intrusions_detected: u64,
    packets_generated: u64,
    infections_created: u64,
    infections_cleared: u64,
    infections_active: u64,
    coverage_window: u64,
    checked_fraction_final_half: f64,
    redundant_checks_final_half: u64,
    total_checks: u64,
    control_bandwidth: u64,
    notification_packets: u64,
    max_notifications_per_link_direction: u32,
    centralized_moves: u64,
    mean_deficient_nodes: f64,
    final_deficient_nodes: u32,
}

impl MetricsReport {
    pub fn detection_rate(&self) -> f64 {
        if self.introduced == 0 {
            0.0
        } else {
            self.detected as f64 / self.introduced as f64
        }
    }

    pub fn checks(&self, node: NodeId, ty: CellTypeId) -> &[u64] {
        &self.coverage[node.index() * self.intrusion_types as usize + ty.index()]
    }

    pub fn total_checks(&self) -> u64 {
        self.coverage.iter().map(|c| c.len() as u64).sum()
    }

    /// Second half of the run, `[duration / 2, duration)`.
    pub fn final_half(&self) -> Range<u64> {
        self.duration / 2..self.duration
    }

    /// Mean, over node-checker types and consecutive windows of `window`
    /// steps inside `range`, of the fraction of nodes that type checked at
    /// least once in the window. A trailing partial window is ignored unless
    /// it is the only one.
    pub fn checked_fraction(&self, window: u64, range: Range<u64>) -> f64 {
        let nodes: Vec<NodeId> = (0..self.node_count as u32).map(NodeId).collect();
        self.checked_fraction_over(&nodes, window, range)
    }

    /// [`MetricsReport::checked_fraction`] restricted to `nodes`.
    pub fn checked_fraction_over(&self, nodes: &[NodeId], window: u64, range: Range<u64>) -> f64 {
        if nodes.is_empty() || self.checker_types.is_empty() || range.is_empty() {
            return 0.0;
        }
        let window = window.max(1);
        let mut windows: Vec<Range<u64>> = (0..)
            .map(|k| range.start + k * window..range.start + (k + 1) * window)
            .take_while(|w| w.end <= range.end)
            .collect();
        if windows.is_empty() {
            windows.push(range);
        }
        let mut covered = 0u64;
        for ty in &self.checker_types {
            for w in &windows {
                covered += nodes
                    .iter()
                    .filter(|&&n| {
                        let ts = self.checks(n, *ty);
                        let i = ts.partition_point(|&x| x < w.start);
                        i < ts.len() && ts[i] < w.end
                    })
                    .count() as u64;
            }
        }
        covered as f64 / (self.checker_types.len() * windows.len() * nodes.len()) as f64
    }

    /// Checks inside `range` that came less than `min_gap` steps after the
    /// previous check of the same type on the same node.
    pub fn redundant_check_count(&self, min_gap: u64, range: Range<u64>) -> u64 {
        self.coverage
            .iter()
            .map(|ts| {
                ts.windows(2)
                    .filter(|w| range.contains(&w[1]) && w[1] - w[0] < min_gap)
                    .count() as u64
            })
            .sum()
    }

    pub fn histogram_row(&self, t: u64) -> &[u32] {
        let start = t as usize * self.node_count;
        &self.entity_histogram[start..start + self.node_count]
    }

    pub fn summary_json(&self) -> String {
        let half = self.final_half();
        let mean_deficient = if self.deficiency_series.is_empty() {
            0.0
        } else {
            self.deficiency_series.iter().map(|&d| d as f64).sum::<f64>() / self.deficiency_series.len() as f64
        };
        let summary = Summary {
            strategy: self.strategy.label(),
            seed: self.seed,
            duration: self.duration,
            nodes: self.node_count,
            intrusion_types: self.intrusion_types,
            detection_rate: self.detection_rate(),
            intrusions_introduced: self.introduced,
            intrusions_detected: self.detected,
            packets_generated: self.packets_generated,
            infections_created: self.infections_created,
            infections_cleared: self.infections_cleared,
            infections_active: self.infections_active,
            coverage_window: self.coverage_window,
            checked_fraction_final_half: self.checked_fraction(self.coverage_window, half.clone()),
            redundant_checks_final_half: self.redundant_check_count((self.coverage_window / 4).max(1), half),
            total_checks: self.total_checks(),
            control_bandwidth: self.control_bandwidth,
            notification_packets: self.notification_total,
            max_notifications_per_link_direction: self.max_notifications_per_direction,
            centralized_moves: self.centralized_moves,
            mean_deficient_nodes: mean_deficient,
            final_deficient_nodes: self.deficiency_series.last().copied().unwrap_or(0),
        };
        let mut out = serde_json::to_string_pretty(&summary).expect("summary serializes");
        out.push('\n');
        out
    }

    pub fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::with_capacity(self.rows.len() * 48));
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
        }
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report_with(coverage: Vec<Vec<u64>>, nodes: usize, duration: u64) -> MetricsReport {
        MetricsReport {
            strategy: Strategy::Uninformed,
            seed: 0,
            duration,
            node_count: nodes,
            intrusion_types: 1,
            checker_types: vec![CellTypeId(1)],
            coverage_window: 10,
            packets_generated: 0,
            introduced: 0,
            detected: 0,
            infections_created: 0,
            infections_cleared: 0,
            infections_active: 0,
            coverage,
            notification_packets: Vec::new(),
            notification_total: 0,
            max_notifications_per_direction: 0,
            control_bandwidth: 0,
            centralized_moves: 0,
            deficiency_series: Vec::new(),
            entity_histogram: Vec::new(),
            rows: Vec::new(),
        }
    }

    #[test]
    fn checked_fraction_counts_windows() {
        // node 0 checked in both windows, node 1 only in the first
        let r = report_with(vec![vec![1, 12], vec![3]], 2, 20);
        assert_eq!(r.checked_fraction(10, 0..20), 0.75);
        assert_eq!(r.checked_fraction_over(&[NodeId(0)], 10, 0..20), 1.0);
        // only one partial window fits: whole range is used
        assert_eq!(r.checked_fraction(50, 0..20), 1.0);
    }

    #[test]
    fn redundant_checks_use_gap_to_previous() {
        let r = report_with(vec![vec![0, 1, 5, 20], vec![2, 3]], 2, 30);
        assert_eq!(r.redundant_check_count(4, 0..30), 2);
        assert_eq!(r.redundant_check_count(10, 0..30), 3);
        assert_eq!(r.redundant_check_count(10, 4..30), 1);
    }

    #[test]
    fn csv_header_is_stable() {
        let r = report_with(vec![vec![]], 1, 1);
        assert_eq!(r.csv(), format!("{CSV_HEADER}\n"));
    }
}
