use exitbench_core::scoring::PerfPoint;

/// Quadratic all-pairs dominance filter.
pub fn brute_force_frontier(points: &[PerfPoint]) -> Vec<PerfPoint> {
    let mut kept: Vec<PerfPoint> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let dominated = points.iter().any(|q| q.dominates(p));
        let seen = points[..i].iter().any(|q| q == p);
        if !dominated && !seen {
            kept.push(*p);
        }
    }
    kept.sort_by(|a, b| a.flops.total_cmp(&b.flops));
    kept
}
