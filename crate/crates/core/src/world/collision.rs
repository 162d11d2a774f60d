use super::geometry::Vec2;
use super::{VehicleId, VehicleState};
use std::collections::BTreeSet;

/// Unordered vehicle pair stored with the smaller id first.
pub type CollisionPair = (VehicleId, VehicleId);

/// Corners of the oriented footprint, counter-clockwise.
pub fn footprint_corners(v: &VehicleState) -> [Vec2; 4] {
    let c = v.position();
    let fwd = v.heading() * (v.length / 2.0);
    let left = v.heading().perp() * (v.width / 2.0);
    [c + fwd + left, c - fwd + left, c - fwd - left, c + fwd - left]
}

fn interval(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

/// Separating-axis test for two oriented rectangles. Touching edges do not
/// count as overlap.
pub fn rectangles_overlap(a: &VehicleState, b: &VehicleState) -> bool {
    let ca = footprint_corners(a);
    let cb = footprint_corners(b);
    let axes = [a.heading(), a.heading().perp(), b.heading(), b.heading().perp()];
    axes.iter().all(|&axis| {
        let (alo, ahi) = interval(&ca, axis);
        let (blo, bhi) = interval(&cb, axis);
        ahi > blo && bhi > alo
    })
}

pub fn detect_collisions(states: &[VehicleState]) -> BTreeSet<CollisionPair> {
    let mut out = BTreeSet::new();
    for (i, a) in states.iter().enumerate() {
        for b in &states[i + 1..] {
            // Bounding-circle rejection first.
            let reach = 0.5 * (a.length.hypot(a.width) + b.length.hypot(b.width));
            if (a.position() - b.position()).norm() > reach {
                continue;
            }
            if rectangles_overlap(a, b) {
                out.insert((a.id.min(b.id), a.id.max(b.id)));
            }
        }
    }
    out
}
