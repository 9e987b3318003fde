//! Brute-force reference implementations, written without the library's
//! helpers. Shared with the acceptance suite.
#![allow(dead_code)]

use cvgl::dataset::PlaceClassSet;
use cvgl::geometry::{Pose2, VisibilityCone};
use cvgl::synthworld::Frame;

/// Cone membership via the dot product against the heading vector.
pub fn visible(point: [f64; 2], cam: Pose2, cone: VisibilityCone) -> bool {
    let (dx, dy) = (point[0] - cam.x, point[1] - cam.y);
    let dist = (dx * dx + dy * dy).sqrt();
    if dist > cone.max_range {
        return false;
    }
    if dist == 0.0 {
        return true;
    }
    let cos = (dx * cam.heading.cos() + dy * cam.heading.sin()) / dist;
    cos >= (cone.hfov / 2.0).cos() - 1e-12
}

pub fn assign(cam: Pose2, classes: &PlaceClassSet, cone: VisibilityCone) -> Option<usize> {
    let mut candidates: Vec<(f64, usize)> = classes
        .classes
        .iter()
        .enumerate()
        .filter(|(_, c)| visible(c.rep_point, cam, cone))
        .map(|(i, c)| ((c.rep_point[0] - cam.x).hypot(c.rep_point[1] - cam.y), i))
        .collect();
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    candidates.first().map(|c| c.1)
}

/// `(test, excluded)` by direct enumeration.
pub fn split(
    pool: &[Frame],
    classes: &PlaceClassSet,
    cone: VisibilityCone,
) -> (Vec<(u32, usize)>, Vec<u32>) {
    let mut test = Vec::new();
    let mut excluded = Vec::new();
    for f in pool {
        if classes.classes.iter().any(|c| c.training_frame == f.id) {
            continue;
        }
        match assign(f.planar(), classes, cone) {
            Some(c) => test.push((f.id, c)),
            None => excluded.push(f.id),
        }
    }
    (test, excluded)
}

/// MRR from a rank histogram, accumulated in exact integer arithmetic over
/// the least common multiple of the ranks (fits u128 up to rank 80).
pub fn mrr(ranks: &[usize]) -> f64 {
    let max = *ranks.iter().max().unwrap() as u128;
    assert!(max <= 80);
    let lcm = (1..=max).fold(1u128, |l, r| l / gcd(l, r) * r);
    let total: u128 = ranks.iter().map(|&r| lcm / r as u128).sum();
    100.0 * total as f64 / lcm as f64 / ranks.len() as f64
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Ranking by selection: repeatedly take the smallest remaining distance,
/// lowest index first.
pub fn global_l2(query: &[f64], training: &[Vec<f64>]) -> Vec<usize> {
    let d: Vec<f64> = training
        .iter()
        .map(|t| {
            let mut s = 0.0;
            for i in 0..query.len() {
                s += (query[i] - t[i]).powi(2);
            }
            s.sqrt()
        })
        .collect();
    let mut left: Vec<usize> = (0..d.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            if d[left[j]] < d[left[best]] {
                best = j;
            }
        }
        out.push(left.remove(best));
    }
    out
}
