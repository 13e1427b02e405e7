use rayon::prelude::*;

use crate::error::{Result, SammError};

/// Length of the longest edge of a Euclidean minimum spanning tree over the
/// points. Prim's algorithm on the complete graph: O(n^2) time, O(n) memory.
///
/// Every spanning tree's bottleneck edge is at least this long, so it is the
/// classical range heuristic for distance-decay kernels.
pub fn mst_range(points: &[[f64; 2]]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(SammError::InvalidInput(format!(
            "minimum spanning tree needs at least 2 points, got {n}"
        )));
    }
    if points
        .iter()
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(SammError::InvalidInput(
            "non-finite coordinate in spanning-tree point set".into(),
        ));
    }

    // dist2[i] is the squared distance from unvisited point i to the tree.
    let mut dist2 = vec![f64::INFINITY; n];
    let mut visited = vec![false; n];
    visited[0] = true;
    let mut current = 0usize;
    let mut max_edge2 = 0.0f64;

    for _ in 1..n {
        let cp = points[current];
        let next = if n >= 8192 {
            dist2
                .par_iter_mut()
                .enumerate()
                .zip(visited.par_iter())
                .filter(|(_, &vis)| !vis)
                .map(|((i, d2), _)| {
                    let dx = points[i][0] - cp[0];
                    let dy = points[i][1] - cp[1];
                    let cand = dx * dx + dy * dy;
                    if cand < *d2 {
                        *d2 = cand;
                    }
                    (*d2, i)
                })
                .reduce_with(|a, b| if a.0 <= b.0 { a } else { b })
        } else {
            let mut best: Option<(f64, usize)> = None;
            for i in 0..n {
                if visited[i] {
                    continue;
                }
                let dx = points[i][0] - cp[0];
                let dy = points[i][1] - cp[1];
                let cand = dx * dx + dy * dy;
                if cand < dist2[i] {
                    dist2[i] = cand;
                }
                match best {
                    Some((b, _)) if b <= dist2[i] => {}
                    _ => best = Some((dist2[i], i)),
                }
            }
            best
        };
        let (edge2, idx) = next.expect("unvisited point exists");
        max_edge2 = max_edge2.max(edge2);
        visited[idx] = true;
        current = idx;
    }

    let max_edge = max_edge2.sqrt();
    if max_edge <= 0.0 {
        return Err(SammError::DegenerateGeometry(
            "all points coincide; spanning tree has zero-length edges only".into(),
        ));
    }
    Ok(max_edge)
}
