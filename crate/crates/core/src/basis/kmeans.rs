use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{mst_range, range_source_for, KnotSet, RangeSource, SiteSet};
use crate::error::{Result, SammError};

#[derive(Debug, Clone)]
pub struct KmeansOptions {
    pub max_iters: usize,
    /// Convergence when the largest center movement drops below
    /// `tol_rel * coordinate span`.
    pub tol_rel: f64,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol_rel: 1e-8,
        }
    }
}

/// Chooses `l` inducing points as k-means cluster centers (k-means++ seeding,
/// Lloyd iterations, seeded RNG) and measures the kernel range by the longest
/// MST edge over the range-source point set. Deterministic given `seed`.
pub fn select_knots(sites: &SiteSet, l: usize, seed: u64) -> Result<KnotSet> {
    select_knots_with(sites, l, seed, &KmeansOptions::default())
}

pub fn select_knots_with(
    sites: &SiteSet,
    l: usize,
    seed: u64,
    opts: &KmeansOptions,
) -> Result<KnotSet> {
    let n = sites.len();
    if l == 0 || l > n {
        return Err(SammError::InvalidParameter(format!(
            "knot count must satisfy 1 <= L <= N, got L={l} with N={n}"
        )));
    }
    let points = sites.coords();
    let centers = kmeans_centers(points, l, seed, opts);
    let range_r = match range_source_for(n) {
        RangeSource::SampleSites => mst_range(points)?,
        RangeSource::KnotCenters => mst_range(&centers)?,
    };
    KnotSet::new(centers, range_r)
}

/// Cluster centers alone, for callers that measure the kernel range over a
/// different point set (streaming fits decide by the full dataset size, not
/// by the size of the coordinate sample they keep).
pub fn select_centers(sites: &SiteSet, l: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    let n = sites.len();
    if l == 0 || l > n {
        return Err(SammError::InvalidParameter(format!(
            "knot count must satisfy 1 <= L <= N, got L={l} with N={n}"
        )));
    }
    Ok(kmeans_centers(sites.coords(), l, seed, &KmeansOptions::default()))
}

fn kmeans_centers(points: &[[f64; 2]], k: usize, seed: u64, opts: &KmeansOptions) -> Vec<[f64; 2]> {
    let n = points.len();
    if k == 1 {
        return vec![mean_point(points)];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seed(points, k, &mut rng);

    let span = coordinate_span(points);
    let tol = opts.tol_rel * span.max(f64::MIN_POSITIVE);
    let mut assignment = vec![0usize; n];

    for _ in 0..opts.max_iters {
        assign(points, &centers, &mut assignment);

        // Center sums stay sequential so results are worker-count independent.
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }

        let mut new_centers = centers.clone();
        for c in 0..k {
            if counts[c] > 0 {
                new_centers[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
        // Empty clusters grab the point farthest from its current center.
        for c in 0..k {
            if counts[c] == 0 {
                if let Some((idx, _)) = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, dist2(*p, centers[assignment[i]])))
                    .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances"))
                {
                    new_centers[c] = points[idx];
                }
            }
        }

        let movement = centers
            .iter()
            .zip(&new_centers)
            .map(|(a, b)| dist2(*a, *b).sqrt())
            .fold(0.0f64, f64::max);
        centers = new_centers;
        if movement < tol {
            break;
        }
    }
    centers
}

fn plus_plus_seed(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)]);
    let mut d2 = vec![f64::INFINITY; n];
    while centers.len() < k {
        let last = *centers.last().expect("nonempty");
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let d = dist2(*p, last);
            if d < d2[i] {
                d2[i] = d;
            }
            total += d2[i];
        }
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // Fewer distinct points than centers; fall back to uniform.
            rng.random_range(0..n)
        };
        centers.push(points[idx]);
    }
    centers
}

fn assign(points: &[[f64; 2]], centers: &[[f64; 2]], assignment: &mut [usize]) {
    let work = |(p, a): (&[f64; 2], &mut usize)| {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, center) in centers.iter().enumerate() {
            let d = dist2(*p, *center);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        *a = best;
    };
    if points.len() * centers.len() >= 1 << 20 {
        points.par_iter().zip(assignment.par_iter_mut()).for_each(work);
    } else {
        points.iter().zip(assignment.iter_mut()).for_each(work);
    }
}

fn mean_point(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    let mut sum = [0.0f64; 2];
    for p in points {
        sum[0] += p[0];
        sum[1] += p[1];
    }
    [sum[0] / n, sum[1] / n]
}

fn coordinate_span(points: &[[f64; 2]]) -> f64 {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in points {
        for d in 0..2 {
            min[d] = min[d].min(p[d]);
            max[d] = max[d].max(p[d]);
        }
    }
    (max[0] - min[0]).max(max[1] - min[1])
}

#[inline]
fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}
