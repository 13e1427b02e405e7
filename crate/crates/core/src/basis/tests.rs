use super::*;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_sites(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0])
        .collect()
}

// ---- exp_kernel ----

#[test]
fn kernel_reference_values() {
    assert_abs_diff_eq!(exp_kernel(0.0, 2.0).unwrap(), 1.0);
    assert_abs_diff_eq!(exp_kernel(2.0, 2.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
    assert_abs_diff_eq!(exp_kernel(4.0, 2.0).unwrap(), (-2.0f64).exp(), epsilon = 1e-15);
}

#[test]
fn kernel_rejects_bad_parameters() {
    assert!(matches!(
        exp_kernel(1.0, 0.0),
        Err(SammError::InvalidParameter(_))
    ));
    assert!(matches!(
        exp_kernel(1.0, -2.0),
        Err(SammError::InvalidParameter(_))
    ));
    assert!(matches!(
        exp_kernel(1.0, f64::NAN),
        Err(SammError::InvalidParameter(_))
    ));
    assert!(matches!(
        exp_kernel(-1.0, 2.0),
        Err(SammError::InvalidParameter(_))
    ));
}

// ---- mst_range, checked against exhaustive spanning-tree enumeration ----

/// Brute-force oracle: enumerate every spanning tree of the complete graph,
/// take the minimum-total-weight tree, and report its longest edge.
/// Only usable for tiny point sets.
fn mst_max_edge_bruteforce(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            edges.push((i, j, (dx * dx + dy * dy).sqrt()));
        }
    }
    let m = edges.len();
    assert!(m <= 20, "oracle is exponential in edge count");
    let mut best: Option<(f64, f64)> = None; // (total weight, max edge)
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            if parent[x] != x {
                let root = find(parent, parent[x]);
                parent[x] = root;
            }
            parent[x]
        }
        let mut total = 0.0;
        let mut max_edge = 0.0f64;
        let mut components = n;
        for (e, &(i, j, w)) in edges.iter().enumerate() {
            if mask & (1 << e) != 0 {
                total += w;
                max_edge = max_edge.max(w);
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                    components -= 1;
                }
            }
        }
        if components == 1 {
            match best {
                Some((bt, _)) if bt <= total => {}
                _ => best = Some((total, max_edge)),
            }
        }
    }
    best.expect("connected spanning tree exists").1
}

#[test]
fn mst_collinear_points() {
    let pts = [[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]];
    assert_abs_diff_eq!(mst_max_edge_bruteforce(&pts), 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(mst_range(&pts).unwrap(), 2.0, epsilon = 1e-12);
}

#[test]
fn mst_two_points() {
    assert_abs_diff_eq!(
        mst_range(&[[0.0, 0.0], [3.0, 4.0]]).unwrap(),
        5.0,
        epsilon = 1e-12
    );
}

#[test]
fn mst_unit_square() {
    let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    assert_abs_diff_eq!(mst_max_edge_bruteforce(&pts), 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(mst_range(&pts).unwrap(), 1.0, epsilon = 1e-12);
}

#[test]
fn mst_matches_bruteforce_on_random_sets() {
    for seed in 0..6u64 {
        let pts = random_sites(5, seed);
        assert_abs_diff_eq!(
            mst_range(&pts).unwrap(),
            mst_max_edge_bruteforce(&pts),
            epsilon = 1e-10
        );
    }
}

#[test]
fn mst_degenerate_inputs() {
    assert!(matches!(
        mst_range(&[[1.0, 1.0]]),
        Err(SammError::InvalidInput(_))
    ));
    assert!(matches!(
        mst_range(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]),
        Err(SammError::DegenerateGeometry(_))
    ));
}

#[test]
fn mst_parallel_path_agrees_with_sequential() {
    // Cross the rayon threshold and compare against small-n code on a subset
    // relationship: the parallel scan must produce the same tree bottleneck.
    let pts = random_sites(9000, 7);
    let par = mst_range(&pts).unwrap();
    // Sequential reference via a private copy of the same loop bound check:
    let mut dist2 = vec![f64::INFINITY; pts.len()];
    let mut visited = vec![false; pts.len()];
    visited[0] = true;
    let mut current = 0usize;
    let mut max_edge2 = 0.0f64;
    for _ in 1..pts.len() {
        let cp = pts[current];
        let mut best: Option<(f64, usize)> = None;
        for i in 0..pts.len() {
            if visited[i] {
                continue;
            }
            let dx = pts[i][0] - cp[0];
            let dy = pts[i][1] - cp[1];
            let cand = dx * dx + dy * dy;
            if cand < dist2[i] {
                dist2[i] = cand;
            }
            match best {
                Some((b, _)) if b <= dist2[i] => {}
                _ => best = Some((dist2[i], i)),
            }
        }
        let (edge2, idx) = best.unwrap();
        max_edge2 = max_edge2.max(edge2);
        visited[idx] = true;
        current = idx;
    }
    assert_abs_diff_eq!(par, max_edge2.sqrt(), epsilon = 1e-12);
}

// ---- select_knots ----

#[test]
fn knots_with_l_equal_n_are_the_sites() {
    let sites = SiteSet::new(random_sites(12, 1)).unwrap();
    let knots = select_knots(&sites, 12, 42).unwrap();
    let mut got: Vec<_> = knots.centers.clone();
    let mut want: Vec<_> = sites.coords().to_vec();
    let key = |p: &[f64; 2]| (p[0].to_bits(), p[1].to_bits());
    got.sort_by_key(key);
    want.sort_by_key(key);
    for (g, w) in got.iter().zip(&want) {
        assert_abs_diff_eq!(g[0], w[0], epsilon = 1e-9);
        assert_abs_diff_eq!(g[1], w[1], epsilon = 1e-9);
    }
}

#[test]
fn single_knot_is_the_mean() {
    let sites = SiteSet::new(vec![[0.0, 0.0], [2.0, 0.0], [1.0, 3.0]]).unwrap();
    let knots = select_knots(&sites, 1, 0).unwrap();
    assert_abs_diff_eq!(knots.centers[0][0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(knots.centers[0][1], 1.0, epsilon = 1e-12);
}

/// Independent Lloyd oracle: plain alternation from fixed starting centers.
fn lloyd_oracle(points: &[[f64; 2]], mut centers: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    for _ in 0..500 {
        let mut sums = vec![[0.0f64; 2]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for p in points {
            let (best, _) = centers
                .iter()
                .enumerate()
                .map(|(c, ctr)| {
                    let dx = p[0] - ctr[0];
                    let dy = p[1] - ctr[1];
                    (c, dx * dx + dy * dy)
                })
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            sums[best][0] += p[0];
            sums[best][1] += p[1];
            counts[best] += 1;
        }
        let mut moved = 0.0f64;
        for c in 0..centers.len() {
            if counts[c] > 0 {
                let next = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
                moved = moved.max((next[0] - centers[c][0]).abs() + (next[1] - centers[c][1]).abs());
                centers[c] = next;
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    centers
}

#[test]
fn two_separated_clouds_yield_cloud_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pts = Vec::new();
    for _ in 0..40 {
        pts.push([rng.random::<f64>(), rng.random::<f64>()]);
    }
    for _ in 0..40 {
        pts.push([100.0 + rng.random::<f64>(), 50.0 + rng.random::<f64>()]);
    }
    let oracle = lloyd_oracle(&pts, vec![pts[0], pts[40]]);
    let sites = SiteSet::new(pts).unwrap();
    let knots = select_knots(&sites, 2, 17).unwrap();
    let mut got = knots.centers.clone();
    got.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    let mut want = oracle;
    want.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    for (g, w) in got.iter().zip(&want) {
        assert_abs_diff_eq!(g[0], w[0], epsilon = 1e-8);
        assert_abs_diff_eq!(g[1], w[1], epsilon = 1e-8);
    }
}

#[test]
fn knot_selection_is_deterministic_and_validates_l() {
    let sites = SiteSet::new(random_sites(50, 3)).unwrap();
    let a = select_knots(&sites, 7, 11).unwrap();
    let b = select_knots(&sites, 7, 11).unwrap();
    assert_eq!(a.centers, b.centers);
    assert_eq!(a.range_r.to_bits(), b.range_r.to_bits());
    assert!(matches!(
        select_knots(&sites, 51, 11),
        Err(SammError::InvalidParameter(_))
    ));
}

// ---- knot_eigen ----

#[test]
fn two_knot_eigenpair_by_hand() {
    // C_L = [[1, c], [c, 1]] with M = I - J/2 gives M C M = (1-c)/2 [[1,-1],[-1,1]],
    // whose nonzero eigenvalue is 1 - c with eigenvector (1,-1)/sqrt(2).
    let d = 1.5;
    let r = 2.0;
    let c = (-d / r as f64).exp();
    let knots = KnotSet::new(vec![[0.0, 0.0], [d, 0.0]], r).unwrap();
    let eig = knot_eigen(&knots).unwrap();
    assert_eq!(eig.l_pos, 1);
    assert_abs_diff_eq!(eig.values[0], 1.0 - c, epsilon = 1e-12);
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    assert_abs_diff_eq!(eig.vectors[(0, 0)], inv_sqrt2, epsilon = 1e-12);
    assert_abs_diff_eq!(eig.vectors[(1, 0)], -inv_sqrt2, epsilon = 1e-12);
    // col_mean_row = (1' C)/2 = ((1+c)/2, (1+c)/2)
    assert_abs_diff_eq!(eig.col_mean_row[0], (1.0 + c) / 2.0, epsilon = 1e-12);
}

#[test]
fn equilateral_triangle_spectrum() {
    // M C M = (1-c) M for an equilateral triangle: eigenvalues {1-c, 1-c, 0}.
    let d = 2.0;
    let r = 2.0 / (2.0f64).ln(); // c = exp(-d/r) = 0.25 here; any c works
    let c = (-d / r as f64).exp();
    let h = d * 3.0f64.sqrt() / 2.0;
    let knots = KnotSet::new(vec![[0.0, 0.0], [d, 0.0], [d / 2.0, h]], r).unwrap();
    let eig = knot_eigen(&knots).unwrap();
    assert_eq!(eig.l_pos, 2);
    assert_abs_diff_eq!(eig.values[0], 1.0 - c, epsilon = 1e-12);
    assert_abs_diff_eq!(eig.values[1], 1.0 - c, epsilon = 1e-12);
}

#[test]
fn eigenvector_columns_are_centered_orthonormal() {
    let sites = SiteSet::new(random_sites(30, 5)).unwrap();
    let knots = select_knots(&sites, 15, 2).unwrap();
    let eig = knot_eigen(&knots).unwrap();
    assert!(eig.l_pos <= eig.l - 1);
    for a in 0..eig.l_pos {
        let col = eig.vectors.column(a);
        assert_abs_diff_eq!(col.sum(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(col.dot(&col), 1.0, epsilon = 1e-10);
        for b in (a + 1)..eig.l_pos {
            assert_abs_diff_eq!(col.dot(&eig.vectors.column(b)), 0.0, epsilon = 1e-10);
        }
        if a + 1 < eig.l_pos {
            assert!(eig.values[a] >= eig.values[a + 1]);
        }
        assert!(eig.values[a] > 0.0);
    }
}

#[test]
fn coincident_knots_yield_empty_basis() {
    let knots = KnotSet::new(vec![[1.0, 1.0], [1.0, 1.0]], 2.0).unwrap();
    assert!(matches!(knot_eigen(&knots), Err(SammError::EmptyBasis(_))));
}

// ---- approx_eigenvalues ----

/// Equilateral triangle with kernel value exactly c at the side length.
fn triangle_eigen(c: f64) -> KnotEigen {
    let d = 1.0;
    let r = -d / c.ln();
    let h = d * 3.0f64.sqrt() / 2.0;
    let knots = KnotSet::new(vec![[0.0, 0.0], [d, 0.0], [d / 2.0, h]], r).unwrap();
    knot_eigen(&knots).unwrap()
}

#[test]
fn printed_scaling_on_triangle() {
    let eig = triangle_eigen(0.5);
    let lam = approx_eigenvalues(&eig, 3, ScalingMode::AsPrinted).unwrap();
    assert_eq!(lam.len(), 2);
    assert_abs_diff_eq!(lam[0], 2.0, epsilon = 1e-10);
    assert_abs_diff_eq!(lam[1], 2.0, epsilon = 1e-10);
}

#[test]
fn n_over_l_scaling_on_triangle() {
    let eig = triangle_eigen(0.5);
    let lam = approx_eigenvalues(&eig, 3, ScalingMode::NOverL).unwrap();
    assert_eq!(lam.len(), 2);
    assert_abs_diff_eq!(lam[0], 0.5, epsilon = 1e-10);
    assert_abs_diff_eq!(lam[1], 0.5, epsilon = 1e-10);
}

#[test]
fn approx_eigenvalues_reject_small_n() {
    let eig = triangle_eigen(0.5);
    assert!(matches!(
        approx_eigenvalues(&eig, 2, ScalingMode::AsPrinted),
        Err(SammError::InvalidParameter(_))
    ));
}

// ---- nystrom_block ----

fn factory_from(sites: &SiteSet, l: usize, n: usize, seed: u64) -> BasisFactory {
    let knots = select_knots(sites, l, seed).unwrap();
    let eig = knot_eigen(&knots).unwrap();
    BasisFactory::new(knots, eig, n, ScalingMode::AsPrinted).unwrap()
}

#[test]
fn nystrom_rows_at_knot_centers() {
    // At the knots, [C_L - 1 colmean] E (L+I)^{-1} = M C_L E (L+I)^{-1}
    // = E Lambda (Lambda+I)^{-1} because the eigenvectors are centered.
    for l in [3usize, 6, 10] {
        let sites = SiteSet::new(random_sites(40, l as u64)).unwrap();
        let f = factory_from(&sites, l, 40, 1);
        let rows = nystrom_block(&f, &f.knots.centers.clone()).unwrap();
        for col in 0..f.l_pos() {
            let lam = f.eig.values[col];
            let expect = f.eig.vectors.column(col) * (lam / (lam + 1.0));
            for i in 0..l {
                assert_abs_diff_eq!(rows[(i, col)], expect[i], epsilon = 1e-10);
            }
        }
    }
}

#[test]
fn duplicate_sites_share_rows_bitwise() {
    let sites = SiteSet::new(random_sites(25, 2)).unwrap();
    let f = factory_from(&sites, 8, 25, 3);
    let block = nystrom_block(&f, &[[1.25, 4.5], [3.0, 3.0], [1.25, 4.5]]).unwrap();
    for col in 0..f.l_pos() {
        assert_eq!(block[(0, col)].to_bits(), block[(2, col)].to_bits());
    }
}

#[test]
fn block_partition_is_invariant_bitwise() {
    let sites = SiteSet::new(random_sites(41, 6)).unwrap();
    let f = factory_from(&sites, 9, 41, 4);
    let coords = sites.coords();
    let whole = nystrom_block(&f, coords).unwrap();
    let mut offset = 0;
    for chunk in coords.chunks(11) {
        let part = nystrom_block(&f, chunk).unwrap();
        for i in 0..part.nrows() {
            for j in 0..part.ncols() {
                assert_eq!(part[(i, j)].to_bits(), whole[(offset + i, j)].to_bits());
            }
        }
        offset += part.nrows();
    }
    assert_eq!(offset, coords.len());
}

#[test]
fn nystrom_rejects_non_finite_coordinates() {
    let sites = SiteSet::new(random_sites(10, 8)).unwrap();
    let f = factory_from(&sites, 4, 10, 5);
    assert!(matches!(
        nystrom_block(&f, &[[f64::NAN, 0.0]]),
        Err(SammError::InvalidInput(_))
    ));
    assert!(matches!(
        nystrom_block(&f, &[]),
        Err(SammError::InvalidInput(_))
    ));
}

// ---- moran_coefficient ----

#[test]
fn moran_of_eigenvectors_equals_scaled_eigenvalue() {
    for seed in [1u64, 2, 3] {
        let sites = random_sites(60, seed);
        let c0 = ProximityMatrix::kernel_zero_diag(&sites, 2.5).unwrap();
        let n = c0.n();
        let total = c0.total_weight();
        // Exact doubly centered eigendecomposition, independent of knot_eigen.
        let ones = DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
        let m = DMatrix::<f64>::identity(n, n) - ones;
        let mcm = &m * c0.matrix() * &m;
        let sym = (&mcm + mcm.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let mut checked = 0;
        for k in 0..n {
            let lam = eig.eigenvalues[k];
            if lam.abs() <= 1e-8 * lam_max {
                continue;
            }
            let v = DVector::from_column_slice(eig.eigenvectors.column(k).as_slice());
            let mc = moran_coefficient(&v, &c0).unwrap();
            assert_abs_diff_eq!(mc, n as f64 * lam / total, epsilon = 1e-10);
            checked += 1;
        }
        assert!(checked > 10);
    }
}

#[test]
fn moran_two_point_hand_case() {
    let c0 = ProximityMatrix::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        true,
    )
    .unwrap();
    let v = DVector::from_column_slice(&[1.0, -1.0]);
    assert_abs_diff_eq!(moran_coefficient(&v, &c0).unwrap(), -1.0, epsilon = 1e-12);
}

#[test]
fn moran_of_iid_noise_approaches_negative_reciprocal() {
    let n = 200;
    let sites = random_sites(n, 77);
    let c0 = ProximityMatrix::kernel_zero_diag(&sites, 3.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let draws = 1000;
    let mut mcs = Vec::with_capacity(draws);
    let normal = rand_distr::StandardNormal;
    for _ in 0..draws {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(normal));
        mcs.push(moran_coefficient(&v, &c0).unwrap());
    }
    let mean = mcs.iter().sum::<f64>() / draws as f64;
    let var = mcs.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    let expect = -1.0 / (n as f64 - 1.0);
    assert!(
        (mean - expect).abs() <= 3.0 * se,
        "mean MC {mean} vs {expect} (3 se = {})",
        3.0 * se
    );
}

#[test]
fn moran_rejects_degenerate_inputs() {
    let c0 = ProximityMatrix::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        true,
    )
    .unwrap();
    let constant = DVector::from_column_slice(&[2.0, 2.0]);
    assert!(matches!(
        moran_coefficient(&constant, &c0),
        Err(SammError::DegenerateInput(_))
    ));
    let zero = ProximityMatrix::new(DMatrix::zeros(2, 2), true).unwrap();
    let v = DVector::from_column_slice(&[1.0, -1.0]);
    assert!(matches!(
        moran_coefficient(&v, &zero),
        Err(SammError::DegenerateWeights(_))
    ));
}

// ---- expected_mc ----

#[test]
fn expected_mc_reference_values() {
    assert_abs_diff_eq!(expected_mc(&[3.7], 2.0, 0.5).unwrap(), 0.5 * 3.7, epsilon = 1e-12);
    assert_abs_diff_eq!(expected_mc(&[2.0, 1.0], 0.0, 1.0).unwrap(), 1.5, epsilon = 1e-12);
    assert_abs_diff_eq!(expected_mc(&[2.0, 1.0], 1.0, 1.0).unwrap(), 1.8, epsilon = 1e-12);
}

#[test]
fn expected_mc_limits() {
    assert_abs_diff_eq!(expected_mc(&[2.0, 1.0], 50.0, 1.0).unwrap(), 2.0, epsilon = 1e-6);
    assert_abs_diff_eq!(expected_mc(&[2.0, 1.0], -50.0, 1.0).unwrap(), 1.0, epsilon = 1e-6);
}

#[test]
fn expected_mc_rejects_empty() {
    assert!(matches!(
        expected_mc(&[], 0.0, 1.0),
        Err(SammError::InvalidInput(_))
    ));
}

proptest! {
    #[test]
    fn kernel_bounds_and_monotonicity(d1 in 0.0..100.0f64, d2 in 0.0..100.0f64, r in 0.2..50.0f64) {
        // d/r stays below the f64 underflow threshold of exp in this range.
        let k1 = exp_kernel(d1, r).unwrap();
        let k2 = exp_kernel(d2, r).unwrap();
        prop_assert!(k1 > 0.0 && k1 <= 1.0);
        if d1 < d2 {
            prop_assert!(k1 > k2);
        }
    }

    #[test]
    fn expected_mc_monotone_and_bounded(
        lambdas in proptest::collection::vec(0.01..50.0f64, 1..12),
        alphas in proptest::collection::vec(-8.0..8.0f64, 2..6),
    ) {
        let mut sorted = alphas.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut prev = f64::NEG_INFINITY;
        for &a in &sorted {
            let v = expected_mc(&lambdas, a, 1.0).unwrap();
            prop_assert!(v >= prev - 1e-9);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            prev = v;
        }
    }
}
