use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samm_core::basis::{expected_mc, knot_eigen_with_cap, select_knots, ScalingMode, SiteSet};
use samm_core::BasisFactory;

fn main() {
    // Sites in unequal clumps far apart: the MST range crosses clumps, so
    // within-clump kernel coupling is strong and the spectrum is stratified.
    for (cap, seed) in [(3usize, 1u64), (4, 1), (6, 1), (3, 2), (4, 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clumps: [([f64; 2], f64, usize); 4] = [
            ([0.0, 0.0], 0.05, 150),
            ([3.0, 0.4], 0.07, 90),
            ([1.2, 2.6], 0.04, 50),
            ([4.0, 3.0], 0.06, 30),
        ];
        let mut coords = Vec::new();
        for (c, rad, m) in clumps {
            for _ in 0..m {
                coords.push([
                    c[0] + (rng.random::<f64>() - 0.5) * rad,
                    c[1] + (rng.random::<f64>() - 0.5) * rad,
                ]);
            }
        }
        let n = coords.len();
        let sites = SiteSet::new(coords).unwrap();
        let knots = select_knots(&sites, 12, seed).unwrap();
        let eig = knot_eigen_with_cap(&knots, cap).unwrap();
        let f = BasisFactory::new(knots, eig, n, ScalingMode::AsPrinted).unwrap();
        let lam = &f.lambda_hat;
        let l_pos = f.l_pos();
        let scale = 1.0 / ((n as f64 - 1.0) * 0.1);
        let hi = expected_mc(lam.as_slice(), 50.0, scale).unwrap();
        let lo = expected_mc(lam.as_slice(), -50.0, scale).unwrap();
        let lams: Vec<String> = lam.iter().map(|v| format!("{v:.2}")).collect();
        println!("cap={cap} seed={seed}: l_pos={l_pos} lam=[{}] scale={scale:.2e} dev_hi={:.2e} dev_lo={:.2e}",
            lams.join(","), (hi - scale*lam[0]).abs(), (lo - scale*lam[l_pos-1]).abs());
    }
}
