use samm_core::sim::*;
use std::time::Instant;

fn main() {
    let t = Instant::now();
    let cfg = ExperimentConfig {
        cells: vec![
            ExperimentCell { n: 1000, s_x: 0.5, tau_g2_ratio: 1.0 },
            ExperimentCell { n: 1000, s_x: 0.5, tau_g2_ratio: 0.0 },
        ],
        replicates: 10,
        base_seed: 20260810,
        fit_knots: 50,
        ..ExperimentConfig::default()
    };
    let summary = run_experiment(&cfg).unwrap();
    for cell in &summary.cells {
        let ok: Vec<_> = cell.outcomes.iter().filter(|o| o.error.is_none()).collect();
        let amm: Vec<f64> = ok.iter().map(|o| o.with_group.as_ref().unwrap().rmse_svc_large).collect();
        let ammg: Vec<f64> = ok.iter().map(|o| o.no_group.as_ref().unwrap().rmse_svc_large).collect();
        let p = sign_test_p_greater(&ammg, &amm);
        let (dm, dse) = paired_mean_se(&ammg, &amm);
        let alpha_ord: usize = ok.iter().map(|o| {
            let e = o.with_group.as_ref().unwrap();
            usize::from(median(&e.alpha_svc[..3]) > median(&e.alpha_svc[3..]))
        }).sum();
        let mean_secs: f64 = ok.iter().map(|o| o.with_group.as_ref().unwrap().seconds + o.no_group.as_ref().unwrap().seconds).sum::<f64>() / ok.len() as f64;
        println!("ratio={} fails={} med(amm)={:.4} med(ammg)={:.4} sign_p={:.4} diff={:.4}±{:.4} alpha_ord={}/{} secs/rep={:.2}",
            cell.cell.tau_g2_ratio, cell.outcomes.len() - ok.len(),
            median(&amm), median(&ammg), p, dm, dse, alpha_ord, ok.len(), mean_secs);
    }
    println!("total: {:.1}s", t.elapsed().as_secs_f64());
}
