use density_softmax::density::{
    compute_scale, flow_fit, kde_fit, scott_bandwidth, DensityModel, FlowArchitecture, FlowFitConfig,
    FlowModel, Standardizer,
};
use density_softmax::numeric::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Matrix {
    Matrix::new(n, d, (0..n * d).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Flow with every subnet weight drawn at random, so no coupling is the
/// identity.
fn random_flow(d: usize, seed: u64) -> FlowModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flow = FlowModel::init(d, &FlowArchitecture::default(), seed).unwrap();
    for p in flow.params_mut() {
        for v in p.data_mut() {
            *v = rng.random_range(-0.4..0.4);
        }
    }
    let z = random_points(&mut rng, 50, d, 2.0);
    flow.with_standardizer(Standardizer::fit(&z)).unwrap()
}

/// `ln |det A|` by Gaussian elimination with partial pivoting.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let pivot = a[c][c];
        acc += pivot.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / pivot;
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    acc
}

#[test]
fn kde_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for d in [1usize, 2, 5] {
        let support = random_points(&mut rng, 40, d, 3.0);
        let h = scott_bandwidth(&support).unwrap();
        let kde = kde_fit(&support, h).unwrap();
        let queries = random_points(&mut rng, 25, d, 4.0);
        for q in queries.row_iter() {
            let norm = (2.0 * std::f64::consts::PI * h * h).powf(d as f64 / 2.0);
            let direct: f64 = support
                .row_iter()
                .map(|s| {
                    let d2: f64 = s.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-d2 / (2.0 * h * h)).exp() / norm
                })
                .sum::<f64>()
                / support.rows() as f64;
            let got = kde.log_density(q).unwrap();
            assert!((got - direct.ln()).abs() < 1e-10, "d = {d}: {got} vs {}", direct.ln());
        }
    }
}

#[test]
fn kde_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let support = random_points(&mut rng, 30, 2, 1.5);
    let kde = kde_fit(&support, 0.4).unwrap();
    let step = 0.05;
    let mut mass = 0.0;
    let mut x = -8.0 + step / 2.0;
    while x < 8.0 {
        let row: Vec<f64> = (0..320).flat_map(|j| [x, -8.0 + step * (j as f64 + 0.5)]).collect();
        let lp = kde.log_density_batch(&Matrix::new(320, 2, row).unwrap()).unwrap();
        mass += lp.iter().map(|l| l.exp()).sum::<f64>() * step * step;
        x += step;
    }
    assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
}

#[test]
fn flow_inverse_recovers_input() {
    for (d, seed) in [(2, 1), (3, 2), (4, 3), (7, 4)] {
        let flow = random_flow(d, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let z = random_points(&mut rng, 200, d, 3.0);
        let (t, _) = flow.forward(&z).unwrap();
        assert!(t.max_abs_diff(&z) > 1e-3, "flow should not be the identity");
        let back = flow.inverse(&t).unwrap();
        assert!(back.max_abs_diff(&z) < 1e-8, "d = {d}: {}", back.max_abs_diff(&z));
    }
}

#[test]
fn flow_log_det_matches_numeric_jacobian() {
    let h = 1e-6;
    for d in [2usize, 3, 4] {
        let flow = random_flow(d, 10 + d as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
        let z = random_points(&mut rng, 20, d, 2.0);
        let (_, log_det) = flow.forward(&z).unwrap();
        for (r, point) in z.row_iter().enumerate() {
            let mut jac = vec![vec![0.0; d]; d];
            for j in 0..d {
                let mut plus = point.to_vec();
                plus[j] += h;
                let mut minus = point.to_vec();
                minus[j] -= h;
                let (fp, _) = flow.forward(&Matrix::row_vector(plus)).unwrap();
                let (fm, _) = flow.forward(&Matrix::row_vector(minus)).unwrap();
                for i in 0..d {
                    jac[i][j] = (fp.get(0, i) - fm.get(0, i)) / (2.0 * h);
                }
            }
            let numeric = log_abs_det(jac);
            assert!((numeric - log_det[r]).abs() < 1e-4, "d = {d}: {numeric} vs {}", log_det[r]);
        }
    }
}

#[test]
fn trained_flow_lowers_nll_and_scales_into_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = Matrix::new(
        256,
        2,
        (0..256)
            .flat_map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                [a, a * a + 0.1 * rng.random_range(-1.0..1.0)]
            })
            .collect(),
    )
    .unwrap();
    let cfg = FlowFitConfig {
        epochs: 60,
        lr: 1e-3,
        batch_size: 64,
        ..FlowFitConfig::toy()
    };
    let (flow, trace) = flow_fit(&z, &cfg).unwrap();
    assert_eq!(trace.len(), 60);
    assert!(trace.last().unwrap() < &trace[0], "{trace:?}");
    let sd = compute_scale(DensityModel::Flow(flow), &z, 100).unwrap();
    let s = sd.scaled_likelihood_batch(&z).unwrap();
    assert!(s.iter().all(|&v| v > 0.0 && v <= 1.0));
    assert!(s.contains(&1.0));
    assert!(sd.scaled_likelihood(&[10.0, -10.0]).unwrap() < 1e-6);
}

#[test]
fn flow_fit_rejects_short_input() {
    let z = Matrix::zeros(10, 2);
    assert!(flow_fit(&z, &FlowFitConfig::toy()).is_err());
}
