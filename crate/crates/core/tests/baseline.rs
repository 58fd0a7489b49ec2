mod common;


use common::*;
use privest::baseline::*;
use privest::finite::FiniteSystem;
use privest::rng::stream;

/// `E[X_t | z̃^t]` from every `(y, x, z)` path of length `T + 1`.
fn brute_mmse(fs: &FiniteSystem, zs: &[usize]) -> Vec<f64> {
    let steps = zs.len();
    let mut num = vec![0.0; steps];
    let mut den = vec![0.0; steps];
    let mut stack: Vec<(Vec<usize>, Vec<usize>, f64)> = vec![];
    for y in 0..fs.ny {
        for x in 0..fs.nx {
            stack.push((vec![y], vec![x], fs.mu_y0[y] * fs.mu_x0[x]));
        }
    }
    while let Some((ys, xs, p)) = stack.pop() {
        let t = ys.len() - 1;
        let p = p * fs.pz[xs[t]][zs[t]];
        if p == 0.0 {
            continue;
        }
        num[t] += p * fs.centers[xs[t]];
        den[t] += p;
        if t + 1 < steps {
            for y2 in 0..fs.ny {
                for x2 in 0..fs.nx {
                    let q = p * fs.py[ys[t]][y2] * fs.px[xs[t]][x2][ys[t]];
                    let mut a = ys.clone();
                    a.push(y2);
                    let mut b = xs.clone();
                    b.push(x2);
                    stack.push((a, b, q));
                }
            }
        }
    }
    num.iter().zip(&den).map(|(n, d)| n / d).collect()
}

#[test]
fn grid_mmse_matches_enumeration() {
    let mut rng = stream(51);
    for _ in 0..5 {
        let fs = random_system(&mut rng, 2, 3, 2);
        for code in 0..16usize {
            let zs: Vec<usize> = (0..4).map(|i| (code >> i) & 1).collect();
            let got = grid_mmse(&fs, &zs).unwrap();
            let want = brute_mmse(&fs, &zs);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn exact_observation_pins_the_state_cell() {
    let mut rng = stream(52);
    let mut fs = random_system(&mut rng, 2, 4, 4);
    fs.pz = (0..4).map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let width = 0.5;
    let p = privest::policy::PolicyParams::tabular(0, 4, 1).unwrap();
    let batch = privest::model::rollout(&fs, &p, 8, 3, 20).unwrap();
    for r in &batch.rollouts {
        let est = grid_mmse(&fs, &r.z_cell).unwrap();
        for (e, x) in est.iter().zip(&r.x) {
            assert!((e - x).abs() <= width);
        }
    }
}

#[test]
fn static_state_posterior_concentrates() {
    // Constant x on a 3-cell grid observed through a noisy channel.
    let fs = FiniteSystem {
        ny: 1,
        nx: 3,
        nz: 3,
        py: vec![vec![1.0]],
        px: (0..3).map(|i| (0..3).map(|j| vec![f64::from(u8::from(i == j))]).collect()).collect(),
        pz: vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.6, 0.2], vec![0.1, 0.3, 0.6]],
        mu_y0: vec![1.0],
        mu_x0: vec![1.0 / 3.0; 3],
        centers: vec![0.0, 1.0, 2.0],
    };
    let p = privest::policy::PolicyParams::tabular(0, 3, 1).unwrap();
    let batch = privest::model::rollout(&fs, &p, 30, 4, 400).unwrap();
    let mut err = vec![0.0; 31];
    for r in &batch.rollouts {
        let est = grid_mmse(&fs, &r.z_cell).unwrap();
        for t in 0..=30 {
            err[t] += (est[t] - r.x[t]).powi(2) / 400.0;
        }
    }
    for w in err.windows(5).step_by(5) {
        assert!(w[4] <= w[0] + 1e-3, "{err:?}");
    }
    assert!(err[30] < 0.2 * err[0]);
}

#[test]
fn impossible_measurement_is_an_error() {
    let mut fs = tiny();
    fs.pz = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
    assert!(matches!(grid_mmse(&fs, &[0, 1]), Err(privest::Error::ImpossibleObservation(1))));
}

#[test]
fn perturbation_statistics_and_determinism() {
    let zeros = vec![0.0; 100_000];
    let a = perturb(&zeros, 0.3, &mut stream(5)).unwrap();
    let var = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
    assert!((var / 0.09 - 1.0).abs() < 0.05, "{var}");
    assert_eq!(a, perturb(&zeros, 0.3, &mut stream(5)).unwrap());
}

#[test]
fn sweep_trends() {
    let fs = tiny();
    let horizon = 10;
    let sigmas = [0.0, 0.2, 0.5, 1.0, 2.0];
    let pts = baseline_sweep(&fs, &fs, &sigmas, horizon, 1000, 0.3, 7).unwrap();
    let base = &pts[0];
    for p in &pts[1..] {
        // Same rollouts and noise draws at every level.
        let margin = 3.0 * (p.distortion_se.powi(2) + base.distortion_se.powi(2)).sqrt();
        assert!(base.distortion <= p.distortion + margin);
        let excess = p.distortion - base.distortion;
        let want = (horizon + 1) as f64 * p.sigma * p.sigma;
        assert!((excess / want - 1.0).abs() < 0.05, "sigma {}: {excess} vs {want}", p.sigma);
        assert!(base.accuracy.accuracy_mean >= p.accuracy.accuracy_mean);
    }
    let small = baseline_sweep(&fs, &fs, &sigmas, horizon, 200, 0.3, 8).unwrap();
    let inversions = small.windows(2).filter(|w| w[1].accuracy.accuracy_mean > w[0].accuracy.accuracy_mean).count();
    assert!(inversions <= 1);
    assert_eq!(pts, baseline_sweep(&fs, &fs, &sigmas, horizon, 1000, 0.3, 7).unwrap());
    assert!(baseline_sweep(&fs, &fs, &[], horizon, 10, 0.3, 7).is_err());
}
