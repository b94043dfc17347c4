//! Posterior correctness of the Gibbs sampler against independent oracles.

use mvlogit::gibbs::{run_chains, ChainConfig, NormalPrior};
use mvlogit::model::{inverse_mlogit, linear_predictors, Coefficients, DesignLayout, OutcomeMatrix, Term, TrialDataset};
use mvlogit::sim::{generate_dataset, CovariateLaw, DgmSpec, Truth};
use rand::Rng;
use rand::SeedableRng;

fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Posterior mean and sd of the logit under N(0, 1/prec) from a dense grid.
fn grid_1d(successes: f64, n: f64, prec: f64) -> (f64, f64) {
    let (lo, hi, m) = (-8.0, 8.0, 200_001);
    let h = (hi - lo) / (m - 1) as f64;
    let logp: Vec<f64> = (0..m)
        .map(|i| {
            let b = lo + i as f64 * h;
            successes * b - n * log1pexp(b) - 0.5 * prec * b * b
        })
        .collect();
    let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (i, lp) in logp.iter().enumerate() {
        let b = lo + i as f64 * h;
        let w = (lp - max).exp();
        z += w;
        s1 += w * b;
        s2 += w * b * b;
    }
    let mean = s1 / z;
    (mean, (s2 / z - mean * mean).sqrt())
}

fn binary_intercept_data(successes: usize, n: usize) -> TrialDataset {
    let y: Vec<Vec<u8>> = (0..n).map(|i| vec![u8::from(i < successes)]).collect();
    TrialDataset::new(1, &y, vec![0; n], vec![vec![]; n], DesignLayout::intercept_only()).unwrap()
}

#[test]
fn intercept_only_matches_quadrature() {
    let data = binary_intercept_data(30, 50);
    let prior = NormalPrior::diffuse(1, 1, 1e-2).unwrap();
    let cfg = ChainConfig { iterations: 5000, burnin: 500, chains: 2, seed: 2024 };
    let post = run_chains(&data, &prior, &cfg).unwrap();
    let (m, sd) = grid_1d(30.0, 50.0, 1e-2);
    let (em, esd) = (post.mean().get(0, 0), post.sd().get(0, 0));
    assert!((em - m).abs() < 0.02, "mean {em} vs {m}");
    assert!((esd / sd - 1.0).abs() < 0.10, "sd {esd} vs {sd}");
    assert!(post.meta().gelman_rubin.unwrap() < 1.10);
}

#[test]
fn one_covariate_matches_two_dimensional_quadrature() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let n = 50;
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<Vec<u8>> = z
        .iter()
        .map(|zi| {
            let p = 1.0 / (1.0 + (-(0.3 + 0.8 * zi)).exp());
            vec![u8::from(rng.random::<f64>() < p)]
        })
        .collect();
    let layout = DesignLayout::new(vec!["z".into()], vec![Term::Covariate(0)]).unwrap();
    let data = TrialDataset::new(1, &y, vec![0; n], z.iter().map(|v| vec![*v]).collect(), layout).unwrap();

    // grid oracle over (b0, b1)
    let m = 801;
    let (lo, hi) = (-4.0, 4.0);
    let h = (hi - lo) / (m - 1) as f64;
    let mut logp = vec![0.0; m * m];
    for i in 0..m {
        let b0 = lo + i as f64 * h;
        for j in 0..m {
            let b1 = lo + j as f64 * h;
            let mut ll = -0.5 * 1e-2 * (b0 * b0 + b1 * b1);
            for (zi, yi) in z.iter().zip(&y) {
                let eta = b0 + b1 * zi;
                ll += f64::from(yi[0]) * eta - log1pexp(eta);
            }
            logp[i * m + j] = ll;
        }
    }
    let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut mom = [0.0; 5];
    for i in 0..m {
        for j in 0..m {
            let (b0, b1) = (lo + i as f64 * h, lo + j as f64 * h);
            let w = (logp[i * m + j] - max).exp();
            mom[0] += w;
            mom[1] += w * b0;
            mom[2] += w * b0 * b0;
            mom[3] += w * b1;
            mom[4] += w * b1 * b1;
        }
    }
    let mean = [mom[1] / mom[0], mom[3] / mom[0]];
    let sd = [
        (mom[2] / mom[0] - mean[0].powi(2)).sqrt(),
        (mom[4] / mom[0] - mean[1].powi(2)).sqrt(),
    ];

    let prior = NormalPrior::diffuse(1, 2, 1e-2).unwrap();
    let cfg = ChainConfig { iterations: 10_000, burnin: 1000, chains: 2, seed: 5 };
    let post = run_chains(&data, &prior, &cfg).unwrap();
    for p in 0..2 {
        let (em, esd) = (post.mean().get(0, p), post.sd().get(0, p));
        assert!((em - mean[p]).abs() < 0.02, "p={p} mean {em} vs {}", mean[p]);
        assert!((esd / sd[p] - 1.0).abs() < 0.10, "p={p} sd {esd} vs {}", sd[p]);
    }
}

#[test]
fn recovers_known_coefficients() {
    let beta = Coefficients::from_rows(&[
        vec![0.5, -0.4, 0.3, 0.2],
        vec![-0.3, 0.6, -0.5, 0.1],
        vec![0.2, 0.1, 0.4, -0.3],
    ])
    .unwrap();
    let dgm = DgmSpec {
        label: "known".into(),
        k: 2,
        truth: Truth::Regression {
            beta: beta.clone(),
            layout: DesignLayout::with_interactions(vec!["z".into()]),
            law: CovariateLaw::StandardNormal,
        },
        n_per_arm: 2000,
    };
    let data = generate_dataset(&dgm, 31).unwrap();
    let prior = NormalPrior::diffuse(3, 4, 1e-2).unwrap();
    let post = run_chains(&data, &prior, &ChainConfig::desk(9)).unwrap();
    let (mean, sd) = (post.mean(), post.sd());
    for q in 0..3 {
        for p in 0..4 {
            let err = (mean.get(q, p) - beta.get(q, p)).abs();
            assert!(err < 3.0 * sd.get(q, p), "q={q} p={p}: {} vs {}", mean.get(q, p), beta.get(q, p));
        }
    }
    let rhat = post.meta().gelman_rubin.unwrap();
    assert!(rhat < 1.10, "{rhat}");
    assert!(!post.meta().non_convergence);
}

fn mean_phi(post: &mvlogit::gibbs::PosteriorSample, x: &[f64]) -> Vec<f64> {
    let mut acc = [0.0; 4];
    for b in post.draws() {
        let phi = inverse_mlogit(&linear_predictors(b, x).unwrap());
        for (a, p) in acc.iter_mut().zip(phi.as_slice()) {
            *a += p;
        }
    }
    acc.iter().map(|a| a / post.n_draws() as f64).collect()
}

#[test]
fn category_relabelling_is_equivariant() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let n = 600;
    let layout = DesignLayout::new(vec!["z".into()], vec![Term::Treatment, Term::Covariate(0)]).unwrap();
    let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let z: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.5..1.5)]).collect();
    let y: Vec<Vec<u8>> = (0..n)
        .map(|i| {
            let p1 = 0.4 + 0.1 * f64::from(t[i]);
            let p2 = 0.5 + 0.1 * z[i][0];
            vec![u8::from(rng.random::<f64>() < p1), u8::from(rng.random::<f64>() < p2)]
        })
        .collect();
    let swapped: Vec<Vec<u8>> = y.iter().map(|v| vec![v[1], v[0]]).collect();
    let a = TrialDataset::new(2, &y, t.clone(), z.clone(), layout.clone()).unwrap();
    let b = TrialDataset::new(2, &swapped, t, z, layout).unwrap();
    // outcome swap exchanges categories 10 and 01 and keeps the reference
    let h = OutcomeMatrix::new(2).unwrap();
    assert_eq!(a.categories().iter().filter(|&&c| c == 1).count(), b.categories().iter().filter(|&&c| c == 2).count());
    let prior = NormalPrior::diffuse(3, 3, 1e-2).unwrap();
    let cfg = ChainConfig { iterations: 4000, burnin: 500, chains: 2, seed: 1 };
    let pa = run_chains(&a, &prior, &cfg).unwrap();
    let pb = run_chains(&b, &prior, &ChainConfig { seed: 2, ..cfg }).unwrap();
    for x in [[0.0, -1.0], [1.0, 0.0], [1.0, 1.2]] {
        let fa = mean_phi(&pa, &x);
        let fb = mean_phi(&pb, &x);
        let perm = [0, 2, 1, 3];
        for q in 0..h.q() {
            assert!((fa[q] - fb[perm[q]]).abs() < 0.01, "x={x:?} q={q}: {} vs {}", fa[q], fb[perm[q]]);
        }
    }
}

#[test]
fn doubling_a_covariate_halves_its_coefficient() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    let n = 400;
    let layout = DesignLayout::new(vec!["z".into()], vec![Term::Treatment, Term::Covariate(0)]).unwrap();
    let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<Vec<u8>> = z
        .iter()
        .map(|zi| vec![u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-(0.7 * zi)).exp()))])
        .collect();
    let fit = |scale: f64| {
        let cov = z.iter().map(|v| vec![scale * v]).collect();
        let data = TrialDataset::new(1, &y, t.clone(), cov, layout.clone()).unwrap();
        let prior = NormalPrior::diffuse(1, 3, 1e-8).unwrap();
        run_chains(&data, &prior, &ChainConfig { iterations: 3000, burnin: 300, chains: 2, seed: 8 }).unwrap()
    };
    let one = fit(1.0).mean();
    let two = fit(2.0).mean();
    let (s1, s2) = (one.get(0, 2), two.get(0, 2));
    assert!((s2 - 0.5 * s1).abs() < 0.01 * s1.abs(), "{s1} {s2}");
    assert!((one.get(0, 0) - two.get(0, 0)).abs() < 0.01);
}
