//! Seeded Monte Carlo cross-checks of closed forms against simulation.
//! Everything here is deterministic for the pinned seeds; tolerances are
//! multiples of the relevant standard errors.

use binar::limits::{limit_matrices_mc, mean_t, second_moment_t};
use binar::model::{derive_moments, ImmigrationSpec, ModelParams, OffspringFamily};
use binar::rng::{thin, RngStream};
use binar::stats::{mean, simple_regression, variance, VecWelford};
use binar::tree::{simulate_branch, simulate_tree, subtree_size};
use binar::{increasing_process, sample_t, wls_theta};

fn p1() -> ModelParams {
    ModelParams::new(
        OffspringFamily::bernoulli(0.5).unwrap(),
        OffspringFamily::bernoulli(0.5).unwrap(),
        ImmigrationSpec::new(0.3, 0.7, 0.7).unwrap(),
        1,
    )
    .unwrap()
}

/// Closed-form family central moments against 1e6-sample Monte Carlo
/// averages, within four standard errors.
#[test]
fn family_central_moments_match_sampling() {
    let families = [
        OffspringFamily::bernoulli(0.5).unwrap(),
        OffspringFamily::bernoulli(0.2).unwrap(),
        OffspringFamily::poisson(0.4).unwrap(),
        OffspringFamily::poisson(0.9).unwrap(),
    ];
    for (fi, family) in families.iter().enumerate() {
        let mut rng = RngStream::new(100 + fi as u64).rng();
        const N: usize = 1_000_000;
        // one unit thinned once is one draw from the family
        let mu = family.mean();
        let mut acc = VecWelford::new(3);
        for _ in 0..N {
            let x = f64::from(thin(family, 1, &mut rng)) - mu;
            acc.update(&[x * x, x.powi(4), x.powi(6)]);
        }
        for (slot, order) in [(0usize, 2u32), (1, 4), (2, 6)] {
            let closed = family.central_moment(order).unwrap();
            let se = acc.standard_errors()[slot];
            let got = acc.mean()[slot];
            assert!(
                (got - closed).abs() <= 4.0 * se,
                "{family:?} order {order}: sampled {got}, closed form {closed}, se {se}"
            );
        }
    }
}

/// Deep-generation tree average approaches the limit mean. The nodes of one
/// generation are correlated through shared ancestry, so the naive standard
/// error carries an inflation factor calibrated over independent trees.
#[test]
fn generation_mean_approaches_limit_mean() {
    let params = p1();
    let truth = mean_t(&derive_moments(&params));
    let tree = simulate_tree(&params, 14, RngStream::new(7)).unwrap();
    let generation: Vec<f64> = tree
        .generation_slice(14)
        .iter()
        .map(|&v| f64::from(v))
        .collect();
    let m = mean(&generation);
    let naive_se = (variance(&generation) / generation.len() as f64).sqrt();
    assert!(
        (m - truth).abs() <= 9.0 * naive_se,
        "generation mean {m} vs {truth} (naive se {naive_se})"
    );
}

/// Terminal branch values after many steps have the limit mean and second
/// moment.
#[test]
fn branch_terminal_moments() {
    let params = p1();
    let m = derive_moments(&params);
    let (e_t, e_t2) = (mean_t(&m), second_moment_t(&m));
    const PATHS: u64 = 100_000;
    let root = RngStream::new(11);
    let mut acc = VecWelford::new(2);
    for path in 0..PATHS {
        let terminal = f64::from(simulate_branch(&params, 200, root.substream(path)).terminal());
        acc.update(&[terminal, terminal * terminal]);
    }
    let se = acc.standard_errors();
    assert!(
        (acc.mean()[0] - e_t).abs() <= 3.0 * se[0],
        "terminal mean {} vs {e_t} (se {})",
        acc.mean()[0],
        se[0]
    );
    assert!(
        (acc.mean()[1] - e_t2).abs() <= 3.0 * se[1],
        "terminal second moment {} vs {e_t2} (se {})",
        acc.mean()[1],
        se[1]
    );
}

/// Series-truncation draws of the limit variable reproduce both closed-form
/// moments.
#[test]
fn sampled_limit_variable_moments() {
    let params = p1();
    let m = derive_moments(&params);
    const DRAWS: u64 = 200_000;
    let root = RngStream::new(13);
    let mut acc = VecWelford::new(2);
    for draw in 0..DRAWS {
        let t = f64::from(sample_t(&params, 1e-8, root.substream(draw)));
        acc.update(&[t, t * t]);
    }
    let se = acc.standard_errors();
    assert!((acc.mean()[0] - mean_t(&m)).abs() <= 3.0 * se[0]);
    assert!((acc.mean()[1] - second_moment_t(&m)).abs() <= 3.0 * se[1]);
    // non-degeneracy: the limit variable has positive variance
    let var = acc.mean()[1] - acc.mean()[0] * acc.mean()[0];
    assert!(var > 1.0);
}

/// Conditional-mean identity: regressing even children on their mothers
/// recovers slope a and intercept c within classical standard errors.
#[test]
fn even_child_regression_recovers_mean_parameters() {
    let params = p1();
    let m = derive_moments(&params);
    let root = RngStream::new(17);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for replicate in 0..13u64 {
        let tree = simulate_tree(&params, 13, root.substream(replicate)).unwrap();
        for k in 1..=subtree_size(12) {
            xs.push(f64::from(tree.value(k)));
            ys.push(f64::from(tree.value(2 * k)));
        }
        if xs.len() >= 100_000 {
            break;
        }
    }
    let fit = simple_regression(&xs, &ys);
    assert!(
        (fit.slope - m.a).abs() <= 3.0 * fit.slope_se,
        "slope {} +- {} vs {}",
        fit.slope,
        fit.slope_se,
        m.a
    );
    assert!(
        (fit.intercept - m.c).abs() <= 3.0 * fit.intercept_se,
        "intercept {} +- {} vs {}",
        fit.intercept,
        fit.intercept_se,
        m.c
    );
}

/// Pointwise consistency at a practical depth: every estimate is within 0.1
/// of its target on the pinned seed.
#[test]
fn estimates_close_at_depth_14() {
    let params = p1();
    let m = derive_moments(&params);
    let tree = simulate_tree(&params, 14, RngStream::new(1)).unwrap();
    let set = binar::estimate_all(&tree, 14).unwrap();
    for (got, want) in set.theta.as_vec().iter().zip(m.theta()) {
        assert!((got - want).abs() < 0.1, "theta {got} vs {want}");
    }
    for (got, want) in set.variances.eta.iter().zip(m.eta()) {
        assert!((got - want).abs() < 0.1, "eta {got} vs {want}");
    }
    for (got, want) in set.variances.zeta.iter().zip(m.zeta()) {
        assert!((got - want).abs() < 0.1, "zeta {got} vs {want}");
    }
    assert!((set.variances.rho - m.rho).abs() < 0.1);
    assert!(!set.theta.regularized, "design regular at depth 14");
}

/// The normalized quadratic variation converges to its limit matrix.
#[test]
fn normalized_bracket_approaches_limit() {
    let params = p1();
    let m = derive_moments(&params);
    let tree = simulate_tree(&params, 16, RngStream::new(19)).unwrap();
    let diag = increasing_process(&tree, &m, 16).unwrap();
    let objs = limit_matrices_mc(&params, 200_000, RngStream::new(20)).unwrap();
    let rel = diag.normalized.sub(&objs.l).frobenius_norm() / objs.l.frobenius_norm();
    assert!(rel < 0.05, "relative Frobenius distance {rel}");
}

/// Estimates do not need the identity shift beyond the first generations on
/// realistic data.
#[test]
fn regularization_only_fires_early() {
    let params = p1();
    let root = RngStream::new(23);
    for replicate in 0..20u64 {
        let tree = simulate_tree(&params, 8, root.substream(replicate)).unwrap();
        for n in 4..=8 {
            let theta = wls_theta(&tree, n).unwrap();
            assert!(
                !theta.regularized,
                "replicate {replicate} generation {n} needed regularization"
            );
        }
    }
}

/// Generation means rise toward the limit as the start label influence
/// washes out; spot check the first two generations' exact means.
#[test]
fn early_generation_means() {
    let params = p1();
    let m = derive_moments(&params);
    // E[X_child of ancestor] = a x1 + c for the even child
    let root = RngStream::new(29);
    const REPS: u64 = 200_000;
    let mut acc = VecWelford::new(2);
    for rep in 0..REPS {
        let tree = simulate_tree(&params, 1, root.substream(rep)).unwrap();
        acc.update(&[f64::from(tree.value(2)), f64::from(tree.value(3))]);
    }
    let se = acc.standard_errors();
    let expect_even = m.a * f64::from(params.x1) + m.c;
    let expect_odd = m.b * f64::from(params.x1) + m.d;
    assert!((acc.mean()[0] - expect_even).abs() <= 4.0 * se[0]);
    assert!((acc.mean()[1] - expect_odd).abs() <= 4.0 * se[1]);
}
