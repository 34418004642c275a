//! Deterministic, splittable random streams.
//!
//! Every random quantity in the crate is drawn from a [`RngStream`], a value
//! type holding a master seed and a derived stream id. Substreams are derived
//! by hashing, never by drawing, so a tree node or a Monte Carlo draw gets
//! the same generator no matter which thread reaches it first. The full
//! output of any experiment is a pure function of (configuration, seed).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::model::{ImmigrationSpec, OffspringFamily};

/// A value-like handle on an independent random stream. Cheap to copy and to
/// split; instantiate a generator with [`RngStream::rng`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RngStream {
    seed: u64,
    stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    /// Root stream for a master seed.
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Derive the child stream with the given id. Distinct ids give
    /// statistically independent streams; identical (seed, id paths) give
    /// identical output on every platform.
    pub fn substream(&self, id: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(id)),
        }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Thinning operator: the sum of `x` i.i.d. draws from the offspring family.
///
/// Bernoulli thinning collapses to a single Binomial(x, p) draw. Poisson
/// thinning uses the matching shortcut, a single Poisson(x * lambda) draw;
/// both shortcuts are exact in distribution and are what the distributional
/// test suite pins down.
pub fn thin<R: Rng + ?Sized>(family: &OffspringFamily, x: u32, rng: &mut R) -> u32 {
    if x == 0 {
        return 0;
    }
    match *family {
        OffspringFamily::Bernoulli { mean } => {
            let binomial = Binomial::new(u64::from(x), mean).expect("validated probability");
            binomial.sample(rng) as u32
        }
        OffspringFamily::Poisson { mean } => {
            let poisson = Poisson::new(f64::from(x) * mean).expect("validated rate");
            poisson.sample(rng) as u32
        }
    }
}

fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u32 {
    if lambda == 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("validated rate").sample(rng) as u32
}

/// One immigration pair `(U + W1, U + W2)`. Components are drawn in the
/// fixed order U, W1, W2; pairs are independent across calls.
pub fn sample_immigration_pair<R: Rng + ?Sized>(spec: &ImmigrationSpec, rng: &mut R) -> (u32, u32) {
    let u = poisson_draw(spec.lambda0, rng);
    let w1 = poisson_draw(spec.lambda1, rng);
    let w2 = poisson_draw(spec.lambda2, rng);
    (u + w1, u + w2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::VecWelford;

    #[test]
    fn substream_reproducible() {
        let root = RngStream::new(7);
        let a: Vec<u64> = {
            let mut rng = root.substream(3).rng();
            (0..8).map(|_| rng.random()).collect()
        };
        let b: Vec<u64> = {
            let mut rng = root.substream(3).rng();
            (0..8).map(|_| rng.random()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_substreams_differ() {
        let root = RngStream::new(7);
        let a: u64 = root.substream(1).rng().random();
        let b: u64 = root.substream(2).rng().random();
        assert_ne!(a, b);
        // splitting is path sensitive as well
        let c: u64 = root.substream(1).substream(2).rng().random();
        let d: u64 = root.substream(2).substream(1).rng().random();
        assert_ne!(c, d);
    }

    #[test]
    fn thin_of_zero_is_zero() {
        let mut rng = RngStream::new(1).rng();
        let bern = OffspringFamily::bernoulli(0.5).unwrap();
        let pois = OffspringFamily::poisson(0.4).unwrap();
        for _ in 0..100 {
            assert_eq!(thin(&bern, 0, &mut rng), 0);
            assert_eq!(thin(&pois, 0, &mut rng), 0);
        }
    }

    #[test]
    fn bernoulli_thinning_mean() {
        // 1e5 draws of Binomial(10, 0.5): mean 5, variance 2.5
        let family = OffspringFamily::bernoulli(0.5).unwrap();
        let mut rng = RngStream::new(11).substream(0).rng();
        let mut acc = VecWelford::new(1);
        for _ in 0..100_000 {
            acc.update(&[f64::from(thin(&family, 10, &mut rng))]);
        }
        let se = acc.standard_errors()[0];
        assert!(
            (acc.mean()[0] - 5.0).abs() <= 3.0 * se,
            "mean {} se {}",
            acc.mean()[0],
            se
        );
    }

    #[test]
    fn poisson_thinning_variance() {
        // sum of 7 Poisson(0.4) draws has variance 2.8
        let family = OffspringFamily::poisson(0.4).unwrap();
        let mut rng = RngStream::new(12).substream(0).rng();
        let n = 100_000usize;
        let draws: Vec<f64> = (0..n)
            .map(|_| f64::from(thin(&family, 7, &mut rng)))
            .collect();
        let var = crate::stats::variance(&draws);
        // Var of the sample variance of a Poisson(2.8) sample: (mu4 - var^2)/n
        // with mu4 = lambda + 3 lambda^2 = 26.32
        let se = ((26.32 - 2.8f64 * 2.8) / n as f64).sqrt();
        assert!((var - 2.8).abs() <= 3.0 * se, "var {var} se {se}");
    }

    #[test]
    fn thinning_splits_over_sums() {
        // thin(x1 + x2) and thin(x1) + thin(x2) share mean and variance
        let family = OffspringFamily::bernoulli(0.3).unwrap();
        let mut rng = RngStream::new(13).substream(0).rng();
        let n = 100_000usize;
        let mut whole = VecWelford::new(1);
        let mut split = VecWelford::new(1);
        for _ in 0..n {
            whole.update(&[f64::from(thin(&family, 12, &mut rng))]);
            split.update(&[f64::from(
                thin(&family, 5, &mut rng) + thin(&family, 7, &mut rng),
            )]);
        }
        let se = (whole.standard_errors()[0].powi(2) + split.standard_errors()[0].powi(2)).sqrt();
        assert!((whole.mean()[0] - split.mean()[0]).abs() <= 4.0 * se);
    }

    #[test]
    fn degenerate_immigration_is_zero() {
        let spec = ImmigrationSpec::new(0.0, 0.0, 0.0).unwrap();
        let mut rng = RngStream::new(5).rng();
        for _ in 0..50 {
            assert_eq!(sample_immigration_pair(&spec, &mut rng), (0, 0));
        }
    }

    #[test]
    fn immigration_pair_covariance() {
        let spec = ImmigrationSpec::new(0.3, 0.7, 0.7).unwrap();
        let mut rng = RngStream::new(21).substream(0).rng();
        let n = 1_000_000usize;
        let mut acc = VecWelford::new(1);
        for _ in 0..n {
            let (e1, e2) = sample_immigration_pair(&spec, &mut rng);
            let (x, y) = (f64::from(e1) - 1.0, f64::from(e2) - 1.0);
            acc.update(&[x * y]);
        }
        let se = acc.standard_errors()[0];
        assert!(
            (acc.mean()[0] - 0.3).abs() <= 3.0 * se,
            "cov {} se {}",
            acc.mean()[0],
            se
        );
    }

    #[test]
    fn immigration_mixed_moment_matches_closed_form() {
        let spec = ImmigrationSpec::new(0.3, 0.7, 0.7).unwrap();
        let expected = spec.mixed_second_moment();
        let (c, d) = (spec.mean_even(), spec.mean_odd());
        let mut rng = RngStream::new(22).substream(0).rng();
        let mut acc = VecWelford::new(1);
        for _ in 0..1_000_000usize {
            let (e1, e2) = sample_immigration_pair(&spec, &mut rng);
            let (x, y) = (f64::from(e1) - c, f64::from(e2) - d);
            acc.update(&[x * x * y * y]);
        }
        let se = acc.standard_errors()[0];
        assert!(
            (acc.mean()[0] - expected).abs() <= 4.0 * se,
            "mixed {} expected {} se {}",
            acc.mean()[0],
            expected,
            se
        );
    }
}
