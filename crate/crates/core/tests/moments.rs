use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use idss_core::moments::{
    linear_map, product_independent, quadratic_form_expectation, regression_output_moments, MomentVector,
    ScalarMoments,
};

const N: usize = 1_000_000;

/// Running mean and standard error of a scalar statistic.
#[derive(Default)]
struct Stat {
    n: f64,
    sum: f64,
    sum2: f64,
}

impl Stat {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum2 += x * x;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn se(&self) -> f64 {
        let m = self.mean();
        ((self.sum2 / self.n - m * m).max(0.0) / self.n).sqrt()
    }

    fn assert_covers(&self, x: f64, what: &str) {
        let z = (self.mean() - x) / self.se().max(1e-300);
        assert!(z.abs() <= 3.0, "{what}: estimate {} vs {x}, z = {z}", self.mean());
    }
}

fn random_psd(rng: &mut Xoshiro256PlusPlus, n: usize) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let m = &l * l.transpose();
    (&m + m.transpose()) * 0.5
}

fn random_vec(rng: &mut Xoshiro256PlusPlus, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Draws of `N(mean, cov)` through a Cholesky factor.
struct Normal {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl Normal {
    fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Self {
        let chol = cov.clone().cholesky().expect("positive definite").l();
        Self { mean, chol }
    }

    fn draw(&self, rng: &mut Xoshiro256PlusPlus) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol * z
    }
}

#[test]
fn linear_map_matches_simulation() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(101);
    let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
    let b = random_vec(&mut rng, 3);
    let x = MomentVector::new(random_vec(&mut rng, 3), random_psd(&mut rng, 3)).unwrap();
    let out = linear_map(&a, &b, &x).unwrap();

    let normal = Normal::new(x.mean().clone(), x.cov());
    let mut means: Vec<Stat> = (0..3).map(|_| Stat::default()).collect();
    let mut covs: Vec<Stat> = (0..9).map(|_| Stat::default()).collect();
    for _ in 0..N {
        let y = &a * normal.draw(&mut rng) + &b;
        let d = &y - out.mean();
        for i in 0..3 {
            means[i].push(y[i]);
            for j in 0..3 {
                covs[3 * i + j].push(d[i] * d[j]);
            }
        }
    }
    for i in 0..3 {
        means[i].assert_covers(out.mean()[i], "mean");
        for j in i..3 {
            covs[3 * i + j].assert_covers(out.cov()[(i, j)], "covariance");
        }
    }
}

#[test]
fn product_of_independent_scalars_matches_simulation() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(102);
    for _ in 0..3 {
        let (m1, s1) = (rng.random_range(-2.0..2.0), rng.random_range(0.1..1.0));
        let (m2, s2) = (rng.random_range(-2.0..2.0), rng.random_range(0.1..1.0));
        let x = ScalarMoments::from_mean_variance(m1, s1 * s1).unwrap();
        let y = ScalarMoments::from_mean_variance(m2, s2 * s2).unwrap();
        let p = product_independent(x, y);
        let (mut first, mut second) = (Stat::default(), Stat::default());
        for _ in 0..N {
            let a = m1 + s1 * rng.sample::<f64, _>(StandardNormal);
            let b = m2 + s2 * rng.sample::<f64, _>(StandardNormal);
            first.push(a * b);
            second.push(a * a * b * b);
        }
        first.assert_covers(p.mean, "E[XY]");
        second.assert_covers(p.second_raw, "E[(XY)^2]");
    }
}

#[test]
fn quadratic_form_matches_simulation() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(103);
    let c = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
    let x = MomentVector::new(random_vec(&mut rng, 3), random_psd(&mut rng, 3)).unwrap();
    let expected = quadratic_form_expectation(&x, &c).unwrap();
    let normal = Normal::new(x.mean().clone(), x.cov());
    let mut s = Stat::default();
    for _ in 0..N {
        let v = normal.draw(&mut rng);
        s.push((v.transpose() * &c * &v)[(0, 0)]);
    }
    s.assert_covers(expected, "E[X^T C X]");
}

#[test]
fn quadratic_form_examples() {
    let x = MomentVector::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
    assert_eq!(quadratic_form_expectation(&x, &DMatrix::zeros(2, 2)).unwrap(), 0.0);
    assert!((quadratic_form_expectation(&x, &DMatrix::identity(2, 2)).unwrap() - 3.0).abs() < 1e-15);
}

#[test]
fn regression_output_matches_simulation() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(104);
    let x = MomentVector::new(random_vec(&mut rng, 3), random_psd(&mut rng, 3) * 0.5).unwrap();
    let a = random_vec(&mut rng, 3);
    let c = random_psd(&mut rng, 3) * 0.2;
    let w = random_psd(&mut rng, 3) * 0.1;
    let noise = 0.3;
    let out = regression_output_moments(&x, &a, &c, noise, &w).unwrap();

    let xs = Normal::new(x.mean().clone(), x.cov());
    let theta = Normal::new(a.clone(), &(&c + &w));
    let (mut first, mut second) = (Stat::default(), Stat::default());
    for _ in 0..N {
        let y = xs.draw(&mut rng).dot(&theta.draw(&mut rng)) + noise.sqrt() * rng.sample::<f64, _>(StandardNormal);
        first.push(y);
        second.push(y * y);
    }
    first.assert_covers(out.mean, "E[Y]");
    second.assert_covers(out.second_raw, "E[Y^2]");
}

#[test]
fn regression_with_evolution_covariance_reproduces_expansion() {
    // sum_ij (a_ij + w_ij)(a1_i a1_j + c1_ij) with a = G C2 G^T.
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(105);
    let a1 = random_vec(&mut rng, 2);
    let c1 = random_psd(&mut rng, 2);
    let g = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
    let c2 = random_psd(&mut rng, 2);
    let w2 = random_psd(&mut rng, 2);
    let m2 = random_vec(&mut rng, 2);
    let a = &g * &c2 * g.transpose();
    let x = MomentVector::new(a1.clone(), c1.clone()).unwrap();
    let got = regression_output_moments(&x, &(&g * &m2), &a, 0.0, &w2).unwrap();
    let gm = &g * &m2;
    let mut hand = (gm.transpose() * &c1 * &gm)[(0, 0)];
    for i in 0..2 {
        for j in 0..2 {
            hand += (a[(i, j)] + w2[(i, j)]) * (a1[i] * a1[j] + c1[(i, j)]);
        }
    }
    assert!((got.variance() - hand).abs() < 1e-12 * hand.abs().max(1.0));
}

fn matrix(n: usize, m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
}

fn moment_vector(n: usize) -> impl Strategy<Value = MomentVector> {
    (prop::collection::vec(-2.0f64..2.0, n), matrix(n, n)).prop_map(move |(mean, l)| {
        let cov = &l * l.transpose();
        MomentVector::new(DVector::from_vec(mean), (&cov + cov.transpose()) * 0.5).expect("psd by construction")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn linear_maps_compose(
        m in moment_vector(3),
        a1 in matrix(2, 3),
        a2 in matrix(4, 2),
        b1 in prop::collection::vec(-2.0f64..2.0, 2),
        b2 in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let (b1, b2) = (DVector::from_vec(b1), DVector::from_vec(b2));
        let stepwise = linear_map(&a2, &b2, &linear_map(&a1, &b1, &m).unwrap()).unwrap();
        let direct = linear_map(&(&a2 * &a1), &(&a2 * &b1 + &b2), &m).unwrap();
        let scale = 1.0 + direct.mean().amax().max(direct.cov().amax());
        prop_assert!((stepwise.mean() - direct.mean()).amax() <= 1e-10 * scale);
        prop_assert!((stepwise.cov() - direct.cov()).amax() <= 1e-10 * scale);
    }

    #[test]
    fn outputs_keep_nonnegative_variance(
        m in moment_vector(3),
        a in prop::collection::vec(-2.0f64..2.0, 3),
        c in moment_vector(3),
        w in moment_vector(3),
        noise in 0.0f64..2.0,
    ) {
        let y = regression_output_moments(&m, &DVector::from_vec(a), c.cov(), noise, w.cov()).unwrap();
        prop_assert!(y.second_raw >= y.mean * y.mean - 1e-9);
        for i in 0..3 {
            let s = m.component(i);
            let p = product_independent(s, y);
            prop_assert!(p.second_raw >= p.mean * p.mean - 1e-9);
        }
    }
}
