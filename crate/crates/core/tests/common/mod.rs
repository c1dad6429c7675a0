#![allow(dead_code)]

use munu_core::dichotomy::{beta_range, fit_certificate, CertificateFit};
use munu_core::rates::{Domain, GrowthRate, NuSequence, RateKind, Sequence, Window};
use munu_core::system::{make_planted, PlantedModel, PlantedSpec};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Case {
    pub seed: u64,
    pub rate: GrowthRate,
    pub nu: NuSequence,
    pub model: PlantedModel,
    pub fit: CertificateFit,
    pub beta: f64,
    pub y: Sequence,
}

impl Case {
    pub fn describe(&self) -> String {
        format!(
            "seed {} d={} {:?} {:?} [{}, {}] beta={:.3}",
            self.seed,
            self.model.system.dim(),
            self.rate.domain,
            self.rate.kind,
            self.rate.window.min,
            self.rate.window.max,
            self.beta
        )
    }
}

/// Planted dichotomic system with a random rate, ν, window, β inside the
/// fitted range and a weighted-balanced input.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=6usize);
    let domain = if rng.random_bool(0.5) {
        Domain::TwoSided
    } else {
        Domain::OneSided
    };
    let kind = match (domain, rng.random_range(0..3)) {
        (_, 0) => RateKind::Exponential,
        (_, 1) => RateKind::Polynomial,
        (Domain::OneSided, _) => RateKind::Logarithmic,
        (Domain::TwoSided, _) => RateKind::Exponential,
    };
    let len = rng.random_range(10..=200i64);
    let window = match domain {
        Domain::OneSided => Window::new(0, len - 1).unwrap(),
        Domain::TwoSided => {
            let h = rng.random_range(len / 4..=3 * len / 4);
            Window::new(-h, len - 1 - h).unwrap()
        }
    };
    let rate = GrowthRate::new(kind, domain, window).unwrap();
    // Strongly non-normal models on short log-ranges can defeat the slope
    // fit or leave no admissible beta; those are redrawn from the same stream.
    let (nu, model, fit, range) = loop {
        let ds = rng.random_range(0..=d);
        let exponents: Vec<f64> = (0..d)
            .map(|i| {
                let e = rng.random_range(0.3..1.5);
                if i < ds {
                    -e
                } else {
                    e
                }
            })
            .collect();
        let lambda_min = exponents.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
        let nu = if rng.random_bool(0.5) {
            NuSequence::ones(window)
        } else {
            NuSequence::power(&rate, rng.random_range(0.0..0.4) * lambda_min).unwrap()
        };
        let cond = if rng.random_bool(0.3) {
            1.0
        } else {
            rng.random_range(1.0..10.0)
        };
        let spec = PlantedSpec {
            exponents,
            similarity_cond: cond,
            vary_similarity: false,
            seed: rng.random(),
        };
        let model = make_planted(&rate, &nu, &spec).unwrap();
        let fit = match fit_certificate(&model.system, &model.projections, &rate, &nu) {
            Ok(fit) => fit,
            Err(munu_core::Error::NotDichotomic { .. }) => continue,
            Err(e) => panic!("seed {seed}: {e}"),
        };
        match beta_range(&fit.certificate, domain) {
            Ok(range) => break (nu, model, fit, range),
            Err(munu_core::Error::EmptyBetaRange { .. }) => continue,
            Err(e) => panic!("seed {seed}: {e}"),
        }
    };
    let beta = range.interior(rng.random_range(0.02..0.98));
    let y = balanced_input(&mut rng, &rate, &nu, beta, d);
    Case {
        seed,
        rate,
        nu,
        model,
        fit,
        beta,
        y,
    }
}

/// Random input whose terms contribute comparably to `‖y‖_{1,β}`.
pub fn balanced_input(rng: &mut ChaCha8Rng, rate: &GrowthRate, nu: &NuSequence, beta: f64, d: usize) -> Sequence {
    let w = rate.window;
    w.indices()
        .map(|n| {
            if rate.domain == Domain::OneSided && n == w.min {
                return DVector::zeros(d);
            }
            let s = (-beta * rate.log_mu(n) - nu.log_nu(n) + rng.random_range(-2.0..2.0)).exp();
            DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * s)
        })
        .collect()
}
