//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::time::Instant;

use munu_core::admissibility::{
    operator_norm_t, oracle_solve_weighted, run_counterexample, solve_admissibility, weighted_relative_error, Boundary,
};
use munu_core::dichotomy::{fit_certificate, verify_dichotomy, DichotomyCertificate, ProjectionFamily, VerifyOptions};
use munu_core::linalg::{column_space, spectral_norm, subspace_distance};
use munu_core::rates::{compute_n0, Domain, GrowthRate, NuSequence, RateKind, Sequence, WeightedNormSpec, Window};
use munu_core::robustness::{
    make_perturbation, margin_formula, smallness_margin, verify_persistence, Gamma, PersistenceVerdict,
    PerturbationSpec,
};
use munu_core::splitting::{characterize, s_beta_zero_check, Characterization, SplitOptions};
use munu_core::system::{make_planted, make_planted_model, scalar_example, PlantedModel, PlantedSpec};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use common::{random_case, Case};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn exp_rate(domain: Domain, min: i64, max: i64) -> GrowthRate {
    GrowthRate::new(RateKind::Exponential, domain, Window::new(min, max).unwrap()).unwrap()
}

fn seq_from_rows(rows: &[Vec<f64>]) -> Sequence {
    rows.iter().map(|r| DVector::from_vec(r.clone())).collect()
}

fn criterion_1() -> Outcome {
    let (rate, sys) = scalar_example(Window::new(0, 20).unwrap()).unwrap();
    let proj = ProjectionFamily::identity(rate.window, 1);
    let nu = NuSequence::ones(rate.window);
    let cert = DichotomyCertificate {
        d: 1.0,
        lambda: 0.5,
        epsilon: 0.0,
    };
    let t = Instant::now();
    let rep = verify_dichotomy(&sys, &proj, &rate, &nu, &cert, &VerifyOptions::default()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        rep.pass && rep.max_slack <= 1e-12 && secs < 1.0,
        format!(
            "max log-slack {:e}, verify pass {}, {:.3} s",
            rep.max_slack, rep.pass, secs
        ),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let table = run_counterexample(10).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let lb3 = table.rows[2].log_bound;
    outcome(
        table.all_hold && table.rows.len() == 10 && lb3 > 1e6f64.ln() && secs < 0.1,
        format!(
            "x_n >= bound at all 10 rows: {}, log bound at n=3 {:.6} (> ln 1e6 = {:.3}), {:.4} s",
            table.all_hold,
            lb3,
            1e6f64.ln(),
            secs
        ),
    )
}

struct SolveStats {
    worst_rel: f64,
    worst_residual: f64,
    worst_bound_ratio: f64,
    worst_sampled_ratio: f64,
    worst_impulse_gap: f64,
    failures: Vec<String>,
    count: usize,
}

fn run_solve_cases(cases: &[Case]) -> SolveStats {
    let mut s = SolveStats {
        worst_rel: 0.0,
        worst_residual: 0.0,
        worst_bound_ratio: 0.0,
        worst_sampled_ratio: 0.0,
        worst_impulse_gap: 0.0,
        failures: Vec::new(),
        count: 0,
    };
    for c in cases {
        let sys = &c.model.system;
        let proj = &c.model.projections;
        let b = Boundary::from_projections(sys, proj);
        let rep = match solve_admissibility(sys, proj, &c.y, c.beta, &c.rate, &c.nu, &b) {
            Ok(r) => r,
            Err(e) => {
                s.failures.push(format!("{}: solve error {e}", c.describe()));
                continue;
            }
        };
        let x = seq_from_rows(&rep.solution);
        let oracle = oracle_solve_weighted(sys, proj, &c.y, &b, Some((&c.rate, c.beta))).unwrap();
        let rel = weighted_relative_error(&x, &oracle, &c.rate, c.beta).unwrap();
        s.worst_rel = s.worst_rel.max(rel);
        s.worst_residual = s.worst_residual.max(rep.max_residual);
        let ratio = rep.solution_norm_inf_beta / (c.fit.certificate.d * rep.input_norm_1beta);
        s.worst_bound_ratio = s.worst_bound_ratio.max(ratio);
        if rel > 1e-8 || rep.max_residual > 1e-10 || ratio > 1.0 + 1e-6 {
            s.failures.push(format!(
                "{}: rel {rel:e} residual {:e} bound ratio {ratio}",
                c.describe(),
                rep.max_residual
            ));
        }
        let t = operator_norm_t(sys, proj, &c.rate, &c.nu, c.beta, 4, c.seed).unwrap();
        s.worst_sampled_ratio = s.worst_sampled_ratio.max(t.sampled_lb / t.exact_sup);
        s.worst_impulse_gap = s.worst_impulse_gap.max((t.impulse_lb / t.exact_sup - 1.0).abs());
        s.count += 1;
    }
    s
}

fn criteria_3_4(cases: &[Case]) -> (Outcome, Outcome, SolveStats) {
    let t = Instant::now();
    let stats = run_solve_cases(cases);
    let secs = t.elapsed().as_secs_f64();
    let kinds: std::collections::BTreeSet<String> = cases
        .iter()
        .map(|c| format!("{:?}/{:?}", c.rate.domain, c.rate.kind))
        .collect();
    let c3 = outcome(
        stats.count >= 200 && stats.worst_rel <= 1e-8 && stats.worst_residual <= 1e-10 && secs < 30.0,
        format!(
            "{} cases ({} rate/domain combos), max relative error {:e}, max residual {:e}, {:.2} s{}",
            stats.count,
            kinds.len(),
            stats.worst_rel,
            stats.worst_residual,
            secs,
            first_failure(&stats.failures)
        ),
    );
    let c4 = outcome(
        stats.count >= 200 && stats.worst_bound_ratio <= 1.0 + 1e-6,
        format!(
            "max ||x||_inf,beta / (D ||y||_1,beta) = {:.6} over {} cases",
            stats.worst_bound_ratio, stats.count
        ),
    );
    (c3, c4, stats)
}

fn first_failure(f: &[String]) -> String {
    match f.first() {
        Some(m) => format!("; {} failing, first: {m}", f.len()),
        None => String::new(),
    }
}

fn projection_error(c: &Characterization, planted: &ProjectionFamily) -> f64 {
    let w = c.splitting.window;
    let planted = planted.restrict(w).unwrap();
    w.indices()
        .map(|n| {
            let a = subspace_distance(
                &column_space(c.projections.get(n), 1e-8),
                &column_space(planted.get(n), 1e-8),
            );
            let b = subspace_distance(c.projections.kernel_basis(n), planted.kernel_basis(n));
            a.max(b)
        })
        .fold(0.0, f64::max)
}

fn characterize_planted(pm: &PlantedModel, rate: &GrowthRate, nu: &NuSequence) -> Characterization {
    let z = match rate.domain {
        Domain::OneSided => Some(pm.projections.kernel_basis(rate.window.min).clone()),
        Domain::TwoSided => None,
    };
    characterize(&pm.system, rate, nu, z.as_ref(), &SplitOptions::default()).unwrap()
}

fn criterion_5() -> (Outcome, Vec<(Characterization, NuSequence)>) {
    let mut recovered = Vec::new();
    let mut worst_exact_lambda = 0.0f64;
    let mut worst_exact_d = 0.0f64;
    let mut worst_angle = 0.0f64;
    let mut worst_lambda = 0.0f64;
    let configs: [(Domain, (usize, usize), f64, f64); 6] = [
        (Domain::OneSided, (1, 1), 1.0, 1.5),
        (Domain::OneSided, (2, 1), 0.7, 1.1),
        (Domain::OneSided, (1, 3), 1.3, 0.9),
        (Domain::TwoSided, (1, 1), 1.0, 1.0),
        (Domain::TwoSided, (2, 2), 0.8, 1.4),
        (Domain::TwoSided, (3, 2), 1.2, 0.6),
    ];
    let mut seed = 0;
    for (domain, dims, ls, lu) in configs {
        let rate = match domain {
            Domain::OneSided => exp_rate(domain, 0, 60),
            Domain::TwoSided => exp_rate(domain, -60, 60),
        };
        let nu = NuSequence::ones(rate.window);
        let lambda = ls.min(lu);
        let pm = make_planted_model(&rate, &nu, ls, lu, dims, 1.0, seed).unwrap();
        let c = characterize_planted(&pm, &rate, &nu);
        worst_exact_lambda = worst_exact_lambda.max((c.certificate.lambda - lambda).abs());
        worst_exact_d = worst_exact_d.max(c.certificate.d - 1.0);
        recovered.push((c, nu.clone()));
        for cond in [2.0, 5.0, 10.0] {
            seed += 1;
            let pm = make_planted_model(&rate, &nu, ls, lu, dims, cond, seed).unwrap();
            let c = characterize_planted(&pm, &rate, &nu);
            worst_angle = worst_angle.max(projection_error(&c, &pm.projections));
            worst_lambda = worst_lambda.max((c.certificate.lambda - lambda).abs());
            recovered.push((c, nu.clone()));
        }
    }
    let pass = worst_exact_lambda <= 1e-6 && worst_exact_d <= 1e-8 && worst_angle <= 1e-6 && worst_lambda <= 1e-3;
    (
        outcome(
            pass,
            format!(
                "cond=1: max |lambda-lambda*| {worst_exact_lambda:e}, max D-1 {worst_exact_d:e}; \
                 cond<=10: max principal angle {worst_angle:e}, max |lambda-lambda*| {worst_lambda:e} \
                 ({} models)",
                recovered.len()
            ),
        ),
        recovered,
    )
}

fn criterion_6(recovered: &[(Characterization, NuSequence)], stats: &SolveStats) -> Outcome {
    let mut worst_proj = f64::NEG_INFINITY;
    let mut worst_green = f64::NEG_INFINITY;
    for (c, nu) in recovered {
        let d = c.certificate.d;
        for n in c.splitting.window.indices() {
            let r = spectral_norm(c.projections.get(n)) / (d * nu.log_nu(n).exp());
            worst_proj = worst_proj.max(r);
        }
        worst_green = worst_green.max(c.green.sup);
    }
    let pass = worst_proj <= 1.0 + 1e-12
        && worst_green.is_finite()
        && stats.worst_sampled_ratio <= 1.0 + 1e-12
        && stats.worst_impulse_gap <= 1e-10;
    outcome(
        pass,
        format!(
            "max ||P_n||/(D nu_n) {worst_proj:.12}, max Green ratio {worst_green:.6}, \
             max sampled_lb/exact_sup {:.6} and max |impulse/exact - 1| {:e} over {} cases",
            stats.worst_sampled_ratio, stats.worst_impulse_gap, stats.count
        ),
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let beta = 0.3;
    let mut points = 0;
    let mut below = 0;
    let mut persisted = 0;
    let mut worst_sat = 0.0f64;
    let mut failures = Vec::new();
    let models: [(Domain, (usize, usize), u64); 4] = [
        (Domain::OneSided, (1, 1), 1),
        (Domain::OneSided, (2, 2), 2),
        (Domain::TwoSided, (1, 1), 3),
        (Domain::TwoSided, (2, 2), 4),
    ];
    for (domain, dims, mseed) in models {
        let rate = match domain {
            Domain::OneSided => exp_rate(domain, 0, 40),
            Domain::TwoSided => exp_rate(domain, -25, 25),
        };
        let nu = NuSequence::ones(rate.window);
        let pm = make_planted_model(&rate, &nu, 1.0, 1.2, dims, 3.0, mseed).unwrap();
        let probe = PerturbationSpec {
            gamma: Gamma::halving(),
            c: 1.0,
            seed: 0,
            beta,
            variant: munu_core::rates::NormVariant::Plain,
        };
        let m = smallness_margin(&pm.system, &pm.projections, &rate, &nu, &probe, None).unwrap();
        let (g, tn) = (m.gamma_sum, m.t_norm);
        let s_star = (-tn + (tn * tn + 4.0 * tn).sqrt()) / (2.0 * tn);
        let c_star = s_star / g;
        let z = match domain {
            Domain::OneSided => Some(pm.projections.kernel_basis(0).clone()),
            Domain::TwoSided => None,
        };
        for c in [0.01, 0.1, 0.5 * c_star] {
            for seed in 0..3u64 {
                let spec = PerturbationSpec {
                    c,
                    seed: 100 * mseed + seed,
                    ..probe.clone()
                };
                let p = make_perturbation(&pm.system, &rate, &nu, &spec, Some(&pm.certificate)).unwrap();
                for (b, lr) in p.matrices.iter().zip(&p.log_rho) {
                    let got = spectral_norm(&b.mat).ln() + b.log_scale.to_f64();
                    worst_sat = worst_sat.max((got - lr).exp_m1().abs());
                }
                let margin = margin_formula(c, g, tn);
                let rep = verify_persistence(
                    &pm.system,
                    &p.matrices,
                    &rate,
                    &nu,
                    z.as_ref(),
                    None,
                    &SplitOptions::default(),
                )
                .unwrap();
                points += 1;
                if margin < 1.0 {
                    below += 1;
                    if rep.verdict == PersistenceVerdict::Persisted {
                        persisted += 1;
                    } else {
                        failures.push(format!("{domain:?} {dims:?} c={c} seed={seed}: {:?}", rep.failure));
                    }
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        points >= 30 && below >= 30 && persisted == below && worst_sat <= 1e-12 && secs < 60.0,
        format!(
            "{persisted}/{below} points with margin < 1 persisted ({points} total), \
             max saturation error {worst_sat:e}, {secs:.2} s{}",
            first_failure(&failures)
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (kind, half) in [(RateKind::Exponential, 30), (RateKind::Polynomial, 80)] {
        let rate = GrowthRate::new(kind, Domain::TwoSided, Window::new(-half, half).unwrap()).unwrap();
        let n0 = compute_n0(&rate).unwrap();
        for (seed, eps) in [(1u64, 0.0), (2, 0.1), (3, 0.2)] {
            let nu = if eps == 0.0 {
                NuSequence::ones(rate.window)
            } else {
                NuSequence::power(&rate, eps).unwrap()
            };
            let pm = make_planted_model(&rate, &nu, 0.9, 1.3, (2, 1), 4.0, seed).unwrap();
            let fit = fit_certificate(&pm.system, &pm.projections, &rate, &nu).unwrap();
            let lam = fit.certificate.lambda;
            for t in [-0.8, -0.3, 0.4, 0.9] {
                let beta = t * lam;
                let spec = WeightedNormSpec::abs(beta, munu_core::rates::NormP::One, &rate).unwrap();
                let y: Sequence = rate
                    .window
                    .indices()
                    .map(|n| {
                        let s = (-spec.exponent(n) * rate.log_mu(n) - nu.log_nu(n) + rng.random_range(-2.0..2.0)).exp();
                        DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal) * s)
                    })
                    .collect();
                let b = Boundary::TwoSided;
                let rep = solve_admissibility(&pm.system, &pm.projections, &y, beta, &rate, &nu, &b).unwrap();
                let abs = rep.abs_norms.unwrap();
                let bound = fit.certificate.d * abs.input_norm;
                for (i, n) in rate.window.indices().enumerate() {
                    let xn = DVector::from_vec(rep.solution[i].clone()).norm();
                    let w = if n >= n0 { -beta.abs() } else { beta.abs() };
                    let lhs = (w * rate.log_mu(n)).exp() * xn;
                    worst = worst.max(lhs / bound);
                }
                cases += 1;
            }
        }
    }
    outcome(
        worst <= 1.0 + 1e-6,
        format!("max weighted |x_n| / (D ||y||_1,beta,abs) = {worst:.6} over {cases} solves"),
    )
}

fn criterion_9() -> Outcome {
    let rate = exp_rate(Domain::OneSided, 0, 40);
    let nu = NuSequence::ones(rate.window);
    let mut ok = true;
    let mut lines = Vec::new();
    for (seed, cond) in [(1u64, 1.0), (2, 3.0), (3, 10.0)] {
        let pm = make_planted_model(&rate, &nu, 1.0, 1.0, (1, 1), cond, seed).unwrap();
        let r = s_beta_zero_check(&pm.system, &rate, 0.5, &SplitOptions::default()).unwrap();
        let spec = PlantedSpec {
            exponents: vec![-1.0, -0.25, 1.0],
            similarity_cond: cond,
            vary_similarity: false,
            seed,
        };
        let pm2 = make_planted(&rate, &nu, &spec).unwrap();
        let r2 = s_beta_zero_check(&pm2.system, &rate, 0.5, &SplitOptions::default()).unwrap();
        ok &= r.equal && !r2.equal;
        lines.push(format!("cond {cond}: {} / {}", r.equal, r2.equal));
    }
    outcome(
        ok,
        format!(
            "equal with lambda_s=1 / with an exponent -0.25 planted: {}",
            lines.join(", ")
        ),
    )
}

/// Deterministic digest of a representative slice of the suite.
fn suite_digest() -> String {
    let mut out = Vec::new();
    for seed in 0..12u64 {
        let c = random_case(1000 + seed);
        let sys = &c.model.system;
        let proj = &c.model.projections;
        let b = Boundary::from_projections(sys, proj);
        let rep = solve_admissibility(sys, proj, &c.y, c.beta, &c.rate, &c.nu, &b).unwrap();
        let t = operator_norm_t(sys, proj, &c.rate, &c.nu, c.beta, 6, seed).unwrap();
        out.push(json!({"fit": c.fit.certificate, "solve": rep, "t": t}));
    }
    let rate = exp_rate(Domain::TwoSided, -25, 25);
    let nu = NuSequence::ones(rate.window);
    let pm = make_planted_model(&rate, &nu, 1.0, 1.2, (2, 2), 3.0, 5).unwrap();
    let spec = PerturbationSpec::new(0.05, 0.3, 77);
    let p = make_perturbation(&pm.system, &rate, &nu, &spec, None).unwrap();
    let m = smallness_margin(&pm.system, &pm.projections, &rate, &nu, &spec, Some(&p)).unwrap();
    let r = verify_persistence(
        &pm.system,
        &p.matrices,
        &rate,
        &nu,
        None,
        Some(m),
        &SplitOptions::default(),
    )
    .unwrap();
    out.push(json!({"persistence": r}));
    serde_json::to_string(&out).unwrap()
}

fn criterion_10() -> Outcome {
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(suite_digest)
    };
    let a = run(1);
    let b = run(4);
    let c = run(3);
    outcome(
        a == b && a == c,
        format!(
            "{} bytes of serialized results identical across 1, 4 and 3 threads: {}",
            a.len(),
            a == b && a == c
        ),
    )
}

fn main() {
    let total = Instant::now();
    let cases: Vec<Case> = (0..220).map(random_case).collect();
    let (c3, c4, stats) = criteria_3_4(&cases);
    let (c5, recovered) = criterion_5();
    let c6 = criterion_6(&recovered, &stats);
    let results = [
        ("scalar example dichotomy", criterion_1()),
        ("counterexample divergence", criterion_2()),
        ("oracle equivalence", c3),
        ("admissibility bound", c4),
        ("certificate recovery", c5),
        ("projection and Green bounds", c6),
        ("persistence grid", criterion_7()),
        ("two-sided abs spaces", criterion_8()),
        ("S_beta(0) check", criterion_9()),
        ("determinism", criterion_10()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag} {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {}/{} passed in {:.2} s",
        results.len() - failed,
        results.len(),
        total.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
