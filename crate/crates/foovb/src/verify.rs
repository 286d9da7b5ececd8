//! Self-check suites: solver residual bounds, update-rule equivalences,
//! stationarity residuals, monotonicity of the uncertainty dynamics, the
//! curvature linkage of the Monte-Carlo estimator, gradient exactness,
//! desk-scale forgetting, sigma non-collapse, runtime linearity,
//! determinism, and the Kronecker vectorized-form equivalences.
//!
//! Each suite pins its tolerances in code and reports residual statistics;
//! `foovb verify` prints them and the acceptance test asserts them.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cli::{execute_run, profile_by_name};
use crate::matequ::{
    quadratic_residual, solve_quadratic_pd, solve_quadratic_psd, symmetrize, SpdMatrix,
    SquareMatrix,
};
use crate::model::{loss_and_grad, Architecture, Batch, LossReduction, NetworkParams};
use crate::posterior::{
    estimate_diagonal, kronecker, sample_noise_mat, sample_noise_vec, seeded_rng,
    transform_diagonal, transform_matrix_variate, update_diagonal, update_full,
    update_matrix_variate, vec_col_major, DiagonalEstimates, DiagonalPosterior, FullEstimates,
    FullPosterior, MatrixVariateEstimates, MatrixVariatePosterior, McBatch,
};
use crate::trainer::{runtime_probe, runtime_probe_sgd};

/// Outcome of one suite: pass/fail plus human-readable statistics lines.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub lines: Vec<String>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        SuiteReport {
            name,
            passed: true,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.passed &= ok;
        self.lines
            .push(format!("{} {}", if ok { "ok  " } else { "FAIL" }, line));
    }

    fn note(&mut self, line: String) {
        self.lines.push(format!("     {line}"));
    }
}

/// All suite names, in execution order.
pub fn suite_names() -> &'static [&'static str] {
    &[
        "solver-pd",
        "solver-psd",
        "diag-full-equiv",
        "stationarity",
        "sigma-monotone",
        "curvature-link",
        "gradcheck",
        "kron-equiv",
        "forgetting",
        "sigma-collapse",
        "runtime",
        "determinism",
    ]
}

/// Runs one suite by name; panics on unknown names (callers validate).
pub fn run_suite(name: &str) -> SuiteReport {
    match name {
        "solver-pd" => suite_solver_pd(),
        "solver-psd" => suite_solver_psd(),
        "diag-full-equiv" => suite_diag_full_equiv(),
        "stationarity" => suite_stationarity(),
        "sigma-monotone" => suite_sigma_monotone(),
        "curvature-link" => suite_curvature_link(),
        "gradcheck" => suite_gradcheck(),
        "kron-equiv" => suite_kron_equiv(),
        "forgetting" => suite_forgetting(),
        "sigma-collapse" => suite_sigma_collapse(),
        "runtime" => suite_runtime(),
        "determinism" => suite_determinism(),
        other => panic!("unknown suite {other}"),
    }
}

fn random_square(n: usize, rng: &mut ChaCha8Rng) -> SquareMatrix {
    SquareMatrix::new(DMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal))).unwrap()
}

fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> SpdMatrix {
    let w = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let g = symmetrize(&(&w * w.transpose())) + DMatrix::identity(n, n) * 0.01;
    SpdMatrix::new(SquareMatrix::new(g).unwrap()).unwrap()
}

/// 1000 random strictly-PD pairs, dims 2..=16:
/// residual of the PD solver stays within 1e-8 * |M|_F, in under 30 s.
fn suite_solver_pd() -> SuiteReport {
    let mut report = SuiteReport::new("solver-pd");
    let started = Instant::now();
    let mut rng = seeded_rng(0x50_11);
    let mut worst: f64 = 0.0;
    let mut failures = 0usize;
    let trials = 1000;
    for round in 0..trials {
        let n = 2 + round % 15;
        let m = random_pd(n, &mut rng);
        let t = random_square(n, &mut rng);
        match solve_quadratic_pd(&m, &t) {
            Ok(x) => {
                let rel = quadratic_residual(&x, &m, &t) / m.as_matrix().norm();
                worst = worst.max(rel);
                if rel > 1e-8 {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    report.check(
        failures == 0,
        format!("{trials} instances, dims 2-16, worst relative residual {worst:.3e} (bound 1e-8)"),
    );
    report.check(
        elapsed < 30.0,
        format!("runtime {elapsed:.2} s (bound 30 s)"),
    );
    report
}

/// 500 PSD pairs including rank-deficient and zero matrices:
/// residual within 1e-7 * (|M|_F + 1), in under 30 s.
fn suite_solver_psd() -> SuiteReport {
    let mut report = SuiteReport::new("solver-psd");
    let started = Instant::now();
    let mut rng = seeded_rng(0x50_22);
    let mut worst: f64 = 0.0;
    let mut failures = 0usize;
    let trials = 500;
    for round in 0..trials {
        let n = 2 + round % 15;
        // cycle ranks 1..=n; every third instance is full rank
        let rank = if round % 3 == 0 { n } else { 1 + round % n };
        let m = if round % 97 == 0 {
            SpdMatrix::new(SquareMatrix::zeros(n)).unwrap()
        } else {
            let w = DMatrix::from_fn(n, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
            SpdMatrix::new(SquareMatrix::new(symmetrize(&(&w * w.transpose()))).unwrap()).unwrap()
        };
        let t = random_square(n, &mut rng);
        match solve_quadratic_psd(&m, &t) {
            Ok(x) => {
                let bound = 1e-7 * (m.as_matrix().norm() + 1.0);
                let res = quadratic_residual(&x, &m, &t);
                worst = worst.max(res / (m.as_matrix().norm() + 1.0));
                if res > bound {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    report.check(
        failures == 0,
        format!(
            "{trials} PSD instances incl. rank-deficient, worst scaled residual {worst:.3e} (bound 1e-7)"
        ),
    );
    report.check(
        elapsed < 30.0,
        format!("runtime {elapsed:.2} s (bound 30 s)"),
    );
    report
}

/// 200 random diagonal instances: the full update restricted to diagonal
/// factors reproduces the scalar update entrywise to 1e-10.
fn suite_diag_full_equiv() -> SuiteReport {
    let mut report = SuiteReport::new("diag-full-equiv");
    let mut rng = seeded_rng(0x50_33);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = 2 + (rng.random::<u32>() % 5) as usize;
        let sigma = sample_noise_vec(d, &mut rng).map(|x| 0.1 + x.abs());
        let mu = sample_noise_vec(d, &mut rng);
        let e1 = sample_noise_vec(d, &mut rng);
        let e2 = sample_noise_vec(d, &mut rng) * 2.0;

        let diag = update_diagonal(
            &DiagonalPosterior::new(mu.clone(), sigma.clone()).unwrap(),
            &DiagonalEstimates {
                e1: e1.clone(),
                e2: e2.clone(),
            },
        )
        .unwrap();
        let full = update_full(
            &FullPosterior::new(mu, DMatrix::from_diagonal(&sigma), usize::MAX).unwrap(),
            &FullEstimates {
                e1,
                e2: DMatrix::from_diagonal(&e2),
            },
        )
        .unwrap();
        for i in 0..d {
            worst = worst.max((full.mu()[i] - diag.mu()[i]).abs());
            worst = worst.max((full.a_factor()[(i, i)] - diag.sigma()[i]).abs());
            for j in 0..d {
                if i != j {
                    worst = worst.max(full.a_factor()[(i, j)].abs());
                }
            }
        }
    }
    report.check(
        worst <= 1e-10,
        format!("200 diagonal instances, worst entrywise deviation {worst:.3e} (bound 1e-10)"),
    );
    report
}

/// First-order stationarity of the returned covariance factors:
/// full case |−X^{-T} + V^{-1}X + E2| <= 1e-6 |V^{-1}| on 200 d=4 instances;
/// matrix-variate analog at the evaluate-at-prior point, tolerance 1e-7.
fn suite_stationarity() -> SuiteReport {
    let mut report = SuiteReport::new("stationarity");
    let mut rng = seeded_rng(0x50_44);
    let mut worst_full: f64 = 0.0;
    for _ in 0..200 {
        let d = 4;
        let a = DMatrix::identity(d, d) + sample_noise_mat(d, d, &mut rng) * 0.2;
        let post = FullPosterior::new(sample_noise_vec(d, &mut rng), a, usize::MAX).unwrap();
        let e2 = sample_noise_mat(d, d, &mut rng) * 0.5;
        let next = update_full(
            &post,
            &FullEstimates {
                e1: sample_noise_vec(d, &mut rng),
                e2: e2.clone(),
            },
        )
        .unwrap();
        let v = post.a_factor() * post.a_factor().transpose();
        let v_inv = v.try_inverse().unwrap();
        let x = next.a_factor().clone();
        let res = -x.clone().try_inverse().unwrap().transpose() + &v_inv * &x + &e2;
        worst_full = worst_full.max(res.norm() / v_inv.norm());
    }
    report.check(
        worst_full <= 1e-6,
        format!(
            "full update: worst scaled residual {worst_full:.3e} (bound 1e-6) on 200 d=4 instances"
        ),
    );

    let mut worst_mv: f64 = 0.0;
    for _ in 0..200 {
        let (d1, d2) = (3, 4);
        let a = DMatrix::identity(d1, d1) + sample_noise_mat(d1, d1, &mut rng) * 0.15;
        let b = DMatrix::identity(d2, d2) + sample_noise_mat(d2, d2, &mut rng) * 0.15;
        let post =
            MatrixVariatePosterior::new(sample_noise_mat(d2, d1, &mut rng) * 0.2, a, b).unwrap();
        let est = MatrixVariateEstimates {
            e1: sample_noise_mat(d2, d1, &mut rng) * 0.3,
            e2: sample_noise_mat(d1, d1, &mut rng) * 0.3,
            e3: sample_noise_mat(d2, d2, &mut rng) * 0.3,
        };
        let next = update_matrix_variate(&post, &est).unwrap();
        for (v_factor, x, e) in [
            (post.a_factor(), next.a_factor(), &est.e2),
            (post.b_factor(), next.b_factor(), &est.e3),
        ] {
            let v = v_factor * v_factor.transpose();
            let v_inv = v.try_inverse().unwrap();
            let res = -x.clone().try_inverse().unwrap().transpose() + &v_inv * x + e;
            worst_mv = worst_mv.max(res.norm() / v_inv.norm());
        }
    }
    report.check(
        worst_mv <= 1e-7,
        format!("matrix-variate update: worst scaled residual {worst_mv:.3e} (bound 1e-7) on 200 instances"),
    );
    report
}

/// Uncertainty dynamics under an exactly quadratic loss m/2 |theta|^2:
/// the expectation signal equals m * sigma, and sigma strictly decreases for
/// 200 consecutive updates (increases with the sign flipped).
fn suite_sigma_monotone() -> SuiteReport {
    let mut report = SuiteReport::new("sigma-monotone");
    for &m in &[0.1, 1.0, 10.0] {
        // independent Monte-Carlo check of the expectation identity at step 0
        let sigma0 = 0.015;
        let mut rng = seeded_rng(0x50_55);
        let post = DiagonalPosterior::new(
            DVector::from_element(1, 0.4),
            DVector::from_element(1, sigma0),
        )
        .unwrap();
        let k = 2_000_000;
        let mut acc = 0.0;
        for _ in 0..k {
            let e = sample_noise_vec(1, &mut rng);
            let theta = transform_diagonal(&post, &e).unwrap();
            acc += m * theta[0] * e[0];
        }
        let mc = acc / k as f64;
        let se = m * (0.4_f64.powi(2) + 2.0 * sigma0 * sigma0).sqrt() / (k as f64).sqrt();
        report.check(
            (mc - m * sigma0).abs() <= 4.0 * se,
            format!(
                "m={m}: MC expectation {mc:.6e} vs m*sigma {:.6e} within 4 se",
                m * sigma0
            ),
        );

        let mut dec_ok = true;
        let mut inc_ok = true;
        let mut post_dec = DiagonalPosterior::new(
            DVector::from_element(2, 0.5),
            DVector::from_element(2, sigma0),
        )
        .unwrap();
        let mut post_inc = post_dec.clone();
        for _ in 0..200 {
            let next = update_diagonal(
                &post_dec,
                &DiagonalEstimates {
                    e1: post_dec.mu() * m,
                    e2: post_dec.sigma() * m,
                },
            )
            .unwrap();
            dec_ok &= (0..2).all(|i| next.sigma()[i] < post_dec.sigma()[i]);
            post_dec = next;

            let next = update_diagonal(
                &post_inc,
                &DiagonalEstimates {
                    e1: post_inc.mu() * -m,
                    e2: post_inc.sigma() * -m,
                },
            )
            .unwrap();
            inc_ok &= (0..2).all(|i| next.sigma()[i] > post_inc.sigma()[i]);
            post_inc = next;
        }
        report.check(
            dec_ok,
            format!("m={m}: sigma strictly decreasing over 200 updates"),
        );
        report.check(
            inc_ok,
            format!("m={m}: sigma strictly increasing with flipped sign"),
        );
    }
    report
}

/// Curvature linkage: for a quadratic loss with known diagonal Hessian H and
/// sigma = 1e-2, the K = 10^4 Monte-Carlo estimate of the second expectation
/// lands within 3 standard errors of H_ii * sigma_i for every coordinate.
fn suite_curvature_link() -> SuiteReport {
    let mut report = SuiteReport::new("curvature-link");
    let d = 8;
    let k = 10_000;
    let mut rng = seeded_rng(0x50_66);
    let hdiag = DVector::from_fn(d, |i, _| 0.5 + 0.6 * i as f64);
    let mu = sample_noise_vec(d, &mut rng) * 0.3;
    let sigma = DVector::from_element(d, 1e-2);
    let post = DiagonalPosterior::new(mu.clone(), sigma.clone()).unwrap();

    let mut eps = Vec::with_capacity(k);
    let mut grads = Vec::with_capacity(k);
    for _ in 0..k {
        let e = sample_noise_vec(d, &mut rng);
        let theta = transform_diagonal(&post, &e).unwrap();
        grads.push(theta.component_mul(&hdiag));
        eps.push(e);
    }
    let est = estimate_diagonal(&McBatch::new(eps, grads).unwrap()).unwrap();

    let mut worst_z: f64 = 0.0;
    let mut all_ok = true;
    for i in 0..d {
        let target = hdiag[i] * sigma[i];
        let se = hdiag[i] * (mu[i] * mu[i] + 2.0 * sigma[i] * sigma[i]).sqrt() / (k as f64).sqrt();
        let z = (est.e2[i] - target).abs() / se;
        worst_z = worst_z.max(z);
        all_ok &= z <= 3.0;
    }
    report.check(
        all_ok,
        format!("K=10^4, d={d}: worst |z| score {worst_z:.2} (bound 3 se per coordinate)"),
    );
    report
}

/// Gradient exactness on a 6-4-3 network against central finite differences.
fn suite_gradcheck() -> SuiteReport {
    let mut report = SuiteReport::new("gradcheck");
    let arch = Architecture::new(vec![6, 4, 3]).unwrap();
    let mut rng = seeded_rng(0x50_77);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (n_in, n_out) in arch.layer_shapes() {
        weights.push(sample_noise_mat(n_out, n_in, &mut rng) * 0.6);
        biases.push(sample_noise_vec(n_out, &mut rng) * 0.1);
    }
    let params = NetworkParams::new(weights, biases).unwrap();
    let inputs = sample_noise_mat(5, 6, &mut rng).map(|x| x.abs().min(1.0));
    let batch = Batch::new(inputs, vec![0, 2, 1, 1, 0]).unwrap();
    let (_, grad) = loss_and_grad(&params, &batch, LossReduction::Mean).unwrap();
    let g = grad.flatten();
    let theta = params.flatten();
    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus[i] += h;
        let mut minus = theta.clone();
        minus[i] -= h;
        let lp = loss_and_grad(
            &NetworkParams::unflatten(&arch, &plus).unwrap(),
            &batch,
            LossReduction::Mean,
        )
        .unwrap()
        .0;
        let lm = loss_and_grad(
            &NetworkParams::unflatten(&arch, &minus).unwrap(),
            &batch,
            LossReduction::Mean,
        )
        .unwrap()
        .0;
        let fd = (lp - lm) / (2.0 * h);
        max_rel = max_rel.max((g[i] - fd).abs() / (g[i].abs() + fd.abs()).max(1e-3));
    }
    report.check(
        max_rel < 1e-5,
        format!("6-4-3 network, central differences h=1e-5: max relative error {max_rel:.3e} (bound 1e-5)"),
    );
    report
}

/// Matrix-form transform and estimate terms against explicit
/// Kronecker-product oracles, 100 instances at dims <= 4x4, tolerance 1e-12.
fn suite_kron_equiv() -> SuiteReport {
    let mut report = SuiteReport::new("kron-equiv");
    let mut rng = seeded_rng(0x50_88);
    let mut worst: f64 = 0.0;
    for round in 0..100 {
        let d1 = 1 + round % 4;
        let d2 = 1 + (round / 4) % 4;
        let a = sample_noise_mat(d1, d1, &mut rng);
        let b = sample_noise_mat(d2, d2, &mut rng);
        let mean = sample_noise_mat(d2, d1, &mut rng);
        let post = MatrixVariatePosterior::new(mean.clone(), a.clone(), b.clone()).unwrap();
        let phi = sample_noise_mat(d2, d1, &mut rng);
        let psi = sample_noise_mat(d2, d1, &mut rng);

        // transform: vec(W - M) = (A kron B) vec(Phi)
        let w = transform_matrix_variate(&post, &phi).unwrap();
        let lhs = vec_col_major(&(&w - &mean));
        let rhs = kronecker(&a, &b) * vec_col_major(&phi);
        worst = worst.max((lhs - rhs).amax());

        // estimate terms: entry (i,j) of the derivative blocks equals
        // vec(Psi)' (Delta_ij kron B) vec(Phi) and vec(Psi)' (A kron Delta_ij) vec(Phi)
        let batch = McBatch::new(vec![phi.clone()], vec![psi.clone()]).unwrap();
        let est = crate::posterior::estimate_matrix_variate(&batch, &post).unwrap();
        let vpsi = vec_col_major(&psi);
        let vphi = vec_col_major(&phi);
        for i in 0..d1 {
            for j in 0..d1 {
                let mut delta = DMatrix::zeros(d1, d1);
                delta[(i, j)] = 1.0;
                let oracle = (vpsi.transpose() * kronecker(&delta, &b) * &vphi)[(0, 0)] / d2 as f64;
                worst = worst.max((est.e2[(i, j)] - oracle).abs());
            }
        }
        for i in 0..d2 {
            for j in 0..d2 {
                let mut delta = DMatrix::zeros(d2, d2);
                delta[(i, j)] = 1.0;
                let oracle = (vpsi.transpose() * kronecker(&a, &delta) * &vphi)[(0, 0)] / d1 as f64;
                worst = worst.max((est.e3[(i, j)] - oracle).abs());
            }
        }

        // mean shift: vec(Sigma2 E1 Sigma1) = (Sigma1 kron Sigma2) vec(E1)
        let sigma1 = &a * a.transpose();
        let sigma2 = &b * b.transpose();
        let shift = &sigma2 * &psi * &sigma1;
        let oracle = kronecker(&sigma1, &sigma2) * vec_col_major(&psi);
        worst = worst.max((vec_col_major(&shift) - oracle).amax());
    }
    report.check(
        worst <= 1e-12,
        format!("100 instances, dims <= 4x4: worst deviation {worst:.3e} (bound 1e-12)"),
    );
    report
}

/// Desk-scale forgetting gap: over 5 seeds, diagonal fixed-point training
/// retains more first-task accuracy after three permuted tasks than the SGD
/// baseline, with a positive mean margin and a stable sign, in under 10 min.
fn suite_forgetting() -> SuiteReport {
    let mut report = SuiteReport::new("forgetting");
    let started = Instant::now();
    let mut margins = Vec::new();
    for s in 0..5u64 {
        let mut cfg = profile_by_name("desk-small").unwrap();
        cfg.seed = 1000 + s;
        cfg.baseline = true;
        match execute_run(&cfg) {
            Ok(artifacts) => {
                let foovb = artifacts.final_record().first_task_acc;
                let sgd = artifacts
                    .baseline_final_record()
                    .map(|r| r.first_task_acc)
                    .unwrap_or(f64::NAN);
                margins.push(foovb - sgd);
                report.note(format!(
                    "seed {}: first-task accuracy {:.4} (fixed-point) vs {:.4} (sgd), margin {:+.4}",
                    cfg.seed,
                    foovb,
                    sgd,
                    foovb - sgd
                ));
            }
            Err(e) => {
                report.check(false, format!("seed {} run failed: {e}", 1000 + s));
                return report;
            }
        }
    }
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    report.check(
        mean > 0.0,
        format!("5-seed mean first-task margin {mean:+.4} (must be positive)"),
    );
    report.check(
        margins.iter().all(|&m| m > 0.0),
        "margin sign stable across all 5 seeds".to_string(),
    );
    let elapsed = started.elapsed().as_secs_f64();
    report.check(
        elapsed < 600.0,
        format!("runtime {elapsed:.1} s (bound 600 s)"),
    );
    report
}

/// Sigma does not collapse: after 200 desk-scale epochs on one task the
/// smallest sigma stays above 1e-4 and the histogram has stabilized (L1
/// change over the last 20% of training below 5% of the weight count).
fn suite_sigma_collapse() -> SuiteReport {
    let mut report = SuiteReport::new("sigma-collapse");
    let mut cfg = profile_by_name("desk-small").unwrap();
    cfg.num_tasks = 1;
    cfg.synth_n = 512;
    cfg.synth_test = 64;
    cfg.batch_size = 128;
    // the cumulative (sum) likelihood weighting drives the posterior deep
    // into convergence within the 200-epoch budget, which is where the
    // histogram freezes
    cfg.loss_reduction = LossReduction::Sum;
    // 200 epochs over 512 examples at batch 128
    let total = 200 * 512 / 128;
    cfg.iters_per_task = total;
    cfg.eval_every = total / 10;
    match execute_run(&cfg) {
        Ok(artifacts) => {
            let final_rec = artifacts.final_record();
            let min_sigma = final_rec.min_sigma.unwrap_or(0.0);
            report.check(
                min_sigma > 1e-4,
                format!("min sigma {min_sigma:.3e} after 200 epochs (bound 1e-4)"),
            );
            let weight_count: u64 = final_rec.sigma_hist.as_ref().unwrap().iter().sum();
            let at80 = artifacts
                .metrics
                .iter()
                .rfind(|r| r.iteration <= (total * 4) / 5)
                .and_then(|r| r.sigma_hist.clone())
                .unwrap();
            let at100 = final_rec.sigma_hist.clone().unwrap();
            let l1: u64 = at80
                .iter()
                .zip(at100.iter())
                .map(|(&a, &b)| a.abs_diff(b))
                .sum();
            // the 40 bins span [0, 2 sigma_init], so the first 10 cover
            // everything strictly below sigma_init / 2: training one task
            // must claim some weights this hard
            let low_mass: u64 = at100.iter().take(10).sum();
            report.check(
                low_mass > 0,
                format!("{low_mass} weights ended below sigma_init/2"),
            );
            report.check(
                (l1 as f64) < 0.05 * weight_count as f64,
                format!(
                    "histogram L1 change over last 20% of training: {l1} of {weight_count} weights (bound 5%)"
                ),
            );
        }
        Err(e) => report.check(false, format!("run failed: {e}")),
    }
    report
}

/// Runtime scales linearly in the Monte-Carlo sample count: monotone medians
/// and an affine fit with R^2 > 0.95 over K in {2,4,8,16,32}.
fn suite_runtime() -> SuiteReport {
    let mut report = SuiteReport::new("runtime");
    let ks = [2usize, 4, 8, 16, 32];
    match (
        runtime_probe(&ks, 100, 10, 7),
        runtime_probe_sgd(100, 10, 7),
    ) {
        (Ok(probe), Ok(sgd)) => {
            for &(k, secs) in &probe.rows {
                report.note(format!(
                    "K = {:>2}: {:.6} s/iter ({:.2}x sgd)",
                    k,
                    secs,
                    secs / sgd
                ));
            }
            report.note(format!("sgd reference: {sgd:.6} s/iter"));
            report.note(
                "typical published ratios (different hardware, reported not asserted): ~3.1x at K=2, ~12x at K=10"
                    .to_string(),
            );
            let monotone = probe.rows.windows(2).all(|w| w[1].1 >= w[0].1);
            report.check(monotone, "median seconds/iter monotone in K".to_string());
            report.check(
                probe.r2 > 0.95,
                format!("affine fit R^2 = {:.4} (bound 0.95)", probe.r2),
            );
        }
        (Err(e), _) | (_, Err(e)) => report.check(false, format!("probe failed: {e}")),
    }
    report
}

/// Two identical-seed desk-small runs produce byte-identical metrics CSV.
fn suite_determinism() -> SuiteReport {
    let mut report = SuiteReport::new("determinism");
    let cfg = profile_by_name("desk-small").unwrap();
    let a = execute_run(&cfg);
    let b = execute_run(&cfg);
    match (a, b) {
        (Ok(a), Ok(b)) => {
            report.check(
                a.metrics_csv == b.metrics_csv,
                format!(
                    "metrics CSV byte-identical across two runs ({} bytes)",
                    a.metrics_csv.len()
                ),
            );
            report.check(
                a.baseline_metrics_csv == b.baseline_metrics_csv,
                "baseline metrics CSV byte-identical".to_string(),
            );
        }
        (Err(e), _) | (_, Err(e)) => report.check(false, format!("run failed: {e}")),
    }
    report
}
