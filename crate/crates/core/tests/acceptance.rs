//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; the process fails if any
//! criterion does.

mod common;

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use common::{corpus, only, Pair, SIGN, STEP_OF_SQUARE, XYRATIO};
use spge_core::analysis::{analyze, AnalysisReport};
use spge_core::density::{elbo_grad_fd, QuadratureConfig, FD_STEP};
use spge_core::estimate::{Estimator, SviConfig};
use spge_core::interp::{normal_pdf, DEFAULT_NAME_BOUND};
use spge_core::lemmas::{
    ad_vs_fd, analyze_checked, check_density_decomposition, check_dependency_soundness, check_execution,
    check_like_scaling, check_value_fn_connection, check_well_formed, moments_agree, value_moments,
};
use spge_core::reparam::{transform, ReparamPlan};
use spge_core::rng::stream;
use spge_core::select::{reparam_smooth_set, select_variables, SelectConfig, SelectionResult};
use spge_core::{parse_program, NameValuation, Program, Property, ThetaValuation};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const PROPS: [Property; 2] = [Property::Differentiability, Property::LocalLipschitz];

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn svi_convergence() -> Outcome {
    let pair = Pair::splitting_normal();
    let cfg = SviConfig {
        eta: 0.05,
        steps: 2000,
        samples: 16,
        seed: 42,
    };
    let theta0 = pair.theta(&[0.0, 0.0]);
    let run = |plan: ReparamPlan| {
        Estimator::new(pair.model.clone(), pair.guide.clone(), plan)
            .and_then(|e| e.svi(&theta0, &cfg))
            .map_err(|e| e.to_string())
    };
    let selective = run(only(&["z1"]))?;
    let full = run(ReparamPlan::default_plan())?;
    let (ts, tf) = (selective.final_theta(), full.final_theta());
    let oracle = elbo_grad_fd(
        &pair.model,
        &pair.guide,
        &pair.theta(&[0.95, 1.52]),
        &QuadratureConfig::default(),
        FD_STEP,
    )
    .map_err(|e| e.to_string())?;
    let d_sel = sup_dist(ts, &[0.95, 1.52]);
    let d_full = sup_dist(tf, &[0.0, 0.0]);
    ensure(
        d_sel <= 0.15 && d_full <= 0.1 && norm(&oracle) < 0.02,
        format!(
            "selective θ_T = ({:.3}, {:.3}), sup-distance {d_sel:.3} ≤ 0.15; full θ_T = ({:.3}, {:.3}), \
             sup-distance to 0 {d_full:.3} ≤ 0.1; |∇L(0.95, 1.52)| = {:.2e} < 0.02",
            ts[0],
            ts[1],
            tf[0],
            tf[1],
            norm(&oracle)
        ),
    )
}

fn gradient_bias() -> Outcome {
    let pair = Pair::splitting_normal();
    let theta = pair.theta(&[1.0, 2.0]);
    let estimate = |plan: ReparamPlan, seed: u64| {
        Estimator::new(pair.model.clone(), pair.guide.clone(), plan)
            .and_then(|e| e.estimate(&theta, 100_000, seed))
            .map_err(|e| e.to_string())
    };
    let biased_target = -1.0 / 3.0;
    let true_target = -1.0 / 3.0 + 1.5 * normal_pdf(-2.0, 0.0, 1.0);
    let full = estimate(ReparamPlan::default_plan(), 1)?;
    let sel = estimate(only(&["z1"]), 2)?;
    let quad = elbo_grad_fd(&pair.model, &pair.guide, &theta, &QuadratureConfig::default(), FD_STEP)
        .map_err(|e| e.to_string())?;
    let z_full = (full.mean[1] - biased_target).abs() / full.se[1];
    let z_sel = (sel.mean[1] - true_target).abs() / sel.se[1];
    let quad_err = (quad[1] - true_target).abs();
    ensure(
        z_full <= 3.0 && z_sel <= 3.0 && quad_err <= 1e-3,
        format!(
            "full plan {:.5} ± {:.5} vs −1/3 ({z_full:.2} SE); selective {:.5} ± {:.5} vs {true_target:.5} \
             ({z_sel:.2} SE); quadrature {:.6}, error {quad_err:.1e} ≤ 1e-3",
            full.mean[1], full.se[1], sel.mean[1], sel.se[1], quad[1]
        ),
    )
}

fn analysis_ground_truth() -> Outcome {
    let pair = Pair::splitting_normal();
    let u = &pair.universe;
    let theta = pair.theta(&[0.0, 0.0]).ids;
    let mut details = Vec::new();
    for prop in PROPS {
        let m = analyze(u, &pair.model_src, prop).map_err(|e| e.to_string())?;
        let g = analyze(u, &pair.guide_src, prop).map_err(|e| e.to_string())?;
        let rm = AnalysisReport::new(u, &m, prop, &theta);
        let rg = AnalysisReport::new(u, &g, prop, &theta);
        if rm.smooth_names != ["z1"] || rg.smooth_names != ["z1", "z2"] || rg.smooth_params != ["θ1", "θ2"] {
            return Err(format!(
                "{}: model names {:?}, guide names {:?}, guide params {:?}",
                prop.short(),
                rm.smooth_names,
                rg.smooth_names,
                rg.smooth_params
            ));
        }
    }
    details.push("splitting normal: model {z1}, guide {z1, z2} ∪ {θ1, θ2}".to_string());

    let c = parse_program(SIGN).unwrap();
    let p = Program::standalone(c.clone(), &[], DEFAULT_NAME_BOUND);
    let u = p.universe();
    let x = u.pvar_id("x").unwrap();
    for prop in PROPS {
        let st = analyze(u, &c, prop).map_err(|e| e.to_string())?;
        for v in ["s", "y"] {
            let id = u.pvar_id(v).unwrap();
            let p_ok = !st.p[id].contains(x) && st.p[id].len() == u.len() - 1;
            let d_ok = st.d[id].iter().collect::<Vec<_>>() == [x];
            if !p_ok || !d_ok {
                return Err(format!("{}: p({v}) or d({v}) wrong", prop.short()));
            }
        }
        if st.v.iter().collect::<Vec<_>>() != [x] {
            return Err(format!("{}: V = {:?}", prop.short(), st.v.vars(u)));
        }
    }
    details.push("sign example: p(s) = p(y) = {x}ᶜ, d = {x}, V = {x}".to_string());
    Ok(details.join("; "))
}

fn selection() -> Outcome {
    let pair = Pair::splitting_normal();
    let r = select_variables(
        &pair.model_src,
        &pair.guide_src,
        &pair.params,
        &ReparamPlan::default_plan(),
        Property::Differentiability,
        &SelectConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let SelectionResult::Plan { plan, report } = r else {
        return Err("selection reported infeasible".into());
    };
    let u = &pair.universe;
    let theta = pair.theta(&[0.0, 0.0]).ids;
    let st = analyze(u, &transform(&pair.guide_src, &plan), Property::Differentiability)
        .map_err(|e| e.to_string())?;
    let k = reparam_smooth_set(u, &st);
    let reparam_ok = theta.iter().all(|&id| k.contains(id));
    ensure(
        report.selected == ["z1"] && report.analysis_calls == 3 && reparam_ok && plan.check_r4_structural(),
        format!(
            "selected {:?} with {} analysis calls; reparameterised guide smooth in θ: {reparam_ok}; \
             constant-output rules: {}",
            report.selected,
            report.analysis_calls,
            plan.check_r4_structural()
        ),
    )
}

fn nonsmooth_operators() -> Outcome {
    let mut details = Vec::new();
    for (label, src) in [("step(x * x)", STEP_OF_SQUARE), ("xyratio(x, x)", XYRATIO)] {
        let c = parse_program(src).unwrap();
        let p = Program::standalone(c.clone(), &[], DEFAULT_NAME_BOUND);
        let u = p.universe();
        let (x, z) = (u.pvar_id("x").unwrap(), u.pvar_id("z").unwrap());
        for prop in PROPS {
            let st = analyze(u, &c, prop).map_err(|e| e.to_string())?;
            if st.p[z].contains(x) {
                return Err(format!("{label} under {}: x ∈ p(z)", prop.short()));
            }
        }
        details.push(format!("{label}: x ∉ p(z) under diff and lip"));
    }
    Ok(details.join("; "))
}

fn random_names(n: usize, rng: &mut impl Rng) -> NameValuation {
    NameValuation((0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect())
}

fn random_theta(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn lemma_suites() -> Outcome {
    let pair = Pair::splitting_normal();
    let u = pair.universe.clone();
    let plans = [only(&["z1"]), only(&["z2"]), ReparamPlan::default_plan()];

    let mut rng = stream(6, "acceptance", 0);
    for i in 0..200 {
        let theta = pair.theta(&random_theta(2, &mut rng));
        let sn = random_names(u.num_names(), &mut rng);
        let plan = &plans[i % plans.len()];
        check_density_decomposition(&pair.guide, &theta, &sn, &plan.rv(&u), 1e-12).map_err(|v| v.to_string())?;
        check_value_fn_connection(&pair.guide, plan, &theta, &sn, 1e-12).map_err(|v| v.to_string())?;
    }

    let theta = pair.theta(&[1.0, 2.0]);
    let slots = [pair.slot("z1"), pair.slot("z2")];
    let original = value_moments(&pair.guide, &theta, &slots, 100_000, 61).map_err(|e| e.to_string())?;
    for (k, plan) in plans.iter().enumerate() {
        let t = Program::new(transform(&pair.guide_src, plan), u.clone()).map_err(|e| e.to_string())?;
        let m = value_moments(&t, &theta, &slots, 100_000, 62 + k as u64).map_err(|e| e.to_string())?;
        if !moments_agree(&original, &m, 4.0) {
            return Err(format!("moments differ under plan {k}: {:?} vs {:?}", original.mean, m.mean));
        }
    }

    let programs = corpus(1, 1000);
    let violations: Vec<String> = programs
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let mut rng = stream(6, "execution", i as u64);
            (0..20)
                .try_for_each(|_| {
                    let s = spge_core::fuzz::random_state(p.universe(), &mut rng);
                    check_execution(p, &s)?;
                    check_like_scaling(p, &s, rng.random_range(0.1..10.0))
                })
                .err()
                .map(|v| format!("program {i}: {v}"))
        })
        .collect();
    ensure(
        violations.is_empty(),
        format!(
            "200 points decomposition and value-function connection at 1e-12; first and second moments of \
             3 plans within 4 SE at 1e5 samples; {} violations over 1000 programs × 20 states{}",
            violations.len(),
            violations.first().map(|v| format!(" ({v})")).unwrap_or_default()
        ),
    )
}

fn well_formedness() -> Outcome {
    let programs = corpus(1, 1000);
    let violations: Vec<String> = programs
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, p)| {
            PROPS.into_iter().filter_map(move |prop| {
                analyze_checked(p.universe(), p, prop)
                    .and_then(|st| check_well_formed(p.universe(), &st))
                    .err()
                    .map(|v| format!("program {i} under {}: {v}", prop.short()))
            })
        })
        .collect();
    ensure(
        violations.is_empty(),
        format!(
            "{} violations over 1000 programs × 2 properties{}",
            violations.len(),
            violations.first().map(|v| format!(" ({v})")).unwrap_or_default()
        ),
    )
}

fn dependency_soundness() -> Outcome {
    let programs = corpus(1, 1000);
    let violations: Vec<String> = programs
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let mut rng = stream(8, "dependency", i as u64);
            analyze_checked(p.universe(), p, Property::Differentiability)
                .and_then(|st| check_dependency_soundness(p, &st, 20, &mut rng))
                .err()
                .map(|v| format!("program {i}: {v}"))
        })
        .collect();
    ensure(
        violations.is_empty(),
        format!(
            "{} violations over 1000 programs × 20 state pairs{}",
            violations.len(),
            violations.first().map(|v| format!(" ({v})")).unwrap_or_default()
        ),
    )
}

fn ad_vs_finite_differences() -> Outcome {
    let split = Pair::splitting_normal();
    let chain = Pair::chain();
    let reparam = |p: &Pair, plan: &ReparamPlan| {
        Program::new(transform(&p.guide_src, plan), p.universe.clone()).unwrap()
    };
    let split_full = reparam(&split, &ReparamPlan::default_plan());
    let split_sel = reparam(&split, &only(&["z1"]));
    let chain_full = reparam(&chain, &ReparamPlan::default_plan());
    let mut rng = stream(9, "acceptance", 0);
    let mut worst = 0.0f64;
    let mut points = 0;
    while points < 50 {
        let theta = split.theta(&random_theta(2, &mut rng));
        let sn = random_names(split.universe.num_names(), &mut rng);
        // keep clear of the model's discontinuity at x2 = 0
        let x2_full = theta.values[1] + sn.0[split.slot("z2")];
        let x2_sel = sn.0[split.slot("z2")];
        if x2_full.abs() < 1e-2 || x2_sel.abs() < 1e-2 {
            continue;
        }
        let cases: [(&Program, Option<&Program>, &ThetaValuation, &NameValuation); 4] = [
            (&split.guide, None, &theta, &sn),
            (&split.model, Some(&split_full), &theta, &sn),
            (&split.model, Some(&split_sel), &theta, &sn),
            (&chain.model, Some(&chain_full), &chain.theta(&theta.values), &sn),
        ];
        for (dens, values, th, sn) in cases {
            let sn = NameValuation(sn.0[..dens.universe().num_names()].to_vec());
            let err = ad_vs_fd(dens, values, th, &sn, 1e-5).map_err(|e| e.to_string())?;
            worst = worst.max(err);
        }
        points += 1;
    }
    ensure(
        worst <= 1e-5,
        format!("largest relative error {worst:.2e} ≤ 1e-5 over 50 points × 4 composite densities"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("SVI on the splitting normal converges only with the selective plan", svi_convergence),
        ("full reparameterisation is biased, the selective estimator is not", gradient_bias),
        ("analysis ground truth", analysis_ground_truth),
        ("variable selection", selection),
        ("nonsmooth operators are detected", nonsmooth_operators),
        ("semantic lemma suites", lemma_suites),
        ("well-formedness of analysis results", well_formedness),
        ("dependency soundness", dependency_soundness),
        ("dual-number gradients agree with finite differences", ad_vs_finite_differences),
    ];
    let mut failed = 0;
    for (i, (label, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("acceptance {} PASS {label}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("acceptance {} FAIL {label}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
