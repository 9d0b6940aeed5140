mod common;

use std::sync::Arc;

use proptest::prelude::*;

use spge_core::analysis::{abstract_exec, pre_analyze, PreAnalysis};
use spge_core::fuzz::{gen_program, random_state, universe_for, FuzzConfig};
use spge_core::interp::create_name_index;
use spge_core::lemmas::{check_execution, check_like_scaling};
use spge_core::reparam::{transform, ReparamPlan};
use spge_core::rng::stream;
use spge_core::syntax::{DistExpr, Expr, Lambda};
use spge_core::{parse_program, pretty, Command, Program, Property};

fn program(seed: u64) -> Command {
    gen_program(&FuzzConfig::default(), &mut stream(seed, "properties", 0))
}

/// The command with every sample's distribution and lambda blanked out.
fn skeleton(c: &Command) -> Command {
    match c {
        Command::Seq(cs) => Command::Seq(cs.iter().map(skeleton).collect()),
        Command::If(b, c1, c2) => Command::If(b.clone(), Box::new(skeleton(c1)), Box::new(skeleton(c2))),
        Command::While(b, body) => Command::While(b.clone(), Box::new(skeleton(body))),
        Command::Sample { target, name, .. } => Command::Sample {
            target: target.clone(),
            name: name.clone(),
            dist: DistExpr::normal(Expr::Const(0.0), Expr::Const(1.0)),
            lambda: Lambda::identity(),
        },
        other => other.clone(),
    }
}

fn strings(c: &Command) -> Vec<Arc<str>> {
    c.name_strings().into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pretty_printing_round_trips(seed in any::<u64>()) {
        let c = program(seed);
        let text = pretty(&c);
        prop_assert_eq!(parse_program(&text).unwrap(), c, "{}", text);
    }

    #[test]
    fn analysis_is_well_formed(seed in any::<u64>()) {
        let c = program(seed);
        let u = universe_for(&c, &FuzzConfig::default(), 3);
        for prop in [Property::Differentiability, Property::LocalLipschitz] {
            let st = abstract_exec(&u, &c, prop, &pre_analyze(&c)).unwrap();
            prop_assert!(st.check_well_formed(&u).is_ok());
        }
    }

    #[test]
    fn interval_refinement_only_adds_smoothness(seed in any::<u64>()) {
        let c = program(seed);
        let u = universe_for(&c, &FuzzConfig::default(), 3);
        for prop in [Property::Differentiability, Property::LocalLipschitz] {
            let coarse = abstract_exec(&u, &c, prop, &PreAnalysis::trivial(&c)).unwrap();
            let refined = abstract_exec(&u, &c, prop, &pre_analyze(&c)).unwrap();
            for v in 0..u.len() {
                prop_assert!(coarse.p[v].is_subset(&refined.p[v]), "p({}) shrank", u.var(v));
            }
        }
    }

    #[test]
    fn transform_keeps_the_skeleton(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let c = program(seed);
        let all = strings(&c);
        prop_assert_eq!(transform(&c, &ReparamPlan::empty()), c.clone());
        let full = transform(&c, &ReparamPlan::default_plan());
        prop_assert_eq!(skeleton(&full), skeleton(&c));
        if !all.is_empty() {
            let one = all[pick.index(all.len())].clone();
            let plan = ReparamPlan::default_plan().restrict(&[one].into_iter().collect());
            prop_assert_eq!(skeleton(&transform(&c, &plan)), skeleton(&c));
        }
    }

    #[test]
    fn execution_lemmas_hold(seed in any::<u64>(), r in 0.01f64..100.0) {
        let c = program(seed);
        let u = Arc::new(universe_for(&c, &FuzzConfig::default(), 3));
        let p = Program::new(c, u.clone()).unwrap().with_budget(100_000);
        let mut rng = stream(seed, "states", 0);
        for _ in 0..5 {
            let s = random_state(&u, &mut rng);
            prop_assert!(check_execution(&p, &s).is_ok());
            let scaled = check_like_scaling(&p, &s, r);
            prop_assert!(scaled.is_ok(), "{:?}", scaled);
        }
    }

    #[test]
    fn name_indices_are_clamped(r in prop::num::f64::ANY, n in 1usize..64) {
        let i = create_name_index(r, n);
        prop_assert!(i < n);
        if r.is_finite() && r >= 0.0 && r < n as f64 {
            prop_assert_eq!(i, r.floor() as usize);
        }
    }
}
