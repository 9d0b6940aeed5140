#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use spge_core::fuzz::{gen_program, universe_for, FuzzConfig};
use spge_core::interp::DEFAULT_NAME_BOUND;
use spge_core::reparam::ReparamPlan;
use spge_core::rng::stream;
use spge_core::syntax::ProgramFile;
use spge_core::{parse_program_file, Command, Program, ThetaValuation, Universe};

pub const SPLIT_MODEL: &str = include_str!("../../../../programs/splitting_normal_model.ppl");
pub const SPLIT_GUIDE: &str = include_str!("../../../../programs/splitting_normal_guide.ppl");
pub const CHAIN_MODEL: &str = include_str!("../../../../programs/gaussian_chain_model.ppl");
pub const CHAIN_GUIDE: &str = include_str!("../../../../programs/gaussian_chain_guide.ppl");
pub const SIGN: &str = include_str!("../../../../programs/sign.ppl");
pub const STEP_OF_SQUARE: &str = include_str!("../../../../programs/step_of_square.ppl");
pub const XYRATIO: &str = include_str!("../../../../programs/xyratio.ppl");

/// A model and guide compiled over a shared universe.
pub struct Pair {
    pub universe: Arc<Universe>,
    pub model: Program,
    pub guide: Program,
    pub params: Vec<Arc<str>>,
    pub model_src: Command,
    pub guide_src: Command,
}

impl Pair {
    pub fn load(model: &str, guide: &str) -> Pair {
        let m: ProgramFile = parse_program_file(model).unwrap();
        let g: ProgramFile = parse_program_file(guide).unwrap();
        let u = Arc::new(Universe::for_programs(&[&m.body, &g.body], &g.params, DEFAULT_NAME_BOUND));
        Pair {
            model: Program::new(m.body.clone(), u.clone()).unwrap(),
            guide: Program::new(g.body.clone(), u.clone()).unwrap(),
            universe: u,
            params: g.params,
            model_src: m.body,
            guide_src: g.body,
        }
    }

    pub fn splitting_normal() -> Pair {
        Pair::load(SPLIT_MODEL, SPLIT_GUIDE)
    }

    pub fn chain() -> Pair {
        Pair::load(CHAIN_MODEL, CHAIN_GUIDE)
    }

    pub fn theta(&self, values: &[f64]) -> ThetaValuation {
        ThetaValuation::new(&self.universe, &self.params, values).unwrap()
    }

    pub fn slot(&self, string: &str) -> usize {
        self.universe.name_slot(self.universe.string_id(string).unwrap(), 0)
    }
}

pub fn only(strings: &[&str]) -> ReparamPlan {
    let s: BTreeSet<Arc<str>> = strings.iter().map(|s| Arc::from(*s)).collect();
    ReparamPlan::default_plan().restrict(&s)
}

/// Seeded corpus of generated programs with their universes.
pub fn corpus(seed: u64, n: usize) -> Vec<Program> {
    let cfg = FuzzConfig::default();
    (0..n as u64)
        .map(|i| {
            let mut rng = stream(seed, "corpus", i);
            let c = gen_program(&cfg, &mut rng);
            let u = Arc::new(universe_for(&c, &cfg, 3));
            Program::new(c, u).unwrap().with_budget(100_000)
        })
        .collect()
}
