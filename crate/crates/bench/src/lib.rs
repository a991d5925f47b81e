//! Shared fixture for the benchmarks in `benches/`.

use tafa_core::dataset::{generate_cube, CostModel};
use tafa_core::eval::{Experiment, SearchParams};
use tafa_core::policy::PolicyState;
use tafa_core::{PolicyBundle, TafaError};

pub struct Fixture {
    pub exp: Experiment,
    pub bundle: PolicyBundle,
    /// States visited by the bundle's policy on the first test rows.
    pub states: Vec<PolicyState>,
}

/// A CUBE experiment with a searched 16-template library.
pub fn fixture(rows: usize, seed: u64) -> Result<Fixture, TafaError> {
    let data = generate_cube(rows, 0.1, seed)?;
    let mut exp = Experiment::prepare(&data, &CostModel::uniform(20, 1.0), 0.2, seed)?;
    let params = SearchParams {
        templates: 16,
        candidates: 400,
        rounds: 1,
        drop_probability: 0.5,
    };
    let (library, _) = exp.search(&exp.search_config(&params, 0.04, 1))?;
    let bundle = exp.bundle("bench", library, 10)?;
    let policy = bundle.policy(None, None)?;
    let mut states = Vec::new();
    for i in 0..exp.test.n_rows().min(50) {
        let row = exp.test.features.row(i);
        let trace = policy.rollout(row, None)?;
        let mut s = PolicyState::initial(trace.acquired[0], row[trace.acquired[0]]);
        states.push(s.clone());
        for &f in &trace.acquired[1..] {
            s.observe(f, row[f]);
            states.push(s.clone());
        }
    }
    drop(policy);
    Ok(Fixture { exp, bundle, states })
}
