//! Analytic stand-ins for the process harness. They make campaigns cheap and
//! exactly reproducible, which is what the determinism and end-to-end
//! checks rely on.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{CandidateRunner, RunOutcome};
use crate::error::Error;
use crate::metrics::MeasuredObjectives;
use crate::space::{EnvMap, Genotype, ParameterSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockFunction {
    /// ZDT1 over the normalized genes.
    Zdt1,
    /// `(mean(u²), mean((1-u)²))` over the normalized genes.
    Bowl,
}

impl FromStr for MockFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "zdt1" => Ok(MockFunction::Zdt1),
            "bowl" => Ok(MockFunction::Bowl),
            other => Err(Error::Config(format!("unknown mock function `{other}`"))),
        }
    }
}

/// ZDT1 on coordinates in [0, 1]: f1 = x0, f2 = g(1 - sqrt(f1/g)).
pub fn zdt1(x: &[f64]) -> (f64, f64) {
    let f1 = x[0];
    let g = if x.len() > 1 {
        1.0 + 9.0 * x[1..].iter().sum::<f64>() / (x.len() - 1) as f64
    } else {
        1.0
    };
    (f1, g * (1.0 - (f1 / g).sqrt()))
}

impl MockFunction {
    pub fn eval(self, normalized: &[f64]) -> (f64, f64) {
        match self {
            MockFunction::Zdt1 => zdt1(normalized),
            MockFunction::Bowl => {
                let n = normalized.len() as f64;
                let f1 = normalized.iter().map(|u| u * u).sum::<f64>() / n;
                let f2 = normalized.iter().map(|u| (1.0 - u) * (1.0 - u)).sum::<f64>() / n;
                (f1, f2)
            }
        }
    }
}

/// Maps each gene linearly onto [0, 1] using its encoding bounds.
pub fn normalize(space: &ParameterSpace, g: &Genotype) -> Vec<f64> {
    space
        .specs
        .iter()
        .zip(&g.0)
        .map(|(s, &v)| {
            let (lo, hi) = s.gene_bounds();
            if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                0.0
            }
        })
        .collect()
}

fn objectives(f1: f64, f2: f64) -> MeasuredObjectives {
    MeasuredObjectives {
        peak_heap_bytes: f1,
        avg_heap_bytes: f1,
        free_rate: 0.0,
        wallclock_seconds: f2,
        instructions: None,
    }
}

/// Evaluates a [`MockFunction`]; the first objective is reported as peak
/// heap, the second as wallclock.
#[derive(Clone, Debug)]
pub struct MockRunner {
    pub function: MockFunction,
    pub space: ParameterSpace,
}

impl MockRunner {
    pub fn new(function: MockFunction, space: ParameterSpace) -> Self {
        MockRunner { function, space }
    }
}

impl CandidateRunner for MockRunner {
    fn workload_identity(&self) -> String {
        format!("mock:{:?}", self.function)
    }

    fn run(&self, _env: &EnvMap, genotype: &Genotype, _seed: u64, _deadline: Instant) -> RunOutcome {
        let (f1, f2) = self.function.eval(&normalize(&self.space, genotype));
        RunOutcome::Ok(objectives(f1, f2))
    }

    fn records_eval_time(&self) -> bool {
        false
    }
}

/// Wraps a closure `(genotype, seed) -> outcome` as a runner.
pub struct FnRunner<F>(pub F);

impl<F> CandidateRunner for FnRunner<F>
where
    F: Fn(&Genotype, u64) -> RunOutcome + Sync,
{
    fn workload_identity(&self) -> String {
        "closure".into()
    }

    fn run(&self, _env: &EnvMap, genotype: &Genotype, seed: u64, _deadline: Instant) -> RunOutcome {
        (self.0)(genotype, seed)
    }

    fn records_eval_time(&self) -> bool {
        false
    }
}
