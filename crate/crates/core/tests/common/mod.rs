#![allow(dead_code)]

use kinetic_chaos::config::Config;
use kinetic_chaos::experiments::ExperimentPlan;

/// A preset with extra `key = value` lines applied on top.
pub fn plan(preset: &str, extra: &str) -> ExperimentPlan {
    let mut c = Config::from_str_checked(preset).unwrap();
    c.merge_str(extra).unwrap();
    c.plan().unwrap()
}

pub const SAMPLING: &str = include_str!("../../../../configs/sampling.conf");
pub const MODERATE: &str = include_str!("../../../../configs/moderate.conf");

pub const SMALL_SAMPLING: &str = "
experiment.n_values = 2^6..2^9
experiment.replicas = 8
";

pub const SMALL_MODERATE: &str = "
grid.nv = 64
pde.nx = 64
pde.dt = 0.01
sim.dt = 0.01
sim.substeps = 1
sim.dt_bias = false
experiment.n_values = 2^6..2^9
experiment.replicas = 8
experiment.times = 0.1,0.2
model.horizon = 0.2
";
