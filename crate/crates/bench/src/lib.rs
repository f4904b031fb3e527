//! Shared inputs for the benchmarks.

use nalgebra::DMatrix;
use pkb::{simulate, KernelSpec, OutcomeType, SimDesign, SimModel};

/// A simulated dataset with `n` samples and 20 pathways.
pub fn dataset(model: SimModel, outcome: OutcomeType, n: usize) -> pkb::sim::SimulatedData {
    let design = SimDesign {
        n_samples: n,
        ..SimDesign::new(model, outcome).with_seed(42)
    };
    simulate(&design).expect("valid design")
}

/// Training kernel matrices of every pathway of `sim`.
pub fn kernels(sim: &pkb::sim::SimulatedData, spec: &KernelSpec) -> Vec<DMatrix<f64>> {
    let cov = &sim.dataset.covariates;
    sim.pathways
        .iter()
        .map(|p| pkb::kernel::kernel_matrix(cov, cov, p, spec).expect("kernel").values)
        .collect()
}
