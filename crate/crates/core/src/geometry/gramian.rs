use nalgebra::DMatrix;

use crate::cmdp::TabularCmdp;
use crate::error::Result;
use crate::geometry::barrier::BarrierGenerator;
use crate::geometry::divergence::DivergenceBudget;
use crate::geometry::local::LocalModel;
use crate::geometry::softmax::SoftmaxParams;

/// `G_K = E_{d_theta}[grad log pi grad log pi^T]` for tabular softmax.
pub fn fisher_gramian(cmdp: &TabularCmdp, theta: &SoftmaxParams) -> Result<DMatrix<f64>> {
    Ok(LocalModel::exact(cmdp, &theta.policy())?.fisher())
}

/// `G_C = G_K + sum_i beta_i phi''(b_i - V_{c_i}) grad V_{c_i} grad V_{c_i}^T`.
pub fn constrained_gramian(
    cmdp: &TabularCmdp,
    theta: &SoftmaxParams,
    gen: BarrierGenerator,
    budget: &DivergenceBudget,
) -> Result<DMatrix<f64>> {
    LocalModel::exact(cmdp, &theta.policy())?.constrained_gramian(gen, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_random_cmdp, sample_safe_init};
    use crate::error::Error;

    #[test]
    fn zero_beta_gives_fisher() {
        let m = make_random_cmdp(3, 3, 1, 2).unwrap();
        let th = sample_safe_init(&m, 0).unwrap();
        let b = DivergenceBudget::broadcast(0.01, 0.0, 1).unwrap();
        assert_eq!(
            constrained_gramian(&m, &th, BarrierGenerator::LogBarrier, &b).unwrap(),
            fisher_gramian(&m, &th).unwrap()
        );
    }

    #[test]
    fn symmetric_psd() {
        for seed in 0..10 {
            let m = make_random_cmdp(4, 3, 1, seed).unwrap();
            let th = sample_safe_init(&m, seed).unwrap();
            let b = DivergenceBudget::broadcast(0.01, 1.0, 1).unwrap();
            for gen in [BarrierGenerator::LogBarrier, BarrierGenerator::Entropy] {
                let g = constrained_gramian(&m, &th, gen, &b).unwrap();
                assert!((&g - g.transpose()).amax() < 1e-12);
                let eig = g.symmetric_eigenvalues();
                assert!(eig.min() >= -1e-10);
            }
        }
    }

    #[test]
    fn unsafe_policy_is_rejected() {
        let m = make_random_cmdp(3, 2, 1, 6).unwrap();
        let th = crate::envs::sample_unsafe_init(&m, 0).unwrap();
        let b = DivergenceBudget::broadcast(0.01, 1.0, 1).unwrap();
        assert!(matches!(
            constrained_gramian(&m, &th, BarrierGenerator::LogBarrier, &b),
            Err(Error::UnsafePolicy { .. })
        ));
    }
}
