//! Data-free feasibility audit.
//!
//! For a conv layer with input `[N,H,H]`, `F` filters of size `K`, stride
//! `S` and padding `P`, the unknowns number `N*H^2`, the gradient constraints
//! `K^2*N*F` (one per weight entry) and the weight constraints at most
//! `F*outH^2` (one per output element, available only where the activation
//! can be inverted). Counts are made by enumeration of the actual weights
//! and outputs, so they equal the row counts the attack assembles.

use alloc::vec::Vec;

use crate::activation::Activation;
use crate::attack::{empirical_system, AttackOptions, EmpiricalSystem};
use crate::error::Error;
use crate::model::{ArchitectureSpec, GradientBundle, ParameterSet};
use crate::tensor::ConvGeometry;

pub use crate::attack::empirical_rank;

/// Footnote carried by every audit report.
pub const COUNTING_NOTE: &str = "|A| counts every conv output element (F*outH^2) and |B| every \
weight entry (K^2*N*F); the short closed forms F*outH and K^2*F undercount both and are not used.";

/// How much of a layer's pre-activation can be read back from its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invertibility {
    Full,
    /// Some elements only, depending on the data (ReLU zeros).
    Partial,
    None,
}

impl From<Activation> for Invertibility {
    fn from(act: Activation) -> Self {
        if act.is_invertible() {
            Self::Full
        } else {
            Self::Partial
        }
    }
}

/// Inclusive bounds on a weight-constraint count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintRange {
    pub min: usize,
    pub max: usize,
}

impl ConstraintRange {
    pub fn exact(n: usize) -> Self {
        Self { min: n, max: n }
    }

    pub fn is_exact(&self) -> bool {
        self.min == self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Vulnerable,
    Safe,
    Undetermined,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Vulnerable => "vulnerable",
            Self::Safe => "safe",
            Self::Undetermined => "undetermined",
        }
    }
}

impl core::fmt::Display for Verdict {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn count_gradient_constraints(geom: &ConvGeometry) -> usize {
    geom.weight_len()
}

pub fn count_weight_constraints(geom: &ConvGeometry, inv: Invertibility) -> ConstraintRange {
    let all = geom.output_len();
    match inv {
        Invertibility::Full => ConstraintRange::exact(all),
        Invertibility::Partial => ConstraintRange { min: 0, max: all },
        Invertibility::None => ConstraintRange::exact(0),
    }
}

/// Smallest filter count at which gradient constraints alone match the
/// unknowns: `ceil(N*H^2 / (K^2*N))`.
pub fn min_filters_gradient_only(geom: &ConvGeometry) -> usize {
    let per_filter = geom.kernel * geom.kernel * geom.in_channels;
    geom.input_len().div_ceil(per_filter)
}

/// Verdict from counts alone: the worst case takes the fewest weight
/// constraints, the best case the most.
pub fn counting_verdict(n_unknowns: usize, weight: ConstraintRange, gradient: usize) -> Verdict {
    if gradient + weight.min >= n_unknowns {
        Verdict::Vulnerable
    } else if gradient + weight.max < n_unknowns {
        Verdict::Safe
    } else {
        Verdict::Undetermined
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAudit {
    pub layer: usize,
    pub geometry: ConvGeometry,
    pub activation: Activation,
    pub out_size: usize,
    pub n_unknowns: usize,
    pub weight_constraints: ConstraintRange,
    pub gradient_constraints: usize,
    pub min_filters_gradient_only: usize,
    pub verdict: Verdict,
    /// Filled in when the layer's system was assembled from real gradients.
    pub empirical: Option<EmpiricalSystem>,
}

impl LayerAudit {
    pub fn new(layer: usize, geom: ConvGeometry, act: Activation) -> Self {
        let weight = count_weight_constraints(&geom, act.into());
        let gradient = count_gradient_constraints(&geom);
        let n = geom.input_len();
        Self {
            layer,
            geometry: geom,
            activation: act,
            out_size: geom.out_size(),
            n_unknowns: n,
            weight_constraints: weight,
            gradient_constraints: gradient,
            min_filters_gradient_only: min_filters_gradient_only(&geom),
            verdict: counting_verdict(n, weight, gradient),
            empirical: None,
        }
    }

    pub fn empirical_rank(&self) -> Option<usize> {
        self.empirical.map(|e| e.rank)
    }

    /// Records a measured system. Full rank makes the layer vulnerable;
    /// anything less makes a counting "vulnerable" undetermined.
    pub fn with_empirical(mut self, sys: EmpiricalSystem) -> Self {
        self.verdict = if sys.rank >= self.n_unknowns {
            Verdict::Vulnerable
        } else if self.verdict == Verdict::Safe {
            Verdict::Safe
        } else {
            Verdict::Undetermined
        };
        self.empirical = Some(sys);
        self
    }

    /// Does the filter count alone (no weight constraints) cover the unknowns?
    pub fn gradient_rows_suffice(&self) -> bool {
        self.geometry.filters >= self.min_filters_gradient_only
    }
}

/// Counting audit of every conv layer, in network order.
pub fn audit_architecture(arch: &ArchitectureSpec) -> Vec<LayerAudit> {
    arch.conv_blocks().map(|(l, g, a)| LayerAudit::new(l, g, a)).collect()
}

/// Counting audit refined by assembling each layer's system from real
/// gradients. A layer whose system could not be built (a layer above it is
/// rank deficient, or the dense layer has no usable node) keeps its
/// counting verdict and no empirical data.
pub fn audit_with_gradients(
    arch: &ArchitectureSpec,
    params: &ParameterSet,
    grads: &GradientBundle,
    opts: &AttackOptions,
) -> Result<Vec<LayerAudit>, Error> {
    params.validate(arch)?;
    grads.validate(arch)?;
    Ok(audit_architecture(arch)
        .into_iter()
        .map(|a| match empirical_system(arch, params, grads, a.layer, opts) {
            Ok(sys) => a.with_empirical(sys),
            Err(_) => a,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(n: usize, h: usize, f: usize, k: usize, s: usize, p: usize) -> ConvGeometry {
        ConvGeometry::new(n, h, f, k, s, p).unwrap()
    }

    #[test]
    fn gradient_counts() {
        assert_eq!(count_gradient_constraints(&geom(1, 32, 12, 5, 1, 2)), 300);
        assert_eq!(count_gradient_constraints(&geom(3, 8, 4, 3, 1, 1)), 108);
        assert_eq!(count_gradient_constraints(&geom(1, 1, 1, 1, 1, 0)), 1);
    }

    #[test]
    fn weight_counts() {
        let g = geom(3, 32, 6, 5, 1, 0);
        assert_eq!(g.out_size(), 28);
        assert_eq!(count_weight_constraints(&g, Activation::Sigmoid.into()), ConstraintRange::exact(4704));
        assert_eq!(count_weight_constraints(&g, Invertibility::None), ConstraintRange::exact(0));
        assert_eq!(
            count_weight_constraints(&g, Activation::Relu.into()),
            ConstraintRange { min: 0, max: 4704 }
        );
    }

    #[test]
    fn verdicts_from_counts() {
        // 1 filter of 2x2 on 3x3: 4 gradient rows, 4 outputs, 9 unknowns
        let g = geom(1, 3, 1, 2, 1, 0);
        assert_eq!(LayerAudit::new(0, g, Activation::Relu).verdict, Verdict::Safe);
        assert_eq!(LayerAudit::new(0, g, Activation::Tanh).verdict, Verdict::Safe);
        // 3 filters: 12 rows cover 9 unknowns even without weight rows
        let g = geom(1, 3, 3, 2, 1, 0);
        assert_eq!(LayerAudit::new(0, g, Activation::Relu).verdict, Verdict::Vulnerable);
        // 2 filters: 8 gradient rows, up to 8 weight rows
        let g = geom(1, 3, 2, 2, 1, 0);
        assert_eq!(LayerAudit::new(0, g, Activation::Relu).verdict, Verdict::Undetermined);
        assert_eq!(LayerAudit::new(0, g, Activation::Sigmoid).verdict, Verdict::Vulnerable);
    }

    #[test]
    fn min_filters() {
        assert_eq!(min_filters_gradient_only(&geom(1, 3, 1, 2, 1, 0)), 3);
        // 3*32*32 / (25*3) = 40.96
        assert_eq!(min_filters_gradient_only(&geom(3, 32, 1, 5, 1, 2)), 41);
        assert_eq!(min_filters_gradient_only(&geom(16, 4, 1, 3, 1, 1)), 2);
    }

    #[test]
    fn empirical_downgrade_and_upgrade() {
        let g = geom(1, 3, 3, 2, 1, 0);
        let sys = |rank| EmpiricalSystem {
            layer: 0,
            n_weight_constraints: 0,
            n_gradient_constraints: 12,
            n_unknowns: 9,
            rank,
        };
        let a = LayerAudit::new(0, g, Activation::Relu);
        assert_eq!(a.clone().with_empirical(sys(8)).verdict, Verdict::Undetermined);
        assert_eq!(a.with_empirical(sys(9)).verdict, Verdict::Vulnerable);
        let b = LayerAudit::new(0, geom(1, 3, 2, 2, 1, 0), Activation::Relu);
        assert_eq!(b.with_empirical(sys(9)).verdict, Verdict::Vulnerable);
    }
}
