use alloc::vec::Vec;

use super::constraints::{build_gradient_constraints, build_weight_constraints, ConstraintSet};
use super::fc::{fc_input_gradient, recover_fc_input, recover_fc_input_averaged};
use super::maps::{conv_input_gradient, ContributionMaps};
use super::solve::{solve_layer_input, stacked_rank, DEFAULT_RANK_EPS};
use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::model::{ArchitectureSpec, GradientBundle, LayerSpec, ParameterSet};
use crate::tensor::{ConvGeometry, Tensor};

/// Order of unknowns in every solved layer input.
pub const UNKNOWN_ORDERING: &str = "channel,row,col";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackOptions {
    /// Rank threshold relative to the largest matrix entry.
    pub rank_eps: f64,
    /// Stack weight constraints (where the activation is invertible) on top
    /// of gradient constraints.
    pub use_weight_constraints: bool,
    /// Combine every usable dense node instead of only the largest one.
    pub average_fc_estimates: bool,
    /// Reconstructed activation outputs within this fraction of the largest
    /// magnitude of a domain boundary are snapped onto it (ReLU zeros come
    /// back from a linear solve as `±1e-15`, not `0`).
    pub boundary_snap: f64,
}

impl Default for AttackOptions {
    fn default() -> Self {
        Self {
            rank_eps: DEFAULT_RANK_EPS,
            use_weight_constraints: true,
            average_fc_estimates: false,
            boundary_snap: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerDiagnostics {
    /// Index of the conv layer in the architecture.
    pub layer: usize,
    pub n_weight_constraints: usize,
    pub n_gradient_constraints: usize,
    pub n_unknowns: usize,
    pub matrix_rank: usize,
    pub residual_norm: f64,
}

/// Reconstructed input of one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSolveState {
    pub input: Tensor,
    /// Loss gradient w.r.t. `input`.
    pub input_grad: Tensor,
    /// Which entries of `input` were determined. All true after a successful solve.
    pub known_mask: Vec<bool>,
    pub diagnostics: LayerDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    /// Recovered network input, shaped like the architecture's input.
    pub input: Tensor,
    /// Dense node whose bias gradient was divided by (`None` when averaging).
    pub fc_node: Option<usize>,
    pub fc_input: Tensor,
    pub fc_input_grad: Tensor,
    /// One entry per conv layer, from the last conv layer to the first.
    pub layers: Vec<LayerSolveState>,
}

impl ReconstructionReport {
    pub fn unknown_ordering(&self) -> &'static str {
        UNKNOWN_ORDERING
    }
}

fn snap_to_domain(act: Activation, x: &Tensor, rel: f64) -> Tensor {
    let tol = rel * x.max_abs();
    x.map(|v| match act {
        Activation::Relu if v.abs() <= tol => 0.0,
        Activation::SoftPlus if v < 0.0 && v >= -tol => 0.0,
        Activation::Sigmoid if v < 0.0 && v >= -tol => 0.0,
        Activation::Sigmoid if v > 1.0 && v <= 1.0 + tol => 1.0,
        Activation::Tanh if v.abs() > 1.0 && v.abs() <= 1.0 + tol => v.signum(),
        Activation::Elu(a) if v < -a && v >= -a - tol => -a,
        _ => v,
    })
}

struct LayerSystem {
    maps: ContributionMaps,
    d_out: Tensor,
    gradient: ConstraintSet,
    weight: ConstraintSet,
}

/// Walks the conv blocks from the top of the network down, carrying the
/// current activation output and its loss gradient.
struct Walker<'a> {
    arch: &'a ArchitectureSpec,
    params: &'a ParameterSet,
    grads: &'a GradientBundle,
    opts: AttackOptions,
    x: Tensor,
    dx: Tensor,
}

impl<'a> Walker<'a> {
    fn start(
        arch: &'a ArchitectureSpec,
        params: &'a ParameterSet,
        grads: &'a GradientBundle,
        opts: AttackOptions,
    ) -> Result<(Self, Option<usize>)> {
        params.validate(arch)?;
        grads.validate(arch)?;
        let (dense, _, _) = arch.dense_layer();
        let g = grads.layer(arch, dense).expect("dense gradients");
        let dw = &g.weights;
        let db = g.bias.as_ref().expect("dense bias gradient");
        let (x, node) = if opts.average_fc_estimates {
            (recover_fc_input_averaged(dw, db)?, None)
        } else {
            let (x, m) = recover_fc_input(dw, db)?;
            (x, Some(m))
        };
        let w = &params.layer(arch, dense).expect("dense params").weights;
        let dx = fc_input_gradient(db, w)?;
        Ok((
            Self {
                arch,
                params,
                grads,
                opts,
                x,
                dx,
            },
            node,
        ))
    }

    fn system(&mut self, layer: usize, geom: &ConvGeometry, act: Activation) -> Result<LayerSystem> {
        let out_shape = geom.output_shape();
        let x = core::mem::replace(&mut self.x, Tensor::zeros(&[0])).reshape(&out_shape)?;
        self.x = snap_to_domain(act, &x, self.opts.boundary_snap);
        self.dx = core::mem::replace(&mut self.dx, Tensor::zeros(&[0])).reshape(&out_shape)?;

        let maps = ContributionMaps::new(geom);
        let d_out = act.propagate_gradient(&self.dx, &self.x)?;
        let g = self.grads.layer(self.arch, layer).expect("conv gradients");
        let gradient = build_gradient_constraints(&d_out, &g.weights, &maps)?;
        let weight = if self.opts.use_weight_constraints {
            let p = self.params.layer(self.arch, layer).expect("conv params");
            let (pre, known) = act.invert_partial(&self.x)?;
            build_weight_constraints(&pre, &known, &p.weights, p.bias.as_ref(), &maps)?
        } else {
            ConstraintSet::empty(geom.input_len())
        };
        Ok(LayerSystem {
            maps,
            d_out,
            gradient,
            weight,
        })
    }

    fn step(&mut self, layer: usize, geom: &ConvGeometry, act: Activation) -> Result<LayerSolveState> {
        let sys = self.system(layer, geom, act)?;
        let n = geom.input_len();
        let sol = solve_layer_input(&sys.gradient, &sys.weight, n, self.opts.rank_eps).map_err(|e| match e {
            Error::RankDeficient { rank, unknowns, .. } => Error::RankDeficient {
                layer: Some(layer),
                rank,
                unknowns,
            },
            other => other,
        })?;
        let w = &self.params.layer(self.arch, layer).expect("conv params").weights;
        let input = Tensor::new(geom.input_shape().to_vec(), sol.x)?;
        let input_grad = conv_input_gradient(&sys.d_out, w, &sys.maps)?;
        self.x = input.clone();
        self.dx = input_grad.clone();
        Ok(LayerSolveState {
            input,
            input_grad,
            known_mask: alloc::vec![true; n],
            diagnostics: LayerDiagnostics {
                layer,
                n_weight_constraints: sys.weight.len(),
                n_gradient_constraints: sys.gradient.len(),
                n_unknowns: n,
                matrix_rank: sol.rank,
                residual_norm: sol.residual,
            },
        })
    }
}

fn conv_blocks_top_down(arch: &ArchitectureSpec) -> Vec<(usize, ConvGeometry, Activation)> {
    let mut blocks: Vec<_> = arch.conv_blocks().collect();
    blocks.reverse();
    blocks
}

/// Reconstructs the network input from one step's gradients.
pub fn run_attack(
    arch: &ArchitectureSpec,
    params: &ParameterSet,
    grads: &GradientBundle,
    opts: &AttackOptions,
) -> Result<ReconstructionReport> {
    let (mut walker, fc_node) = Walker::start(arch, params, grads, *opts)?;
    let fc_input = walker.x.clone();
    let fc_input_grad = walker.dx.clone();
    let mut layers = Vec::new();
    for (layer, geom, act) in conv_blocks_top_down(arch) {
        layers.push(walker.step(layer, &geom, act)?);
    }
    let input = walker.x.reshape(&arch.input_shape())?;
    Ok(ReconstructionReport {
        input,
        fc_node,
        fc_input,
        fc_input_grad,
        layers,
    })
}

/// Size and numerical rank of the stacked system assembled for one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmpiricalSystem {
    pub layer: usize,
    pub n_weight_constraints: usize,
    pub n_gradient_constraints: usize,
    pub n_unknowns: usize,
    pub rank: usize,
}

/// Assembles the stacked system of conv layer `layer` from real gradients
/// and measures its rank. Every conv layer above it is reconstructed first;
/// if one of them is rank deficient its error is returned.
pub fn empirical_system(
    arch: &ArchitectureSpec,
    params: &ParameterSet,
    grads: &GradientBundle,
    layer: usize,
    opts: &AttackOptions,
) -> Result<EmpiricalSystem> {
    let len = arch.layers().len();
    match arch.layers().get(layer) {
        None => return Err(Error::LayerOutOfRange { index: layer, len }),
        Some(LayerSpec::Conv { .. }) => {}
        Some(_) => return Err(Error::NotConvolution(layer)),
    }
    let (mut walker, _) = Walker::start(arch, params, grads, *opts)?;
    for (l, geom, act) in conv_blocks_top_down(arch) {
        if l == layer {
            let sys = walker.system(l, &geom, act)?;
            let n = geom.input_len();
            return Ok(EmpiricalSystem {
                layer,
                n_weight_constraints: sys.weight.len(),
                n_gradient_constraints: sys.gradient.len(),
                n_unknowns: n,
                rank: stacked_rank(&sys.gradient, &sys.weight, n, opts.rank_eps)?,
            });
        }
        walker.step(l, &geom, act)?;
    }
    unreachable!("conv layer {layer} is part of the walk")
}

/// Numerical rank of the stacked system of conv layer `layer`.
pub fn empirical_rank(
    arch: &ArchitectureSpec,
    params: &ParameterSet,
    grads: &GradientBundle,
    layer: usize,
    opts: &AttackOptions,
) -> Result<usize> {
    empirical_system(arch, params, grads, layer, opts).map(|s| s.rank)
}
