//! Interventional models, unit-level counterfactuals and hybridization.
//!
//! Interventions replace the structural assignments of selected channels with
//! constants. The intervened model is an overlay on the base graph: weights
//! and all other equations are shared.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::graph::{Assignments, CgmGraph, LayerCheck, LayerSel, Trace, VarId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A subset of one layer's variables, addressed by position in the layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleSel {
    pub layer: LayerSel,
    pub channels: Vec<usize>,
}

impl ModuleSel {
    pub fn new(layer: LayerSel, channels: Vec<usize>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &c in &channels {
            if c >= layer.variables.len() {
                return Err(Error::Validation(format!(
                    "channel {c} outside layer `{}` of {} variables",
                    layer.name,
                    layer.variables.len()
                )));
            }
            if !seen.insert(c) {
                return Err(Error::Validation(format!("channel {c} listed twice")));
            }
        }
        Ok(Self { layer, channels })
    }

    pub fn whole_layer(layer: LayerSel) -> Self {
        let channels = (0..layer.variables.len()).collect();
        Self { layer, channels }
    }

    pub fn vars(&self) -> Vec<VarId> {
        self.channels.iter().map(|&c| self.layer.variables[c]).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Constant assignments `{V_e := v0_e}` for every variable of a module.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervention<T> {
    pub target: ModuleSel,
    /// Flattened `[H, W]` map per targeted variable, in `target` order.
    pub values: Vec<Vec<T>>,
}

impl<T: Scalar> Intervention<T> {
    pub fn new(target: ModuleSel, values: Vec<Vec<T>>) -> Self {
        Self { target, values }
    }

    /// Values the module takes in the unintervened pass at `z`.
    pub fn recorded(g: &CgmGraph<T>, target: ModuleSel, z: &[T]) -> Result<Self> {
        let trace = g.trace(z)?;
        Ok(Self::from_trace(&trace, target))
    }

    pub fn from_trace(trace: &Trace<T>, target: ModuleSel) -> Self {
        let values = target.vars().iter().map(|&v| trace.variable(v).to_vec()).collect();
        Self { target, values }
    }

    pub fn validate(&self, g: &CgmGraph<T>) -> Result<()> {
        let vars = self.target.vars();
        g.check_vars(&vars)?;
        if vars.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "{} targeted variables but {} values",
                vars.len(),
                self.values.len()
            )));
        }
        for (v, val) in vars.iter().zip(&self.values) {
            let [_, h, w] = g.node_shape(v.node);
            if val.len() != h * w {
                return Err(Error::Dimension(format!(
                    "value for {} has {} entries, variable is {h}x{w}",
                    g.var_name(*v),
                    val.len()
                )));
            }
        }
        Ok(())
    }

    pub fn assignments(&self) -> Assignments<'_, T> {
        let mut a = Assignments::new();
        for (v, val) in self.target.vars().into_iter().zip(&self.values) {
            a.set(v, val);
        }
        a
    }
}

/// The interventional model `M_{v0}`: the base graph with the targeted
/// variables' incoming edges removed and their values fixed.
#[derive(Debug, Clone)]
pub struct InterventionalModel<'g, T> {
    base: &'g CgmGraph<T>,
    intervention: Intervention<T>,
}

impl<'g, T: Scalar> InterventionalModel<'g, T> {
    pub fn base(&self) -> &CgmGraph<T> {
        self.base
    }

    pub fn intervention(&self) -> &Intervention<T> {
        &self.intervention
    }

    pub fn evaluate(&self, z: &[T]) -> Result<Tensor<T>> {
        self.base.evaluate_with(z, &self.intervention.assignments())
    }

    pub fn trace(&self, z: &[T]) -> Result<Trace<T>> {
        self.base.trace_with(z, &self.intervention.assignments())
    }

    pub fn latent_ancestors(&self, vars: &[VarId]) -> Result<BTreeSet<usize>> {
        self.base.latent_ancestors_cut(vars, &self.intervention.target.vars())
    }

    /// Latents that still have a directed path to the output.
    pub fn output_latent_ancestors(&self) -> Result<BTreeSet<usize>> {
        self.base.output_latent_ancestors(&self.intervention.target.vars())
    }
}

pub fn intervene<T: Scalar>(g: &CgmGraph<T>, iv: Intervention<T>) -> Result<InterventionalModel<'_, T>> {
    iv.validate(g)?;
    Ok(InterventionalModel { base: g, intervention: iv })
}

/// Unit-level counterfactual `Y_{v0}(z)`.
pub fn counterfactual<T: Scalar>(g: &CgmGraph<T>, iv: &Intervention<T>, z: &[T]) -> Result<Tensor<T>> {
    iv.validate(g)?;
    g.evaluate_with(z, &iv.assignments())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hybrid<T> {
    pub hybrid: Tensor<T>,
    pub orig1: Tensor<T>,
    pub orig2: Tensor<T>,
}

/// Module-level hybridization of `z1` by `z2`: the output at `z1` with the
/// module's values replaced by those recorded while generating from `z2`.
pub fn hybridize<T: Scalar>(g: &CgmGraph<T>, module: &ModuleSel, z1: &[T], z2: &[T]) -> Result<Hybrid<T>> {
    match g.is_layer(&module.layer.variables)? {
        LayerCheck::Yes => {}
        other => {
            return Err(Error::Validation(format!(
                "`{}` is not a verified layer: {other}",
                module.layer.name
            )))
        }
    }
    hybridize_unchecked(g, module, z1, z2)
}

/// [`hybridize`] without re-verifying the layer.
pub fn hybridize_unchecked<T: Scalar>(
    g: &CgmGraph<T>,
    module: &ModuleSel,
    z1: &[T],
    z2: &[T],
) -> Result<Hybrid<T>> {
    let t1 = g.trace(z1)?;
    let t2 = g.trace(z2)?;
    let iv = Intervention::from_trace(&t2, module.clone());
    let hybrid = g.evaluate_from_trace(&t1, &iv.assignments())?;
    let out = g.output_node();
    let [c, h, w] = g.output_shape();
    let orig1 = t1.node_value(out).clone().reshape(vec![c, h, w])?;
    let orig2 = t2.node_value(out).clone().reshape(vec![c, h, w])?;
    Ok(Hybrid { hybrid, orig1, orig2 })
}

/// Output after transforming latent coordinate `k` alone.
pub fn apply_latent_transform<T: Scalar>(
    g: &CgmGraph<T>,
    k: usize,
    f: impl Fn(T) -> T,
    z: &[T],
) -> Result<Tensor<T>> {
    if k >= g.latent_dim() {
        return Err(Error::LatentCount(format!("latent index {k} >= {}", g.latent_dim())));
    }
    if z.len() != g.latent_dim() {
        return Err(Error::LatentCount(format!("got {} latent values, model has {}", z.len(), g.latent_dim())));
    }
    let mut moved = z.to_vec();
    moved[k] = f(z[k]);
    let (lo, hi) = g.latent().intervals[k];
    let v = moved[k].to_f64_lossy();
    if !(lo..=hi).contains(&v) {
        log::warn!("transform maps z[{k}] = {} outside [{lo}, {hi}]; clamping", z[k]);
    }
    g.evaluate(&moved)
}
