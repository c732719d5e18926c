//! Causal generative model engine.
//!
//! A generator is a DAG of structural equations over channel variables, fed
//! by a latent vector. This crate builds and validates such graphs, evaluates
//! them under interventions, estimates influence maps by Monte-Carlo
//! hybridization, clusters elementary influence maps into modules and
//! measures how stable that clustering is.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for the common cases.

pub mod clustering;
pub mod error;
pub mod graph;
pub mod influence;
pub mod interventions;
pub mod io;
pub mod models;
pub mod probe;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{
    build_cgm, CgmGraph, GraphBuilder, LatentSpec, LayerCheck, LayerSel, ModelDescription, NodeSpec, Op, Trace,
    VarId, Vertex,
};
pub use influence::{elementary_influence_maps, individual_influence, influence_map, EimStack, InfluenceMap};
pub use interventions::{counterfactual, hybridize, intervene, Hybrid, Intervention, ModuleSel};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = CgmGraph<f32>;
pub type Graph64 = CgmGraph<f64>;
pub type EimStack32 = EimStack<f32>;
pub type EimStack64 = EimStack<f64>;
