//! Readable twins of sequential deep learning models.
//!
//! The pipeline turns per-layer activation artifacts into a rough set flow
//! graph and mines its most confident prediction paths:
//!
//! 1. [`trace`]: read and validate an activation trace (or synthesize one);
//! 2. [`clustering`]: agglomerative clustering of every filter / dense layer;
//! 3. [`sis`]: the sequential information system of cluster symbols and labels;
//! 4. [`rsfg`]: the flow graph with certainty, covering and strength;
//! 5. [`pathmining`]: t-norm / t-conorm path scoring, exact search and an EA;
//! 6. [`report`]: DOT, JSON and CSV artifacts.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to `f64`
//! or `f32`.

pub mod clustering;
pub mod pathmining;
pub mod report;
pub mod rsfg;
pub mod scalar;
pub mod sis;
pub mod trace;

pub use clustering::{agglomerate, cluster_layer, cluster_layer_with, cut, ClusterAssignment, ClusterOptions, Linkage};
pub use pathmining::{best_path_exact, ea_mine, edge_confidence, enumerate_paths, path_aggregate, Aggregator, EaConfig};
pub use rsfg::{build_rsfg, verify_conservation};
pub use scalar::Scalar;
pub use sis::{build_sis, export_sis_csv, SequentialInformationSystem};
pub use trace::{generate_synthetic_trace, load_trace, ActivationTrace, LayerKind, LayerSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Trace(#[from] trace::TraceError),
    #[error(transparent)]
    Cluster(#[from] clustering::ClusterError),
    #[error(transparent)]
    Sis(#[from] sis::SisError),
    #[error(transparent)]
    Graph(#[from] rsfg::GraphError),
    #[error(transparent)]
    Mining(#[from] pathmining::MiningError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
}

pub type Dendrogram = clustering::Dendrogram<f64>;
pub type LayerClustering = clustering::LayerClustering<f64>;
pub type ClusteringSet = clustering::ClusteringSet<f64>;
pub type FlowGraph = rsfg::FlowGraph<f64>;
pub type FlowEdge = rsfg::FlowEdge<f64>;
pub type PredictionPath = pathmining::PredictionPath<f64>;
pub type MiningResult = pathmining::MiningResult<f64>;

pub type DendrogramF32 = clustering::Dendrogram<f32>;
pub type LayerClusteringF32 = clustering::LayerClustering<f32>;
pub type ClusteringSetF32 = clustering::ClusteringSet<f32>;
pub type FlowGraphF32 = rsfg::FlowGraph<f32>;
pub type FlowEdgeF32 = rsfg::FlowEdge<f32>;
pub type PredictionPathF32 = pathmining::PredictionPath<f32>;
pub type MiningResultF32 = pathmining::MiningResult<f32>;
