//! KNN feature graphs, graph convolutions and the graph convolution block.

pub mod aggregate;
mod block;
mod knn;

pub use block::{effective_graph_size, DynConv, Gcb};
pub use knn::{build_knn_graph, relative_position, NeighborGraph};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Node-update rule used inside the graph convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum GraphConvVariant {
    /// `W [x_i ; max_j (x_j - x_i)]`
    #[default]
    MaxRelative,
    /// `max_j W [x_i ; x_j - x_i]`
    Edge,
    /// `W2 [x_i ; max_j W1 x_j]`
    Sage,
    /// `W ((1 + eps) x_i + sum_j x_j)`
    Gin,
}

impl GraphConvVariant {
    pub const ALL: [GraphConvVariant; 4] = [
        GraphConvVariant::Gin,
        GraphConvVariant::MaxRelative,
        GraphConvVariant::Sage,
        GraphConvVariant::Edge,
    ];

    pub fn id(self) -> &'static str {
        match self {
            GraphConvVariant::MaxRelative => "mr",
            GraphConvVariant::Edge => "edge",
            GraphConvVariant::Sage => "sage",
            GraphConvVariant::Gin => "gin",
        }
    }
}

impl fmt::Display for GraphConvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for GraphConvVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "mr" | "max-relative" | "maxrelative" => Ok(GraphConvVariant::MaxRelative),
            "edge" | "edgeconv" => Ok(GraphConvVariant::Edge),
            "sage" | "graphsage" => Ok(GraphConvVariant::Sage),
            "gin" => Ok(GraphConvVariant::Gin),
            other => Err(Error::InvalidArgument(format!(
                "unknown graph convolution variant '{other}' (expected mr, edge, sage or gin)"
            ))),
        }
    }
}
