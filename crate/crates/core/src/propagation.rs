//! Radio propagation: log-distance path loss, Shannon capacity and the
//! pairwise channel-capacity matrix of a node layout.
//!
//! Received power follows a pure path-loss law,
//! `P(d) = P_tx - 10·ε·log10(d)` dBm, and the capacity of a link of length
//! `d` is `C(d) = B·log2(1 + γ(d)/B)` with `γ(d) = 10^((P(d) - N0)/10)`.
//! `N0` is a noise power spectral density in dBm/Hz, so `γ(d)/B` is the
//! dimensionless signal-to-noise ratio over the whole band.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transmitter and channel parameters shared by every node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    /// Transmit power in dBm.
    pub tx_power_dbm: f64,
    /// Bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Noise power spectral density in dBm/Hz.
    pub noise_density_dbm_hz: f64,
    /// Path-loss index ε.
    pub path_loss_index: f64,
    /// Rate back-off ΔC in bit/s absorbing fading uncertainty.
    pub fading_margin_bps: f64,
}

impl RadioParams {
    pub fn new(tx_power_dbm: f64, bandwidth_hz: f64, noise_density_dbm_hz: f64, path_loss_index: f64) -> Result<Self> {
        let params = RadioParams {
            tx_power_dbm,
            bandwidth_hz,
            noise_density_dbm_hz,
            path_loss_index,
            fading_margin_bps: 0.0,
        };
        params.validate()?;
        Ok(params)
    }

    /// 0 dBm, 20 MHz, -172 dBm/Hz, no fading margin.
    pub fn reference(path_loss_index: f64) -> Self {
        RadioParams {
            tx_power_dbm: 0.0,
            bandwidth_hz: 20e6,
            noise_density_dbm_hz: -172.0,
            path_loss_index,
            fading_margin_bps: 0.0,
        }
    }

    pub fn with_fading_margin(mut self, fading_margin_bps: f64) -> Self {
        self.fading_margin_bps = fading_margin_bps;
        self
    }

    pub fn with_path_loss_index(mut self, path_loss_index: f64) -> Self {
        self.path_loss_index = path_loss_index;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("tx_power_dbm", self.tx_power_dbm),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_density_dbm_hz", self.noise_density_dbm_hz),
            ("path_loss_index", self.path_loss_index),
            ("fading_margin_bps", self.fading_margin_bps),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(Error::invalid("radio parameters", format!("{name} must be finite")));
            }
        }
        if self.bandwidth_hz <= 0.0 {
            return Err(Error::invalid("radio parameters", "bandwidth_hz must be > 0"));
        }
        if self.path_loss_index <= 0.0 {
            return Err(Error::invalid("radio parameters", "path_loss_index must be > 0"));
        }
        if self.fading_margin_bps < 0.0 {
            return Err(Error::invalid("radio parameters", "fading_margin_bps must be >= 0"));
        }
        Ok(())
    }
}

fn check_distance(distance: f64) -> Result<()> {
    if distance > 0.0 && distance.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "distance must be positive and finite, got {distance}"
        )))
    }
}

/// Received power in dBm at `distance` meters.
pub fn received_power(params: &RadioParams, distance: f64) -> Result<f64> {
    check_distance(distance)?;
    Ok(params.tx_power_dbm - 10.0 * params.path_loss_index * distance.log10())
}

/// Shannon capacity in bit/s of a link of length `distance` meters.
pub fn channel_capacity(params: &RadioParams, distance: f64) -> Result<f64> {
    let power = received_power(params, distance)?;
    let snr_total = 10f64.powf((power - params.noise_density_dbm_hz) / 10.0);
    Ok(params.bandwidth_hz * (1.0 + snr_total / params.bandwidth_hz).log2())
}

/// Largest rate that is still received reliably once the fading margin is
/// subtracted; zero when the margin swallows the whole capacity.
pub fn effective_capacity(params: &RadioParams, distance: f64) -> Result<f64> {
    let capacity = channel_capacity(params, distance)?;
    Ok((capacity - params.fading_margin_bps).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    /// East coordinate in meters.
    pub x: f64,
    /// North coordinate in meters.
    pub y: f64,
}

/// Node positions in the plane. Ids are `0..n` and index the matrices
/// produced downstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeLayout {
    nodes: Vec<Node>,
}

impl NodeLayout {
    /// Builds a layout from coordinates; node `i` gets id `i`.
    pub fn from_coords(coords: &[(f64, f64)]) -> Result<Self> {
        let nodes = coords
            .iter()
            .enumerate()
            .map(|(id, &(x, y))| Node { id, x, y })
            .collect();
        Self::from_nodes(nodes)
    }

    /// Accepts nodes in any order; ids must be exactly `0..n`.
    pub fn from_nodes(mut nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("layout", "at least one node is required"));
        }
        nodes.sort_by_key(|n| n.id);
        for (expected, node) in nodes.iter().enumerate() {
            if node.id != expected {
                return Err(Error::invalid(
                    "layout",
                    format!(
                        "node ids must be unique and contiguous from 0; expected id {expected}, found {}",
                        node.id
                    ),
                ));
            }
            if !node.x.is_finite() || !node.y.is_finite() {
                return Err(Error::invalid(
                    "layout",
                    format!("node {} has non-finite coordinates", node.id),
                ));
            }
        }
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                let (a, b) = (&nodes[i], &nodes[j]);
                if a.x == b.x && a.y == b.y {
                    return Err(Error::Domain(format!(
                        "nodes {i} and {j} share coordinates ({}, {})",
                        a.x, a.y
                    )));
                }
            }
        }
        Ok(NodeLayout { nodes })
    }

    /// Uniformly random positions in a `side × side` square.
    pub fn random(n: usize, side: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random::<f64>() * side, rng.random::<f64>() * side))
            .collect();
        Self::from_coords(&coords)
    }

    /// Six nodes in a 200 m × 200 m area. The reference experiment only
    /// shows its placement graphically; these coordinates are a stand-in
    /// with a similar spread, picked so that the optimal topology at each
    /// λ target in `0.1..=0.9` is the same for ε = 3, 4, 5 and 6.
    pub fn six_node_reference() -> Self {
        Self::from_coords(&SIX_NODE_REFERENCE).expect("reference layout is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.nodes[i], &self.nodes[j]);
        (a.x - b.x).hypot(a.y - b.y)
    }

    /// Broadcast order of the TDM schedule: west to east, ties by id.
    pub fn tdm_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&a, &b| self.nodes[a].x.total_cmp(&self.nodes[b].x).then(a.cmp(&b)));
        order
    }
}

const SIX_NODE_REFERENCE: [(f64, f64); 6] = [
    (8.0, 136.0),
    (196.0, 139.0),
    (107.0, 128.0),
    (138.0, 160.0),
    (103.0, 169.0),
    (54.0, 15.0),
];

/// Pairwise capacities `C_ij` (bit/s) from node `i` to node `j`. The
/// diagonal holds `f64::INFINITY`: a node always has its own model.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    capacity: DMatrix<f64>,
    fading_margin_bps: f64,
}

impl ChannelMatrix {
    /// Wraps an explicit capacity matrix. Off-diagonal entries must be
    /// finite and positive; the diagonal is overwritten with the self
    /// sentinel.
    pub fn from_capacities(mut capacity: DMatrix<f64>, fading_margin_bps: f64) -> Result<Self> {
        if capacity.nrows() != capacity.ncols() || capacity.nrows() == 0 {
            return Err(Error::Contract(format!(
                "capacity matrix must be square and non-empty, got {}x{}",
                capacity.nrows(),
                capacity.ncols()
            )));
        }
        if !(fading_margin_bps >= 0.0 && fading_margin_bps.is_finite()) {
            return Err(Error::invalid(
                "channel matrix",
                "fading margin must be finite and >= 0",
            ));
        }
        let n = capacity.nrows();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    capacity[(i, j)] = f64::INFINITY;
                } else if !(capacity[(i, j)] > 0.0 && capacity[(i, j)].is_finite()) {
                    return Err(Error::invalid(
                        "channel matrix",
                        format!("C[{i}][{j}] = {} is not finite and positive", capacity[(i, j)]),
                    ));
                }
            }
        }
        Ok(ChannelMatrix {
            capacity,
            fading_margin_bps,
        })
    }

    pub fn len(&self) -> usize {
        self.capacity.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.capacity.nrows() == 0
    }

    pub fn fading_margin_bps(&self) -> f64 {
        self.fading_margin_bps
    }

    /// Raw capacity; infinite on the diagonal.
    pub fn capacity(&self, i: usize, j: usize) -> f64 {
        self.capacity[(i, j)]
    }

    /// Capacity minus the fading margin, floored at zero; infinite on the
    /// diagonal.
    pub fn effective(&self, i: usize, j: usize) -> f64 {
        if i == j {
            f64::INFINITY
        } else {
            (self.capacity[(i, j)] - self.fading_margin_bps).max(0.0)
        }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.capacity
    }
}

pub fn build_channel_matrix(layout: &NodeLayout, params: &RadioParams) -> Result<ChannelMatrix> {
    params.validate()?;
    let n = layout.len();
    let mut capacity = DMatrix::from_element(n, n, f64::INFINITY);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                capacity[(i, j)] = channel_capacity(params, layout.distance(i, j))?;
            }
        }
    }
    Ok(ChannelMatrix {
        capacity,
        fading_margin_bps: params.fading_margin_bps,
    })
}
