//! Temporal proximal step: flow-aligned fusion of a five-frame window into a
//! structure estimate, followed by mask-gated detail compensation.

mod flow;
mod fusion;

pub use flow::{
    estimate_flow, estimate_occlusion, photometric_l1, read_flo, refine_flow, warp, write_flo,
    FlowConfig, FlowField,
};
pub use fusion::{
    align_window, detail_compensation, inter_prox, noise_mask, structure_estimate,
    structure_from_aligned, temporal_consistency_loss, InterConfig, InterProx, InterResidual,
};

/// Per-pixel (or per-sample) weights in `[0, 1]`.
///
/// Single-channel masks broadcast over the channels of the frame they gate.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    /// Temperature of the soft noise gate that produced the mask, if any.
    pub omega: Option<f64>,
}

impl MaskMap {
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        let channels = values.len() / (width * height);
        Self { width, height, channels, values, omega: None }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self::from_values(width, height, vec![1.0; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::from_values(width, height, vec![0.0; width * height])
    }

    /// Weight for sample `i` of a frame with `n` pixels per plane.
    #[inline]
    pub fn at(&self, i: usize, n: usize) -> f64 {
        if self.channels == 1 {
            self.values[i % n]
        } else {
            self.values[i]
        }
    }

    /// Elementwise product; the result has the larger channel count.
    pub fn product(&self, other: &MaskMap) -> MaskMap {
        let n = self.width * self.height;
        let len = self.values.len().max(other.values.len());
        let values = (0..len).map(|i| self.at(i, n) * other.at(i, n)).collect();
        MaskMap::from_values(self.width, self.height, values)
    }
}
