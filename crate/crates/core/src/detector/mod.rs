//! Toy grid-cell detector used as the end-to-end vehicle for OA-Mix and OA-Loss.
//!
//! Images are split into a `grid x grid` lattice. Each cell gets a hand-made
//! descriptor ([`features`]), a class label from box overlap ([`labels`]) and
//! is classified by a small MLP ([`net`]). Detections are connected groups of
//! same-class cells ([`detect`]).

pub mod detect;
pub mod features;
pub mod labels;
pub mod net;
pub mod synth;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use detect::{detect, evaluate, group_cells, penultimate_by_class, Detection, MapResult};
pub use features::FeatureExtractor;
pub use labels::assign_labels;
pub use net::{forward, DetectorParams, Dims, Forward};
pub use synth::{generate_scene, generate_splits, SynthConfig};
pub use train::{
    batch_loss, plan_contrastive, train, train_step, CellView, ContrastivePlan, EpochLog, LossBreakdown, Mode,
    PairedBatch, PooledRegion, Sgd, TrainConfig, TrainLog,
};

/// A trained detector: feature extractor, weights and the grid they assume.
/// Serialised as `params.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detector {
    pub dims: Dims,
    pub classes: Vec<String>,
    pub image_size: usize,
    pub grid: usize,
    pub features: FeatureExtractor,
    pub params: DetectorParams,
}

impl Detector {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn cell_size(&self) -> usize {
        self.image_size / self.grid
    }

    pub fn check(&self) -> Result<()> {
        self.features.check()?;
        self.params.check()?;
        if self.params.dims() != self.dims {
            return Err(Error::DimMismatch(format!(
                "dims header {:?} does not match weights {:?}",
                self.dims,
                self.params.dims()
            )));
        }
        if self.dims.outputs != self.classes.len() + 1 || self.features.dim != self.dims.input {
            return Err(Error::DimMismatch("class count or feature width disagrees with dims".into()));
        }
        if self.grid == 0 || self.image_size % self.grid != 0 || self.features.grid != self.grid {
            return Err(Error::DimMismatch("grid does not divide the image size".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.into())),
            Err(e) => return Err(e.into()),
        };
        let det: Detector = serde_json::from_str(&text)
            .map_err(|e| Error::MalformedJson { path: path.into(), message: e.to_string() })?;
        det.check()?;
        Ok(det)
    }
}
