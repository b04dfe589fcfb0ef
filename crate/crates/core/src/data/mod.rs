//! Video records, dataset files, synthetic generation, and assembly of the
//! graph inputs the model consumes.

mod io;
pub mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use io::{load_dataset, load_meta, save_dataset, DataFormat};
pub use synth::{synth_generate, SynthClass, SynthSpec};

use crate::error::{Error, Result};
use crate::graphs::{build_back_graph, build_front_graph, build_similarity_graph, canonical_order, AffinityTransforms};
use crate::linalg::Matrix;
use crate::model::VideoGraphInput;
use crate::regions::{FeatureVolume, RegionProposal};
pub use crate::train::Label;
use crate::train::TrainSample;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    #[default]
    Single,
    Multi,
}

/// One video: its proposals over all frames, an optional whole-video
/// feature, and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub proposals: Vec<RegionProposal>,
    pub global_feature: Option<Vec<f64>>,
    pub label: Label,
    /// Dense features the proposals were pooled from, when available.
    /// Not persisted by the dataset writers.
    pub volume: Option<FeatureVolume>,
}

impl VideoRecord {
    pub fn feature_dim(&self) -> Option<usize> {
        self.proposals.first().map(|p| p.feature.len())
    }

    /// The whole-video feature: the stored one, else the mean over the
    /// feature volume, else the mean of the node features.
    pub fn resolved_global(&self) -> Result<Vec<f64>> {
        if let Some(g) = &self.global_feature {
            return Ok(g.clone());
        }
        if let Some(v) = &self.volume {
            return Ok(v.mean_all());
        }
        let d = self.feature_dim().ok_or_else(|| Error::data(&self.video_id, "no proposals"))?;
        let mut mean = vec![0.0; d];
        for p in &self.proposals {
            for (m, v) in mean.iter_mut().zip(&p.feature) {
                *m += v;
            }
        }
        let n = self.proposals.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    /// Splits the video into `clips` runs of consecutive frames, as evenly
    /// as the frame count allows. Each clip keeps the video's label and its
    /// resolved global feature; frames are renumbered from 0.
    pub fn clips(&self, clips: usize) -> Result<Vec<VideoRecord>> {
        let frames: Vec<usize> = self
            .proposals
            .iter()
            .map(|p| p.frame)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if clips == 0 || clips > frames.len() {
            return Err(Error::data(
                &self.video_id,
                format!("cannot split {} frames into {clips} clips", frames.len()),
            ));
        }
        if clips == 1 {
            return Ok(vec![self.clone()]);
        }
        let global = self.resolved_global()?;
        let mut out = Vec::with_capacity(clips);
        for c in 0..clips {
            let lo = frames[c * frames.len() / clips];
            let hi = frames[(c + 1) * frames.len() / clips - 1];
            let proposals = self
                .proposals
                .iter()
                .filter(|p| (lo..=hi).contains(&p.frame))
                .map(|p| RegionProposal {
                    frame: p.frame - lo,
                    ..p.clone()
                })
                .collect();
            out.push(VideoRecord {
                video_id: format!("{}#{c}", self.video_id),
                proposals,
                global_feature: Some(global.clone()),
                label: self.label.clone(),
                volume: None,
            });
        }
        Ok(out)
    }
}

/// Dataset-wide settings stored next to the record files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub classes: usize,
    pub mode: LabelMode,
    pub feature_dim: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
}

impl DatasetMeta {
    /// Infers the settings from labels: the class count is one past the
    /// largest index, or the multi-hot length.
    pub fn infer(records: &[VideoRecord]) -> Result<Self> {
        let first = records.first().ok_or(Error::Empty { op: "DatasetMeta::infer" })?;
        let feature_dim = first.feature_dim().unwrap_or(0);
        let (mode, classes) = match &first.label {
            Label::Class(_) => (
                LabelMode::Single,
                records
                    .iter()
                    .filter_map(|r| r.label.class())
                    .max()
                    .map_or(0, |m| m + 1),
            ),
            Label::MultiHot(v) => (LabelMode::Multi, v.len()),
        };
        Ok(DatasetMeta {
            classes,
            mode,
            feature_dim,
            class_names: Vec::new(),
        })
    }
}

/// Builds the graph input for one record. Nodes are put in canonical
/// (frame-major, stable) order; the similarity graph uses `transforms`.
pub fn assemble(record: &VideoRecord, transforms: &AffinityTransforms) -> Result<VideoGraphInput> {
    if record.proposals.is_empty() {
        return Err(Error::data(&record.video_id, "no proposals"));
    }
    let order = canonical_order(&record.proposals);
    let proposals: Vec<RegionProposal> = order.iter().map(|&i| record.proposals[i].clone()).collect();
    let rows: Vec<Vec<f64>> = proposals.iter().map(|p| p.feature.clone()).collect();
    let node_features = Matrix::from_rows(&rows)?;
    let input = VideoGraphInput {
        g_sim: build_similarity_graph(&node_features, transforms)?,
        g_front: build_front_graph(&proposals),
        g_back: build_back_graph(&proposals),
        global_feature: record.resolved_global()?,
        node_features,
    };
    input.validate(rows[0].len())?;
    Ok(input)
}

/// One training sample per record.
pub fn training_samples(records: &[VideoRecord], transforms: &AffinityTransforms) -> Result<Vec<TrainSample>> {
    records
        .iter()
        .map(|r| {
            Ok(TrainSample {
                input: assemble(r, transforms)?,
                label: r.label.clone(),
            })
        })
        .collect()
}
