//! One frame end to end: canonical cloud -> deformation -> render, and back.

use ndarray::Array2;

use crate::deform::{apply_delta, apply_delta_backward, DeformationField, DeformedCloud, DeltaBatch, FieldGrad, OpacityMode};
use crate::error::{Error, Result};
use crate::gaussian::{activated_view, ActivatedCloud, GaussianCloud, ParamGroup};
use crate::raster::{render_cloud, render_cloud_backward, Camera, Frame, Image};

/// Gradients shaped like the per-Gaussian arrays of a [`GaussianCloud`].
#[derive(Clone, Debug, PartialEq)]
pub struct CloudGrad {
    pub positions: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub rotations: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<f64>,
    pub embeddings: Vec<f64>,
}

impl CloudGrad {
    pub fn zeros_like(cloud: &GaussianCloud) -> Self {
        CloudGrad {
            positions: vec![0.0; cloud.positions.len()],
            log_scales: vec![0.0; cloud.log_scales.len()],
            rotations: vec![0.0; cloud.rotations.len()],
            opacity_logits: vec![0.0; cloud.opacity_logits.len()],
            sh_coeffs: vec![0.0; cloud.sh_coeffs.len()],
            embeddings: vec![0.0; cloud.embeddings.len()],
        }
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::Position => &self.positions,
            ParamGroup::Scale => &self.log_scales,
            ParamGroup::Rotation => &self.rotations,
            ParamGroup::Opacity => &self.opacity_logits,
            ParamGroup::Sh => &self.sh_coeffs,
            ParamGroup::Embedding => &self.embeddings,
        }
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut Vec<f64> {
        match group {
            ParamGroup::Position => &mut self.positions,
            ParamGroup::Scale => &mut self.log_scales,
            ParamGroup::Rotation => &mut self.rotations,
            ParamGroup::Opacity => &mut self.opacity_logits,
            ParamGroup::Sh => &mut self.sh_coeffs,
            ParamGroup::Embedding => &mut self.embeddings,
        }
    }

    pub fn scale_by(&mut self, s: f64) {
        for g in ParamGroup::ALL {
            for v in self.group_mut(g).iter_mut() {
                *v *= s;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelGrad {
    pub cloud: CloudGrad,
    pub field: FieldGrad,
}

/// Canonical Gaussians plus the deformation field that animates them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cloud: GaussianCloud,
    pub field: DeformationField,
    pub opacity_mode: OpacityMode,
}

/// Everything the backward pass of one frame needs.
#[derive(Clone, Debug)]
pub struct FrameState {
    pub t: f64,
    pub view: ActivatedCloud,
    pub batch: DeltaBatch,
    pub deformed: DeformedCloud,
    pub frame: Frame,
}

impl FrameState {
    pub fn image(&self) -> &Image {
        &self.frame.output.color
    }
}

impl Model {
    pub fn new(cloud: GaussianCloud, field: DeformationField, opacity_mode: OpacityMode) -> Result<Self> {
        let model = Model { cloud, field, opacity_mode };
        model.check()?;
        Ok(model)
    }

    pub fn check(&self) -> Result<()> {
        if self.cloud.embed_dim() != self.field.embed_dim() {
            return Err(Error::Shape(format!("cloud embeddings {} vs field {}", self.cloud.embed_dim(), self.field.embed_dim())));
        }
        if self.cloud.sh_degree() != self.field.sh_degree() {
            return Err(Error::Shape(format!("cloud SH degree {} vs field {}", self.cloud.sh_degree(), self.field.sh_degree())));
        }
        Ok(())
    }

    /// Deformed Gaussians at time `t`.
    pub fn deform_at(&self, t: f64, keep_trace: bool) -> Result<(ActivatedCloud, DeltaBatch, DeformedCloud)> {
        let view = activated_view(&self.cloud)?;
        let batch = self.field.deform_batch(&self.cloud.embeddings, t, keep_trace)?;
        let deformed = apply_delta(&view, batch.out.view(), self.field.layout(), self.opacity_mode)?;
        Ok((view, batch, deformed))
    }

    pub fn forward_frame(&self, cam: &Camera, t: f64, keep_state: bool) -> Result<FrameState> {
        let (view, batch, deformed) = self.deform_at(t, keep_state)?;
        let frame = render_cloud(&deformed, cam, keep_state);
        Ok(FrameState { t, view, batch, deformed, frame })
    }

    pub fn render(&self, cam: &Camera, t: f64) -> Result<Image> {
        Ok(self.forward_frame(cam, t, false)?.frame.output.color)
    }

    /// Renders the undeformed canonical Gaussians.
    pub fn render_canonical(&self, cam: &Camera) -> Result<Frame> {
        let view = activated_view(&self.cloud)?;
        let layout = self.field.layout();
        let zeros = Array2::zeros((view.len(), layout.width()));
        let canon = apply_delta(&view, zeros.view(), layout, OpacityMode::Bypass)?;
        Ok(render_cloud(&canon, cam, false))
    }

    /// Backpropagates `d_color` through render, deformation and field.
    /// Returns gradients and per-Gaussian screen-space gradient norms.
    pub fn backward_frame(&self, state: &FrameState, cam: &Camera, d_color: &Image) -> Result<(ModelGrad, Vec<f64>)> {
        if state.view.len() != self.cloud.len() {
            return Err(Error::Shape(format!("frame state for {} Gaussians, cloud has {}", state.view.len(), self.cloud.len())));
        }
        let (dg, norms) = render_cloud_backward(&state.deformed, &state.frame, cam, d_color)?;
        let layout = self.field.layout();
        let (canon, d_delta) = apply_delta_backward(&state.view, &state.deformed, layout, &dg);
        let (field, d_emb) = self.field.backward(&state.batch, d_delta.view())?;
        let cloud = CloudGrad {
            positions: canon.positions,
            log_scales: canon.log_scales,
            rotations: canon.rotations,
            opacity_logits: canon.opacity_logits,
            sh_coeffs: canon.sh,
            embeddings: d_emb,
        };
        Ok((ModelGrad { cloud, field }, norms))
    }
}
