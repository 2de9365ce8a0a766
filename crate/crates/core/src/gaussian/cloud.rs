use super::activation::{logit, sigmoid};
use super::covariance::quat_norm;
use super::sh::{sh_coeff_count, MAX_SH_DEGREE, SH_C0};
use crate::error::{Error, Result};

/// The canonical field. Attributes are stored as raw (pre-activation)
/// parameters in flat row-major arrays, one row per Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    /// `N x 3` means.
    pub positions: Vec<f64>,
    /// `N x 3` log scales.
    pub log_scales: Vec<f64>,
    /// `N x 4` raw `(w, x, y, z)` quaternions.
    pub rotations: Vec<f64>,
    /// `N` opacity logits.
    pub opacity_logits: Vec<f64>,
    /// `N x K x 3` SH coefficients, `K = (degree + 1)^2`, DC first.
    pub sh_coeffs: Vec<f64>,
    /// `N x D_e` per-Gaussian embeddings.
    pub embeddings: Vec<f64>,
    sh_degree: usize,
    embed_dim: usize,
}

/// Optimizer parameter groups that are indexed by Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Position,
    Scale,
    Rotation,
    Opacity,
    Sh,
    Embedding,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Position,
        ParamGroup::Scale,
        ParamGroup::Rotation,
        ParamGroup::Opacity,
        ParamGroup::Sh,
        ParamGroup::Embedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Scale => "scale",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Sh => "sh",
            ParamGroup::Embedding => "embedding",
        }
    }
}

/// A row-level edit of every per-Gaussian array: keep the flagged original
/// rows (in order), then append `appended` new rows.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RowEdit {
    pub keep: Vec<bool>,
    pub appended: usize,
}

impl RowEdit {
    pub fn append_only(existing: usize, appended: usize) -> Self {
        RowEdit { keep: vec![true; existing], appended }
    }

    /// True when every row survives and nothing is appended.
    pub fn is_identity(&self) -> bool {
        self.appended == 0 && self.keep.iter().all(|&k| k)
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn new_len(&self) -> usize {
        self.kept() + self.appended
    }

    /// Applies the edit to a flat array of `width`-wide rows, filling appended rows with `fill`.
    pub fn apply<T: Copy>(&self, data: &mut Vec<T>, width: usize, fill: T) {
        assert_eq!(data.len(), self.keep.len() * width, "row edit does not match array");
        let mut out = Vec::with_capacity(self.new_len() * width);
        for (row, &k) in self.keep.iter().enumerate() {
            if k {
                out.extend_from_slice(&data[row * width..(row + 1) * width]);
            }
        }
        out.resize(self.new_len() * width, fill);
        *data = out;
    }
}

impl GaussianCloud {
    pub fn new(sh_degree: usize, embed_dim: usize) -> Self {
        assert!(sh_degree <= MAX_SH_DEGREE, "sh degree above {MAX_SH_DEGREE}");
        GaussianCloud {
            positions: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            opacity_logits: Vec::new(),
            sh_coeffs: Vec::new(),
            embeddings: Vec::new(),
            sh_degree,
            embed_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Scalars per row of `group`.
    pub fn row_width(&self, group: ParamGroup) -> usize {
        match group {
            ParamGroup::Position | ParamGroup::Scale => 3,
            ParamGroup::Rotation => 4,
            ParamGroup::Opacity => 1,
            ParamGroup::Sh => sh_coeff_count(self.sh_degree) * 3,
            ParamGroup::Embedding => self.embed_dim,
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

    pub fn position(&self, i: usize) -> [f64; 3] {
        row3(&self.positions, i)
    }

    pub fn log_scale(&self, i: usize) -> [f64; 3] {
        row3(&self.log_scales, i)
    }

    pub fn rotation(&self, i: usize) -> [f64; 4] {
        let r = &self.rotations[i * 4..i * 4 + 4];
        [r[0], r[1], r[2], r[3]]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        let w = self.row_width(ParamGroup::Sh);
        &self.sh_coeffs[i * w..(i + 1) * w]
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.embed_dim..(i + 1) * self.embed_dim]
    }

    /// Appends one Gaussian from raw parameters. `sh` must hold all `K x 3` coefficients.
    pub fn push_raw(
        &mut self,
        position: [f64; 3],
        log_scale: [f64; 3],
        rotation: [f64; 4],
        opacity_logit: f64,
        sh: &[f64],
        embedding: &[f64],
    ) {
        assert_eq!(sh.len(), self.row_width(ParamGroup::Sh), "sh row width");
        assert_eq!(embedding.len(), self.embed_dim, "embedding width");
        self.positions.extend_from_slice(&position);
        self.log_scales.extend_from_slice(&log_scale);
        self.rotations.extend_from_slice(&rotation);
        self.opacity_logits.push(opacity_logit);
        self.sh_coeffs.extend_from_slice(sh);
        self.embeddings.extend_from_slice(embedding);
    }

    /// Appends a Gaussian with an RGB base color (higher SH bands zero),
    /// isotropic scale, identity rotation and activated opacity `opacity`.
    pub fn push_isotropic(&mut self, position: [f64; 3], scale: f64, rgb: [f64; 3], opacity: f64, embedding: &[f64]) {
        let mut sh = vec![0.0; self.row_width(ParamGroup::Sh)];
        for c in 0..3 {
            sh[c] = rgb_to_sh_dc(rgb[c]);
        }
        self.push_raw(position, [scale.ln(); 3], [1.0, 0.0, 0.0, 0.0], logit(opacity), &sh, embedding);
    }

    /// Copies row `i` of `other` onto the end of `self`.
    pub fn push_row_from(&mut self, other: &GaussianCloud, i: usize) {
        self.push_raw(
            other.position(i),
            other.log_scale(i),
            other.rotation(i),
            other.opacity_logits[i],
            other.sh_of(i),
            other.embedding(i),
        );
    }

    /// Keeps flagged rows and appends all rows of `new_rows`.
    pub fn retain_and_append(&mut self, keep: &[bool], new_rows: &GaussianCloud) -> Result<RowEdit> {
        if keep.len() != self.len() {
            return Err(Error::Shape(format!("keep mask {} vs cloud {}", keep.len(), self.len())));
        }
        if new_rows.sh_degree != self.sh_degree || new_rows.embed_dim != self.embed_dim {
            return Err(Error::Shape("appended rows have a different layout".into()));
        }
        let edit = RowEdit { keep: keep.to_vec(), appended: new_rows.len() };
        for group in ParamGroup::ALL {
            let w = self.row_width(group);
            let data = self.group_mut(group);
            edit.apply(data, w, 0.0);
            let start = data.len() - new_rows.len() * w;
            data[start..].copy_from_slice(new_rows.group(group));
        }
        Ok(edit)
    }

    /// Checks the structural and numeric invariants of the field.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::EmptyCloud);
        }
        for group in ParamGroup::ALL {
            let expect = n * self.row_width(group);
            if self.group(group).len() != expect {
                return Err(Error::Shape(format!("{} has {} values, expected {expect}", group.name(), self.group(group).len())));
            }
        }
        for i in 0..n {
            let s = self.log_scale(i).map(f64::exp);
            if !s.iter().all(|v| v.is_finite() && *v > 0.0) {
                return Err(Error::NonFiniteParameter { index: i, attribute: "scale" });
            }
            let a = self.opacity(i);
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::NonFiniteParameter { index: i, attribute: "opacity" });
            }
            let qn = quat_norm(self.rotation(i));
            if !qn.is_finite() || qn < 1e-12 {
                return Err(Error::InvalidRotation);
            }
        }
        Ok(())
    }
}

pub fn rgb_to_sh_dc(v: f64) -> f64 {
    (v - 0.5) / SH_C0
}

fn row3(data: &[f64], i: usize) -> [f64; 3] {
    [data[i * 3], data[i * 3 + 1], data[i * 3 + 2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud3() -> GaussianCloud {
        let mut c = GaussianCloud::new(1, 2);
        for i in 0..3 {
            c.push_isotropic([i as f64, 0.0, 0.0], 0.5, [0.2, 0.4, 0.6], 0.3, &[i as f64, -(i as f64)]);
        }
        c
    }

    #[test]
    fn row_edit_keeps_prefix_and_appends() {
        let mut c = cloud3();
        let mut extra = GaussianCloud::new(1, 2);
        extra.push_isotropic([9.0, 9.0, 9.0], 1.0, [1.0, 0.0, 0.0], 0.5, &[7.0, 7.0]);
        let edit = c.retain_and_append(&[true, false, true], &extra).unwrap();
        assert_eq!(edit.new_len(), 3);
        assert_eq!(c.len(), 3);
        assert_eq!(c.position(0), [0.0, 0.0, 0.0]);
        assert_eq!(c.position(1), [2.0, 0.0, 0.0]);
        assert_eq!(c.position(2), [9.0, 9.0, 9.0]);
        assert_eq!(c.embedding(2), &[7.0, 7.0]);
        c.validate().unwrap();
    }

    #[test]
    fn isotropic_push_activates_back() {
        let c = cloud3();
        assert!((c.opacity(1) - 0.3).abs() < 1e-12);
        assert!((c.log_scale(1)[0].exp() - 0.5).abs() < 1e-12);
        let rgb = super::super::eval_sh_color(c.sh_of(0), [0.0, 0.0, 1.0], 1);
        assert!((rgb[2] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_empty() {
        assert!(matches!(GaussianCloud::new(0, 1).validate(), Err(Error::EmptyCloud)));
    }
}
