use crate::error::{Error, Result};

/// How coarse and fine temporal embeddings are combined before the MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    Coarse,
    Fine,
    Add,
    Concat,
    /// Hadamard product, one MLP pass.
    Product,
    /// Late fusion: two MLP passes whose outputs are summed.
    Dual,
}

impl FusionMode {
    pub const ALL: [FusionMode; 6] =
        [FusionMode::Coarse, FusionMode::Fine, FusionMode::Add, FusionMode::Concat, FusionMode::Product, FusionMode::Dual];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Coarse => "coarse",
            FusionMode::Fine => "fine",
            FusionMode::Add => "add",
            FusionMode::Concat => "concat",
            FusionMode::Product => "product",
            FusionMode::Dual => "dual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode `{s}`")))
    }

    pub fn tag(self) -> u32 {
        FusionMode::ALL.iter().position(|&m| m == self).unwrap() as u32
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        FusionMode::ALL.get(tag as usize).copied().ok_or_else(|| Error::Format(format!("bad fusion tag {tag}")))
    }

    /// Width of the temporal part of the MLP input.
    pub fn temporal_width(self, dim: usize) -> usize {
        if self == FusionMode::Concat {
            2 * dim
        } else {
            dim
        }
    }

    /// MLP passes per Gaussian per timestep.
    pub fn passes(self) -> usize {
        if self == FusionMode::Dual {
            2
        } else {
            1
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Fused {
    Single(Vec<f64>),
    /// Dual mode keeps both embeddings: `(coarse, fine)`.
    Pair(Vec<f64>, Vec<f64>),
}

pub fn fuse(t_c: &[f64], t_f: &[f64], mode: FusionMode) -> Result<Fused> {
    if t_c.len() != t_f.len() {
        return Err(Error::Shape(format!("temporal embeddings differ in width: {} vs {}", t_c.len(), t_f.len())));
    }
    Ok(match mode {
        FusionMode::Product => Fused::Single(t_c.iter().zip(t_f).map(|(a, b)| a * b).collect()),
        FusionMode::Add => Fused::Single(t_c.iter().zip(t_f).map(|(a, b)| a + b).collect()),
        FusionMode::Concat => Fused::Single(t_c.iter().chain(t_f).copied().collect()),
        FusionMode::Coarse => Fused::Single(t_c.to_vec()),
        FusionMode::Fine => Fused::Single(t_f.to_vec()),
        FusionMode::Dual => Fused::Pair(t_c.to_vec(), t_f.to_vec()),
    })
}

/// Backward of a single-vector fusion. Returns `(d t_c, d t_f)`.
pub fn fuse_backward(t_c: &[f64], t_f: &[f64], mode: FusionMode, d_fused: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = t_c.len();
    match mode {
        FusionMode::Product => (
            d_fused.iter().zip(t_f).map(|(g, b)| g * b).collect(),
            d_fused.iter().zip(t_c).map(|(g, a)| g * a).collect(),
        ),
        FusionMode::Add => (d_fused.to_vec(), d_fused.to_vec()),
        FusionMode::Concat => (d_fused[..n].to_vec(), d_fused[n..].to_vec()),
        FusionMode::Coarse => (d_fused.to_vec(), vec![0.0; n]),
        FusionMode::Fine => (vec![0.0; n], d_fused.to_vec()),
        FusionMode::Dual => panic!("dual fusion has no single fused vector"),
    }
}
