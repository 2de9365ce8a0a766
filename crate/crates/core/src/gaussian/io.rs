//! Gaussian PLY export/import in the layout common 3DGS tools read
//! (`x y z f_dc_* f_rest_* opacity scale_* rot_*`) plus `embed_*`.
//!
//! `f_rest_*` is channel-major: all higher-band coefficients of red, then
//! green, then blue.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::cloud::GaussianCloud;
use super::sh::{sh_coeff_count, MAX_SH_DEGREE};
use crate::error::{Error, Result};
use crate::ply::{read_vertices, write_vertices, Property, ScalarType, VertexTable};

pub fn cloud_to_table(cloud: &GaussianCloud) -> VertexTable {
    let k = sh_coeff_count(cloud.sh_degree());
    let mut names: Vec<String> = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3 * (k - 1)).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names.extend((0..cloud.embed_dim()).map(|i| format!("embed_{i}")));
    let properties: Vec<Property> = names.into_iter().map(|n| Property::new(n, ScalarType::F32)).collect();
    let mut values = Vec::with_capacity(cloud.len() * properties.len());
    for i in 0..cloud.len() {
        values.extend_from_slice(&cloud.position(i));
        let sh = cloud.sh_of(i);
        values.extend_from_slice(&sh[..3]);
        for c in 0..3 {
            for coef in 1..k {
                values.push(sh[coef * 3 + c]);
            }
        }
        values.push(cloud.opacity_logits[i]);
        values.extend_from_slice(&cloud.log_scale(i));
        values.extend_from_slice(&cloud.rotation(i));
        values.extend_from_slice(cloud.embedding(i));
    }
    VertexTable { properties, values }
}

pub fn cloud_from_table(table: &VertexTable) -> Result<GaussianCloud> {
    let rest = table.indexed_names("f_rest_");
    if rest.len() % 3 != 0 {
        return Err(Error::Format(format!("{} f_rest properties is not a multiple of 3", rest.len())));
    }
    let per_channel = rest.len() / 3 + 1;
    let degree = (0..=MAX_SH_DEGREE)
        .find(|&d| sh_coeff_count(d) == per_channel)
        .ok_or_else(|| Error::Format(format!("{per_channel} SH coefficients per channel is not a supported degree")))?;
    let embed = table.indexed_names("embed_");
    let col = |name: &str| table.column(name);
    let pos = [col("x")?, col("y")?, col("z")?];
    let dc = [col("f_dc_0")?, col("f_dc_1")?, col("f_dc_2")?];
    let rest_cols: Vec<Vec<f64>> = rest.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let opacity = col("opacity")?;
    let scale = [col("scale_0")?, col("scale_1")?, col("scale_2")?];
    let rot = [col("rot_0")?, col("rot_1")?, col("rot_2")?, col("rot_3")?];
    let embed_cols: Vec<Vec<f64>> = embed.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let k = per_channel;
    let mut cloud = GaussianCloud::new(degree, embed.len());
    let mut sh = vec![0.0; k * 3];
    let mut e = vec![0.0; embed.len()];
    for i in 0..table.len() {
        for c in 0..3 {
            sh[c] = dc[c][i];
            for coef in 1..k {
                sh[coef * 3 + c] = rest_cols[c * (k - 1) + coef - 1][i];
            }
        }
        for (d, ecol) in embed_cols.iter().enumerate() {
            e[d] = ecol[i];
        }
        cloud.push_raw(
            [pos[0][i], pos[1][i], pos[2][i]],
            [scale[0][i], scale[1][i], scale[2][i]],
            [rot[0][i], rot[1][i], rot[2][i], rot[3][i]],
            opacity[i],
            &sh,
            &e,
        );
    }
    Ok(cloud)
}

pub fn write_gaussians_ply(path: impl AsRef<Path>, cloud: &GaussianCloud) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    write_vertices(w, &cloud_to_table(cloud))
}

pub fn read_gaussians_ply(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let r = BufReader::new(File::open(path)?);
    cloud_from_table(&read_vertices(r)?)
}
