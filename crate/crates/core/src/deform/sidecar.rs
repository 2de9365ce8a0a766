//! Binary sidecar holding the deformation field next to the Gaussian PLY.
//!
//! Layout (little endian): magic `FRGD`, version, `D_e`, `D_t`, `L_f`, `L_c`,
//! layer count, then per layer `(in, out, activation)`, SH degree, fusion tag,
//! opacity-mode tag, `k` (f32), DC-only flag, then f32 payloads: fine table,
//! coarse table, and weight/bias per layer.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::field::DeformationField;
use super::fusion::FusionMode;
use super::mlp::{Activation, Linear, Mlp};
use super::opacity::OpacityMode;
use super::temporal::TemporalEmbeddingTable;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FRGD";
const VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 24;

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s<'a, W: Write>(w: &mut W, vals: impl Iterator<Item = &'a f64>) -> Result<()> {
    for v in vals {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_dim<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let v = get_u32(r)?;
    if v > MAX_DIM {
        return Err(Error::Format(format!("implausible {what} {v}")));
    }
    Ok(v as usize)
}

fn get_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

pub fn write_field<W: Write>(w: &mut W, field: &DeformationField, mode: OpacityMode) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, field.embed_dim() as u32)?;
    put_u32(w, field.tables.dim() as u32)?;
    put_u32(w, field.tables.fine.nrows() as u32)?;
    put_u32(w, field.tables.coarse.nrows() as u32)?;
    put_u32(w, field.mlp.layers.len() as u32)?;
    for l in &field.mlp.layers {
        put_u32(w, l.weight.nrows() as u32)?;
        put_u32(w, l.weight.ncols() as u32)?;
        put_u32(w, l.activation.tag())?;
    }
    put_u32(w, field.sh_degree() as u32)?;
    put_u32(w, field.fusion.tag())?;
    put_u32(w, mode.tag())?;
    w.write_all(&(mode.k() as f32).to_le_bytes())?;
    put_u32(w, field.sh_dc_only() as u32)?;
    put_f32s(w, field.tables.fine.iter())?;
    put_f32s(w, field.tables.coarse.iter())?;
    for l in &field.mlp.layers {
        put_f32s(w, l.weight.iter())?;
        put_f32s(w, l.bias.iter())?;
    }
    Ok(())
}

pub fn read_field<R: Read>(r: &mut R) -> Result<(DeformationField, OpacityMode)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a deformation sidecar".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported sidecar version {version}")));
    }
    let embed_dim = get_dim(r, "embedding width")?;
    let temporal_dim = get_dim(r, "temporal width")?;
    let fine_len = get_dim(r, "fine length")?;
    let coarse_len = get_dim(r, "coarse length")?;
    let n_layers = get_dim(r, "layer count")?;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let i = get_dim(r, "layer input")?;
        let o = get_dim(r, "layer output")?;
        shapes.push((i, o, Activation::from_tag(get_u32(r)?)?));
    }
    let sh_degree = get_dim(r, "SH degree")?;
    let fusion = FusionMode::from_tag(get_u32(r)?)?;
    let mode_tag = get_u32(r)?;
    let mut kb = [0u8; 4];
    r.read_exact(&mut kb)?;
    let mode = OpacityMode::from_tag(mode_tag, f32::from_le_bytes(kb) as f64)?;
    let dc_only = get_u32(r)? != 0;
    let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
    let fine = Array2::from_shape_vec((fine_len, temporal_dim), get_f32s(r, fine_len * temporal_dim)?).map_err(shape_err)?;
    let coarse = Array2::from_shape_vec((coarse_len, temporal_dim), get_f32s(r, coarse_len * temporal_dim)?).map_err(shape_err)?;
    let mut layers = Vec::with_capacity(n_layers);
    for (k, &(i, o, activation)) in shapes.iter().enumerate() {
        if k > 0 && shapes[k - 1].1 != i {
            return Err(Error::Format(format!("layer {k} input {i} does not match previous output")));
        }
        let weight = Array2::from_shape_vec((i, o), get_f32s(r, i * o)?).map_err(shape_err)?;
        let bias = Array1::from(get_f32s(r, o)?);
        layers.push(Linear { weight, bias, activation });
    }
    let tables = TemporalEmbeddingTable::new(fine, coarse)?;
    let field = DeformationField::from_parts(Mlp { layers }, tables, fusion, embed_dim, sh_degree, dc_only)?;
    Ok((field, mode))
}

pub fn save_field(path: &Path, field: &DeformationField, mode: OpacityMode) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_field(&mut w, field, mode)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<(DeformationField, OpacityMode)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_field(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::FieldConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_field(fusion: FusionMode) -> DeformationField {
        let cfg = FieldConfig { embed_dim: 4, temporal_dim: 3, hidden_width: 8, hidden_layers: 2, fine_len: 5, coarse_len: 2, fusion, ..FieldConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = DeformationField::new(&cfg, &mut rng).unwrap();
        f.randomize_head(0.1, &mut rng);
        f
    }

    #[test]
    fn roundtrip_preserves_f32_values() {
        for fusion in [FusionMode::Product, FusionMode::Concat, FusionMode::Dual] {
            let f = small_field(fusion);
            let mode = OpacityMode::aggressive(10.0);
            let mut buf = Vec::new();
            write_field(&mut buf, &f, mode).unwrap();
            let (g, m) = read_field(&mut buf.as_slice()).unwrap();
            assert_eq!(m, mode);
            assert_eq!(g.fusion, fusion);
            for (a, b) in f.mlp.layers.iter().zip(&g.mlp.layers) {
                for (x, y) in a.weight.iter().zip(&b.weight) {
                    assert_eq!(*x as f32, *y as f32);
                }
            }
            for (x, y) in f.tables.fine.iter().zip(&g.tables.fine) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let f = small_field(FusionMode::Product);
        let mut buf = Vec::new();
        write_field(&mut buf, &f, OpacityMode::Standard).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_field(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 7];
        assert!(read_field(&mut &short[..]).is_err());
    }
}
