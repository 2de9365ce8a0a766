//! Tiled front-to-back alpha compositing of projected splats.

use super::camera::Camera;
use super::image::{Image, ScalarMap};
use crate::error::{Error, Result};
use crate::par;

pub const TILE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const T_MIN: f64 = 1e-4;
pub const DET_MIN: f64 = 1e-12;

/// A Gaussian projected to the screen.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    /// Index of the source Gaussian; breaks depth ties.
    pub index: usize,
    pub mean2d: [f64; 2],
    /// `(xx, xy, yy)` in pixels squared.
    pub cov2d: [f64; 3],
    pub depth_euclidean: f64,
    pub depth_z: f64,
    pub color: [f64; 3],
    pub alpha: f64,
}

impl Splat2D {
    /// Inverse covariance `(a, b, c)`, or `None` when near singular.
    pub fn conic(&self) -> Option<[f64; 3]> {
        let [xx, xy, yy] = self.cov2d;
        let det = xx * yy - xy * xy;
        if !(det > DET_MIN) || !det.is_finite() {
            return None;
        }
        Some([yy / det, -xy / det, xx / det])
    }
}

#[derive(Clone, Copy, Debug)]
struct Prepared {
    mean: [f64; 2],
    conic: [f64; 3],
    alpha: f64,
}

#[derive(Clone, Copy, Debug)]
struct PixelAlpha {
    value: f64,
    gauss: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

#[inline]
fn pixel_alpha(s: &Prepared, px: f64, py: f64) -> Option<PixelAlpha> {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let [a, b, c] = s.conic;
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    if power > 0.0 {
        return None;
    }
    let gauss = power.exp();
    let raw = s.alpha * gauss;
    let value = raw.min(ALPHA_MAX);
    if value < ALPHA_MIN {
        return None;
    }
    Some(PixelAlpha { value, gauss, clamped: raw > ALPHA_MAX, dx, dy })
}

/// Forward state kept for [`render_backward`]: depth order and tile bins.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderState {
    /// Splat positions in the input slice, front to back.
    pub order: Vec<usize>,
    /// Per tile, ranks into `order`.
    pub bins: Vec<Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: Image,
    pub mean_depth: ScalarMap,
    /// NaN where transmittance never crosses one half.
    pub median_depth: ScalarMap,
    pub accum_alpha: ScalarMap,
    /// Splats skipped for a near-singular screen covariance.
    pub degenerate: usize,
    pub state: Option<RenderState>,
}

/// Per-splat gradients, indexed like the input splat slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGrads {
    pub mean2d: Vec<[f64; 2]>,
    /// Full-matrix gradient on the dilated screen covariance `(xx, xy, yy)`;
    /// `xy` is the partial of one off-diagonal copy.
    pub cov2d: Vec<[f64; 3]>,
    pub color: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
}

impl SplatGrads {
    fn zeros(n: usize) -> Self {
        SplatGrads { mean2d: vec![[0.0; 2]; n], cov2d: vec![[0.0; 3]; n], color: vec![[0.0; 3]; n], alpha: vec![0.0; n] }
    }
}

/// Front-to-back order by `(depth_z, index)`.
pub fn depth_order(splats: &[Splat2D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| splats[a].depth_z.total_cmp(&splats[b].depth_z).then(splats[a].index.cmp(&splats[b].index)));
    order
}

struct Tiling {
    tiles_x: usize,
    tiles_y: usize,
}

impl Tiling {
    fn new(cam: &Camera) -> Self {
        Tiling { tiles_x: cam.width.div_ceil(TILE), tiles_y: cam.height.div_ceil(TILE) }
    }

    fn count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }
}

/// Inclusive pixel range along one axis whose centers lie within `r` of `m`.
fn pixel_span(m: f64, r: f64, len: usize) -> Option<(usize, usize)> {
    let lo = (m - r - 0.5).ceil();
    let hi = (m + r - 0.5).floor();
    if hi < 0.0 || lo > (len - 1) as f64 || lo > hi {
        return None;
    }
    Some((lo.max(0.0) as usize, hi.min((len - 1) as f64) as usize))
}

fn prepare(splats: &[Splat2D], order: &[usize], cam: &Camera) -> (Vec<Option<Prepared>>, Vec<Vec<u32>>, usize) {
    let tiling = Tiling::new(cam);
    let mut bins = vec![Vec::new(); tiling.count()];
    let mut prepared = Vec::with_capacity(order.len());
    let mut degenerate = 0;
    for (rank, &si) in order.iter().enumerate() {
        let s = &splats[si];
        let Some(conic) = s.conic() else {
            degenerate += 1;
            prepared.push(None);
            continue;
        };
        let p = Prepared { mean: s.mean2d, conic, alpha: s.alpha };
        prepared.push(Some(p));
        // Pixels with alpha * g >= 1/255 satisfy d^T Q d <= 2 ln(255 alpha).
        let reach = 255.0 * s.alpha;
        if !(reach > 1.0) || !s.mean2d.iter().all(|v| v.is_finite()) {
            continue;
        }
        let m = (2.0 * reach.ln()).sqrt() * (1.0 + 1e-9) + 1e-9;
        let rx = m * s.cov2d[0].sqrt();
        let ry = m * s.cov2d[2].sqrt();
        let (Some((x0, x1)), Some((y0, y1))) = (pixel_span(s.mean2d[0], rx, cam.width), pixel_span(s.mean2d[1], ry, cam.height)) else {
            continue;
        };
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                bins[ty * tiling.tiles_x + tx].push(rank as u32);
            }
        }
    }
    (prepared, bins, degenerate)
}

#[derive(Clone, Copy)]
struct PixelResult {
    color: [f64; 3],
    mean_depth: f64,
    median_depth: f64,
    accum: f64,
}

fn tile_pixels(tile: usize, cam: &Camera) -> impl Iterator<Item = (usize, usize)> {
    let tiles_x = cam.width.div_ceil(TILE);
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let (w, h) = (cam.width, cam.height);
    (ty * TILE..((ty + 1) * TILE).min(h)).flat_map(move |y| (tx * TILE..((tx + 1) * TILE).min(w)).map(move |x| (x, y)))
}

fn composite<'a>(
    px: f64,
    py: f64,
    ranks: impl Iterator<Item = usize>,
    prepared: &[Option<Prepared>],
    splat_at: impl Fn(usize) -> &'a Splat2D,
    early_stop: bool,
) -> PixelResult {
    let mut t = 1.0;
    let mut out = PixelResult { color: [0.0; 3], mean_depth: 0.0, median_depth: f64::NAN, accum: 0.0 };
    for rank in ranks {
        let Some(p) = &prepared[rank] else { continue };
        let Some(a) = pixel_alpha(p, px, py) else { continue };
        let s = splat_at(rank);
        let w = a.value * t;
        for c in 0..3 {
            out.color[c] += s.color[c] * w;
        }
        out.mean_depth += s.depth_euclidean * w;
        let t_next = t * (1.0 - a.value);
        if t > 0.5 && t_next <= 0.5 {
            out.median_depth = s.depth_euclidean;
        }
        t = t_next;
        if early_stop && t < T_MIN {
            break;
        }
    }
    out.accum = 1.0 - t;
    out
}

/// Tiled forward render. Set `keep_state` to allow [`render_backward`].
pub fn render(splats: &[Splat2D], cam: &Camera, keep_state: bool) -> RenderOutput {
    let order = depth_order(splats);
    let (prepared, bins, degenerate) = prepare(splats, &order, cam);
    let tiling = Tiling::new(cam);
    let tiles = par::map_range(tiling.count(), |tile| {
        tile_pixels(tile, cam)
            .map(|(x, y)| {
                let ranks = bins[tile].iter().map(|&r| r as usize);
                (x, y, composite(x as f64 + 0.5, y as f64 + 0.5, ranks, &prepared, |r| &splats[order[r]], true))
            })
            .collect::<Vec<_>>()
    });
    let (w, h) = (cam.width, cam.height);
    let mut out = RenderOutput {
        color: Image::new(w, h),
        mean_depth: ScalarMap::new(w, h, 0.0),
        median_depth: ScalarMap::new(w, h, f64::NAN),
        accum_alpha: ScalarMap::new(w, h, 0.0),
        degenerate,
        state: None,
    };
    for (x, y, r) in tiles.into_iter().flatten() {
        out.color.set(x, y, r.color);
        out.mean_depth.set(x, y, r.mean_depth);
        out.median_depth.set(x, y, r.median_depth);
        out.accum_alpha.set(x, y, r.accum);
    }
    if degenerate > 0 {
        log::debug!("{degenerate} splats skipped for singular screen covariance");
    }
    if keep_state {
        out.state = Some(RenderState { order, bins });
    }
    out
}

/// Naive oracle: every pixel walks every splat in depth order, no tiling and
/// no early termination.
pub fn render_reference(splats: &[Splat2D], cam: &Camera) -> Image {
    let mut sorted: Vec<&Splat2D> = splats.iter().collect();
    sorted.sort_by(|a, b| a.depth_z.total_cmp(&b.depth_z).then(a.index.cmp(&b.index)));
    Image::from_fn(cam.width, cam.height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut t = 1.0;
        let mut rgb = [0.0; 3];
        for s in &sorted {
            let [xx, xy, yy] = s.cov2d;
            let det = xx * yy - xy * xy;
            if !(det > DET_MIN) || !det.is_finite() {
                continue;
            }
            let (dx, dy) = (px - s.mean2d[0], py - s.mean2d[1]);
            let power = -0.5 * (yy * dx * dx - 2.0 * xy * dx * dy + xx * dy * dy) / det;
            if power > 0.0 {
                continue;
            }
            let a = (s.alpha * power.exp()).min(ALPHA_MAX);
            if a < ALPHA_MIN {
                continue;
            }
            for c in 0..3 {
                rgb[c] += s.color[c] * a * t;
            }
            t *= 1.0 - a;
            if t < T_MIN {
                break;
            }
        }
        rgb
    })
}

struct Contribution {
    rank: usize,
    alpha: PixelAlpha,
    t_before: f64,
}

/// Gradients of a scalar loss with respect to every splat, given
/// `d_color = dL/d(color image)`. Recomputes compositing tile by tile.
pub fn render_backward(splats: &[Splat2D], out: &RenderOutput, cam: &Camera, d_color: &Image) -> Result<SplatGrads> {
    let state = out.state.as_ref().ok_or(Error::MissingForwardState("render"))?;
    if state.order.len() != splats.len() {
        return Err(Error::Shape(format!("forward state has {} splats, got {}", state.order.len(), splats.len())));
    }
    out.color.same_size(d_color)?;
    let order = &state.order;
    let prepared: Vec<Option<Prepared>> =
        order.iter().map(|&i| splats[i].conic().map(|conic| Prepared { mean: splats[i].mean2d, conic, alpha: splats[i].alpha })).collect();
    let tiling = Tiling::new(cam);
    let tile_grads = par::map_range(tiling.count(), |tile| {
        let bin = &state.bins[tile];
        let mut g = SplatGrads::zeros(bin.len());
        let mut contribs: Vec<Contribution> = Vec::new();
        for (x, y) in tile_pixels(tile, cam) {
            let dc = d_color.get(x, y);
            if dc == [0.0; 3] {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            contribs.clear();
            let mut t = 1.0;
            for (slot, &rank) in bin.iter().enumerate() {
                let Some(p) = &prepared[rank as usize] else { continue };
                let Some(a) = pixel_alpha(p, px, py) else { continue };
                contribs.push(Contribution { rank: slot, alpha: a, t_before: t });
                t *= 1.0 - a.value;
                if t < T_MIN {
                    break;
                }
            }
            let mut behind = [0.0; 3];
            for ct in contribs.iter().rev() {
                let slot = ct.rank;
                let rank = bin[slot] as usize;
                let s = &splats[order[rank]];
                let p = prepared[rank].as_ref().unwrap();
                let a = ct.alpha.value;
                let w = a * ct.t_before;
                let mut d_alpha = 0.0;
                for c in 0..3 {
                    g.color[slot][c] += w * dc[c];
                    d_alpha += dc[c] * (ct.t_before * s.color[c] - behind[c] / (1.0 - a));
                    behind[c] += s.color[c] * w;
                }
                if ct.alpha.clamped {
                    continue;
                }
                g.alpha[slot] += d_alpha * ct.alpha.gauss;
                let d_power = d_alpha * p.alpha * ct.alpha.gauss;
                let (dx, dy) = (ct.alpha.dx, ct.alpha.dy);
                let [qa, qb, qc] = p.conic;
                // power = -1/2 d^T Q d, d = pixel - mean
                g.mean2d[slot][0] += d_power * (qa * dx + qb * dy);
                g.mean2d[slot][1] += d_power * (qb * dx + qc * dy);
                // conic gradient, full-matrix convention; converted below
                g.cov2d[slot][0] += -0.5 * d_power * dx * dx;
                g.cov2d[slot][1] += -0.5 * d_power * dx * dy;
                g.cov2d[slot][2] += -0.5 * d_power * dy * dy;
            }
        }
        g
    });
    let n = splats.len();
    let mut by_rank = SplatGrads::zeros(n);
    for (tile, g) in tile_grads.into_iter().enumerate() {
        for (slot, &rank) in state.bins[tile].iter().enumerate() {
            let r = rank as usize;
            for k in 0..2 {
                by_rank.mean2d[r][k] += g.mean2d[slot][k];
            }
            for k in 0..3 {
                by_rank.cov2d[r][k] += g.cov2d[slot][k];
                by_rank.color[r][k] += g.color[slot][k];
            }
            by_rank.alpha[r] += g.alpha[slot];
        }
    }
    let mut grads = SplatGrads::zeros(n);
    for (rank, &si) in order.iter().enumerate() {
        grads.mean2d[si] = by_rank.mean2d[rank];
        grads.color[si] = by_rank.color[rank];
        grads.alpha[si] = by_rank.alpha[rank];
        if let Some(p) = &prepared[rank] {
            // d Sigma = -Q G Q
            let [a, b, c] = p.conic;
            let [ga, gb, gc] = by_rank.cov2d[rank];
            let qg00 = a * ga + b * gb;
            let qg01 = a * gb + b * gc;
            let qg10 = b * ga + c * gb;
            let qg11 = b * gb + c * gc;
            grads.cov2d[si] = [-(qg00 * a + qg01 * b), -(qg00 * b + qg01 * c), -(qg10 * b + qg11 * c)];
        }
    }
    Ok(grads)
}

/// Positional gradient norm in normalized device units, per splat.
pub fn screen_gradient_norms(grads: &SplatGrads, cam: &Camera) -> Vec<f64> {
    let (sx, sy) = (cam.width as f64 / 2.0, cam.height as f64 / 2.0);
    grads.mean2d.iter().map(|g| (g[0] * sx).hypot(g[1] * sy)).collect()
}
