//! Conditional point encoder: dynamic-graph edge convolutions over the
//! partial cloud, farthest-point downsampling, attention blocks, a pooled
//! global condition vector and a linear coarse-cloud head.

use candle_core::{DType, Tensor, D};

use crate::nn::{add_rows, check_finite, gelu, host3, LayerNorm, Linear, Mlp, SelfAttention};
use crate::params::Init;
use crate::{ModelError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoderConfig {
    /// Neighbourhood size of the feature-space kNN graph.
    pub k: usize,
    /// Output width of each edge-convolution layer.
    pub edge_widths: Vec<usize>,
    /// Tokens kept by farthest-point sampling.
    pub centers: usize,
    /// Attention width.
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    /// Length of the global condition vector.
    pub cond_dim: usize,
    /// Points in the coarse completion.
    pub coarse_points: usize,
}

impl Default for PointEncoderConfig {
    fn default() -> Self {
        PointEncoderConfig {
            k: 16,
            edge_widths: vec![64, 128, 256],
            centers: 128,
            width: 512,
            heads: 8,
            layers: 4,
            cond_dim: 512,
            coarse_points: 256,
        }
    }
}

/// Edge convolution `h_i = max_j σ(Θ_c x_i + Θ_n x_j + b)` over the k nearest
/// neighbours `j` of `i` in the current feature space.
///
/// This is the usual `Θ [x_i, x_j − x_i]` edge function with the two blocks
/// of Θ recombined, which lets the neighbour projection run once per point
/// instead of once per edge.
#[derive(Debug, Clone)]
struct EdgeConv {
    center: Linear,
    nbr: Linear,
}

impl EdgeConv {
    fn forward(&self, x: &Tensor, k: usize) -> Result<Tensor> {
        let (b, n, _) = x.dims3()?;
        let idx = knn_graph(&host3(x)?, k);
        let idx = Tensor::from_vec(idx, b * n * k, x.device())?;
        let out = self.center.out_dim();
        let nbr = self.nbr.forward(x)?.reshape((b * n, out))?.index_select(&idx, 0)?.reshape((b * n, k, out))?;
        let edge = add_rows(&nbr, &self.center.forward(x)?.reshape((b * n, out))?)?;
        Ok(gelu(&edge)?.max(1)?.reshape((b, n, out))?)
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: SelfAttention,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl Block {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.ln1.forward(x)?)?)?;
        Ok((&x + self.mlp.forward(&self.ln2.forward(&x)?)?)?)
    }
}

/// Output of [`PointEncoder::forward`].
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Global condition features, `(B, cond_dim)`.
    pub cond: Tensor,
    /// Coarse completions, `(B, coarse_points, 3)`.
    pub coarse: Tensor,
}

#[derive(Debug, Clone)]
pub struct PointEncoder {
    cfg: PointEncoderConfig,
    edges: Vec<EdgeConv>,
    pos_embed: Linear,
    feat_embed: Linear,
    blocks: Vec<Block>,
    norm: LayerNorm,
    pool: Linear,
    coarse: Linear,
}

impl PointEncoder {
    pub fn new(init: &mut Init, prefix: &str, cfg: &PointEncoderConfig) -> Result<Self> {
        if cfg.k == 0 || cfg.edge_widths.is_empty() || cfg.centers == 0 {
            return Err(ModelError::InvalidArgument("point encoder needs k, edge widths and centers".into()));
        }
        let mut edges = Vec::new();
        let mut c_in = 3;
        for (i, &w) in cfg.edge_widths.iter().enumerate() {
            edges.push(EdgeConv {
                center: Linear::new(init, &format!("{prefix}.edge{i}.center"), c_in, w)?,
                nbr: Linear::no_bias(init, &format!("{prefix}.edge{i}.nbr"), c_in, w)?,
            });
            c_in = w;
        }
        let feat_dim: usize = cfg.edge_widths.iter().sum();
        let d = cfg.width;
        let mut blocks = Vec::new();
        for i in 0..cfg.layers {
            let p = format!("{prefix}.block{i}");
            blocks.push(Block {
                ln1: LayerNorm::new(init, &format!("{p}.ln1"), d)?,
                attn: SelfAttention::new(init, &format!("{p}.attn"), d, cfg.heads)?,
                ln2: LayerNorm::new(init, &format!("{p}.ln2"), d)?,
                mlp: Mlp::new(init, &format!("{p}.mlp"), d, 2 * d, d)?,
            });
        }
        Ok(PointEncoder {
            cfg: cfg.clone(),
            edges,
            pos_embed: Linear::new(init, &format!("{prefix}.pos_embed"), 3, d)?,
            feat_embed: Linear::new(init, &format!("{prefix}.feat_embed"), feat_dim, d)?,
            blocks,
            norm: LayerNorm::new(init, &format!("{prefix}.norm"), d)?,
            pool: Linear::new(init, &format!("{prefix}.pool"), 2 * d, cfg.cond_dim)?,
            coarse: Linear::new(init, &format!("{prefix}.coarse"), cfg.cond_dim, 3 * cfg.coarse_points)?,
        })
    }

    pub fn config(&self) -> &PointEncoderConfig {
        &self.cfg
    }

    /// Encodes a batch of equally sized clouds `(B, N, 3)`.
    pub fn forward(&self, clouds: &Tensor) -> Result<Encoded> {
        let (b, n, c) = clouds.dims3()?;
        if c != 3 {
            return Err(ModelError::Shape(format!("clouds must be (B, N, 3), got {:?}", clouds.dims())));
        }
        if n < self.cfg.k + 1 {
            return Err(ModelError::TooFewPoints { got: n, min: self.cfg.k + 1 });
        }
        let mut x = clouds.clone();
        let mut feats = Vec::with_capacity(self.edges.len());
        for (i, e) in self.edges.iter().enumerate() {
            x = e.forward(&x, self.cfg.k)?;
            check_finite(&x, &format!("pointenc.edge{i}"))?;
            feats.push(x.clone());
        }
        let feats = Tensor::cat(&feats, D::Minus1)?;

        let m = self.cfg.centers.min(n);
        let pts = host3(clouds)?;
        let mut sel = Vec::with_capacity(b * m);
        for (bi, cloud) in pts.iter().enumerate() {
            sel.extend(farthest_point_sample(cloud, m).into_iter().map(|i| (bi * n + i) as u32));
        }
        let sel = Tensor::from_vec(sel, b * m, clouds.device())?;
        let centers = clouds.reshape((b * n, 3))?.index_select(&sel, 0)?.reshape((b, m, 3))?;
        let fdim = feats.dim(D::Minus1)?;
        let cfeat = feats.reshape((b * n, fdim))?.index_select(&sel, 0)?.reshape((b, m, fdim))?;

        let mut t = (self.pos_embed.forward(&centers)? + self.feat_embed.forward(&cfeat)?)?;
        for blk in &self.blocks {
            t = blk.forward(&t)?;
        }
        let t = self.norm.forward(&t)?;
        check_finite(&t, "pointenc.attention")?;
        let pooled = Tensor::cat(&[t.max(1)?, t.mean(1)?], D::Minus1)?;
        let cond = self.pool.forward(&pooled)?;
        let coarse = self.coarse.forward(&cond)?.reshape((b, self.cfg.coarse_points, 3))?;
        check_finite(&coarse, "pointenc.coarse")?;
        Ok(Encoded { cond, coarse })
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Flattened `(B·N·k)` neighbour indices into the `(B·N)` row space, ties
/// resolved toward the lower index. Each point is its own nearest neighbour.
fn knn_graph(x: &[Vec<Vec<f32>>], k: usize) -> Vec<u32> {
    let mut out = Vec::new();
    let mut order: Vec<(f32, u32)> = Vec::new();
    for (bi, cloud) in x.iter().enumerate() {
        let n = cloud.len();
        for p in cloud {
            order.clear();
            order.extend(cloud.iter().enumerate().map(|(j, q)| (sq_dist(p, q), j as u32)));
            let cmp = |a: &(f32, u32), b: &(f32, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            order.select_nth_unstable_by(k - 1, cmp);
            order[..k].sort_unstable_by(cmp);
            out.extend(order[..k].iter().map(|&(_, j)| (bi * n) as u32 + j));
        }
    }
    out
}

/// Greedy farthest-point sampling of `m` indices, seeded with the point
/// farthest from the centroid so the choice does not depend on input order.
pub fn farthest_point_sample<P: AsRef<[f32]>>(points: &[P], m: usize) -> Vec<usize> {
    let n = points.len();
    let m = m.min(n);
    if m == 0 {
        return Vec::new();
    }
    let mut centroid = [0.0f64; 3];
    for p in points {
        for (c, &v) in centroid.iter_mut().zip(p.as_ref()) {
            *c += v as f64 / n as f64;
        }
    }
    let dist_to = |p: &[f32], c: &[f64]| -> f64 { p.iter().zip(c).map(|(&a, &b)| (a as f64 - b).powi(2)).sum() };
    let argmax = |d: &[f64]| {
        let mut best = 0;
        for (i, &v) in d.iter().enumerate() {
            if v > d[best] {
                best = i;
            }
        }
        best
    };
    let from_centroid: Vec<f64> = points.iter().map(|p| dist_to(p.as_ref(), &centroid)).collect();
    let mut chosen = vec![argmax(&from_centroid)];
    let mut nearest = vec![f64::INFINITY; n];
    while chosen.len() < m {
        let last = points[*chosen.last().unwrap()].as_ref();
        let last64: Vec<f64> = last.iter().map(|&v| v as f64).collect();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist_to(p.as_ref(), &last64));
        }
        chosen.push(argmax(&nearest));
    }
    chosen
}

/// Index of the nearest point of `to` for every point of `from`, lowest
/// index on ties.
fn nearest_indices(from: &[Vec<f32>], to: &[Vec<f32>]) -> Vec<u32> {
    from.iter()
        .map(|p| {
            let mut best = (f32::INFINITY, 0u32);
            for (j, q) in to.iter().enumerate() {
                let d = sq_dist(p, q);
                if d < best.0 {
                    best = (d, j as u32);
                }
            }
            best.1
        })
        .collect()
}

/// Squared-distance Chamfer loss per batch element, `(B,)`:
/// mean over `q` of the squared distance to the nearest `g` point plus mean
/// over `g` of the squared distance to the nearest `q` point.
///
/// `q` is `(B, P, 3)` and carries the gradient; `g` is `(B, G, 3)`.
/// Correspondences are found on the host and then gathered, so the
/// gradient flows only through the selected pairs.
pub fn chamfer_l2(q: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (b, p, _) = q.dims3()?;
    let (bg, gn, _) = g.dims3()?;
    if b != bg {
        return Err(ModelError::Shape(format!("chamfer batch sizes differ: {b} vs {bg}")));
    }
    if p == 0 || gn == 0 {
        return Err(ModelError::Core(occdiff_core::Error::EmptyPointSet("chamfer_l2")));
    }
    let (qh, gh) = (host3(q)?, host3(g)?);
    let mut q_to_g = Vec::with_capacity(b * p);
    let mut g_to_q = Vec::with_capacity(b * gn);
    for bi in 0..b {
        q_to_g.extend(nearest_indices(&qh[bi], &gh[bi]).into_iter().map(|j| j + (bi * gn) as u32));
        g_to_q.extend(nearest_indices(&gh[bi], &qh[bi]).into_iter().map(|j| j + (bi * p) as u32));
    }
    let dev = q.device();
    let g_at_q = g.reshape((b * gn, 3))?.index_select(&Tensor::from_vec(q_to_g, b * p, dev)?, 0)?.reshape((b, p, 3))?;
    let q_at_g = q.reshape((b * p, 3))?.index_select(&Tensor::from_vec(g_to_q, b * gn, dev)?, 0)?.reshape((b, gn, 3))?;
    let forward = (q - g_at_q)?.sqr()?.sum(2)?.mean(1)?;
    let backward = (g - q_at_g)?.sqr()?.sum(2)?.mean(1)?;
    Ok((forward + backward)?)
}

/// Cosine similarity of two rank-1 tensors.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    let a = a.to_dtype(DType::F64)?.flatten_all()?;
    let b = b.to_dtype(DType::F64)?.flatten_all()?;
    let dot = (&a * &b)?.sum_all()?.to_scalar::<f64>()?;
    let na = a.sqr()?.sum_all()?.to_scalar::<f64>()?.sqrt();
    let nb = b.sqr()?.sum_all()?.to_scalar::<f64>()?.sqrt();
    Ok(dot / (na * nb).max(f64::MIN_POSITIVE))
}
