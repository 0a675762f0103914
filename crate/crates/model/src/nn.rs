//! Small building blocks on top of candle tensors.

use candle_core::{CpuStorage, CustomOp1, CustomOp2, DType, Layout, Shape, Tensor, D};

use crate::params::Init;
use crate::{ModelError, Result};

/// Affine map stored as `(in, out)` so the forward pass needs no transpose.
#[derive(Debug, Clone)]
pub struct Linear {
    w: Tensor,
    b: Option<Tensor>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    /// PyTorch-style uniform init with bound `1/sqrt(in)`.
    pub fn new(init: &mut Init, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = init.uniform(&format!("{name}.weight"), &[in_dim, out_dim], bound)?;
        let b = init.uniform(&format!("{name}.bias"), &[out_dim], bound)?;
        Ok(Linear { w, b: Some(b), in_dim, out_dim })
    }

    pub fn no_bias(init: &mut Init, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = init.uniform(&format!("{name}.weight"), &[in_dim, out_dim], bound)?;
        Ok(Linear { w, b: None, in_dim, out_dim })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Applies to the last axis of a tensor of any rank.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let last = *dims.last().ok_or_else(|| ModelError::Shape("linear on a scalar".into()))?;
        if last != self.in_dim {
            return Err(ModelError::Shape(format!("linear expects last dim {}, got {:?}", self.in_dim, dims)));
        }
        let rows = x.elem_count() / last;
        let y = x.reshape((rows, last))?.matmul(&self.w)?;
        let y = match &self.b {
            Some(b) => add_rows(&y.unsqueeze(0)?, &b.unsqueeze(0)?)?,
            None => y,
        };
        let mut out = dims;
        *out.last_mut().unwrap() = self.out_dim;
        Ok(y.reshape(out)?)
    }
}

/// Layer normalization over the last axis, optionally without affine terms.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    affine: Option<(Tensor, Tensor)>,
    eps: f64,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Result<Self> {
        let g = init.constant(&format!("{name}.gamma"), &[dim], 1.0)?;
        let b = init.constant(&format!("{name}.beta"), &[dim], 0.0)?;
        Ok(LayerNorm { affine: Some((g, b)), eps: 1e-6 })
    }

    pub fn plain() -> Self {
        LayerNorm { affine: None, eps: 1e-6 }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let y = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        match &self.affine {
            Some((g, b)) => Ok(y.broadcast_mul(g)?.broadcast_add(b)?),
            None => Ok(y),
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

// 0.5·(1 + tanh u) = σ(2u), so both directions need a single exp.
macro_rules! gelu_kernels {
    ($fwd:ident, $slope:ident, $t:ty) => {
        fn $fwd(x: $t) -> $t {
            let u = SQRT_2_OVER_PI as $t * (x + GELU_C as $t * x * x * x);
            x / (1.0 + (-2.0 * u).exp())
        }

        fn $slope(x: $t) -> $t {
            let u = SQRT_2_OVER_PI as $t * (x + GELU_C as $t * x * x * x);
            let s = 1.0 / (1.0 + (-2.0 * u).exp());
            s + 2.0 * x * s * (1.0 - s) * SQRT_2_OVER_PI as $t * (1.0 + 3.0 * GELU_C as $t * x * x)
        }
    };
}

gelu_kernels!(gelu_f32, gelu_slope_f32, f32);
gelu_kernels!(gelu_f64, gelu_slope_f64, f64);

fn contiguous_slice<'a, T>(v: &'a [T], l: &Layout, op: &str) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => Err(candle_core::Error::Msg(format!("{op} needs a contiguous input"))),
    }
}

/// Tanh-approximated GELU in one pass, with a fused backward. The composite
/// backward of the built-in op is several times slower than the forward.
struct Gelu;

impl CustomOp1 for Gelu {
    fn name(&self) -> &'static str {
        "gelu-fused"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(contiguous_slice(v, l, "gelu")?.iter().map(|&x| gelu_f32(x)).collect()),
            CpuStorage::F64(v) => CpuStorage::F64(contiguous_slice(v, l, "gelu")?.iter().map(|&x| gelu_f64(x)).collect()),
            _ => return Err(candle_core::Error::Msg("gelu supports f32 and f64".into())),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(arg.apply_op2_no_bwd(&grad.contiguous()?, &GeluGrad)?))
    }
}

/// `grad · gelu'(x)`.
struct GeluGrad;

impl CustomOp2 for GeluGrad {
    fn name(&self) -> &'static str {
        "gelu-fused-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(g)) => {
                let (x, g) = (contiguous_slice(x, l1, "gelu grad")?, contiguous_slice(g, l2, "gelu grad")?);
                CpuStorage::F32(x.iter().zip(g).map(|(&x, &g)| gelu_slope_f32(x) * g).collect())
            }
            (CpuStorage::F64(x), CpuStorage::F64(g)) => {
                let (x, g) = (contiguous_slice(x, l1, "gelu grad")?, contiguous_slice(g, l2, "gelu grad")?);
                CpuStorage::F64(x.iter().zip(g).map(|(&x, &g)| gelu_slope_f64(x) * g).collect())
            }
            _ => return Err(candle_core::Error::Msg("gelu grad dtype mismatch".into())),
        };
        Ok((out, l1.shape().clone()))
    }
}

/// Tanh-approximated GELU. CPU tensors use the fused kernel; other devices
/// fall back to the built-in op.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    if x.device().is_cpu() && matches!(x.dtype(), DType::F32 | DType::F64) {
        Ok(x.contiguous()?.apply_op1(Gelu)?)
    } else {
        Ok(x.gelu()?)
    }
}

/// `x (O, R, D) + b (O, D)`, broadcasting `b` over the rows of each group.
struct RowAdd;

/// Row sums of `g (O, R, D)` as `(O, D)`.
struct RowSum;

macro_rules! row_kernels {
    ($add:ident, $sum:ident, $t:ty) => {
        fn $add(x: &[$t], b: &[$t], d: usize) -> Vec<$t> {
            let per = x.len() / b.len() * d;
            let mut out = x.to_vec();
            for (group, bias) in out.chunks_mut(per).zip(b.chunks(d)) {
                for row in group.chunks_mut(d) {
                    for (y, &c) in row.iter_mut().zip(bias) {
                        *y += c;
                    }
                }
            }
            out
        }

        fn $sum(g: &[$t], o: usize, d: usize) -> Vec<$t> {
            let mut out = vec![0.0; o * d];
            for (group, acc) in g.chunks(g.len() / o).zip(out.chunks_mut(d)) {
                for row in group.chunks(d) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
            }
            out
        }
    };
}

row_kernels!(row_add_f32, row_sum_f32, f32);
row_kernels!(row_add_f64, row_sum_f64, f64);

impl CustomOp2 for RowAdd {
    fn name(&self) -> &'static str {
        "row-add"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = l2.dims()[1];
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(b)) => CpuStorage::F32(row_add_f32(contiguous_slice(x, l1, "row add")?, contiguous_slice(b, l2, "row add")?, d)),
            (CpuStorage::F64(x), CpuStorage::F64(b)) => CpuStorage::F64(row_add_f64(contiguous_slice(x, l1, "row add")?, contiguous_slice(b, l2, "row add")?, d)),
            _ => return Err(candle_core::Error::Msg("row add dtype mismatch".into())),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(&self, _x: &Tensor, _b: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let gb = grad.apply_op1_no_bwd(&RowSum)?;
        Ok((Some(grad), Some(gb)))
    }
}

impl CustomOp1 for RowSum {
    fn name(&self) -> &'static str {
        "row-sum"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let &[o, _, d] = l.dims() else {
            return Err(candle_core::Error::Msg("row sum needs rank 3".into()));
        };
        let out = match s {
            CpuStorage::F32(g) => CpuStorage::F32(row_sum_f32(contiguous_slice(g, l, "row sum")?, o, d)),
            CpuStorage::F64(g) => CpuStorage::F64(row_sum_f64(contiguous_slice(g, l, "row sum")?, o, d)),
            _ => return Err(candle_core::Error::Msg("row sum supports f32 and f64".into())),
        };
        Ok((out, Shape::from((o, d))))
    }
}

/// `x (O, R, D) + b (O, D)` with `b` repeated over the `R` rows of each
/// group. CPU tensors use a fused kernel whose gradient for `b` is a plain
/// row sum.
pub fn add_rows(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (o, _, d) = x.dims3()?;
    if b.dims() != [o, d] {
        return Err(ModelError::Shape(format!("row add of {:?} onto {:?}", b.dims(), x.dims())));
    }
    if x.device().is_cpu() && matches!(x.dtype(), DType::F32 | DType::F64) {
        Ok(x.contiguous()?.apply_op2(&b.contiguous()?, RowAdd)?)
    } else {
        Ok(x.broadcast_add(&b.unsqueeze(1)?)?)
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, dim: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(init, &format!("{name}.fc1"), dim, hidden)?,
            fc2: Linear::new(init, &format!("{name}.fc2"), hidden, out)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&gelu(&self.fc1.forward(x)?)?)
    }
}

/// Multi-head self-attention over `(B, T, D)` tokens.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
}

impl SelfAttention {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(ModelError::InvalidArgument(format!("width {dim} not divisible by {heads} heads")));
        }
        Ok(SelfAttention {
            qkv: Linear::new(init, &format!("{name}.qkv"), dim, 3 * dim)?,
            proj: Linear::new(init, &format!("{name}.proj"), dim, dim)?,
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let dh = d / self.heads;
        // (B, T, 3, H, dh) -> three (B, H, T, dh)
        let qkv = self.qkv.forward(x)?.reshape((b, t, 3, self.heads, dh))?;
        let part = |i: usize| -> Result<Tensor> { Ok(qkv.narrow(2, i, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?) };
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let y = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, t, d))?;
        self.proj.forward(&y)
    }
}

/// Fails with the layer name when `x` holds a NaN or infinity.
pub fn check_finite(x: &Tensor, layer: &str) -> Result<()> {
    let s = x.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite { layer: layer.to_string() })
    }
}

/// Row-major host copy of a rank-3 tensor as `f32`.
pub(crate) fn host3(x: &Tensor) -> Result<Vec<Vec<Vec<f32>>>> {
    Ok(x.to_dtype(DType::F32)?.to_vec3()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use candle_core::{Device, Var};

    #[test]
    fn linear_handles_any_rank() {
        let mut store = ParamStore::new(DType::F64, Device::Cpu);
        let mut init = Init::new(&mut store, 1);
        let l = Linear::new(&mut init, "l", 4, 3).unwrap();
        let x = Tensor::ones((2, 5, 4), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(l.forward(&x).unwrap().dims(), &[2, 5, 3]);
        let bad = Tensor::ones((2, 5), DType::F64, &Device::Cpu).unwrap();
        assert!(l.forward(&bad).is_err());
    }

    #[test]
    fn layer_norm_standardizes() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 4.0]], &Device::Cpu).unwrap();
        let y: Vec<Vec<f64>> = LayerNorm::plain().forward(&x).unwrap().to_vec2().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        let var: f64 = y[0].iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn attention_is_token_equivariant() {
        let mut store = ParamStore::new(DType::F64, Device::Cpu);
        let mut init = Init::new(&mut store, 3);
        let att = SelfAttention::new(&mut init, "a", 8, 2).unwrap();
        let x = Tensor::arange(0.0f64, 24.0, &Device::Cpu).unwrap().reshape((1, 3, 8)).unwrap();
        let x = (x / 10.0).unwrap().sin().unwrap();
        let perm = Tensor::new(&[2u32, 0, 1], &Device::Cpu).unwrap();
        let y = att.forward(&x).unwrap().index_select(&perm, 1).unwrap();
        let y2 = att.forward(&x.index_select(&perm, 1).unwrap()).unwrap();
        let diff = (y - y2).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12);
    }

    #[test]
    fn non_finite_is_named() {
        let x = Tensor::new(&[1.0f32, f32::NAN], &Device::Cpu).unwrap();
        let err = check_finite(&x, "decoder.out").unwrap_err();
        assert!(err.to_string().contains("decoder.out"));
    }

    #[test]
    fn fused_gelu_matches_builtin() {
        let xs: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.15).collect();
        let x = Var::from_vec(xs.clone(), xs.len(), &Device::Cpu).unwrap();
        let ours = gelu(x.as_tensor()).unwrap();
        let theirs = x.as_tensor().gelu().unwrap();
        let diff = (&ours - &theirs).unwrap().abs().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12, "{diff}");
        // gradient against central differences of the built-in forward
        let g = ours.sum_all().unwrap().backward().unwrap().get(&x).unwrap().to_vec1::<f64>().unwrap();
        let h = 1e-5;
        let f = |v: f64| Tensor::new(&[v], &Device::Cpu).unwrap().gelu().unwrap().to_vec1::<f64>().unwrap()[0];
        for (xi, gi) in xs.iter().zip(&g) {
            let num = (f(xi + h) - f(xi - h)) / (2.0 * h);
            assert!((gi - num).abs() < 1e-9, "x {xi}: {gi} vs {num}");
        }
    }

    #[test]
    fn fused_gelu_handles_strided_input() {
        let x = Tensor::arange(0f32, 12.0, &Device::Cpu).unwrap().reshape((3, 4)).unwrap().t().unwrap();
        let a = gelu(&x).unwrap().to_vec2::<f32>().unwrap();
        let b = x.gelu().unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(a.len(), 4);
        for (r, q) in a.iter().zip(&b) {
            for (u, v) in r.iter().zip(q) {
                assert!((u - v).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn row_add_matches_broadcast_add() {
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::arange(0f64, 24.0, &dev).unwrap().reshape((2, 3, 4)).unwrap()).unwrap();
        let b = Var::from_tensor(&Tensor::new(&[[1.0f64, -2.0, 3.0, 0.5], [0.25, 4.0, -1.0, 2.0]], &dev).unwrap()).unwrap();
        let w = Tensor::arange(1f64, 25.0, &dev).unwrap().reshape((2, 3, 4)).unwrap().sqrt().unwrap();
        let fused = add_rows(x.as_tensor(), b.as_tensor()).unwrap();
        let plain = x.as_tensor().broadcast_add(&b.as_tensor().unsqueeze(1).unwrap()).unwrap();
        assert_eq!(fused.to_vec3::<f64>().unwrap(), plain.to_vec3::<f64>().unwrap());
        let g1 = (&fused * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let g2 = (&plain * &w).unwrap().sum_all().unwrap().backward().unwrap();
        for v in [&x, &b] {
            let (a, c) = (g1.get(v).unwrap(), g2.get(v).unwrap());
            let diff = (a - c).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
            assert!(diff < 1e-12);
        }
        assert!(add_rows(x.as_tensor(), &Tensor::zeros((2, 3), DType::F64, &dev).unwrap()).is_err());
    }
}
