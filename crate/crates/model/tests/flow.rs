use candle_core::{DType, Device, Tensor};
use occdiff_core::seeded_rng;
use occdiff_model::{
    euler_sample, fm_loss, interpolate, FmDraw, Init, ParamStore, Result, SamplerConfig, VelocityConfig, VelocityField,
    VelocityModel,
};
use proptest::prelude::*;

struct Decay;

impl VelocityField for Decay {
    fn velocity(&self, z: &Tensor, _t: &Tensor, _c: Option<&Tensor>) -> Result<Tensor> {
        Ok(z.neg()?)
    }
}

struct Constant(Tensor);

impl VelocityField for Constant {
    fn velocity(&self, z: &Tensor, _t: &Tensor, _c: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.0.broadcast_as(z.shape())?.contiguous()?)
    }
}

struct Zero;

impl VelocityField for Zero {
    fn velocity(&self, z: &Tensor, _t: &Tensor, _c: Option<&Tensor>) -> Result<Tensor> {
        Ok(z.zeros_like()?)
    }
}

/// Knows the endpoint and recovers `z1 − z0 = (z1 − z_t) / (1 − t)`.
struct Oracle(Tensor);

impl VelocityField for Oracle {
    fn velocity(&self, z: &Tensor, t: &Tensor, _c: Option<&Tensor>) -> Result<Tensor> {
        Ok((&self.0 - z)?.broadcast_div(&(1.0 - t.unsqueeze(1)?)?)?)
    }
}

fn z0(dim: usize) -> Tensor {
    let v: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.61).sin() + 0.5).collect();
    Tensor::from_vec(v, (1, dim), &Device::Cpu).unwrap()
}

fn max_abs(t: &Tensor) -> f64 {
    t.abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
}

#[test]
fn euler_is_first_order_on_linear_decay() {
    let z = z0(16);
    let exact = (&z * (-1.0f64).exp()).unwrap();
    let err = |n: usize| {
        let out = euler_sample(&z, None, &Decay, &SamplerConfig::new(n).unwrap()).unwrap();
        max_abs(&(out - &exact).unwrap())
    };
    let errs: Vec<f64> = [10, 20, 40, 80].iter().map(|&n| err(n)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((0.8..=1.2).contains(&order), "order {order} from {errs:?}");
    }
}

#[test]
fn euler_is_exact_on_constant_fields() {
    let z = z0(8);
    let v = Tensor::from_vec((0..8).map(|i| i as f64 * 0.125 - 0.3).collect::<Vec<_>>(), (1, 8), &Device::Cpu).unwrap();
    let expected = (&z + &v).unwrap();
    for n in [1, 3, 7, 50] {
        let out = euler_sample(&z, None, &Constant(v.clone()), &SamplerConfig::new(n).unwrap()).unwrap();
        assert!(max_abs(&(out - &expected).unwrap()) <= 1e-12, "N = {n}");
    }
}

#[test]
fn single_step_is_one_evaluation() {
    let z = z0(8);
    let out = euler_sample(&z, None, &Decay, &SamplerConfig::new(1).unwrap()).unwrap();
    assert_eq!(max_abs(&out), 0.0);
}

#[test]
fn oracle_velocity_has_zero_loss() {
    let dev = Device::Cpu;
    let z1 = Tensor::from_vec((0..4 * 128).map(|i| (i as f64 * 0.013).cos()).collect::<Vec<_>>(), (4, 128), &dev).unwrap();
    let mut rng = seeded_rng(9);
    for _ in 0..20 {
        let l = fm_loss(&z1, None, &Oracle(z1.clone()), &mut rng).unwrap().to_scalar::<f64>().unwrap();
        assert!(l <= 1e-12, "{l}");
    }
}

#[test]
fn zero_model_loss_is_latent_dim() {
    let d = 128;
    let z1 = Tensor::zeros((10_000, d), DType::F64, &Device::Cpu).unwrap();
    let l = fm_loss(&z1, None, &Zero, &mut seeded_rng(1)).unwrap().to_scalar::<f64>().unwrap();
    assert!((l - d as f64).abs() <= 0.05 * d as f64, "{l}");
}

fn tiny_dit() -> (ParamStore, VelocityModel) {
    let mut store = ParamStore::new(DType::F64, Device::Cpu);
    let cfg = VelocityConfig { hidden: 32, depth: 2, heads: 4, cond_dim: 16, freq_dim: 32, ..Default::default() };
    let m = VelocityModel::new(&mut Init::new(&mut store, 11), "velocity", &cfg).unwrap();
    (store, m)
}

#[test]
fn velocity_responds_to_condition_and_time() {
    let (_s, m) = tiny_dit();
    let dev = Device::Cpu;
    let z = z0(128);
    let c1 = Tensor::ones((1, 16), DType::F64, &dev).unwrap();
    let c2 = Tensor::from_vec((0..16).map(|i| i as f64 / 8.0 - 1.0).collect::<Vec<_>>(), (1, 16), &dev).unwrap();
    let t = |v: f64| Tensor::new(&[v], &dev).unwrap();
    let a = m.velocity(&z, &t(0.3), Some(&c1)).unwrap();
    assert_eq!(a.dims(), &[1, 128]);
    let b = m.velocity(&z, &t(0.3), Some(&c2)).unwrap();
    let c = m.velocity(&z, &t(0.7), Some(&c1)).unwrap();
    assert!(max_abs(&(&a - b).unwrap()) > 0.0);
    assert!(max_abs(&(&a - c).unwrap()) > 0.0);
}

#[test]
fn velocity_rejects_wrong_latent_width() {
    let (_s, m) = tiny_dit();
    let dev = Device::Cpu;
    let z = z0(64);
    let c = Tensor::ones((1, 16), DType::F64, &dev).unwrap();
    assert!(m.velocity(&z, &Tensor::new(&[0.5f64], &dev).unwrap(), Some(&c)).is_err());
}

#[test]
fn same_draw_same_loss() {
    let (_s, m) = tiny_dit();
    let dev = Device::Cpu;
    let z1 = Tensor::from_vec((0..256).map(|i| (i as f64 * 0.1).sin()).collect::<Vec<_>>(), (2, 128), &dev).unwrap();
    let c = Tensor::ones((2, 16), DType::F64, &dev).unwrap();
    let a = fm_loss(&z1, Some(&c), &m, &mut seeded_rng(3)).unwrap().to_scalar::<f64>().unwrap();
    let b = fm_loss(&z1, Some(&c), &m, &mut seeded_rng(3)).unwrap().to_scalar::<f64>().unwrap();
    assert_eq!(a, b);
    let draw = FmDraw::sample(2, 128, DType::F64, &dev, &mut seeded_rng(3)).unwrap();
    let t: Vec<f64> = draw.t.to_vec1().unwrap();
    assert!(t.iter().all(|v| (0.0..1.0).contains(v)));
}

proptest! {
    #[test]
    fn interpolation_is_affine(t in 0.0f64..=1.0, a in proptest::collection::vec(-5.0f64..5.0, 6), b in proptest::collection::vec(-5.0f64..5.0, 6)) {
        let s = interpolate(&a, &b, t).unwrap();
        for i in 0..6 {
            prop_assert!((s.z[i] - (a[i] + t * (b[i] - a[i]))).abs() < 1e-12);
        }
        prop_assert_eq!(s.t, t);
    }
}
