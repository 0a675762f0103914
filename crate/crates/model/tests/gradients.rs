use candle_core::{DType, Device, Tensor};
use occdiff_core::seeded_rng;
use occdiff_model::{
    check_gradients, fm_loss_with, stage_a_loss, FmDraw, FuncAeConfig, GradCheckConfig, Init, LatentEncoder, OccDecoder,
    ParamStore, PointEncoder, PointEncoderConfig, VelocityConfig, VelocityModel,
};
use rand::Rng;

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>(), shape, &Device::Cpu).unwrap()
}

#[test]
fn stage_a_loss_gradients_match_finite_differences() {
    let mut store = ParamStore::new(DType::F64, Device::Cpu);
    let mut init = Init::new(&mut store, 21);
    let pe_cfg = PointEncoderConfig { k: 4, edge_widths: vec![8, 8], centers: 6, width: 8, heads: 2, layers: 1, cond_dim: 8, coarse_points: 8 };
    let ae_cfg = FuncAeConfig { latent_dim: 8, cond_dim: 8, encoder_width: 8, decoder_width: 8, decoder_blocks: 2, ..Default::default() };
    let pe = PointEncoder::new(&mut init, "pointenc", &pe_cfg).unwrap();
    let le = LatentEncoder::new(&mut init, "latent", &ae_cfg).unwrap();
    let dec = OccDecoder::new(&mut init, "decoder", &ae_cfg).unwrap();

    let mut rng = seeded_rng(4);
    let (b, q) = (2, 16);
    let cloud = uniform(&mut rng, &[b, 20, 3], -0.5, 0.5);
    let pos = uniform(&mut rng, &[b, q, 3], -0.5, 0.5);
    let labels = Tensor::from_vec((0..b * q).map(|i| ((i * 5) % 3 == 0) as u8 as f64).collect::<Vec<_>>(), (b, q), &Device::Cpu).unwrap();
    let surface = uniform(&mut rng, &[b, 12, 3], -0.5, 0.5);

    let loss = || {
        let enc = pe.forward(&cloud)?;
        let z = le.forward(&pos, &labels, Some(&enc.cond))?;
        let logits = dec.logits(&z, &pos, Some(&enc.cond))?;
        Ok(stage_a_loss(&logits, &labels, &enc.coarse, &surface, 1000.0)?.total)
    };
    for prefix in ["decoder", "latent"] {
        let cfg = GradCheckConfig { seed: 8, ..Default::default() };
        for s in check_gradients(&store, prefix, &cfg, loss).unwrap() {
            assert!(s.rel_error <= 1e-3, "{s:?}");
        }
    }
}

#[test]
fn fm_loss_gradients_match_finite_differences() {
    let mut store = ParamStore::new(DType::F64, Device::Cpu);
    let cfg = VelocityConfig { latent_dim: 16, tokens: 4, token_width: 4, hidden: 8, depth: 2, heads: 2, cond_dim: 6, mlp_ratio: 2, freq_dim: 8 };
    let model = VelocityModel::new(&mut Init::new(&mut store, 3), "velocity", &cfg).unwrap();
    let mut rng = seeded_rng(12);
    let z1 = uniform(&mut rng, &[3, 16], -1.0, 1.0);
    let cond = uniform(&mut rng, &[3, 6], -1.0, 1.0);
    let draw = FmDraw::sample(3, 16, DType::F64, &Device::Cpu, &mut rng).unwrap();
    let loss = || fm_loss_with(&draw, &z1, Some(&cond), &model);
    let samples = check_gradients(&store, "velocity", &GradCheckConfig { seed: 1, ..Default::default() }, loss).unwrap();
    assert_eq!(samples.len(), 20);
    for s in samples {
        assert!(s.rel_error <= 1e-3, "{s:?}");
    }
}
