use waveformer::data::synth::SynthSpec;
use waveformer::model::{InputDims, ModelConfig, WaveFormer};
use waveformer::params::ForwardCtx;
use waveformer::trainer::{clip_grad_norm, Adam};

#[test]
fn one_step_lowers_first_batch_loss() {
    let spec = SynthSpec {
        num_samples: 16,
        length: 64,
        ..SynthSpec::default()
    };
    let (train, _) = spec.generate().unwrap();
    let idx: Vec<usize> = (0..train.len()).collect();
    let (x, y) = train.batch::<f64>(&idx);
    let cfg = ModelConfig {
        embed_dim: 16,
        heads: 2,
        layers: 1,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let dims = InputDims {
        channels: train.channels,
        length: train.length,
        classes: train.classes,
    };
    let mut lowered = 0;
    for seed in 0..20 {
        let mut model = WaveFormer::<f64>::new(cfg.clone(), dims, seed).unwrap();
        let loss = model
            .forward(&x, &mut ForwardCtx::eval())
            .unwrap()
            .cross_entropy(&y)
            .unwrap();
        let before = loss.item();
        model.params().zero_grad();
        loss.backward().unwrap();
        let mut grads = model.params().grads();
        clip_grad_norm(&mut grads, 1.0);
        let mut adam = Adam::new(model.params(), 0.9, 0.999, 1e-8);
        adam.step(model.params_mut(), &grads, 1e-3).unwrap();
        let after = model
            .forward(&x, &mut ForwardCtx::eval())
            .unwrap()
            .cross_entropy(&y)
            .unwrap()
            .item();
        if after < before {
            lowered += 1;
        }
    }
    assert!(lowered >= 18, "loss fell on only {lowered} of 20 seeds");
}
