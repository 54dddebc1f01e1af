use criterion::{black_box, criterion_group, criterion_main, Criterion};
use hdrp_core::network::{ForwardMode, LayerSpec, Network, NetworkSpec};
use hdrp_core::neuron::{NeuronParams, RefractoryMode, SpikeActivation};
use hdrp_core::tensor::{conv2d, Tensor};
use hdrp_core::train::{backward_batch, softmax_cross_entropy, BackwardConfig};
use hdrp_core::Rng;

fn bench_matmul(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let a = Tensor::uniform(&mut rng, &[64, 64], -1.0, 1.0);
    let b = Tensor::uniform(&mut rng, &[64, 64], -1.0, 1.0);
    c.bench_function("matmul_64x64", |bench| {
        bench.iter(|| black_box(a.matmul(&b).unwrap()))
    });
}

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let input = Tensor::uniform(&mut rng, &[3, 32, 32], 0.0, 1.0);
    let kernels = Tensor::uniform(&mut rng, &[8, 3, 3, 3], -0.5, 0.5);
    c.bench_function("conv2d_3x32x32_8f", |bench| {
        bench.iter(|| black_box(conv2d(&input, &kernels, 1, 1).unwrap()))
    });
}

fn hdrp_net(mode: RefractoryMode) -> (Network, hdrp_core::ParamStore) {
    let spec = NetworkSpec {
        layers: vec![
            LayerSpec::Encoder { shape: vec![64] },
            LayerSpec::Dense {
                out: 128,
                neuron: NeuronParams::default(),
                mode,
            },
            LayerSpec::Dense {
                out: 64,
                neuron: NeuronParams::default(),
                mode,
            },
            LayerSpec::Readout { classes: 10 },
        ],
        timesteps: 4,
        seed: 3,
    };
    Network::build(&spec, &mut Rng::new(3)).unwrap()
}

fn bench_forward(c: &mut Criterion) {
    let mut rng = Rng::new(4);
    let x = Tensor::uniform(&mut rng, &[64], 0.0, 1.0);
    for (name, mode) in [
        ("forward_lif_t4", RefractoryMode::None),
        ("forward_hdrp_t4", RefractoryMode::Hdrp),
    ] {
        let (net, store) = hdrp_net(mode);
        c.bench_function(name, |bench| {
            bench.iter(|| {
                black_box(
                    net.forward_sample(&store, &x, ForwardMode::Inference, SpikeActivation::Hard)
                        .unwrap(),
                )
            })
        });
    }
}

fn bench_backward(c: &mut Criterion) {
    let (net, mut store) = hdrp_net(RefractoryMode::Hdrp);
    let mut rng = Rng::new(5);
    let inputs: Vec<Tensor> = (0..8)
        .map(|_| Tensor::uniform(&mut rng, &[64], 0.0, 1.0))
        .collect();
    let labels: Vec<usize> = (0..8).map(|i| i % 10).collect();
    c.bench_function("train_step_hdrp_b8_t4", |bench| {
        bench.iter(|| {
            let (logits, traces, _) = net
                .forward_batch(&store, &inputs, ForwardMode::Training, SpikeActivation::Hard)
                .unwrap();
            let (_, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
            store.zero_grads();
            backward_batch(&net, &mut store, &traces, &dlogits, &BackwardConfig::default())
                .unwrap();
            black_box(&store.grads);
        })
    });
}

criterion_group!(benches, bench_matmul, bench_conv2d, bench_forward, bench_backward);
criterion_main!(benches);
