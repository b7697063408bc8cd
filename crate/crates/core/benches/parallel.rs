use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dualview::eval::{predict_split, EvalOptions};
use dualview::model::{batch_gradients, Ablations, LossNorm, Model};
use dualview::par::Parallelism;
use dualview::synth::SyntheticSpec;
use dualview::text::{prepare, Dataset, PrepConfig, Split, SplitSizes, SplitSpec, NUM_SPECIALS};
use dualview::train::{ModelArtifact, TrainConfig, TrainState};
use dualview::HyperParams;

fn setup() -> (Dataset, ModelArtifact) {
    let spec = SyntheticSpec {
        num_examples: 96,
        copy_rate: 0.3,
        ..SyntheticSpec::default()
    };
    let mut hp = HyperParams::default().with_dims(32, 64);
    hp.vocab_cap = spec.regular_words().len() + NUM_SPECIALS;
    hp.max_decode_depth = 10;
    let mut cfg = PrepConfig::new(hp.clone(), 0);
    cfg.split = SplitSpec::Sizes(SplitSizes { train: 64, valid: 16, test: 16 });
    let (data, _) = prepare(&spec.generate().unwrap(), &cfg).unwrap();
    let model = Model::new(hp.clone(), Ablations::none(), data.vocab.len(), 0).unwrap();
    let art = ModelArtifact {
        model,
        vocab: data.vocab.clone(),
        config: TrainConfig { hp, ..TrainConfig::default() },
        state: TrainState::default(),
    };
    (data, art)
}

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn gradients(c: &mut Criterion) {
    let (data, art) = setup();
    let batch: Vec<_> = data.train.iter().take(32).collect();
    let w = Some(art.model.hp.loss_weights);
    let mut group = c.benchmark_group("batch_gradients_32");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| batch_gradients(&art.model, &batch, w, Some(1), LossNorm::TokenMean, mode).unwrap())
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let (data, art) = setup();
    let mut group = c.benchmark_group("beam_inference_16");
    group.sample_size(10);
    for (name, mode) in MODES {
        let opts = EvalOptions {
            parallelism: mode,
            ..EvalOptions::from_hyper(&art.model.hp)
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| predict_split(&art, &data, Split::Test, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gradients, inference);
criterion_main!(benches);
