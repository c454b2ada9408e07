use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use acdgcl_bench::{batch_fixture, mutag};
use acdgcl_core::eval::{embed_batch, embed_dataset, probe_table};
use acdgcl_core::objective::{info_nce_value, l_inv};
use acdgcl_core::train::{pgd_maximize, train_epoch, AdamState, EvalConfig};
use acdgcl_core::{init_params, Tape, TrainConfig};

fn encoder(c: &mut Criterion) {
    let ds = mutag();
    let fx = batch_fixture(&ds, 32);
    c.bench_function("encode_batch_32", |b| b.iter(|| embed_batch(&fx.params, &fx.clean).unwrap()));
    c.bench_function("encode_backward_batch_32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let m = fx.params.bind(&mut tape);
            let z1 = m.encode(&mut tape, &fx.view1, None).unwrap().z;
            let z2 = m.encode(&mut tape, &fx.view2, None).unwrap().z;
            let a = m.extract_inv(&mut tape, z1).unwrap();
            let b2 = m.extract_inv(&mut tape, z2).unwrap();
            let l = l_inv(&mut tape, a, b2, 0.2).unwrap();
            tape.backward(l).unwrap().collect(&m.vars).unwrap()
        })
    });
}

fn losses_and_attack(c: &mut Criterion) {
    let ds = mutag();
    let fx = batch_fixture(&ds, 32);
    let z1 = embed_batch(&fx.params, &fx.view1).unwrap();
    let z2 = embed_batch(&fx.params, &fx.view2).unwrap();
    c.bench_function("info_nce_32x32", |b| b.iter(|| info_nce_value(&z1, &z2, 0.2).unwrap()));
    let cfg = TrainConfig::default();
    c.bench_function("pgd_3_steps_batch_32", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        b.iter(|| pgd_maximize(&fx.clean, &fx.params, &z1, &z2, 0.2, &cfg.pgd, &mut rng).unwrap())
    });
}

fn training_and_probe(c: &mut Criterion) {
    let ds = mutag();
    let cfg = TrainConfig::default();
    let mut group = c.benchmark_group("mutag");
    group.sample_size(10);
    group.bench_function("train_epoch", |b| {
        b.iter_batched(
            || {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let params = init_params(&cfg.model, 7, &mut rng).unwrap();
                let state = AdamState::new(&params);
                (params, state, rng)
            },
            |(mut params, mut state, mut rng)| train_epoch(&ds, &mut params, &mut state, &cfg, &mut rng).unwrap(),
            BatchSize::LargeInput,
        )
    });
    let params = batch_fixture(&ds, 1).params;
    let table = embed_dataset(&params, &ds).unwrap();
    let eval = EvalConfig { folds: 10, seeds: vec![0] };
    group.bench_function("probe_10_folds", |b| b.iter(|| probe_table(&table, &eval, &cfg.probe).unwrap()));
    group.finish();
}

criterion_group!(benches, encoder, losses_and_attack, training_and_probe);
criterion_main!(benches);
