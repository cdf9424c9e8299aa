use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use interseq::model::Real;
use interseq::train::{train_step, AdamState, Batch, CardRef, TrainSeq};
use interseq_bench::fixture;

fn step<F: Real>(c: &mut Criterion, name: &str) {
    let fx = fixture::<F>(50, 30.0, 1);
    let rec = fx.store.records.iter().max_by_key(|r| r.len()).unwrap();
    let fv = rec.events[0].fv.clone();
    let mut state = fx.model.zero_state();
    let mut trace = fx.model.new_trace();
    c.bench_function(&format!("step/{name}"), |b| b.iter(|| fx.model.step(black_box(&fv), &mut state, &mut trace).unwrap()));

    let fvs = rec.fvs();
    c.bench_function(&format!("score_sequence_{}/{name}", fvs.len()), |b| {
        b.iter(|| fx.model.score_sequence(black_box(&fvs), &mut fx.model.zero_state()).unwrap())
    });
}

fn steps(c: &mut Criterion) {
    step::<f32>(c, "f32");
    step::<f64>(c, "f64");
}

fn training(c: &mut Criterion) {
    let fx = fixture::<f32>(200, 30.0, 2);
    let seqs: Vec<TrainSeq> = fx.store.records.iter().take(20).map(|r| TrainSeq::from_record(r, 100)).collect();
    let max_len = seqs.iter().map(TrainSeq::len).max().unwrap();
    let batch = Batch { cards: (0..seqs.len()).map(CardRef::NonFraud).collect(), seqs, max_len };
    let adam = AdamState::new(&fx.model.config);
    c.bench_function("train_step/20_cards_cutoff_100", |b| {
        b.iter_batched(
            || (fx.model.clone(), adam.clone()),
            |(mut m, mut a)| train_step(&mut m, &batch, &mut a, 1e-3).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, steps, training);
criterion_main!(benches);
