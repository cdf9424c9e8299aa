use criterion::{black_box, criterion_group, criterion_main, Criterion};
use interseq::model::EntityState;
use interseq::state::{encode_state, StateStore, StoreConfig};

fn value(i: u64) -> Vec<u8> {
    let s = EntityState::<f32> { layers: vec![vec![i as f32; 32], vec![0.5; 16]], last_event_ts: Some(i as i64) };
    encode_state(&s, 1)
}

fn store(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let s = StateStore::open(dir.path().join("bench.log"), StoreConfig { sync: false, ..Default::default() }).unwrap();
    let keys: Vec<Vec<u8>> = (0..10_000).map(|i| format!("card{i:06}").into_bytes()).collect();
    for (i, k) in keys.iter().enumerate() {
        s.put(k, value(i as u64)).unwrap();
    }
    s.flush().unwrap();

    let mut i = 0u64;
    c.bench_function("store/put", |b| {
        b.iter(|| {
            i += 1;
            s.put(&keys[(i % 10_000) as usize], value(i)).unwrap()
        })
    });
    s.flush().unwrap();
    let mut j = 0usize;
    c.bench_function("store/get_flushed", |b| {
        b.iter(|| {
            j = (j + 7919) % keys.len();
            black_box(s.get(&keys[j]).unwrap())
        })
    });
    c.bench_function("store/put_then_flush_256", |b| {
        b.iter(|| {
            for k in keys.iter().take(256) {
                s.put(k, value(3)).unwrap();
            }
            s.flush().unwrap()
        })
    });
}

criterion_group!(benches, store);
criterion_main!(benches);
