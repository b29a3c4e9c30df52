use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use termape::encode::{encode_append, encode_replace};
use termape::evalsuite::{bleu, corpus_ter};
use termape::levt::{apply_edits, oracle_edits, EditState};
use termape::subword::BpeModel;
use termape::synthgen::SynthConfig;
use termape::Corpus;

fn corpus() -> Corpus {
    SynthConfig {
        n_train: 500,
        n_test: 10,
        ..SynthConfig::default()
    }
    .generate()
    .unwrap()
    .train
}

fn metrics(c: &mut Criterion) {
    let data = corpus();
    let (mt, pe) = (data.mt_column(), data.pe_column());
    c.bench_function("ter_with_shifts_500", |b| b.iter(|| corpus_ter(black_box(&mt), black_box(&pe), true)));
    c.bench_function("ter_no_shifts_500", |b| b.iter(|| corpus_ter(black_box(&mt), black_box(&pe), false)));
    c.bench_function("bleu_500", |b| b.iter(|| bleu(black_box(&mt), black_box(&pe)).unwrap()));
}

fn oracle(c: &mut Criterion) {
    let data = corpus();
    let pairs: Vec<_> = data.iter().map(|t| (t.mt.0.clone(), t.pe.0.clone())).collect();
    c.bench_function("levt_oracle_apply_500", |b| {
        b.iter(|| {
            for (cur, reference) in &pairs {
                let actions = oracle_edits(cur, reference);
                let state = EditState::from_inner(cur.clone());
                black_box(apply_edits(&state, &actions).unwrap());
            }
        })
    });
}

fn subword(c: &mut Criterion) {
    let data = corpus();
    c.bench_function("bpe_train_200_merges", |b| {
        b.iter(|| BpeModel::train_on_corpora(&[black_box(&data)], 200).unwrap())
    });
    let bpe = BpeModel::train_on_corpora(&[&data], 200).unwrap();
    c.bench_function("bpe_apply_500", |b| {
        b.iter(|| {
            for t in data.iter() {
                black_box(bpe.apply(&t.pe));
            }
        })
    });
}

fn encoders(c: &mut Criterion) {
    let data = corpus();
    c.bench_function("encode_append_replace_500", |b| {
        b.iter(|| {
            for t in data.iter() {
                black_box(encode_append(&t.src, &t.constraints));
                black_box(encode_replace(&t.src, &t.constraints));
            }
        })
    });
}

criterion_group!(benches, metrics, oracle, subword, encoders);
criterion_main!(benches);
