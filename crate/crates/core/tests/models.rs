//! Model-level invariants on tiny configurations.

use termape::corpus::{read_sentences, write_sentences};
use termape::encode::{encode_plain, encode_source};
use termape::evalsuite::{evaluate, term_pct};
use termape::nn::checkpoint::{load_checkpoint, save_checkpoint};
use termape::pipeline::{do_nothing, run_schedule, ApeModel, DecodeOptions, Schedule};
use termape::synthgen::{SynthConfig, SyntheticData};
use termape::{Codec, ConstraintSet, EncodeMethod, ModelConfig, ModelKind, MstConfig, MstModel, TrainConfig, TrainVariant};

fn data() -> SyntheticData {
    SynthConfig {
        lexicon_size: 30,
        n_train: 200,
        n_test: 24,
        seed: 5,
        ..SynthConfig::default()
    }
    .generate()
    .unwrap()
}

fn tiny() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 64,
        factor_embed_dim: 8,
        ..ModelConfig::default()
    }
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        steps: 60,
        batch_size: 16,
        warmup: 20,
        ..TrainConfig::default()
    }
}

#[test]
fn unused_factor_rows_do_not_matter() {
    let d = data();
    let codec = Codec::build(&[&d.train], None);
    let mut m = MstModel::build(
        MstConfig {
            model: tiny(),
            variant: EncodeMethod::Plain,
        },
        codec,
    )
    .unwrap();
    let ex = m.examples(&d.train).unwrap();
    m.train(&ex, &quick_train()).unwrap();
    let before = m.postedit(&d.test, 1, 8).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    m.save(&path).unwrap();
    let (manifest, mut params) = load_checkpoint(&path).unwrap();
    let (_, shape, data) = params.iter_mut().find(|p| p.0 == "src_embed.factors").unwrap();
    let width = shape[1];
    // plain sources use factor 0 and MT uses factor 3; rows 1 and 2 are unused
    let (a, b) = data.split_at_mut(2 * width);
    a[width..2 * width].swap_with_slice(&mut b[..width]);
    let permuted = dir.path().join("p.ckpt");
    save_checkpoint(&permuted, &manifest, &params).unwrap();
    let after = MstModel::load(&permuted).unwrap().postedit(&d.test, 1, 8).unwrap();
    assert_eq!(before, after);
}

#[test]
fn constrained_models_accept_unconstrained_input() {
    let d = data();
    let codec = Codec::build(&[&d.train], None);
    let m = MstModel::build(
        MstConfig {
            model: tiny(),
            variant: EncodeMethod::Append,
        },
        codec,
    )
    .unwrap();
    let bare = d.test.with_constraint_sets(vec![ConstraintSet::empty(); d.test.len()]).unwrap();
    for t in bare.iter() {
        for method in [EncodeMethod::Append, EncodeMethod::Replace] {
            assert_eq!(encode_source(&t.src, &t.constraints, method), encode_plain(&t.src));
        }
    }
    assert_eq!(m.postedit(&bare, 2, 8).unwrap().len(), bare.len());
}

#[test]
fn do_nothing_term_matches_raw_mt_file() {
    let d = data();
    let dir = tempfile::tempdir().unwrap();
    let mt_path = dir.path().join("test.mt");
    write_sentences(&mt_path, &d.test.mt_column()).unwrap();
    let raw = read_sentences(&mt_path).unwrap();
    let sets = d.test.constraint_sets();
    let a = evaluate(&do_nothing(&d.test), &d.test.pe_column(), Some(&sets)).unwrap();
    assert_eq!(a.term_pct, term_pct(&raw, &sets).unwrap());
}

#[test]
fn schedule_is_reproducible_from_manifest() {
    let d = data();
    let (ft, _) = termape::corpus::holdout_split(&d.train, 150, 1).unwrap();
    let schedule = Schedule {
        pretrain_steps: 20,
        finetune_corpus: Some("ft".into()),
        finetune_steps: 10,
        upsample_factor: 2,
        pretrain_subset: 10,
        bpe_merges: Some(40),
        train: TrainConfig {
            batch_size: 8,
            warmup: 5,
            ..TrainConfig::default()
        },
        ..Schedule::default()
    };
    let run = |dir: &std::path::Path| {
        run_schedule(
            ModelKind::Levt,
            TrainVariant::MsLevt,
            &tiny(),
            &schedule,
            &d.train,
            Some(&ft),
            dir,
        )
        .unwrap()
    };
    let (a_dir, b_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = run(a_dir.path());
    let b = run(b_dir.path());
    assert_eq!(a.manifest.phases.len(), 2);
    assert_eq!(a.manifest.phases[1].corpus_size, 50 * 2 + 10);
    for (pa, pb) in a.manifest.phases.iter().zip(&b.manifest.phases) {
        assert_eq!(pa.checkpoint.sha256, pb.checkpoint.sha256);
        assert_eq!(pa.losses, pb.losses);
    }
    assert_eq!(a.manifest.data, b.manifest.data);

    let opts = DecodeOptions::default();
    let report = |m: &ApeModel| {
        let hyps = m.postedit(&d.test, &opts).unwrap();
        evaluate(&hyps, &d.test.pe_column(), Some(&d.test.constraint_sets()))
            .unwrap()
            .to_json()
    };
    let reloaded = ApeModel::load(&a.manifest.final_checkpoint).unwrap();
    assert_eq!(report(&a.model), report(&reloaded));
    assert_eq!(report(&a.model), report(&b.model));
}
