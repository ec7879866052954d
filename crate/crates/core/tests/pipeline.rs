use ncelab::encoder::Encoder;
use ncelab::gaussdiag::normality_tests;
use ncelab::hgr::mildness_estimators;
use ncelab::io::{load_checkpoint, save_checkpoint, EmbeddingFile, Provenance};
use ncelab::synthdata::{channels, sample_laplace, sources, AugmentationChannel};
use ncelab::trainer::{held_out_embeddings, train_from, TrainConfig, TrainState};
use ncelab::Error;

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        eval_every: 2,
        batch_size: 32,
        eval_rows: 200,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn train_checkpoint_and_export() {
    let data = sample_laplace(1000, 32, 1).unwrap();
    let channel = AugmentationChannel::gaussian_mix(0.6);
    let config = small_config(4);
    let state = train_from(
        &data,
        &channel,
        TrainState::fresh(Encoder::linear(32, 8, 2).unwrap()),
        &config,
        |_| Ok(()),
    )
    .unwrap();
    assert_eq!(state.history.records.len(), 3);

    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("run.ncek");
    let prov = Provenance {
        config_hash: "abc".into(),
        seed: config.seed,
    };
    save_checkpoint(&ckpt, &state, Some(&prov)).unwrap();
    let (restored, header) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(restored.encoder.flat_params(), state.encoder.flat_params());
    assert_eq!(header.provenance, Some(prov));

    let held = held_out_embeddings(&restored.encoder, &data, &channel, &config).unwrap();
    let file = EmbeddingFile::new(held.clean.raw.clone(), false);
    let path = dir.path().join("emb.nceg");
    file.save(&path).unwrap();
    let back = EmbeddingFile::load(&path).unwrap();
    assert_eq!(back.data, held.clean.raw);
    assert_eq!((back.n(), back.d()), (200, 8));
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let data = sample_laplace(600, 16, 3).unwrap();
    let channel = AugmentationChannel::gaussian_mix(0.5);
    let fresh = || TrainState::fresh(Encoder::linear(16, 4, 1).unwrap());
    let full = train_from(&data, &channel, fresh(), &small_config(4), |_| Ok(())).unwrap();
    let half = train_from(&data, &channel, fresh(), &small_config(2), |_| Ok(())).unwrap();
    let resumed = train_from(&data, &channel, half, &small_config(4), |_| Ok(())).unwrap();
    assert_eq!(resumed.encoder.flat_params(), full.encoder.flat_params());
}

#[test]
fn registries_resolve_by_name() {
    for names in [
        sources().names(),
        channels().names(),
        normality_tests().names(),
        mildness_estimators().names(),
    ] {
        assert!(!names.is_empty());
    }
    assert!(normality_tests().contains("anderson_darling"));
    assert!(mildness_estimators().contains("binned_svd"));
    assert!(matches!(
        mildness_estimators().get("neural").err(),
        Some(Error::UnknownStrategy { .. })
    ));
}
