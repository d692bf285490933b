mod common;

use common::tiny_dims;
use grnmt::corpus::{gen_toy_task, ToyTask};
use grnmt::model::EncoderKind;
use grnmt::model_file::{load_checkpoint, load_model, save_checkpoint, save_model, Checkpoint, ModelFile};
use grnmt::numerics::Rng;
use grnmt::training::{init_model, TrainConfig, Trainer};
use grnmt::{Model64, ParamSet};

fn bits(m: &Model64) -> Vec<u64> {
    m.flatten().iter().map(|x| x.to_bits()).collect()
}

fn config(max_updates: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_updates,
        seed: 42,
        checkpoint_interval: 0,
        report_interval: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn model_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [EncoderKind::Rnn, EncoderKind::GrConv] {
        let m = init_model::<f64>(tiny_dims(kind, 6, 4, 7, 5), 3, 0.2).unwrap();
        let path = dir.path().join(format!("{kind}.bin"));
        save_model(&m, &path).unwrap();
        let back: Model64 = load_model(&path).unwrap();
        assert_eq!(back.dims(), m.dims());
        assert_eq!(bits(&back), bits(&m));
    }
}

#[test]
fn every_truncation_is_rejected() {
    let m = init_model::<f64>(tiny_dims(EncoderKind::GrConv, 3, 2, 3, 3), 1, 0.01).unwrap();
    let bytes = ModelFile::from_model(&m).to_bytes().unwrap();
    for cut in 0..bytes.len() {
        assert!(ModelFile::from_bytes(&bytes[..cut]).is_err(), "accepted a {cut}-byte prefix");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(ModelFile::from_bytes(&extra).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(ModelFile::from_bytes(&bad).is_err());
    assert!(ModelFile::from_bytes(&bytes).unwrap().into_model::<f64>().is_ok());
}

#[test]
fn non_finite_payload_is_rejected() {
    let m = init_model::<f64>(tiny_dims(EncoderKind::Rnn, 3, 2, 3, 3), 1, 0.01).unwrap();
    let mut bytes = ModelFile::from_model(&m).to_bytes().unwrap();
    let n = bytes.len();
    bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(ModelFile::from_bytes(&bytes).and_then(|f| f.into_model::<f64>()).is_err());
}

#[test]
fn resumed_training_matches_a_continuous_run() {
    let pairs = gen_toy_task(ToyTask::Reverse, 6, 2..=5, 64, &mut Rng::new(8)).unwrap();
    let dims = tiny_dims(EncoderKind::GrConv, 6, 4, 6, 6);
    let fresh = || init_model::<f64>(dims, 42, 0.1).unwrap();

    let mut continuous = Trainer::new(fresh(), config(60)).unwrap();
    let full_trace = continuous.run(&pairs, |_| Ok(true), |_| Ok(true)).unwrap();

    let mut first = Trainer::new(fresh(), config(30)).unwrap();
    let head = first.run(&pairs, |_| Ok(true), |_| Ok(true)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    save_checkpoint(
        &Checkpoint {
            model: first.model.clone(),
            optimizer: first.optimizer.clone(),
            updates: first.updates,
        },
        &path,
    )
    .unwrap();
    let ck = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(ck.updates, 30);
    let mut resumed = Trainer::resume(ck.model, ck.optimizer, config(60), ck.updates);
    let tail = resumed.run(&pairs, |_| Ok(true), |_| Ok(true)).unwrap();

    assert_eq!([head, tail].concat(), full_trace);
    assert_eq!(bits(&resumed.model), bits(&continuous.model));
}

#[test]
fn same_seed_same_trace_different_seed_different_trace() {
    let pairs = gen_toy_task(ToyTask::Copy, 6, 2..=5, 40, &mut Rng::new(2)).unwrap();
    let dims = tiny_dims(EncoderKind::Rnn, 5, 4, 6, 6);
    let run = |seed: u64| {
        let cfg = TrainConfig { seed, ..config(30) };
        let mut t = Trainer::new(init_model::<f64>(dims, seed, 0.01).unwrap(), cfg).unwrap();
        t.run(&pairs, |_| Ok(true), |_| Ok(true)).unwrap()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}
