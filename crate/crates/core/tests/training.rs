use latentwave::data::dataset::generate;
use latentwave::data::DatasetSpec;
use latentwave::model::{Model, ModelConfig};
use latentwave::train::{evaluate, mean_measurement, predict, train, Checkpoint, TrainConfig};

fn small_cfg(epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.epochs = epochs;
    cfg.batch_size = 2;
    cfg.lr = 1e-3;
    cfg
}

#[test]
fn ct_training_reduces_loss_and_checkpoints_round_trip() {
    let (tr, te) = generate(&DatasetSpec::ct_desk(6, 2, 3)).unwrap();
    let mc = ModelConfig::preset("ct-desk").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = train(Model::<f64>::new(mc, 0).unwrap(), &tr, Some(&te), &small_cfg(4), Some(dir.path())).unwrap();
    let first = out.log.epochs.first().unwrap().total();
    let last = out.log.epochs.last().unwrap().total();
    assert!(last < first, "loss {first} → {last}");
    assert_eq!(out.log.eval.len(), 4);

    let ck = Checkpoint::<f64>::read(&dir.path().join("final.lwc")).unwrap();
    assert_eq!(ck.epoch, 4);
    assert_eq!(ck.model.params, out.checkpoint.model.params);
    assert_eq!(ck.model.reference, out.checkpoint.model.reference);
    assert_eq!(evaluate(&ck.model, &te).unwrap(), evaluate(&out.checkpoint.model, &te).unwrap());
}

#[test]
fn identical_configs_train_bit_identically() {
    let (tr, _) = generate(&DatasetSpec::ct_desk(4, 1, 8)).unwrap();
    let mc = ModelConfig::preset("ct-desk").unwrap();
    let run = || train(Model::<f32>::new(mc.clone(), 2).unwrap(), &tr, None, &small_cfg(2), None).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.checkpoint.model.params, b.checkpoint.model.params);
    assert_eq!(a.log.to_csv(), b.log.to_csv());
}

#[test]
fn shape_mismatch_is_a_config_error() {
    let (tr, _) = generate(&DatasetSpec::ct_desk(2, 1, 1)).unwrap();
    let mc = ModelConfig::preset("fwi-desk").unwrap();
    let Err(err) = train(Model::<f32>::new(mc, 0).unwrap(), &tr, None, &small_cfg(1), None) else {
        panic!("fwi model accepted ct data");
    };
    assert!(matches!(err, latentwave::Error::Config(_)), "{err}");
}

#[test]
fn training_sets_the_input_reference_to_the_train_mean() {
    let (tr, te) = generate(&DatasetSpec::ct_desk(3, 1, 4)).unwrap();
    let mc = ModelConfig::preset("ct-desk").unwrap();
    let m = Model::<f64>::new(mc, 1).unwrap();
    assert!(m.reference.is_none());
    let out = train(m, &tr, None, &small_cfg(1), None).unwrap();
    let r = out.checkpoint.model.reference.clone().unwrap();
    let direct: Vec<f64> = (0..tr.measurement_numel())
        .map(|j| (0..3).map(|i| tr.measurement::<f64>(i)[j]).sum::<f64>() / 3.0)
        .collect();
    assert_eq!(r, mean_measurement(&tr));
    assert!(r.iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-12));

    // a model that already has one keeps it
    let again = train(out.checkpoint.model.clone(), &te, None, &small_cfg(1), None).unwrap();
    assert_eq!(again.checkpoint.model.reference.as_ref(), Some(&r));
}

#[test]
fn reference_shifts_the_encoder_input() {
    let (tr, _) = generate(&DatasetSpec::ct_desk(2, 1, 5)).unwrap();
    let mc = ModelConfig::preset("ct-desk").unwrap();
    let r: Vec<f64> = tr.measurement::<f64>(1);
    let with = Model::<f64>::new(mc.clone(), 3).unwrap().with_reference(r.clone()).unwrap();
    let (pm, pp) = predict(&with, &tr, 0).unwrap();

    let x: Vec<f64> = tr.measurement::<f64>(0).iter().zip(&r).map(|(a, b)| a - b).collect();
    let plain = Model::<f64>::new(mc.clone(), 3).unwrap();
    let (g, f) = plain.infer(&x).unwrap();
    assert_eq!(g.value(f.measurement).data(), &pm[..]);
    assert_eq!(g.value(f.property).data(), &pp[..]);

    assert!(Model::<f64>::new(mc, 3).unwrap().with_reference(vec![0.0; 7]).is_err());
}
