mod common;

use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regionswap::mask::MaskParams;
use common::micro_net;
use regionswap::train::*;
use regionswap::{synthetic, Error, ImageTensor, LossWeights, NetKind, Networks};
use tch::{Kind, Tensor};

fn trainer(k: u64) -> Trainer {
    let tc = TrainConfig {
        batch_size: 2,
        k_interval: k,
        r1_interval: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    Trainer::new(
        Networks::new(micro_net()).unwrap(),
        LossWeights::default(),
        MaskParams::default(),
        tc,
    )
    .unwrap()
}

fn dataset(dir: &Path, count: u64) -> Dataset {
    synthetic::write_dataset(dir, 1, count, 24).unwrap();
    let spec = DatasetSpec {
        roots: vec![DataRoot {
            path: dir.to_path_buf(),
            weight: 1.0,
        }],
        ..Default::default()
    };
    Dataset::open(&spec, 16).unwrap()
}

#[test]
fn aux_schedule_examples() {
    assert!(should_apply_aux(0, 16));
    assert!(!should_apply_aux(15, 16));
    assert!(should_apply_aux(32, 16));
    let n = (0..10_000u64).filter(|&i| should_apply_aux(i, 16)).count();
    assert_eq!(n, 625);
}

proptest! {
    #[test]
    fn one_aux_step_per_window(k in 1u64..64, start in 0u64..10_000) {
        let n = (start..start + k).filter(|&i| should_apply_aux(i, k)).count();
        prop_assert_eq!(n, 1);
    }
}

#[test]
fn reports_follow_schedule_and_warmup() {
    let d = tempfile::tempdir().unwrap();
    let mut data = dataset(d.path(), 6);
    let mut t = trainer(4);
    for _ in 0..9 {
        let (a, b) = t.next_batches(&mut data).unwrap();
        let r = t.train_step(&a, &b).unwrap();
        let aux = r.iteration.is_multiple_of(4);
        assert_eq!(r.cc_content.is_some(), aux, "iteration {}", r.iteration);
        assert_eq!(r.ca_bg.is_some(), aux);
        assert_eq!(r.r1.is_some(), r.iteration.is_multiple_of(4));
        assert!(r.all_finite());
        let (g, dd) = r.weighted_totals(&t.weights);
        assert_eq!((r.total_g, r.total_d), (g, dd));
    }
    assert_eq!(t.state.iteration, 9);
    assert_eq!(t.state.history.len(), 9);

    let mut t = trainer(4);
    t.state.warmup = 5;
    let mut seen = Vec::new();
    for _ in 0..9 {
        let (a, b) = t.next_batches(&mut data).unwrap();
        seen.push(t.train_step(&a, &b).unwrap().has_aux());
    }
    assert_eq!(seen, [false, false, false, false, false, false, false, false, true]);
}

#[test]
fn identical_seeds_give_identical_streams() {
    let d = tempfile::tempdir().unwrap();
    let run = || {
        let mut data = dataset(d.path(), 6);
        let mut t = trainer(2);
        (0..4)
            .map(|_| {
                let (a, b) = t.next_batches(&mut data).unwrap();
                t.train_step(&a, &b).unwrap()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let d = tempfile::tempdir().unwrap();
    let ck = d.path().join("ck.safetensors");
    let mut data = dataset(&d.path().join("data"), 6);
    let mut t = trainer(2);
    for _ in 0..3 {
        let (a, b) = t.next_batches(&mut data).unwrap();
        t.train_step(&a, &b).unwrap();
    }
    save_checkpoint(&ck, &t.state, &t.nets).unwrap();
    let (state, nets) = load_checkpoint(&ck).unwrap();
    assert_eq!(state.iteration, 3);
    assert_eq!(nets.config(), t.nets.config());
    for ((n1, p1), (n2, p2)) in t.nets.parameters(&NetKind::ALL).iter().zip(nets.parameters(&NetKind::ALL)) {
        assert_eq!(n1, &n2);
        assert!(p1.equal(&p2), "{n1}");
    }
    assert_eq!(state.opt_g.moments.len(), t.state.opt_g.moments.len());

    let mut resumed = Trainer::new(nets, t.weights.clone(), t.masks.clone(), t.config.clone()).unwrap();
    resumed.state = state;
    for _ in 0..2 {
        let (a, b) = t.next_batches(&mut data).unwrap();
        let (a2, b2) = resumed.next_batches(&mut data).unwrap();
        assert!(a.tensor().equal(a2.tensor()) && b.tensor().equal(b2.tensor()));
        assert_eq!(t.train_step(&a, &b).unwrap(), resumed.train_step(&a2, &b2).unwrap());
    }
}

#[test]
fn checkpoint_rejects_bad_files() {
    let d = tempfile::tempdir().unwrap();
    let t = trainer(2);
    let ck = d.path().join("ck.safetensors");
    save_checkpoint(&ck, &t.state, &t.nets).unwrap();
    let mut bytes = std::fs::read(&ck).unwrap();
    let pos = bytes.windows(FORMAT_TAG.len()).position(|w| w == FORMAT_TAG.as_bytes()).unwrap();
    bytes[pos + FORMAT_TAG.len() - 1] = b'9';
    let bad = d.path().join("bad.safetensors");
    std::fs::write(&bad, &bytes).unwrap();
    let err = load_checkpoint(&bad).unwrap_err();
    assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
    std::fs::write(&bad, b"garbage").unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(Error::Checkpoint { .. })));
    assert!(load_checkpoint(&d.path().join("missing")).is_err());
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let mut t = trainer(2);
    tch::no_grad(|| {
        let (_, mut p) = t.nets.parameters(&[NetKind::Generator]).remove(0);
        let _ = p.fill_(f64::NAN);
    });
    let a = ImageTensor::new(Tensor::zeros([2, 3, 16, 16], (Kind::Float, tch::Device::Cpu))).unwrap();
    match t.train_step(&a, &a) {
        Err(Error::NonFinite { what, stats }) => {
            assert!(!what.is_empty());
            assert!(stats.contains("non_finite"), "{stats}");
        }
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn mismatched_batches_rejected() {
    let mut t = trainer(2);
    let a = ImageTensor::new(Tensor::zeros([2, 3, 16, 16], (Kind::Float, tch::Device::Cpu))).unwrap();
    let b = ImageTensor::new(Tensor::zeros([1, 3, 16, 16], (Kind::Float, tch::Device::Cpu))).unwrap();
    assert!(matches!(t.train_step(&a, &b), Err(Error::Rejected { .. })));
}

#[test]
fn two_equal_roots_are_sampled_evenly() {
    let d = tempfile::tempdir().unwrap();
    let (r1, r2) = (d.path().join("a"), d.path().join("b"));
    synthetic::write_dataset(&r1, 1, 2, 16).unwrap();
    synthetic::write_dataset(&r2, 2, 5, 16).unwrap();
    let spec = DatasetSpec {
        roots: vec![
            DataRoot { path: r1, weight: 1.0 },
            DataRoot { path: r2, weight: 1.0 },
        ],
        ..Default::default()
    };
    let ds = Dataset::open(&spec, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 10_000;
    let first = (0..n).filter(|_| ds.draw_root(&mut rng) == 0).count();
    let frac = first as f64 / n as f64;
    assert!((frac - 0.5).abs() <= 0.02, "{frac}");
}

#[test]
fn batches_are_in_range_and_pairs_differ() {
    let d = tempfile::tempdir().unwrap();
    let mut data = dataset(d.path(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = data.pair(4, &mut rng).unwrap();
    assert_eq!(a.size(), vec![4, 3, 16, 16]);
    assert!(a.tensor().abs().max().double_value(&[]) <= 1.0);
    assert!(!a.tensor().equal(b.tensor()));
}

#[test]
fn fit_writes_log_samples_and_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    let mut data = dataset(&d.path().join("data"), 6);
    let mut t = trainer(2);
    t.config.steps = 3;
    t.config.sample_every = 2;
    let out = d.path().join("run");
    t.fit(&mut data, &out).unwrap();
    let log = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first.get("cc_content").is_some() && first.get("rec").is_some());
    assert!(out.join("samples/step_0000000.png").exists());
    assert!(out.join("samples/step_0000002.png").exists());
    let (state, _) = load_checkpoint(&out.join("checkpoint.safetensors")).unwrap();
    assert_eq!(state.iteration, 3);
}
