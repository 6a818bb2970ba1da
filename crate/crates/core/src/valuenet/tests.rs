use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::state::EntityType;

fn random_input(rng: &mut impl Rng, rows: usize, include_type: bool) -> NetworkInput {
    let mut robot = [0.0; ROBOT_WIDTH];
    for r in &mut robot {
        *r = rng.random_range(-2.0..2.0);
    }
    let width = ROBOT_WIDTH + ENTITY_WIDTH + if include_type { TYPE_WIDTH } else { 0 };
    let mut features = Vec::with_capacity(rows * width);
    for _ in 0..rows {
        features.extend_from_slice(&robot);
        for _ in 0..ENTITY_WIDTH {
            features.push(rng.random_range(-3.0..3.0));
        }
        if include_type {
            let kind = EntityType::ALL[rng.random_range(0..4)];
            features.extend_from_slice(&kind.one_hot());
        }
    }
    NetworkInput {
        robot,
        features,
        rows,
        width,
    }
}

#[test]
fn row_widths() {
    assert_eq!(NetworkShape::standard(true).row_width(), 17);
    assert_eq!(NetworkShape::standard(false).row_width(), 13);
}

#[test]
fn parameter_count_matches_layers() {
    let net = ValueNetwork::new(NetworkShape::standard(true), 0).unwrap();
    let expected: usize = net.layer_shapes().iter().map(|(i, o)| i * o + o).sum();
    assert_eq!(net.param_count(), expected);
    assert_eq!(
        net.layer_shapes(),
        vec![
            (17, 300),
            (300, 200),
            (200, 200),
            (200, 100),
            (400, 200),
            (200, 200),
            (200, 1),
            (106, 300),
            (300, 200),
            (200, 200),
            (200, 1),
        ]
    );
}

#[test]
fn identical_rows_get_equal_attention() {
    let net = ValueNetwork::new(NetworkShape::reduced(true), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let one = random_input(&mut rng, 1, true);
    let mut features = Vec::new();
    for _ in 0..4 {
        features.extend_from_slice(&one.features);
    }
    let input = NetworkInput {
        features,
        rows: 4,
        ..one
    };
    let out = net.forward(&input);
    for w in out.attention {
        assert!((w - 0.25).abs() < 1e-12);
    }
}

#[test]
fn empty_scene_has_finite_value() {
    let net = ValueNetwork::new(NetworkShape::standard(true), 3).unwrap();
    let input = NetworkInput {
        robot: [5.0, 0.0, 0.0, 0.3, 1.0, 0.0],
        features: vec![],
        rows: 0,
        width: 17,
    };
    let out = net.forward(&input);
    assert!(out.value.is_finite());
    assert!(out.attention.is_empty());
}

#[test]
fn batch_matches_single_forward() {
    let net = ValueNetwork::new(NetworkShape::reduced(true), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs: Vec<NetworkInput> = (0..6).map(|k| random_input(&mut rng, k, true)).collect();
    let batch = net.forward_batch(&inputs);
    for (b, i) in batch.iter().zip(&inputs) {
        assert!((b - net.forward(i).value).abs() < 1e-12);
    }
}

#[test]
fn zero_error_leaves_weights() {
    let mut net = ValueNetwork::new(NetworkShape::reduced(true), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<(NetworkInput, f64)> = (0..5)
        .map(|_| {
            let i = random_input(&mut rng, 3, true);
            let v = net.forward(&i).value;
            (i, v)
        })
        .collect();
    let before = net.params().to_vec();
    let loss = net.train_batch(&batch, 0.1).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(net.params(), &before[..]);
}

#[test]
fn sgd_step_reduces_loss() {
    let mut net = ValueNetwork::new(NetworkShape::reduced(true), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch = vec![(random_input(&mut rng, 3, true), 2.5)];
    let before = net.train_batch(&batch, 1e-3).unwrap();
    assert!(net.loss(&batch) < before);
}

#[test]
fn divergence_keeps_weights() {
    let mut net = ValueNetwork::new(NetworkShape::reduced(true), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch = vec![(random_input(&mut rng, 2, true), f64::NAN)];
    let before = net.params().to_vec();
    assert!(matches!(net.train_batch(&batch, 0.1), Err(Error::Divergence(_))));
    assert_eq!(net.params(), &before[..]);
    assert!(net.train_batch(&[], 0.1).is_err());
}

#[test]
fn checkpoint_round_trip_and_guards() {
    let net = ValueNetwork::new(NetworkShape::reduced(false), 8).unwrap();
    let ck = Checkpoint::new(net.clone(), 0xabcdef);
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.reward_hash, 0xabcdef);
    assert_eq!(back.network.params(), net.params());
    assert!(back.ensure_compatible(false, Some(0xabcdef)).is_ok());
    assert!(back.ensure_compatible(true, None).is_err());
    assert!(back.ensure_compatible(false, Some(1)).is_err());

    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("magic"));
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("version"));
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("checksum"));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
}
