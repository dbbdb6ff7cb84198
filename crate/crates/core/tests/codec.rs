use std::collections::BTreeMap;

use fedtensor::align::{RegionLabel, SetPolynomial, DEFAULT_MODULUS};
use fedtensor::federation::message::{decode_header, AlignStatus, HEADER_LEN};
use fedtensor::federation::transport::channel_pair;
use fedtensor::federation::{decode_frame, encode_frame, FeatureMode, Link, Message};
use fedtensor::FactorMatrix;
use proptest::collection::{btree_map, vec};
use proptest::prelude::*;

fn mode() -> impl Strategy<Value = FeatureMode> {
    (1usize..=u16::MAX as usize).prop_map(|m| FeatureMode::new(m).unwrap())
}

fn matrix() -> impl Strategy<Value = FactorMatrix> {
    (0usize..6, 0usize..5).prop_flat_map(|(rows, rank)| {
        vec(-1e6f64..1e6, rows * rank).prop_map(move |data| FactorMatrix::from_vec(rows, rank, data).unwrap())
    })
}

fn poly() -> impl Strategy<Value = SetPolynomial> {
    vec(0..DEFAULT_MODULUS, 0..12).prop_map(|c| SetPolynomial::new(DEFAULT_MODULUS, c).unwrap())
}

fn sizes() -> impl Strategy<Value = BTreeMap<RegionLabel, u32>> {
    btree_map((1u32..1 << 16).prop_map(RegionLabel), any::<u32>(), 0..10)
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e12f64..1e12, Just(0.0), Just(f64::MIN_POSITIVE)]
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        proptest::option::of(any::<u16>()).prop_map(|hospital| Message::Hello { hospital }),
        (any::<u32>(), mode(), poly()).prop_map(|(attempt, mode, poly)| Message::AlignPoly { attempt, mode, poly }),
        (any::<u32>(), mode(), vec((any::<u16>(), poly()), 0..4))
            .prop_map(|(attempt, mode, sums)| Message::AlignPairwiseSums { attempt, mode, sums }),
        (any::<u32>(), mode(), sizes()).prop_map(|(attempt, mode, sizes)| Message::AlignRegionSizes {
            attempt,
            mode,
            sizes
        }),
        (any::<u32>(), mode(), any::<bool>(), sizes()).prop_map(|(attempt, mode, ok, sizes)| {
            Message::AlignGlobalSizes {
                attempt,
                mode,
                status: if ok { AlignStatus::Ok } else { AlignStatus::Retry },
                sizes,
            }
        }),
        (any::<u32>(), mode(), matrix()).prop_map(|(round, mode, factor)| Message::LocalFeatureFactor {
            round,
            mode,
            factor
        }),
        (any::<u32>(), mode(), matrix()).prop_map(|(round, mode, factor)| Message::GlobalFeatureFactor {
            round,
            mode,
            factor
        }),
        (any::<u32>(), mode(), matrix()).prop_map(|(round, mode, multiplier)| Message::MultiplierH {
            round,
            mode,
            multiplier
        }),
        (any::<u32>(), finite(), finite(), finite()).prop_map(|(round, loss, cells, compute_seconds)| {
            Message::RoundComplete {
                round,
                loss,
                cells,
                compute_seconds,
            }
        }),
        (any::<u32>(), any::<bool>()).prop_map(|(round, stop)| Message::Converged { round, stop }),
        ".{0,40}".prop_map(|reason| Message::Abort { reason }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn frames_round_trip(m in message()) {
        let frame = encode_frame(&m).unwrap();
        let (kind, len) = decode_header(&frame[..HEADER_LEN]).unwrap();
        prop_assert_eq!(kind, m.msg_type());
        prop_assert_eq!(frame.len(), HEADER_LEN + len);
        prop_assert_eq!(decode_frame(&frame).unwrap(), m);
    }

    #[test]
    fn truncated_frames_are_rejected(m in message(), cut in 1usize..64) {
        let frame = encode_frame(&m).unwrap();
        let keep = frame.len().saturating_sub(cut);
        prop_assert!(decode_frame(&frame[..keep]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn link_counts_equal_encoded_lengths(msgs in vec(message(), 1..20)) {
        let (mut a, mut b) = channel_pair(0, None);
        let mut total = 0u64;
        for m in &msgs {
            total += encode_frame(m).unwrap().len() as u64;
            a.send(m).unwrap();
            prop_assert_eq!(&b.recv().unwrap(), m);
        }
        prop_assert_eq!(a.stats().bytes_sent, total);
        prop_assert_eq!(b.stats().bytes_received, total);
    }
}

#[test]
fn hello_frames() {
    assert_eq!(encode_frame(&Message::Hello { hospital: None }).unwrap().len(), 9);
    assert_eq!(encode_frame(&Message::Hello { hospital: Some(3) }).unwrap().len(), 11);
}

#[test]
fn garbage_is_rejected() {
    assert!(decode_frame(b"").is_err());
    assert!(decode_frame(b"XXXX\x00\x00\x00\x00\x00").is_err());
    let mut frame = encode_frame(&Message::Converged { round: 1, stop: true }).unwrap();
    frame[4] = 200;
    assert!(decode_frame(&frame).is_err());
}
