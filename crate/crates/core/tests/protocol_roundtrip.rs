use std::collections::BTreeMap;

use offsim::protocol::{decode, encode, message_size, Init, Message, StrategyTag, HEADER_LEN};
use offsim::quality::Norm;
use offsim::Error;
use proptest::prelude::*;

fn any_bits() -> impl Strategy<Value = f64> {
    any::<u64>().prop_map(f64::from_bits)
}

fn values(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(any_bits(), 0..max)
}

fn init() -> impl Strategy<Value = Message> {
    (
        (any::<u8>(), any::<u8>(), any::<u32>(), any_bits(), any_bits(), any_bits(), any_bits()),
        (
            prop::sample::select(vec![Norm::Max, Norm::Euclidean]),
            any::<u16>(),
            any::<u64>(),
            prop::sample::select(vec![
                StrategyTag::SimpleStream,
                StrategyTag::AdvancedStream,
                StrategyTag::FullUpdate,
                StrategyTag::PartialUpdate,
                StrategyTag::Combined,
            ]),
            values(300),
        ),
    )
        .prop_map(
            |((surrogate_level, reference_level, n_t, dt, alpha, q_max, sigma), (norm, n_e, basic_seed, strategy, initial_state))| {
                Message::Init(Box::new(Init {
                    surrogate_level,
                    reference_level,
                    n_t,
                    dt,
                    alpha,
                    q_max,
                    sigma,
                    norm,
                    n_e,
                    basic_seed,
                    strategy,
                    initial_state,
                }))
            },
        )
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        init(),
        any::<u32>().prop_map(|step| Message::Certify { step }),
        (any::<u32>(), values(1100)).prop_map(|(step, state)| Message::FullUpdate { step, state }),
        (any::<u32>(), values(1100)).prop_map(|(step, state)| Message::StreamState { step, state }),
        (any::<u32>(), prop::collection::btree_map(any::<u32>(), any_bits(), 1..200)).prop_map(
            |(step, map): (u32, BTreeMap<u32, f64>)| Message::PartialUpdate {
                step,
                pairs: map.into_iter().collect(),
            }
        ),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    /// Any message survives encoding bit for bit, NaN payloads included.
    #[test]
    fn round_trip(msg in message()) {
        let bytes = encode(&msg).unwrap();
        prop_assert_eq!(bytes.len(), message_size(&msg));
        let (back, used) = decode(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back.kind(), msg.kind());
        prop_assert_eq!(back.step(), msg.step());
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    /// A prefix of a frame asks for exactly the missing bytes.
    #[test]
    fn truncated_frames_need_more(msg in message(), cut in 0.0f64..1.0) {
        let bytes = encode(&msg).unwrap();
        let keep = ((bytes.len() as f64) * cut) as usize;
        match decode(&bytes[..keep]) {
            Err(Error::NeedMoreBytes { needed }) => {
                let want = if keep < HEADER_LEN { HEADER_LEN - keep } else { bytes.len() - keep };
                prop_assert_eq!(needed, want);
            }
            other => prop_assert!(false, "unexpected {:?}", other.map(|(m, _)| m.kind())),
        }
    }

    /// Back-to-back frames decode one after the other.
    #[test]
    fn concatenated_frames(a in message(), b in message()) {
        let mut bytes = encode(&a).unwrap();
        let first = bytes.len();
        bytes.extend(encode(&b).unwrap());
        let (_, used) = decode(&bytes).unwrap();
        prop_assert_eq!(used, first);
        let (second, rest) = decode(&bytes[first..]).unwrap();
        prop_assert_eq!(rest, bytes.len() - first);
        prop_assert_eq!(second.kind(), b.kind());
    }

    /// Garbage never panics the decoder.
    #[test]
    fn arbitrary_bytes_are_handled(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode(&bytes);
    }
}

#[test]
fn sizes() {
    assert_eq!(encode(&Message::Certify { step: 7 }).unwrap().len(), 9);
    let full = encode(&Message::FullUpdate {
        step: 1,
        state: vec![0.0; 33 * 33],
    })
    .unwrap();
    assert_eq!(full.len() - HEADER_LEN, 8716);
}

#[test]
fn unsorted_partial_update_is_refused() {
    let msg = Message::PartialUpdate {
        step: 1,
        pairs: vec![(5, 1.0), (5, 2.0)],
    };
    assert!(encode(&msg).is_err());
}
