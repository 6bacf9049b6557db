mod common;

use offsim::protocol::{encode, Message};
use offsim::transport::{ChannelConfig, TokenBucket, VirtualLink};
use proptest::prelude::*;

/// Non-decreasing enqueue times with frame sizes.
fn schedule() -> impl Strategy<Value = Vec<(f64, usize)>> {
    prop::collection::vec((0.0f64..0.05, 0usize..6000), 1..25).prop_map(|gaps| {
        let mut t = 0.0;
        gaps.into_iter()
            .map(|(gap, size)| {
                t += gap;
                (t, size)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fluid_bucket_matches_byte_simulation(
        frames in schedule(),
        rate in prop::sample::select(vec![5e4, 1e5, 1e6, 1e7]),
        bucket in prop::sample::select(vec![1.0, 1500.0, 32768.0]),
        latency in 0.0f64..0.2,
    ) {
        let cfg = ChannelConfig::new(rate, latency).unwrap().with_bucket(bucket).unwrap();
        let mut tb = TokenBucket::new(cfg);
        let want = common::byte_bucket(rate / 8.0, bucket, &frames);
        for (&(at, size), w) in frames.iter().zip(&want) {
            let d = tb.schedule(at, size);
            prop_assert!((d.departed - w).abs() <= 1e-9 * w.max(1.0), "{} vs {}", d.departed, w);
            prop_assert!((d.delivered - d.departed - latency).abs() <= 1e-12);
            prop_assert!(d.started >= at && d.departed >= d.started);
        }
    }

    /// Frames come out of the virtual link in order, each at its delivery time.
    #[test]
    fn virtual_link_delivers_in_order(steps in prop::collection::vec((0.0f64..0.5, 1u32..400), 1..20)) {
        let mut link = VirtualLink::new(ChannelConfig::new(1e6, 0.05).unwrap()).unwrap();
        let mut expected = Vec::new();
        let mut got = Vec::new();
        for (k, &(gap, n)) in steps.iter().enumerate() {
            got.extend(link.advance(gap).unwrap());
            let frame = encode(&Message::StreamState { step: k as u32, state: vec![0.5; n as usize] }).unwrap();
            expected.push((link.send(frame.clone()).delivered, frame));
        }
        got.extend(link.poll());
        while let Some(t) = link.next_delivery() {
            got.extend(link.advance_to(t));
        }
        prop_assert_eq!(got.len(), expected.len());
        for ((t, f), (et, ef)) in got.iter().zip(&expected) {
            prop_assert_eq!(f, ef);
            prop_assert!((t - et).abs() < 1e-12);
        }
    }
}

#[test]
fn megabit_second_for_125_kilobytes() {
    let cfg = ChannelConfig::new(1e6, 0.0).unwrap().with_bucket(0.0).unwrap();
    let d = TokenBucket::new(cfg).schedule(0.0, 125_000);
    assert_eq!(d.delivered, 1.0);
}
