use std::collections::BTreeMap;
use std::time::Duration;

use dspa::transport::{
    inproc_endpoints, tcp_loopback_endpoints, Endpoint, Frame, Phase, HEADER_LEN,
};
use dspa::Error;
use proptest::prelude::*;

fn phase() -> impl Strategy<Value = Phase> {
    prop_oneof![
        Just(Phase::Halo),
        Just(Phase::Adjoint),
        Just(Phase::Control)
    ]
}

proptest! {
    #[test]
    fn frames_roundtrip(
        phase in phase(),
        t in any::<u64>(),
        src in 0usize..64,
        dst in 0usize..64,
        op in any::<u32>(),
        payload in prop::collection::vec(-1e300f64..1e300, 0..50),
    ) {
        let f = Frame::new(phase, t, src, dst, op, payload);
        let bytes = f.encode();
        prop_assert_eq!(bytes.len(), HEADER_LEN + 8 * f.payload.len());
        prop_assert_eq!(Frame::decode(&bytes).unwrap(), f.clone());
        let mut cursor = std::io::Cursor::new(Vec::new());
        f.write_to(&mut cursor).unwrap();
        cursor.set_position(0);
        prop_assert_eq!(Frame::read_from(&mut cursor).unwrap(), f);
    }

    #[test]
    fn corrupted_magic_is_a_protocol_violation(byte in 0usize..4, flip in 1u8..=255) {
        let mut bytes = Frame::new(Phase::Halo, 1, 0, 1, 0, vec![1.0]).encode();
        bytes[byte] ^= flip;
        prop_assert!(matches!(Frame::decode(&bytes), Err(Error::ProtocolViolation(_))));
    }
}

/// Every rank sends its rank number to every other rank and checks what it
/// receives, then all ranks pass a barrier and a gather.
fn all_to_all(mut eps: Vec<Endpoint>) {
    let size = eps.len();
    let handles: Vec<_> = eps
        .drain(..)
        .map(|mut ep| {
            std::thread::spawn(move || {
                let rank = ep.rank();
                let others: Vec<usize> = (0..size).filter(|&k| k != rank).collect();
                let outgoing = others
                    .iter()
                    .map(|&k| (k, vec![rank as f64; k + 1]))
                    .collect();
                let expected = others.iter().map(|&k| (k, rank + 1)).collect();
                let got = ep.halo_exchange(3, 0, outgoing, &expected).unwrap();
                let want: BTreeMap<usize, Vec<f64>> = others
                    .iter()
                    .map(|&k| (k, vec![k as f64; rank + 1]))
                    .collect();
                assert_eq!(got, want);
                ep.barrier(3).unwrap();
                let gathered = ep.gather(4, vec![rank as f64]).unwrap();
                if rank == 0 {
                    let g = gathered.unwrap();
                    assert_eq!(g, (0..size).map(|k| vec![k as f64]).collect::<Vec<_>>());
                } else {
                    assert!(gathered.is_none());
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

#[test]
fn inproc_exchange_barrier_and_gather() {
    all_to_all(inproc_endpoints(4));
}

#[test]
fn tcp_exchange_barrier_and_gather() {
    all_to_all(tcp_loopback_endpoints(3, Duration::from_secs(10)).unwrap());
}

#[test]
fn missing_peer_times_out() {
    let mut eps = inproc_endpoints(2);
    let _peer = eps.pop().unwrap();
    let mut ep = eps.pop().unwrap().with_timeout(Duration::from_millis(50));
    let err = ep.recv(Phase::Halo, 0, 1, 0, 1).unwrap_err();
    assert!(matches!(err, Error::TransportFailure(_)), "{err:?}");
}
