use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mixseg::metrics::{dice_report, macro_dice};
use mixseg::mixer::{AlphaBounds, ReferencePool};
use mixseg::models::{OracleLedger, SegmentationBackend};
use mixseg::phantom::{generate_subject, render_scan, ScanConfig};
use mixseg::protocol::*;
use mixseg::seeds::rng_from;
use mixseg::tensor::{LabelField, PatchGrid, Tensor, Volume};
use mixseg::Error;

const DIMS: [usize; 3] = [32; 3];
const PATCH: [usize; 3] = [16; 3];

fn scan(subject: u64, seed: u64) -> (Volume<f64>, LabelField<f64>) {
    let cfg = ScanConfig { dims: DIMS, ..Default::default() };
    render_scan(&generate_subject(subject), &cfg, seed).unwrap()
}

fn pool() -> ReferencePool<f64> {
    ReferencePool::new(vec![scan(50, 1), scan(51, 1)]).unwrap()
}

fn session(seed: u64, alpha: f64, k: usize) -> ClientSession<f64> {
    let grid = PatchGrid::new(DIMS, PATCH, [12; 3]).unwrap();
    ClientSession::draw(&mut rng_from(seed), grid, &pool(), alpha, AlphaBounds::default(), k).unwrap()
}

fn oracle_server(noise: Option<f64>) -> (ServerHandle<f64>, Arc<OracleLedger<f64>>) {
    let ledger = Arc::new(OracleLedger::new());
    let backend = match noise {
        None => SegmentationBackend::Oracle { ledger: ledger.clone() },
        Some(noise_std) => SegmentationBackend::NoisyOracle { ledger: ledger.clone(), noise_std, seed: 9 },
    };
    (serve(Arc::new(backend), "127.0.0.1:0", ServerOptions::default()).unwrap(), ledger)
}

fn register(ledger: &OracleLedger<f64>, s: &ClientSession<f64>, v: &Volume<f64>, l: &LabelField<f64>) {
    for (x, access) in s.oracle_entries(v, l).unwrap() {
        ledger.register(&x, &access).unwrap();
    }
}

#[test]
fn oracle_loop_recovers_ground_truth_exactly() {
    let (server, ledger) = oracle_server(None);
    let (v, l) = scan(1, 1);
    for (alpha, k) in [(0.2, 1), (0.55, 3), (0.8, 2)] {
        let mut s = session(7, alpha, k);
        register(&ledger, &s, &v, &l);
        let out = client_segment_volume(&v, &mut s, server.local_addr(), Decoder::Naive, &ClientOptions::default()).unwrap();
        let err = out.data().iter().zip(l.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "alpha {alpha} k {k}: max error {err}");
        assert!(dice_report(&out, &l).unwrap().per_class.iter().all(|&d| d == 1.0));
    }
    server.shutdown();
}

#[test]
fn interleaved_sessions_match_sequential_runs() {
    let (server, ledger) = oracle_server(Some(0.8));
    let (v1, l1) = scan(2, 1);
    let (v2, l2) = scan(3, 1);
    let mut a = session(11, 0.3, 2);
    let mut b = session(12, 0.7, 2);
    register(&ledger, &a, &v1, &l1);
    register(&ledger, &b, &v2, &l2);
    let addr = server.local_addr();
    let opts = ClientOptions::default();
    let seq_a = client_segment_volume(&v1, &mut a.clone(), addr, Decoder::Naive, &opts).unwrap();
    let seq_b = client_segment_volume(&v2, &mut b.clone(), addr, Decoder::Naive, &opts).unwrap();
    let (par_a, par_b) = thread::scope(|s| {
        let ha = s.spawn(|| client_segment_volume(&v1, &mut a, addr, Decoder::Naive, &opts).unwrap());
        let hb = s.spawn(|| client_segment_volume(&v2, &mut b, addr, Decoder::Naive, &opts).unwrap());
        (ha.join().unwrap(), hb.join().unwrap())
    });
    assert_eq!(seq_a, par_a);
    assert_eq!(seq_b, par_b);
    server.shutdown();
}

#[test]
fn noisy_oracle_improves_with_more_references() {
    let (server, ledger) = oracle_server(Some(1.5));
    let (v, l) = scan(4, 1);
    let mut dice = Vec::new();
    for k in [1, 10] {
        let mut s = session(21, 0.5, k);
        register(&ledger, &s, &v, &l);
        let out = client_segment_volume(&v, &mut s, server.local_addr(), Decoder::Naive, &ClientOptions::default()).unwrap();
        dice.push(macro_dice(&out, &l).unwrap());
    }
    assert!(dice[1] >= dice[0], "{dice:?}");
    server.shutdown();
}

fn roundtrip(stream: &mut TcpStream, msg: &[u8]) -> WireMessage {
    stream.write_all(msg).unwrap();
    match read_frame(stream).unwrap() {
        Received::Message(m) => m,
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_frames_get_errors_and_the_connection_survives() {
    let (server, ledger) = oracle_server(None);
    let mut stream = TcpStream::connect(server.local_addr()).unwrap();
    let mut bad = WireMessage::hello(5).encode();
    bad[4] = b'Z';
    let reply = roundtrip(&mut stream, &bad);
    assert_eq!(reply.error_info().unwrap().0, Some(ErrorCode::Malformed));

    let x = Volume::<f64>::filled(PATCH, 0.5).unwrap();
    let reply = roundtrip(&mut stream, &WireMessage::segment_request(5, 0, &x).encode());
    assert_eq!(reply.error_info().unwrap().0, Some(ErrorCode::Backend), "unregistered mixture");

    let labels = LabelField::<f64>::one_hot(2, PATCH, &vec![1; 4096]).unwrap();
    let reply = roundtrip(&mut stream, &WireMessage::training_request(5, 1, &x, &labels).encode());
    assert_eq!(reply.error_info().unwrap().0, Some(ErrorCode::Rejected));
    let as_request = WireMessage::new(MsgType::SegmentRequest, 5, 2, Tensor::from(&labels).encode());
    let reply = roundtrip(&mut stream, &as_request.encode());
    assert_eq!(reply.error_info().unwrap().0, Some(ErrorCode::Rejected));

    let reply = roundtrip(&mut stream, &WireMessage::hello(5).encode());
    assert_eq!(reply, WireMessage::hello(5));
    assert_eq!(ledger.len(), 0);
    server.shutdown();
}

#[test]
fn training_mode_collects_labeled_mixtures() {
    let ledger = Arc::new(OracleLedger::<f64>::new());
    let backend = Arc::new(SegmentationBackend::Oracle { ledger: ledger.clone() });
    let server = serve(backend, "127.0.0.1:0", ServerOptions { training: true }).unwrap();
    let (v, l) = scan(6, 1);
    let s = session(3, 0.5, 1);
    let (x, access) = s.oracle_entries(&v, &l).unwrap().remove(0);
    ledger.register(&x, &access).unwrap();
    let y_mix = mixseg::mixer::mix_labels(&access.y_target, &access.y_ref, access.alpha).unwrap();
    let mut stream = TcpStream::connect(server.local_addr()).unwrap();
    let reply = roundtrip(&mut stream, &WireMessage::training_request(1, 0, &x, &y_mix).encode());
    assert_eq!(reply.msg_type, MsgType::SegmentResponse);
    assert_eq!(server.inbox().lock().unwrap().len(), 1);
    server.shutdown();
}

/// Forwards one connection to `target`, recording every client-to-server byte.
fn capture_proxy(target: SocketAddr) -> (SocketAddr, Arc<Mutex<Vec<u8>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let log = Arc::new(Mutex::new(Vec::new()));
    let captured = log.clone();
    thread::spawn(move || {
        for client in listener.incoming() {
            let mut client = client.unwrap();
            let mut server = TcpStream::connect(target).unwrap();
            let mut back_c = client.try_clone().unwrap();
            let mut back_s = server.try_clone().unwrap();
            thread::spawn(move || {
                let _ = std::io::copy(&mut back_s, &mut back_c);
            });
            let log = log.clone();
            thread::spawn(move || {
                let mut buf = [0u8; 8192];
                loop {
                    match client.read(&mut buf) {
                        Ok(0) | Err(_) => break,
                        Ok(n) => {
                            log.lock().unwrap().extend_from_slice(&buf[..n]);
                            if server.write_all(&buf[..n]).is_err() {
                                break;
                            }
                        }
                    }
                }
            });
        }
    });
    (addr, captured)
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

#[test]
fn key_material_never_crosses_the_wire() {
    let (server, ledger) = oracle_server(None);
    let (proxy, captured) = capture_proxy(server.local_addr());
    let (v, l) = scan(7, 1);
    // Keep intensities away from 0 and 1 so no mixed voxel can equal alpha by coincidence.
    let v = Volume::new(v.dims(), v.data().iter().map(|x| 0.1 + 0.8 * x).collect()).unwrap();
    let alpha = 0.37;
    let mut s = session(31, alpha, 2);
    register(&ledger, &s, &v, &l);
    client_segment_volume(&v, &mut s, proxy, Decoder::Naive, &ClientOptions::default()).unwrap();
    let traffic = captured.lock().unwrap().clone();
    assert!(!traffic.is_empty());
    for key in s.keys() {
        for r in key.references() {
            let img = Tensor::from(&r.image).encode();
            let lab = Tensor::from(&r.labels).encode();
            assert!(!contains(&traffic, &img[8..]), "reference image leaked");
            assert!(!contains(&traffic, &lab[8..]), "reference labels leaked");
            assert!(!contains(&traffic, &img[12..76]), "reference image fragment leaked");
        }
    }
    assert!(!contains(&traffic, &alpha.to_le_bytes()), "alpha leaked");
    assert!(!contains(&traffic, &(alpha as f32).to_le_bytes()), "alpha leaked");
    assert!(!contains(&traffic, &Tensor::from(&v).encode()[8..]), "raw volume leaked");
    let expected: std::collections::BTreeMap<u32, Vec<u8>> =
        s.clone().requests(&v).unwrap().into_iter().map(|m| (m.patch_index, m.payload)).collect();
    let mut cursor = std::io::Cursor::new(traffic);
    let mut seen = 0;
    while let Received::Message(m) = read_frame(&mut cursor).unwrap() {
        match m.msg_type {
            MsgType::SegmentRequest => {
                assert_eq!(m.payload, expected[&m.patch_index], "request carries more than the mixture");
                seen += 1;
            }
            MsgType::Hello | MsgType::Bye => assert!(m.payload.is_empty()),
            other => panic!("unexpected client message {other:?}"),
        }
    }
    assert_eq!(seen, expected.len());
    server.shutdown();
}

#[test]
fn silent_server_times_out_into_a_session_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let mut held = Vec::new();
        for c in listener.incoming() {
            let mut c = c.unwrap();
            if let Ok(Received::Message(m)) = read_frame(&mut c) {
                write_frame(&mut c, &WireMessage::hello(m.session_id)).unwrap();
            }
            held.push(c);
        }
    });
    let (v, _) = scan(8, 1);
    let mut s = session(41, 0.5, 1);
    let opts = ClientOptions { timeout: Duration::from_millis(100), retries: 2, ..Default::default() };
    let err = client_segment_volume(&v, &mut s, addr, Decoder::Naive, &opts).unwrap_err();
    assert!(matches!(err, Error::Session(_)), "{err:?}");
}
