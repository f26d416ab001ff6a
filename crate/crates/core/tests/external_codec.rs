use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use memlab::codec::{wire, Codec, DecodingStrategy, ExternalCodec, ExternalCodecConfig, ReferenceCodec, Transport};
use memlab::harness::{run_entries, RunConfig, SynthesisMode};
use memlab::synthetic::{generate, SyntheticConfig};
use memlab::Error;

fn corpus(entries: usize) -> Vec<memlab::corpus::WikiBioEntry> {
    generate(&SyntheticConfig {
        entries,
        seed: 11,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

/// Serves the reference codec on an ephemeral port, one thread per connection.
fn reference_server(cfg: &RunConfig) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let codec_cfg = cfg.codec.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            stream.set_nodelay(true).unwrap();
            let codec_cfg = codec_cfg.clone();
            thread::spawn(move || {
                let mut codec = ReferenceCodec::new(&codec_cfg).unwrap();
                let reader = BufReader::new(stream.try_clone().unwrap());
                let _ = wire::serve(&mut codec, reader, stream);
            });
        }
    });
    addr
}

/// Answers the handshake properly, then hands every later request to `reply`.
fn scripted_server(reply: fn(&str, &mut TcpStream)) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            thread::spawn(move || {
                let reader = BufReader::new(stream.try_clone().unwrap());
                for line in reader.lines() {
                    let Ok(line) = line else { break };
                    let req: serde_json::Value = serde_json::from_str(&line).unwrap();
                    if req["op"] == "hello" {
                        let resp = serde_json::json!({"id": req["id"], "version": "1", "latent_dim": req["latent_dim"]});
                        writeln!(stream, "{resp}").unwrap();
                    } else {
                        reply(&line, &mut stream);
                    }
                }
            });
        }
    });
    addr
}

fn external(cfg: &mut RunConfig, addr: &str, timeout_secs: f64) {
    cfg.codec.external = Some(ExternalCodecConfig {
        command: Vec::new(),
        address: Some(addr.to_string()),
        timeout_secs,
        decoding: Some(DecodingStrategy::Greedy),
    });
}

fn unwrap_pair(err: Error) -> (String, usize, Error) {
    match err {
        Error::Pair { entry_id, j, source } => (entry_id, j, *source),
        other => panic!("expected a pair-level error, got {other:?}"),
    }
}

#[test]
fn socket_codec_matches_in_process_reference() {
    let entries = corpus(12);
    for mode in [
        SynthesisMode::Base,
        SynthesisMode::Scaled { s: 3.0 },
        SynthesisMode::PartialInput { f: 0.5 },
    ] {
        let mut local = RunConfig::with_seed(4);
        local.mode = mode;
        let addr = reference_server(&local);
        let mut remote = local.clone();
        remote.parallelism = 3;
        external(&mut remote, &addr, 30.0);

        let a = run_entries(&local, &entries).unwrap();
        let b = run_entries(&remote, &entries).unwrap();
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.summaries, b.summaries);
        assert_eq!(a.records, b.records);
        assert_eq!(a.scale_estimate, b.scale_estimate);
    }
}

#[test]
fn handshake_checks_dimension() {
    let cfg = RunConfig::default();
    let addr = reference_server(&cfg);
    let err = ExternalCodec::connect(
        Transport::Socket(addr),
        cfg.codec.latent_dim + 1,
        DecodingStrategy::Greedy,
        Duration::from_secs(5),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Protocol { .. }), "{err:?}");
}

#[test]
fn proxy_roundtrips_single_calls() {
    let cfg = RunConfig::default();
    let addr = reference_server(&cfg);
    let mut remote = ExternalCodec::connect(
        Transport::Socket(addr),
        cfg.codec.latent_dim,
        DecodingStrategy::Sampling,
        Duration::from_secs(5),
    )
    .unwrap();
    let mut local = ReferenceCodec::new(&cfg.codec).unwrap();
    let text = "The quick brown fox jumps .";
    assert_eq!(remote.encode(text).unwrap(), local.encode(text).unwrap());
    remote.reset().unwrap();
}

#[test]
fn malformed_response_is_a_protocol_error() {
    let addr = scripted_server(|_, stream| {
        writeln!(stream, "this is not json").unwrap();
    });
    let mut cfg = RunConfig::default();
    external(&mut cfg, &addr, 5.0);
    let err = run_entries(&cfg, &corpus(2)).unwrap_err();
    let (entry_id, j, source) = unwrap_pair(err);
    assert_eq!((entry_id.as_str(), j), ("syn-0000", 1));
    match source {
        Error::Protocol { payload, .. } => assert_eq!(payload, "this is not json"),
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn wrong_vector_length_is_a_protocol_error() {
    let addr = scripted_server(|line, stream| {
        let req: serde_json::Value = serde_json::from_str(line).unwrap();
        let resp = serde_json::json!({"id": req["id"], "ok": true, "vector": [1.0, 2.0], "text": "x"});
        writeln!(stream, "{resp}").unwrap();
    });
    let mut cfg = RunConfig::default();
    external(&mut cfg, &addr, 5.0);
    let (_, _, source) = unwrap_pair(run_entries(&cfg, &corpus(1)).unwrap_err());
    assert!(matches!(source, Error::Protocol { .. }), "{source:?}");
}

#[test]
fn codec_error_reply_is_reported() {
    let addr = scripted_server(|line, stream| {
        let req: serde_json::Value = serde_json::from_str(line).unwrap();
        let resp = serde_json::json!({"id": req["id"], "error": "model not loaded"});
        writeln!(stream, "{resp}").unwrap();
    });
    let mut cfg = RunConfig::default();
    external(&mut cfg, &addr, 5.0);
    let (_, _, source) = unwrap_pair(run_entries(&cfg, &corpus(1)).unwrap_err());
    assert!(source.to_string().contains("model not loaded"), "{source}");
}

#[test]
fn silent_codec_times_out_with_pair_context() {
    let addr = scripted_server(|_, _| thread::sleep(Duration::from_secs(30)));
    let mut cfg = RunConfig::default();
    external(&mut cfg, &addr, 0.2);
    let start = Instant::now();
    let err = run_entries(&cfg, &corpus(1)).unwrap_err();
    assert!(start.elapsed() < Duration::from_secs(10));
    let (entry_id, j, source) = unwrap_pair(err);
    assert_eq!((entry_id.as_str(), j), ("syn-0000", 1));
    match source {
        Error::Timeout { seconds, .. } => assert!((seconds - 0.2).abs() < 1e-9),
        other => panic!("expected timeout, got {other:?}"),
    }
}

#[test]
fn skipped_failures_are_logged_per_entry() {
    let addr = scripted_server(|_, stream| {
        writeln!(stream, "{{}}").unwrap();
    });
    let mut cfg = RunConfig::default();
    cfg.skip_failures = true;
    external(&mut cfg, &addr, 5.0);
    let report = run_entries(&cfg, &corpus(3)).unwrap();
    assert_eq!(report.failures().count(), 3);
    assert!(report.summaries.is_none());
    assert!(report.entries.iter().all(|e| e.text.is_none() && e.error.is_some()));
}

#[test]
fn unreachable_codec_fails_to_connect() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let mut cfg = RunConfig::default();
    external(&mut cfg, &addr, 1.0);
    let err = run_entries(&cfg, &corpus(1)).unwrap_err();
    assert!(matches!(err, Error::Connection(_)), "{err:?}");
}

#[test]
fn external_codec_requires_decoding_strategy() {
    let mut cfg = RunConfig::default();
    external(&mut cfg, "127.0.0.1:9", 1.0);
    cfg.codec.external.as_mut().unwrap().decoding = None;
    assert!(run_entries(&cfg, &corpus(1)).is_err());
}
