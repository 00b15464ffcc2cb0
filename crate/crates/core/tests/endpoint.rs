use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use defminer::corpus::{Document, Domain, DomainOrigin, Source};
use defminer::endpoint::ClassifierEndpoint;
use defminer::extract::{extract_candidates, DefinitionCandidate, PatternTemplate};
use defminer::filter::{classify_all, classify_external, Completeness, FilterRules, RULE_EXTERNAL, RULE_FALLBACK};
use defminer::vector_space::{embed_external, EmbeddingSource, VectorizerConfig};
use defminer::Error;

struct Mock {
    url: String,
    bodies: Arc<Mutex<Vec<String>>>,
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

/// Serves `reply` with `status` to every request after `delay`.
fn serve(status: u16, reply: &'static str, delay: Duration) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/classify", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&bodies);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let seen = Arc::clone(&seen);
            thread::spawn(move || {
                let body = read_request(&mut stream);
                seen.lock().unwrap().push(body);
                thread::sleep(delay);
                let response = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
                let _ = stream.write_all(response.as_bytes());
            });
        }
    });
    Mock { url, bodies }
}

fn candidate(text: &str) -> DefinitionCandidate {
    let doc = Document {
        id: "d".into(),
        title: String::new(),
        year: Some(2020),
        venue: String::new(),
        subject: String::new(),
        domain: Domain::Building,
        domain_origin: DomainOrigin::Metadata,
        source: Source::Article,
        text: text.into(),
    };
    let pattern = PatternTemplate::new("digital twin").compile().unwrap();
    extract_candidates(&doc, &pattern).remove(0)
}

const COMPLETE: &str = "Digital twin is a virtual representation of a physical asset that securely holds all relevant static and dynamic information.";

fn endpoint(url: &str, timeout_ms: u64) -> ClassifierEndpoint {
    ClassifierEndpoint {
        timeout_ms,
        retries: 0,
        ..ClassifierEndpoint::enabled(url)
    }
}

#[test]
fn classifier_label_is_used() {
    let mock = serve(200, r#"{"label": "incomplete", "confidence": 0.8}"#, Duration::ZERO);
    let v = classify_external(&candidate(COMPLETE), &endpoint(&mock.url, 2000), &FilterRules::default()).unwrap();
    assert_eq!(v.label, Completeness::Incomplete);
    assert_eq!(v.rule, RULE_EXTERNAL);
    assert_eq!(v.confidence, 0.8);
    let bodies = mock.bodies.lock().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["task"], "definition_completeness");
    assert_eq!(sent["text"], COMPLETE);
}

#[test]
fn timeout_falls_back_to_heuristics() {
    let mock = serve(200, r#"{"label": "incomplete", "confidence": 0.8}"#, Duration::from_millis(800));
    let v = classify_external(&candidate(COMPLETE), &endpoint(&mock.url, 100), &FilterRules::default()).unwrap();
    assert_eq!(v.rule, RULE_FALLBACK);
    assert_eq!(v.label, Completeness::Complete);
}

#[test]
fn timeout_without_fallback_is_an_endpoint_error() {
    let mock = serve(200, r#"{"label": "complete", "confidence": 1.0}"#, Duration::from_millis(800));
    let ep = ClassifierEndpoint {
        allow_fallback: false,
        ..endpoint(&mock.url, 100)
    };
    let err = classify_external(&candidate(COMPLETE), &ep, &FilterRules::default()).unwrap_err();
    assert!(matches!(err, Error::Endpoint(_)), "{err:?}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn disabled_endpoint_never_connects() {
    let mock = serve(200, r#"{"label": "incomplete", "confidence": 0.8}"#, Duration::ZERO);
    let ep = ClassifierEndpoint {
        url: mock.url.clone(),
        ..ClassifierEndpoint::disabled()
    };
    let v = classify_external(&candidate(COMPLETE), &ep, &FilterRules::default()).unwrap();
    assert_eq!(v.rule, "passed");
    assert!(mock.bodies.lock().unwrap().is_empty());
}

#[test]
fn malformed_or_out_of_range_replies_fall_back() {
    for reply in [r#"{"verdict": "yes"}"#, r#"{"label": "complete", "confidence": 1.5}"#, "not json"] {
        let mock = serve(200, reply, Duration::ZERO);
        let v = classify_external(&candidate(COMPLETE), &endpoint(&mock.url, 2000), &FilterRules::default()).unwrap();
        assert_eq!(v.rule, RULE_FALLBACK, "reply {reply}");
    }
}

#[test]
fn server_error_is_retried_then_falls_back() {
    let mock = serve(500, r#"{"error": "busy"}"#, Duration::ZERO);
    let ep = ClassifierEndpoint {
        retries: 2,
        ..endpoint(&mock.url, 2000)
    };
    let v = classify_external(&candidate(COMPLETE), &ep, &FilterRules::default()).unwrap();
    assert_eq!(v.rule, RULE_FALLBACK);
    assert_eq!(mock.bodies.lock().unwrap().len(), 3);
}

#[test]
fn classify_all_keeps_candidate_order() {
    let mock = serve(200, r#"{"label": "complete", "confidence": 0.9}"#, Duration::from_millis(20));
    let cands: Vec<_> = (0..9)
        .map(|i| {
            let mut c = candidate(COMPLETE);
            c.id = format!("c{i}");
            c
        })
        .collect();
    let ep = ClassifierEndpoint {
        max_in_flight: 3,
        ..endpoint(&mock.url, 2000)
    };
    let verdicts = classify_all(&cands, &ep, &FilterRules::default()).unwrap();
    let ids: Vec<_> = verdicts.iter().map(|v| v.candidate_id.as_str()).collect();
    assert_eq!(ids, ["c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8"]);
    assert!(verdicts.iter().all(|v| v.rule == RULE_EXTERNAL));
}

#[test]
fn embedding_service_vectors_are_used() {
    let mock = serve(200, r#"{"vectors": [[1.0, 0.0], [0.0, 2.0]]}"#, Duration::ZERO);
    let ids = vec!["a".to_string(), "b".to_string()];
    let texts = vec!["first sentence".to_string(), "second sentence".to_string()];
    let (vectors, source) = embed_external(&ids, &texts, &endpoint(&mock.url, 2000), &VectorizerConfig::default()).unwrap();
    assert_eq!(source, EmbeddingSource::External);
    assert_eq!(vectors[1].values, vec![0.0, 2.0]);
}

#[test]
fn embedding_service_with_ragged_vectors_is_rejected() {
    let mock = serve(200, r#"{"vectors": [[1.0, 0.0], [0.0]]}"#, Duration::ZERO);
    let ids = vec!["a".to_string(), "b".to_string()];
    let texts = vec!["first sentence".to_string(), "second sentence".to_string()];
    assert!(embed_external(&ids, &texts, &endpoint(&mock.url, 2000), &VectorizerConfig::default()).is_err());
}

#[test]
fn unreachable_embedding_service_falls_back() {
    // bind then drop to get a port nobody listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/embed");
    let ids = vec!["a".to_string(), "b".to_string()];
    let texts = vec!["digital replica of plants".to_string(), "virtual model of cities".to_string()];
    let (vectors, source) = embed_external(&ids, &texts, &endpoint(&url, 500), &VectorizerConfig::default()).unwrap();
    assert_eq!(source, EmbeddingSource::Fallback);
    assert_eq!(vectors.len(), 2);
}
