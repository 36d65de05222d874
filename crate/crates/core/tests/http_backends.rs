//! Integration tests for the three HTTP backend contracts (embedding,
//! question answering, question generation) against a local canned-response
//! server, including retry and failure paths.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write as IoWrite};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use chrono::NaiveDate;
use serde_json::json;

use trialmatch_core::concepts::{ConceptBook, ConceptLabel};
use trialmatch_core::criteria_logic::{AnswerValue, CriterionKind, Question};
use trialmatch_core::note_store::{chunk_note, ClinicalNote, PatientHeader, SentenceSplitter};
use trialmatch_core::qa_engine::{
    answer_question, HttpQaBackend, PromptTemplate, QaBackend, QaBackendConfig, QaContext,
    QaError, QaRequest,
};
use trialmatch_core::retriever::{
    index_chunks, EmbeddingProvider, HttpEmbedder, MockEmbedder, RetrieverError,
};
use trialmatch_core::trial_composer::{
    compose_trial, ComposeError, HttpQuestionGenerator, QuestionGenerator, RawTrial,
    ScriptedClassifier,
};

/// One scripted reply for one incoming connection.
enum Canned {
    /// Respond 200 with this JSON body.
    Json(String),
    /// Respond with this status code and body.
    Status(u16, String),
    /// Read the request, then close the socket without responding.
    DropAfterRead,
}

/// Minimal HTTP/1.1 server: answers each accepted connection with the next
/// scripted reply and records the request line and body it saw.
struct CannedServer {
    endpoint: String,
    captured: Arc<Mutex<Vec<(String, String)>>>,
}

impl CannedServer {
    fn start(replies: Vec<Canned>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind ephemeral port");
        let endpoint = format!("http://{}", listener.local_addr().unwrap());
        let captured = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&captured);
        thread::spawn(move || {
            for reply in replies {
                let Ok((stream, _)) = listener.accept() else {
                    return;
                };
                let Ok((request_line, body)) = read_request(&stream) else {
                    return;
                };
                sink.lock().unwrap().push((request_line, body));
                match reply {
                    Canned::DropAfterRead => drop(stream),
                    Canned::Json(body) => respond(stream, 200, &body),
                    Canned::Status(code, body) => respond(stream, code, &body),
                }
            }
        });
        CannedServer { endpoint, captured }
    }

    fn requests(&self) -> Vec<(String, String)> {
        self.captured.lock().unwrap().clone()
    }
}

fn read_request(stream: &TcpStream) -> std::io::Result<(String, String)> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut content_length: Option<usize> = None;
    let mut chunked = false;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim().to_ascii_lowercase();
            let value = value.trim();
            if name == "content-length" {
                content_length = value.parse().ok();
            } else if name == "transfer-encoding" && value.eq_ignore_ascii_case("chunked") {
                chunked = true;
            }
        }
    }
    let mut body = Vec::new();
    if let Some(len) = content_length {
        body.resize(len, 0);
        reader.read_exact(&mut body)?;
    } else if chunked {
        loop {
            let mut size_line = String::new();
            reader.read_line(&mut size_line)?;
            let size = usize::from_str_radix(size_line.trim(), 16).unwrap_or(0);
            if size == 0 {
                let mut trailer = String::new();
                reader.read_line(&mut trailer)?;
                break;
            }
            let mut chunk = vec![0; size + 2];
            reader.read_exact(&mut chunk)?;
            body.extend_from_slice(&chunk[..size]);
        }
    }
    Ok((
        request_line.trim_end().to_string(),
        String::from_utf8_lossy(&body).into_owned(),
    ))
}

fn respond(mut stream: TcpStream, code: u16, body: &str) {
    let reason = match code {
        200 => "OK",
        500 => "Internal Server Error",
        _ => "Status",
    };
    let response = format!(
        "HTTP/1.1 {code} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

fn ok_vectors(vectors: serde_json::Value) -> Canned {
    Canned::Json(json!({ "vectors": vectors }).to_string())
}

// --- embedding backend ---

#[test]
fn embedder_round_trip_and_request_shape() {
    let server = CannedServer::start(vec![ok_vectors(json!([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))]);
    let embedder = HttpEmbedder::new(server.endpoint.as_str(), "http-embed", 3);
    let texts = vec!["first chunk".to_string(), "second chunk".to_string()];

    let vectors = embedder.embed_batch(&texts).unwrap();
    assert_eq!(vectors.len(), 2);
    assert_eq!(vectors[0].dim(), 3);

    let requests = server.requests();
    assert_eq!(requests.len(), 1);
    let (request_line, body) = &requests[0];
    assert!(request_line.starts_with("POST "), "got: {request_line}");
    let parsed: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!(parsed["texts"], json!(["first chunk", "second chunk"]));
}

#[test]
fn embedder_retries_after_server_error_then_succeeds() {
    let server = CannedServer::start(vec![
        Canned::Status(500, "overloaded".into()),
        ok_vectors(json!([[0.5, 0.5]])),
    ]);
    let embedder = HttpEmbedder::new(server.endpoint.as_str(), "http-embed", 2);

    let vectors = embedder.embed_batch(&["only text".to_string()]).unwrap();
    assert_eq!(vectors.len(), 1);
    assert_eq!(server.requests().len(), 2, "one failed attempt plus one retry");
}

#[test]
fn embedder_reports_transport_failure_after_exhausting_retries() {
    let server = CannedServer::start(vec![
        Canned::Status(500, String::new()),
        Canned::DropAfterRead,
        Canned::Status(500, String::new()),
    ]);
    let embedder = HttpEmbedder::new(server.endpoint.as_str(), "http-embed", 2);

    let err = embedder.embed_batch(&["text".to_string()]).unwrap_err();
    match err {
        RetrieverError::Transport { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("expected transport error, got {other}"),
    }
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn embedder_rejects_count_mismatch() {
    let only_one = || ok_vectors(json!([[1.0, 0.0]]));
    let server = CannedServer::start(vec![only_one(), only_one(), only_one()]);
    let embedder = HttpEmbedder::new(server.endpoint.as_str(), "http-embed", 2);

    let texts = vec!["a".to_string(), "b".to_string()];
    let err = embedder.embed_batch(&texts).unwrap_err();
    match err {
        RetrieverError::CountMismatch { expected, got } => {
            assert_eq!((expected, got), (2, 1));
        }
        other => panic!("expected count mismatch, got {other}"),
    }
}

#[test]
fn embedder_rejects_dimension_drift() {
    let wrong_dim = || ok_vectors(json!([[1.0, 0.0, 0.0]]));
    let server = CannedServer::start(vec![wrong_dim(), wrong_dim(), wrong_dim()]);
    let embedder = HttpEmbedder::new(server.endpoint.as_str(), "http-embed", 2);

    let err = embedder.embed_batch(&["a".to_string()]).unwrap_err();
    match err {
        RetrieverError::DimensionDrift { expected, got } => {
            assert_eq!((expected, got), (2, 3));
        }
        other => panic!("expected dimension drift, got {other}"),
    }
}

#[test]
fn embedder_splits_oversized_inputs_into_batches() {
    let server = CannedServer::start(vec![
        ok_vectors(json!([[1.0, 0.0]])),
        ok_vectors(json!([[0.0, 1.0]])),
    ]);
    let mut embedder = HttpEmbedder::new(server.endpoint.as_str(), "http-embed", 2);
    embedder.batch_size = 1;

    let texts = vec!["a".to_string(), "b".to_string()];
    let vectors = embedder.embed_batch(&texts).unwrap();
    assert_eq!(vectors.len(), 2);

    let requests = server.requests();
    assert_eq!(requests.len(), 2);
    let first: serde_json::Value = serde_json::from_str(&requests[0].1).unwrap();
    let second: serde_json::Value = serde_json::from_str(&requests[1].1).unwrap();
    assert_eq!(first["texts"], json!(["a"]));
    assert_eq!(second["texts"], json!(["b"]));
}

// --- question-answering backend ---

#[test]
fn qa_backend_round_trip_and_request_shape() {
    let inner = json!({
        "question_explanation": "asks about diagnosis",
        "answer_explanation": "melanoma is documented",
        "answer": "Yes",
        "confidence": 4
    })
    .to_string();
    let server = CannedServer::start(vec![Canned::Json(json!({ "text": inner }).to_string())]);
    let backend = HttpQaBackend::new(server.endpoint.as_str(), "http-qa", 60);

    let request = QaRequest {
        patient_id: "p1".into(),
        question_id: "q1".into(),
        prompt: "the full prompt".into(),
    };
    let config = QaBackendConfig::default();
    let text = backend.call(&request, &config).unwrap();
    assert_eq!(text, inner);

    let requests = server.requests();
    assert_eq!(requests.len(), 1);
    let parsed: serde_json::Value = serde_json::from_str(&requests[0].1).unwrap();
    assert_eq!(parsed["prompt"], json!("the full prompt"));
    assert_eq!(parsed["temperature"], json!(0.0));
    assert_eq!(parsed["max_chars"], json!(8000));
}

#[test]
fn qa_backend_maps_http_failure_to_transport() {
    let server = CannedServer::start(vec![Canned::Status(500, "boom".into())]);
    let backend = HttpQaBackend::new(server.endpoint.as_str(), "http-qa", 60);

    let request = QaRequest {
        patient_id: "p1".into(),
        question_id: "q1".into(),
        prompt: "prompt".into(),
    };
    let err = backend.call(&request, &QaBackendConfig::default()).unwrap_err();
    assert!(matches!(err, QaError::Transport { attempts: 1, .. }));
}

/// Builds a one-note QA context over the mock embedding index and runs the
/// full answering flow against the HTTP backend.
fn answer_over_http(server: &CannedServer) -> Result<trialmatch_core::qa_engine::QaOutcome, QaError> {
    let note = ClinicalNote {
        patient_id: "p1".into(),
        note_id: "n1".into(),
        category: "Progress Notes".into(),
        date: NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(),
        text: "Diagnosed with stage II melanoma. ECOG performance status is 1.".into(),
    };
    let chunks = chunk_note(&note, &SentenceSplitter::default(), 256).unwrap();
    let chunks_by_id: BTreeMap<String, _> =
        chunks.iter().map(|c| (c.chunk_id.clone(), c.clone())).collect();
    let provider = MockEmbedder;
    let index = index_chunks(&chunks, &provider).unwrap();
    let header = PatientHeader {
        patient_id: "p1".into(),
        age_at_enrollment: 61,
        enrollment_date: NaiveDate::from_ymd_opt(2021, 4, 1).unwrap(),
    };
    let template = PromptTemplate::qa_v1();
    let ctx = QaContext {
        header: &header,
        chunks_by_id: &chunks_by_id,
        index: &index,
        provider: &provider,
        top_k: 5,
        template: &template,
    };
    let question = Question {
        id: "t1-inc-1-q1".into(),
        text: "Does the patient have melanoma?".into(),
        concept: ConceptLabel::new("Cancer Type"),
    };
    let backend = HttpQaBackend::new(server.endpoint.as_str(), "http-qa", 60);
    answer_question(&ctx, &question, &backend, &QaBackendConfig::default())
}

#[test]
fn qa_flow_retries_transport_over_http_then_succeeds() {
    let inner = json!({
        "question_explanation": "asks about diagnosis",
        "answer_explanation": "melanoma is documented in the notes",
        "answer": "Yes",
        "confidence": 5
    })
    .to_string();
    let server = CannedServer::start(vec![
        Canned::DropAfterRead,
        Canned::Json(json!({ "text": inner }).to_string()),
    ]);

    let outcome = answer_over_http(&server).unwrap();
    assert_eq!(outcome.record.answer, AnswerValue::Yes);
    assert_eq!(outcome.record.confidence, 5);
    assert_eq!(outcome.record.backend_tag, "http-qa");
    assert!(outcome.record.fallback_reason.is_none());
    assert!(outcome.usage.input_tokens > 0);
    assert!(outcome.usage.output_tokens > 0);
    assert_eq!(server.requests().len(), 2, "one dropped attempt plus one retry");
}

#[test]
fn qa_flow_propagates_transport_after_exhausting_retries() {
    let server = CannedServer::start(vec![
        Canned::Status(500, String::new()),
        Canned::DropAfterRead,
        Canned::Status(500, String::new()),
    ]);

    let err = answer_over_http(&server).unwrap_err();
    match err {
        QaError::Transport { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("expected transport error, got {other}"),
    }
    assert_eq!(server.requests().len(), 3);
}

// --- question generator backend ---

#[test]
fn generator_round_trip_and_request_shape() {
    let output = json!({
        "questions": [
            { "text": "Does the patient have melanoma?", "concept": "Cancer Type" },
            { "text": "Is the patient at least 18 years old?" }
        ],
        "dnf": [[{ "q_index": 0 }, { "q_index": 1 }]]
    });
    let server = CannedServer::start(vec![Canned::Json(output.to_string())]);
    let generator = HttpQuestionGenerator::new(server.endpoint.as_str(), "http-gen", 60);

    let got = generator
        .generate("Histologically confirmed melanoma, age 18+.", CriterionKind::Inclusion)
        .unwrap();
    assert_eq!(got.questions.len(), 2);
    assert_eq!(got.questions[0].concept, Some(ConceptLabel::new("Cancer Type")));
    assert_eq!(got.questions[1].concept, None);
    assert_eq!(got.dnf.len(), 1);
    assert_eq!(got.dnf[0].len(), 2);

    let requests = server.requests();
    assert_eq!(requests.len(), 1);
    let parsed: serde_json::Value = serde_json::from_str(&requests[0].1).unwrap();
    assert_eq!(
        parsed["criterion_text"],
        json!("Histologically confirmed melanoma, age 18+.")
    );
    assert_eq!(parsed["kind"], json!("Inclusion"));
}

#[test]
fn generator_malformed_body_is_format_error() {
    let server = CannedServer::start(vec![Canned::Json("this is not json".into())]);
    let generator = HttpQuestionGenerator::new(server.endpoint.as_str(), "http-gen", 60);

    let err = generator.generate("Some criterion.", CriterionKind::Exclusion).unwrap_err();
    match err {
        ComposeError::Format { raw, .. } => assert_eq!(raw, "this is not json"),
        other => panic!("expected format error, got {other}"),
    }
}

#[test]
fn generator_http_failure_is_transport() {
    let server = CannedServer::start(vec![Canned::DropAfterRead]);
    let generator = HttpQuestionGenerator::new(server.endpoint.as_str(), "http-gen", 60);

    let err = generator.generate("Some criterion.", CriterionKind::Inclusion).unwrap_err();
    assert!(matches!(err, ComposeError::Transport { .. }));
}

#[test]
fn compose_flags_criterion_after_repeated_malformed_generations() {
    let garbage = || Canned::Json("not a generator payload".into());
    let server = CannedServer::start(vec![garbage(), garbage(), garbage()]);
    let generator = HttpQuestionGenerator::new(server.endpoint.as_str(), "http-gen", 60);
    let classifier = ScriptedClassifier::new(BTreeMap::new());
    let raw = RawTrial {
        trial_id: "NCT9999".into(),
        title: "Example study".into(),
        inclusion_text: "Histologically confirmed melanoma.".into(),
        exclusion_text: String::new(),
    };

    let spec = compose_trial(&raw, &generator, &classifier, &ConceptBook::default()).unwrap();
    assert_eq!(spec.criteria.len(), 1);
    let criterion = &spec.criteria[0];
    assert!(criterion.flagged);
    assert!(criterion.logic.clauses.is_empty());
    assert_eq!(criterion.tier, 4);
    assert!(spec.questions.is_empty());
    assert_eq!(server.requests().len(), 3, "initial attempt plus two retries");
}
