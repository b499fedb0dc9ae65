use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::*;
use crate::cotune::Source;
use crate::error::Error;

fn write(dir: &std::path::Path, rel: &str, text: &str) {
    let p = dir.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(p, text).unwrap();
}

fn canned(text: &'static str) -> FnBackend<impl Fn(&str, &GenerationParams) -> crate::Result<String> + Send + Sync> {
    FnBackend(move |_: &str, _: &GenerationParams| Ok(text.to_string()))
}

#[test]
fn ingestion_orders_strips_and_skips() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ingest_corpus(dir.path()).unwrap().is_empty());
    write(dir.path(), "b.md", "# Beta\nBody text.\n");
    write(dir.path(), "a.html", "<html><head><title>Alpha</title><style>p{}</style></head><body><p>Hi &amp; bye</p><script>x()</script></body></html>");
    write(dir.path(), "c.txt", "   \n");
    let docs = ingest_corpus(dir.path()).unwrap();
    assert_eq!(docs.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["a.html", "b.md"]);
    assert_eq!(docs[1].body, "# Beta\nBody text.\n");
    assert_eq!(docs[1].title, "Beta");
    assert_eq!(docs[0].title, "Alpha");
    let tag = regex::Regex::new(r"<[^>]*>").unwrap();
    assert!(!tag.is_match(&docs[0].body), "{}", docs[0].body);
    assert!(docs[0].body.contains("Hi & bye"));
    assert!(!docs[0].body.contains("x()"));
    assert!(ingest_corpus(&dir.path().join("missing")).is_err());
}

#[test]
fn html_stripping_matches_an_independent_pass() {
    let html = "<div class=\"a\">Sensor <b>fusion</b></div>\n<ul><li>IMU</li><li>GPS</li></ul>";
    let ours = strip_html(html);
    let oracle = regex::Regex::new(r"<[^>]*>").unwrap().replace_all(html, " ");
    let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    assert_eq!(words(&ours), words(&oracle));
}

#[test]
fn layout_classification() {
    assert_eq!(classify("papers/x.md"), Some(DocKind::Paper));
    assert_eq!(
        classify("packages/scipy/api/signal.md"),
        Some(DocKind::ApiReference { package: "scipy".into() })
    );
    assert_eq!(
        classify("packages/scipy/gallery/peaks.md"),
        Some(DocKind::ExampleGallery { package: "scipy".into() })
    );
    assert_eq!(classify("notes/x.md"), None);
    assert_eq!(classify("packages/scipy/readme.md"), None);
}

fn doc(id: &str, title: &str, body: &str) -> Document {
    Document {
        id: id.into(),
        title: title.into(),
        body: body.into(),
    }
}

#[test]
fn module_extraction() {
    let two = canned("Module: Sensing\nDescription: Reads the IMU.\n\nModule: Model\nDescription: Classifies\nactivities.");
    let f = Forge::new(&two, ForgeOptions::default());
    let m = f.extract_modules(&doc("papers/p.md", "P", "text")).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m[1].description, "Classifies activities.");
    assert_eq!(m[0].source_doc, "papers/p.md");

    let none = canned("NONE");
    assert!(Forge::new(&none, ForgeOptions::default()).extract_modules(&doc("p", "P", "t")).unwrap().is_empty());
    let junk = canned("the system has a sensing part and a model");
    let err = Forge::new(&junk, ForgeOptions::default()).extract_modules(&doc("p", "P", "t"));
    assert!(matches!(err, Err(Error::Format { .. })));
}

#[test]
fn backend_failures_are_retried_then_surfaced() {
    let calls = AtomicUsize::new(0);
    let flaky = FnBackend(|_: &str, _: &GenerationParams| {
        if calls.fetch_add(1, Ordering::SeqCst) < 2 {
            Err(Error::Backend {
                message: "busy".into(),
                attempts: 1,
            })
        } else {
            Ok("NONE".into())
        }
    });
    let f = Forge::new(&flaky, ForgeOptions::default());
    assert!(f.extract_modules(&doc("p", "P", "t")).unwrap().is_empty());
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    let down = FnBackend(|_: &str, _: &GenerationParams| {
        Err(Error::Backend {
            message: "down".into(),
            attempts: 1,
        })
    });
    match Forge::new(&down, ForgeOptions::default()).extract_modules(&doc("p", "P", "t")) {
        Err(Error::Backend { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
}

fn module() -> TechnicalModule {
    TechnicalModule {
        name: "HAR".into(),
        description: "Recognize activities from IMU windows.".into(),
        source_doc: "papers/har.md".into(),
    }
}

#[test]
fn module_decomposition() {
    let ab = canned("A\n\nB");
    let d = Forge::new(&ab, ForgeOptions::default()).decompose_module(&module(), "t0").unwrap();
    assert_eq!(d.record.subtasks, ["A", "B"]);
    assert!(d.notes.is_empty());
    assert_eq!(d.record.response(), "A\n\nB");

    let wide = canned("A\n\n\nB");
    let d = Forge::new(&wide, ForgeOptions::default()).decompose_module(&module(), "t0").unwrap();
    assert_eq!(d.record.subtasks, ["A", "B"]);
    assert_eq!(d.notes.len(), 1);

    let empty = canned("\n\n");
    let e = Forge::new(&empty, ForgeOptions::default()).decompose_module(&module(), "t0");
    assert!(matches!(e, Err(Error::Format { .. })));
}

#[test]
fn augmentation_cardinality_and_provenance() {
    let stub = DeterministicStub::new(7);
    let opts = ForgeOptions {
        fanout: 2,
        ..ForgeOptions::default()
    };
    let f = Forge::new(&stub, opts);
    let base = f.decompose_module(&module(), "tdd-har-0").unwrap().record;
    let mut total = 0;
    for axis in AugmentationAxis::ALL {
        let o = f.augment_problem(&base, axis).unwrap();
        assert!(o.accepted.len() + o.rejected.len() <= 2);
        for r in &o.accepted {
            assert_eq!(r.provenance.axis, Some(axis));
            assert_eq!(r.provenance.parent.as_deref(), Some("tdd-har-0"));
            assert_ne!(r.problem_statement, base.problem_statement);
            r.validate().unwrap();
        }
        total += o.accepted.len();
    }
    assert!(total <= 3 * 2);

    let imu = TddRecord {
        problem_statement: "Recognize activities from IMU windows.".into(),
        ..base
    };
    let single = Forge::new(&stub, ForgeOptions::default());
    let o = single.augment_problem(&imu, AugmentationAxis::SensorModality).unwrap();
    let s = &o.accepted[0].problem_statement;
    assert!(!s.contains("IMU"), "{s}");
    assert!(["ECG", "PPG", "WiFi CSI", "acoustic", "mmWave radar"].iter().any(|m| s.contains(m)));
}

#[test]
fn stub_is_pure() {
    let p = prompts::decompose("Detect steps. Count them.");
    let a = DeterministicStub::new(3).generate(&p, &GenerationParams::default()).unwrap();
    let b = DeterministicStub::new(3).generate(&p, &GenerationParams::default()).unwrap();
    assert_eq!(a, b);
    assert!(crate::format::is_well_formed_decomposition(&a));
    assert!(DeterministicStub::new(3).generate("free text", &GenerationParams::default()).is_err());
}

#[test]
fn prompt_templates_round_trip() {
    let p = prompts::module_code("scipy", "signal.find_peaks", "Finds peaks.\nSecond line.");
    let (role, f) = prompts::parse_prompt(&p).unwrap();
    assert_eq!(role, prompts::Role::ModuleCode);
    assert_eq!(f["module"], "signal.find_peaks");
    assert_eq!(f["metadata"], "Finds peaks.\nSecond line.");
}

fn tagged(id: &str, title: &str, body: &str) -> TaggedDocument {
    TaggedDocument {
        kind: classify(id),
        doc: doc(id, title, body),
    }
}

#[test]
fn code_dataset_variants() {
    let stub = DeterministicStub::new(0);
    let f = Forge::new(&stub, ForgeOptions::default());
    let api = tagged("packages/scipy/api/find_peaks.md", "signal.find_peaks", "Find peaks in a 1-D signal.");
    let (c, r) = f.build_cgd(std::slice::from_ref(&api)).unwrap();
    assert!(r.is_empty());
    assert_eq!(c.iter().map(|x| x.variant).collect::<Vec<_>>(), [CgdVariant::D1, CgdVariant::D2]);
    assert_eq!(c[0].response, "Find peaks in a 1-D signal.");
    for x in &c {
        x.validate().unwrap();
    }

    let gallery = tagged(
        "packages/scipy/gallery/peaks.md",
        "Detect ECG peaks",
        "Shows peak picking.\n\n```python\npeaks = find_peaks(x)\n```\n",
    );
    let (c, _) = f.build_cgd(std::slice::from_ref(&gallery)).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].variant, CgdVariant::D3);
    crate::pipeline::TaskSpecification::parse(&c[0].task_specification).unwrap();
    assert!(c[0].response.starts_with("```python\npeaks = find_peaks(x)\n```\n"));

    let stray = tagged("notes/x.md", "X", "text");
    assert!(matches!(f.build_cgd(&[stray]), Err(Error::Classification { .. })));
}

#[test]
fn jsonl_round_trip_and_errors() {
    assert!(parse_dataset(&serialize_dataset(&[]).unwrap()).unwrap().is_empty());
    let r = DatasetRecord {
        id: "x".into(),
        source: Source::Cgd,
        prompt: "é ☃ \"quoted\"\ttab".into(),
        response: "```python\nprint('ü')\n```\nDoc.".into(),
        provenance: Provenance {
            source_doc: "a".into(),
            variant: Some(CgdVariant::D2),
            ..Provenance::default()
        },
    };
    let text = serialize_dataset(&[r.clone(), r.clone()]).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(parse_dataset(&text).unwrap(), [r.clone(), r]);
    let bad = format!("{}{{\"id\": 1}}\n", text);
    match parse_dataset(&bad) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn tdd_record_requires_canonical_response() {
    let rec = TddRecord {
        id: "t".into(),
        problem_statement: "p".into(),
        subtasks: vec!["a\nmore".into(), "b".into()],
        provenance: Provenance::default(),
    };
    let r = rec.to_record();
    assert_eq!(r.response, "a\nmore\n\nb");
    assert_eq!(TddRecord::from_record(&r).unwrap(), rec);
    let wide = DatasetRecord {
        response: "a\n\n\nb".into(),
        ..r
    };
    assert!(TddRecord::from_record(&wide).is_err());
}

fn serve_once(status: &'static str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0usize;
        let mut head = String::new();
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            head.push_str(&line);
            if line == "\r\n" {
                break;
            }
        }
        let mut req = vec![0u8; len];
        reader.read_exact(&mut req).unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        head + &String::from_utf8(req).unwrap()
    });
    (url, handle)
}

#[test]
fn remote_backend_speaks_json() {
    let (url, h) = serve_once("200 OK", "{\"text\": \"Module: A\\nDescription: b\"}");
    let backend = RemoteBackend::new(url, Some("secret".into()));
    let out = backend.generate("hello", &GenerationParams::default()).unwrap();
    assert_eq!(out, "Module: A\nDescription: b");
    let request = h.join().unwrap();
    assert!(request.contains("Bearer secret"));
    assert!(request.contains("\"prompt\":\"hello\""));

    let (url, h) = serve_once("500 Internal Server Error", "{}");
    let e = RemoteBackend::new(url, None).generate("x", &GenerationParams::default());
    assert!(matches!(e, Err(Error::Backend { .. })));
    h.join().unwrap();
}

#[test]
fn recording_then_replay_reproduces_outputs() {
    let rec = RecordingBackend::new(DeterministicStub::new(1));
    let f = Forge::new(&rec, ForgeOptions::default());
    let first = f.decompose_module(&module(), "t").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transcript.jsonl");
    rec.save(&path).unwrap();
    let replay = ReplayBackend::load(&path).unwrap();
    let again = Forge::new(&replay, ForgeOptions::default()).decompose_module(&module(), "t").unwrap();
    assert_eq!(first, again);
}

#[test]
fn whole_corpus_forge_is_pure() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "papers/har.md", "# HAR\n\n## Sensing\nReads IMU windows.\n\n## Model\nClassifies activities. Reports labels.\n");
    write(dir.path(), "packages/scipy/api/find_peaks.md", "# signal.find_peaks\nFind peaks.\n");
    write(dir.path(), "packages/scipy/gallery/peaks.md", "# Peak demo\nDemo.\n```python\np = 1\n```\n");
    let run = |parallelism| {
        let stub = DeterministicStub::new(5);
        let f = Forge::new(
            &stub,
            ForgeOptions {
                parallelism,
                ..ForgeOptions::default()
            },
        );
        f.forge_corpus(dir.path()).unwrap()
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a, b);
    assert_eq!(a.cgd.len(), 3);
    let originals: Vec<_> = a.tdd.iter().filter(|r| r.provenance.axis.is_none()).collect();
    assert_eq!(originals.len(), 2);
    for r in a.tdd.iter().filter(|r| r.provenance.parent.is_some()) {
        assert!(originals.iter().any(|o| Some(&o.id) == r.provenance.parent.as_ref()));
    }
    write(dir.path(), "stray.md", "loose");
    let stub = DeterministicStub::new(5);
    let e = Forge::new(&stub, ForgeOptions::default()).forge_corpus(dir.path());
    assert!(matches!(e, Err(Error::Classification { .. })));
}
