//! Local corpus ingestion.
//!
//! Layout: `papers/` holds research papers, `packages/<name>/api/` API
//! reference pages and `packages/<name>/gallery/` example pages. Files may be
//! plain text, Markdown or HTML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    /// Path relative to the ingested directory, `/`-separated.
    pub id: String,
    pub title: String,
    pub body: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DocKind {
    Paper,
    ApiReference { package: String },
    ExampleGallery { package: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedDocument {
    pub kind: Option<DocKind>,
    pub doc: Document,
}

fn is_html(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("html" | "htm")
    )
}

/// Text content of an HTML page: scripts, styles and comments dropped, tags
/// removed, block tags turned into line breaks and common entities decoded.
pub fn strip_html(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let lower = html.to_ascii_lowercase();
    let mut i = 0;
    while i < html.len() {
        let rest = &lower[i..];
        if rest.starts_with("<!--") {
            i += rest.find("-->").map_or(rest.len(), |e| e + 3);
        } else if rest.starts_with("<script") || rest.starts_with("<style") {
            let close = if rest.starts_with("<script") { "</script" } else { "</style" };
            i += match rest.find(close) {
                Some(e) => e + rest[e..].find('>').map_or(rest.len() - e, |g| g + 1),
                None => rest.len(),
            };
        } else if rest.starts_with('<') && rest[1..].starts_with(|c: char| c.is_ascii_alphabetic() || c == '/' || c == '!') {
            let end = rest.find('>').map_or(rest.len(), |e| e + 1);
            let name: String = rest[1..end]
                .trim_start_matches('/')
                .chars()
                .take_while(char::is_ascii_alphanumeric)
                .collect();
            if matches!(
                name.as_str(),
                "p" | "br" | "div" | "li" | "tr" | "h1" | "h2" | "h3" | "h4" | "h5" | "h6" | "pre" | "section" | "title"
            ) {
                out.push('\n');
            }
            i += end;
        } else {
            let c = html[i..].chars().next().expect("in bounds");
            out.push(c);
            i += c.len_utf8();
        }
    }
    let decoded = decode_entities(&out);
    let mut lines: Vec<&str> = decoded.lines().map(str::trim).collect();
    lines.dedup_by(|a, b| a.is_empty() && b.is_empty());
    lines.join("\n").trim().to_string()
}

fn decode_entities(s: &str) -> String {
    const NAMED: [(&str, &str); 6] = [
        ("&lt;", "<"),
        ("&gt;", ">"),
        ("&quot;", "\""),
        ("&#39;", "'"),
        ("&nbsp;", " "),
        ("&amp;", "&"),
    ];
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    'outer: while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        for (k, v) in NAMED {
            if rest.starts_with(k) {
                out.push_str(v);
                rest = &rest[k.len()..];
                continue 'outer;
            }
        }
        out.push('&');
        rest = &rest[1..];
    }
    out.push_str(rest);
    out
}

fn title_of(path: &Path, raw: &str, body: &str) -> String {
    if is_html(path) {
        let lower = raw.to_ascii_lowercase();
        if let (Some(a), Some(b)) = (lower.find("<title>"), lower.find("</title>")) {
            if b > a + 7 {
                let t = strip_html(&raw[a + 7..b]);
                if !t.is_empty() {
                    return t;
                }
            }
        }
    }
    body.lines()
        .find_map(|l| l.strip_prefix("# ").or_else(|| l.strip_prefix("Title: ")))
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
}

fn relative_id(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Every text, Markdown and HTML file under `dir`, ordered by relative path.
/// Files without text are skipped with a warning.
pub fn ingest_corpus(dir: &Path) -> Result<Vec<Document>> {
    if !dir.is_dir() {
        return Err(Error::PathIo {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory not found"),
        });
    }
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::PathIo {
            path: e.path().map_or_else(|| dir.to_path_buf(), Path::to_path_buf),
            source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("directory walk failed")),
        })?;
        let p = entry.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if entry.file_type().is_file() && matches!(ext.as_deref(), Some("txt" | "md" | "markdown" | "html" | "htm")) {
            files.push(p.to_path_buf());
        }
    }
    files.sort_by_key(|p| relative_id(dir, p));
    let mut docs = Vec::with_capacity(files.len());
    for path in files {
        let raw = std::fs::read_to_string(&path).map_err(Error::at_path(&path))?;
        let body = if is_html(&path) { strip_html(&raw) } else { raw.clone() };
        let id = relative_id(dir, &path);
        if body.trim().is_empty() {
            log::warn!("skipping empty document {id}");
            continue;
        }
        let title = title_of(&path, &raw, &body);
        docs.push(Document { id, title, body });
    }
    Ok(docs)
}

/// Kind implied by a document id under the corpus layout.
pub fn classify(id: &str) -> Option<DocKind> {
    let parts: Vec<&str> = id.split('/').collect();
    match parts.as_slice() {
        ["papers", .., _] => Some(DocKind::Paper),
        ["packages", pkg, "api", .., _] => Some(DocKind::ApiReference { package: pkg.to_string() }),
        ["packages", pkg, "gallery", .., _] => Some(DocKind::ExampleGallery { package: pkg.to_string() }),
        _ => None,
    }
}

pub fn ingest_tagged(dir: &Path) -> Result<Vec<TaggedDocument>> {
    Ok(ingest_corpus(dir)?
        .into_iter()
        .map(|doc| TaggedDocument {
            kind: classify(&doc.id),
            doc,
        })
        .collect())
}
