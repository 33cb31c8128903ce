//! Corpus ingestion: normalized problem records loaded from the dataset
//! layouts we care about (GSM8K-style JSONL, MATH-style JSON trees, and our
//! own generic JSONL normal form).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which side of the train/test split a corpus belongs to. Repositories may
/// only be built from train corpora; evaluation runs over test corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// On-disk layouts accepted by [`load_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// JSONL with `question` and `answer` keys; the final answer follows the
    /// last `####` marker inside `answer`.
    Gsm8kJsonl,
    /// A directory of `<topic>/<id>.json` files with `problem` and `solution`
    /// keys; the directory name becomes the topic.
    MathJsonTree,
    /// JSONL with explicit `id`, `question`, `answer` and optional
    /// `final_answer` / `topic` keys. This is also the save format.
    GenericJsonl,
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusFormat::Gsm8kJsonl => write!(f, "gsm8k_jsonl"),
            CorpusFormat::MathJsonTree => write!(f, "math_json_tree"),
            CorpusFormat::GenericJsonl => write!(f, "generic_jsonl"),
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gsm8k_jsonl" => Ok(CorpusFormat::Gsm8kJsonl),
            "math_json_tree" => Ok(CorpusFormat::MathJsonTree),
            "generic_jsonl" => Ok(CorpusFormat::GenericJsonl),
            other => Err(format!(
                "unknown corpus format `{other}` (expected gsm8k_jsonl, math_json_tree or generic_jsonl)"
            )),
        }
    }
}

/// One math QA problem in normal form.
///
/// `question` and `reference_answer` are non-empty after trimming; a missing
/// topic is represented as `None`, never as an empty string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub question: String,
    /// Full worked reference solution (chain of thought), not just the final
    /// value.
    pub reference_answer: String,
    /// Canonical final answer when the dataset provides one separately.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

/// An ordered, validated collection of problems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub split: Split,
    problems: Vec<Problem>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: record {record}: {detail}")]
    Malformed {
        path: PathBuf,
        record: usize,
        detail: String,
    },
    #[error("duplicate problem id `{id}` (records {first} and {second})")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("{path}: corpus contains no problems")]
    Empty { path: PathBuf },
    #[error("problem `{id}`: {detail}")]
    InvalidProblem { id: String, detail: String },
}

impl Corpus {
    /// Builds a corpus from already-normalized problems, enforcing the record
    /// invariants (non-empty fields, unique ids, at least one problem).
    pub fn new(name: &str, split: Split, problems: Vec<Problem>) -> Result<Self, CorpusError> {
        if problems.is_empty() {
            return Err(CorpusError::Empty {
                path: PathBuf::from(name),
            });
        }
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (idx, p) in problems.iter().enumerate() {
            validate_problem(p)?;
            if let Some(first) = seen.insert(p.id.clone(), idx) {
                return Err(CorpusError::DuplicateId {
                    id: p.id.clone(),
                    first,
                    second: idx,
                });
            }
        }
        Ok(Corpus {
            name: name.to_string(),
            split,
            problems,
        })
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }

    /// Returns the problems whose topic matches `topic` exactly, preserving
    /// corpus order. The result keeps this corpus's name and split.
    pub fn filter_by_topic(&self, topic: &str) -> Corpus {
        Corpus {
            name: self.name.clone(),
            split: self.split,
            problems: self
                .problems
                .iter()
                .filter(|p| p.topic.as_deref() == Some(topic))
                .cloned()
                .collect(),
        }
    }

    /// Sorted list of distinct topics present in the corpus.
    pub fn topics(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .problems
            .iter()
            .filter_map(|p| p.topic.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

fn validate_problem(p: &Problem) -> Result<(), CorpusError> {
    if p.id.trim().is_empty() {
        return Err(CorpusError::InvalidProblem {
            id: p.id.clone(),
            detail: "empty id".into(),
        });
    }
    if p.question.trim().is_empty() {
        return Err(CorpusError::InvalidProblem {
            id: p.id.clone(),
            detail: "empty question".into(),
        });
    }
    if p.reference_answer.trim().is_empty() {
        return Err(CorpusError::InvalidProblem {
            id: p.id.clone(),
            detail: "empty reference answer".into(),
        });
    }
    if let Some(t) = &p.topic {
        if t.trim().is_empty() {
            return Err(CorpusError::InvalidProblem {
                id: p.id.clone(),
                detail: "topic present but empty (omit the field instead)".into(),
            });
        }
    }
    Ok(())
}

/// Strips a UTF-8 BOM and converts CRLF / lone CR line endings to `\n`.
fn normalize_text(raw: &str) -> String {
    let raw = raw.strip_prefix('\u{feff}').unwrap_or(raw);
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\r' {
            if chars.peek() == Some(&'\n') {
                chars.next();
            }
            out.push('\n');
        } else {
            out.push(c);
        }
    }
    out
}

fn normalize_field(raw: &str) -> String {
    normalize_text(raw)
}

/// Treats empty / whitespace-only optional fields as absent.
fn normalize_opt(raw: Option<String>) -> Option<String> {
    raw.map(|s| normalize_field(&s))
        .filter(|s| !s.trim().is_empty())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string())
}

/// Loads a corpus from disk, normalizing every problem into the generic
/// record form. Fails on unreadable input, malformed records, empty required
/// fields, duplicate ids, or an empty corpus.
pub fn load_corpus(path: &Path, format: CorpusFormat, split: Split) -> Result<Corpus, CorpusError> {
    match format {
        CorpusFormat::Gsm8kJsonl => load_gsm8k_jsonl(path, split),
        CorpusFormat::GenericJsonl => load_generic_jsonl(path, split),
        CorpusFormat::MathJsonTree => load_math_json_tree(path, split),
    }
}

#[derive(Deserialize)]
struct Gsm8kRecord {
    question: String,
    answer: String,
}

fn read_normalized(path: &Path) -> Result<String, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(normalize_text(&raw))
}

fn load_gsm8k_jsonl(path: &Path, split: Split) -> Result<Corpus, CorpusError> {
    let text = read_normalized(path)?;
    let name = file_stem(path);
    let mut problems = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Gsm8kRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                path: path.to_path_buf(),
                record: lineno + 1,
                detail: e.to_string(),
            })?;
        let answer = normalize_field(&rec.answer);
        let final_answer = answer
            .rfind("####")
            .map(|idx| answer[idx + 4..].trim().to_string())
            .filter(|s| !s.is_empty());
        problems.push(Problem {
            id: format!("{name}-{:05}", problems.len()),
            question: normalize_field(&rec.question),
            reference_answer: answer,
            final_answer,
            topic: None,
        });
    }
    Corpus::new(&name, split, problems).map_err(|e| relocate_empty(e, path))
}

#[derive(Deserialize)]
struct GenericRecord {
    id: String,
    question: String,
    answer: String,
    #[serde(default)]
    final_answer: Option<String>,
    #[serde(default)]
    topic: Option<String>,
}

fn load_generic_jsonl(path: &Path, split: Split) -> Result<Corpus, CorpusError> {
    let text = read_normalized(path)?;
    let name = file_stem(path);
    let mut problems = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: GenericRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                path: path.to_path_buf(),
                record: lineno + 1,
                detail: e.to_string(),
            })?;
        problems.push(Problem {
            id: rec.id,
            question: normalize_field(&rec.question),
            reference_answer: normalize_field(&rec.answer),
            final_answer: normalize_opt(rec.final_answer),
            topic: normalize_opt(rec.topic),
        });
    }
    Corpus::new(&name, split, problems).map_err(|e| relocate_empty(e, path))
}

#[derive(Deserialize)]
struct MathRecord {
    problem: String,
    solution: String,
}

fn load_math_json_tree(root: &Path, split: Split) -> Result<Corpus, CorpusError> {
    let name = root
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "math".to_string());
    let entries = fs::read_dir(root).map_err(|source| CorpusError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut topics: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    topics.sort();

    let mut problems = Vec::new();
    for topic_dir in &topics {
        let topic = topic_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let entries = fs::read_dir(topic_dir).map_err(|source| CorpusError::Io {
            path: topic_dir.clone(),
            source,
        })?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
            .collect();
        files.sort();
        for file in files {
            let text = read_normalized(&file)?;
            let rec: MathRecord = serde_json::from_str(&text).map_err(|e| {
                CorpusError::Malformed {
                    path: file.clone(),
                    record: 1,
                    detail: e.to_string(),
                }
            })?;
            problems.push(Problem {
                id: format!("{topic}/{}", file_stem(&file)),
                question: normalize_field(&rec.problem),
                reference_answer: normalize_field(&rec.solution),
                final_answer: None,
                topic: Some(topic.clone()),
            });
        }
    }
    Corpus::new(&name, split, problems).map_err(|e| relocate_empty(e, root))
}

/// `Corpus::new` doesn't know the source path; point the Empty variant at it.
fn relocate_empty(err: CorpusError, path: &Path) -> CorpusError {
    match err {
        CorpusError::Empty { .. } => CorpusError::Empty {
            path: path.to_path_buf(),
        },
        other => other,
    }
}

/// Saves a corpus in the generic JSONL normal form, one record per line in
/// corpus order. Loading the result back with [`CorpusFormat::GenericJsonl`]
/// reproduces the same problems.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    for p in &corpus.problems {
        let rec = serde_json::json!({
            "id": p.id,
            "question": p.question,
            "answer": p.reference_answer,
            "final_answer": p.final_answer,
            "topic": p.topic,
        });
        // Keep absent optionals out of the file entirely.
        let mut obj = rec.as_object().cloned().unwrap_or_default();
        if p.final_answer.is_none() {
            obj.remove("final_answer");
        }
        if p.topic.is_none() {
            obj.remove("topic");
        }
        out.push_str(&serde_json::Value::Object(obj).to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn gsm8k_final_answer_follows_last_marker() {
        let f = write_temp(
            r#"{"question": "2+2?", "answer": "We add. #### wrong\nActually 2 + 2 = 4.\n#### 4"}"#,
        );
        let c = load_corpus(f.path(), CorpusFormat::Gsm8kJsonl, Split::Train).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.problems()[0].final_answer.as_deref(), Some("4"));
        assert_eq!(c.problems()[0].topic, None);
    }

    #[test]
    fn gsm8k_ids_are_sequential_and_prefixed() {
        let f = write_temp(
            "{\"question\": \"q0\", \"answer\": \"a #### 1\"}\n{\"question\": \"q1\", \"answer\": \"b #### 2\"}\n",
        );
        let c = load_corpus(f.path(), CorpusFormat::Gsm8kJsonl, Split::Test).unwrap();
        let stem = file_stem(f.path());
        assert_eq!(c.problems()[0].id, format!("{stem}-00000"));
        assert_eq!(c.problems()[1].id, format!("{stem}-00001"));
    }

    #[test]
    fn generic_duplicate_id_is_an_error() {
        let f = write_temp(
            "{\"id\": \"p1\", \"question\": \"q\", \"answer\": \"a\"}\n{\"id\": \"p1\", \"question\": \"q2\", \"answer\": \"a2\"}\n",
        );
        let err = load_corpus(f.path(), CorpusFormat::GenericJsonl, Split::Train).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { ref id, .. } if id == "p1"));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("");
        let err = load_corpus(f.path(), CorpusFormat::GenericJsonl, Split::Train).unwrap_err();
        assert!(matches!(err, CorpusError::Empty { .. }));
    }

    #[test]
    fn malformed_json_names_the_record() {
        let f = write_temp("{\"id\": \"p1\", \"question\": \"q\", \"answer\": \"a\"}\nnot json\n");
        let err = load_corpus(f.path(), CorpusFormat::GenericJsonl, Split::Train).unwrap_err();
        match err {
            CorpusError::Malformed { record, .. } => assert_eq!(record, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn empty_question_is_an_error() {
        let f = write_temp("{\"id\": \"p1\", \"question\": \"  \", \"answer\": \"a\"}\n");
        let err = load_corpus(f.path(), CorpusFormat::GenericJsonl, Split::Train).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidProblem { ref detail, .. } if detail.contains("question")));
    }

    #[test]
    fn bom_and_crlf_are_normalized() {
        let f = write_temp(
            "\u{feff}{\"id\": \"p1\", \"question\": \"line one\\r\\nline two\", \"answer\": \"done\"}\r\n",
        );
        let c = load_corpus(f.path(), CorpusFormat::GenericJsonl, Split::Train).unwrap();
        assert_eq!(c.problems()[0].question, "line one\nline two");
    }

    #[test]
    fn empty_topic_becomes_absent() {
        let f = write_temp(
            "{\"id\": \"p1\", \"question\": \"q\", \"answer\": \"a\", \"topic\": \"\"}\n",
        );
        let c = load_corpus(f.path(), CorpusFormat::GenericJsonl, Split::Train).unwrap();
        assert_eq!(c.problems()[0].topic, None);
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let f = write_temp(concat!(
            "{\"id\": \"a\", \"question\": \"q1\", \"answer\": \"ans1\", \"final_answer\": \"5\", \"topic\": \"Algebra\"}\n",
            "{\"id\": \"b\", \"question\": \"q2\", \"answer\": \"ans2\"}\n",
        ));
        let c = load_corpus(f.path(), CorpusFormat::GenericJsonl, Split::Train).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_corpus(&c, out.path()).unwrap();
        let c2 = load_corpus(out.path(), CorpusFormat::GenericJsonl, Split::Train).unwrap();
        assert_eq!(c.problems(), c2.problems());
    }

    #[test]
    fn math_tree_layout_sets_topic_and_id() {
        let dir = tempfile::tempdir().unwrap();
        let algebra = dir.path().join("algebra");
        fs::create_dir(&algebra).unwrap();
        fs::write(
            algebra.join("7.json"),
            r#"{"problem": "Solve x.", "solution": "x = \\boxed{3}", "level": "Level 1"}"#,
        )
        .unwrap();
        let geometry = dir.path().join("geometry");
        fs::create_dir(&geometry).unwrap();
        fs::write(
            geometry.join("2.json"),
            r#"{"problem": "Find the area.", "solution": "\\boxed{12}"}"#,
        )
        .unwrap();
        let c = load_corpus(dir.path(), CorpusFormat::MathJsonTree, Split::Train).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.problems()[0].id, "algebra/7");
        assert_eq!(c.problems()[0].topic.as_deref(), Some("algebra"));
        assert_eq!(c.problems()[1].id, "geometry/2");
    }

    #[test]
    fn filter_by_topic_keeps_order_and_drops_others() {
        let problems = vec![
            Problem {
                id: "a".into(),
                question: "q1".into(),
                reference_answer: "r1".into(),
                final_answer: None,
                topic: Some("algebra".into()),
            },
            Problem {
                id: "b".into(),
                question: "q2".into(),
                reference_answer: "r2".into(),
                final_answer: None,
                topic: Some("geometry".into()),
            },
            Problem {
                id: "c".into(),
                question: "q3".into(),
                reference_answer: "r3".into(),
                final_answer: None,
                topic: Some("algebra".into()),
            },
        ];
        let corpus = Corpus::new("t", Split::Train, problems).unwrap();
        let filtered = corpus.filter_by_topic("algebra");
        let ids: Vec<&str> = filtered.problems().iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c"]);
        assert_eq!(corpus.topics(), vec!["algebra", "geometry"]);
    }
}
