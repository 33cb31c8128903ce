//! Timestamped run directories, the run manifest, and append-only artifact
//! files with `_meta` provenance headers.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use time::format_description::FormatItem;
use time::macros::format_description;
use time::OffsetDateTime;

use super::config::RunConfig;
use super::PipelineError;

/// Pointer file at the top of the output directory, naming the most recent
/// run subdirectory so later stages resume it.
const LATEST_POINTER: &str = "latest.json";
const MANIFEST: &str = "manifest.json";

/// Provenance header written as the first line (JSONL) or `_meta` key
/// (JSON) of every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    /// Which stage produced the artifact.
    pub stage: String,
    /// Digest of the full configuration in effect.
    pub config_digest: String,
    /// Digest of the lineage subset; readers reject mismatches.
    pub lineage_digest: String,
    pub created_unix: u64,
}

/// One completed stage, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    /// Digest of the configuration the stage ran under; re-invocations with
    /// the same digest are skipped, different digests are refused.
    pub config_digest: String,
    /// Artifact file names (relative to the run directory).
    pub artifacts: Vec<String>,
    pub completed_unix: u64,
    /// Completions fetched from the backend transport (cache hits excluded).
    pub transport_calls: u64,
}

/// Bookkeeping for one run directory. Unlike artifacts, the manifest is
/// rewritten (atomically) as stages complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_name: String,
    /// Digest of the configuration that created the directory.
    pub config_digest: String,
    /// The lineage every stage in this directory must share.
    pub lineage_digest: String,
    pub seed: u64,
    pub created_unix: u64,
    pub stages: BTreeMap<String, StageEntry>,
}

/// Whether a stage may run in this directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageStatus {
    /// Never ran here.
    Absent,
    /// Completed under the same configuration; skip it.
    Complete,
    /// Completed under a different configuration; refuse (append-only).
    Conflict { recorded_digest: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct LatestPointer {
    /// Run subdirectory name, relative to the output directory.
    run_dir: String,
    lineage_digest: String,
}

/// A run directory with its manifest loaded.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
}

pub(crate) fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock after 1970")
        .as_secs()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a sibling temp file and rename, so readers never observe a
/// half-written file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(bytes).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn dir_name_for(unix: u64) -> String {
    static STAMP: &[FormatItem<'_>] =
        format_description!("[year][month][day]-[hour][minute][second]");
    let stamp = OffsetDateTime::from_unix_timestamp(unix as i64)
        .expect("valid timestamp")
        .format(STAMP)
        .expect("timestamp formats");
    format!("run-{stamp}")
}

impl RunDir {
    /// Resumes the latest run directory under `config.run.output_dir` when
    /// its lineage matches the current configuration; otherwise (or when
    /// `fresh` is set) creates a new timestamped directory and points
    /// `latest.json` at it.
    pub fn attach(config: &RunConfig, fresh: bool) -> Result<RunDir, PipelineError> {
        let output_dir = &config.run.output_dir;
        fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
        let lineage = config.lineage_digest();

        if !fresh {
            if let Some(existing) = Self::open_latest(output_dir, &lineage)? {
                return Ok(existing);
            }
        }
        Self::create(config, &lineage)
    }

    fn open_latest(output_dir: &Path, lineage: &str) -> Result<Option<RunDir>, PipelineError> {
        let pointer_path = output_dir.join(LATEST_POINTER);
        let Ok(raw) = fs::read_to_string(&pointer_path) else {
            return Ok(None);
        };
        let Ok(pointer) = serde_json::from_str::<LatestPointer>(&raw) else {
            // A corrupt pointer only costs us resumption.
            return Ok(None);
        };
        if pointer.lineage_digest != lineage {
            return Ok(None);
        }
        let root = output_dir.join(&pointer.run_dir);
        if !root.join(MANIFEST).is_file() {
            return Ok(None);
        }
        let run = Self::open(&root)?;
        // The pointer is redundant with the manifest; trust the manifest.
        if run.manifest.lineage_digest != lineage {
            return Ok(None);
        }
        Ok(Some(run))
    }

    /// Opens an existing run directory by path.
    pub fn open(root: &Path) -> Result<RunDir, PipelineError> {
        let manifest_path = root.join(MANIFEST);
        let raw = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: RunManifest =
            serde_json::from_str(&raw).map_err(|e| PipelineError::MalformedArtifact {
                path: manifest_path.clone(),
                detail: e.to_string(),
            })?;
        Ok(RunDir {
            root: root.to_path_buf(),
            manifest,
        })
    }

    fn create(config: &RunConfig, lineage: &str) -> Result<RunDir, PipelineError> {
        let output_dir = &config.run.output_dir;
        let base = dir_name_for(now_unix());
        let mut name = base.clone();
        let mut suffix = 1;
        let root = loop {
            let candidate = output_dir.join(&name);
            match fs::create_dir(&candidate) {
                Ok(()) => break candidate,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    suffix += 1;
                    name = format!("{base}-{suffix}");
                }
                Err(source) => {
                    return Err(PipelineError::Io {
                        path: candidate,
                        source,
                    })
                }
            }
        };
        let manifest = RunManifest {
            run_name: config.run.name.clone(),
            config_digest: config.config_digest(),
            lineage_digest: lineage.to_string(),
            seed: config.run.seed,
            created_unix: now_unix(),
            stages: BTreeMap::new(),
        };
        let run = RunDir { root, manifest };
        run.save_manifest()?;
        let pointer = LatestPointer {
            run_dir: name,
            lineage_digest: lineage.to_string(),
        };
        write_atomic(
            &output_dir.join(LATEST_POINTER),
            &serde_json::to_vec_pretty(&pointer).expect("pointer serializes"),
        )?;
        Ok(run)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Absolute path of an artifact inside this run directory.
    pub fn artifact_path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// The artifact path, or a "run that stage first" error when the stage
    /// that produces it has not completed here.
    pub fn require_artifact(&self, name: &str, stage: &str) -> Result<PathBuf, PipelineError> {
        let path = self.artifact_path(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(PipelineError::MissingArtifact {
                artifact: name.to_string(),
                stage: stage.to_string(),
            })
        }
    }

    pub fn stage_status(&self, stage: &str, config_digest: &str) -> StageStatus {
        match self.manifest.stages.get(stage) {
            None => StageStatus::Absent,
            Some(entry) if entry.config_digest == config_digest => StageStatus::Complete,
            Some(entry) => StageStatus::Conflict {
                recorded_digest: entry.config_digest.clone(),
            },
        }
    }

    /// Records a completed stage and rewrites the manifest.
    pub fn record_stage(&mut self, stage: &str, entry: StageEntry) -> Result<(), PipelineError> {
        self.manifest.stages.insert(stage.to_string(), entry);
        self.save_manifest()
    }

    fn save_manifest(&self) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(&self.root.join(MANIFEST), &bytes)
    }

    /// Pre-write guard: a completed stage's artifact may never be replaced
    /// (append-only); a leftover from a crashed attempt — the file exists but
    /// no stage entry mentions it — may.
    pub(crate) fn reserve_artifact(&self, name: &str) -> Result<PathBuf, PipelineError> {
        let path = self.artifact_path(name);
        let recorded = self
            .manifest
            .stages
            .values()
            .any(|entry| entry.artifacts.iter().any(|a| a == name));
        if recorded && path.exists() {
            return Err(PipelineError::AppendOnly { path });
        }
        Ok(path)
    }
}

// ---------------------------------------------------------------------------
// Artifact I/O
// ---------------------------------------------------------------------------

fn malformed(path: &Path) -> impl FnOnce(String) -> PipelineError + '_ {
    move |detail| PipelineError::MalformedArtifact {
        path: path.to_path_buf(),
        detail,
    }
}

fn check_lineage(
    path: &Path,
    meta: &ArtifactMeta,
    expected_lineage: &str,
) -> Result<(), PipelineError> {
    if meta.lineage_digest != expected_lineage {
        return Err(PipelineError::LineageMismatch {
            path: path.to_path_buf(),
            expected: expected_lineage.to_string(),
            found: meta.lineage_digest.clone(),
        });
    }
    Ok(())
}

/// Writes a JSONL artifact: a `{"_meta": …}` header line, then one JSON
/// object per item.
pub(crate) fn write_jsonl_artifact<T: Serialize>(
    path: &Path,
    meta: &ArtifactMeta,
    items: &[T],
) -> Result<(), PipelineError> {
    #[derive(Serialize)]
    struct MetaLine<'a> {
        _meta: &'a ArtifactMeta,
    }
    let mut out = serde_json::to_vec(&MetaLine { _meta: meta }).expect("meta serializes");
    out.push(b'\n');
    for item in items {
        out.extend(serde_json::to_vec(item).expect("artifact item serializes"));
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

/// Reads a JSONL artifact, returning the header and the typed items. The
/// artifact must carry the expected lineage digest.
pub fn read_jsonl_artifact<T: DeserializeOwned>(
    path: &Path,
    expected_lineage: &str,
) -> Result<(ArtifactMeta, Vec<T>), PipelineError> {
    #[derive(Deserialize)]
    struct MetaLine {
        _meta: ArtifactMeta,
    }
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(path)("empty artifact".into()))?;
    let meta = serde_json::from_str::<MetaLine>(header)
        .map_err(|e| malformed(path)(format!("expected a _meta header: {e}")))?
        ._meta;
    check_lineage(path, &meta, expected_lineage)?;
    let mut items = Vec::new();
    for (idx, line) in lines {
        let item = serde_json::from_str(line)
            .map_err(|e| malformed(path)(format!("line {}: {e}", idx + 1)))?;
        items.push(item);
    }
    Ok((meta, items))
}

/// Writes a JSON artifact: the payload object with a `_meta` key injected.
pub(crate) fn write_json_artifact<T: Serialize>(
    path: &Path,
    meta: &ArtifactMeta,
    payload: &T,
) -> Result<(), PipelineError> {
    let mut value = serde_json::to_value(payload).expect("artifact payload serializes");
    let object = value
        .as_object_mut()
        .expect("artifact payload is a JSON object");
    object.insert(
        "_meta".into(),
        serde_json::to_value(meta).expect("meta serializes"),
    );
    let mut bytes = serde_json::to_vec_pretty(&value).expect("artifact serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Reads a JSON artifact, returning the header and the payload (with the
/// `_meta` key removed).
pub fn read_json_artifact(
    path: &Path,
    expected_lineage: &str,
) -> Result<(ArtifactMeta, serde_json::Value), PipelineError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&raw).map_err(|e| malformed(path)(e.to_string()))?;
    let object = value
        .as_object_mut()
        .ok_or_else(|| malformed(path)("expected a JSON object".into()))?;
    let meta_value = object
        .remove("_meta")
        .ok_or_else(|| malformed(path)("missing _meta".into()))?;
    let meta: ArtifactMeta =
        serde_json::from_value(meta_value).map_err(|e| malformed(path)(e.to_string()))?;
    check_lineage(path, &meta, expected_lineage)?;
    Ok((meta, value))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_config(dir: &Path) -> RunConfig {
        let mut config = RunConfig::default();
        config.run.output_dir = dir.join("runs");
        config
    }

    fn test_meta(config: &RunConfig) -> ArtifactMeta {
        ArtifactMeta {
            stage: "test".into(),
            config_digest: config.config_digest(),
            lineage_digest: config.lineage_digest(),
            created_unix: 123,
        }
    }

    #[test]
    fn attach_reuses_matching_lineage_and_forks_on_change() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path());
        let first = RunDir::attach(&config, false).unwrap();
        let resumed = RunDir::attach(&config, false).unwrap();
        assert_eq!(first.root(), resumed.root());

        let mut reseeded = config.clone();
        reseeded.run.seed = 9;
        let forked = RunDir::attach(&reseeded, false).unwrap();
        assert_ne!(first.root(), forked.root());

        // After the fork, the pointer follows the new lineage...
        let followed = RunDir::attach(&reseeded, false).unwrap();
        assert_eq!(forked.root(), followed.root());
        // ...and the old lineage starts a third directory rather than
        // touching either existing one.
        let third = RunDir::attach(&config, false).unwrap();
        assert_ne!(third.root(), first.root());
        assert_ne!(third.root(), forked.root());
    }

    #[test]
    fn fresh_always_creates_a_new_directory() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path());
        let first = RunDir::attach(&config, false).unwrap();
        let second = RunDir::attach(&config, true).unwrap();
        assert_ne!(first.root(), second.root());
        assert!(first.root().exists(), "old run directories are kept");
    }

    #[test]
    fn run_dir_names_are_timestamped() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path());
        let run = RunDir::attach(&config, false).unwrap();
        let name = run.root().file_name().unwrap().to_str().unwrap();
        assert!(
            regex::Regex::new(r"^run-\d{8}-\d{6}(-\d+)?$")
                .unwrap()
                .is_match(name),
            "{name}"
        );
    }

    #[test]
    fn stage_status_distinguishes_complete_and_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path());
        let mut run = RunDir::attach(&config, false).unwrap();
        assert_eq!(run.stage_status("label", "d1"), StageStatus::Absent);
        run.record_stage(
            "label",
            StageEntry {
                config_digest: "d1".into(),
                artifacts: vec!["annotations_raw.jsonl".into()],
                completed_unix: 1,
                transport_calls: 5,
            },
        )
        .unwrap();
        assert_eq!(run.stage_status("label", "d1"), StageStatus::Complete);
        assert_eq!(
            run.stage_status("label", "d2"),
            StageStatus::Conflict {
                recorded_digest: "d1".into()
            }
        );

        // The manifest survives a reopen.
        let reopened = RunDir::open(run.root()).unwrap();
        assert_eq!(reopened.stage_status("label", "d1"), StageStatus::Complete);
    }

    #[test]
    fn recorded_artifacts_are_append_only_but_torn_files_are_reclaimable() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path());
        let mut run = RunDir::attach(&config, false).unwrap();

        // A file written without a recorded stage (crashed attempt) can be
        // reserved again.
        fs::write(run.artifact_path("attempts.jsonl"), b"torn").unwrap();
        assert!(run.reserve_artifact("attempts.jsonl").is_ok());

        run.record_stage(
            "solve",
            StageEntry {
                config_digest: "d".into(),
                artifacts: vec!["attempts.jsonl".into()],
                completed_unix: 1,
                transport_calls: 0,
            },
        )
        .unwrap();
        let err = run.reserve_artifact("attempts.jsonl").unwrap_err();
        assert!(matches!(err, PipelineError::AppendOnly { .. }), "{err}");
    }

    #[test]
    fn jsonl_artifacts_round_trip_and_reject_foreign_lineage() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path());
        let meta = test_meta(&config);
        let path = dir.path().join("items.jsonl");
        write_jsonl_artifact(&path, &meta, &[1u32, 2, 3]).unwrap();

        let (read_meta, items): (_, Vec<u32>) =
            read_jsonl_artifact(&path, &config.lineage_digest()).unwrap();
        assert_eq!(read_meta, meta);
        assert_eq!(items, vec![1, 2, 3]);

        let err = read_jsonl_artifact::<u32>(&path, "other").unwrap_err();
        assert!(matches!(err, PipelineError::LineageMismatch { .. }), "{err}");
    }

    #[test]
    fn json_artifacts_round_trip_with_injected_meta() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Payload {
            accuracy: f64,
        }
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path());
        let meta = test_meta(&config);
        let path = dir.path().join("report.json");
        write_json_artifact(&path, &meta, &Payload { accuracy: 0.8 }).unwrap();

        let (read_meta, value) = read_json_artifact(&path, &config.lineage_digest()).unwrap();
        assert_eq!(read_meta, meta);
        let payload: Payload = serde_json::from_value(value).unwrap();
        assert_eq!(payload, Payload { accuracy: 0.8 });

        let err = read_json_artifact(&path, "other").unwrap_err();
        assert!(matches!(err, PipelineError::LineageMismatch { .. }), "{err}");
    }

    #[test]
    fn missing_artifact_error_names_file_and_stage() {
        let dir = tempfile::tempdir().unwrap();
        let config = test_config(dir.path());
        let run = RunDir::attach(&config, false).unwrap();
        let err = run.require_artifact("attempts.jsonl", "solve").unwrap_err();
        let message = err.to_string();
        assert!(message.contains("attempts.jsonl"), "{message}");
        assert!(message.contains("solve"), "{message}");
    }
}
