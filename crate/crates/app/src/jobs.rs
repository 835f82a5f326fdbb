//! Content-addressed asynchronous jobs.
//!
//! A job's id is the SHA-256 of its kind and canonical request JSON, so an
//! identical request maps onto the finished job instead of recomputing it.
//! Each job owns `<data_dir>/jobs/<id>/` holding `request.json`, the result
//! artifact and `job.json`. `job.json` is written last, atomically, and only
//! for finished jobs; the index is rebuilt from those files on startup.

use std::collections::HashMap;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use bfsurf::surface::ExportFormat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifacts::{extension, json_bytes};
use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Sweep,
    Fit,
}

impl JobKind {
    fn as_str(&self) -> &'static str {
        match self {
            JobKind::Sweep => "sweep",
            JobKind::Fit => "fit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    /// Only queued→running→{done, failed}.
    pub fn can_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running)
                | (JobStatus::Running, JobStatus::Done)
                | (JobStatus::Running, JobStatus::Failed)
        )
    }

    pub fn is_finished(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            JobStatus::Queued => "queued",
            JobStatus::Running => "running",
            JobStatus::Done => "done",
            JobStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    /// Fraction of evaluations finished, in [0, 1].
    pub progress: f64,
    /// Where to fetch the artifact once done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<ExportFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// What a finished job leaves on disk besides `job.json`.
pub struct JobOutput {
    pub bytes: Vec<u8>,
    pub format: ExportFormat,
    /// Extra files, e.g. the sweep manifest.
    pub sidecars: Vec<(String, Vec<u8>)>,
}

struct Entry {
    record: JobRecord,
    done: Arc<AtomicUsize>,
    total: usize,
}

pub struct JobStore {
    root: PathBuf,
    entries: Mutex<HashMap<String, Entry>>,
    pool: rayon::ThreadPool,
}

const RECORD_FILE: &str = "job.json";

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| AppError::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| AppError::io(format!("renaming to {}", path.display()), e))
}

fn result_file(format: ExportFormat) -> String {
    format!("result.{}", extension(format))
}

fn locator(id: &str) -> String {
    format!("/v1/jobs/{id}/result")
}

impl JobStore {
    /// Opens (or creates) the store under `data_dir` and reloads every
    /// finished job. Unfinished jobs from a previous process are dropped;
    /// resubmitting the request recomputes them.
    pub fn open(data_dir: impl AsRef<Path>, workers: usize) -> Result<Arc<Self>> {
        let root = data_dir.as_ref().join("jobs");
        std::fs::create_dir_all(&root).map_err(|e| AppError::io(format!("creating {}", root.display()), e))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .thread_name(|i| format!("bfsurf-worker-{i}"))
            .build()
            .map_err(|e| AppError::io("starting worker pool", std::io::Error::other(e)))?;
        let mut entries = HashMap::new();
        let dirs = std::fs::read_dir(&root).map_err(|e| AppError::io(format!("listing {}", root.display()), e))?;
        for dir in dirs.flatten() {
            let Ok(text) = std::fs::read(dir.path().join(RECORD_FILE)) else {
                continue;
            };
            let Ok(record) = serde_json::from_slice::<JobRecord>(&text) else {
                continue;
            };
            if !record.status.is_finished() || dir.file_name().to_str() != Some(record.job_id.as_str()) {
                continue;
            }
            if let (JobStatus::Done, Some(f)) = (record.status, record.format) {
                if !dir.path().join(result_file(f)).is_file() {
                    continue;
                }
            }
            entries.insert(
                record.job_id.clone(),
                Entry {
                    record,
                    done: Arc::new(AtomicUsize::new(0)),
                    total: 0,
                },
            );
        }
        Ok(Arc::new(Self {
            root,
            entries: Mutex::new(entries),
            pool,
        }))
    }

    fn lock(&self) -> MutexGuard<'_, HashMap<String, Entry>> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// The worker pool shared by jobs and synchronous endpoints.
    pub fn pool(&self) -> &rayon::ThreadPool {
        &self.pool
    }

    pub fn job_id<T: Serialize>(kind: JobKind, request: &T) -> Result<String> {
        let body = serde_json::to_vec(request).map_err(bfsurf::Error::from)?;
        let mut h = Sha256::new();
        h.update(kind.as_str().as_bytes());
        h.update(b"\n");
        h.update(&body);
        Ok(hex::encode(h.finalize()))
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    /// Queues `work` unless a live or finished job with the same id exists.
    /// Failed jobs are retried.
    pub fn submit<F>(self: &Arc<Self>, kind: JobKind, id: String, request: &[u8], total: usize, work: F) -> Result<JobRecord>
    where
        F: FnOnce(&AtomicUsize) -> Result<JobOutput> + Send + 'static,
    {
        let done = Arc::new(AtomicUsize::new(0));
        {
            let mut entries = self.lock();
            if let Some(e) = entries.get(&id) {
                if e.record.status != JobStatus::Failed {
                    return Ok(Self::snapshot(e));
                }
            }
            let dir = self.dir(&id);
            std::fs::create_dir_all(&dir).map_err(|e| AppError::io(format!("creating {}", dir.display()), e))?;
            let _ = std::fs::remove_file(dir.join(RECORD_FILE));
            write_atomic(&dir.join("request.json"), request)?;
            entries.insert(
                id.clone(),
                Entry {
                    record: JobRecord {
                        job_id: id.clone(),
                        kind,
                        status: JobStatus::Queued,
                        progress: 0.0,
                        result: None,
                        format: None,
                        error: None,
                    },
                    done: done.clone(),
                    total,
                },
            );
        }
        let store = Arc::clone(self);
        let job = id.clone();
        self.pool.spawn(move || {
            store.advance(&job, JobStatus::Running, None, None);
            let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| work(&done)))
                .unwrap_or_else(|_| Err(AppError::io("job", std::io::Error::other("worker panicked"))))
                .and_then(|out| store.persist(&job, out));
            match outcome {
                Ok(format) => store.advance(&job, JobStatus::Done, Some(format), None),
                Err(e) => store.advance(&job, JobStatus::Failed, None, Some(e.to_string())),
            }
        });
        Ok(self.get(&id).expect("just inserted"))
    }

    fn persist(&self, id: &str, out: JobOutput) -> Result<ExportFormat> {
        let dir = self.dir(id);
        for (name, bytes) in &out.sidecars {
            write_atomic(&dir.join(name), bytes)?;
        }
        write_atomic(&dir.join(result_file(out.format)), &out.bytes)?;
        Ok(out.format)
    }

    /// Applies one status transition and, for finished jobs, writes
    /// `job.json`. Invalid transitions are ignored.
    fn advance(&self, id: &str, next: JobStatus, format: Option<ExportFormat>, error: Option<String>) {
        let mut entries = self.lock();
        let Some(e) = entries.get_mut(id) else {
            return;
        };
        if !e.record.status.can_become(next) {
            return;
        }
        e.record.status = next;
        if next == JobStatus::Done {
            e.record.progress = 1.0;
            e.record.format = format;
            e.record.result = Some(locator(id));
        }
        e.record.error = error;
        if next.is_finished() {
            let record = e.record.clone();
            let written = json_bytes(&record).and_then(|b| write_atomic(&self.dir(id).join(RECORD_FILE), &b));
            if let Err(err) = written {
                e.record.status = JobStatus::Failed;
                e.record.result = None;
                e.record.error = Some(format!("storing job record: {err}"));
            }
        }
    }

    fn snapshot(e: &Entry) -> JobRecord {
        let mut r = e.record.clone();
        if r.status == JobStatus::Running && e.total > 0 {
            r.progress = (e.done.load(Ordering::Relaxed) as f64 / e.total as f64).min(1.0);
        }
        r
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.lock().get(id).map(Self::snapshot)
    }

    /// The result artifact of a finished job.
    pub fn result(&self, id: &str) -> Result<(JobRecord, Vec<u8>)> {
        let record = self.get(id).ok_or_else(|| AppError::NotFound(format!("job {id}")))?;
        match (record.status, record.format) {
            (JobStatus::Done, Some(format)) => {
                let bytes = self.file(id, &result_file(format))?;
                Ok((record, bytes))
            }
            (JobStatus::Failed, _) => Err(AppError::JobFailed {
                job_id: id.to_string(),
                message: record.error.unwrap_or_default(),
            }),
            _ => Err(AppError::NotReady {
                job_id: id.to_string(),
                status: record.status.as_str().to_string(),
            }),
        }
    }

    /// A file from the job's directory.
    pub fn file(&self, id: &str, name: &str) -> Result<Vec<u8>> {
        if self.get(id).is_none() {
            return Err(AppError::NotFound(format!("job {id}")));
        }
        let path = self.dir(id).join(name);
        std::fs::read(&path).map_err(|e| AppError::io(format!("reading {}", path.display()), e))
    }

    /// Number of indexed jobs.
    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
