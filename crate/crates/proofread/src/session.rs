use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use spinelink_core::assignment::Assignment;
use spinelink_core::features::{FEATURE_NAMES, N_RAW};
use spinelink_core::linker::{assign, rank, CandidateTree};
use spinelink_core::metrics::{proofread_assignment, GraphContext, SubgraphScorer};
use spinelink_core::volume::{read_manifest, read_volume, LabelVolume, Manifest, Window};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown spine {0}")]
    UnknownSpine(u64),
    #[error("shaft {shaft} is not a candidate of spine {spine}")]
    NotACandidate { spine: u64, shaft: u64 },
    #[error("{0}")]
    BadRequest(String),
    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error("decision log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("log write failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Decided,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Choice {
    Shaft { shaft_id: u64 },
    NoMatch,
    Skip,
}

/// Body of `POST /api/tasks/{spine_id}/decision`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRequest {
    #[serde(flatten)]
    pub choice: Choice,
    #[serde(default)]
    pub reviewer: Option<String>,
    #[serde(default)]
    pub timestamp_ms: Option<u64>,
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub seq: u64,
    pub spine_id: u64,
    #[serde(flatten)]
    pub choice: Choice,
    pub reviewer: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub spine_id: u64,
    pub synapse_id: u64,
    pub status: TaskStatus,
    /// Top-1 minus top-2 probability; smaller is harder.
    pub margin: f64,
    pub top_shaft: Option<u64>,
    pub top_probability: Option<f64>,
    pub n_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPage {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub tasks: Vec<TaskSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub rank: usize,
    pub shaft_id: u64,
    pub probability: f64,
    /// Raw features by name; non-finite values are null.
    pub features: BTreeMap<String, Option<f64>>,
    pub render_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub spine_id: u64,
    pub synapse_id: u64,
    pub synapse_nm: [f64; 3],
    pub status: TaskStatus,
    pub decision: Option<DecisionRecord>,
    pub window: Window,
    pub z: usize,
    pub k: usize,
    /// Render size in pixels, the window's in-plane extent.
    pub width: usize,
    pub height: usize,
    pub candidates: Vec<CandidateView>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub pending: usize,
    pub decided: usize,
    pub no_match: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// False when no truth is loaded; all scores are then null.
    pub available: bool,
    pub f1: Option<f64>,
    pub subgraph_f1: Option<f64>,
    pub automated_f1: Option<f64>,
    pub ceiling_f1: Option<f64>,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionResponse {
    pub record: DecisionRecord,
    pub task: TaskSummary,
    /// The spine's shaft in the live assignment.
    pub assigned: Option<u64>,
    pub score: ScoreReport,
}

/// Files a session is loaded from.
#[derive(Debug, Clone)]
pub struct SessionPaths {
    pub volume: PathBuf,
    pub manifest: PathBuf,
    pub trees: PathBuf,
    pub truth: Option<PathBuf>,
}

/// Everything a review session reads.
#[derive(Debug, Clone)]
pub struct SessionData {
    pub volume: LabelVolume<f64>,
    pub manifest: Manifest<f64>,
    pub trees: Vec<CandidateTree<f64>>,
    pub truth: Option<Assignment>,
}

impl SessionData {
    pub fn load(paths: &SessionPaths) -> Result<Self, SessionError> {
        let load_err = |p: &PathBuf, e: &dyn std::fmt::Display| SessionError::Load { path: p.clone(), message: e.to_string() };
        let volume = read_volume(&paths.volume).map_err(|e| load_err(&paths.volume, &e))?;
        let manifest = read_manifest(&paths.manifest).map_err(|e| load_err(&paths.manifest, &e))?;
        let text = std::fs::read_to_string(&paths.trees).map_err(|e| load_err(&paths.trees, &e))?;
        let trees = serde_json::from_str(&text).map_err(|e| load_err(&paths.trees, &e))?;
        let truth = match &paths.truth {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| load_err(p, &e))?;
                Some(serde_json::from_str(&text).map_err(|e| load_err(p, &e))?)
            }
            None => None,
        };
        Ok(Self { volume, manifest, trees, truth })
    }
}

/// Review state: the loaded data plus every decision applied so far.
#[derive(Debug, Clone)]
pub struct Session {
    data: SessionData,
    by_spine: BTreeMap<u64, usize>,
    automated: Assignment,
    order: Vec<u64>,
    latest: BTreeMap<u64, DecisionRecord>,
    history: Vec<DecisionRecord>,
    automated_f1: Option<f64>,
    ceiling_f1: Option<f64>,
}

fn margin(tree: &CandidateTree<f64>) -> f64 {
    let top = rank(tree, 2);
    match top.candidates.as_slice() {
        [] => 0.0,
        [a] => a.probability,
        [a, b, ..] => a.probability - b.probability,
    }
}

impl Session {
    pub fn new(data: SessionData) -> Result<Self, SessionError> {
        let automated = assign(&data.trees).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        let by_spine: BTreeMap<u64, usize> = data.trees.iter().enumerate().map(|(i, t)| (t.spine_id, i)).collect();
        let mut order: Vec<(f64, u64)> = data.trees.iter().map(|t| (margin(t), t.spine_id)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut session = Self {
            by_spine,
            automated,
            order: order.into_iter().map(|(_, s)| s).collect(),
            latest: BTreeMap::new(),
            history: Vec::new(),
            automated_f1: None,
            ceiling_f1: None,
            data,
        };
        if let Some(truth) = session.data.truth.clone() {
            let ceiling = proofread_assignment(&session.data.trees, &truth, usize::MAX);
            session.automated_f1 = Some(session.full_f1(&session.automated)?.0);
            session.ceiling_f1 = Some(session.full_f1(&ceiling)?.0);
        }
        Ok(session)
    }

    /// Session state after applying `records` in order.
    pub fn replay(data: SessionData, records: &[DecisionRecord]) -> Result<Self, SessionError> {
        let mut s = Self::new(data)?;
        for r in records {
            s.validate(r.spine_id, r.choice)?;
            s.apply(r.clone());
        }
        Ok(s)
    }

    pub fn data(&self) -> &SessionData {
        &self.data
    }

    pub fn history(&self) -> &[DecisionRecord] {
        &self.history
    }

    pub fn tree(&self, spine: u64) -> Result<&CandidateTree<f64>, SessionError> {
        self.by_spine.get(&spine).map(|&i| &self.data.trees[i]).ok_or(SessionError::UnknownSpine(spine))
    }

    pub fn status(&self, spine: u64) -> TaskStatus {
        match self.latest.get(&spine).map(|r| r.choice) {
            None => TaskStatus::Pending,
            Some(Choice::Skip) => TaskStatus::Skipped,
            Some(_) => TaskStatus::Decided,
        }
    }

    pub fn validate(&self, spine: u64, choice: Choice) -> Result<(), SessionError> {
        let tree = self.tree(spine)?;
        if let Choice::Shaft { shaft_id } = choice {
            if !tree.candidates.iter().any(|c| c.shaft_id == shaft_id) {
                return Err(SessionError::NotACandidate { spine, shaft: shaft_id });
            }
        }
        Ok(())
    }

    /// Validated record for a new decision, numbered after the last one.
    pub fn prepare(&self, spine: u64, req: &DecisionRequest, now_ms: u64) -> Result<DecisionRecord, SessionError> {
        self.validate(spine, req.choice)?;
        Ok(DecisionRecord {
            seq: self.history.len() as u64 + 1,
            spine_id: spine,
            choice: req.choice,
            reviewer: req.reviewer.clone().unwrap_or_else(|| "anonymous".into()),
            timestamp_ms: req.timestamp_ms.unwrap_or(now_ms),
        })
    }

    /// Apply an already validated record; the latest record per spine wins.
    pub fn apply(&mut self, record: DecisionRecord) {
        self.latest.insert(record.spine_id, record.clone());
        self.history.push(record);
    }

    /// Automated links overridden by the reviewer's decisions.
    pub fn reviewed_assignment(&self) -> Assignment {
        let mut out = self.automated.clone();
        for (&spine, r) in &self.latest {
            match r.choice {
                Choice::Shaft { shaft_id } => out.link(spine, shaft_id),
                Choice::NoMatch => out.unassign(spine),
                Choice::Skip => {}
            }
        }
        out
    }

    pub fn automated(&self) -> &Assignment {
        &self.automated
    }

    fn full_f1(&self, reviewed: &Assignment) -> Result<(f64, f64), SessionError> {
        let truth = self.data.truth.as_ref().expect("called with truth loaded");
        let ctx = GraphContext { synapses: &self.data.manifest.synapses, objects: &self.data.manifest.objects, truth };
        let scorer = SubgraphScorer::new(&ctx, &self.data.trees).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        scorer.score(reviewed).map_err(|e| SessionError::BadRequest(e.to_string()))
    }

    pub fn progress(&self) -> Progress {
        let mut p = Progress { total: self.order.len(), ..Default::default() };
        for &s in &self.order {
            match self.latest.get(&s).map(|r| r.choice) {
                None => p.pending += 1,
                Some(Choice::Skip) => p.skipped += 1,
                Some(Choice::NoMatch) => {
                    p.decided += 1;
                    p.no_match += 1;
                }
                Some(Choice::Shaft { .. }) => p.decided += 1,
            }
        }
        p
    }

    pub fn score(&self) -> Result<ScoreReport, SessionError> {
        let progress = self.progress();
        if self.data.truth.is_none() {
            return Ok(ScoreReport {
                available: false,
                f1: None,
                subgraph_f1: None,
                automated_f1: None,
                ceiling_f1: None,
                progress,
            });
        }
        let (f1, sub) = self.full_f1(&self.reviewed_assignment())?;
        Ok(ScoreReport {
            available: true,
            f1: Some(f1),
            subgraph_f1: Some(sub),
            automated_f1: self.automated_f1,
            ceiling_f1: self.ceiling_f1,
            progress,
        })
    }

    pub fn summary(&self, spine: u64) -> Result<TaskSummary, SessionError> {
        let tree = self.tree(spine)?;
        let top = rank(tree, 1);
        Ok(TaskSummary {
            spine_id: spine,
            synapse_id: tree.synapse_id,
            status: self.status(spine),
            margin: margin(tree),
            top_shaft: top.candidates.first().map(|c| c.shaft_id),
            top_probability: top.candidates.first().map(|c| c.probability),
            n_candidates: tree.candidates.len(),
        })
    }

    /// Tasks by ascending margin then spine id, filtered and paginated (pages count from 0).
    pub fn list_tasks(&self, status: Option<TaskStatus>, page: usize, page_size: usize) -> Result<TaskPage, SessionError> {
        if page_size == 0 {
            return Err(SessionError::BadRequest("page_size must be at least 1".into()));
        }
        let matching: Vec<u64> =
            self.order.iter().copied().filter(|&s| status.is_none_or(|st| self.status(s) == st)).collect();
        let tasks = matching
            .iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .map(|&s| self.summary(s))
            .collect::<Result<_, _>>()?;
        Ok(TaskPage { page, page_size, total: matching.len(), tasks })
    }

    pub fn task(&self, spine: u64, k: usize, z: Option<usize>) -> Result<ReviewTask, SessionError> {
        if k == 0 {
            return Err(SessionError::BadRequest("k must be at least 1".into()));
        }
        let tree = self.tree(spine)?;
        let synapse = self
            .data
            .manifest
            .synapses
            .iter()
            .find(|s| s.id == tree.synapse_id)
            .ok_or_else(|| SessionError::BadRequest(format!("synapse {} missing from manifest", tree.synapse_id)))?;
        let z = match z {
            Some(z) => self.check_z(tree, z)?,
            None => tree.window.center[2],
        };
        let ext = tree.window.extent();
        let by_shaft: BTreeMap<u64, &Vec<f64>> = tree.candidates.iter().map(|c| (c.shaft_id, &c.features)).collect();
        let candidates = rank(tree, k)
            .candidates
            .into_iter()
            .map(|c| CandidateView {
                rank: c.rank,
                shaft_id: c.shaft_id,
                probability: c.probability,
                features: FEATURE_NAMES[..N_RAW]
                    .iter()
                    .zip(by_shaft[&c.shaft_id].iter())
                    .map(|(n, &v)| (n.to_string(), v.is_finite().then_some(v)))
                    .collect(),
                render_url: format!("/api/render/{spine}/{}/{z}", c.shaft_id),
            })
            .collect();
        Ok(ReviewTask {
            spine_id: spine,
            synapse_id: tree.synapse_id,
            synapse_nm: synapse.centroid,
            status: self.status(spine),
            decision: self.latest.get(&spine).cloned(),
            window: tree.window,
            z,
            k,
            width: ext[0],
            height: ext[1],
            candidates,
        })
    }

    pub(crate) fn check_z(&self, tree: &CandidateTree<f64>, z: usize) -> Result<usize, SessionError> {
        if z < tree.window.lo[2] || z >= tree.window.hi[2] {
            return Err(SessionError::BadRequest(format!(
                "z {z} outside the window [{}, {})",
                tree.window.lo[2], tree.window.hi[2]
            )));
        }
        Ok(z)
    }
}
