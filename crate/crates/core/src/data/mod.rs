//! Episode records and the on-disk dataset.
//!
//! Layout under the store root:
//!
//! ```text
//! manifest.tsv   episode_id  task  step  i,j,k  label  ee_path  scene_path
//! episodes.tsv   episode_id  task  round  seed  steps  completed  success  illegal
//! rounds.tsv     round  task  positives  negatives
//! round_<t>/ee/<digest>.rgm          end-effector maps, shared by content
//! round_<t>/scene/<episode>_<step>.rgm
//! ```
//!
//! `rounds.tsv` is written last and is the commit point: lines in the other
//! two files that belong to an uncommitted round are ignored and overwritten.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{read_grid_file, write_grid_file, GridError};
use crate::model::{self, ModelError};
use crate::policy::{ActionIndex, ActionPose, PolicyError, StepKind, Task};
use crate::repr::{EndEffectorRepr, ReprError, SceneObs};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.tsv";
pub const EPISODES: &str = "episodes.tsv";
pub const ROUNDS: &str = "rounds.tsv";
pub const MAX_SHIFT: i64 = 8;
const SHIFT_RETRIES: usize = 16;
const SCENE_RES: usize = 64;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("round {got} does not follow round {last}")]
    RoundOrder { last: u32, got: u32 },
    #[error("no {label} records for {stratum}")]
    EmptyStratum { stratum: String, label: &'static str },
    #[error("no tasks requested")]
    NoTasks,
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("episode {0} breaks the termination rule")]
    Termination(String),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |e| DataError::Io(path.to_path_buf(), e)
}

/// One executed step with its observations, before storage.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub kind: StepKind,
    pub action: ActionIndex,
    pub pose: ActionPose,
    pub success: bool,
    pub illegal: bool,
    pub ee: EndEffectorRepr,
    pub scene: SceneObs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: String,
    pub task: Task,
    pub seed: u64,
    pub steps: Vec<EpisodeStep>,
}

impl Episode {
    /// Every step of the task's budget was executed.
    pub fn completed(&self) -> bool {
        self.steps.len() == self.task.step_budget()
    }

    pub fn success(&self) -> bool {
        self.completed() && self.steps.iter().all(|s| s.success)
    }

    pub fn illegal(&self) -> bool {
        self.steps.iter().any(|s| s.illegal)
    }

    /// Only the last step may fail, and nothing follows a failure.
    pub fn check_termination(&self) -> Result<(), DataError> {
        let n = self.steps.len();
        if n == 0 || n > self.task.step_budget() || self.steps[..n - 1].iter().any(|s| !s.success) {
            return Err(DataError::Termination(self.episode_id.clone()));
        }
        if !self.completed() && self.steps[n - 1].success {
            return Err(DataError::Termination(self.episode_id.clone()));
        }
        Ok(())
    }
}

/// A task together with one of its step kinds: tool pickups inside
/// grasp_grasp are a different stratum from its pincer grasp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stratum {
    pub task: Task,
    pub kind: StepKind,
}

impl std::fmt::Display for Stratum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.task, self.kind.name())
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub episode_id: String,
    pub task: Task,
    pub step_index: usize,
    pub action: ActionIndex,
    pub success: bool,
    pub ee_path: String,
    pub scene_path: String,
    pub round_id: u32,
}

impl StepRecord {
    /// The primitive this record trains, recovered from task and step.
    pub fn kind(&self) -> StepKind {
        self.task.step_kind(self.step_index)
    }

    pub fn stratum(&self) -> Stratum {
        Stratum {
            task: self.task,
            kind: self.kind(),
        }
    }

    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            self.episode_id,
            self.task,
            self.step_index,
            self.action,
            self.success as u8,
            self.ee_path,
            self.scene_path
        )
    }

    fn parse(line: &str, lineno: usize) -> Result<Self, DataError> {
        let err = |msg: String| DataError::Parse { file: MANIFEST.into(), line: lineno, msg };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", f.len())));
        }
        let ijk: Vec<usize> = f[3]
            .split(',')
            .map(|v| v.parse().map_err(|_| err(format!("bad index {}", f[3]))))
            .collect::<Result<_, _>>()?;
        if ijk.len() != 3 {
            return Err(err(format!("bad index {}", f[3])));
        }
        let round_id = f[6]
            .strip_prefix("round_")
            .and_then(|r| r.split('/').next())
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| err(format!("scene path {} is not under a round directory", f[6])))?;
        Ok(Self {
            episode_id: f[0].to_string(),
            task: f[1].parse().map_err(|e: PolicyError| err(e.to_string()))?,
            step_index: f[2].parse().map_err(|_| err(format!("bad step {}", f[2])))?,
            action: ActionIndex::new(ijk[0], ijk[1], ijk[2]),
            success: match f[4] {
                "1" => true,
                "0" => false,
                other => return Err(err(format!("bad label {other}"))),
            },
            ee_path: f[5].to_string(),
            scene_path: f[6].to_string(),
            round_id,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeSummary {
    pub episode_id: String,
    pub task: Task,
    pub round_id: u32,
    pub seed: u64,
    pub steps: usize,
    pub completed: bool,
    pub success: bool,
    pub illegal: bool,
}

impl EpisodeSummary {
    pub fn of(ep: &Episode, round_id: u32) -> Self {
        Self {
            episode_id: ep.episode_id.clone(),
            task: ep.task,
            round_id,
            seed: ep.seed,
            steps: ep.steps.len(),
            completed: ep.completed(),
            success: ep.success(),
            illegal: ep.illegal(),
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            self.episode_id, self.task, self.round_id, self.seed, self.steps, self.completed as u8, self.success as u8, self.illegal as u8
        )
    }

    pub fn parse(line: &str, lineno: usize, file: &str) -> Result<Self, DataError> {
        let err = |msg: String| DataError::Parse { file: file.into(), line: lineno, msg };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, got {}", f.len())));
        }
        let flag = |s: &str| match s {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(err(format!("bad flag {s}"))),
        };
        Ok(Self {
            episode_id: f[0].into(),
            task: f[1].parse().map_err(|e: PolicyError| err(e.to_string()))?,
            round_id: f[2].parse().map_err(|_| err("bad round".into()))?,
            seed: f[3].parse().map_err(|_| err("bad seed".into()))?,
            steps: f[4].parse().map_err(|_| err("bad step count".into()))?,
            completed: flag(f[5])?,
            success: flag(f[6])?,
            illegal: flag(f[7])?,
        })
    }
}

/// Positive/negative record counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub positive: usize,
    pub negative: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.positive + self.negative
    }
}

/// Cumulative counts after each round, per task tag.
pub type RoundCounts = BTreeMap<u32, BTreeMap<Task, Counts>>;

pub fn count_records<'a>(records: impl IntoIterator<Item = &'a StepRecord>) -> BTreeMap<Task, Counts> {
    let mut out: BTreeMap<Task, Counts> = BTreeMap::new();
    for r in records {
        let c = out.entry(r.task).or_default();
        if r.success {
            c.positive += 1;
        } else {
            c.negative += 1;
        }
    }
    out
}

/// The store: manifest in memory, observations loaded on demand.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    pub records: Vec<StepRecord>,
    pub episodes: Vec<EpisodeSummary>,
    pub rounds: RoundCounts,
    ee_cache: Mutex<HashMap<String, Arc<Tensor>>>,
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s.lines().filter(|l| !l.is_empty()).map(String::from).collect()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(DataError::Io(path.to_path_buf(), e)),
    }
}

/// Write via a temporary file and rename.
fn replace_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl Dataset {
    /// Open a store, creating the directory if needed.
    pub fn open(root: &Path) -> Result<Self, DataError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let mut rounds = RoundCounts::new();
        for (n, line) in read_lines(&root.join(ROUNDS))?.iter().enumerate() {
            let err = |msg: &str| DataError::Parse { file: ROUNDS.into(), line: n + 1, msg: msg.into() };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err("expected 4 fields"));
            }
            let round: u32 = f[0].parse().map_err(|_| err("bad round"))?;
            let task: Task = f[1].parse().map_err(|_| err("bad task"))?;
            let positive = f[2].parse().map_err(|_| err("bad count"))?;
            let negative = f[3].parse().map_err(|_| err("bad count"))?;
            rounds.entry(round).or_default().insert(task, Counts { positive, negative });
        }
        let last = rounds.keys().next_back().copied().unwrap_or(0);
        let mut records = Vec::new();
        for (n, line) in read_lines(&root.join(MANIFEST))?.iter().enumerate() {
            let r = StepRecord::parse(line, n + 1)?;
            if r.round_id <= last {
                records.push(r);
            }
        }
        let mut episodes = Vec::new();
        for (n, line) in read_lines(&root.join(EPISODES))?.iter().enumerate() {
            let e = EpisodeSummary::parse(line, n + 1, EPISODES)?;
            if e.round_id <= last {
                episodes.push(e);
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            records,
            episodes,
            rounds,
            ee_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn last_round(&self) -> u32 {
        self.rounds.keys().next_back().copied().unwrap_or(0)
    }

    /// Recount every record of rounds up to and including `round`.
    pub fn recount(&self, round: u32) -> BTreeMap<Task, Counts> {
        count_records(self.records.iter().filter(|r| r.round_id <= round))
    }

    /// Store `episodes` as round `round_id` (must be the next round).
    pub fn append_round(&mut self, round_id: u32, episodes: &[Episode]) -> Result<BTreeMap<Task, Counts>, DataError> {
        let mut w = self.begin_round(round_id)?;
        w.write(episodes)?;
        w.commit()
    }

    /// Start writing round `round_id`; nothing is visible until `commit`.
    pub fn begin_round(&mut self, round_id: u32) -> Result<RoundWriter<'_>, DataError> {
        let last = self.last_round();
        if round_id != last + 1 {
            return Err(DataError::RoundOrder { last, got: round_id });
        }
        let rdir = format!("round_{round_id}");
        for sub in ["ee", "scene"] {
            let d = self.root.join(&rdir).join(sub);
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        Ok(RoundWriter {
            ds: self,
            round_id,
            rdir,
            records: Vec::new(),
            summaries: Vec::new(),
            written_ee: HashMap::new(),
        })
    }

    /// `[4, 112, 112]` end-effector tensor for a record (cached by path).
    pub fn load_ee(&self, r: &StepRecord) -> Result<Arc<Tensor>, DataError> {
        if let Some(t) = self.ee_cache.lock().expect("cache lock").get(&r.ee_path) {
            return Ok(t.clone());
        }
        let grid = read_grid_file(&self.root.join(&r.ee_path))?;
        let t = Arc::new(model::ee_tensor(&EndEffectorRepr::from_tensor(&grid)?)?);
        let mut cache = self.ee_cache.lock().expect("cache lock");
        // tool maps are mostly unique; keep the cache from growing without bound
        if cache.len() > 256 {
            cache.clear();
        }
        cache.insert(r.ee_path.clone(), t.clone());
        Ok(t)
    }

    pub fn load_scene(&self, r: &StepRecord) -> Result<SceneObs, DataError> {
        Ok(SceneObs::from_tensor(&read_grid_file(&self.root.join(&r.scene_path))?)?)
    }
}

/// Streams one round's observation files; `commit` publishes the round.
pub struct RoundWriter<'a> {
    ds: &'a mut Dataset,
    round_id: u32,
    rdir: String,
    records: Vec<StepRecord>,
    summaries: Vec<EpisodeSummary>,
    written_ee: HashMap<[u8; 32], String>,
}

impl RoundWriter<'_> {
    pub fn write(&mut self, episodes: &[Episode]) -> Result<(), DataError> {
        for ep in episodes {
            ep.check_termination()?;
        }
        let root = self.ds.root.clone();
        for ep in episodes {
            for (step_index, st) in ep.steps.iter().enumerate() {
                let ee_bytes = st.ee.to_tensor().to_bytes();
                let digest: [u8; 32] = Sha256::digest(&ee_bytes).into();
                let ee_path = match self.written_ee.get(&digest) {
                    Some(p) => p.clone(),
                    None => {
                        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
                        let rel = format!("{}/ee/{hex}.rgm", self.rdir);
                        let abs = root.join(&rel);
                        fs::write(&abs, &ee_bytes).map_err(io_err(&abs))?;
                        self.written_ee.insert(digest, rel.clone());
                        rel
                    }
                };
                let scene_path = format!("{}/scene/{}_{step_index}.rgm", self.rdir, ep.episode_id);
                write_grid_file(&root.join(&scene_path), &st.scene.to_tensor())?;
                self.records.push(StepRecord {
                    episode_id: ep.episode_id.clone(),
                    task: ep.task,
                    step_index,
                    action: st.action,
                    success: st.success,
                    ee_path,
                    scene_path,
                    round_id: self.round_id,
                });
            }
            self.summaries.push(EpisodeSummary::of(ep, self.round_id));
        }
        Ok(())
    }

    /// Rewrite the manifests with the new round appended. `rounds.tsv` goes last.
    pub fn commit(self) -> Result<BTreeMap<Task, Counts>, DataError> {
        let ds = self.ds;
        let mut manifest: String = ds.records.iter().map(StepRecord::to_line).collect();
        manifest.extend(self.records.iter().map(StepRecord::to_line));
        let mut ep_lines: String = ds.episodes.iter().map(EpisodeSummary::to_line).collect();
        ep_lines.extend(self.summaries.iter().map(EpisodeSummary::to_line));

        ds.records.extend(self.records);
        ds.episodes.extend(self.summaries);
        let counts = ds.recount(self.round_id);
        let mut rounds = ds.rounds.clone();
        rounds.insert(self.round_id, counts.clone());
        let mut round_lines = String::new();
        for (r, per_task) in &rounds {
            for (t, c) in per_task {
                round_lines.push_str(&format!("{r}\t{t}\t{}\t{}\n", c.positive, c.negative));
            }
        }
        replace_file(&ds.root.join(MANIFEST), manifest.as_bytes())?;
        replace_file(&ds.root.join(EPISODES), ep_lines.as_bytes())?;
        replace_file(&ds.root.join(ROUNDS), round_lines.as_bytes())?;
        ds.rounds = rounds;
        Ok(counts)
    }
}

/// Record indices grouped by (key, label). The key is the task tag unless
/// built with [`Strata::from_keys`].
#[derive(Debug, Clone)]
pub struct Strata<K = Task> {
    groups: BTreeMap<(K, bool), Vec<usize>>,
}

impl Strata<Task> {
    pub fn new<'a>(records: impl IntoIterator<Item = (usize, &'a StepRecord)>) -> Self {
        Self::from_keys(records.into_iter().map(|(i, r)| (i, r.task, r.success)))
    }
}

impl<K: Ord + Copy + std::fmt::Display> Strata<K> {
    pub fn from_keys(items: impl IntoIterator<Item = (usize, K, bool)>) -> Self {
        let mut groups: BTreeMap<(K, bool), Vec<usize>> = BTreeMap::new();
        for (i, key, label) in items {
            groups.entry((key, label)).or_default().push(i);
        }
        Self { groups }
    }

    pub fn len(&self, key: K, label: bool) -> usize {
        self.groups.get(&(key, label)).map_or(0, Vec::len)
    }

    pub fn check(&self, keys: &[K]) -> Result<(), DataError> {
        if keys.is_empty() {
            return Err(DataError::NoTasks);
        }
        for &key in keys {
            for label in [true, false] {
                if self.len(key, label) == 0 {
                    let label = if label { "positive" } else { "negative" };
                    return Err(DataError::EmptyStratum { stratum: key.to_string(), label });
                }
            }
        }
        Ok(())
    }

    /// Per slot: uniform key, fair coin for the label, uniform record in the
    /// stratum. With replacement. Returns indices into the source records.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, batch: usize, keys: &[K], rng: &mut R) -> Result<Vec<usize>, DataError> {
        self.check(keys)?;
        Ok((0..batch)
            .map(|_| {
                let key = keys[rng.gen_range(0..keys.len())];
                let label = rng.gen_bool(0.5);
                let g = &self.groups[&(key, label)];
                g[rng.gen_range(0..g.len())]
            })
            .collect())
    }
}

/// A record's scene and action, ready to shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentable {
    pub scene: SceneObs,
    pub action: ActionIndex,
    pub success: bool,
}

/// Shift scene and action together by `(d_col, d_row)`, zero-filling.
pub fn translate(a: &Augmentable, d_col: i64, d_row: i64) -> Option<Augmentable> {
    let i = a.action.i as i64 + d_row;
    let j = a.action.j as i64 + d_col;
    if !(0..SCENE_RES as i64).contains(&i) || !(0..SCENE_RES as i64).contains(&j) {
        return None;
    }
    Some(Augmentable {
        scene: SceneObs {
            height: a.scene.height.shifted(d_row, d_col),
        },
        action: ActionIndex::new(i as usize, j as usize, a.action.k),
        success: a.success,
    })
}

/// Random integer shift in `[-max_shift, max_shift]²` that keeps the action
/// on the map; falls back to no shift after a bounded number of draws.
pub fn augment_translate<R: Rng + ?Sized>(a: &Augmentable, max_shift: i64, rng: &mut R) -> Augmentable {
    for _ in 0..SHIFT_RETRIES {
        let dx = rng.gen_range(-max_shift..=max_shift);
        let dy = rng.gen_range(-max_shift..=max_shift);
        if let Some(out) = translate(a, dx, dy) {
            return out;
        }
    }
    a.clone()
}

/// Deterministic 1-in-6 validation split by episode id.
pub fn is_validation(episode_id: &str) -> bool {
    let d = Sha256::digest(episode_id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) % 6 == 0
}
