//! The streaming selection loop: conditional DPP sampling of each arriving
//! group, local acceptance tests, then elastic-net pruning of the whole set.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criteria::supervised::{supervised_select, SupervisedConfig, TestSign};
use crate::criteria::wilcoxon::wilcoxon_filter;
use crate::criteria::ScatterVariant;
use crate::data::{stream_groups, Dataset, FeatureGroup, StreamConfig};
use crate::dpp::{self, Kernel};
use crate::elasticnet::{fit_elasticnet, prune, ElasticNetConfig};
use crate::error::{DofsError, Result};

/// Checkpoint format version.
pub const STATE_VERSION: u32 = 1;
/// Residual-variance tolerance when picking a nonsingular anchor set.
const ANCHOR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// DPP sampling alone; no local tests and no pruning.
    DppOnly,
    /// Wilcoxon redundancy filter; pruning only when labels exist.
    Unsupervised,
    #[default]
    Supervised,
    /// Wilcoxon filter, then the supervised tests on the survivors.
    Combined,
}

impl Mode {
    pub fn needs_labels(self) -> bool {
        matches!(self, Mode::Supervised | Mode::Combined)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::DppOnly => "dpp_only",
            Mode::Unsupervised => "unsupervised",
            Mode::Supervised => "supervised",
            Mode::Combined => "combined",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = DofsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "dpp_only" | "dpp" => Ok(Mode::DppOnly),
            "unsupervised" => Ok(Mode::Unsupervised),
            "supervised" => Ok(Mode::Supervised),
            "combined" => Ok(Mode::Combined),
            other => Err(DofsError::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub kernel: Kernel,
    /// Multiplies the similarity matrix before sampling.
    pub kernel_scale: f64,
    /// Cap on features sampled per group.
    pub k_max: Option<usize>,
    pub alpha: f64,
    pub epsilon: f64,
    pub scatter: ScatterVariant,
    pub test_sign: TestSign,
    pub elasticnet: ElasticNetConfig,
    pub group_size: usize,
    pub seed: u64,
    /// Permute features before grouping.
    pub shuffle: bool,
    /// Stop once this many features are selected.
    pub max_selected: Option<usize>,
    /// Largest number of selected features the sampler conditions on.
    pub anchor_limit: usize,
    /// Prune after every accepted feature instead of once per group.
    pub global_per_feature: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Supervised,
            kernel: Kernel::default(),
            kernel_scale: 1.0,
            k_max: None,
            alpha: 0.05,
            epsilon: 1e-3,
            scatter: ScatterVariant::Label,
            test_sign: TestSign::Exceeds,
            elasticnet: ElasticNetConfig::default(),
            group_size: 5,
            seed: 1,
            shuffle: false,
            max_selected: None,
            anchor_limit: 500,
            global_per_feature: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.supervised().validate()?;
        self.elasticnet.validate()?;
        let bad = |m: String| Err(DofsError::InvalidConfig(m));
        if self.group_size == 0 {
            return bad("group size must be at least 1".into());
        }
        if self.k_max == Some(0) {
            return bad("k_max must be at least 1".into());
        }
        if !(self.kernel_scale > 0.0 && self.kernel_scale.is_finite()) {
            return bad(format!("kernel scale must be positive, got {}", self.kernel_scale));
        }
        if let Kernel::Rbf { gamma: Some(g) } = self.kernel {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("rbf gamma must be positive, got {g}"));
            }
        }
        if self.anchor_limit == 0 {
            return bad("anchor limit must be at least 1".into());
        }
        Ok(())
    }

    pub fn supervised(&self) -> SupervisedConfig {
        SupervisedConfig {
            epsilon: self.epsilon,
            alpha: self.alpha,
            variant: self.scatter,
            sign: self.test_sign,
        }
    }

    pub fn stream(&self) -> StreamConfig {
        StreamConfig {
            group_size: self.group_size,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dpp,
    LocalUnsup,
    LocalSup,
    SurvivedGlobal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub index: usize,
    /// Group the feature arrived in.
    pub group: usize,
    pub admitted_by: Stage,
    /// Latest stage the feature passed.
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub group: usize,
    pub arrived: Vec<usize>,
    /// Selected features the sampler conditioned on.
    pub anchors: usize,
    pub sampled: Vec<usize>,
    pub accepted: Vec<usize>,
    pub pruned: Vec<usize>,
    pub n_selected: usize,
    /// In execution order: sample, local, global.
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub version: u32,
    pub config: PipelineConfig,
    pub dataset: String,
    pub fingerprint: u64,
    pub selected: Vec<SelectedFeature>,
    pub log: Vec<IterationRecord>,
    pub groups_processed: usize,
    /// The max-selected cap was reached.
    pub stopped: bool,
}

impl PipelineState {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.selected.iter().map(|s| s.index).collect()
    }

    pub fn arrived(&self) -> usize {
        self.log.iter().map(|r| r.arrived.len()).sum()
    }

    /// Copy with every stage timing zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut s = self.clone();
        for r in &mut s.log {
            for t in &mut r.timings {
                t.seconds = 0.0;
            }
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| DofsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DofsError::io(path, e))?;
        let state: Self = serde_json::from_str(&text)?;
        if state.version != STATE_VERSION {
            return Err(DofsError::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {STATE_VERSION})",
                state.version
            )));
        }
        Ok(state)
    }

    /// One JSON object per iteration record.
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| DofsError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for r in &self.log {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| DofsError::io(path, e))?;
        }
        w.flush().map_err(|e| DofsError::io(path, e))
    }
}

/// A configured pipeline over one dataset. Holds the standardized columns.
pub struct Runner {
    data: Dataset,
    cfg: PipelineConfig,
    fingerprint: u64,
}

impl Runner {
    pub fn new(d: &Dataset, cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode.needs_labels() {
            d.require_supervised()?;
        }
        Ok(Self {
            data: d.standardized(),
            fingerprint: d.fingerprint(),
            cfg,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// The feature stream in arrival order.
    pub fn groups(&self) -> Result<Vec<FeatureGroup>> {
        stream_groups(&self.data, &self.cfg.stream())
    }

    pub fn initial_state(&self) -> PipelineState {
        PipelineState {
            version: STATE_VERSION,
            config: self.cfg.clone(),
            dataset: self.data.name().to_string(),
            fingerprint: self.fingerprint,
            selected: Vec::new(),
            log: Vec::new(),
            groups_processed: 0,
            stopped: false,
        }
    }

    fn check_state(&self, state: &PipelineState) -> Result<()> {
        if state.config != self.cfg {
            return Err(DofsError::Checkpoint(
                "checkpoint was written with a different configuration".into(),
            ));
        }
        if state.fingerprint != self.fingerprint {
            return Err(DofsError::Checkpoint(format!(
                "checkpoint belongs to a different dataset ({})",
                state.dataset
            )));
        }
        Ok(())
    }

    /// Processes every group in order.
    pub fn run(&self) -> Result<PipelineState> {
        let groups = self.groups()?;
        self.resume(self.initial_state(), &groups)
    }

    /// Continues `state` over `groups`, which must pick up where the state
    /// left off.
    pub fn resume(&self, mut state: PipelineState, groups: &[FeatureGroup]) -> Result<PipelineState> {
        self.check_state(&state)?;
        for g in groups {
            self.advance(&mut state, g)?;
        }
        Ok(state)
    }

    /// Processes one arriving group. On error the state keeps every record
    /// of the groups completed before it.
    pub fn advance(&self, state: &mut PipelineState, group: &FeatureGroup) -> Result<()> {
        if group.id != state.groups_processed {
            return Err(DofsError::InvalidInput(format!(
                "expected group {}, got group {}",
                state.groups_processed, group.id
            )));
        }
        if state.stopped {
            state.groups_processed += 1;
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(group.id as u64);

        let t0 = Instant::now();
        let (anchors, sampled) = self.sample_stage(state, group, &mut rng)?;
        let t_sample = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let accepted = self.local_stage(state, &sampled)?;
        let t_local = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let admitted_by = match self.cfg.mode {
            Mode::DppOnly => Stage::Dpp,
            Mode::Unsupervised => Stage::LocalUnsup,
            Mode::Supervised | Mode::Combined => Stage::LocalSup,
        };
        let mut room = self
            .cfg
            .max_selected
            .map_or(usize::MAX, |cap| cap.saturating_sub(state.selected.len()));
        let mut admitted = Vec::new();
        let mut pruned = Vec::new();
        for &index in &accepted {
            if room == 0 {
                break;
            }
            room -= 1;
            admitted.push(index);
            state.selected.push(SelectedFeature {
                index,
                group: group.id,
                admitted_by,
                stage: admitted_by,
            });
            if self.cfg.global_per_feature {
                pruned.extend(self.global_stage(state)?);
            }
        }
        if !self.cfg.global_per_feature {
            pruned.extend(self.global_stage(state)?);
        }
        let t_global = t2.elapsed().as_secs_f64();

        if let Some(cap) = self.cfg.max_selected {
            if state.selected.len() >= cap {
                state.stopped = true;
            }
        }
        log::debug!(
            "group {}: sampled {:?} accepted {:?} pruned {:?}",
            group.id,
            sampled,
            admitted,
            pruned
        );
        state.log.push(IterationRecord {
            group: group.id,
            arrived: group.indices.clone(),
            anchors,
            sampled,
            accepted: admitted,
            pruned,
            n_selected: state.selected.len(),
            timings: vec![
                StageTiming { stage: "sample".into(), seconds: t_sample },
                StageTiming { stage: "local".into(), seconds: t_local },
                StageTiming { stage: "global".into(), seconds: t_global },
            ],
        });
        state.groups_processed += 1;
        Ok(())
    }

    fn sample_stage(
        &self,
        state: &PipelineState,
        group: &FeatureGroup,
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, Vec<usize>)> {
        if group.indices.is_empty() {
            return Ok((0, Vec::new()));
        }
        let mut anchors = state.selected_indices();
        if anchors.len() > self.cfg.anchor_limit {
            let mut pick = rand::seq::index::sample(rng, anchors.len(), self.cfg.anchor_limit).into_vec();
            pick.sort_unstable();
            anchors = pick.into_iter().map(|i| anchors[i]).collect();
        }
        let mut ids = anchors.clone();
        ids.extend_from_slice(&group.indices);
        let cols = self.data.select_columns(&ids);
        let base = dpp::build_similarity(&cols, self.cfg.kernel, ids)?;
        let ens = if self.cfg.kernel_scale != 1.0 {
            dpp::LEnsemble::new(base.matrix() * self.cfg.kernel_scale, base.item_ids().to_vec())?
        } else {
            base
        };
        let anchors = ens.independent_items(&anchors, ANCHOR_TOL)?;
        let cond = dpp::condition_on(&ens, &anchors)?;
        let sampled = match self.cfg.k_max {
            Some(k) => dpp::sample_truncated(&cond, k, rng).items,
            None => cond.sampler().draw(rng),
        };
        Ok((anchors.len(), sampled))
    }

    fn local_stage(&self, state: &PipelineState, sampled: &[usize]) -> Result<Vec<usize>> {
        let selected = state.selected_indices();
        let filtered = match self.cfg.mode {
            Mode::DppOnly => return Ok(sampled.to_vec()),
            Mode::Supervised => sampled.to_vec(),
            Mode::Unsupervised | Mode::Combined => {
                let mut kept: Vec<usize> = Vec::new();
                for &f in sampled {
                    let refs: Vec<&[f64]> = selected
                        .iter()
                        .chain(&kept)
                        .map(|&j| self.data.column(j))
                        .collect();
                    if wilcoxon_filter(&refs, self.data.column(f), self.cfg.alpha)?.is_keep() {
                        kept.push(f);
                    }
                }
                kept
            }
        };
        if self.cfg.mode == Mode::Unsupervised || filtered.is_empty() {
            return Ok(filtered);
        }
        let labels = self.data.require_supervised()?;
        let incoming: Vec<&[f64]> = filtered.iter().map(|&j| self.data.column(j)).collect();
        let current: Vec<&[f64]> = selected.iter().map(|&j| self.data.column(j)).collect();
        let picked = supervised_select(&incoming, &current, labels, &self.cfg.supervised())?;
        Ok(picked.into_iter().map(|i| filtered[i]).collect())
    }

    /// Fits the elastic net on the selected set and drops small coefficients.
    /// Returns the dropped feature indices.
    fn global_stage(&self, state: &mut PipelineState) -> Result<Vec<usize>> {
        if self.cfg.mode == Mode::DppOnly || state.selected.is_empty() {
            return Ok(Vec::new());
        }
        let Some(labels) = self.data.labels() else {
            return Ok(Vec::new());
        };
        let idx = state.selected_indices();
        let x: DMatrix<f64> = self.data.select_columns(&idx);
        let model = fit_elasticnet(&x, labels, &self.cfg.elasticnet)?;
        if !model.converged {
            log::warn!("pruning with an unconverged elastic-net fit");
        }
        let keep = prune(&model, self.cfg.elasticnet.threshold());
        let mut dropped = Vec::new();
        let mut kept = Vec::with_capacity(keep.len());
        for (pos, mut f) in std::mem::take(&mut state.selected).into_iter().enumerate() {
            if keep.binary_search(&pos).is_ok() {
                f.stage = Stage::SurvivedGlobal;
                kept.push(f);
            } else {
                dropped.push(f.index);
            }
        }
        state.selected = kept;
        Ok(dropped)
    }
}

/// Runs the whole stream of `d` under `cfg`.
pub fn run(d: &Dataset, cfg: &PipelineConfig) -> Result<PipelineState> {
    Runner::new(d, cfg.clone())?.run()
}

/// Continues `state` over `more_groups`; `cfg` must match the state's.
pub fn resume(
    d: &Dataset,
    state: PipelineState,
    more_groups: &[FeatureGroup],
    cfg: &PipelineConfig,
) -> Result<PipelineState> {
    Runner::new(d, cfg.clone())?.resume(state, more_groups)
}
