//! The analysis chain: ingest, per-cell extrapolation and coverage models,
//! then indices and the diagnosis report.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::extrapolation::{extrapolate_cell, CellExtrapolation, ExtrapolationError, ExtrapolationParams};
use crate::grid::{field_of, ingest, DenseField, GridError, GridSpec, IngestOutcome, RawSample};
use crate::indices::{diagnose, DiagnosisReport, Fields, IndexParams, IndicesError};
use crate::nn::{coverage_model, CoverageModel, CoverageParams, NnError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub extrapolation: ExtrapolationParams,
    pub coverage: CoverageParams,
    pub indices: IndexParams,
    /// Worker threads for per-cell stages; 0 uses all logical cores.
    pub jobs: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no positioned samples fall inside the grid")]
    NoSamples,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("pci {pci}: {source}")]
    Extrapolation { pci: u32, source: ExtrapolationError },
    #[error("pci {pci}: {source}")]
    Model { pci: u32, source: NnError },
    #[error(transparent)]
    Indices(#[from] IndicesError),
}

impl PipelineError {
    /// Whether the failure comes from a numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PipelineError::Extrapolation {
                source: ExtrapolationError::Numerical(_),
                ..
            } | PipelineError::Model {
                source: NnError::NonFinite { .. },
                ..
            }
        )
    }
}

#[derive(Debug, Clone)]
pub struct CellAnalysis<T> {
    pub extrapolation: CellExtrapolation,
    pub model: CoverageModel<T>,
    /// Coverage model evaluated over the grid.
    pub field: DenseField,
}

#[derive(Debug, Clone)]
pub struct Analysis<T> {
    pub ingest: IngestOutcome,
    pub cells: BTreeMap<u32, CellAnalysis<T>>,
    pub report: DiagnosisReport,
}

impl<T> Analysis<T> {
    /// Dense extrapolation output per cell.
    pub fn extrapolated_fields(&self) -> Fields {
        self.cells
            .iter()
            .map(|(&p, c)| {
                let d = &c.extrapolation.dense;
                (
                    p,
                    DenseField {
                        spec: d.spec,
                        values: d.values.clone(),
                    },
                )
            })
            .collect()
    }

    pub fn model_fields(&self) -> Fields {
        self.cells.iter().map(|(&p, c)| (p, c.field.clone())).collect()
    }
}

pub fn worker_count(jobs: usize) -> usize {
    if jobs > 0 {
        jobs
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

/// Run `f` over `items` on up to `jobs` threads, keeping input order in the output.
pub fn par_map<I: Sync, O: Send>(items: &[I], jobs: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let workers = worker_count(jobs).min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<O>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= items.len() {
                    break;
                }
                let out = f(&items[k]);
                slots.lock().expect("worker panicked")[k] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|o| o.expect("every slot filled"))
        .collect()
}

fn analyze_cell<T: Scalar>(
    outcome: &IngestOutcome,
    spec: &GridSpec,
    pci: u32,
    params: &PipelineParams,
) -> Result<CellAnalysis<T>, PipelineError> {
    let sparse = field_of(&outcome.grid, pci);
    let extrapolation = extrapolate_cell(&sparse, spec, &params.extrapolation)
        .map_err(|source| PipelineError::Extrapolation { pci, source })?;
    let model = coverage_model::<T>(&extrapolation.dense, &params.coverage)
        .map_err(|source| PipelineError::Model { pci, source })?;
    let field = model.field();
    log::debug!(
        "pci {pci}: {} populated elements, final loss {:.3e}",
        sparse.len(),
        model.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(CellAnalysis {
        extrapolation,
        model,
        field,
    })
}

/// Full analysis of positioned samples on `spec`. Per-cell work runs on
/// `params.jobs` threads; results do not depend on the thread count.
pub fn analyze<T: Scalar>(
    spec: &GridSpec,
    samples: &[RawSample],
    params: &PipelineParams,
) -> Result<Analysis<T>, PipelineError> {
    let outcome = ingest(spec, samples)?;
    if outcome.unpositioned > 0 || outcome.out_of_extent > 0 {
        log::warn!(
            "skipped {} unpositioned and {} out-of-extent samples",
            outcome.unpositioned,
            outcome.out_of_extent
        );
    }
    let pcis = outcome.grid.pcis();
    if pcis.is_empty() {
        return Err(PipelineError::NoSamples);
    }
    if pcis.len() == 1 {
        log::warn!("single-cell cluster (pci {}): interference indices are zero", pcis[0]);
    }
    log::info!("analyzing {} cells", pcis.len());
    let results = par_map(&pcis, params.jobs, |&pci| {
        analyze_cell::<T>(&outcome, spec, pci, params)
    });
    let mut cells = BTreeMap::new();
    for (pci, r) in pcis.iter().zip(results) {
        cells.insert(*pci, r?);
    }
    let fields: Fields = cells.iter().map(|(&p, c)| (p, c.field.clone())).collect();
    let report = diagnose(&fields, &params.indices)?;
    Ok(Analysis {
        ingest: outcome,
        cells,
        report,
    })
}
