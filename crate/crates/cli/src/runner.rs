//! Pipeline execution: one experiment = repetitions x attacks, each
//! repetition a fresh deterministic simulate/infer/recover/score run.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use dsselab_core::corpus::{ingest_corpus, synthesize_corpus, CorpusSplit, IngestConfig, SynthSpec};
use dsselab_core::metrics::{accuracy, adjusted_rand_index, Partition};
use dsselab_core::recovery::{build_evidence, per_query_assignment, run_instantiation, AuxEvidence};
use dsselab_core::search_pattern::{analyze_rounds, infer_esp, MergedGroupSet, RoundGroups};
use dsselab_core::sim::{derive_seed, simulate, GroundTruth, LeakageTrace, WorkloadConfig};

use crate::config::{AttackKind, CorpusSource, ExperimentConfig};

/// One line of results.csv.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub fingerprint: String,
    pub repetition: u32,
    pub attack: String,
    pub ari: f64,
    pub accuracy: f64,
    pub wall_time_s: f64,
    pub peak_mem_bytes: u64,
    pub status: String,
}

/// Process peak RSS estimate from /proc: VmHWM when the kernel exposes
/// it, current VmRSS otherwise, 0 when neither is available.
fn peak_mem_bytes() -> u64 {
    let Ok(status) = std::fs::read_to_string("/proc/self/status") else {
        return 0;
    };
    let parse = |prefix: &str| {
        status.lines().find_map(|line| {
            line.strip_prefix(prefix)?
                .trim()
                .trim_end_matches("kB")
                .trim()
                .parse::<u64>()
                .ok()
        })
    };
    parse("VmHWM:").or_else(|| parse("VmRSS:")).unwrap_or(0) * 1024
}

fn build_corpus(source: &CorpusSource, seed: u64) -> Result<CorpusSplit> {
    match source {
        CorpusSource::Synth { spec } => {
            let spec = SynthSpec { seed, ..spec.clone() };
            Ok(synthesize_corpus(&spec)?)
        }
        CorpusSource::Jsonl {
            path,
            trends,
            universe,
        } => {
            let cfg = IngestConfig {
                universe_size: *universe,
                seed,
                trends_path: trends.clone(),
            };
            Ok(ingest_corpus(path, &cfg)?)
        }
    }
}

/// Everything produced by one repetition that attacks consume.
pub struct RepetitionState {
    pub trace: LeakageTrace,
    pub truth: GroundTruth,
    pub aux: AuxEvidence,
    pub inferred: Option<(Vec<RoundGroups>, MergedGroupSet, f64)>,
    pub sim_seconds: f64,
    pub p1_seconds: f64,
    pub seed: u64,
}

/// Simulates one repetition and (when any attack needs it) runs the
/// search-pattern inference.
pub fn prepare_repetition(config: &ExperimentConfig, repetition: u32) -> Result<RepetitionState> {
    let seed = derive_seed(config.run.seed, repetition as u64);
    let t0 = Instant::now();
    let split = build_corpus(&config.corpus, seed)?;
    let schedule = config.schedule.to_schedule()?;
    let workload = WorkloadConfig {
        queries_per_day: config.workload.queries_per_day,
        mode: config.workload.mode,
    };
    let cm = config.countermeasures.to_config()?;
    let (trace, knowledge, truth) =
        simulate(&split, &schedule, &workload, &cm, &config.client, seed)?;
    let aux = AuxEvidence::from_knowledge(&knowledge);
    let sim_seconds = t0.elapsed().as_secs_f64();

    let needs_p1 = config.run.attacks.iter().any(|a| !a.with_ground_truth_sp());
    let (inferred, p1_seconds) = if needs_p1 {
        let t1 = Instant::now();
        let rounds = analyze_rounds(&trace, &config.sp)?;
        let merged = infer_esp(&rounds, &config.sp, seed)?;
        let ari = sp_ari(&trace, &truth, &rounds, &merged)?;
        (Some((rounds, merged, ari)), t1.elapsed().as_secs_f64())
    } else {
        (None, 0.0)
    };

    Ok(RepetitionState {
        trace,
        truth,
        aux,
        inferred,
        sim_seconds,
        p1_seconds,
        seed,
    })
}

/// Query-weighted agreement of the inferred partition with the truth.
fn sp_ari(
    trace: &LeakageTrace,
    truth: &GroundTruth,
    rounds: &[RoundGroups],
    merged: &MergedGroupSet,
) -> Result<f64> {
    let truth_flat: Vec<u32> = truth.keywords.iter().flatten().copied().collect();
    let inferred_flat: Vec<u32> = merged
        .group_of_queries(rounds)
        .into_iter()
        .flatten()
        .collect();
    debug_assert_eq!(truth_flat.len(), trace.total_queries());
    Ok(adjusted_rand_index(
        &Partition::from_labels(truth_flat),
        &Partition::from_labels(inferred_flat),
    )?)
}

/// Runs one attack on a prepared repetition; returns (ari, accuracy).
pub fn run_attack(
    state: &RepetitionState,
    config: &ExperimentConfig,
    attack: AttackKind,
) -> Result<(f64, f64)> {
    let truth_flat: Vec<u32> = state.truth.keywords.iter().flatten().copied().collect();
    if attack.with_ground_truth_sp() {
        let (result, merged, rounds) = dsselab_core::recovery::with_sp_variant(
            &state.trace,
            &state.truth,
            &state.aux,
            attack.instantiation(),
            &config.recovery,
            state.seed,
        )?;
        let assigned = per_query_assignment(&merged, &rounds, &result);
        Ok((1.0, accuracy(&assigned, &truth_flat)?))
    } else {
        let (rounds, merged, ari) = state
            .inferred
            .as_ref()
            .expect("P1 ran for inferred-SP attacks");
        let ev = build_evidence(merged, rounds, &state.trace);
        let result = run_instantiation(
            attack.instantiation(),
            &ev,
            &state.aux,
            &config.recovery,
            state.seed,
        )?;
        let assigned = per_query_assignment(merged, rounds, &result);
        Ok((*ari, accuracy(&assigned, &truth_flat)?))
    }
}

/// Executes the full experiment, appending one row per
/// (repetition, attack) to `rows`. Errors in a single attack are
/// recorded as error rows; the first error is returned after all rows
/// are written.
pub fn run_experiment(config: &ExperimentConfig, mut on_row: impl FnMut(ResultRow)) -> Result<()> {
    let fingerprint = config.fingerprint();
    let mut first_error: Option<anyhow::Error> = None;
    for repetition in 0..config.run.repetitions {
        let state = match prepare_repetition(config, repetition) {
            Ok(s) => s,
            Err(e) => {
                for attack in &config.run.attacks {
                    on_row(ResultRow {
                        fingerprint: fingerprint.clone(),
                        repetition,
                        attack: attack.label().to_string(),
                        ari: f64::NAN,
                        accuracy: f64::NAN,
                        wall_time_s: 0.0,
                        peak_mem_bytes: peak_mem_bytes(),
                        status: format!("error: {e:#}"),
                    });
                }
                first_error.get_or_insert(e);
                continue;
            }
        };
        for &attack in &config.run.attacks {
            let t0 = Instant::now();
            let row = match run_attack(&state, config, attack) {
                Ok((ari, acc)) => ResultRow {
                    fingerprint: fingerprint.clone(),
                    repetition,
                    attack: attack.label().to_string(),
                    ari,
                    accuracy: acc,
                    wall_time_s: state.sim_seconds
                        + if attack.with_ground_truth_sp() {
                            0.0
                        } else {
                            state.p1_seconds
                        }
                        + t0.elapsed().as_secs_f64(),
                    peak_mem_bytes: peak_mem_bytes(),
                    status: "ok".to_string(),
                },
                Err(e) => {
                    let row = ResultRow {
                        fingerprint: fingerprint.clone(),
                        repetition,
                        attack: attack.label().to_string(),
                        ari: f64::NAN,
                        accuracy: f64::NAN,
                        wall_time_s: t0.elapsed().as_secs_f64(),
                        peak_mem_bytes: peak_mem_bytes(),
                        status: format!("error: {e:#}"),
                    };
                    first_error.get_or_insert(e);
                    row
                }
            };
            on_row(row);
        }
    }
    match first_error {
        None => Ok(()),
        Some(e) => Err(e),
    }
}

/// Dumps the inferred merged groups of repetition 0 as JSON
/// (group id -> query refs), for inspection.
pub fn dump_groups(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let state = prepare_repetition(config, 0)?;
    let Some((rounds, merged, _)) = &state.inferred else {
        anyhow::bail!("no inferred search pattern to dump (ground-truth-SP attacks only)");
    };
    let mut map = serde_json::Map::new();
    for (mid, parts) in merged.groups.iter().enumerate() {
        let refs: Vec<u64> = parts
            .iter()
            .flat_map(|&(r, gi)| {
                rounds[r as usize].groups[gi as usize]
                    .query_refs(&state.trace.rounds[r as usize])
            })
            .collect();
        map.insert(mid.to_string(), serde_json::json!(refs));
    }
    let mut f = std::fs::File::create(out)?;
    writeln!(f, "{}", serde_json::Value::Object(map))?;
    Ok(())
}

/// Writes rows incrementally as CSV.
pub struct CsvSink {
    writer: csv::Writer<std::fs::File>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record([
            "fingerprint",
            "repetition",
            "attack",
            "ari",
            "accuracy",
            "wall_time_s",
            "peak_mem_bytes",
            "status",
        ])?;
        Ok(CsvSink { writer })
    }

    pub fn write(&mut self, row: &ResultRow) -> Result<()> {
        self.writer.write_record([
            row.fingerprint.as_str(),
            &row.repetition.to_string(),
            &row.attack,
            &format!("{:.6}", row.ari),
            &format!("{:.6}", row.accuracy),
            &format!("{:.3}", row.wall_time_s),
            &row.peak_mem_bytes.to_string(),
            &row.status,
        ])?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Mean/stddev of a slice.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregated cell of a sweep: mean/stddev over repetitions per attack.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub cell: String,
    pub attack: String,
    pub repetitions: usize,
    pub ari_mean: f64,
    pub ari_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

pub fn aggregate(cell: &str, rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut attacks: Vec<String> = rows.iter().map(|r| r.attack.clone()).collect();
    attacks.sort();
    attacks.dedup();
    attacks
        .into_iter()
        .map(|attack| {
            let ok: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.attack == attack && r.status == "ok")
                .collect();
            let aris: Vec<f64> = ok.iter().map(|r| r.ari).collect();
            let accs: Vec<f64> = ok.iter().map(|r| r.accuracy).collect();
            let (ari_mean, ari_std) = if aris.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_std(&aris)
            };
            let (accuracy_mean, accuracy_std) = if accs.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_std(&accs)
            };
            AggregateRow {
                cell: cell.to_string(),
                attack,
                repetitions: ok.len(),
                ari_mean,
                ari_std,
                accuracy_mean,
                accuracy_std,
            }
        })
        .collect()
}

/// One sweep cell: dotted-path overrides applied to the base config.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub label: String,
    pub config: ExperimentConfig,
}

/// Expands a grid file (`[grid]` table of dotted keys to value arrays)
/// into the Cartesian product of override combinations.
pub fn expand_grid(base_toml: &str, grid_toml: &str) -> Result<Vec<SweepCell>> {
    let grid_doc: toml::Value = toml::from_str(grid_toml).context("parsing grid file")?;
    let grid = grid_doc
        .get("grid")
        .and_then(|g| g.as_table())
        .context("grid file needs a [grid] table")?;
    if grid.is_empty() {
        anyhow::bail!("empty parameter grid");
    }
    let axes: Vec<(&String, &Vec<toml::Value>)> = grid
        .iter()
        .map(|(k, v)| {
            v.as_array()
                .map(|arr| (k, arr))
                .with_context(|| format!("grid key {k} must map to an array"))
        })
        .collect::<Result<_>>()?;
    if axes.iter().any(|(_, vals)| vals.is_empty()) {
        anyhow::bail!("empty parameter grid axis");
    }

    let mut cells = Vec::new();
    let mut index = vec![0usize; axes.len()];
    loop {
        let mut doc: toml::Value = toml::from_str(base_toml)?;
        let mut label_parts = Vec::new();
        for (ai, (key, values)) in axes.iter().enumerate() {
            let v = &values[index[ai]];
            set_dotted(&mut doc, key, v.clone())?;
            label_parts.push(format!("{key}={}", toml_scalar(v)));
        }
        let text = toml::to_string(&doc)?;
        let config = ExperimentConfig::from_toml_str(&text)?;
        cells.push(SweepCell {
            label: label_parts.join(","),
            config,
        });
        // advance the odometer
        let mut ai = 0;
        loop {
            if ai == axes.len() {
                return Ok(cells);
            }
            index[ai] += 1;
            if index[ai] < axes[ai].1.len() {
                break;
            }
            index[ai] = 0;
            ai += 1;
        }
    }
}

fn toml_scalar(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn set_dotted(doc: &mut toml::Value, dotted: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    let mut cur = doc;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .as_table_mut()
            .with_context(|| format!("path {dotted}: not a table at {part}"))?
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    cur.as_table_mut()
        .with_context(|| format!("path {dotted}: parent is not a table"))?
        .insert(parts.last().unwrap().to_string(), value);
    Ok(())
}

/// Runs every cell of a sweep (cells in parallel up to the rayon pool
/// size), returning per-cell raw rows in deterministic order.
pub fn sweep(cells: &[SweepCell]) -> Vec<(String, Vec<ResultRow>, Option<String>)> {
    use rayon::prelude::*;
    cells
        .par_iter()
        .map(|cell| {
            let mut rows = Vec::new();
            let err = run_experiment(&cell.config, |r| rows.push(r))
                .err()
                .map(|e| format!("{e:#}"));
            (cell.label.clone(), rows, err)
        })
        .collect()
}
