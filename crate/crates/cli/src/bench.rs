//! Algorithm × scenario × seed grids.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use smica::data::format_number;

use crate::config::{AlgoTag, Overrides, RunConfig};
use crate::error::{CliResult, EXIT_OK};
use crate::report::{RunStatus, SeparationReport};
use crate::runner::execute;
use crate::svg::{log_log_chart, Series};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub algos: Vec<AlgoTag>,
    pub scenarios: Vec<u8>,
    pub seeds: Vec<u64>,
    /// Settings shared by every cell (samples, epochs, dynamics, ...).
    pub shared: Overrides,
}

pub struct Cell {
    pub algo: AlgoTag,
    pub scenario: u8,
    pub seed: u64,
    pub report: SeparationReport,
}

impl Cell {
    pub fn curve_file(&self) -> String {
        format!("curves/{}_scenario{}_seed{}.csv", self.algo, self.scenario, self.seed)
    }
}

/// Final-error statistics over the successful cells of one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub cells: usize,
    pub ok: usize,
    pub separated: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; zero for a single cell.
    pub std: Option<f64>,
}

pub fn group_stats(reports: &[&SeparationReport]) -> GroupStats {
    let values: Vec<f64> = reports.iter().filter_map(|r| r.final_mse).collect();
    let n = values.len();
    let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
    let std = mean.map(|m| {
        if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    });
    GroupStats {
        cells: reports.len(),
        ok: reports.iter().filter(|r| r.status == RunStatus::Ok).count(),
        separated: reports.iter().filter(|r| r.separated == Some(true)).count(),
        mean,
        std,
    }
}

/// Resolves every cell's config up front, then runs the cells in parallel.
pub fn run_grid(cfg: &BenchConfig) -> CliResult<Vec<Cell>> {
    let mut plan = Vec::new();
    for &algo in &cfg.algos {
        for &scenario in &cfg.scenarios {
            for &seed in &cfg.seeds {
                let ov = Overrides {
                    algo: Some(algo),
                    scenario: Some(scenario),
                    seed: Some(seed),
                    ..Overrides::default()
                };
                plan.push((algo, scenario, seed, RunConfig::resolve(ov.over(cfg.shared.clone()))?));
            }
        }
    }
    Ok(plan
        .into_par_iter()
        .map(|(algo, scenario, seed, rc)| Cell { algo, scenario, seed, report: execute(&rc).report })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(format_number).unwrap_or_default()
}

fn groups(cells: &[Cell]) -> BTreeMap<(u8, usize), (AlgoTag, Vec<&Cell>)> {
    // Keyed by scenario then first appearance so the output order is stable.
    let mut order: Vec<AlgoTag> = Vec::new();
    let mut map: BTreeMap<(u8, usize), (AlgoTag, Vec<&Cell>)> = BTreeMap::new();
    for c in cells {
        let k = order.iter().position(|&a| a == c.algo).unwrap_or_else(|| {
            order.push(c.algo);
            order.len() - 1
        });
        map.entry((c.scenario, k)).or_insert_with(|| (c.algo, Vec::new())).1.push(c);
    }
    map
}

/// Mean and spread of the per-seed curves, truncated to the shortest.
fn mean_curve(cells: &[&Cell]) -> Vec<(f64, f64, f64)> {
    let curves: Vec<_> = cells.iter().filter_map(|c| c.report.curve.as_ref()).collect();
    let Some(len) = curves.iter().map(|c| c.values.len()).min() else {
        return Vec::new();
    };
    (0..len)
        .map(|i| {
            let vals: Vec<f64> = curves.iter().map(|c| c.values[i]).collect();
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let sd = if vals.len() < 2 { 0.0 } else { (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
            (curves[0].times[i] as f64, m, sd)
        })
        .collect()
}

/// Writes per-cell curves, `bench.csv`, `summary.csv` and one chart per scenario.
pub fn write_bench(out: &Path, cells: &[Cell]) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(out.join("curves"))?;
    for c in cells {
        c.report.write_curve(&out.join(c.curve_file()))?;
    }
    let groups = groups(cells);
    let mut stats = BTreeMap::new();
    for (key, (_, members)) in &groups {
        let reports: Vec<&SeparationReport> = members.iter().map(|c| &c.report).collect();
        stats.insert(*key, group_stats(&reports));
    }

    let mut bench = String::from("algorithm,scenario,seed,status,final_mse,separated,mean_final_mse,std_final_mse,curve_file\n");
    let mut summary = String::from("algorithm,scenario,cells,ok_cells,separated_cells,mean_final_mse,std_final_mse\n");
    for (key, (algo, members)) in &groups {
        let g = stats[key];
        for c in members {
            let r = &c.report;
            let status = match r.status {
                RunStatus::Ok => "ok",
                RunStatus::Failed => "failed",
            };
            let separated = r.separated.map(|b| b.to_string()).unwrap_or_default();
            let _ = writeln!(
                bench,
                "{algo},{},{},{status},{},{separated},{},{},{}",
                c.scenario,
                c.seed,
                opt(r.final_mse),
                opt(g.mean),
                opt(g.std),
                c.curve_file()
            );
        }
        let _ = writeln!(summary, "{algo},{},{},{},{},{},{}", key.0, g.cells, g.ok, g.separated, opt(g.mean), opt(g.std));
    }
    std::fs::write(out.join("bench.csv"), bench)?;
    std::fs::write(out.join("summary.csv"), summary)?;

    let mut charts = Vec::new();
    let scenarios: Vec<u8> = groups.keys().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    for sc in scenarios {
        let series: Vec<Series> = groups
            .iter()
            .filter(|(k, _)| k.0 == sc)
            .map(|(_, (algo, members))| Series { name: algo.to_string(), points: mean_curve(members) })
            .filter(|s| !s.points.is_empty())
            .collect();
        let path = out.join(format!("scenario{sc}.svg"));
        std::fs::write(&path, log_log_chart(&format!("scenario {sc}"), "samples", "prefix MSE", &series))?;
        charts.push(path);
    }
    Ok(charts)
}

/// Highest failure code over the cells, or success.
pub fn exit_code(cells: &[Cell]) -> i32 {
    cells.iter().map(|c| c.report.exit_code()).max().unwrap_or(EXIT_OK)
}
