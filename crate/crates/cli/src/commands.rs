use std::path::Path;

use nlmpm::excitation::{depleting_report, depleting_sequence};
use nlmpm::forward::{solve_forward, LinearSolver, SolverOptions};
use nlmpm::geometry::CellRegion;
use nlmpm::imaging::{metrics, noise_sweep, MeasurementSet, NoiseLevel, ReconMetrics, Reconstruction};
use nlmpm::materials::MaterialAssignment;
use serde::Serialize;

use crate::config::{ExperimentConfig, Setup};
use crate::output::{write_pgm, write_results, Csv};
use crate::Failure;

fn num(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Serialize)]
struct ForwardRow {
    label: String,
    energy: f64,
    power_avg: f64,
    power_classical: f64,
    power_empty: f64,
    iterations: usize,
    final_residual: Option<f64>,
}

pub fn forward(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<(), Failure> {
    let opts = SolverOptions::default();
    let empty = MaterialAssignment::background_only(s.mesh.nx, s.mesh.ny, s.background.clone())?;
    let bg = LinearSolver::new(&s.mesh, &empty)?;
    let coords = &s.mesh.vertices;
    let mut table = Csv::new(&["label", "energy", "power_avg", "power_classical", "power_empty", "iterations"]);
    let mut rows = Vec::new();
    for m in &s.family.members {
        let sol = solve_forward(&s.mesh, &s.truth, &m.values, &opts)?;
        let p_empty = bg.power(&m.values)?;
        let mut field = Csv::new(&["vertex", "x", "y", "u"]);
        for (v, u) in sol.u.iter().enumerate() {
            field.row(&[v.to_string(), num(coords[v][0]), num(coords[v][1]), num(*u)]);
        }
        field.write(&out.join(format!("field_{}.csv", m.label)))?;
        table.row(&[
            m.label.clone(),
            num(sol.energy),
            num(sol.power_avg),
            num(sol.power_classical),
            num(p_empty),
            sol.stats.iterations.to_string(),
        ]);
        rows.push(ForwardRow {
            label: m.label.clone(),
            energy: sol.energy,
            power_avg: sol.power_avg,
            power_classical: sol.power_classical,
            power_empty: p_empty,
            iterations: sol.stats.iterations,
            final_residual: sol.stats.residual_history.last().copied(),
        });
    }
    table.write(&out.join("forward.csv"))?;
    write_results(&out.join("results.json"), "forward", cfg, &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct MaskSummary {
    cells: Vec<usize>,
    metrics: ReconMetrics,
    margins: Vec<f64>,
}

fn summary(r: &Reconstruction, a: &CellRegion) -> Result<MaskSummary, Failure> {
    Ok(MaskSummary { cells: r.mask.pixels().collect(), metrics: metrics(&r.mask, a)?, margins: r.margins.clone() })
}

#[derive(Serialize)]
struct ReconstructResults {
    labels: Vec<String>,
    exact: Vec<f64>,
    noisy: Option<Vec<f64>>,
    empty: Vec<f64>,
    range: f64,
    eta: NoiseLevel,
    eta_star: NoiseLevel,
    dag: MaskSummary,
    reg: Option<MaskSummary>,
    det: Option<MaskSummary>,
    nested: Option<bool>,
}

/// Exact measurements, with the configured range and noise applied.
pub fn measure(cfg: &ExperimentConfig, s: &Setup) -> Result<(MeasurementSet, NoiseLevel, NoiseLevel), Failure> {
    let mut data = MeasurementSet::simulate(&s.mesh, &s.truth, &s.family, s.tests.clone(), &SolverOptions::default())?;
    let (mut eta, mut eta_star) = (NoiseLevel::ZERO, NoiseLevel::ZERO);
    if let Some(n) = &cfg.noise {
        if let Some(l) = n.range {
            data = data.with_range(l)?;
        }
        eta = NoiseLevel::new(n.eta1, n.eta2)?;
        eta_star = cfg.regularization.map(NoiseLevel::from).unwrap_or(eta);
        data = data.with_noise(data.noise_model(eta, n.seed)?);
    }
    Ok((data, eta, eta_star))
}

pub fn reconstruct(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<(), Failure> {
    let (data, eta, eta_star) = measure(cfg, s)?;
    let all = data.reconstruct_all(eta, eta_star)?;
    write_pgm(out, "truth.pgm", &s.anomaly)?;
    write_pgm(out, "dag.pgm", &all.dag.mask)?;
    let noisy = data.noisy.is_some();
    if let Some(reg) = &all.reg {
        write_pgm(out, "reg.pgm", &reg.mask)?;
        write_pgm(out, "det.pgm", &all.det.mask)?;
    }
    let mut margins = Csv::new(&["test", "i0", "j0", "dag", "reg", "det"]);
    for (t, region) in data.tests.iter().enumerate() {
        let (i0, j0, _, _) = region.bounding_box().expect("test blocks are non-empty");
        let reg = all.reg.as_ref().map(|r| num(r.margins[t])).unwrap_or_default();
        let det = if noisy { num(all.det.margins[t]) } else { String::new() };
        margins.row(&[t.to_string(), i0.to_string(), j0.to_string(), num(all.dag.margins[t]), reg, det]);
    }
    margins.write(&out.join("margins.csv"))?;
    let results = ReconstructResults {
        labels: data.labels.clone(),
        exact: data.exact.clone(),
        noisy: data.noisy.clone(),
        empty: data.empty.clone(),
        range: data.range,
        eta,
        eta_star,
        dag: summary(&all.dag, &s.anomaly)?,
        reg: all.reg.as_ref().map(|r| summary(r, &s.anomaly)).transpose()?,
        det: if noisy { Some(summary(&all.det, &s.anomaly)?) } else { None },
        nested: if noisy { Some(all.is_nested()?) } else { None },
    };
    write_results(&out.join("results.json"), "reconstruct", cfg, &results)?;
    Ok(())
}

#[derive(Serialize)]
struct SweepResults {
    etas: Vec<NoiseLevel>,
    cells: Vec<usize>,
    nested_in_previous: Vec<bool>,
    equals_dag: Vec<bool>,
    all_nested: bool,
    dag_cells: usize,
    converged_from: Option<usize>,
}

pub fn sweep(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<(), Failure> {
    let spec = cfg.sweep.as_ref().ok_or_else(|| Failure::Config(vec!["sweep: missing [sweep] section".into()]))?;
    let etas = spec.levels();
    if etas.is_empty() {
        return Err(Failure::Config(vec!["sweep: empty noise sequence".into()]));
    }
    let (data, _, _) = measure(cfg, s)?;
    let study = noise_sweep(&data, &etas).map_err(|e| Failure::Config(vec![format!("sweep: {e}")]))?;
    let mut csv = Csv::new(&["k", "eta1", "eta2", "cells", "nested_in_previous", "equals_dag"]);
    for st in &study.steps {
        csv.row(&[
            st.k.to_string(),
            num(st.eta.eta1),
            num(st.eta.eta2),
            st.cells.to_string(),
            st.nested_in_previous.to_string(),
            st.equals_dag.to_string(),
        ]);
        write_pgm(out, &format!("det_{}.pgm", st.k), &st.mask)?;
    }
    csv.write(&out.join("sweep.csv"))?;
    let results = SweepResults {
        etas: etas.clone(),
        cells: study.steps.iter().map(|x| x.cells).collect(),
        nested_in_previous: study.steps.iter().map(|x| x.nested_in_previous).collect(),
        equals_dag: study.steps.iter().map(|x| x.equals_dag).collect(),
        all_nested: study.all_nested,
        dag_cells: study.dag.count(),
        converged_from: study.converged_from,
    };
    write_results(&out.join("results.json"), "sweep", cfg, &results)?;
    Ok(())
}

pub fn depleting_demo(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<(), Failure> {
    let spec = cfg.depleting.as_ref().ok_or_else(|| Failure::Config(vec!["depleting: missing [depleting] section".into()]))?;
    let mut errors = Vec::new();
    let bg = s.background[0];
    if s.background.iter().any(|&v| v != bg) {
        errors.push("depleting: needs a constant background".to_string());
    }
    let [i0, j0, w, h] = spec.target;
    let target = CellRegion::rect(s.mesh.nx, s.mesh.ny, i0, j0, w, h).map_err(|e| errors.push(format!("depleting target: {e}")));
    let dep = match &target {
        Ok(t) => depleting_sequence(&s.mesh, bg, t, spec.n_max).map_err(|e| errors.push(format!("depleting: {e}"))).ok(),
        Err(_) => None,
    };
    let (Ok(target), Some(dep), true) = (target, dep, errors.is_empty()) else {
        return Err(Failure::Config(errors));
    };
    let rows = depleting_report(&s.mesh, bg, &target, spec.target_value, &dep)?;
    let mut csv = Csv::new(&["n", "delta_n", "p_empty", "ratio", "ratio_bound", "gap"]);
    for (r, d) in rows.iter().zip(&dep.params.deltas) {
        csv.row(&[r.n.to_string(), num(*d), num(r.p_empty), num(r.ratio), num(r.ratio_bound), num(r.gap)]);
    }
    csv.write(&out.join("depleting.csv"))?;
    #[derive(Serialize)]
    struct Doc<'a> {
        params: &'a nlmpm::excitation::DepletingParams,
        rows: &'a [nlmpm::excitation::DepletingRow],
    }
    write_results(&out.join("results.json"), "depleting-demo", cfg, &Doc { params: &dep.params, rows: &rows })?;
    Ok(())
}
