use std::fmt::Write as _;
use std::path::Path;

use anyhow::bail;
use log::{info, warn};
use serde::Serialize;

use droopcert::certificate::{certify, CertificateReport, Condition, Location};
use droopcert::models::{GeneralizedDroop, NodeModel};
use droopcert::oracle::{
    alpha_sweep, cross_coupling_scan, linspace_step, oracle_verdict, simulate, Perturbation, SimulationOptions,
    Stability, DEFAULT_TOL,
};

use crate::config::{Experiment, InputError, LoadedConfig};
use crate::manifest::{write_output, OutputChecksum};

pub struct Outcome {
    pub exit_code: i32,
    pub outputs: Vec<OutputChecksum>,
}

#[derive(Serialize)]
struct NodeRow {
    id: usize,
    v: f64,
    phi: f64,
    p: f64,
    q: f64,
    p_physical: f64,
    q_physical: f64,
    alpha_theory: f64,
}

#[derive(Serialize)]
struct OperatingPointFile {
    n_nodes: usize,
    rx_ratio: f64,
    iterations: Option<usize>,
    residual: Option<f64>,
    nodes: Vec<NodeRow>,
}

pub fn powerflow(exp: &Experiment, out: &Path) -> anyhow::Result<Outcome> {
    let grid = &exp.case.grid;
    let nodes = (0..grid.n_nodes())
        .map(|i| {
            let phys = exp.op.physical_node(grid, i);
            NodeRow {
                id: i + 1,
                v: exp.op.v[i],
                phi: exp.op.phi[i],
                p: exp.op.p[i],
                q: exp.op.q[i],
                p_physical: phys.p,
                q_physical: phys.q,
                alpha_theory: exp.alpha_theory[i],
            }
        })
        .collect();
    let file = OperatingPointFile {
        n_nodes: grid.n_nodes(),
        rx_ratio: grid.rx_ratio(),
        iterations: exp.power_flow.as_ref().map(|r| r.iterations),
        residual: exp.power_flow.as_ref().map(|r| r.residual),
        nodes,
    };
    if let Some(r) = &exp.power_flow {
        info!("power flow converged in {} iterations, residual {:e}", r.iterations, r.residual);
    }
    let text = serde_json::to_string_pretty(&file)? + "\n";
    Ok(Outcome {
        exit_code: 0,
        outputs: vec![write_output(out, "operating_point.json", text.as_bytes())?],
    })
}

#[derive(Serialize)]
struct FailureRow {
    location: String,
    condition: Condition,
}

#[derive(Serialize)]
struct CertifyFile<'a> {
    certified: bool,
    /// Case ids (1-based); indices inside `report` are 0-based.
    failures: Vec<FailureRow>,
    report: &'a CertificateReport,
}

fn describe(loc: &Location) -> String {
    match *loc {
        Location::Node { node } => format!("node {}", node + 1),
        Location::Edge { from, to } => format!("edge {}-{}", from + 1, to + 1),
    }
}

pub fn certify_cmd(cfg: &LoadedConfig, exp: &Experiment, out: &Path) -> anyhow::Result<Outcome> {
    let report = certify(&exp.case.grid, &exp.op, &exp.models, &cfg.config.certify)?;
    let failures: Vec<FailureRow> = report
        .failure_attribution
        .iter()
        .map(|f| FailureRow {
            location: describe(&f.location),
            condition: f.condition,
        })
        .collect();
    for f in &failures {
        info!("{} fails {:?}", f.location, f.condition);
    }
    for note in &report.notes {
        info!("{note}");
    }
    let file = CertifyFile {
        certified: report.is_certified(),
        failures,
        report: &report,
    };
    let text = serde_json::to_string_pretty(&file)? + "\n";
    Ok(Outcome {
        exit_code: if report.is_certified() { 0 } else { 1 },
        outputs: vec![write_output(out, "certificate.json", text.as_bytes())?],
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn alpha_sweep_cmd(cfg: &LoadedConfig, exp: &Experiment, out: &Path) -> anyhow::Result<Outcome> {
    let s = cfg.config.alpha_sweep;
    if exp.models.iter().any(|m| matches!(m, NodeModel::ThirdOrderMachine(_))) {
        bail!(InputError(anyhow::anyhow!(
            "alpha sweeps need a settable droop ratio; machine models derive it from their reactance"
        )));
    }
    let rows = alpha_sweep(&exp.case.grid, &exp.op, &exp.models, s.half_width, s.xtol)?;
    let mut csv = String::from("node,alpha_theory,alpha_crit,ratio,flag\n");
    for r in &rows {
        if let Some(flag) = &r.flag {
            warn!("node {}: {flag}", r.node + 1);
        }
        writeln!(
            csv,
            "{},{},{},{},{}",
            r.node + 1,
            r.alpha_theory,
            opt(r.alpha_crit),
            opt(r.ratio),
            r.flag.as_deref().unwrap_or("")
        )?;
    }
    Ok(Outcome {
        exit_code: 0,
        outputs: vec![write_output(out, "alpha_sweep.csv", csv.as_bytes())?],
    })
}

pub fn simulate_cmd(cfg: &LoadedConfig, exp: &Experiment, out: &Path) -> anyhow::Result<Outcome> {
    let sc = &cfg.config.simulate;
    let grid = &exp.case.grid;
    let n = grid.n_nodes();
    let node = match sc.perturbation.node {
        Some(id) if id == 0 || id > n => bail!(InputError(anyhow::anyhow!("perturbation node {id} out of range"))),
        Some(id) => id - 1,
        None => exp
            .models
            .iter()
            .enumerate()
            .position(|(i, m)| m.alpha(&exp.op.physical_node(grid, i)) < exp.alpha_theory[i])
            .unwrap_or(0),
    };
    let mut pert = Perturbation::voltage_dip(n, node, sc.perturbation.dip, exp.op.v[node]);
    for (i, d) in sc.perturbation.dv.iter().enumerate().take(n) {
        pert.dv[i] += d;
    }
    pert.dphi = sc.perturbation.dphi.clone();
    info!("perturbing node {} by {} of its magnitude", node + 1, sc.perturbation.dip);
    let traj = simulate(
        grid,
        &exp.op,
        &exp.models,
        &pert,
        SimulationOptions {
            t_end: sc.t_end,
            dt: sc.dt,
            record_every: sc.record_every,
        },
    )?;

    let mut csv = String::from("t,collapsed");
    for prefix in ["V", "phi", "p", "q"] {
        for i in 1..=n {
            write!(csv, ",{prefix}{i}")?;
        }
    }
    for (i, m) in exp.models.iter().enumerate() {
        for k in 1..=m.n_var() {
            write!(csv, ",x{}_{k}", i + 1)?;
        }
    }
    csv.push('\n');
    let last = traj.times.len().saturating_sub(1);
    for (k, t) in traj.times.iter().enumerate() {
        let flag = u8::from(traj.collapsed && k == last);
        write!(csv, "{t},{flag}")?;
        for row in [&traj.v[k], &traj.phi[k], &traj.p[k], &traj.q[k], &traj.x[k]] {
            for x in row.iter() {
                write!(csv, ",{x}")?;
            }
        }
        csv.push('\n');
    }
    if let Some(t) = traj.collapse_time {
        warn!("voltage collapse at t = {t}");
    }
    Ok(Outcome {
        exit_code: if traj.collapsed { 1 } else { 0 },
        outputs: vec![write_output(out, "trajectory.csv", csv.as_bytes())?],
    })
}

fn verdict_name(s: Stability) -> &'static str {
    match s {
        Stability::Stable => "stable",
        Stability::Unstable => "unstable",
        Stability::Marginal => "marginal",
    }
}

pub fn cross_scan_cmd(cfg: &LoadedConfig, exp: &Experiment, out: &Path) -> anyhow::Result<Outcome> {
    let Some(sc) = cfg.config.cross_scan else {
        bail!(InputError(anyhow::anyhow!("config has no [cross_scan] section")));
    };
    let base: GeneralizedDroop = match exp.models.first() {
        Some(NodeModel::GeneralizedDroop(g)) if exp.models.iter().all(|m| matches!(m, NodeModel::GeneralizedDroop(_))) => *g,
        _ => bail!(InputError(anyhow::anyhow!("cross-coupling scans need generalized_droop at every node"))),
    };
    let cvp = linspace_step(sc.c_vp.min, sc.c_vp.max, sc.step)?;
    let cwq = linspace_step(sc.c_wq.min, sc.c_wq.max, sc.step)?;
    let points = cross_coupling_scan(&exp.case.grid, &exp.op, &base, &cvp, &cwq)?;
    let mut csv = String::from("c_vp,c_wq,oracle_verdict,certificate_verdict,max_re\n");
    let mut breaches = 0;
    for p in &points {
        if p.certified && p.oracle != Stability::Stable {
            breaches += 1;
            warn!("certified but not stable at c_vp = {}, c_wq = {}", p.c_vp, p.c_wq);
        }
        writeln!(
            csv,
            "{},{},{},{},{}",
            p.c_vp,
            p.c_wq,
            verdict_name(p.oracle),
            if p.certified { "certified" } else { "not_certified" },
            p.max_re
        )?;
    }
    info!(
        "{} points, {} certified, {} stable",
        points.len(),
        points.iter().filter(|p| p.certified).count(),
        points.iter().filter(|p| p.oracle == Stability::Stable).count()
    );
    Ok(Outcome {
        exit_code: if breaches == 0 { 0 } else { 1 },
        outputs: vec![write_output(out, "cross_scan.csv", csv.as_bytes())?],
    })
}

/// Oracle verdict for the configured experiment, used for logging.
pub fn log_oracle(exp: &Experiment) {
    match oracle_verdict(&exp.case.grid, &exp.op, &exp.models, DEFAULT_TOL) {
        Ok(v) => info!(
            "oracle: {} (max Re {:e})",
            verdict_name(v.verdict),
            v.max_re_excluding_zero_mode
        ),
        Err(e) => warn!("oracle failed: {e}"),
    }
}
