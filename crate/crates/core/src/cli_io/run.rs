use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::output::{fmt_f64, write_atomic, write_csv};
use super::{Band, ExperimentPlan, Kind};
use crate::cell_problem;
use crate::convergence_lab::{run_ladder, LadderConfig, LadderResult, Metric, MetricSet};
use crate::gibbs::{self, assemble_limit_sde};
use crate::integrator::{simulate_coupled, CoupledConfig, WienerStream};
use crate::linear_diag::{self, LinearModel};
use crate::model_spec::{validate, ModelSpec, ValidationGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    /// Absent when the quantity could not be computed.
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<Band>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub kind: Kind,
    /// The plan as it was run; feeding it back reproduces the outputs.
    pub plan: Value,
    pub outputs: Value,
    pub verdicts: Vec<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub wall_time: f64,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    /// 0 pass, 2 a verdict failed, 1 error.
    pub fn exit_code(&self) -> i32 {
        if self.record.error.is_some() {
            1
        } else if self.record.verdicts.iter().any(|v| !v.passed) {
            2
        } else {
            0
        }
    }
}

struct Emitter {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Emitter {
    fn csv(&mut self, name: &str, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<(), String> {
        let path = self.dir.join(name);
        write_csv(&path, &header, &rows).map_err(|e| format!("writing {}: {e}", path.display()))?;
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<(), String> {
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(v).map_err(|e| e.to_string())?;
        write_atomic(&path, |w| {
            w.write_all(text.as_bytes())?;
            w.write_all(b"\n")
        })
        .map_err(|e| format!("writing {}: {e}", path.display()))?;
        self.files.push(path);
        Ok(())
    }
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn verdict(name: &str, value: Option<f64>, band: Band) -> Verdict {
    let passed = value.is_some_and(|v| band.contains(v));
    Verdict { name: name.into(), value, band: Some(band), passed }
}

/// Runs the plan and writes its files under the plan's output directory.
pub fn run(plan: &ExperimentPlan) -> RunOutcome {
    let start = Instant::now();
    let mut em = Emitter { dir: plan.out_dir(), files: Vec::new() };
    let mut verdicts = Vec::new();
    let result = dispatch(plan, &mut em, &mut verdicts);
    let (outputs, error) = match result {
        Ok(v) => (v, None),
        Err(e) => (Value::Null, Some(e)),
    };
    let mut record = RunRecord {
        version: env!("CARGO_PKG_VERSION").into(),
        kind: plan.experiment.kind,
        plan: plan.to_json(),
        outputs,
        verdicts,
        error,
    };
    let wall_time = start.elapsed().as_secs_f64();
    let mut io_err = em.json("record.json", &record).err();
    if io_err.is_none() {
        io_err = em.json("timing.json", &json!({"wall_time_s": wall_time})).err();
    }
    if let Some(e) = io_err {
        record.error.get_or_insert(e);
    }
    RunOutcome { record, wall_time, files: em.files }
}

fn dispatch(plan: &ExperimentPlan, em: &mut Emitter, verdicts: &mut Vec<Verdict>) -> Result<Value, String> {
    let e = &plan.experiment;
    let spec = || plan.spec().ok_or_else(|| "kind needs a model".to_string());
    match e.kind {
        Kind::Validate => {
            let s = spec()?;
            let grid = e.grid.clone().unwrap_or_else(|| ValidationGrid::cube(3.0, 7, e.t_end));
            let report = validate(s, &grid).map_err(|x| x.to_string())?;
            verdicts.push(Verdict { name: "validate".into(), value: None, band: None, passed: report.passed() });
            serde_json::to_value(&report).map_err(|x| x.to_string())
        }
        Kind::Simulate => simulate(plan, spec()?, em),
        Kind::LadderStrong | Kind::LadderMomentum | Kind::LadderIntegral => ladder(plan, spec()?, em, verdicts),
        Kind::Drift => {
            let s = spec()?;
            let limit = assemble_limit_sde(s, &e.quadrature);
            let mut out = Vec::new();
            for q in eval_points(plan, s.dim()) {
                let mut ws = limit.workspace();
                limit.eval_into(e.t, &q, &mut ws).map_err(|x| x.to_string())?;
                out.push(json!({
                    "t": e.t,
                    "q": q,
                    "drift": ws.drift.as_slice(),
                    "transport": ws.pieces.transport.as_slice(),
                    "S": ws.pieces.s.as_slice(),
                    "G_tilde": ws.pieces.g_tilde.as_slice(),
                    "diffusion": rows_of(&ws.diffusion),
                }));
            }
            Ok(json!({ "points": out }))
        }
        Kind::Cell => {
            let s = spec()?;
            let grid = e.zeta_grid.unwrap_or(super::ZetaGrid { lo: 0.0, hi: 10.0, step: 0.01 }).points();
            let mut out = Vec::new();
            for (idx, q) in eval_points(plan, s.dim()).into_iter().enumerate() {
                let sol = cell_problem::solve_chi(s, e.t, &q, &grid, &e.quadrature).map_err(|x| x.to_string())?;
                let rep = cell_problem::residual_check(s, e.t, &q, &sol).map_err(|x| x.to_string())?;
                let n = sol.meta.n;
                let header = std::iter::once("zeta".to_string())
                    .chain(numbered("chi", n))
                    .chain(numbered("chi_prime", n))
                    .chain(std::iter::once("residual".to_string()))
                    .collect();
                let rows = sol
                    .zeta_grid
                    .iter()
                    .enumerate()
                    .map(|(j, z)| {
                        let mut r = vec![fmt_f64(*z)];
                        r.extend(sol.chi.iter().map(|c| fmt_f64(c[j])));
                        r.extend(sol.chi_prime.iter().map(|c| fmt_f64(c[j])));
                        r.push(fmt_f64(rep.residual.get(j).copied().unwrap_or(f64::NAN)));
                        r
                    })
                    .collect();
                em.csv(&format!("cell_{idx}.csv"), header, rows)?;
                let growth = cell_problem::growth_probe(&sol);
                out.push(json!({
                    "meta": sol.meta,
                    "max_residual": rep.max_residual,
                    "at_zeta": rep.at_zeta,
                    "fd_error": rep.fd_error,
                    "inconclusive": rep.inconclusive,
                    "growth": growth,
                }));
            }
            Ok(json!({ "points": out }))
        }
        Kind::Lyapunov => {
            let m = linear_model(plan)?;
            let l = linear_diag::solve_lyapunov(&m).map_err(|x| x.to_string())?;
            let n = linear_diag::oscillatory_part(&m, &l.m).map_err(|x| x.to_string())?;
            Ok(json!({
                "M": rows_of(&l.m),
                "residual": l.residual,
                "N": rows_of(&n),
                "db_residual": linear_diag::detailed_balance_residual(&m),
            }))
        }
        Kind::Dbcheck => {
            if e.linear.is_some() {
                let m = linear_model(plan)?;
                let l = linear_diag::solve_lyapunov(&m).map_err(|x| x.to_string())?;
                let n = linear_diag::oscillatory_part(&m, &l.m).map_err(|x| x.to_string())?;
                let r = linear_diag::detailed_balance_residual(&m);
                return Ok(json!({
                    "db_residual": r,
                    "N": rows_of(&n),
                    "N_norm": crate::linalg::frob(&n),
                }));
            }
            let s = spec()?;
            let dim = s.dim();
            let zs = e.z_samples.clone().unwrap_or_else(|| default_z_samples(dim));
            let mut out = Vec::new();
            for q in eval_points(plan, dim) {
                let r = gibbs::conditional_db_residual(s, e.t, &q, &zs).map_err(|x| x.to_string())?;
                let fd =
                    s.eval_coeffs(e.t, &q, crate::model_spec::Order::First).map_err(|x| x.to_string())?.fd_residual();
                out.push(json!({"t": e.t, "q": q, "db_residual": r, "fd_residual": fd}));
            }
            Ok(json!({ "points": out }))
        }
    }
}

fn default_z_samples(n: usize) -> Vec<Vec<f64>> {
    let mut v = Vec::new();
    for i in 0..n {
        let mut z = vec![0.0; n];
        z[i] = 1.0;
        v.push(z);
    }
    v.push((0..n).map(|i| 0.5 - 0.3 * i as f64).collect());
    v.push((0..n).map(|i| -1.5 + 0.7 * i as f64).collect());
    v
}

fn eval_points(plan: &ExperimentPlan, n: usize) -> Vec<Vec<f64>> {
    plan.experiment.q.clone().unwrap_or_else(|| vec![vec![0.0; n]])
}

fn linear_model(plan: &ExperimentPlan) -> Result<LinearModel, String> {
    let l = plan.experiment.linear.as_ref().ok_or("missing /experiment/linear")?;
    let n = l.gamma.len();
    let flat = |m: &Vec<Vec<f64>>| DMatrix::from_row_iterator(n, n, m.iter().flatten().copied());
    LinearModel::new(flat(&l.gamma), flat(&l.sigma)).map_err(|x| x.to_string())
}

fn ladder_config(plan: &ExperimentPlan) -> LadderConfig {
    let e = &plan.experiment;
    LadderConfig {
        epsilons: e.epsilons.clone(),
        paths: e.paths,
        p: e.p,
        t_end: e.t_end,
        dt_factor: e.dt_factor,
        coarsen: e.coarsen,
        scheme: e.scheme,
        q0: e.q0.clone(),
        z0: e.z0.clone(),
        seed: e.seed,
        observation_points: e.observation_points,
        coupling: e.coupling,
        quadrature: e.quadrature,
    }
}

/// Header and rows of `ladder.csv`.
pub fn ladder_table(results: &[LadderResult]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["metric", "epsilon", "estimate", "stderr", "paths"].map(String::from).to_vec();
    let rows = results
        .iter()
        .flat_map(|r| {
            r.points.iter().map(|p| {
                vec![
                    r.metric.tag().to_string(),
                    fmt_f64(p.eps),
                    fmt_f64(p.estimate),
                    fmt_f64(p.stderr),
                    p.paths.to_string(),
                ]
            })
        })
        .collect();
    (header, rows)
}

fn ladder(
    plan: &ExperimentPlan,
    spec: &ModelSpec,
    em: &mut Emitter,
    verdicts: &mut Vec<Verdict>,
) -> Result<Value, String> {
    let e = &plan.experiment;
    let metrics = match e.kind {
        Kind::LadderMomentum => MetricSet { momentum: true, strong: false, integral: false },
        Kind::LadderStrong => MetricSet { momentum: false, strong: true, integral: false },
        _ => MetricSet { momentum: false, strong: false, integral: true },
    };
    let results = run_ladder(spec, &ladder_config(plan), metrics, plan.threads()).map_err(|x| x.to_string())?;
    let b = &e.bands;
    for r in &results {
        let band = match r.metric {
            Metric::MomentumSupOfMean => b.momentum,
            Metric::MomentumMeanOfSup => b.momentum_sup,
            Metric::StrongError => b.strong,
            Metric::IntegralHomog => b.integral,
        };
        verdicts.push(verdict(r.metric.tag(), r.slope(), band));
    }
    let (header, rows) = ladder_table(&results);
    em.csv("ladder.csv", header, rows)?;
    serde_json::to_value::<&[LadderResult]>(&results).map_err(|x| x.to_string())
}

fn simulate(plan: &ExperimentPlan, spec: &ModelSpec, em: &mut Emitter) -> Result<Value, String> {
    let e = &plan.experiment;
    let n = spec.dim();
    let limit = assemble_limit_sde(spec, &e.quadrature);
    let stream = WienerStream::new(e.seed, spec.wiener_dim()).for_path(0);
    let mut out = Vec::new();
    for (idx, &eps) in e.epsilons.iter().enumerate() {
        let cfg = CoupledConfig {
            eps,
            t_end: e.t_end,
            dt_fine: e.dt_factor * eps,
            coarsen: e.coarsen,
            scheme: e.scheme,
            q0: e.q0.clone().unwrap_or_else(|| vec![0.0; n]),
            z0: e.z0.clone().unwrap_or_else(|| vec![0.0; n]),
            with_limit: true,
            record_every: Some(e.record_every),
        };
        let pair = simulate_coupled(spec, Some(&limit), &cfg, &stream).map_err(|x| x.to_string())?;
        let header = std::iter::once("t".to_string())
            .chain(numbered("q", n))
            .chain(numbered("p", n))
            .chain(numbered("qlim", n))
            .collect();
        let rows = (0..pair.times.len())
            .map(|j| {
                let mut r = vec![fmt_f64(pair.times[j])];
                r.extend(pair.q_full[j].iter().map(|x| fmt_f64(*x)));
                r.extend(pair.p_full[j].iter().map(|x| fmt_f64(*x)));
                r.extend(pair.q_limit[j].iter().map(|x| fmt_f64(*x)));
                r
            })
            .collect();
        let name = trajectory_name(idx);
        em.csv(&name, header, rows)?;
        out.push(json!({
            "eps": eps,
            "file": name,
            "steps": pair.diag.steps,
            "sup_q_err": pair.diag.sup_q_err,
            "sup_p_dev": pair.diag.sup_p_dev,
        }));
    }
    Ok(json!({ "paths": out }))
}

fn trajectory_name(idx: usize) -> String {
    format!("trajectory_{idx}.csv")
}

/// Reads a run's `record.json`.
pub fn read_record(dir: &Path) -> std::io::Result<RunRecord> {
    let text = std::fs::read_to_string(dir.join("record.json"))?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::super::{parse_config_str, Overrides};
    use super::*;
    use crate::model_spec::ModelSource;

    fn plan(exp: Value, dir: &Path) -> ExperimentPlan {
        let v = json!({
            "model": serde_json::to_value(ModelSource::benchmark_1d()).unwrap(),
            "experiment": exp,
        });
        parse_config_str(&v.to_string(), &Overrides { out: Some(dir.to_path_buf()), ..Default::default() }).unwrap()
    }

    #[test]
    fn lyapunov_diag_example() {
        let dir = tempfile::tempdir().unwrap();
        let v = json!({"experiment": {"kind": "lyapunov", "seed": 0, "out": dir.path(),
            "linear": {"gamma": [[1.0, 0.0], [0.0, 2.0]], "Sigma": [[2.0, 0.0], [0.0, 4.0]]}}});
        let p = parse_config_str(&v.to_string(), &Overrides::default()).unwrap();
        let o = run(&p);
        assert_eq!(o.exit_code(), 0, "{:?}", o.record.error);
        let m = &o.record.outputs["M"];
        assert_eq!(m, &json!([[1.0, 0.0], [0.0, 1.0]]));
        let back = read_record(dir.path()).unwrap();
        assert_eq!(back, o.record);
    }

    #[test]
    fn drift_at_origin() {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&plan(json!({"kind": "drift", "seed": 0}), dir.path()));
        assert_eq!(o.exit_code(), 0);
        let s = o.record.outputs["points"][0]["S"][0].as_f64().unwrap();
        assert!((s + 0.25).abs() < 1e-12, "{s}");
    }

    #[test]
    fn repeated_runs_give_identical_csv() {
        let exp = json!({"kind": "ladder-strong", "seed": 5, "paths": 8, "epsilons": [0.1, 0.05, 0.025],
            "T": 0.2, "observation_points": 20});
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let oa = run(&plan(exp.clone(), a.path()));
        let mut pb = plan(exp, b.path());
        pb.experiment.threads = Some(2);
        let ob = run(&pb);
        assert!(oa.record.error.is_none(), "{:?}", oa.record.error);
        let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
        assert_eq!(read(a.path(), "ladder.csv"), read(b.path(), "ladder.csv"));
        assert_eq!(oa.record.outputs, ob.record.outputs);
        assert!(a.path().join("timing.json").exists());
    }

    #[test]
    fn simulate_and_cell_write_csv() {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&plan(
            json!({"kind": "simulate", "seed": 2, "epsilons": [0.1], "T": 0.1, "record_every": 10}),
            dir.path(),
        ));
        assert_eq!(o.exit_code(), 0, "{:?}", o.record.error);
        let text = std::fs::read_to_string(dir.path().join(trajectory_name(0))).unwrap();
        assert!(text.starts_with("t,q1,p1,qlim1\r\n"));
        assert_eq!(text.lines().count(), 1 + 3);

        let o = run(&plan(
            json!({"kind": "cell", "seed": 0, "zeta_grid": {"lo": 0.0, "hi": 2.0, "step": 0.01}, "q": [[0.3]]}),
            dir.path(),
        ));
        assert_eq!(o.exit_code(), 0, "{:?}", o.record.error);
        assert!(o.record.outputs["points"][0]["max_residual"].as_f64().unwrap() < 1e-6);
        let text = std::fs::read_to_string(dir.path().join("cell_0.csv")).unwrap();
        assert!(text.starts_with("zeta,chi1,chi_prime1,residual\r\n"));
    }

    #[test]
    fn band_failure_exits_2_and_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let exp = json!({"kind": "ladder-strong", "seed": 1, "paths": 4, "epsilons": [0.1, 0.05, 0.025],
            "T": 0.1, "bands": {"strong": {"lo": 50.0, "hi": 60.0}}});
        assert_eq!(run(&plan(exp, dir.path())).exit_code(), 2);
        let exp = json!({"kind": "dbcheck", "seed": 0, "z_samples": [[1.0]]});
        let o = run(&plan(exp, dir.path()));
        assert_eq!(o.exit_code(), 0);
        // fd model: residual is zero
        assert!(o.record.outputs["points"][0]["db_residual"].as_f64().unwrap() < 1e-12);
        let mut p = plan(json!({"kind": "validate", "seed": 0}), dir.path());
        p.experiment.out = Some(dir.path().join("record.json").join("sub"));
        assert_eq!(run(&p).exit_code(), 1);
    }
}
