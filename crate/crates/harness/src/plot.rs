//! Plot-ready data files derived from a finished run directory.
//!
//! * `contours_<problem>.csv` for 2-D problems: base, target and final
//!   mixture densities on a 141 x 141 grid over `[-7, 7]²`.
//! * `dimension_sweep.csv` for `s4`: mean estimate per dimension with the
//!   exact probability.
//! * `conjunction_traces.csv`, `conjunction_mc_traces.csv` and
//!   `conjunction_assets.csv`: positions over `t₁ ± 5 s`, relative to asset 1
//!   at `t₁`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cepmc_core::problems::{kepler_propagate, normal_cdf, ConjunctionScenario, OrbitalState};
use cepmc_core::{GaussianParams, RareEventProblem};
use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_config, ExperimentSpec, ProblemSpec};
use crate::experiment::{read_proposals, read_summary, HarnessError, ProposalRow, CONFIG_COPY};

pub const GRID_HALF_WIDTH: f64 = 7.0;
pub const GRID_POINTS: usize = 141;
pub const TRACES_PER_PROPOSAL: usize = 50;
pub const MC_TRACES: usize = 1000;
/// Trace times relative to `t₁`, s.
pub const TRACE_OFFSETS: [f64; 11] = [-5.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0];

/// Reads `dir`, writes the plot files next to the run outputs and returns
/// their paths. A run without summary rows writes nothing.
pub fn plot_data_from(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let spec = parse_config(&fs::read_to_string(dir.join(CONFIG_COPY))?)?;
    let summary = read_summary(dir)?;
    if summary.is_empty() {
        return Ok(Vec::new());
    }
    let proposals = read_proposals(dir)?;
    let mut written = Vec::new();

    let mut seen = Vec::new();
    for row in summary
        .iter()
        .filter(|r| r.dim == 2 && r.problem != "conjunction")
    {
        if seen.contains(&row.problem) {
            continue;
        }
        seen.push(row.problem.clone());
        let spec_problem = find_problem(&spec, &row.problem, 2)?;
        let problem = spec_problem.build(&spec.scenario)?;
        let mixtures = mixtures_for(&proposals, &row.problem, 2);
        let path = dir.join(format!("contours_{}.csv", row.problem));
        write_contours(&path, &problem, &mixtures)?;
        written.push(path);
    }

    let sweep: Vec<_> = summary.iter().filter(|r| r.problem == "s4").collect();
    if !sweep.is_empty() {
        let beta = spec
            .problems
            .iter()
            .find_map(|p| match p {
                ProblemSpec::S4 { beta, .. } => Some(*beta),
                _ => None,
            })
            .unwrap_or(5.0);
        let mut w = csv::Writer::from_path(dir.join("dimension_sweep.csv"))?;
        w.write_record(["method", "rho", "D", "mean", "std_error", "truth"])?;
        for r in sweep {
            w.write_record([
                r.method.clone(),
                r.rho.to_string(),
                r.dim.to_string(),
                opt(r.mean),
                opt(r.std_error),
                normal_cdf(-beta).to_string(),
            ])?;
        }
        w.flush()?;
        written.push(dir.join("dimension_sweep.csv"));
    }

    let conj: Vec<&ProposalRow> = {
        let all: Vec<&ProposalRow> = proposals
            .iter()
            .filter(|p| p.problem == "conjunction")
            .collect();
        let preferred: Vec<&ProposalRow> = all
            .iter()
            .copied()
            .filter(|p| p.method == "cepmc")
            .collect();
        if preferred.is_empty() {
            all
        } else {
            // the first rho listed for CE-PMC
            let rho = preferred[0].rho;
            preferred.into_iter().filter(|p| p.rho == rho).collect()
        }
    };
    if summary.iter().any(|r| r.problem == "conjunction") {
        written.extend(write_conjunction(dir, &spec, &conj)?);
    }
    Ok(written)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn find_problem<'a>(
    spec: &'a ExperimentSpec,
    id: &str,
    dim: usize,
) -> Result<&'a ProblemSpec, HarnessError> {
    spec.problems
        .iter()
        .find(|p| p.id() == id && p.dim() == dim)
        .ok_or_else(|| {
            crate::config::ConfigError {
                line: None,
                message: format!(
                    "summary names problem {id} (D = {dim}) that the experiment file lacks"
                ),
            }
            .into()
        })
}

/// Final proposals per `(method, rho)` for one problem, in file order.
fn mixtures_for(
    rows: &[ProposalRow],
    problem: &str,
    dim: usize,
) -> Vec<(String, Vec<GaussianParams>)> {
    let mut groups: BTreeMap<(usize, String), Vec<GaussianParams>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for r in rows.iter().filter(|r| r.problem == problem && r.dim == dim) {
        let label = format!("mixture_{}_rho{}", r.method, r.rho);
        if !order.contains(&label) {
            order.push(label.clone());
        }
        let idx = order
            .iter()
            .position(|l| *l == label)
            .expect("just inserted");
        if let Some(q) = r.params() {
            groups.entry((idx, label)).or_default().push(q);
        }
    }
    groups
        .into_iter()
        .map(|((_, label), qs)| (label, qs))
        .collect()
}

fn mixture_density(qs: &[GaussianParams], x: &DVector<f64>) -> f64 {
    let total: f64 = qs
        .iter()
        .filter_map(|q| q.log_density(x).ok())
        .map(f64::exp)
        .sum();
    total / qs.len() as f64
}

pub fn write_contours(
    path: &Path,
    problem: &RareEventProblem,
    mixtures: &[(String, Vec<GaussianParams>)],
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "x1".to_string(),
        "x2".into(),
        "base_density".into(),
        "indicator".into(),
        "target_density".into(),
    ];
    header.extend(mixtures.iter().map(|(label, _)| label.clone()));
    w.write_record(&header)?;
    let step = 2.0 * GRID_HALF_WIDTH / (GRID_POINTS - 1) as f64;
    for i in 0..GRID_POINTS {
        for j in 0..GRID_POINTS {
            let x = DVector::from_vec(vec![
                -GRID_HALF_WIDTH + i as f64 * step,
                -GRID_HALF_WIDTH + j as f64 * step,
            ]);
            let base = problem.log_base_density(&x).exp();
            let indicator = f64::from(u8::from(problem.is_event(&x)?));
            let mut record = vec![
                x[0].to_string(),
                x[1].to_string(),
                base.to_string(),
                indicator.to_string(),
                (base * indicator).to_string(),
            ];
            record.extend(
                mixtures
                    .iter()
                    .map(|(_, qs)| mixture_density(qs, &x).to_string()),
            );
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn trace_header() -> Vec<String> {
    let mut h = vec![
        "source".to_string(),
        "proposal".into(),
        "sample".into(),
        "miss_distance".into(),
    ];
    for dt in TRACE_OFFSETS {
        for axis in ["x", "y", "z"] {
            h.push(format!("{axis}@{dt}"));
        }
    }
    h
}

/// Positions over the trace window relative to `origin`.
fn trace(
    state: &OrbitalState,
    scenario: &ConjunctionScenario,
    origin: &Vector3<f64>,
) -> Result<Vec<String>, HarnessError> {
    let mut out = Vec::with_capacity(3 * TRACE_OFFSETS.len());
    for dt in TRACE_OFFSETS {
        let s = kepler_propagate(state, scenario.horizon + dt, scenario.mu_grav)?;
        let r = s.position - origin;
        out.extend([r.x, r.y, r.z].map(|v| v.to_string()));
    }
    Ok(out)
}

fn write_conjunction(
    dir: &Path,
    spec: &ExperimentSpec,
    finals: &[&ProposalRow],
) -> Result<Vec<PathBuf>, HarnessError> {
    let scenario = &spec.scenario;
    let assets_t1 = scenario.assets_at_encounter()?;
    let origin = assets_t1[0].position;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut written = Vec::new();

    let mut write_samples = |path: PathBuf,
                             source: &str,
                             groups: Vec<(usize, Vec<DVector<f64>>)>|
     -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(trace_header())?;
        for (p, xs) in groups {
            for (k, x) in xs.iter().enumerate() {
                let rogue = scenario.perturbed_rogue(x)?;
                let miss = scenario.miss_distance(x, &assets_t1)?;
                let mut rec = vec![
                    source.to_string(),
                    p.to_string(),
                    k.to_string(),
                    miss.to_string(),
                ];
                rec.extend(trace(&rogue, scenario, &origin)?);
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        written.push(path);
        Ok(())
    };

    if !finals.is_empty() {
        let mut groups = Vec::new();
        for row in finals {
            if let Some(q) = row.params() {
                groups.push((row.proposal, q.draw(&mut rng, TRACES_PER_PROPOSAL)?));
            }
        }
        write_samples(
            dir.join("conjunction_traces.csv"),
            &finals[0].method,
            groups,
        )?;
    }
    let base = GaussianParams::diagonal(
        DVector::zeros(6),
        &[
            scenario.rogue_pos_sigma.powi(2),
            scenario.rogue_pos_sigma.powi(2),
            scenario.rogue_pos_sigma.powi(2),
            scenario.rogue_vel_sigma.powi(2),
            scenario.rogue_vel_sigma.powi(2),
            scenario.rogue_vel_sigma.powi(2),
        ],
    )?;
    write_samples(
        dir.join("conjunction_mc_traces.csv"),
        "base",
        vec![(0, base.draw(&mut rng, MC_TRACES)?)],
    )?;

    let path = dir.join("conjunction_assets.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = trace_header();
    header.drain(..4);
    header.insert(0, "asset".into());
    w.write_record(&header)?;
    for (i, a) in scenario.assets.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(trace(a, scenario, &origin)?);
        w.write_record(&rec)?;
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{run_experiment, write_outputs, RunOptions, SUMMARY_CSV};

    fn run_into(dir: &Path, text: &str) {
        let spec = parse_config(text).unwrap();
        let out = run_experiment(&spec, &RunOptions::default()).unwrap();
        write_outputs(&spec, &out, dir).unwrap();
    }

    #[test]
    fn s3_grid_is_finite() {
        let dir = tempfile::tempdir().unwrap();
        run_into(
            dir.path(),
            "experiment_id = g\nreplications = 2\n[problem]\nid = s3, s4\ndim = 2, 3\nbeta = 2\n\
             [method]\nname = cepmc, plain_mc\nN = 3\nK = 100\nT = 4\n",
        );
        let files = plot_data_from(dir.path()).unwrap();
        assert!(files.iter().any(|f| f.ends_with("contours_s3.csv")));
        assert!(files.iter().any(|f| f.ends_with("contours_s4.csv")));
        let mut r = csv::Reader::from_path(dir.path().join("contours_s3.csv")).unwrap();
        assert_eq!(
            r.headers().unwrap().iter().collect::<Vec<_>>(),
            vec![
                "x1",
                "x2",
                "base_density",
                "indicator",
                "target_density",
                "mixture_cepmc_rho0.1"
            ]
        );
        let mut n = 0;
        for rec in r.records() {
            let rec = rec.unwrap();
            assert!(rec.iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
            n += 1;
        }
        assert_eq!(n, GRID_POINTS * GRID_POINTS);

        let mut r = csv::Reader::from_path(dir.path().join("dimension_sweep.csv")).unwrap();
        // cepmc and plain_mc at D = 2 and 3
        assert_eq!(r.records().count(), 4);
    }

    #[test]
    fn empty_run_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        run_into(
            dir.path(),
            "experiment_id = e\n[problem]\nid = s3\n[method]\nname = cepmc\nN = 1\nK = 10\nT = 1\n",
        );
        // keep only the header
        let header = fs::read_to_string(dir.path().join(SUMMARY_CSV)).unwrap();
        fs::write(
            dir.path().join(SUMMARY_CSV),
            header.lines().next().unwrap().to_string() + "\n",
        )
        .unwrap();
        let before: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert!(plot_data_from(dir.path()).unwrap().is_empty());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), before.len());
    }

    #[test]
    fn conjunction_trace_rows() {
        let dir = tempfile::tempdir().unwrap();
        run_into(
            dir.path(),
            "experiment_id = c\n[problem]\nid = conjunction\n[method]\nname = cepmc\nN = 16\nK = 20\nT = 2\n",
        );
        plot_data_from(dir.path()).unwrap();
        let mut r = csv::Reader::from_path(dir.path().join("conjunction_traces.csv")).unwrap();
        assert_eq!(r.headers().unwrap().len(), 4 + 3 * TRACE_OFFSETS.len());
        assert_eq!(r.records().count(), 16 * TRACES_PER_PROPOSAL);
        let r = csv::Reader::from_path(dir.path().join("conjunction_mc_traces.csv")).unwrap();
        assert_eq!(r.into_records().count(), MC_TRACES);
        let mut r = csv::Reader::from_path(dir.path().join("conjunction_assets.csv")).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 2);
        // asset 1 sits at the origin at t1
        let col = r
            .headers()
            .unwrap()
            .iter()
            .position(|h| h == "x@0")
            .unwrap();
        assert!(rows[0][col].parse::<f64>().unwrap().abs() < 1e-6);
    }
}
