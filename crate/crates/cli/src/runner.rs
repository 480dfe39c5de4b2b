//! Experiment drivers: convergence sweeps, rank traces, the transport
//! benchmark and the small-singular-value robustness study.

use crate::config::{ExperimentConfig, ModeKind, ModelKind, SyntheticFieldKind};
use crate::csvio::{fmt_f64, CsvWriter};
use crate::synthetic;
use dlra::lowrank::{self, LeftMultiplyField, MatrixField, StepOptions};
use dlra::models::{
    all_up_state, collocation_reference, exact_evolve, ising_field, planesource_field,
    planesource_initial, scalar_flux_stats, Boundary, IsingParams, PlanesourceParams,
};
use dlra::tensor::rk4_solve;
use dlra::ttn::{read_snapshot, write_snapshot, Tree, TreeTensorNetwork, TtnField};
use dlra::ttn_integrator::{integrate, IntegratorMode, RejectionConfig, StepConfig, TtnStepReport};
use dlra::tucker::{self, TensorField, TuckerStepOptions};
use dlra::{C64, CMat, DenseTensor};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(#[from] dlra::Error),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type RunResult<T> = Result<T, RunError>;

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub h: f64,
    pub error: f64,
    pub integrator: &'static str,
}

#[derive(Debug, Clone)]
pub struct ConvergenceData {
    pub rows: Vec<ConvergenceRow>,
    pub slope: f64,
}

/// Least-squares slope of `log(error)` against `log(h)`.
pub fn fit_slope(rows: &[(f64, f64)]) -> f64 {
    let n = rows.len() as f64;
    let (sx, sy, sxy, sxx) = rows.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, &(h, e)| {
        let x = h.ln();
        let y = e.max(1e-300).ln();
        (acc.0 + x, acc.1 + y, acc.2 + x * y, acc.3 + x * x)
    });
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn integrator_name(mode: ModeKind) -> &'static str {
    match mode {
        ModeKind::Parallel => "parallel",
        ModeKind::RankAdaptive => "rank-adaptive",
    }
}

pub fn step_config(cfg: &ExperimentConfig) -> StepConfig {
    StepConfig {
        tolerance: cfg.theta,
        min_rank: cfg.min_rank,
        max_rank: cfg.max_rank,
        substeps: cfg.substeps,
        mode: match cfg.mode {
            ModeKind::Parallel => IntegratorMode::Parallel,
            ModeKind::RankAdaptive => IntegratorMode::RankAdaptive,
        },
        rejection: RejectionConfig {
            enabled: cfg.rejection,
            factor: cfg.rejection_factor,
            max_retries: 3,
            allow_mary: false,
        },
    }
}

/// Initial network: from a restart snapshot when one is configured,
/// otherwise built by `make` and padded to the configured rank.
fn initial_network(
    cfg: &ExperimentConfig,
    make: impl FnOnce() -> RunResult<TreeTensorNetwork>,
) -> RunResult<TreeTensorNetwork> {
    if let Some(path) = &cfg.initial_snapshot {
        let file = std::fs::File::open(path)?;
        return Ok(read_snapshot(file)?.orthonormalize()?);
    }
    Ok(make()?
        .pad_ranks(cfg.initial_rank, cfg.pad_sigma)?
        .orthonormalize()?)
}

pub fn ising_setup(cfg: &ExperimentConfig) -> RunResult<(IsingParams, TreeTensorNetwork, TtnField)> {
    let p = IsingParams {
        sites: cfg.ising.sites,
        omega: cfg.ising.omega,
        delta: cfg.ising.delta,
        coupling: cfg.ising.coupling,
        alpha: cfg.ising.alpha,
    };
    let tree = Tree::balanced_binary(&vec![2; p.sites]);
    let y0 = initial_network(cfg, || Ok(all_up_state(&tree)?))?;
    let field = ising_field(&p);
    Ok((p, y0, field))
}

pub fn planesource_params(cfg: &ExperimentConfig) -> RunResult<PlanesourceParams> {
    let boundary = match cfg.planesource.boundary.as_str() {
        "outflow" => Boundary::Outflow,
        "periodic" => Boundary::Periodic,
        other => {
            return Err(RunError::Config(format!(
                "unknown boundary {other:?} (expected outflow|periodic)"
            )))
        }
    };
    Ok(PlanesourceParams {
        n_x: cfg.planesource.n_x,
        n_moments: cfg.planesource.n_moments,
        n_xi: cfg.planesource.n_xi,
        n_eta: cfg.planesource.n_eta,
        sigma_s0: cfg.planesource.sigma_s0,
        sigma_s_xi: cfg.planesource.sigma_s_xi,
        sigma_s_eta: cfg.planesource.sigma_s_eta,
        delta: cfg.planesource.delta,
        x_half_width: cfg.planesource.x_half_width,
        cfl: cfg.planesource.cfl,
        boundary,
    })
}

/// Convergence study against the model's oracle: one error per step size plus
/// the fitted log-log slope.
pub fn compute_convergence(cfg: &ExperimentConfig) -> RunResult<ConvergenceData> {
    let name = integrator_name(cfg.mode);
    let mut rows = Vec::new();
    match cfg.model {
        ModelKind::Ising => {
            if cfg.ising.sites > 14 {
                return Err(RunError::Config(
                    "exact diagonalization oracle is limited to 14 spins".into(),
                ));
            }
            let (p, y0, field) = ising_setup(cfg)?;
            let psi0 = y0.contract_full()?;
            let exact = exact_evolve(&p, &psi0, cfg.t_end)?;
            let config = step_config(cfg);
            for &h in &cfg.h {
                let (y, _) = integrate(&y0, &field, 0.0, cfg.t_end, h, &config)?;
                let approx = y.contract_full()?;
                if approx.shape() != exact.shape() {
                    return Err(RunError::Config(format!(
                        "oracle shape {:?} does not match state shape {:?}",
                        exact.shape(),
                        approx.shape()
                    )));
                }
                let error = approx.sub(&exact)?.norm();
                rows.push(ConvergenceRow {
                    h,
                    error,
                    integrator: name,
                });
            }
        }
        ModelKind::SyntheticMatrix => {
            let s = &cfg.synthetic;
            let y0 = synthetic::random_low_rank(cfg.seed, s.rows, s.cols, s.rank);
            let field: Box<dyn MatrixField> = match s.field {
                SyntheticFieldKind::Zero => Box::new(lowrank::FnField(|a: &CMat| {
                    CMat::zeros(a.nrows(), a.ncols())
                })),
                SyntheticFieldKind::Linear => Box::new(LeftMultiplyField(
                    synthetic::linear_generator(cfg.seed, s.rows),
                )),
            };
            // dense reference on a much finer grid
            let h_min = cfg.h.iter().cloned().fold(f64::INFINITY, f64::min);
            let fine = ((cfg.t_end / h_min).ceil() as usize) * 16;
            let exact = rk4_solve(
                |_, a: &CMat| field.eval(a),
                &y0.to_dense(),
                0.0,
                cfg.t_end,
                fine,
            )?;
            let opts = StepOptions {
                tolerance: cfg.theta,
                substeps: cfg.substeps,
                min_rank: cfg.min_rank,
                max_rank: cfg.max_rank,
                ..Default::default()
            };
            for &h in &cfg.h {
                let (y, _) = lowrank::integrate(
                    &y0,
                    field.as_ref(),
                    0.0,
                    cfg.t_end,
                    h,
                    &opts,
                    cfg.mode == ModeKind::RankAdaptive,
                )?;
                let error = (y.to_dense() - &exact).norm();
                rows.push(ConvergenceRow {
                    h,
                    error,
                    integrator: name,
                });
            }
        }
        ModelKind::SyntheticTucker => {
            let s = &cfg.synthetic;
            if s.dims.len() != s.ranks.len() {
                return Err(RunError::Config("dims/ranks length mismatch".into()));
            }
            let y0 = synthetic::random_tucker(cfg.seed, &s.dims, &s.ranks);
            let gens = synthetic::mode_generators(cfg.seed, &s.dims);
            let field = match s.field {
                SyntheticFieldKind::Zero => TensorField::Dense(Box::new(|y: &DenseTensor| {
                    DenseTensor::zeros(y.shape())
                })),
                SyntheticFieldKind::Linear => {
                    let mut dims_map = std::collections::BTreeMap::new();
                    for (i, &n) in s.dims.iter().enumerate() {
                        dims_map.insert(i, n);
                    }
                    let mut op = dlra::ttn::SumOfProductsOperator::new(dims_map);
                    for (i, g) in gens.iter().enumerate() {
                        op.add_term(
                            C64::new(1.0, 0.0),
                            std::collections::BTreeMap::from([(i, g.clone())]),
                        )?;
                    }
                    TensorField::Sop(op)
                }
            };
            let h_min = cfg.h.iter().cloned().fold(f64::INFINITY, f64::min);
            let fine = ((cfg.t_end / h_min).ceil() as usize) * 16;
            let exact = rk4_solve(
                |_, y: &DenseTensor| field.apply_dense(y).expect("dense field"),
                &y0.to_dense()?,
                0.0,
                cfg.t_end,
                fine,
            )?;
            let opts = TuckerStepOptions {
                tolerance: cfg.theta,
                substeps: cfg.substeps,
                min_rank: cfg.min_rank,
                max_rank: cfg.max_rank,
            };
            for &h in &cfg.h {
                let steps = (cfg.t_end / h).round().max(1.0) as usize;
                let mut y = y0.clone();
                for k in 0..steps {
                    let ta = k as f64 * h;
                    let (y1, _) = match cfg.mode {
                        ModeKind::Parallel => {
                            tucker::parallel_tucker_step(&y, &field, ta, ta + h, &opts)?
                        }
                        ModeKind::RankAdaptive => {
                            tucker::rank_adaptive_tucker_step(&y, &field, ta, ta + h, &opts)?
                        }
                    };
                    y = y1;
                }
                let error = y.to_dense()?.sub(&exact)?.norm();
                rows.push(ConvergenceRow {
                    h,
                    error,
                    integrator: name,
                });
            }
        }
        ModelKind::Planesource => {
            return Err(RunError::Config(
                "the transport model has no dense oracle at convergence-study scale; \
                 use the planesource experiment"
                    .into(),
            ));
        }
    }
    let slope = fit_slope(
        &rows
            .iter()
            .map(|r| (r.h, r.error))
            .collect::<Vec<_>>(),
    );
    Ok(ConvergenceData { rows, slope })
}

pub fn run_convergence(cfg: &ExperimentConfig) -> RunResult<PathBuf> {
    let data = compute_convergence(cfg)?;
    let mut w = CsvWriter::new(&cfg.hash(), &["h", "error", "integrator"]);
    for r in &data.rows {
        w.row(&[fmt_f64(r.h), fmt_f64(r.error), r.integrator.to_string()]);
    }
    let mut out = w.contents().to_string();
    out.push_str(&format!("# slope={}\n", fmt_f64(data.slope)));
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("convergence.csv");
    std::fs::write(&path, out)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct RankTraceRow {
    pub t: f64,
    pub node_path: String,
    pub rank: usize,
    pub eta: Option<f64>,
}

/// Per-step per-node rank and η table for tree models, using the first step
/// size in the configuration.
pub fn compute_rank_trace(cfg: &ExperimentConfig) -> RunResult<Vec<RankTraceRow>> {
    let (y0, field, h) = match cfg.model {
        ModelKind::Ising => {
            let (_, y0, field) = ising_setup(cfg)?;
            (y0, field, cfg.h[0])
        }
        ModelKind::Planesource => {
            let p = planesource_params(cfg)?;
            let y0 = initial_network(cfg, || Ok(planesource_initial(&p)?))?;
            (y0, planesource_field(&p)?, p.time_step())
        }
        _ => {
            return Err(RunError::Config(
                "rank traces need a tree model (ising or planesource)".into(),
            ))
        }
    };
    let config = step_config(cfg);
    let (_, reports) = integrate(&y0, &field, 0.0, cfg.t_end, h, &config)?;
    let mut rows = Vec::new();
    for (k, rep) in reports.iter().enumerate() {
        let t = (k + 1) as f64 * h;
        push_trace_rows(&mut rows, t, rep);
    }
    Ok(rows)
}

fn push_trace_rows(rows: &mut Vec<RankTraceRow>, t: f64, rep: &TtnStepReport) {
    for nr in &rep.node_ranks {
        let eta = rep
            .eta
            .iter()
            .find(|(p, _)| *p == nr.path)
            .map(|(_, e)| *e);
        rows.push(RankTraceRow {
            t,
            node_path: nr.path.to_string(),
            rank: nr.after,
            eta,
        });
    }
}

pub fn run_rank_trace(cfg: &ExperimentConfig) -> RunResult<PathBuf> {
    let rows = compute_rank_trace(cfg)?;
    let mut w = CsvWriter::new(&cfg.hash(), &["t", "node_path", "rank", "eta"]);
    for r in &rows {
        w.row(&[
            fmt_f64(r.t),
            r.node_path.clone(),
            r.rank.to_string(),
            r.eta.map(fmt_f64).unwrap_or_default(),
        ]);
    }
    Ok(w.write_to(&cfg.output_dir, "ranktrace.csv")?)
}

#[derive(Debug, Clone)]
pub struct PlanesourceData {
    pub x: Vec<f64>,
    pub mean_parallel: Vec<f64>,
    pub var_parallel: Vec<f64>,
    pub mean_rank_adaptive: Vec<f64>,
    pub var_rank_adaptive: Vec<f64>,
    pub mean_reference: Option<Vec<f64>>,
    pub var_reference: Option<Vec<f64>>,
    pub seconds_parallel: f64,
    pub seconds_rank_adaptive: f64,
    pub seconds_reference: f64,
    pub max_rank_parallel: usize,
}

/// Transport benchmark: scalar-flux statistics from both integrators plus the
/// optional collocation reference. The step size is `cfl·Δx` from the model
/// parameters.
pub fn compute_planesource(cfg: &ExperimentConfig) -> RunResult<PlanesourceData> {
    let p = planesource_params(cfg)?;
    let y0 = initial_network(cfg, || Ok(planesource_initial(&p)?))?;
    let field = planesource_field(&p)?;
    let h = p.time_step();

    let run = |mode: IntegratorMode| -> RunResult<(Vec<f64>, Vec<f64>, f64, usize)> {
        let config = StepConfig {
            mode,
            ..step_config(cfg)
        };
        let start = Instant::now();
        let (y, reports) = integrate(&y0, &field, 0.0, cfg.t_end, h, &config)?;
        let seconds = start.elapsed().as_secs_f64();
        let (mean, var) = scalar_flux_stats(&y, &p)?;
        let max_rank = reports.iter().map(|r| r.max_rank()).max().unwrap_or(0);
        if cfg.snapshot && mode == IntegratorMode::Parallel {
            std::fs::create_dir_all(&cfg.output_dir)?;
            let file = std::fs::File::create(cfg.output_dir.join("planesource_final.ttn.json"))?;
            write_snapshot(&y, file)?;
        }
        Ok((mean, var, seconds, max_rank))
    };

    let (mean_parallel, var_parallel, seconds_parallel, max_rank_parallel) =
        run(IntegratorMode::Parallel)?;
    let (mean_ra, var_ra, seconds_ra, _) = run(IntegratorMode::RankAdaptive)?;

    let (mean_reference, var_reference, seconds_reference) = if cfg.planesource.reference {
        let start = Instant::now();
        let (m, v) = collocation_reference(&p, cfg.t_end, h)?;
        (Some(m), Some(v), start.elapsed().as_secs_f64())
    } else {
        (None, None, 0.0)
    };

    Ok(PlanesourceData {
        x: p.grid(),
        mean_parallel,
        var_parallel,
        mean_rank_adaptive: mean_ra,
        var_rank_adaptive: var_ra,
        mean_reference,
        var_reference,
        seconds_parallel,
        seconds_rank_adaptive: seconds_ra,
        seconds_reference,
        max_rank_parallel,
    })
}

pub fn run_planesource(cfg: &ExperimentConfig) -> RunResult<PathBuf> {
    let data = compute_planesource(cfg)?;
    let mut header = vec![
        "x",
        "e_rho_parallel",
        "var_rho_parallel",
        "e_rho_rank_adaptive",
        "var_rho_rank_adaptive",
    ];
    if data.mean_reference.is_some() {
        header.push("e_rho_reference");
        header.push("var_rho_reference");
    }
    let mut w = CsvWriter::new(&cfg.hash(), &header);
    for j in 0..data.x.len() {
        let mut fields = vec![
            fmt_f64(data.x[j]),
            fmt_f64(data.mean_parallel[j]),
            fmt_f64(data.var_parallel[j]),
            fmt_f64(data.mean_rank_adaptive[j]),
            fmt_f64(data.var_rank_adaptive[j]),
        ];
        if let (Some(m), Some(v)) = (&data.mean_reference, &data.var_reference) {
            fields.push(fmt_f64(m[j]));
            fields.push(fmt_f64(v[j]));
        }
        w.row(&fields);
    }
    let path = w.write_to(&cfg.output_dir, "planesource.csv")?;
    // wall-clock timings are inherently non-reproducible, so they go to a
    // sidecar text file and stdout instead of the deterministic CSV
    let timings = format!(
        "parallel_seconds={:.3}\nrank_adaptive_seconds={:.3}\nreference_seconds={:.3}\nmax_rank_parallel={}\n",
        data.seconds_parallel,
        data.seconds_rank_adaptive,
        data.seconds_reference,
        data.max_rank_parallel
    );
    std::fs::write(cfg.output_dir.join("timings.txt"), &timings)?;
    print!("{timings}");
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct RobustnessRow {
    pub pad_sigma: f64,
    pub h: f64,
    pub error: f64,
}

/// Robustness study: rerun the convergence sweep with the initial bonds padded
/// by tiny singular values; errors must stay comparable to the unpadded run.
pub fn compute_robustness(cfg: &ExperimentConfig) -> RunResult<Vec<RobustnessRow>> {
    if cfg.model != ModelKind::Ising {
        return Err(RunError::Config(
            "the robustness study runs on the ising model".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut levels = vec![0.0];
    levels.extend(cfg.pad_levels.iter().cloned());
    for sigma in levels {
        let padded_cfg = ExperimentConfig {
            pad_sigma: sigma,
            ..cfg.clone()
        };
        let data = compute_convergence(&padded_cfg)?;
        for r in &data.rows {
            rows.push(RobustnessRow {
                pad_sigma: sigma,
                h: r.h,
                error: r.error,
            });
        }
    }
    Ok(rows)
}

pub fn run_robustness(cfg: &ExperimentConfig) -> RunResult<PathBuf> {
    let rows = compute_robustness(cfg)?;
    let mut w = CsvWriter::new(&cfg.hash(), &["pad_sigma", "h", "error"]);
    for r in &rows {
        w.row(&[fmt_f64(r.pad_sigma), fmt_f64(r.h), fmt_f64(r.error)]);
    }
    Ok(w.write_to(&cfg.output_dir, "robustness.csv")?)
}
