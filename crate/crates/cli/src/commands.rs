//! Subcommand implementations. Each returns the text for standard output
//! and writes its files under `--out-dir`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gsm_core::cmp::{cmp_default_init, fit_cmp_with, CmpObjective, CmpParams};
use gsm_core::continuous::{fit_tg_with, log_transform, tg_default_init, TgObjective, TruncGaussParams};
use gsm_core::inference::{bootstrap_ci, estimate_sandwich, null_tests, TestOutcome};
use gsm_core::samplers::{gibbs_vmf_auto, simulate_cmp, simulate_tg, simulate_vmf_iid, RngStream, DEFAULT_BURN_IN};
use gsm_core::study::{
    cmp_design, cmp_truth, run_study, tg_design, tg_truth, CmpParametric, StudyId, StudyOptions, StudyReport,
    TgParametric, DEFAULT_REPS, VMF_BETA,
};
use gsm_core::vmf::{
    auto_model_covariance, build_grid_neighbors, grid_coords, near_square_coords, spatial_wald, AutoModelParams,
    NeighborGraph, SphereSample,
};
use statrs::distribution::{ContinuousCDF, Normal};

use gsm_core::{Dataset, FitOptions, FitResult, Matrix, Method, ParamVec, Responses};

use crate::config::{apply_values, ModelId, RunConfig};
use crate::io::{fmt_num, load_csv, write_csv, write_sidecar, Loaded};
use crate::CliError;

const DEFAULT_SIM_N: usize = 200;
const DEFAULT_BOOT_REPS: usize = 200;

fn library_only() -> CliError {
    CliError::Config("custom-ordinal models are defined in code; use the library API".into())
}

fn fit_options(cfg: &RunConfig) -> Result<FitOptions, CliError> {
    let method = match cfg.get("method").unwrap_or("auto") {
        "auto" => Method::Auto,
        "nelder-mead" => Method::NelderMead,
        "newton" => Method::Newton,
        other => return Err(CliError::Config(format!("unknown method '{other}'"))),
    };
    Ok(FitOptions { method, ..FitOptions::default() })
}

fn table(loaded: Loaded) -> Result<Dataset, CliError> {
    match loaded {
        Loaded::Table(d) => Ok(d),
        Loaded::Sphere { .. } => unreachable!("spherical data for a regression model"),
    }
}

fn sphere_graph(cfg: &RunConfig, sample: &SphereSample, coords: Option<Vec<(i64, i64)>>) -> Result<NeighborGraph, CliError> {
    let n = sample.n();
    let coords = match (coords, cfg.get("grid")) {
        (Some(c), None | Some("columns") | Some("auto")) => c,
        (None, Some("columns")) => return Err(CliError::Config("--grid columns needs grid_row,grid_col in the data".into())),
        (None, None | Some("auto")) => near_square_coords(n),
        (_, Some(spec)) => grid_from_spec(spec, n)?,
    };
    Ok(build_grid_neighbors(&coords)?)
}

/// A fitted model with its sandwich standard errors.
struct Fitted {
    fit: FitResult,
    se: Vec<f64>,
    n: usize,
}

fn tg_dims(data: &Dataset) -> Result<(usize, usize), CliError> {
    Ok((data.real_responses()?.cols(), data.p()))
}

fn fit_table(model: ModelId, data: &Dataset, cfg: &RunConfig) -> Result<Fitted, CliError> {
    let opts = fit_options(cfg)?;
    match model {
        ModelId::Cmp => {
            let names = CmpParams::names(data.p());
            let default = cmp_default_init(data)?.to_vec();
            let init = match cfg.get("init") {
                Some(s) => apply_values(s, &names, &default, "init")?,
                None => default,
            };
            let fit = fit_cmp_with(data, &CmpParams::from_slice(&init)?, &opts)?;
            let obj = CmpObjective::new(data)?;
            let se = estimate_sandwich(&obj, fit.params.values())?.standard_errors();
            Ok(Fitted { fit, se, n: data.n() })
        }
        ModelId::TruncGauss => {
            let (d, p) = tg_dims(data)?;
            let names = TruncGaussParams::names(d, p);
            let default = tg_default_init(data)?.to_theta();
            let init = match cfg.get("init") {
                Some(s) => apply_values(s, &names, &default, "init")?,
                None => default,
            };
            let fit = fit_tg_with(data, &TruncGaussParams::from_theta(d, p, &init)?, &opts)?;
            let logged = log_transform(data)?;
            let obj = TgObjective::new(&logged, d, p)?;
            let se = estimate_sandwich(&obj, fit.params.values())?.standard_errors();
            Ok(Fitted { fit, se, n: data.n() })
        }
        ModelId::VmfAuto | ModelId::CustomOrdinal => unreachable!("handled by the caller"),
    }
}

fn fit_sphere(cfg: &RunConfig, sample: &SphereSample, coords: Option<Vec<(i64, i64)>>) -> Result<Fitted, CliError> {
    let graph = sphere_graph(cfg, sample, coords)?;
    let (est, cov) = auto_model_covariance(sample, &graph)?;
    let n = sample.n();
    let se = cov.diagonal().iter().map(|v| (v.max(0.0) / n as f64).sqrt()).collect();
    let params = ParamVec::new(est.theta(), AutoModelParams::names(sample.d()))?;
    let fit = FitResult { params, objective: f64::NAN, iterations: 0, converged: true, method: "closed-form", warnings: vec![] };
    Ok(Fitted { fit, se, n })
}

fn load(cfg: &RunConfig, model: ModelId) -> Result<Loaded, CliError> {
    load_csv(&cfg.data()?, model, cfg.sqrt_compositional()?)
}

fn fitted(cfg: &RunConfig, model: ModelId) -> Result<Fitted, CliError> {
    match (model, load(cfg, model)?) {
        (ModelId::VmfAuto, Loaded::Sphere { sample, coords }) => fit_sphere(cfg, &sample, coords),
        (m, loaded) => fit_table(m, &table(loaded)?, cfg),
    }
}

fn out_file(cfg: &RunConfig, name: &str) -> Option<PathBuf> {
    cfg.out_dir().map(|d| d.join(name))
}

fn write_with_meta(path: &Path, cfg: &RunConfig, seed: Option<u64>, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    write_csv(path, header, rows)?;
    write_sidecar(path, cfg, seed)
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<String, CliError> {
    let model = cfg.model()?;
    if model == ModelId::CustomOrdinal {
        return Err(library_only());
    }
    let f = fitted(cfg, model)?;
    let mut out = String::new();
    writeln!(out, "model: {}", model.name()).unwrap();
    writeln!(out, "n: {}", f.n).unwrap();
    writeln!(out, "{:<12} {:>14} {:>14} {:>10}", "parameter", "estimate", "se", "|z|").unwrap();
    let mut rows = Vec::new();
    for ((name, est), se) in f.fit.params.names().iter().zip(f.fit.params.values()).zip(&f.se) {
        let z = (est / se).abs();
        writeln!(out, "{name:<12} {est:>14.6} {se:>14.6} {z:>10.3}").unwrap();
        rows.push(vec![name.clone(), fmt_num(*est), fmt_num(*se), format!("{z:.4}")]);
    }
    if f.fit.objective.is_finite() {
        writeln!(out, "objective: {:.10}", f.fit.objective).unwrap();
    }
    writeln!(out, "method: {}", f.fit.method).unwrap();
    writeln!(out, "iterations: {}", f.fit.iterations).unwrap();
    writeln!(out, "converged: {}", f.fit.converged).unwrap();
    for w in &f.fit.warnings {
        writeln!(out, "warning: {w}").unwrap();
    }
    if let Some(path) = out_file(cfg, "fit.csv") {
        write_with_meta(&path, cfg, None, &["parameter", "estimate", "se", "abs_z"], &rows)?;
    }
    if !f.fit.converged {
        return Err(gsm_core::Error::DegenerateVariance(format!("optimizer did not converge\n{out}")).into());
    }
    Ok(out)
}

fn describe(out: &mut String, rows: &mut Vec<Vec<String>>, test: &str, t: &TestOutcome, level: f64) {
    let reject = t.p_value < level;
    writeln!(out, "{test}: statistic {:.6}, reference {}, p-value {:.6}, reject at {level}: {reject}", t.statistic, t.reference, t.p_value).unwrap();
    for note in &t.notes {
        writeln!(out, "  note: {note}").unwrap();
    }
    rows.push(vec![
        test.to_string(),
        fmt_num(t.statistic),
        t.reference.to_string(),
        format!("{:.8}", t.p_value),
        reject.to_string(),
    ]);
}

pub fn cmd_test(cfg: &RunConfig) -> Result<String, CliError> {
    let model = cfg.model()?;
    if model == ModelId::CustomOrdinal {
        return Err(library_only());
    }
    let tested = cfg.partition().ok_or_else(|| CliError::Config("--partition is required for 'test'".into()))?;
    if tested.is_empty() {
        return Err(CliError::Config("--partition must name at least one parameter".into()));
    }
    let level = cfg.level()?.unwrap_or(0.05);
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::Config(format!("level {level} must lie in (0, 1)")));
    }
    let mut out = String::new();
    let mut rows = Vec::new();
    writeln!(out, "model: {}", model.name()).unwrap();
    writeln!(out, "tested: {}", tested.join(",")).unwrap();
    match (model, load(cfg, model)?) {
        (ModelId::VmfAuto, Loaded::Sphere { sample, coords }) => {
            if tested != ["xi"] {
                return Err(CliError::Config("vmf-auto supports only --partition xi".into()));
            }
            let graph = sphere_graph(cfg, &sample, coords)?;
            let t = spatial_wald(&sample, &graph)?;
            describe(&mut out, &mut rows, "spatial-wald", &t, level);
        }
        (m, loaded) => {
            let data = table(loaded)?;
            let f = fit_table(m, &data, cfg)?;
            let names = f.fit.params.names();
            if let Some(bad) = tested.iter().find(|t| !names.contains(t)) {
                return Err(CliError::Config(format!("unknown parameter '{bad}' (model has {})", names.join(","))));
            }
            if tested.len() == names.len() {
                return Err(CliError::Config("the partition must leave at least one nuisance parameter".into()));
            }
            if !f.fit.converged {
                return Err(gsm_core::Error::DegenerateVariance("unrestricted fit did not converge".into()).into());
            }
            let t = match m {
                ModelId::Cmp => null_tests(&CmpObjective::new(&data)?, &f.fit.params, &tested)?,
                _ => {
                    let (d, p) = tg_dims(&data)?;
                    let logged = log_transform(&data)?;
                    null_tests(&TgObjective::new(&logged, d, p)?, &f.fit.params, &tested)?
                }
            };
            describe(&mut out, &mut rows, "wald", &t.wald, level);
            describe(&mut out, &mut rows, "change-in-sm", &t.change_in_sm, level);
        }
    }
    if let Some(path) = out_file(cfg, "test.csv") {
        write_with_meta(&path, cfg, None, &["test", "statistic", "reference", "p_value", "reject"], &rows)?;
    }
    Ok(out)
}

fn sample_size(cfg: &RunConfig) -> Result<usize, CliError> {
    match cfg.sizes()? {
        None => Ok(DEFAULT_SIM_N),
        Some(v) if v.len() == 1 && v[0] > 0 => Ok(v[0]),
        Some(_) => Err(CliError::Config("--n must be a single positive size here".into())),
    }
}

fn covariates_from(cfg: &RunConfig, model: ModelId) -> Result<Option<Dataset>, CliError> {
    match cfg.get("data") {
        None => Ok(None),
        Some(_) => Ok(Some(table(load(cfg, model)?)?)),
    }
}

fn table_rows(data: &Dataset) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut header: Vec<String> = data.response_labels.clone();
    header.extend(data.covariate_labels.iter().cloned());
    let mut rows = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let mut r: Vec<String> = match &data.responses {
            Responses::Integer { .. } => data.int_row(i)?.iter().map(|v| v.to_string()).collect(),
            Responses::Real(_) => data.real_row(i)?.iter().map(|v| format!("{v:.10}")).collect(),
        };
        r.extend(data.x(i).iter().map(|v| format!("{v:.10}")));
        rows.push(r);
    }
    Ok((header, rows))
}

fn default_labels(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("{prefix}{j}")).collect()
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<String, CliError> {
    let model = cfg.model()?;
    if model == ModelId::CustomOrdinal {
        return Err(library_only());
    }
    let seed = cfg.require_seed()?;
    let out_dir = cfg.out_dir().unwrap_or_else(|| PathBuf::from("."));
    let path = out_dir.join("data.csv");
    let mut rng = RngStream::new(seed, 0);
    let (header, rows, n) = match model {
        ModelId::Cmp | ModelId::TruncGauss => {
            let given = covariates_from(cfg, model)?;
            let x: Matrix = match &given {
                Some(d) => d.covariates.clone(),
                None if model == ModelId::Cmp => cmp_design(sample_size(cfg)?, seed)?,
                None => tg_design(sample_size(cfg)?, seed)?,
            };
            let xlabels = match &given {
                Some(d) => d.covariate_labels.clone(),
                None => default_labels("x", x.cols()),
            };
            let data = if model == ModelId::Cmp {
                let names = CmpParams::names(x.cols());
                let default = if x.cols() == 6 { cmp_truth(None)?.to_vec() } else { [vec![0.0; x.cols()], vec![1.0]].concat() };
                let theta = match cfg.get("params") {
                    Some(s) => apply_values(s, &names, &default, "params")?,
                    None if x.cols() == 6 => default,
                    None => return Err(CliError::Config("--params is required for this design".into())),
                };
                simulate_cmp(&x, &CmpParams::from_slice(&theta)?, &mut rng)?
            } else {
                let d = given.as_ref().map(|g| g.responses.d()).unwrap_or(2);
                let names = TruncGaussParams::names(d, x.cols());
                let default = tg_truth(None)?.to_theta();
                let theta = match cfg.get("params") {
                    Some(s) if d == 2 && x.cols() == 2 => apply_values(s, &names, &default, "params")?,
                    Some(s) => apply_values(s, &names, &vec![0.0; names.len()], "params")?,
                    None if d == 2 && x.cols() == 2 => default,
                    None => return Err(CliError::Config("--params is required for this design".into())),
                };
                simulate_tg(&x, &TruncGaussParams::from_theta(d, x.cols(), &theta)?, &mut rng)?
            };
            let rlabels = match model {
                ModelId::Cmp => vec!["y".to_string()],
                _ => default_labels("y", data.responses.d()),
            };
            let data = Dataset::with_labels(data.responses, data.covariates, rlabels, xlabels)?;
            let (header, rows) = table_rows(&data)?;
            (header, rows, data.n())
        }
        ModelId::VmfAuto => {
            let n = sample_size(cfg)?;
            let d = VMF_BETA.len();
            let names = AutoModelParams::names(d);
            let mut default = vec![0.0];
            default.extend(VMF_BETA);
            let theta = match cfg.get("params") {
                Some(s) => apply_values(s, &names, &default, "params")?,
                None => default,
            };
            let theta = AutoModelParams::from_theta(&theta)?;
            let coords = match cfg.get("grid") {
                None | Some("auto") | Some("columns") => near_square_coords(n),
                Some(spec) => grid_from_spec(spec, n)?,
            };
            let mut y = simulate_vmf_iid(n, &theta.beta, &mut rng)?;
            if theta.xi != 0.0 {
                let graph = build_grid_neighbors(&coords)?;
                let mut chain = RngStream::new(seed, 1);
                y = gibbs_vmf_auto(&theta, &graph, &y, DEFAULT_BURN_IN + 1, DEFAULT_BURN_IN, &mut chain)?;
            }
            let mut header = default_labels("y", d);
            header.extend(["grid_row".to_string(), "grid_col".to_string()]);
            let rows = (0..n)
                .map(|i| {
                    let mut r: Vec<String> = y.point(i).iter().map(|v| format!("{v:.12}")).collect();
                    r.push(coords[i].0.to_string());
                    r.push(coords[i].1.to_string());
                    r
                })
                .collect();
            (header, rows, n)
        }
        ModelId::CustomOrdinal => unreachable!(),
    };
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    write_with_meta(&path, cfg, Some(seed), &hdr, &rows)?;
    Ok(format!("model: {}\nn: {n}\nseed: {seed}\nwrote: {}\n", model.name(), path.display()))
}

fn grid_from_spec(spec: &str, n: usize) -> Result<Vec<(i64, i64)>, CliError> {
    let (r, c) = spec
        .split_once(['x', 'X'])
        .and_then(|(r, c)| Some((r.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?)))
        .ok_or_else(|| CliError::Config(format!("--grid '{spec}' is not RxC, columns or auto")))?;
    if r * c != n {
        return Err(CliError::Config(format!("--grid {r}x{c} holds {} sites but n is {n}", r * c)));
    }
    Ok(grid_coords(r, c))
}

pub fn cmd_bootstrap(cfg: &RunConfig) -> Result<String, CliError> {
    let model = cfg.model()?;
    if model == ModelId::CustomOrdinal {
        return Err(library_only());
    }
    if model == ModelId::VmfAuto {
        return Err(CliError::Config("bootstrap supports cmp and truncgauss".into()));
    }
    let seed = cfg.require_seed()?;
    let reps = cfg.reps()?.unwrap_or(DEFAULT_BOOT_REPS);
    let level = cfg.level()?.unwrap_or(0.95);
    let data = table(load(cfg, model)?)?;
    let f = fit_table(model, &data, cfg)?;
    if !f.fit.converged {
        return Err(gsm_core::Error::DegenerateVariance("fit did not converge".into()).into());
    }
    let res = match model {
        ModelId::Cmp => bootstrap_ci(&CmpParametric { covariates: &data.covariates }, &f.fit.params, reps, level, seed)?,
        _ => {
            let (d, _) = tg_dims(&data)?;
            bootstrap_ci(&TgParametric { covariates: &data.covariates, d }, &f.fit.params, reps, level, seed)?
        }
    };
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0);
    let mut out = String::new();
    writeln!(out, "model: {}", model.name()).unwrap();
    writeln!(out, "replicates: {reps} ({} succeeded, {} failed)", res.successes, res.failures).unwrap();
    writeln!(out, "level: {level}").unwrap();
    writeln!(out, "{:<12} {:>12} {:>12} {:>12} {:>12} {:>12}", "parameter", "estimate", "boot_lower", "boot_upper", "se_lower", "se_upper").unwrap();
    let mut rows = Vec::new();
    for j in 0..res.names.len() {
        let est = f.fit.params.values()[j];
        let (sl, su) = (est - z * f.se[j], est + z * f.se[j]);
        writeln!(out, "{:<12} {est:>12.6} {:>12.6} {:>12.6} {sl:>12.6} {su:>12.6}", res.names[j], res.lower[j], res.upper[j]).unwrap();
        rows.push(vec![res.names[j].clone(), fmt_num(est), fmt_num(res.lower[j]), fmt_num(res.upper[j]), fmt_num(sl), fmt_num(su)]);
    }
    for w in &res.warnings {
        writeln!(out, "warning: {w}").unwrap();
    }
    let path = cfg.out_dir().unwrap_or_else(|| PathBuf::from(".")).join("bootstrap.csv");
    write_with_meta(&path, cfg, Some(seed), &["parameter", "estimate", "boot_lower", "boot_upper", "se_lower", "se_upper"], &rows)?;
    Ok(out)
}

fn report_rows(report: &StudyReport) -> (Vec<Vec<String>>, Vec<Vec<String>>, Vec<Vec<String>>) {
    let params = report
        .params
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                p.name.clone(),
                fmt_num(p.truth),
                fmt_num(p.bias),
                fmt_num(p.sd),
                fmt_num(p.asd),
                fmt_num(p.rmse),
                format!("{:.4}", p.coverage),
            ]
        })
        .collect();
    let rate = |v: &[gsm_core::study::RateRow]| -> Vec<Vec<String>> {
        v.iter()
            .map(|r| vec![r.test.clone(), r.n.to_string(), fmt_num(r.signal), format!("{:.2}", r.level), format!("{:.4}", r.rate), r.reps.to_string()])
            .collect()
    };
    (params, rate(&report.size), rate(&report.power))
}

pub fn cmd_replicate(cfg: &RunConfig) -> Result<String, CliError> {
    let name = cfg.require("study")?;
    let id = StudyId::parse(name).map_err(|e| CliError::Config(e.to_string()))?;
    let mut opts = StudyOptions { reps: cfg.reps()?.unwrap_or(DEFAULT_REPS), ..StudyOptions::default() };
    if let Some(seed) = cfg.seed()? {
        opts.seed = seed;
    }
    opts.sizes = cfg.sizes()?;
    opts.signals = cfg.signals()?;
    let report = run_study(id, &opts)?;
    let (params, size, power) = report_rows(&report);
    let out_dir = cfg.out_dir().unwrap_or_else(|| PathBuf::from("."));
    let rate_header = ["test", "n", "signal", "level", "rate", "reps"];
    let mut out = String::new();
    writeln!(out, "study: {}", report.study).unwrap();
    writeln!(out, "seed: {}", report.seed).unwrap();
    writeln!(out, "replicates: {}", report.reps).unwrap();
    if !params.is_empty() {
        writeln!(out, "{:>6} {:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}", "n", "parameter", "truth", "bias", "sd", "asd", "rmse", "cover").unwrap();
        for r in &params {
            writeln!(out, "{:>6} {:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}", r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7]).unwrap();
        }
        let path = out_dir.join(format!("{}_params.csv", report.study));
        write_with_meta(&path, cfg, Some(report.seed), &["n", "parameter", "truth", "bias", "sd", "asd", "rmse", "coverage"], &params)?;
    }
    if !size.is_empty() {
        writeln!(out, "size at level 0.05:").unwrap();
        for r in report.size.iter().filter(|r| (r.level - 0.05).abs() < 1e-9) {
            writeln!(out, "  {:<14} n={:<6} {:.4}", r.test, r.n, r.rate).unwrap();
        }
        write_with_meta(&out_dir.join(format!("{}_size.csv", report.study)), cfg, Some(report.seed), &rate_header, &size)?;
    }
    if !power.is_empty() {
        writeln!(out, "power at level {}:", opts.power_level).unwrap();
        for r in &report.power {
            writeln!(out, "  {:<14} n={:<6} signal={:<6} {:.4}", r.test, r.n, r.signal, r.rate).unwrap();
        }
        write_with_meta(&out_dir.join(format!("{}_power.csv", report.study)), cfg, Some(report.seed), &rate_header, &power)?;
    }
    if report.failures > 0 {
        writeln!(out, "failed replicates: {}", report.failures).unwrap();
    }
    for note in &report.notes {
        writeln!(out, "note: {note}").unwrap();
    }
    Ok(out)
}
