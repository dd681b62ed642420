use std::path::{Path, PathBuf};

use serde_json::json;
use timechange_sv::diagnostics::{acf, iact, kde_export, summarize};
use timechange_sv::mcmc::{AcceptanceReport, Tally};
use timechange_sv::models::{euler_simulate, StateVol};
use timechange_sv::{
    ingest_csv, model_by_name, run_chain, CsvSchema, ParamVector, RandomStream, SamplerConfig,
    TimeGrid, Trace,
};

use crate::config::RunConfig;
use crate::files::{csv_err, csv_writer, read_trace, write_json, write_trace};
use crate::CliError;

fn make_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn flush<W: std::io::Write>(mut w: csv::Writer<W>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Simulates the configured model and writes `data.csv` (observations),
/// `truth.csv` (the full Euler skeleton) and `truth_params.csv`.
pub fn cmd_simulate(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let model = model_by_name(&config.model)?;
    let opts = config
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("`simulate` section missing".into()))?;
    if opts.n_obs < 2 || opts.thin < 1 || !opts.delta.is_finite() || opts.delta <= 0.0 {
        return Err(CliError::Config(
            "simulate needs n_obs >= 2, thin >= 1 and delta > 0".into(),
        ));
    }
    let pairs: Vec<(&str, f64)> = config.truth.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let p = ParamVector::from_pairs(model.param_specs(), &pairs)?;
    let steps = (opts.n_obs - 1) * opts.thin;
    let grid = TimeGrid::uniform(0.0, steps as f64 * opts.delta, steps)?;
    let mut rng = RandomStream::new(opts.seed, 0);
    let (x, alpha) = euler_simulate(
        model.as_ref(),
        &p,
        opts.x0,
        model.alpha0(&p),
        &grid,
        &mut rng,
    )?;

    make_dir(out_dir)?;
    let data_path = out_dir.join("data.csv");
    {
        let mut w = csv_writer(&data_path)?;
        let err = csv_err(&data_path);
        w.write_record(["time", "value"]).map_err(&err)?;
        for k in 0..opts.n_obs {
            let i = k * opts.thin;
            w.write_record([x.times()[i].to_string(), x.values()[i].to_string()])
                .map_err(&err)?;
        }
        flush(w, &data_path)?;
    }

    let truth_path = out_dir.join("truth.csv");
    {
        let mut w = csv_writer(&truth_path)?;
        let err = csv_err(&truth_path);
        let latent = model.has_latent();
        if latent {
            w.write_record(["time", "x", "alpha"]).map_err(&err)?;
        } else {
            w.write_record(["time", "x"]).map_err(&err)?;
        }
        for i in 0..x.len() {
            let mut rec = vec![x.times()[i].to_string(), x.values()[i].to_string()];
            if latent {
                rec.push(alpha.values()[i].to_string());
            }
            w.write_record(&rec).map_err(&err)?;
        }
        flush(w, &truth_path)?;
    }

    let params_path = out_dir.join("truth_params.csv");
    {
        let mut w = csv_writer(&params_path)?;
        let err = csv_err(&params_path);
        w.write_record(["parameter", "value"]).map_err(&err)?;
        for (spec, v) in model.param_specs().iter().zip(p.values()) {
            w.write_record([spec.name, &v.to_string()]).map_err(&err)?;
        }
        flush(w, &params_path)?;
    }
    Ok(vec![data_path, truth_path, params_path])
}

fn tally_json(t: &Tally) -> serde_json::Value {
    json!({ "proposed": t.proposed, "accepted": t.accepted, "rate": t.rate() })
}

fn acceptance_json(
    report: &AcceptanceReport,
    trace: &Trace,
    config: &RunConfig,
) -> serde_json::Value {
    let params: serde_json::Map<String, serde_json::Value> = report
        .params
        .iter()
        .map(|(k, t)| (k.clone(), tally_json(t)))
        .collect();
    json!({
        "z": tally_json(&report.z),
        "gamma": tally_json(&report.gamma),
        "params": params,
        "final_rw_scales": trace.final_scales,
        "sampler": trace.config,
        "config": config,
    })
}

fn write_summary(path: &Path, trace: &Trace) -> Result<(), CliError> {
    let table = summarize(trace)?;
    let err = csv_err(path);
    let mut w = csv_writer(path)?;
    w.write_record(["parameter", "mean", "sd", "q025", "median", "q975"])
        .map_err(&err)?;
    for r in &table.rows {
        w.write_record([
            r.name.clone(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.q025.to_string(),
            r.median.to_string(),
            r.q975.to_string(),
        ])
        .map_err(&err)?;
    }
    flush(w, path)
}

/// Fits the configured model to `data` and writes, per chain, a trace, a
/// posterior summary and an acceptance report.
///
/// With one chain the files are `trace.csv`, `summary.csv` and
/// `acceptance.json`; with several, each name gets a `_chain<i>` suffix.
pub fn cmd_fit(config: &RunConfig, data: &Path, out_dir: &Path) -> Result<Vec<Trace>, CliError> {
    let model = model_by_name(&config.model)?;
    let schema = match config.data.spacing {
        Some(dt) => CsvSchema::ImplicitSpacing(dt),
        None => CsvSchema::TimeColumn,
    };
    let obs = ingest_csv(data, schema, model.state_vol() != StateVol::Unit)?;
    let prior = config.prior()?;
    let base = config.sampler()?;
    base.validate(obs.n_intervals())?;

    let configs: Vec<SamplerConfig> = (0..config.chains as u64)
        .map(|i| SamplerConfig {
            seed: base.seed.wrapping_add(i),
            ..base.clone()
        })
        .collect();
    let traces: Vec<Trace> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| {
                let (obs, model, prior) = (&obs, model.clone(), prior.clone());
                s.spawn(move || run_chain(c, obs, model, prior))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect::<Result<_, _>>()
    })?;

    make_dir(out_dir)?;
    for (i, trace) in traces.iter().enumerate() {
        let suffix = if traces.len() == 1 {
            String::new()
        } else {
            format!("_chain{}", i + 1)
        };
        write_trace(&out_dir.join(format!("trace{suffix}.csv")), trace)?;
        write_summary(&out_dir.join(format!("summary{suffix}.csv")), trace)?;
        write_json(
            &out_dir.join(format!("acceptance{suffix}.json")),
            &acceptance_json(&trace.acceptance, trace, config),
        )?;
    }
    Ok(traces)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnoseOptions {
    pub max_lag: usize,
    pub grid_points: usize,
}

/// Writes `acf.csv`, `iact.csv` and `kde.csv` for every non-constant column
/// of a trace file and returns the names of the constant columns skipped.
pub fn cmd_diagnose(
    trace_path: &Path,
    opts: DiagnoseOptions,
    out_dir: &Path,
) -> Result<Vec<String>, CliError> {
    let table = read_trace(trace_path)?;
    let n = table.n_rows();
    if opts.max_lag >= n {
        return Err(CliError::Config(format!(
            "max lag {} needs more than {n} draws",
            opts.max_lag
        )));
    }
    let mut used = Vec::new();
    let mut skipped = Vec::new();
    for (name, col) in table.names.iter().zip(&table.columns) {
        if col.iter().all(|&v| v == col[0]) {
            skipped.push(name.clone());
        } else {
            used.push((name, col));
        }
    }
    if used.is_empty() {
        return Err(CliError::Malformed {
            path: trace_path.to_path_buf(),
            message: "every column is constant".into(),
        });
    }
    let acfs: Vec<Vec<f64>> = used
        .iter()
        .map(|(_, c)| acf(c, opts.max_lag))
        .collect::<Result<_, _>>()?;
    let iacts: Vec<f64> = used
        .iter()
        .map(|(_, c)| iact(c))
        .collect::<Result<_, _>>()?;
    let kdes: Vec<Vec<(f64, f64)>> = used
        .iter()
        .map(|(_, c)| kde_export(c, opts.grid_points))
        .collect::<Result<_, _>>()?;

    make_dir(out_dir)?;
    let path = out_dir.join("acf.csv");
    let err = csv_err(&path);
    let mut w = csv_writer(&path)?;
    let mut header = vec!["lag".to_string()];
    header.extend(used.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header).map_err(&err)?;
    for lag in 0..=opts.max_lag {
        let mut rec = vec![lag.to_string()];
        rec.extend(acfs.iter().map(|a| a[lag].to_string()));
        w.write_record(&rec).map_err(&err)?;
    }
    flush(w, &path)?;

    let path = out_dir.join("iact.csv");
    let err = csv_err(&path);
    let mut w = csv_writer(&path)?;
    w.write_record(["parameter", "iact"]).map_err(&err)?;
    for ((name, _), t) in used.iter().zip(&iacts) {
        w.write_record([name.as_str(), &t.to_string()])
            .map_err(&err)?;
    }
    flush(w, &path)?;

    let path = out_dir.join("kde.csv");
    let err = csv_err(&path);
    let mut w = csv_writer(&path)?;
    w.write_record(["parameter", "x", "density"])
        .map_err(&err)?;
    for ((name, _), kde) in used.iter().zip(&kdes) {
        for (x, d) in kde {
            w.write_record([name.as_str(), &x.to_string(), &d.to_string()])
                .map_err(&err)?;
        }
    }
    flush(w, &path)?;
    Ok(skipped)
}
