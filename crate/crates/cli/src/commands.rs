use std::path::{Path, PathBuf};

use multisens::io::{read_csv, write_csv, write_dataset, Provenance, Table};
use multisens::simulate::{gen_gwas_with, gen_linear_gaussian, gen_nonlinear, gen_proxy, GwasConfig, Preset, ProxyParams, SimTruth};
use multisens::{
    binary_rv, build_bank_unitwise, conditional_confounder, fit_empirical, fit_linear, fit_ppca, fit_probit, fit_proxy,
    ignorance_region, implicit_r2, mcc_minimize, mcc_report, partial_r2_treatment, robustness_value, rr_curve,
    rr_ignorance_region, select_dim, sigma_u2_domain, signed_r2_grid, tau_adjusted, tau_bounds, worst_case_bias,
    worst_case_direction, BinaryOutcome, Bias, Contrast, DimMethod, FittedOutcome, MccOptions, Norm,
};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::args::{
    BoundsArgs, CalibrateArgs, Cli, Command, DimRule, FitArgs, MccArgs, OutcomeKind, ProxyArgs, RrArgs, RvArgs,
    SimulateArgs,
};
use crate::inputs::{load_data, parse_grid, parse_r2, Model, CONFOUNDER_FILE, FACTOR_FILE, OUTCOME_FILE};
use crate::output::{emit_json, emit_tsv, provenance, tag, write_tagged};
use crate::{CliError, CliResult};

pub fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed;
    let prov = provenance(Some(seed));
    match &cli.command {
        Command::Fit(a) => fit(a, &prov),
        Command::Bounds(a) => bounds(a, &prov),
        Command::Rv(a) => rv(a, &prov),
        Command::Calibrate(a) => calibrate(a, &prov),
        Command::Mcc(a) => mcc(a, seed, &prov),
        Command::Rr(a) => rr(a, seed, &prov),
        Command::Proxy(a) => proxy(a, &prov),
        Command::Simulate(a) => simulate(a, seed, &prov),
    }
}

fn fit(a: &FitArgs, prov: &Provenance) -> CliResult<()> {
    let (t, y) = load_data(&a.data)?;
    let y = y.ok_or_else(|| CliError::Usage("fit needs --outcome".into()))?;
    let m = match (a.m, a.select_dim) {
        (Some(m), _) => m,
        (None, Some(DimRule::EigenGap)) => select_dim(&t, DimMethod::EigenGap)?,
        (None, Some(DimRule::Holdout)) => select_dim(&t, DimMethod::Holdout)?,
        (None, None) => return Err(CliError::Usage("give --m or --select-dim".into())),
    };
    let fm = fit_ppca(&t, m)?;
    let cc = conditional_confounder(&fm)?;
    let outcome = match a.outcome_kind {
        OutcomeKind::Gaussian => FittedOutcome::Gaussian(fit_linear(&t, &y)?),
        OutcomeKind::Probit => FittedOutcome::Probit(fit_probit(&t, &y)?),
        OutcomeKind::Empirical => FittedOutcome::Empirical(fit_empirical(&t, &y, a.degree)?),
    };
    let columns: Vec<String> = match t.column_names() {
        Some(names) => names.to_vec(),
        None => (1..=t.ncols()).map(|j| format!("t{j}")).collect(),
    };
    let factor = json!({
        "m": fm.m,
        "k": fm.k(),
        "columns": columns,
        "b_hat": fm.b_hat.transpose().iter().collect::<Vec<_>>(),
        "sigma2_t_given_u": fm.sigma2_t_given_u,
        "singular_values": fm.singular_values.as_slice(),
        "treatment_means": fm.treatment_means.as_slice(),
        "eigenvalues": fm.eigenvalues.as_slice(),
    });
    std::fs::create_dir_all(&a.out_dir)?;
    let files = [FACTOR_FILE, CONFOUNDER_FILE, OUTCOME_FILE].map(|f| a.out_dir.join(f));
    write_tagged(&files[0], &factor.to_string(), prov)?;
    write_tagged(&files[1], &cc.to_json()?, prov)?;
    write_tagged(&files[2], &outcome.to_json()?, prov)?;
    let sigma2_y = match &outcome {
        FittedOutcome::Gaussian(g) => Some(g.sigma2_y_given_t),
        FittedOutcome::Empirical(e) => Some(e.sigma2_y_given_t),
        FittedOutcome::Probit(_) => None,
    };
    let summary = json!({
        "n": t.nrows(),
        "k": fm.k(),
        "m": fm.m,
        "sigma2_t_given_u": fm.sigma2_t_given_u,
        "sigma2_y_given_t": sigma2_y,
        "outcome_kind": outcome.kind(),
        "eigenvalues": fm.eigenvalues.as_slice(),
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    emit_json(&tag(summary, prov)?, None)
}

/// Naive effect of a contrast and the outcome scale, for continuous outcomes.
fn continuous_scale(model: &Model) -> CliResult<f64> {
    if let FittedOutcome::Probit(_) = model.outcome {
        return Err(multisens::Error::Precondition(
            "the outcome model is probit; use `multisens rr` for binary outcomes".into(),
        )
        .into());
    }
    Ok(model.outcome.as_model().sigma_y_given_t())
}

fn naive_effect(model: &Model, c: &Contrast<f64>) -> CliResult<f64> {
    let outcome = model.outcome.as_model();
    Ok(outcome.mean(c.t1())? - outcome.mean(c.t2())?)
}

fn bounds(a: &BoundsArgs, prov: &Provenance) -> CliResult<()> {
    let model = Model::load(&a.model)?;
    let sy = continuous_scale(&model)?;
    let caps = parse_r2(&a.r2, "--r2")?;
    let mut records = Vec::new();
    for (id, c) in model.contrasts(&a.contrasts)? {
        let naive = naive_effect(&model, &c)?;
        let rv = match worst_case_bias(&model.cc, sy, 1.0, &c)? {
            Bias::Bounded(_) => Some(robustness_value(naive, &model.cc, sy, &c)?.rv),
            Bias::Unbounded(_) => None,
        };
        for &r2 in &caps {
            let region = ignorance_region(naive, &model.cc, sy, r2, &c)?;
            records.push(json!({
                "contrast_id": id,
                "naive": naive,
                "lower": region.lower,
                "upper": region.upper,
                "r2_cap": r2,
                "rv": rv,
                "bounded": region.bounded,
                "reason": region.reason,
            }));
        }
    }
    emit_json(&tag(json!({ "records": records }), prov)?, a.out.as_deref())
}

fn rv(a: &RvArgs, prov: &Provenance) -> CliResult<()> {
    let model = Model::load(&a.model)?;
    let sy = continuous_scale(&model)?;
    let mut records = Vec::new();
    for (id, c) in model.contrasts(&a.contrasts)? {
        let naive = naive_effect(&model, &c)?;
        let record = match worst_case_bias(&model.cc, sy, 1.0, &c)? {
            Bias::Unbounded(reason) => json!({
                "contrast_id": id,
                "naive": naive,
                "rv": null,
                "rv_percent": null,
                "robust": false,
                "bounded": false,
                "reason": reason,
            }),
            Bias::Bounded(_) => {
                let rv = robustness_value(naive, &model.cc, sy, &c)?;
                let region = ignorance_region(naive, &model.cc, sy, rv.rv, &c)?;
                json!({
                    "contrast_id": id,
                    "naive": naive,
                    "lower": region.lower,
                    "upper": region.upper,
                    "r2_cap": rv.rv,
                    "rv": rv.rv,
                    "rv_percent": 100.0 * rv.rv,
                    "robust": rv.robust,
                    "bounded": true,
                })
            }
        };
        records.push(record);
    }
    emit_json(&tag(json!({ "records": records }), prov)?, a.out.as_deref())
}

fn calibrate(a: &CalibrateArgs, prov: &Provenance) -> CliResult<()> {
    let (t, y) = load_data(&a.data)?;
    let y = y.ok_or_else(|| CliError::Usage("calibrate needs --outcome".into()))?;
    let probit: Option<BinaryOutcome<f64>> = match a.outcome_kind {
        OutcomeKind::Gaussian => None,
        OutcomeKind::Probit => Some(fit_probit(&t, &y)?),
        OutcomeKind::Empirical => {
            return Err(CliError::Usage("calibrate supports --outcome-kind gaussian or probit".into()));
        }
    };
    let rows = (0..t.ncols())
        .map(|j| {
            let r2 = match &probit {
                Some(model) => implicit_r2(&t, &y, model, &[j])?,
                None => partial_r2_treatment(&t, &y, &[j])?,
            };
            Ok(vec![(j + 1) as f64, r2])
        })
        .collect::<CliResult<Vec<_>>>()?;
    let names = t.column_names().map(|n| n.join(", ")).unwrap_or_default();
    emit_tsv(a.out.as_deref(), prov, &[format!("columns: {names}")], &["j", "partial_r2"], &rows)
}

fn mcc(a: &MccArgs, seed: u64, prov: &Provenance) -> CliResult<()> {
    let model = Model::load(&a.model)?;
    let FittedOutcome::Gaussian(outcome) = &model.outcome else {
        return Err(multisens::Error::Precondition("mcc needs a gaussian outcome model".into()).into());
    };
    let observed = model.observed(&a.treatments)?;
    let norm: Norm = a.norm.parse()?;
    let defaults = MccOptions::defaults_for(norm);
    let opts = MccOptions { tol: a.tol.unwrap_or(defaults.tol), max_iter: a.max_iter.unwrap_or(defaults.max_iter), seed };
    let indices: Vec<usize> = (0..model.columns.len()).collect();
    let bank = build_bank_unitwise(&model.cc, &observed, outcome, &indices)?;
    let sol = mcc_minimize(&bank, norm, a.r2_cap, &opts)?;
    let report = mcc_report(&bank, &sol.gamma_star)?;
    if let Some(path) = &a.report {
        let rows: Vec<Vec<f64>> = report
            .iter()
            .enumerate()
            .map(|(j, r)| vec![(j + 1) as f64, r.naive, r.adjusted, r.shrinkage_ratio.unwrap_or(f64::NAN)])
            .collect();
        let comments = [format!("columns: {}", model.columns.join(", "))];
        emit_tsv(Some(path), prov, &comments, &["j", "naive", "adjusted", "shrinkage_ratio"], &rows)?;
    }
    let summary = json!({
        "norm": norm,
        "r2_cap": a.r2_cap,
        "gamma_star": sol.gamma_star.as_slice(),
        "achieved_norm": sol.achieved_norm,
        "naive_norm": sol.naive_norm,
        "achieved_r2": sol.achieved_r2,
        "lambda": sol.lambda,
        "gap": sol.gap,
        "iterations": sol.iterations,
        "contrasts": report,
    });
    emit_json(&tag(summary, prov)?, a.out.as_deref())
}

fn rr(a: &RrArgs, seed: u64, prov: &Provenance) -> CliResult<()> {
    let model = Model::load(&a.model)?;
    let FittedOutcome::Probit(bin) = &model.outcome else {
        return Err(multisens::Error::Precondition("rr needs a probit outcome model".into()).into());
    };
    let observed = model.observed(&a.treatments)?;
    let caps = parse_r2(&a.r2, "--r2")?;
    let grid = signed_r2_grid(a.points);
    let contrasts = model.contrasts(&a.contrasts)?;
    let mut records = Vec::new();
    let mut curve_cols = Vec::new();
    for (id, c) in &contrasts {
        let direction = if a.direction.is_empty() {
            let worst = worst_case_direction(&model.cc, c)?;
            if worst.defined {
                worst.direction
            } else {
                DVector::from_fn(model.cc.m(), |i, _| if i == 0 { 1.0 } else { 0.0 })
            }
        } else {
            DVector::from_column_slice(&a.direction)
        };
        let curve = rr_curve(c, &model.cc, bin, &observed, &direction, &grid)?;
        curve_cols.push(curve.iter().map(|p| p.1).collect::<Vec<_>>());
        let regions = caps
            .iter()
            .map(|&cap| rr_ignorance_region(c, &model.cc, bin, &observed, cap, seed))
            .collect::<multisens::Result<Vec<_>>>()?;
        let brv = binary_rv(c, &model.cc, bin, &observed, seed)?;
        records.push(json!({
            "contrast_id": id,
            "naive_rr": regions.first().map(|r| r.region.naive),
            "direction": direction.as_slice(),
            "regions": regions,
            "rv": brv.rv,
            "rv_percent": 100.0 * brv.rv,
            "robust": brv.robust,
        }));
    }
    if let Some(path) = &a.curve {
        let mut header = vec!["signed_r2".to_owned()];
        if contrasts.len() == 1 {
            header.push("rr".into());
        } else {
            header.extend(contrasts.iter().map(|(id, _)| format!("rr_{}", id.replace(['\t', ' '], "_"))));
        }
        let rows: Vec<Vec<f64>> = grid
            .iter()
            .enumerate()
            .map(|(i, &s)| std::iter::once(s).chain(curve_cols.iter().map(|col| col[i])).collect())
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        emit_tsv(Some(path), prov, &[], &header, &rows)?;
    }
    emit_json(&tag(json!({ "records": records }), prov)?, a.out.as_deref())
}

fn proxy(a: &ProxyArgs, prov: &Provenance) -> CliResult<()> {
    let table = read_csv(&a.data)?;
    let fit = fit_proxy(&table.column(&a.y)?, &table.column(&a.t)?, &table.column(&a.z)?)?;
    let domain = sigma_u2_domain(&fit);
    let region = tau_bounds(&fit);
    let adjusted = match &a.sigma_u2 {
        Some(text) => parse_grid(text, "--sigma-u2")?
            .into_iter()
            .map(|s| Ok(json!({ "sigma_u2": s, "tau": tau_adjusted(&fit, s)? })))
            .collect::<CliResult<Vec<_>>>()?,
        None => Vec::new(),
    };
    let out = json!({ "fit": fit, "domain": domain, "region": region, "adjusted": adjusted });
    emit_json(&tag(out, prov)?, a.out.as_deref())
}

fn simulate(a: &SimulateArgs, seed: u64, prov: &Provenance) -> CliResult<()> {
    let preset: Preset = a.preset.parse()?;
    let n = a.n.unwrap_or(preset.default_n());
    let (csv, truth) = match preset {
        Preset::Proxy => write_proxy(&a.out, n, seed, prov)?,
        _ => {
            let data = match preset {
                Preset::Linear => gen_linear_gaussian(&SimTruth::four_treatment_linear(seed), n)?,
                Preset::Nonlinear => gen_nonlinear(n, false, seed)?,
                Preset::NonlinearBinary => gen_nonlinear(n, true, seed)?,
                Preset::Gwas => gen_gwas_with(&GwasConfig { n, seed, ..GwasConfig::default() })?,
                Preset::Proxy => unreachable!("handled above"),
            };
            let files = write_dataset(&a.out, &data, prov)?;
            (files.csv, files.truth)
        }
    };
    let summary = json!({
        "preset": preset.name(),
        "n": n,
        "files": [csv.display().to_string(), truth.display().to_string()],
    });
    emit_json(&tag(summary, prov)?, None)
}

fn write_proxy(stem: &Path, n: usize, seed: u64, prov: &Provenance) -> CliResult<(PathBuf, PathBuf)> {
    let params = ProxyParams::default();
    let data = gen_proxy(&params, n, seed)?;
    let mut all = DMatrix::zeros(n, 3);
    all.set_column(0, &data.y);
    all.set_column(1, &data.t);
    all.set_column(2, &data.z);
    let csv = stem.with_extension("csv");
    write_csv(&csv, &Table::new(vec!["y".into(), "t".into(), "z".into()], all)?, &prov.header_lines())?;
    let truth = PathBuf::from(format!("{}.truth.json", stem.display()));
    let value = json!({
        "params": params,
        "tilde_beta": params.tilde_beta(),
        "tilde_gamma": params.tilde_gamma(),
        "tilde_tau": params.tilde_tau(),
        "standardized_sigma2_u": params.standardized_sigma2_u(),
        "seed": seed,
    });
    write_tagged(&truth, &value.to_string(), prov)?;
    Ok((csv, truth))
}
