use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use addbart::comparison::{classify_psbf, fit_lpml, EffectSummary, Favors, OspeLoss, OspeSettings};
use addbart::data::{load_csv_with, CsvOptions};
use addbart::sim_design::{
    run_replication_study, solve_design, summarize, write_rows_csv, write_summary_csv,
    DesignTargets, Family, ScenarioId, StudyPlan, BINARY_NU, DEFAULT_MC_SIZE,
};
use addbart::{
    compare_additivity, fit_bart, fit_logit_bart, fit_treatment_bart, fit_treatment_bart_binary,
    fit_two_bart, fit_two_bart_binary, make_folds, psbf_verdict, AdditiveConfig,
    AdditiveForm, BartConfig, ComparisonConfig, CovariateSplit, Dataset, Fit, ResponseKind,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::settings::{Failure, FileConfig, Outcome};
use crate::{ChainArgs, CompareArgs, DataArgs, DesignArgs, FitArgs, FoldsArgs, SimulateArgs, SplitArgs};

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::partial(format!("cannot write {}: {e}", path.display()))
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_failure(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_failure(path, e))
}

/// `replicates.csv` → `replicates.<suffix>`
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

struct Input {
    data: Dataset,
    path: PathBuf,
    response: String,
    categorical: Vec<String>,
}

fn load_data(a: &DataArgs, f: &FileConfig) -> Outcome<Input> {
    let path: PathBuf = f
        .value(a.data.clone(), "data")?
        .ok_or_else(|| Failure::usage("--data is required"))?;
    let response: String = f
        .value(a.response.clone(), "response")?
        .ok_or_else(|| Failure::usage("--response is required"))?;
    let kind = if f.switch(a.binary, "binary")? {
        ResponseKind::Binary
    } else {
        ResponseKind::Continuous
    };
    let mut opts = CsvOptions::new(response.clone(), kind);
    opts.categorical = f.list(a.categorical.clone(), "categorical")?.unwrap_or_default();
    let data = load_csv_with(&path, &opts)?;
    Ok(Input {
        data,
        path,
        response,
        categorical: opts.categorical,
    })
}

fn bart_config(c: &ChainArgs, f: &FileConfig) -> Outcome<BartConfig> {
    let d = BartConfig::default();
    Ok(BartConfig {
        trees: f.value_or(c.trees, "trees", d.trees)?,
        k: f.value_or(c.k, "k", d.k)?,
        nu: f.value_or(c.sigma_df, "sigma-df", d.nu)?,
        sigma_quantile: f.value_or(c.sigma_quantile, "sigma-quantile", d.sigma_quantile)?,
        burn_in: f.value_or(c.burn, "burn", d.burn_in)?,
        draws: f.value_or(c.draws, "draws", d.draws)?,
        thin: f.value_or(c.thin, "thin", d.thin)?,
        seed: f.seed(c.seed)?,
        max_cuts: f.value_or(c.max_cuts, "max-cuts", d.max_cuts)?,
        base: f.value_or(c.base, "base", d.base)?,
        power: f.value_or(c.power, "power", d.power)?,
        ..d
    })
}

fn apply_additive(
    mut cfg: AdditiveConfig,
    c: &ChainArgs,
    s: &SplitArgs,
    f: &FileConfig,
) -> Outcome<AdditiveConfig> {
    cfg.trees_per_component = f.value_or(c.component_trees, "component-trees", cfg.trees_per_component)?;
    cfg.treatment_prior_mean = f.value_or(s.prior_mean, "prior-mean", cfg.treatment_prior_mean)?;
    cfg.treatment_prior_var = f.value(s.prior_var, "prior-var")?.or(cfg.treatment_prior_var);
    Ok(cfg)
}

fn split_of(data: &Dataset, s: &SplitArgs, f: &FileConfig) -> Outcome<Option<CovariateSplit>> {
    let minus: Option<Vec<String>> = f.list(s.split_minus.clone(), "split-minus")?;
    let plus: Option<Vec<String>> = f.list(s.split_plus.clone(), "split-plus")?;
    match (minus, plus) {
        (None, None) => Ok(None),
        (Some(m), Some(p)) => Ok(Some(CovariateSplit::from_names(data, &m, &p)?)),
        _ => Err(Failure::usage("--split-minus and --split-plus must be given together")),
    }
}

fn treatment_of(data: &Dataset, s: &SplitArgs, f: &FileConfig) -> Outcome<Option<(String, usize)>> {
    let Some(name): Option<String> = f.value(s.treatment.clone(), "treatment")? else {
        return Ok(None);
    };
    let j = data
        .column_index(&name)
        .ok_or_else(|| Failure::usage(format!("column `{name}` not found")))?;
    Ok(Some((name, j)))
}

/// Formats a PsBF so both the large and the small values stay readable.
pub fn format_psbf(p: f64) -> String {
    if !p.is_finite() || p >= 1e6 || (p > 0.0 && p < 1e-5) || p == 0.0 {
        format!("{p:.4e}")
    } else if p >= 1.0 {
        format!("{p:.2}")
    } else {
        format!("{p:.5}")
    }
}

fn format_effect(e: &EffectSummary) -> String {
    format!("{:.4} ({:.4}, {:.4})", e.mean, e.lower, e.upper)
}

fn verdict_line(psbf: f64, first: &str, second: &str) -> String {
    let v = classify_psbf(psbf);
    let tail = match v.favors {
        Favors::First => format!("{} evidence for {first}", v.band.label()),
        Favors::Second => format!("{} evidence for {second}", v.band.label()),
        Favors::Neither => format!("{}; neither model favored", v.band.label()),
    };
    format!("PsBF = {} → {tail}", format_psbf(psbf))
}

#[derive(Serialize)]
struct FitSummary {
    lpml: f64,
    /// RMSE of the posterior mean (continuous) or Brier score of the mean probability (binary)
    in_sample_error: f64,
    in_sample_metric: &'static str,
    sigma2_mean: Option<f64>,
    treatment_effect: Option<EffectSummary>,
    acceptance_rate: f64,
}

fn summarize_fit(fit: &Fit, data: &Dataset) -> Outcome<FitSummary> {
    let y = data.y();
    let binary = data.kind() == ResponseKind::Binary;
    let pred = if binary {
        fit.posterior_mean_probability()
    } else {
        fit.posterior_mean()
    };
    let mse = pred.iter().zip(y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / y.len() as f64;
    let sigma2_mean = (!fit.sigma2.is_empty())
        .then(|| fit.sigma2.iter().sum::<f64>() / fit.sigma2.len() as f64);
    Ok(FitSummary {
        lpml: fit_lpml(fit)?,
        in_sample_error: if binary { mse } else { mse.sqrt() },
        in_sample_metric: if binary { "brier" } else { "rmse" },
        sigma2_mean: if binary { None } else { sigma2_mean },
        treatment_effect: EffectSummary::from_draws(&fit.beta),
        acceptance_rate: fit.acceptance_rate,
    })
}

pub fn fit(a: &FitArgs, f: &FileConfig) -> Outcome<()> {
    let input = load_data(&a.data, f)?;
    let data = &input.data;
    let mut bart = bart_config(&a.chain, f)?;
    bart.keep_trees = f.switch(a.keep_trees, "keep-trees")?;
    let model: String = f.value_or(a.model.clone(), "model", "single".to_string())?;
    let binary = data.kind() == ResponseKind::Binary;
    let additive = apply_additive(AdditiveConfig::from_single(bart.clone()), &a.chain, &a.split, f)?;
    let mut treatment_name = None;
    let mut split = None;
    let fit = match model.as_str() {
        "single" => {
            if binary {
                fit_logit_bart(data, &bart)?
            } else {
                fit_bart(data, &bart)?
            }
        }
        "two" => {
            let s = split_of(data, &a.split, f)?
                .ok_or_else(|| Failure::usage("--model two needs --split-minus and --split-plus"))?;
            let fit = if binary {
                fit_two_bart_binary(data, &s, &additive)?
            } else {
                fit_two_bart(data, &s, &additive)?
            };
            split = Some(s);
            fit
        }
        "treatment" => {
            let (name, j) = treatment_of(data, &a.split, f)?
                .ok_or_else(|| Failure::usage("--model treatment needs --treatment"))?;
            treatment_name = Some(name);
            if binary {
                fit_treatment_bart_binary(data, j, &additive)?
            } else {
                fit_treatment_bart(data, j, &additive)?
            }
        }
        other => {
            return Err(Failure::usage(format!(
                "unknown model `{other}`; expected single, two or treatment"
            )))
        }
    };
    let summary = summarize_fit(&fit, data)?;
    let out: PathBuf = f.value_or(a.out.clone(), "out", PathBuf::from("fit.json"))?;
    let run = json!({
        "command": "fit",
        "data": input.path,
        "response": input.response,
        "response_kind": data.kind(),
        "categorical": input.categorical,
        "model": model,
        "split": split,
        "treatment": treatment_name,
        "bart": bart,
        "additive": if model == "single" { Value::Null } else { serde_json::to_value(&additive)? },
        "out": out,
    });
    write_json(&out, &json!({ "run": run, "summary": summary, "fit": fit }))?;

    println!("model: {model} ({} draws, n = {})", fit.n_draws(), fit.n);
    println!("LPML = {:.4}", summary.lpml);
    if binary {
        println!("in-sample Brier score = {:.4}", summary.in_sample_error);
    } else {
        println!("in-sample RMSE = {:.4}", summary.in_sample_error);
    }
    if let Some(s2) = summary.sigma2_mean {
        println!("posterior mean sigma^2 = {s2:.4}");
    }
    if let Some(e) = &summary.treatment_effect {
        println!("beta = {} (posterior mean, 95% credible interval)", format_effect(e));
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Reads an archive written by `fit`, or a bare model archive.
fn load_archive(path: &Path) -> Outcome<Fit> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut v: Value = serde_json::from_str(&text)?;
    let body = match v.get_mut("fit") {
        Some(inner) => inner.take(),
        None => v,
    };
    Ok(serde_json::from_value(body)?)
}

fn compare_archives(paths: &[PathBuf], out: &Path) -> Outcome<()> {
    let (pa, pb) = (&paths[0], &paths[1]);
    let a = load_archive(pa)?;
    let b = load_archive(pb)?;
    if a.n != b.n {
        return Err(Failure::usage(format!(
            "archives cover different observation counts ({} vs {})",
            a.n, b.n
        )));
    }
    if a.n_draws() != b.n_draws() {
        return Err(Failure::usage(format!(
            "both archives must hold the same number of draws ({} vs {})",
            a.n_draws(),
            b.n_draws()
        )));
    }
    let la = fit_lpml(&a)?;
    let lb = fit_lpml(&b)?;
    let verdict = psbf_verdict(la, lb);
    let report = json!({
        "run": { "command": "compare", "fits": paths, "out": out },
        "report": {
            "lpml_first": la,
            "lpml_second": lb,
            "psbf": verdict.psbf,
            "log10_psbf": verdict.log10_psbf,
            "verdict": verdict,
        }
    });
    write_json(out, &report)?;
    println!("LPML first = {la:.4}, second = {lb:.4}");
    println!(
        "{}",
        verdict_line(verdict.psbf, &pa.display().to_string(), &pb.display().to_string())
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn parse_loss(s: &str) -> Outcome<OspeLoss> {
    match s {
        "squared" | "brier" => Ok(OspeLoss::Squared),
        "misclassification" => Ok(OspeLoss::Misclassification),
        other => Err(Failure::usage(format!(
            "unknown loss `{other}`; expected squared or misclassification"
        ))),
    }
}

pub fn compare(a: &CompareArgs, f: &FileConfig) -> Outcome<()> {
    let out: PathBuf = f.value_or(a.out.clone(), "out", PathBuf::from("compare.json"))?;
    if let Some(paths) = &a.fits {
        return compare_archives(paths, &out);
    }
    let input = load_data(&a.data, f)?;
    let data = &input.data;
    let split = split_of(data, &a.split, f)?;
    let treatment = treatment_of(data, &a.split, f)?;
    let form = match (split, &treatment) {
        (Some(_), Some(_)) => {
            return Err(Failure::usage("give either a covariate split or --treatment, not both"))
        }
        (Some(split), None) => AdditiveForm::Split { split },
        (None, Some((_, column))) => AdditiveForm::Treatment { column: *column },
        (None, None) => {
            return Err(Failure::usage(
                "compare needs --split-minus/--split-plus or --treatment",
            ))
        }
    };
    let bart = bart_config(&a.chain, f)?;
    let mut cfg = ComparisonConfig::from_single(bart);
    cfg.additive = apply_additive(cfg.additive, &a.chain, &a.split, f)?;
    if f.switch(a.ospe, "ospe")? {
        let loss: String = f.value_or(a.loss.clone(), "loss", "squared".to_string())?;
        let settings = OspeSettings {
            folds: f.value_or(a.folds, "folds", 5)?,
            seed: cfg.nonadditive.seed,
            loss: parse_loss(&loss)?,
        };
        cfg = cfg.with_ospe(settings);
    }
    let report = compare_additivity(data, &form, &cfg)?;
    let run = json!({
        "command": "compare",
        "data": input.path,
        "response": input.response,
        "response_kind": data.kind(),
        "categorical": input.categorical,
        "treatment": treatment.map(|t| t.0),
        "out": out,
    });
    write_json(&out, &json!({ "run": run, "report": report }))?;

    println!(
        "LPML nonadditive = {:.4}, additive = {:.4}",
        report.lpml_nonadditive, report.lpml_additive
    );
    println!("{}", verdict_line(report.psbf, "NONADDITIVE", "ADDITIVE"));
    if let Some(e) = &report.treatment_effect {
        println!("beta = {} (posterior mean, 95% credible interval)", format_effect(e));
    }
    if let (Some(na), Some(ad), Some(r)) = (report.ospe_nonadditive, report.ospe_additive, report.r_ospe) {
        let side = if r > 1.0 {
            "supports ADDITIVE"
        } else if r < 1.0 {
            "supports NONADDITIVE"
        } else {
            "supports neither model"
        };
        println!("OSPE nonadditive = {na:.4}, additive = {ad:.4}");
        println!("R_OSPE = {r:.4} {side}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn simulate(a: &SimulateArgs, f: &FileConfig) -> Outcome<()> {
    let bart = bart_config(&a.chain, f)?;
    let mut comparison = ComparisonConfig::from_single(bart.clone());
    comparison.additive = apply_additive(comparison.additive, &a.chain, &SplitArgs::default(), f)?;
    let mut plan = StudyPlan::new(comparison);
    if let Some(v) = f.list(a.scenario.clone(), "scenario")? {
        plan.scenarios = v;
    }
    if let Some(v) = f.list(a.family.clone(), "family")? {
        plan.families = v;
    }
    if let Some(v) = f.list(a.gamma.clone(), "gamma")? {
        plan.gammas = v;
    }
    if let Some(v) = f.list(a.n.clone(), "n")? {
        plan.sizes = v;
    }
    plan.replicates = f.value_or(a.reps, "reps", plan.replicates)?;
    plan.alpha = f.value_or(a.alpha, "alpha", plan.alpha)?;
    plan.delta = f.value_or(a.delta, "delta", plan.delta)?;
    plan.nu = f.value_or(a.nu, "nu", plan.nu)?;
    plan.n_mc = f.value_or(a.mc, "mc", plan.n_mc)?;
    plan.seed = bart.seed;
    if f.switch(a.ospe, "ospe")? {
        plan.ospe_folds = Some(f.value_or(a.folds, "folds", 5)?);
    }
    if plan.scenarios.is_empty() || plan.families.is_empty() || plan.gammas.is_empty() || plan.sizes.is_empty() {
        return Err(Failure::usage("scenario, family, gamma and n lists must be nonempty"));
    }

    let out: PathBuf = f.value_or(a.out.clone(), "out", PathBuf::from("replicates.csv"))?;
    let summary_path: PathBuf = f.value_or(a.summary.clone(), "summary", sibling(&out, "summary.csv"))?;
    let result = run_replication_study(&plan)?;

    let mut w = create(&out)?;
    write_rows_csv(&result.rows, &mut w)?;
    w.flush().map_err(|e| io_failure(&out, e))?;
    let cells = summarize(&result.rows);
    let mut w = create(&summary_path)?;
    write_summary_csv(&cells, &mut w)?;
    w.flush().map_err(|e| io_failure(&summary_path, e))?;
    let run_path = sibling(&out, "run.json");
    write_json(
        &run_path,
        &json!({
            "run": { "command": "simulate", "out": out, "summary": summary_path },
            "plan": plan,
            "solutions": result.solutions,
            "failures": result.failures,
        }),
    )?;

    for c in &cells {
        let ospe = match (c.p_correct_ospe, c.p_incorrect_ospe) {
            (Some(pc), Some(pi)) => format!("; OSPE correct {pc:.2} incorrect {pi:.2}"),
            _ => String::new(),
        };
        println!(
            "{} {} n={} gamma={}: median log10 PsBF {:.3}; PsBF correct {:.2} indifferent {:.2} incorrect {:.2}{ospe}",
            c.scenario,
            c.kind,
            c.n,
            c.gamma,
            c.median_log10_psbf,
            c.p_correct_psbf,
            c.p_indiff_psbf,
            c.p_incorrect_psbf
        );
    }
    println!(
        "wrote {} rows to {}, summary to {}, run record to {}",
        result.rows.len(),
        out.display(),
        summary_path.display(),
        run_path.display()
    );
    if !result.failures.is_empty() {
        for fail in &result.failures {
            eprintln!("failed: {fail}");
        }
        return Err(Failure::partial(format!(
            "{} cell(s) or replicate(s) failed",
            result.failures.len()
        )));
    }
    Ok(())
}

pub fn folds(a: &FoldsArgs, f: &FileConfig) -> Outcome<()> {
    let has_data = a.data.data.is_some() || f.value::<PathBuf>(None, "data")?.is_some();
    let n = if has_data {
        load_data(&a.data, f)?.data.n()
    } else {
        f.value(a.n, "n")?
            .ok_or_else(|| Failure::usage("folds needs --data with --response, or --n"))?
    };
    let k = f.value_or(a.k, "k", 5)?;
    let seed = f.seed(a.seed)?;
    let folds = make_folds(n, k, seed)?;
    match f.value(a.out.clone(), "out")? {
        None => {
            let stdout = std::io::stdout();
            folds.write_csv(stdout.lock())?;
        }
        Some(out) => {
            let mut w = create(&out)?;
            folds.write_csv(&mut w)?;
            w.flush().map_err(|e| io_failure(&out, e))?;
            write_json(
                &sibling(&out, "run.json"),
                &json!({ "run": { "command": "folds", "n": n, "k": k, "seed": seed, "out": out } }),
            )?;
        }
    }
    Ok(())
}

pub fn design(a: &DesignArgs, f: &FileConfig) -> Outcome<()> {
    let scenario: ScenarioId = f.value_or(a.scenario, "scenario", ScenarioId::SC1)?;
    let family: Family = f.value_or(a.family, "family", Family::Continuous)?;
    let targets = DesignTargets {
        alpha: f.value_or(a.alpha, "alpha", 0.2)?,
        delta: f.value_or(a.delta, "delta", 0.45)?,
        gamma: f.value_or(a.gamma, "gamma", 0.0)?,
        nu: f.value_or(a.nu, "nu", BINARY_NU)?,
    };
    let n_mc = f.value_or(a.mc, "mc", DEFAULT_MC_SIZE)?;
    let seed = f.seed(a.seed)?;
    let solution = solve_design(scenario, family, &targets, n_mc, seed)?;
    let out: Option<PathBuf> = f.value(a.out.clone(), "out")?;
    let doc = json!({
        "run": { "command": "design", "scenario": scenario, "family": family, "mc": n_mc, "seed": seed, "out": out },
        "solution": solution,
    });
    if let Some(out) = &out {
        write_json(out, &doc)?;
    }
    // a closed pipe on stdout is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psbf_formats() {
        assert_eq!(format_psbf(25638.04), "25638.04");
        assert_eq!(format_psbf(0.09521), "0.09521");
        assert_eq!(format_psbf(1.0), "1.00");
        assert_eq!(format_psbf(f64::INFINITY), "inf");
        assert_eq!(format_psbf(3.2e9), "3.2000e9");
    }

    #[test]
    fn verdict_lines() {
        assert_eq!(
            verdict_line(25638.04, "NONADDITIVE", "ADDITIVE"),
            "PsBF = 25638.04 → decisive evidence for NONADDITIVE"
        );
        assert_eq!(
            verdict_line(0.09521, "NONADDITIVE", "ADDITIVE"),
            "PsBF = 0.09521 → strong evidence for ADDITIVE"
        );
        assert_eq!(
            verdict_line(1.0, "NONADDITIVE", "ADDITIVE"),
            "PsBF = 1.00 → barely worth mentioning; neither model favored"
        );
    }

    #[test]
    fn effect_format() {
        let e = EffectSummary { mean: -0.0769, lower: -0.1903, upper: 0.0344 };
        assert_eq!(format_effect(&e), "-0.0769 (-0.1903, 0.0344)");
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("out/reps.csv"), "run.json"), PathBuf::from("out/reps.run.json"));
    }
}
