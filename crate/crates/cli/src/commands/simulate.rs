use std::collections::BTreeMap;
use std::fs;

use anyhow::{Context, Result};
use ridge_debias::montecarlo::{
    emit_histogram_data, write_table_csv, StudyConfig, StudyResult, TableMetric,
};
use ridge_debias::Error;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::cli::{Format, SimulateArgs};
use crate::output::Run;

#[derive(Deserialize)]
#[serde(untagged)]
enum ConfigFile {
    Many { studies: Vec<StudyConfig> },
    One(StudyConfig),
}

const METRICS: [(TableMetric, &str); 6] = [
    (TableMetric::Mse, "mse"),
    (TableMetric::Aee, "aee"),
    (TableMetric::SigmaHat, "sigma_hat"),
    (TableMetric::Ep, "ep"),
    (TableMetric::CiCoverage, "ci_coverage"),
    (TableMetric::PiCoverage, "pi_coverage"),
];

fn sanitize(key: &str) -> String {
    key.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn run(args: &SimulateArgs, run: &mut Run) -> Result<()> {
    run.input("config", &args.config);
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read {}", args.config.display()))?;
    let file: ConfigFile = serde_json::from_str(&text).map_err(Error::Json)?;
    let mut studies = match file {
        ConfigFile::Many { studies } => studies,
        ConfigFile::One(s) => vec![s],
    };
    for s in &mut studies {
        if let Some(seed) = args.seed {
            s.seed = seed;
        }
        if let Some(r) = args.replications {
            s.replications = r;
        }
    }
    run.parameters(json!({ "studies": studies, "histograms": args.histogram }));

    let results = studies
        .iter()
        .map(StudyConfig::run)
        .collect::<ridge_debias::Result<Vec<StudyResult>>>()?;

    let results_json: Vec<Value> = results
        .iter()
        .map(|r| Ok(serde_json::from_str(&r.to_json()?)?))
        .collect::<Result<_>>()?;
    run.write_json("results.json", &results_json)?;

    for (metric, name) in METRICS {
        let present = results
            .iter()
            .flat_map(|r| &r.estimators)
            .any(|e| metric.pick(e).is_some());
        if !present {
            continue;
        }
        match run.format() {
            Format::Csv => run.write_with(&format!("table_{name}.csv"), |buf| {
                Ok(write_table_csv(buf, &results, metric)?)
            })?,
            Format::Json => {
                let rows: Vec<Value> = results
                    .iter()
                    .map(|r| {
                        let values: BTreeMap<&str, Option<f64>> = r
                            .estimators
                            .iter()
                            .map(|e| (e.label.as_str(), metric.pick(e)))
                            .collect();
                        json!({ "p": r.dgp.p, "n": r.dgp.n, "values": values })
                    })
                    .collect();
                run.write_json(&format!("table_{name}.json"), &rows)?;
            }
        }
    }

    for key in &args.histogram {
        let mut found = false;
        for (i, r) in results.iter().enumerate() {
            if r.contrast(key).is_err() {
                continue;
            }
            found = true;
            let name = if results.len() == 1 {
                format!("histogram_{}.csv", sanitize(key))
            } else {
                format!("histogram_{i}_{}.csv", sanitize(key))
            };
            run.write_with(&name, |buf| Ok(emit_histogram_data(buf, r, key)?))?;
        }
        if !found {
            return Err(Error::UnknownLabel(key.clone()).into());
        }
    }

    let summary: Vec<Value> = results
        .iter()
        .map(|r| {
            let mse: BTreeMap<&str, f64> = r
                .estimators
                .iter()
                .map(|e| (e.label.as_str(), e.mse))
                .collect();
            json!({ "p": r.dgp.p, "n": r.dgp.n, "replications": r.replications, "mse": mse })
        })
        .collect();
    run.result("studies", summary)?;
    Ok(())
}
